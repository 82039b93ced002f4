"""Flat key=value experiment configuration.

Every key mirrors an ExperimentConfig field; unknown keys are errors.
Lines starting with '#' and blank lines are ignored. List values are
comma-separated.

Example::

    source = synthetic
    n_questions = 500
    budget_fracs = 0.05,0.10
    methods = faq,uniform,neyman
    seeds = 100
    alpha = 0.05
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_floats(s: str) -> list[float]:
    return [float(t) for t in s.split(",") if t.strip()]


def _parse_ints(s: str) -> list[int]:
    return [int(t) for t in s.split(",") if t.strip()]


def _parse_strs(s: str) -> list[str]:
    return [t.strip() for t in s.split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    # data source
    source: str = "synthetic"  # synthetic | files
    n_questions: int = 500
    n_hist: int = 300
    n_test: int = 50
    k_true: int = 4
    logit_scale: float = 2.0
    bank_seed: int = 0
    history_csv: str = ""
    answers_csv: str = ""
    metadata_csv: str = ""
    # missingness (defaults leave the history fully observed)
    n_full_obs: int = 0
    p_obs: float = 1.0
    mask_seed: int = 0
    # factor fit
    fit_k: int = 4
    fit_weight_decay: float = 1e-3
    fit_lr: float = 1e-2
    fit_max_iters: int = 2000
    fit_seed: int = 0
    cv: bool = False
    k_grid: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    lambda_grid: list[float] = field(
        default_factory=lambda: [1e1, 1e0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    )
    folds: int = 5
    cv_seed: int = 0
    # evaluation sweep
    budget_fracs: list[float] = field(default_factory=lambda: [0.10])
    methods: list[str] = field(default_factory=lambda: ["faq", "uniform"])
    seeds: int = 100
    alpha: float = 0.05
    run_seed: int = 0
    n_models_eval: int = 0  # 0 = all test models
    # hybrid policy
    rho: float = 0.5
    gamma: float = 0.25
    beta0: float = 1.0
    tau: float = 0.25
    # tuning grids
    rho_grid: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.25, 0.5, 0.75])
    gamma_grid: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.25, 0.5, 0.75])
    beta0_grid: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    tau_grid: list[float] = field(default_factory=lambda: [0.05, 0.25, 0.5, 0.75])
    tune_seeds: int = 5
    val_frac: float = 0.2

    def __post_init__(self):
        if self.source not in ("synthetic", "files"):
            raise ValueError(f"source must be synthetic or files, got {self.source!r}")
        if not self.budget_fracs or any(not 0 < f <= 1 for f in self.budget_fracs):
            raise ValueError("budget_fracs must be a nonempty subset of (0, 1]")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.methods:
            raise ValueError("methods must be nonempty")


_LIST_PARSERS = {
    "k_grid": _parse_ints,
    "lambda_grid": _parse_floats,
    "budget_fracs": _parse_floats,
    "methods": _parse_strs,
    "rho_grid": _parse_floats,
    "gamma_grid": _parse_floats,
    "beta0_grid": _parse_floats,
    "tau_grid": _parse_floats,
}


def parse_config(path) -> ExperimentConfig:
    """Read a flat key=value file; unknown keys raise ValueError."""
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _convert(key, val)
    return ExperimentConfig(**values)


def _convert(key: str, val: str):
    if key in _LIST_PARSERS:
        return _LIST_PARSERS[key](val)
    default = getattr(ExperimentConfig(), key)
    if isinstance(default, bool):
        return _parse_bool(val)
    if isinstance(default, int):
        return int(val)
    if isinstance(default, float):
        return float(val)
    return val


def write_config(cfg: ExperimentConfig, path) -> None:
    """Echo the resolved configuration (round-trips through parse_config)."""
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(ExperimentConfig):
            v = getattr(cfg, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            fh.write(f"{f.name} = {v}\n")
