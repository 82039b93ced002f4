"""Historical outcome matrices: CSV ingestion, splitting, masking, difficulty summaries.

Matrix CSV format: header row ``model_id,q_0,q_1,...``; one row per model,
first column the model id; data cells are ``0``, ``1``, or ``NA``.
Metadata CSV format: header ``model_id,release_ordinal`` with integer ordinals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, MatrixParseError

UNOBSERVED = -1  # internal code for an NA cell; observed cells are 0/1


@dataclass
class OutcomeMatrix:
    """Ternary model-by-question outcomes (correct / incorrect / unobserved)."""

    entries: np.ndarray  # int8, values in {0, 1, UNOBSERVED}
    model_ids: list[str] = field(default_factory=list)
    question_ids: list[str] = field(default_factory=list)
    release_ordinals: np.ndarray | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int8)
        if self.entries.ndim != 2:
            raise DimensionError("entries must be a 2-D array")
        bad = ~np.isin(self.entries, (0, 1, UNOBSERVED))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise MatrixParseError(f"invalid entry {self.entries[i, j]} at row {i}, col {j}")
        if not self.model_ids:
            self.model_ids = [f"m{i}" for i in range(self.entries.shape[0])]
        if not self.question_ids:
            self.question_ids = [f"q_{j}" for j in range(self.entries.shape[1])]
        if len(self.model_ids) != self.entries.shape[0]:
            raise DimensionError("model_ids length does not match row count")
        if len(self.question_ids) != self.entries.shape[1]:
            raise DimensionError("question_ids length does not match column count")
        if self.release_ordinals is not None:
            self.release_ordinals = np.asarray(self.release_ordinals, dtype=np.int64)
            if self.release_ordinals.shape != (self.entries.shape[0],):
                raise DimensionError("release_ordinals length does not match row count")

    @property
    def n_models(self) -> int:
        return self.entries.shape[0]

    @property
    def n_questions(self) -> int:
        return self.entries.shape[1]

    @property
    def observed_mask(self) -> np.ndarray:
        """Boolean mask O with O[i, j] = True iff entry is 0 or 1."""
        return self.entries != UNOBSERVED

    @property
    def n_observed(self) -> int:
        return int(self.observed_mask.sum())


@dataclass
class DifficultyVector:
    """Per-question mean of observed historical outcomes, with imputation markers."""

    values: np.ndarray  # float64 in [0, 1]
    imputed: np.ndarray  # bool; True where the column had no observations


def load_matrix(path) -> OutcomeMatrix:
    """Parse an outcome CSV into an OutcomeMatrix.

    Raises MatrixParseError for any cell other than 0/1/NA (naming the
    offending row and column) and DimensionError for ragged or empty files.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln != ""]
    if len(lines) < 2:
        raise DimensionError(f"{path}: need a header row and at least one data row")
    header = lines[0].split(",")
    if len(header) < 2:
        raise DimensionError(f"{path}: header must name at least one question column")
    question_ids = header[1:]
    n_q = len(question_ids)
    model_ids = []
    rows = np.empty((len(lines) - 1, n_q), dtype=np.int8)
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != n_q + 1:
            raise DimensionError(
                f"{path}: row {r + 1} has {len(cells) - 1} cells, expected {n_q}"
            )
        model_ids.append(cells[0])
        for c, tok in enumerate(cells[1:]):
            if tok == "1":
                rows[r, c] = 1
            elif tok == "0":
                rows[r, c] = 0
            elif tok == "NA":
                rows[r, c] = UNOBSERVED
            else:
                raise MatrixParseError(
                    f"{path}: bad cell {tok!r} at row {r + 1}, col {c + 1}"
                )
    return OutcomeMatrix(rows, model_ids, question_ids)


def save_matrix(m: OutcomeMatrix, path) -> None:
    """Write the CSV form of a matrix; load_matrix round-trips it bit-exactly."""
    tokens = {1: "1", 0: "0", UNOBSERVED: "NA"}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model_id," + ",".join(m.question_ids) + "\n")
        for i in range(m.n_models):
            cells = (tokens[int(v)] for v in m.entries[i])
            fh.write(m.model_ids[i] + "," + ",".join(cells) + "\n")


def load_metadata(path) -> dict[str, int]:
    """Parse a model_id,release_ordinal CSV into a mapping."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split(",")[:2] != ["model_id", "release_ordinal"]:
        raise MatrixParseError(f"{path}: expected header 'model_id,release_ordinal'")
    out = {}
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != 2:
            raise DimensionError(f"{path}: row {r + 1} must have exactly two cells")
        try:
            out[cells[0]] = int(cells[1])
        except ValueError:
            raise MatrixParseError(
                f"{path}: bad ordinal {cells[1]!r} at row {r + 1}"
            ) from None
    return out


def induce_missingness(
    m: OutcomeMatrix, n_full_obs: int, p_obs: float, seed: int
) -> OutcomeMatrix:
    """Degrade a fully observed matrix to an MCAR-missing one.

    ``n_full_obs`` rows chosen uniformly without replacement stay intact;
    every entry of each remaining row is kept independently with
    probability ``p_obs``. Deterministic given the seed.
    """
    if n_full_obs > m.n_models:
        raise ValueError(f"n_full_obs={n_full_obs} exceeds n_models={m.n_models}")
    if not 0.0 <= p_obs <= 1.0:
        raise ValueError(f"p_obs={p_obs} outside [0, 1]")
    if (m.entries == UNOBSERVED).any():
        raise ValueError("induce_missingness expects a fully observed matrix")
    rng = np.random.default_rng(seed)
    # Fisher-Yates prefix: the first n_full_obs slots of a seeded shuffle.
    perm = np.arange(m.n_models)
    for i in range(m.n_models - 1):
        j = i + int(rng.integers(0, m.n_models - i))
        perm[i], perm[j] = perm[j], perm[i]
    intact = np.zeros(m.n_models, dtype=bool)
    intact[perm[:n_full_obs]] = True
    entries = m.entries.copy()
    keep = rng.random(entries.shape) < p_obs
    keep[intact, :] = True
    entries[~keep] = UNOBSERVED
    return OutcomeMatrix(
        entries, list(m.model_ids), list(m.question_ids), m.release_ordinals
    )


def split_rows(
    m: OutcomeMatrix, ordering, first: int
) -> tuple[OutcomeMatrix, OutcomeMatrix]:
    """Sort rows by release ordinal (stable) and split after ``first`` rows."""
    if first > m.n_models:
        raise ValueError(f"first={first} exceeds n_models={m.n_models}")
    if ordering is None:
        ordering = (
            m.release_ordinals
            if m.release_ordinals is not None
            else np.arange(m.n_models)
        )
    ordering = np.asarray(ordering)
    if ordering.shape != (m.n_models,):
        raise DimensionError("ordering length does not match row count")
    order = np.argsort(ordering, kind="stable")

    def take(idx):
        return OutcomeMatrix(
            m.entries[idx],
            [m.model_ids[i] for i in idx],
            list(m.question_ids),
            ordering[idx],
        )

    return take(order[:first]), take(order[first:])


def difficulty_means(h: OutcomeMatrix) -> DifficultyVector:
    """Column means of observed outcomes; unobserved columns get the global mean."""
    obs = h.observed_mask
    if not obs.any():
        raise DataError("matrix has no observed entries")
    vals = np.where(obs, h.entries, 0).astype(np.float64)
    counts = obs.sum(axis=0)
    global_mean = float(vals.sum() / obs.sum())
    imputed = counts == 0
    means = np.divide(
        vals.sum(axis=0), counts, out=np.full(h.n_questions, global_mean), where=~imputed
    )
    return DifficultyVector(values=means, imputed=imputed)
