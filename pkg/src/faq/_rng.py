"""Counter-based uniform generator used inside evaluation runs.

Every random draw in a run is a pure function of (seed, counter), so runs
replay identically regardless of platform, worker count, or execution
order. The compiled kernels implement the same mixing function bit for bit.
"""

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """SplitMix64 finalizer over 64-bit integers."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def counter_uniform(seed: int, counter: int) -> float:
    """Uniform float in [0, 1) determined by (seed, counter)."""
    x = mix64(seed & _MASK64)
    x = mix64(x ^ (counter & _MASK64))
    return (x >> 11) * 2.0**-53


def derive_seed(*parts: int) -> int:
    """Fold integers into a single 64-bit seed for sub-streams."""
    x = 0
    for p in parts:
        x = mix64(x ^ (p & _MASK64))
    return x
