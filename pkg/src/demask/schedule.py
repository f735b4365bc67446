"""Noise schedules for absorbing-state discrete diffusion.

A schedule assigns a keep probability ``alpha_t`` to every integer timestep
``t`` in ``[0, T]``.  A clean token survives corruption to step ``t`` with
probability ``alpha_t``; otherwise it has been replaced by the mask token.
``alpha_0 = 1`` (no corruption) and ``alpha_T = 0`` (fully masked), and the
sequence is strictly decreasing in between.

Two families are supported:

* ``linear``: the masking ratio grows linearly, ``alpha_t = 1 - t/T``.
* ``cosine``: ``alpha_t = cos(pi * t / (2 T))``, which masks slowly at first
  and quickly near the end.

The module also exposes the two scalar helpers used by training and by
top-k decoding: :func:`loss_weight` (the per-timestep weight applied to the
reconstruction loss) and :func:`unmask_count` (how many response positions
are committed when a decode reaches timestep ``t``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    """Keep-probability table over integer timesteps ``0..T``.

    Attributes
    ----------
    T : int
        Number of diffusion steps; timesteps are the integers ``0..T``.
    family : str
        Schedule family, one of ``FAMILIES``.
    alpha : np.ndarray
        ``(T + 1,)`` float64 array of keep probabilities, ``alpha[0] == 1.0``
        and ``alpha[T] == 0.0`` exactly.
    """

    T: int
    family: str
    alpha: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not isinstance(self.T, int) or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}, expected one of {FAMILIES}")
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape != (self.T + 1,):
            raise ValueError(f"alpha must have shape ({self.T + 1},), got {a.shape}")
        if a[0] != 1.0:
            raise ValueError(f"alpha[0] must be exactly 1.0, got {a[0]!r}")
        if a[-1] != 0.0:
            raise ValueError(f"alpha[T] must be exactly 0.0, got {a[-1]!r}")
        if not np.all(np.diff(a) < 0.0):
            raise ValueError("alpha must be strictly decreasing over 0..T")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)

    def keep_prob(self, t: int) -> float:
        """Probability that a clean token is still uncorrupted at step ``t``."""
        self._check_t(t, low=0)
        return float(self.alpha[t])

    def mask_ratio(self, t: int) -> float:
        """Expected fraction of positions masked at step ``t``."""
        return 1.0 - self.keep_prob(t)

    def step_keep_prob(self, t: int) -> float:
        """Per-step survival probability ``beta_t = alpha_t / alpha_{t-1}``.

        A token that is clean at step ``t - 1`` stays clean at step ``t`` with
        this probability.  Defined for ``t`` in ``[1, T]``.
        """
        self._check_t(t, low=1)
        return float(self.alpha[t] / self.alpha[t - 1])

    def reveal_prob(self, t: int) -> float:
        """Posterior probability that a position masked at step ``t`` was
        clean at step ``t - 1``, namely ``(alpha_{t-1} - alpha_t) / (1 - alpha_t)``.

        Defined for ``t`` in ``[1, T]``; the denominator is positive there
        because ``alpha_t < 1`` for all ``t >= 1``.
        """
        self._check_t(t, low=1)
        return float((self.alpha[t - 1] - self.alpha[t]) / (1.0 - self.alpha[t]))

    def _check_t(self, t: int, low: int) -> None:
        if not isinstance(t, (int, np.integer)):
            raise ValueError(f"timestep must be an integer, got {type(t).__name__}")
        if not low <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{low}, {self.T}]")


def build_schedule(T: int, family: str = "linear") -> NoiseSchedule:
    """Construct a :class:`NoiseSchedule` of the given family.

    The table is always recomputed from ``(T, family)``; that pair is the
    entire serialized form of a schedule.
    """
    if not isinstance(T, int) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if family not in FAMILIES:
        raise ValueError(f"unknown schedule family {family!r}, expected one of {FAMILIES}")
    t = np.arange(T + 1, dtype=np.float64)
    if family == "linear":
        alpha = 1.0 - t / T
    else:
        alpha = np.cos(math.pi * t / (2.0 * T))
    # cos(pi/2) lands ~6e-17 in floating point; the endpoint is exact by contract.
    alpha[0] = 1.0
    alpha[T] = 0.0
    return NoiseSchedule(T=T, family=family, alpha=alpha)


def loss_weight(t: int, T: int) -> float:
    """Training-loss weight for timestep ``t``: ``1 - (t - 1) / T``.

    Decreases linearly from 1 at ``t = 1`` to ``1/T`` at ``t = T``, so heavily
    corrupted inputs contribute less.  Defined only for ``1 <= t <= T``.
    """
    if not isinstance(T, int) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not isinstance(t, (int, np.integer)):
        raise ValueError(f"timestep must be an integer, got {type(t).__name__}")
    if not 1 <= t <= T:
        raise ValueError(f"loss_weight defined for t in [1, {T}], got {t}")
    return 1.0 - (t - 1) / T


def unmask_count(N: int, t: int, T: int) -> int:
    """Number of response positions kept committed at timestep ``t`` during
    top-k decoding of a length-``N`` response: ``floor(N * cos(pi * t / (2 T)))``.

    Equals ``N`` at ``t = 0`` and ``0`` at ``t = T``, and is nonincreasing
    in ``t``.
    """
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    if not isinstance(T, int) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not isinstance(t, (int, np.integer)):
        raise ValueError(f"timestep must be an integer, got {type(t).__name__}")
    if not 0 <= t <= T:
        raise ValueError(f"unmask_count defined for t in [0, {T}], got {t}")
    # cos(pi*t/(2T)) lies in [0, 1] exactly; clamp float residue at the
    # endpoints (cos of a near-pi/2 float can come out at -1e-17) so the
    # count always lands in [0, N].
    k = int(math.floor(N * math.cos(math.pi * t / (2.0 * T))))
    return min(N, max(0, k))


@dataclass(frozen=True)
class UnmaskPlan:
    """Precomputed committed-position counts for a full top-k decode.

    ``counts[t]`` is ``unmask_count(N, t, T)`` for every ``t`` in ``0..T``.
    """

    N: int
    T: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.T + 1:
            raise ValueError(f"counts must have length {self.T + 1}, got {len(self.counts)}")
        if self.counts[0] != self.N or self.counts[-1] != 0:
            raise ValueError("counts must start at N and end at 0")
        if any(a < b for a, b in zip(self.counts, self.counts[1:])):
            raise ValueError("counts must be nonincreasing in t")


def build_unmask_plan(N: int, T: int) -> UnmaskPlan:
    counts = tuple(unmask_count(N, t, T) for t in range(T + 1))
    return UnmaskPlan(N=N, T=T, counts=counts)
