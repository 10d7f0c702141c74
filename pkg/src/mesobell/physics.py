"""Closed-form model of an entangled B0 / anti-B0 pair from Upsilon(4S) decay.

The pair starts in the flavour singlet and both members decay with the
common width ``1/tau_b``. Absolute masses only contribute a global phase,
so the only oscillation parameter carried around is ``delta_m``.

Units are picoseconds for times and inverse picoseconds for ``delta_m``
everywhere in the package.

All functions accept scalars or numpy arrays for the time arguments and
broadcast in the usual way.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np
from scipy import optimize

from .errors import UnknownModeError, ValidationError

DEFAULT_TAU_B = 1.536
DEFAULT_DELTA_M = 0.507
TAGGED_BRANCHING = 0.054

ArrayLike = Union[float, np.ndarray]

_AMP_NORM = 1.0 / (2.0 * math.sqrt(2.0))
# cos(x*) = (sqrt(3) - 1) / 2 is the root of 2c^3 - 3c + 1 in (0, 1)
BOUNDARY_PHASE = math.acos((math.sqrt(3.0) - 1.0) / 2.0)


class Flavor(enum.IntEnum):
    B0 = 0
    B0BAR = 1

    @property
    def conjugate(self) -> "Flavor":
        return Flavor(1 - self)


class FlavorPair(NamedTuple):
    left: Flavor
    right: Flavor

    @property
    def same(self) -> bool:
        return self.left == self.right

    @classmethod
    def all(cls) -> tuple["FlavorPair", ...]:
        return tuple(cls(a, b) for a in Flavor for b in Flavor)


@dataclass(frozen=True)
class DecayMode:
    """A flavour-specific final state.

    ``taggable`` marks the channels an experiment actually reconstructs;
    the others still certify a flavour but are dropped by tagged-only
    analyses.
    """

    label: str
    tags_flavor: Flavor
    branching_fraction: float
    taggable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tags_flavor", Flavor(self.tags_flavor))
        if not self.label:
            raise ValidationError("decay mode label must be non-empty")
        if not 0.0 <= self.branching_fraction <= 1.0:
            raise ValidationError(
                f"branching fraction of {self.label!r} must lie in [0, 1], "
                f"got {self.branching_fraction}"
            )

    def partial_width(self, tau_b: float) -> float:
        return self.branching_fraction / tau_b


def conjugate_mode_table(
    entries: Iterable[tuple[str, float, bool]], suffix: str = "-cc"
) -> tuple[DecayMode, ...]:
    """Build a full mode table from B0 modes, adding the charge conjugates.

    Each entry is ``(label, branching_fraction, taggable)``; the B0bar
    partner gets ``label + suffix`` and the same branching fraction.
    """
    entries = list(entries)
    modes = [DecayMode(lbl, Flavor.B0, br, tg) for lbl, br, tg in entries]
    modes += [DecayMode(lbl + suffix, Flavor.B0BAR, br, tg) for lbl, br, tg in entries]
    return tuple(modes)


def default_decay_modes() -> tuple[DecayMode, ...]:
    return conjugate_mode_table(
        [("Dstar-l-nu", TAGGED_BRANCHING, True), ("other", 1.0 - TAGGED_BRANCHING, False)]
    )


@dataclass(frozen=True)
class PhysicsParams:
    tau_b: float = DEFAULT_TAU_B
    delta_m: float = DEFAULT_DELTA_M
    decay_modes: tuple[DecayMode, ...] = field(default_factory=default_decay_modes)

    def __post_init__(self):
        object.__setattr__(self, "decay_modes", tuple(self.decay_modes))
        if not (math.isfinite(self.tau_b) and self.tau_b > 0):
            raise ValidationError(f"tau_b must be positive, got {self.tau_b}")
        if not (math.isfinite(self.delta_m) and self.delta_m > 0):
            raise ValidationError(
                f"delta_m must be positive (no oscillation otherwise), got {self.delta_m}"
            )
        labels = [m.label for m in self.decay_modes]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate decay mode labels in {labels}")
        for flavor in Flavor:
            fractions = [m.branching_fraction for m in self.decay_modes if m.tags_flavor == flavor]
            total = math.fsum(fractions)
            if abs(total - 1.0) > 1e-12:
                raise ValidationError(
                    f"branching fractions of {flavor.name} modes must sum to 1, got {total!r}"
                )
        b0 = sorted(m.branching_fraction for m in self.decay_modes if m.tags_flavor == Flavor.B0)
        b0bar = sorted(
            m.branching_fraction for m in self.decay_modes if m.tags_flavor == Flavor.B0BAR
        )
        if b0 != b0bar:
            raise ValidationError(
                "charge-conjugate modes must have equal branching fractions: "
                f"B0 {b0} vs B0BAR {b0bar}"
            )

    @property
    def width(self) -> float:
        return 1.0 / self.tau_b

    def mode(self, label: str | DecayMode) -> DecayMode:
        if isinstance(label, DecayMode):
            label = label.label
        for m in self.decay_modes:
            if m.label == label:
                return m
        raise UnknownModeError(f"unknown decay mode {label!r}")

    def mode_index(self, label: str) -> int:
        for i, m in enumerate(self.decay_modes):
            if m.label == label:
                return i
        raise UnknownModeError(f"unknown decay mode {label!r}")

    def modes_for(self, flavor: Flavor) -> tuple[DecayMode, ...]:
        return tuple(m for m in self.decay_modes if m.tags_flavor == flavor)


def _check_times(*times: ArrayLike) -> None:
    for t in times:
        arr = np.asarray(t, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < 0):
            raise ValidationError("decay times must be non-negative")


def pair_amplitude(t_l: ArrayLike, t_r: ArrayLike, pair: FlavorPair, p: PhysicsParams):
    """Coefficient of ``|pair>`` in the pair state evolved to ``(t_l, t_r)``.

    The overall sign conventions follow the singlet written as
    ``(|B0>|B0bar> - |B0bar>|B0>)/sqrt(2)``; the mass-dependent global
    phase is dropped.
    """
    _check_times(t_l, t_r)
    t_l = np.asarray(t_l, dtype=float)
    t_r = np.asarray(t_r, dtype=float)
    decay = _AMP_NORM * np.exp(-(t_l + t_r) / (2.0 * p.tau_b))
    phase = np.exp(1j * p.delta_m * (t_l - t_r))
    pair = FlavorPair(Flavor(pair[0]), Flavor(pair[1]))
    if pair.same:
        amp = decay * (1.0 - phase)
    else:
        amp = decay * (1.0 + phase)
    if pair.left == Flavor.B0BAR:
        amp = -amp
    return complex(amp) if amp.ndim == 0 else amp


def joint_flavor_probability(
    t_l: ArrayLike, t_r: ArrayLike, pair: FlavorPair, p: PhysicsParams
) -> ArrayLike:
    _check_times(t_l, t_r)
    t_l = np.asarray(t_l, dtype=float)
    t_r = np.asarray(t_r, dtype=float)
    sign = -1.0 if FlavorPair(Flavor(pair[0]), Flavor(pair[1])).same else 1.0
    out = 0.25 * np.exp(-(t_l + t_r) / p.tau_b) * (1.0 + sign * np.cos(p.delta_m * (t_l - t_r)))
    return float(out) if out.ndim == 0 else out


def joint_decay_rate(
    t_l: ArrayLike,
    t_r: ArrayLike,
    mode_l: str | DecayMode,
    mode_r: str | DecayMode,
    p: PhysicsParams,
) -> ArrayLike:
    """Joint rate density (ps^-2) for the left member to decay into ``mode_l``
    at ``t_l`` and the right one into ``mode_r`` at ``t_r``."""
    ml = p.mode(mode_l)
    mr = p.mode(mode_r)
    pair = FlavorPair(ml.tags_flavor, mr.tags_flavor)
    prob = joint_flavor_probability(t_l, t_r, pair, p)
    return prob * ml.partial_width(p.tau_b) * mr.partial_width(p.tau_b)


def correlation(delta_t: ArrayLike, p: PhysicsParams) -> ArrayLike:
    out = -np.cos(p.delta_m * np.asarray(delta_t, dtype=float))
    return float(out) if out.ndim == 0 else out


def chsh_statistic(delta_t: ArrayLike, p: PhysicsParams) -> ArrayLike:
    delta_t = np.asarray(delta_t, dtype=float)
    if np.any(delta_t < 0):
        raise ValidationError("chsh_statistic needs delta_t >= 0")
    out = np.abs(3.0 * correlation(delta_t, p) - correlation(3.0 * delta_t, p))
    return float(out) if out.ndim == 0 else out


def _chsh_cubic(delta_t: float, p: PhysicsParams) -> float:
    c = math.cos(p.delta_m * delta_t)
    return 6.0 * c - 4.0 * c**3


def chsh_maximum(p: PhysicsParams) -> tuple[float, float]:
    """Return ``(delta_t, S)`` at the first maximum of the predicted S.

    The stationary point is located as the root of dS/dc = 6 - 12 c^2,
    which is far better conditioned than maximizing S directly.
    """
    lo, hi = 1e-9 / p.delta_m, (math.pi / 2.0) / p.delta_m
    root = optimize.brentq(
        lambda dt: 6.0 - 12.0 * math.cos(p.delta_m * dt) ** 2, lo, hi, xtol=1e-15, rtol=1e-15
    )
    return root, float(chsh_statistic(root, p))


def violation_boundary(p: PhysicsParams) -> float:
    """Smallest delta_t > 0 where the predicted S falls back to 2."""
    lo, _ = chsh_maximum(p)
    hi = (math.pi / 2.0) / p.delta_m
    return optimize.brentq(
        lambda dt: _chsh_cubic(dt, p) - 2.0, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=200
    )


def mean_correlation_in_bin(lo: ArrayLike, hi: ArrayLike, p: PhysicsParams) -> ArrayLike:
    """Expected correlation over ``|delta_t|`` in ``[lo, hi)``.

    ``|delta_t|`` is exponentially distributed with mean ``tau_b`` and the
    correlation is averaged against that density, so this is the exact
    expectation of a binned estimate rather than the value at the centre.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    z = complex(-1.0 / p.tau_b, p.delta_m)
    cos_int = np.real((np.exp(z * hi) - np.exp(z * lo)) / z)
    norm = p.tau_b * (np.exp(-lo / p.tau_b) - np.exp(-hi / p.tau_b))
    out = -cos_int / norm
    return float(out) if out.ndim == 0 else out


def folded_bin_probabilities(edges: Sequence[float], p: PhysicsParams):
    """Probability that a pair lands in each ``|delta_t|`` bin as same- or
    opposite-flavour. ``edges`` may end in ``inf``. Returns ``(same, opp)``."""
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1], edges[1:]
    z = complex(-1.0 / p.tau_b, p.delta_m)
    with np.errstate(invalid="ignore"):
        ehi = np.where(np.isinf(hi), 0.0, np.exp(z * np.where(np.isinf(hi), 0.0, hi)))
    cos_int = np.real((ehi - np.exp(z * lo)) / z) / p.tau_b
    mass = np.exp(-lo / p.tau_b) - np.exp(-hi / p.tau_b)
    return 0.5 * (mass - cos_int), 0.5 * (mass + cos_int)


def predicted_bin_chsh(lo1: float, hi1: float, lo3: float, hi3: float, p: PhysicsParams) -> float:
    """S expected from two bins holding delta_t and 3*delta_t."""
    return abs(3.0 * mean_correlation_in_bin(lo1, hi1, p) - mean_correlation_in_bin(lo3, hi3, p))
