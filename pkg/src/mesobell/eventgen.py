"""Exact Monte Carlo generation of pair events.

The joint rate factorizes as

    exp(-(t_l + t_r)/tau) / tau^2           (two independent exponentials)
    x (1 -/+ cos(dm * (t_l - t_r))) / 4     (flavour pair given the times)
    x Br(f_l | B_l) * Br(f_r | B_r)         (mode given the flavour)

so every factor can be drawn directly with no rejection step.

A generated record is read two ways. As a quantum measurement record it
is a decay observed at some time in some channel. As a local hidden
variable it is the tuple ``(t_l, f_l, t_r, f_r)`` fixed when the pair is
produced, with each side's outcome read off its own half of the tuple.
Both readings are the same bytes; nothing here knows about measurement
settings because the experiment has none.

Seeding: chunk ``k`` of a run with master seed ``s`` draws from
``PCG64(SeedSequence(s, spawn_key=(k,)))``, i.e. numpy's SeedSequence
hash of the pair ``(s, k)``. Chunk ``k`` covers events
``[k * chunk_size, (k + 1) * chunk_size)``, so the output depends only on
``(seed, chunk_size)`` and not on how many workers ran the chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Literal, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .errors import NormalizationError, ValidationError
from .physics import DecayMode, Flavor, FlavorPair, PhysicsParams, joint_flavor_probability

FORMAT_VERSION = "mesobell-events/1"
DEFAULT_CHUNK_SIZE = 65536

Side = Literal["left", "right"]


class PairEvent(NamedTuple):
    t_l: float
    mode_l: DecayMode
    t_r: float
    mode_r: DecayMode


HiddenVariableTuple = PairEvent


class Outcome(NamedTuple):
    time: float
    mode: DecayMode
    flavor: Flavor


def deterministic_outcome(hv: HiddenVariableTuple, side: Side) -> Outcome:
    """Read one side's predetermined decay from the hidden variables.

    Only that side's half of the tuple is touched.
    """
    if side == "left":
        t, mode = hv.t_l, hv.mode_l
    elif side == "right":
        t, mode = hv.t_r, hv.mode_r
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return Outcome(t, mode, mode.tags_flavor)


@dataclass(frozen=True)
class GenerationConfig:
    n_pairs: int
    seed: int
    chunk_size: int = DEFAULT_CHUNK_SIZE
    params: PhysicsParams = field(default_factory=PhysicsParams)

    def __post_init__(self):
        if int(self.n_pairs) != self.n_pairs or self.n_pairs < 1:
            raise ValidationError(f"number of pairs must be a positive integer, got {self.n_pairs}")
        if int(self.chunk_size) != self.chunk_size or self.chunk_size < 1:
            raise ValidationError(f"chunk size must be a positive integer, got {self.chunk_size}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class EventDataset:
    """Column-oriented store of pair events.

    ``mode_l`` and ``mode_r`` index into ``params.decay_modes``.
    """

    params: PhysicsParams
    t_l: np.ndarray
    mode_l: np.ndarray
    t_r: np.ndarray
    mode_r: np.ndarray
    seed: int | None = None
    chunk_size: int | None = None
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        n = len(self.t_l)
        if not (len(self.mode_l) == len(self.t_r) == len(self.mode_r) == n):
            raise ValidationError("event columns have different lengths")

    @property
    def count(self) -> int:
        return len(self.t_l)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> PairEvent:
        modes = self.params.decay_modes
        return PairEvent(
            float(self.t_l[i]), modes[self.mode_l[i]], float(self.t_r[i]), modes[self.mode_r[i]]
        )

    def __iter__(self) -> Iterator[PairEvent]:
        modes = self.params.decay_modes
        for tl, ml, tr, mr in zip(
            self.t_l.tolist(), self.mode_l.tolist(), self.t_r.tolist(), self.mode_r.tolist()
        ):
            yield PairEvent(tl, modes[ml], tr, modes[mr])

    def mode_flavors(self) -> np.ndarray:
        return np.array([int(m.tags_flavor) for m in self.params.decay_modes], dtype=np.int8)

    def mode_taggable(self) -> np.ndarray:
        return np.array([m.taggable for m in self.params.decay_modes], dtype=bool)

    def identical(self, other: "EventDataset") -> bool:
        return (
            self.params == other.params
            and np.array_equal(self.t_l, other.t_l)
            and np.array_equal(self.t_r, other.t_r)
            and np.array_equal(self.mode_l, other.mode_l)
            and np.array_equal(self.mode_r, other.mode_r)
        )


def _mode_tables(p: PhysicsParams):
    """Per flavour: indices into ``p.decay_modes`` and cumulative conditional
    branching fractions for inverse-CDF selection."""
    tables = []
    for flavor in Flavor:
        idx = np.array([i for i, m in enumerate(p.decay_modes) if m.tags_flavor == flavor])
        br = np.array([p.decay_modes[i].branching_fraction for i in idx])
        cum = np.cumsum(br / br.sum())
        cum[-1] = 1.0
        tables.append((idx, cum))
    return tables


def sample_pairs(rng: np.random.Generator, n: int, p: PhysicsParams):
    """Draw ``n`` events; returns ``(t_l, mode_l, t_r, mode_r)`` arrays.

    Uses exactly six uniforms per event from ``rng``, drawn as one
    ``(n, 6)`` block.
    """
    u = rng.random((n, 6))
    # inverse CDF of the exponential; 1 - u is in (0, 1]
    t_l = -p.tau_b * np.log1p(-u[:, 0])
    t_r = -p.tau_b * np.log1p(-u[:, 1])
    p_same = 0.5 * (1.0 - np.cos(p.delta_m * (t_l - t_r)))
    same = u[:, 2] < p_same
    flav_l = (u[:, 3] >= 0.5).astype(np.int8)
    flav_r = np.where(same, flav_l, 1 - flav_l).astype(np.int8)

    mode_l = np.empty(n, dtype=np.int64)
    mode_r = np.empty(n, dtype=np.int64)
    for flavor, (idx, cum) in zip(Flavor, _mode_tables(p)):
        for flav, col, out in ((flav_l, 4, mode_l), (flav_r, 5, mode_r)):
            sel = flav == flavor
            pick = np.searchsorted(cum, u[sel, col], side="right")
            out[sel] = idx[np.minimum(pick, len(idx) - 1)]
    return t_l, mode_l, t_r, mode_r


def sample_pair(stream: np.random.Generator, p: PhysicsParams) -> HiddenVariableTuple:
    t_l, mode_l, t_r, mode_r = sample_pairs(stream, 1, p)
    modes = p.decay_modes
    return PairEvent(float(t_l[0]), modes[mode_l[0]], float(t_r[0]), modes[mode_r[0]])


def chunk_stream(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk_index,))))


def _chunk_bounds(n: int, chunk_size: int) -> list[tuple[int, int]]:
    return [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def generate_dataset(cfg: GenerationConfig, workers: int = 1) -> EventDataset:
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    bounds = _chunk_bounds(cfg.n_pairs, cfg.chunk_size)

    def run(k: int):
        start, stop = bounds[k]
        return sample_pairs(chunk_stream(cfg.seed, k), stop - start, cfg.params)

    if workers == 1 or len(bounds) == 1:
        parts = [run(k) for k in range(len(bounds))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(bounds))))

    t_l, mode_l, t_r, mode_r = (np.concatenate(col) for col in zip(*parts))
    return EventDataset(
        params=cfg.params,
        t_l=t_l,
        mode_l=mode_l,
        t_r=t_r,
        mode_r=mode_r,
        seed=cfg.seed,
        chunk_size=cfg.chunk_size,
    )


def _mode_weight(p: PhysicsParams, pair: FlavorPair, labels: set[str] | None) -> float:
    """Sum over allowed modes of Gamma_l * Gamma_r for a given flavour pair."""

    def side(flavor):
        return math.fsum(
            m.partial_width(p.tau_b)
            for m in p.modes_for(flavor)
            if labels is None or m.label in labels
        )

    return side(pair.left) * side(pair.right)


def _flavor_integral_dblquad(pair: FlavorPair, p: PhysicsParams, tol: float):
    # the tail beyond 40 lifetimes on either axis carries < 1e-17
    upper = 40.0 * p.tau_b
    scale = p.tau_b**2
    return integrate.dblquad(
        lambda tr, tl: float(joint_flavor_probability(tl, tr, pair, p)),
        0.0,
        upper,
        0.0,
        upper,
        epsabs=tol * 1e-2 * scale,
        epsrel=tol * 1e-2,
    )


def _flavor_integral_fourier(pair: FlavorPair, p: PhysicsParams, tol: float):
    # cos(dm(tl - tr)) = cos cos + sin sin splits the double integral into
    # squares of one-dimensional Fourier integrals of exp(-t/tau)
    tau, dm = p.tau_b, p.delta_m
    f = lambda t: math.exp(-t / tau)  # noqa: E731
    base, e0 = integrate.quad(f, 0.0, np.inf, epsabs=tol * 1e-3, epsrel=1e-13)
    c, ec = integrate.quad(f, 0.0, np.inf, weight="cos", wvar=dm, epsabs=tol * 1e-3)
    s, es = integrate.quad(f, 0.0, np.inf, weight="sin", wvar=dm, epsabs=tol * 1e-3)
    sign = -1.0 if pair.same else 1.0
    value = 0.25 * (base * base + sign * (c * c + s * s))
    err = 0.25 * (2 * base * e0 + 2 * abs(c) * ec + 2 * abs(s) * es)
    return value, err


def normalization_audit(
    p: PhysicsParams,
    modes: Sequence[str] | None = None,
    method: Literal["fourier", "dblquad"] = "fourier",
    tol: float = 1e-9,
) -> float:
    """Integrate the joint decay rate over both times and sum over mode pairs.

    For a complete mode table the result is 1. ``modes`` restricts the
    sum to a subset of labels. Mode widths do not depend on time, so each
    of the four flavour pairs is integrated once and weighted by its mode
    sum. ``method="dblquad"`` runs adaptive 2-D quadrature on the unit
    square; ``"fourier"`` reduces the oscillating term to 1-D Fourier
    integrals and stays accurate for fast oscillation.

    Raises NormalizationError if the quadrature error estimate exceeds
    ``tol``.
    """
    labels = None if modes is None else set(modes)
    if labels is not None:
        for lbl in labels:
            p.mode(lbl)
    integrator = {"fourier": _flavor_integral_fourier, "dblquad": _flavor_integral_dblquad}[method]
    total = 0.0
    residual = 0.0
    for pair in FlavorPair.all():
        weight = _mode_weight(p, pair, labels)
        if weight == 0.0:
            continue
        value, err = integrator(pair, p, tol)
        total += weight * value
        residual += weight * abs(err)
    if not math.isfinite(total) or residual > tol:
        raise NormalizationError(
            f"normalization quadrature did not converge (value {total!r}, error estimate {residual:.3g})",
            total,
            residual,
        )
    return total
