"""Potential-decay, mixing-distance, and self-stabilization experiments.

The potential of a molecule at alert level i is 3^-i (neutral contributes 0,
the limit of deep levels). With no detector present and no leaks, every
non-null interaction between leveled molecules destroys at least a third of
the pair's combined potential, so the global potential contracts in
expectation by (1 - 2/(3n)) per interaction and all alert levels clear in
O(n log n) interactions. These experiments make that decay, the distance to
the analytic stationary profile, and the response to detector insertion and
removal measurable.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._io import dump_json, open_text
from . import _kernels
from .analysis import StationaryProfile, stationary_profile
from .model import Protocol, ProtocolError
from .robust_detect import build_robust_detect
from .simulate import (
    _SEGMENT_STEPS,
    _advance,
    Configuration,
    LeakModel,
    SimParams,
    run_batch,
    set_d_count,
)


class DetectorPresentWarning(UserWarning):
    """Potential decay assumes no detector; its presence voids the bound."""


def _potential_weights(protocol: Protocol) -> np.ndarray:
    levels = protocol.arrays()[3]
    if (levels < 0).any():
        raise ProtocolError("potential needs a level-annotated protocol")
    top = int(levels.max())
    w = np.where((levels >= 1) & (levels < top), 3.0 ** -levels.astype(np.float64), 0.0)
    return w


def potential(config: Configuration, protocol: Protocol) -> float:
    """Global potential: sum over alert levels of counts[X_i] * 3^-i.

    Detector molecules contribute 0; if any are present a
    DetectorPresentWarning is emitted since the decay bound does not apply.
    """
    levels = protocol.arrays()[3]
    if config.counts[levels == 0].sum() > 0:
        warnings.warn("potential computed with detector molecules present", DetectorPresentWarning)
    return float(config.counts @ _potential_weights(protocol))


def pair_potential_contraction(protocol: Protocol) -> float:
    """Worst ratio (product potential) / (reactant potential) over non-null rules.

    Only detector-free rules count; the decay argument needs this to be at
    most 2/3, which is checkable deterministically from the table.
    """
    w = _potential_weights(protocol)
    levels = protocol.arrays()[3]
    worst = 0.0
    for (a, b), (c, d) in protocol.table.items():
        if levels[a] == 0 or levels[b] == 0:
            continue
        before = w[a] + w[b]
        if before == 0:
            continue
        worst = max(worst, (w[c] + w[d]) / before)
    return worst


def clearing_time_bound(n: int, s: int, exponent: float = 1.0) -> int:
    """Interaction budget ceil(1.5 n ln(n * 3^s * n^exponent)) for full clearing.

    The unspecified high-probability exponent is a knob, fixed to 1 by
    default for experiment sizing.
    """
    return math.ceil(1.5 * n * ((1 + exponent) * math.log(n) + s * math.log(3)))


@dataclass(eq=False)
class PotentialSeries:
    times: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        if (self.phi < 0).any():
            raise ValueError("potential cannot be negative")


@dataclass(eq=False)
class DecayReport:
    n: int
    s: int
    runs: int
    seed: int
    t_star: int
    horizon: int
    clearing_times: List[Optional[int]]
    fraction_cleared_by_tstar: float
    series: PotentialSeries  # mean potential over runs on the snapshot grid
    observed_step_decay: Optional[float]  # mean per-step potential ratio

    @property
    def all_cleared(self) -> bool:
        return all(t is not None for t in self.clearing_times)

    def to_json_obj(self) -> dict:
        return {
            "n": self.n,
            "s": self.s,
            "runs": self.runs,
            "seed": self.seed,
            "t_star": self.t_star,
            "horizon": self.horizon,
            "clearing_times": self.clearing_times,
            "fraction_cleared_by_tstar": self.fraction_cleared_by_tstar,
            "expected_step_decay_bound": 1 - 2 / (3 * self.n),
            "observed_step_decay": self.observed_step_decay,
            "phi_times": self.series.times.tolist(),
            "phi_mean": self.series.phi.tolist(),
        }

    def to_json(self, path) -> None:
        dump_json(self.to_json_obj(), path)

    def to_csv(self, path) -> None:
        with open_text(path) as fh:
            fh.write("t,phi_mean\n")
            for t, phi in zip(self.series.times, self.series.phi):
                fh.write(f"{int(t)},{float(phi)!r}\n")


def all_x1_configuration(n: int, s: int) -> Configuration:
    protocol = build_robust_detect(s)
    counts = np.zeros(len(protocol.species), dtype=np.int64)
    counts[protocol.species_by_name("X1").id] = n
    return Configuration(counts)


def decay_experiment(
    n: int,
    s: int,
    init: Union[str, Configuration] = "all_x1",
    runs: int = 100,
    seed: int = 0,
    record_every: Optional[int] = None,
    horizon_factor: float = 2.0,
) -> DecayReport:
    """Measure clearing of all alert levels from a detector-free start.

    Each run advances until every X count is zero (or the horizon
    horizon_factor * t_star is exhausted), recording the global potential on
    a fixed grid; after clearing the potential is identically zero since
    leveled species cannot reappear without a detector or leaks.
    """
    protocol = build_robust_detect(s)
    if isinstance(init, str):
        if init != "all_x1":
            raise ValueError(f"unknown init preset {init!r}")
        init = all_x1_configuration(n, s)
    if init.n != n:
        raise ValueError("init does not sum to n")
    levels = protocol.arrays()[3]
    if init.counts[levels == 0].sum() > 0:
        raise ValueError("decay experiment requires a detector-free start")

    prod1, prod2, _, _ = protocol.arrays()
    watch = (levels >= 1) & (levels < levels.max())
    weights = _potential_weights(protocol)
    t_star = clearing_time_bound(n, s)
    horizon = math.ceil(horizon_factor * t_star)
    every = record_every or max(1, n // 2)
    grid = np.arange(0, horizon + 1, every, dtype=np.int64)

    phi_sum = np.zeros(len(grid))
    clearing_times: List[Optional[int]] = []
    ratio_acc: List[float] = []
    for r in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(seed + r))
        counts = init.counts.copy()
        phi_run = np.zeros(len(grid))
        phi_run[0] = counts @ weights
        cleared_at: Optional[int] = None
        t = 0
        gi = 1
        while t < horizon and cleared_at is None:
            seg = int(min(every, horizon - t, _SEGMENT_STEPS))
            done, cleared = _kernels.count_steps_until_clear(
                counts, n, prod1, prod2, rng.random(3 * seg), watch
            )
            t += int(done)
            if cleared:
                cleared_at = t
            elif gi < len(grid) and t == grid[gi]:
                phi_run[gi] = counts @ weights
                gi += 1
        clearing_times.append(cleared_at)
        nz = phi_run > 0
        if nz[:-1].sum() > 1:
            idx = np.nonzero(nz)[0]
            head = phi_run[idx[:-1]]
            tail = phi_run[idx[:-1] + 1]
            good = tail > 0
            if good.any():
                ratio_acc.extend((tail[good] / head[good]) ** (1.0 / every))
        phi_sum += phi_run

    cleared_by = sum(1 for t in clearing_times if t is not None and t <= t_star)
    return DecayReport(
        n=n,
        s=s,
        runs=runs,
        seed=seed,
        t_star=t_star,
        horizon=horizon,
        clearing_times=clearing_times,
        fraction_cleared_by_tstar=cleared_by / runs,
        series=PotentialSeries(grid, phi_sum / runs),
        observed_step_decay=float(np.mean(ratio_acc)) if ratio_acc else None,
    )


# ---------------------------------------------------------------------------
# distance to the stationary profile and convergence-time estimation


@dataclass(frozen=True)
class DistanceReport:
    """Total-variation distance plus the worst cumulative-level gap."""

    tv: float
    cumulative_gap: float


def tv_distance(empirical: Sequence[float], profile: StationaryProfile) -> DistanceReport:
    """Compare per-species fractions (level order 0..s+1) to an analytic profile.

    tv is half the L1 distance over species; cumulative_gap is
    max over c in 0..s of |(empirical cumulative up to level c) - p_leq[c]|.
    """
    emp = np.asarray(empirical, dtype=np.float64)
    if emp.shape != (profile.s + 2,):
        raise ValueError(f"expected {profile.s + 2} species fractions, got {emp.shape}")
    analytic = np.concatenate((profile.p, [1 - profile.p_leq[-1]]))
    tv = 0.5 * float(np.abs(emp - analytic).sum())
    gap = float(np.abs(np.cumsum(emp)[: profile.s + 1] - profile.p_leq).max())
    return DistanceReport(tv, gap)


@dataclass(eq=False)
class ConvergenceReport:
    converged: bool
    parallel_time: Optional[float]
    interactions: Optional[int]
    fitted_constant: Optional[float]  # C in t = C * n * log2(n) interactions
    epsilon: float
    runs: int
    n: int
    times: np.ndarray
    gap: np.ndarray

    @property
    def min_gap(self) -> float:
        return float(self.gap.min())

    @property
    def final_gap(self) -> float:
        return float(self.gap[-1])

    def to_json_obj(self) -> dict:
        return {
            "converged": self.converged,
            "parallel_time": self.parallel_time,
            "interactions": self.interactions,
            "fitted_constant": self.fitted_constant,
            "epsilon": self.epsilon,
            "runs": self.runs,
            "n": self.n,
            "min_gap": self.min_gap,
            "final_gap": self.final_gap,
            "gap_times": self.times.tolist(),
            "gap": self.gap.tolist(),
        }

    def to_json(self, path) -> None:
        dump_json(self.to_json_obj(), path)

    def to_csv(self, path) -> None:
        with open_text(path) as fh:
            fh.write("t,parallel_time,cumulative_gap\n")
            for t, g in zip(self.times, self.gap):
                fh.write(f"{int(t)},{float(t / self.n)!r},{float(g)!r}\n")


def _detection_layout(protocol: Protocol) -> Tuple[np.ndarray, int]:
    """Species ids ordered by level, and s, for a detection protocol."""
    levels = protocol.arrays()[3]
    if (levels < 0).any():
        raise ProtocolError("needs a level-annotated protocol")
    order = np.argsort(levels)
    return order, int(levels.max()) - 1


def estimate_convergence_time(
    params: SimParams,
    epsilon: float,
    runs: int,
    profile: Optional[StationaryProfile] = None,
) -> ConvergenceReport:
    """Parallel time after which the run-averaged cumulative gap stays under epsilon.

    The gap series is computed from the mean species fractions over `runs`
    independent runs at each recorded snapshot (per-run series are too noisy
    to threshold at practical run counts), then scanned for the earliest
    snapshot from which it never rises back to epsilon before the horizon.
    Reports the fitted constant C with t = C * n * log2(n) interactions when
    converged; otherwise the achieved gap.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    protocol = params.protocol
    order, s = _detection_layout(protocol)
    n = params.init.n
    if profile is None:
        d_id = int(np.nonzero(protocol.arrays()[3] == 0)[0][0])
        k = int(params.init.counts[d_id])
        profile = stationary_profile(n, k, s, params.leak)

    batch = run_batch(params, runs)
    cum = np.cumsum(batch.mean_fractions[:, order], axis=1)[:, : s + 1]
    gap = np.abs(cum - profile.p_leq[None, :]).max(axis=1)

    below = gap < epsilon
    idx = None
    for i in range(len(below)):
        if below[i:].all():
            idx = i
            break
    if idx is None:
        return ConvergenceReport(
            False, None, None, None, epsilon, runs, n, batch.times, gap
        )
    t_conv = int(batch.times[idx])
    return ConvergenceReport(
        True,
        t_conv / n,
        t_conv,
        t_conv / (n * math.log2(n)),
        epsilon,
        runs,
        n,
        batch.times,
        gap,
    )


# ---------------------------------------------------------------------------
# self-stabilization under external detector changes


@dataclass(eq=False)
class StabilizationRun:
    time_to_low: Optional[float]  # parallel time from removal to detect < low
    time_to_high: Optional[float]  # parallel time from re-add to detect > high

    @property
    def ok(self) -> bool:
        return self.time_to_low is not None and self.time_to_high is not None


@dataclass(eq=False)
class StabilizationReport:
    n: int
    s: int
    runs: int
    seed: int
    remove_at: float
    window: float
    low: float
    high: float
    per_run: List[StabilizationRun]
    times: np.ndarray  # parallel times of the mean detect series
    mean_detect: np.ndarray

    @property
    def successes(self) -> int:
        return sum(1 for r in self.per_run if r.ok)

    def to_json_obj(self) -> dict:
        return {
            "n": self.n,
            "s": self.s,
            "runs": self.runs,
            "seed": self.seed,
            "remove_at": self.remove_at,
            "window": self.window,
            "low": self.low,
            "high": self.high,
            "successes": self.successes,
            "per_run": [
                {"time_to_low": r.time_to_low, "time_to_high": r.time_to_high, "ok": r.ok}
                for r in self.per_run
            ],
            "parallel_time": self.times.tolist(),
            "mean_detect_fraction": self.mean_detect.tolist(),
        }

    def to_json(self, path) -> None:
        dump_json(self.to_json_obj(), path)

    def to_csv(self, path) -> None:
        with open_text(path) as fh:
            fh.write("parallel_time,mean_detect_fraction\n")
            for t, v in zip(self.times, self.mean_detect):
                fh.write(f"{float(t)!r},{float(v)!r}\n")


def stabilization_experiment(
    n: int,
    s: int,
    runs: int = 20,
    seed: int = 0,
    remove_at: float = 100.0,
    window: float = 40.0,
    record_every_pt: float = 0.5,
    low: float = 0.05,
    high: float = 0.62,
) -> StabilizationReport:
    """Remove the detector mid-run, then re-add it, and time the output response.

    Timeline per run (parallel time): build up with k=1 from all-neutral
    until remove_at; then k=0 for `window`; then k=1 again for `window`.
    A run succeeds if the detect fraction drops below `low` within the
    removal window and climbs above `high` within the re-add window.
    """
    from .robust_detect import DetectParams, initial_configuration

    protocol = build_robust_detect(s)
    detect_mask = protocol.arrays()[2]
    leak = LeakModel.none()
    every = max(1, round(record_every_pt * n))
    seg_a = round(remove_at * n)
    seg_b = round(window * n)

    per_run: List[StabilizationRun] = []
    detect_sum = None
    times_abs = None
    for r in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(seed + r))
        counts = initial_configuration(protocol, DetectParams(n, 1, s), "all_n").counts.copy()
        t_a, snaps_a = _advance(protocol, counts, leak, rng, seg_a, every)
        counts = set_d_count(Configuration(counts), protocol, 0).counts.copy()
        t_b, snaps_b = _advance(protocol, counts, leak, rng, seg_b, every)
        counts = set_d_count(Configuration(counts), protocol, 1).counts.copy()
        t_c, snaps_c = _advance(protocol, counts, leak, rng, seg_b, every)

        det_b = snaps_b[:, detect_mask].sum(axis=1) / n
        det_c = snaps_c[:, detect_mask].sum(axis=1) / n
        hit_low = np.nonzero(det_b < low)[0]
        hit_high = np.nonzero(det_c > high)[0]
        per_run.append(
            StabilizationRun(
                time_to_low=float(t_b[hit_low[0]] / n) if hit_low.size else None,
                time_to_high=float(t_c[hit_high[0]] / n) if hit_high.size else None,
            )
        )

        det_a = snaps_a[:, detect_mask].sum(axis=1) / n
        series = np.concatenate((det_a, det_b, det_c))
        if detect_sum is None:
            detect_sum = series
            times_abs = np.concatenate((t_a, seg_a + t_b, seg_a + seg_b + t_c)) / n
        else:
            detect_sum += series

    return StabilizationReport(
        n=n,
        s=s,
        runs=runs,
        seed=seed,
        remove_at=remove_at,
        window=window,
        low=low,
        high=high,
        per_run=per_run,
        times=times_abs,
        mean_detect=detect_sum / runs,
    )
