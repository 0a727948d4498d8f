"""Discrete-step stochastic scheduler for population protocols with leaks.

Each step is independently a leak with probability beta/n; otherwise an
ordered pair of two distinct molecules is drawn uniformly and the protocol
table is applied (a missing entry leaves both molecules unchanged). A leak
transforms one uniformly chosen molecule according to the leak strategy and
is a no-op when the chosen molecule's species is catalytic. Leak steps and
regular steps both advance the interaction counter by one.

State is count-based for throughput; an individual-molecule mode backs the
coupled-schedule experiments that need molecule identity. Both modes draw
from the same distribution.

Randomness comes from numpy's PCG64 seeded with a 64-bit integer. Runs are
reproducible given (seed, params); batch run i reseeds with seed + i.
"""

from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._io import dump_json, open_text
from . import _kernels
from .model import Output, Protocol, ProtocolError, Species, classify_catalytic

_SEGMENT_STEPS = 1 << 18  # max steps per random-buffer refill (6 MB of uniforms)


class EventKind(enum.Enum):
    REACTION = "reaction"
    NULL = "null"
    LEAK = "leak"


class Strategy(enum.Enum):
    NONE = "none"
    WORST_FALSE_POSITIVE = "worst_false_positive"
    WORST_FALSE_NEGATIVE = "worst_false_negative"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Configuration:
    """Immutable count vector over species ids."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.array(self.counts, dtype=np.int64, copy=True)
        if arr.ndim != 1:
            raise ValueError("counts must be a 1-d vector")
        if (arr < 0).any():
            raise ValueError("counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class Event:
    t: int
    kind: EventKind
    participants: Tuple[str, ...]


@dataclass(frozen=True)
class LeakModel:
    """Leak probability beta/n plus the adversarial transformation strategy.

    The built-in worst cases need level-annotated protocols: every leak
    produces the level-1 species (maximizing false positives) or the
    highest-level neutral species (maximizing false negatives). A custom
    strategy maps species name to species name and may only send
    non-catalytic species to non-catalytic species. With strategy "none" a
    positive beta yields trivial leaks that change nothing.
    """

    beta: float = 0.0
    strategy: Strategy = Strategy.NONE
    custom_map: Optional[Mapping[str, str]] = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if (self.strategy is Strategy.CUSTOM) != (self.custom_map is not None):
            raise ValueError("custom_map must be given exactly for the custom strategy")

    @classmethod
    def none(cls) -> "LeakModel":
        return cls()

    @classmethod
    def worst_false_positive(cls, beta: float) -> "LeakModel":
        return cls(beta, Strategy.WORST_FALSE_POSITIVE)

    @classmethod
    def worst_false_negative(cls, beta: float) -> "LeakModel":
        return cls(beta, Strategy.WORST_FALSE_NEGATIVE)

    @classmethod
    def custom(cls, beta: float, mapping: Mapping[str, str]) -> "LeakModel":
        return cls(beta, Strategy.CUSTOM, dict(mapping))

    def resolve(self, protocol: Protocol) -> np.ndarray:
        """Per-species leak target ids; -1 marks a no-op (catalytic or unmapped)."""
        catalytic = protocol.catalytic_mask()
        leak_map = np.full(len(protocol.species), -1, dtype=np.int64)
        if self.strategy is Strategy.NONE:
            return leak_map
        if self.strategy is Strategy.CUSTOM:
            for src_name, dst_name in self.custom_map.items():
                src = protocol.species_by_name(src_name)
                dst = protocol.species_by_name(dst_name)
                if catalytic[src.id] or catalytic[dst.id]:
                    raise ProtocolError(
                        f"leak {src_name} -> {dst_name} touches a catalytic species"
                    )
                leak_map[src.id] = dst.id
            return leak_map
        levels = protocol.arrays()[3]
        if (levels < 0).any():
            raise ProtocolError(f"strategy {self.strategy.value} needs a level-annotated protocol")
        if self.strategy is Strategy.WORST_FALSE_POSITIVE:
            target_level = 1
        else:
            target_level = int(levels.max())
        hits = np.nonzero(levels == target_level)[0]
        if hits.size != 1:
            raise ProtocolError(f"protocol has no unique level-{target_level} species")
        target = int(hits[0])
        if catalytic[target]:
            raise ProtocolError("leak target species is catalytic")
        leak_map[~catalytic] = target
        return leak_map


@dataclass(frozen=True)
class SimParams:
    """One run: protocol, start state, leak model, seed, and horizon.

    t_max counts interactions; parallel time is t/n. Snapshots are taken at
    every multiple of record_every in [0, t_max].
    """

    protocol: Protocol
    init: Configuration
    leak: LeakModel = field(default_factory=LeakModel)
    seed: int = 0
    t_max: int = 0
    record_every: int = 1
    record_events: bool = False

    def __post_init__(self):
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if len(self.init.counts) != len(self.protocol.species):
            raise ValueError("init counts do not match the protocol's species")
        n = self.init.n
        if n < 2:
            raise ValueError("population must have at least 2 molecules")
        if self.leak.beta / n > 1:
            raise ValueError(f"beta/n must be <= 1, got {self.leak.beta / n}")
        self.leak.resolve(self.protocol)  # fail fast on strategy/protocol mismatch


@dataclass(eq=False)
class Trajectory:
    """Snapshots (t, counts) plus the exact final state of the run."""

    times: np.ndarray
    counts: np.ndarray
    final: Configuration
    params: SimParams
    events: Optional[List[Event]] = None

    @property
    def species_names(self) -> Tuple[str, ...]:
        return tuple(sp.name for sp in self.params.protocol.species)

    @property
    def n(self) -> int:
        return self.params.init.n

    def parallel_times(self) -> np.ndarray:
        return self.times / self.n

    def fractions(self) -> np.ndarray:
        return self.counts / self.n

    def detect_fractions(self) -> np.ndarray:
        mask = self.params.protocol.arrays()[2]
        return self.counts[:, mask].sum(axis=1) / self.n

    def to_csv(self, path) -> None:
        det = self.detect_fractions()
        pt = self.parallel_times()
        with open_text(path) as fh:
            fh.write("t,parallel_time," + ",".join(self.species_names) + ",detect_fraction\n")
            for i, t in enumerate(self.times):
                row = ",".join(str(int(c)) for c in self.counts[i])
                fh.write(f"{int(t)},{float(pt[i])!r},{row},{float(det[i])!r}\n")

    def to_json_obj(self) -> dict:
        det = self.detect_fractions()
        pt = self.parallel_times()
        return {
            "params": params_echo(self.params),
            "species": list(self.species_names),
            "snapshots": [
                {
                    "t": int(t),
                    "parallel_time": float(pt[i]),
                    "counts": {name: int(c) for name, c in zip(self.species_names, self.counts[i])},
                    "detect_fraction": float(det[i]),
                }
                for i, t in enumerate(self.times)
            ],
        }

    def to_json(self, path) -> None:
        dump_json(self.to_json_obj(), path)


@dataclass(eq=False)
class BatchResult:
    """Per-snapshot aggregate statistics over independent runs.

    Variances are population variances (ddof=0), so a single run reports
    zero variance and mean equal to the run itself.
    """

    times: np.ndarray
    mean_fractions: np.ndarray
    var_fractions: np.ndarray
    mean_detect: np.ndarray
    var_detect: np.ndarray
    detect_all: np.ndarray
    runs: int
    params: SimParams

    @property
    def species_names(self) -> Tuple[str, ...]:
        return tuple(sp.name for sp in self.params.protocol.species)

    def parallel_times(self) -> np.ndarray:
        return self.times / self.params.init.n

    def to_csv(self, path) -> None:
        names = self.species_names
        pt = self.parallel_times()
        with open_text(path) as fh:
            fh.write(
                "t,parallel_time,"
                + ",".join(f"{n}_mean" for n in names)
                + ",detect_fraction_mean,"
                + ",".join(f"{n}_var" for n in names)
                + ",detect_fraction_var\n"
            )
            for i, t in enumerate(self.times):
                means = ",".join(repr(float(v)) for v in self.mean_fractions[i])
                vars_ = ",".join(repr(float(v)) for v in self.var_fractions[i])
                fh.write(
                    f"{int(t)},{float(pt[i])!r},{means},{float(self.mean_detect[i])!r},"
                    f"{vars_},{float(self.var_detect[i])!r}\n"
                )

    def to_json_obj(self) -> dict:
        return {
            "params": params_echo(self.params),
            "runs": self.runs,
            "species": list(self.species_names),
            "t": [int(t) for t in self.times],
            "parallel_time": self.parallel_times().tolist(),
            "mean_fractions": self.mean_fractions.tolist(),
            "var_fractions": self.var_fractions.tolist(),
            "mean_detect_fraction": self.mean_detect.tolist(),
            "var_detect_fraction": self.var_detect.tolist(),
        }

    def to_json(self, path) -> None:
        dump_json(self.to_json_obj(), path)


def params_echo(params: SimParams) -> dict:
    return {
        "n": params.init.n,
        "seed": params.seed,
        "t_max": params.t_max,
        "record_every": params.record_every,
        "beta": params.leak.beta,
        "strategy": params.leak.strategy.value,
        "species": [sp.name for sp in params.protocol.species],
    }


# ---------------------------------------------------------------------------
# stepping


def _step_raw(counts, n, prod1, prod2, leak_map, leak_p, u):
    """Python twin of the count kernel for one step; returns event details.

    Consumes exactly the three uniforms in u, mirroring _kernels.count_steps.
    """
    if u[0] < leak_p:
        a = int(np.searchsorted(np.cumsum(counts), u[1] * n, side="right"))
        tgt = int(leak_map[a])
        if tgt >= 0 and tgt != a:
            counts[a] -= 1
            counts[tgt] += 1
            return EventKind.LEAK, (a, tgt)
        return EventKind.LEAK, (a, a)
    a = int(np.searchsorted(np.cumsum(counts), u[1] * n, side="right"))
    counts[a] -= 1
    b = int(np.searchsorted(np.cumsum(counts), u[2] * (n - 1), side="right"))
    counts[a] += 1
    p = prod1[a, b]
    if p >= 0:
        counts[a] -= 1
        counts[b] -= 1
        counts[p] += 1
        counts[prod2[a, b]] += 1
        return EventKind.REACTION, (a, b)
    return EventKind.NULL, (a, b)


def step(
    config: Configuration,
    protocol: Protocol,
    leak: LeakModel,
    rng: np.random.Generator,
) -> Tuple[Configuration, EventKind]:
    """One scheduler step; pure with respect to the input configuration."""
    prod1, prod2, _, _ = protocol.arrays()
    leak_map = leak.resolve(protocol)
    n = config.n
    counts = config.counts.copy()
    kind, _ = _step_raw(counts, n, prod1, prod2, leak_map, leak.beta / n, rng.random(3))
    return Configuration(counts), kind


def _advance(
    protocol: Protocol,
    counts: np.ndarray,
    leak: LeakModel,
    rng: np.random.Generator,
    steps: int,
    every: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Advance `steps` interactions in place on `counts`.

    Returns (relative snapshot times at multiples of `every` within (0, steps],
    snapshot counts). Consumes exactly 3 uniforms per step from rng.
    """
    prod1, prod2, _, _ = protocol.arrays()
    leak_map = leak.resolve(protocol)
    n = int(counts.sum())
    leak_p = leak.beta / n
    times = np.arange(every, steps + 1, every, dtype=np.int64)
    snaps = np.empty((len(times), len(counts)), dtype=np.int64)
    done = 0
    idx = 0
    while done < steps:
        target = int(times[idx]) if idx < len(times) else steps
        while done < target:
            seg = min(_SEGMENT_STEPS, target - done)
            _kernels.count_steps(counts, n, prod1, prod2, leak_map, leak_p, rng.random(3 * seg))
            done += seg
        if idx < len(times) and done == times[idx]:
            snaps[idx] = counts
            idx += 1
    return times, snaps


def run(params: SimParams) -> Trajectory:
    """Simulate t_max interactions, recording counts every record_every steps.

    Deterministic given params.seed. The trajectory also carries the exact
    state after t_max steps even when t_max is not a snapshot time.
    """
    protocol = params.protocol
    n = params.init.n
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    counts = params.init.counts.copy()
    events: Optional[List[Event]] = None

    if params.record_events:
        prod1, prod2, _, _ = protocol.arrays()
        leak_map = params.leak.resolve(protocol)
        leak_p = params.leak.beta / n
        names = [sp.name for sp in protocol.species]
        times = np.arange(0, params.t_max + 1, params.record_every, dtype=np.int64)
        snaps = np.empty((len(times), len(counts)), dtype=np.int64)
        snaps[0] = counts
        events = []
        idx = 1
        for t in range(1, params.t_max + 1):
            kind, who = _step_raw(counts, n, prod1, prod2, leak_map, leak_p, rng.random(3))
            events.append(Event(t, kind, tuple(names[w] for w in who)))
            if idx < len(times) and t == times[idx]:
                snaps[idx] = counts
                idx += 1
    else:
        rel_times, rel_snaps = _advance(
            protocol, counts, params.leak, rng, params.t_max, params.record_every
        )
        times = np.concatenate(([0], rel_times))
        snaps = np.concatenate((params.init.counts[None, :], rel_snaps))

    return Trajectory(times, snaps, Configuration(counts), params, events)


def run_batch(params: SimParams, runs: int) -> BatchResult:
    """Independent runs with seeds params.seed + i, aggregated per snapshot."""
    if runs < 1:
        raise ValueError("runs must be >= 1")

    def one(i: int) -> Trajectory:
        return run(replace(params, seed=params.seed + i, record_events=False))

    if runs == 1:
        trajectories = [one(0)]
    else:
        workers = min(runs, os.cpu_count() or 1)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(one, range(runs)))

    n = params.init.n
    fracs = np.stack([tr.counts for tr in trajectories]).astype(np.float64) / n
    mask = params.protocol.arrays()[2]
    detect = fracs[:, :, mask].sum(axis=2)
    return BatchResult(
        times=trajectories[0].times,
        mean_fractions=fracs.mean(axis=0),
        var_fractions=fracs.var(axis=0),
        mean_detect=detect.mean(axis=0),
        var_detect=detect.var(axis=0),
        detect_all=detect,
        runs=runs,
        params=params,
    )


# ---------------------------------------------------------------------------
# state surgery and output sampling


def set_d_count(config: Configuration, protocol: Protocol, k_new: int) -> Configuration:
    """Externally force the detector count to k_new, preserving n.

    Removed detectors become neutral; added detectors consume neutral
    molecules first, then alert levels from the lowest level up.
    """
    levels = protocol.arrays()[3]
    d_ids = np.nonzero(levels == 0)[0]
    if d_ids.size != 1:
        raise ProtocolError("protocol has no unique level-0 detector species")
    d = int(d_ids[0])
    neutral = [sp for sp in protocol.species if sp.output is Output.NONDETECT]
    if len(neutral) != 1:
        raise ProtocolError("set_d_count needs exactly one nondetect species")
    nid = neutral[0].id
    counts = config.counts.copy()
    n = config.n
    if not 0 <= k_new <= n:
        raise ValueError(f"k_new must be in [0, {n}], got {k_new}")
    delta = k_new - counts[d]
    if delta <= 0:
        counts[d] += delta
        counts[nid] -= delta
        return Configuration(counts)
    take = min(delta, counts[nid])
    counts[nid] -= take
    counts[d] += take
    delta -= take
    order = sorted((sp for sp in protocol.species if sp.level and sp.level >= 1), key=lambda sp: sp.level)
    for sp in order:
        if delta == 0:
            break
        take = min(delta, counts[sp.id])
        counts[sp.id] -= take
        counts[d] += take
        delta -= take
    if delta > 0:
        raise ValueError("not enough non-detector molecules to convert")
    return Configuration(counts)


def majority_output(detect_tally: int, m: int) -> Output:
    """Majority of m sampled outputs; ties resolve to nondetect."""
    return Output.DETECT if 2 * detect_tally > m else Output.NONDETECT


def sample_output(
    config: Configuration,
    protocol: Protocol,
    m: int,
    rng: np.random.Generator,
) -> Tuple[Output, Tuple[int, int]]:
    """Draw m molecules uniformly with replacement and return the majority output.

    The detect tally is binomial(m, detect fraction), which is exactly the
    distribution of counting m independent uniform draws.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    mask = protocol.arrays()[2]
    f = config.counts[mask].sum() / config.n
    detect_tally = int(rng.binomial(m, f))
    return majority_output(detect_tally, m), (detect_tally, m - detect_tally)


# ---------------------------------------------------------------------------
# occupancy measurements (small instances) and the individual-molecule mode


def _radix_for(protocol: Protocol, n: int) -> np.ndarray:
    m = len(protocol.species)
    size = (n + 1) ** m
    if size > 50_000_000:
        raise ValueError(f"configuration code space too large ({size}); occupancy needs a small instance")
    return np.array([(n + 1) ** i for i in range(m)], dtype=np.int64)


def _decode_hist(hist: np.ndarray, protocol: Protocol, n: int) -> Dict[Tuple[int, ...], float]:
    total = hist.sum()
    out: Dict[Tuple[int, ...], float] = {}
    m = len(protocol.species)
    for code in np.nonzero(hist)[0]:
        c = int(code)
        key = []
        for _ in range(m):
            key.append(c % (n + 1))
            c //= n + 1
        out[tuple(key)] = hist[code] / total
    return out


def empirical_occupancy(params: SimParams, burn_in: int) -> Dict[Tuple[int, ...], float]:
    """Long-run fraction of steps spent in each configuration (count mode)."""
    if not 0 <= burn_in < params.t_max:
        raise ValueError("burn_in must be in [0, t_max)")
    protocol = params.protocol
    prod1, prod2, _, _ = protocol.arrays()
    leak_map = params.leak.resolve(protocol)
    n = params.init.n
    radix = _radix_for(protocol, n)
    hist = np.zeros((n + 1) ** len(protocol.species), dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    counts = params.init.counts.copy()
    done = 0
    while done < params.t_max:
        seg = min(_SEGMENT_STEPS, params.t_max - done)
        skip = min(seg, max(0, burn_in - done))
        _kernels.count_steps_occupancy(
            counts, n, prod1, prod2, leak_map, params.leak.beta / n,
            rng.random(3 * seg), radix, hist, skip,
        )
        done += seg
    return _decode_hist(hist, protocol, n)


def individual_occupancy(
    protocol: Protocol,
    init: Configuration,
    leak: LeakModel,
    t_max: int,
    burn_in: int,
    seed: int,
) -> Dict[Tuple[int, ...], float]:
    """Occupancy measured in the molecule-array execution mode."""
    prod1, prod2, _, _ = protocol.arrays()
    leak_map = leak.resolve(protocol)
    n = init.n
    states = np.repeat(np.arange(len(protocol.species)), init.counts).astype(np.int64)
    counts = init.counts.copy()
    radix = _radix_for(protocol, n)
    hist = np.zeros((n + 1) ** len(protocol.species), dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    done = 0
    while done < t_max:
        seg = min(_SEGMENT_STEPS, t_max - done)
        skip = min(seg, max(0, burn_in - done))
        _kernels.individual_steps_occupancy(
            states, counts, n, prod1, prod2, leak_map, leak.beta / n,
            rng.random(3 * seg), radix, hist, skip,
        )
        done += seg
    return _decode_hist(hist, protocol, n)


@dataclass(frozen=True)
class CouplingResult:
    ok: bool
    violation_t: Optional[int]
    t_max: int


def species_of_levels(protocol: Protocol, level_arr: Sequence[int]) -> np.ndarray:
    """Map a vector of levels to species ids (levels must be bijective)."""
    levels = protocol.arrays()[3]
    if (levels < 0).any() or len(set(levels.tolist())) != len(levels):
        raise ProtocolError("protocol levels must be present and unique")
    lut = np.full(int(levels.max()) + 1, -1, dtype=np.int64)
    lut[levels] = np.arange(len(levels))
    arr = np.asarray(level_arr, dtype=np.int64)
    if arr.min() < 0 or arr.max() > levels.max():
        raise ValueError("level out of range for this protocol")
    mapped = lut[arr]
    if (mapped < 0).any():
        raise ValueError("level vector uses a level this protocol does not have")
    return mapped


def run_coupled_min_triple(
    protocol: Protocol,
    v_levels: Sequence[int],
    w_levels: Sequence[int],
    t_max: int,
    seed: int,
) -> CouplingResult:
    """Couple three populations on one pair schedule and watch the min relation.

    Population u starts as the pointwise level-minimum of v and w; after every
    step the relation level(u_i) = min(level(v_i), level(w_i)) is checked at
    the two molecules that interacted. Leak-free by construction.
    """
    v = np.asarray(v_levels, dtype=np.int64)
    w = np.asarray(w_levels, dtype=np.int64)
    if v.shape != w.shape or v.ndim != 1 or v.shape[0] < 2:
        raise ValueError("v and w must be equal-length level vectors of size >= 2")
    prod1, prod2, _, levels = protocol.arrays()
    sv = species_of_levels(protocol, v)
    sw = species_of_levels(protocol, w)
    su = species_of_levels(protocol, np.minimum(v, w))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    done = 0
    while done < t_max:
        seg = min(_SEGMENT_STEPS, t_max - done)
        bad = _kernels.coupled_min_steps(su, sv, sw, levels, prod1, prod2, rng.random(2 * seg))
        if bad >= 0:
            return CouplingResult(False, done + int(bad), t_max)
        done += seg
    return CouplingResult(True, None, t_max)
