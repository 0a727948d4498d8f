import json

import numpy as np
import pytest

from leakpp.analysis import total_variation
from leakpp.model import Output
from leakpp.robust_detect import DetectParams, build_robust_detect, build_truncated_ideal, initial_configuration
from leakpp.simulate import (
    Configuration,
    EventKind,
    LeakModel,
    SimParams,
    Strategy,
    empirical_occupancy,
    individual_occupancy,
    majority_output,
    run,
    run_batch,
    run_coupled_min_triple,
    sample_output,
    set_d_count,
    step,
)


def _counts(p, **named):
    c = np.zeros(len(p.species), dtype=np.int64)
    for name, v in named.items():
        c[p.species_by_name(name).id] = v
    return Configuration(c)


class TestStep:
    def test_forced_transition(self, rng):
        p = build_robust_detect(1)
        cfg = _counts(p, D=1, N=1)
        nxt, kind = step(cfg, p, LeakModel.none(), rng)
        assert kind is EventKind.REACTION
        assert nxt == _counts(p, D=1, X1=1)

    def test_forced_leak_to_x1(self, rng):
        p = build_robust_detect(2)
        n = 10
        cfg = _counts(p, N=n)
        # beta = n makes every step a leak
        nxt, kind = step(cfg, p, LeakModel.worst_false_positive(n), rng)
        assert kind is EventKind.LEAK
        assert nxt == _counts(p, N=n - 1, X1=1)

    def test_leak_on_catalyst_is_noop(self, rng):
        p = build_robust_detect(2)
        cfg = _counts(p, D=6)
        for strategy in (LeakModel.worst_false_positive(6), LeakModel.worst_false_negative(6)):
            nxt, kind = step(cfg, p, strategy, rng)
            assert kind is EventKind.LEAK
            assert nxt == cfg

    def test_null_interaction(self, rng):
        p = build_robust_detect(1)
        cfg = _counts(p, N=5)
        nxt, kind = step(cfg, p, LeakModel.none(), rng)
        assert kind is EventKind.NULL
        assert nxt == cfg

    def test_step_is_pure(self, rng):
        p = build_robust_detect(1)
        cfg = _counts(p, D=1, N=1)
        before = cfg.counts.copy()
        step(cfg, p, LeakModel.none(), rng)
        assert np.array_equal(cfg.counts, before)


class TestLeakModel:
    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            LeakModel(-0.1)

    def test_custom_map_validation(self):
        p = build_robust_detect(2)
        with pytest.raises(Exception, match="catalytic"):
            LeakModel.custom(0.1, {"N": "D"}).resolve(p)
        with pytest.raises(Exception, match="catalytic"):
            LeakModel.custom(0.1, {"D": "N"}).resolve(p)
        lm = LeakModel.custom(0.1, {"N": "X1", "X2": "N"}).resolve(p)
        assert lm[p.species_by_name("N").id] == p.species_by_name("X1").id
        assert lm[p.species_by_name("X1").id] == -1  # unmapped: no-op

    def test_worst_case_targets(self):
        p = build_robust_detect(3)
        fp = LeakModel.worst_false_positive(0.1).resolve(p)
        fn = LeakModel.worst_false_negative(0.1).resolve(p)
        x1 = p.species_by_name("X1").id
        n_id = p.species_by_name("N").id
        assert fp[p.species_by_name("N").id] == x1
        assert fp[p.species_by_name("X3").id] == x1
        assert fn[p.species_by_name("X1").id] == n_id
        assert fp[p.species_by_name("D").id] == -1
        assert fn[p.species_by_name("D").id] == -1

    def test_strategy_none_with_positive_beta_is_trivial_leak(self, rng):
        p = build_robust_detect(1)
        cfg = _counts(p, N=4)
        nxt, kind = step(cfg, p, LeakModel(4.0), rng)
        assert kind is EventKind.LEAK
        assert nxt == cfg

    def test_beta_over_n_capped(self):
        p = build_robust_detect(1)
        cfg = _counts(p, N=4)
        with pytest.raises(ValueError, match="beta/n"):
            SimParams(p, cfg, LeakModel.worst_false_positive(8.0), t_max=1)


class TestRun:
    def test_zero_horizon_returns_init(self):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(50, 1, 2))
        tr = run(SimParams(p, cfg, t_max=0))
        assert len(tr.times) == 1 and tr.times[0] == 0
        assert Configuration(tr.counts[0]) == cfg
        assert tr.final == cfg

    def test_seed_determinism(self):
        p = build_robust_detect(3)
        cfg = initial_configuration(p, DetectParams(100, 1, 3))
        params = SimParams(p, cfg, LeakModel.worst_false_positive(0.5), seed=7, t_max=20_000, record_every=1000)
        a, b = run(params), run(params)
        assert np.array_equal(a.counts, b.counts)
        assert a.final == b.final

    def test_event_path_matches_kernel_path(self):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(40, 1, 2))
        base = dict(protocol=p, init=cfg, leak=LeakModel.worst_false_positive(0.8), seed=3, t_max=4000, record_every=400)
        fast = run(SimParams(**base))
        slow = run(SimParams(**base, record_events=True))
        assert np.array_equal(fast.counts, slow.counts)
        assert fast.final == slow.final
        assert len(slow.events) == 4000
        kinds = {e.kind for e in slow.events}
        assert kinds == {EventKind.REACTION, EventKind.NULL, EventKind.LEAK}

    def test_population_and_catalyst_conserved(self):
        p = build_robust_detect(3)
        cfg = initial_configuration(p, DetectParams(60, 3, 3))
        params = SimParams(p, cfg, LeakModel.worst_false_negative(1.0), seed=11, t_max=30_000, record_every=500)
        tr = run(params)
        assert (tr.counts.sum(axis=1) == 60).all()
        assert (tr.counts >= 0).all()
        assert (tr.counts[:, p.species_by_name("D").id] == 3).all()

    def test_snapshot_times_are_multiples(self):
        p = build_robust_detect(1)
        cfg = initial_configuration(p, DetectParams(10, 1, 1))
        tr = run(SimParams(p, cfg, seed=1, t_max=1050, record_every=100))
        assert tr.times.tolist() == list(range(0, 1100, 100))
        # final state reflects all 1050 steps even though 1050 is unrecorded
        assert tr.final.n == 10


class TestRunBatch:
    def test_single_run_equals_trajectory(self):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(30, 1, 2))
        params = SimParams(p, cfg, seed=5, t_max=2000, record_every=200)
        batch = run_batch(params, 1)
        tr = run(params)
        assert np.allclose(batch.mean_fractions, tr.fractions())
        assert np.allclose(batch.mean_detect, tr.detect_fractions())
        assert np.allclose(batch.var_detect, 0)

    def test_batch_deterministic_across_calls(self):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(30, 0, 2))
        params = SimParams(p, cfg, LeakModel.worst_false_positive(0.4), seed=9, t_max=3000, record_every=300)
        a = run_batch(params, 6)
        b = run_batch(params, 6)
        assert np.array_equal(a.mean_fractions, b.mean_fractions)
        assert np.array_equal(a.var_detect, b.var_detect)

    def test_runs_use_distinct_streams(self):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(30, 1, 2))
        params = SimParams(p, cfg, seed=5, t_max=1000, record_every=100)
        batch = run_batch(params, 4)
        assert (batch.var_detect[1:] > 0).any()


class TestSetDCount:
    def test_remove_all(self):
        p = build_robust_detect(14)
        cfg = _counts(p, D=1, N=9999)
        assert set_d_count(cfg, p, 0) == _counts(p, N=10_000)

    def test_add_one(self):
        p = build_robust_detect(14)
        cfg = _counts(p, N=10_000)
        assert set_d_count(cfg, p, 1) == _counts(p, D=1, N=9999)

    def test_add_consumes_neutral_then_lowest_levels(self):
        p = build_robust_detect(3)
        cfg = _counts(p, N=2, X1=3, X2=4)
        out = set_d_count(cfg, p, 6)
        assert out == _counts(p, D=6, X1=0, X2=3)

    def test_insufficient_molecules(self):
        p = build_robust_detect(2)
        cfg = _counts(p, N=3)
        with pytest.raises(ValueError):
            set_d_count(cfg, p, 4)


class TestSampleOutput:
    def test_all_neutral_is_nondetect(self, rng):
        p = build_robust_detect(2)
        cfg = _counts(p, N=50)
        verdict, (d, nd) = sample_output(cfg, p, 7, rng)
        assert verdict is Output.NONDETECT
        assert (d, nd) == (0, 7)

    def test_all_detect_is_detect(self, rng):
        p = build_robust_detect(2)
        cfg = _counts(p, D=2, X1=3)
        verdict, (d, nd) = sample_output(cfg, p, 9, rng)
        assert verdict is Output.DETECT
        assert (d, nd) == (9, 0)

    def test_single_sample_probability(self):
        # m=1 on a half-detect configuration: detect frequency ~ 1/2
        p = build_robust_detect(2)
        cfg = _counts(p, X1=5, N=5)
        g = np.random.default_rng(0)
        hits = sum(sample_output(cfg, p, 1, g)[0] is Output.DETECT for _ in range(4000))
        assert abs(hits / 4000 - 0.5) < 0.03

    def test_tie_breaks_toward_nondetect(self):
        assert majority_output(1, 2) is Output.NONDETECT
        assert majority_output(2, 4) is Output.NONDETECT
        assert majority_output(3, 4) is Output.DETECT
        assert majority_output(0, 1) is Output.NONDETECT


class TestExecutionModesAgree:
    def test_occupancy_distributions_match(self):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(18, 1, 2))
        leak = LeakModel.worst_false_positive(0.5)
        params = SimParams(p, cfg, leak, seed=21, t_max=400_000)
        occ_counts = empirical_occupancy(params, burn_in=40_000)
        occ_indiv = individual_occupancy(p, cfg, leak, t_max=400_000, burn_in=40_000, seed=22)
        assert total_variation(occ_counts, occ_indiv) < 0.05


class TestCoupledMinTriple:
    def test_min_relation_holds_on_ideal_chain(self):
        p = build_truncated_ideal(6)
        g = np.random.default_rng(4)
        v = g.integers(0, 8, size=60)
        w = g.integers(0, 8, size=60)
        res = run_coupled_min_triple(p, v, w, t_max=30_000, seed=17)
        assert res.ok, f"min-coupling violated at t={res.violation_t}"

    def test_min_relation_fails_on_leveled_protocol(self):
        # the leveled protocol's null (Xi, Xs) pairs break the coupling,
        # which is why the coupled experiments run on the ideal chain
        p = build_robust_detect(6)
        g = np.random.default_rng(4)
        violated = False
        for seed in range(5):
            v = g.integers(0, 8, size=60)
            w = g.integers(0, 8, size=60)
            if not run_coupled_min_triple(p, v, w, t_max=30_000, seed=seed).ok:
                violated = True
                break
        assert violated


class TestExports:
    def test_trajectory_csv_schema(self, tmp_path):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(20, 1, 2))
        tr = run(SimParams(p, cfg, seed=2, t_max=100, record_every=50))
        path = tmp_path / "tr.csv"
        tr.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,parallel_time,D,X1,X2,N,detect_fraction"
        assert len(lines) == 1 + 3
        first = lines[1].split(",")
        assert first[0] == "0" and first[2] == "1"

    def test_trajectory_json_mirrors_csv(self, tmp_path):
        p = build_robust_detect(2)
        cfg = initial_configuration(p, DetectParams(20, 1, 2))
        tr = run(SimParams(p, cfg, seed=2, t_max=100, record_every=50))
        path = tmp_path / "tr.json"
        tr.to_json(path)
        doc = json.loads(path.read_text())
        assert doc["params"]["n"] == 20
        assert [s["t"] for s in doc["snapshots"]] == [0, 50, 100]
        assert set(doc["snapshots"][0]["counts"]) == {"D", "X1", "X2", "N"}
