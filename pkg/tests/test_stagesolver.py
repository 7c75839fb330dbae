import math
import random

import pytest

from chipforge.stagesolver import (
    GuardExceeded,
    NoFeasibleDesign,
    SolveCounters,
    StageOption,
    _Hull,
    _segment,
    build_threshold_hulls,
    candidate_latencies,
    cht_search,
    iso_latency_search,
    naive_search,
    query_stage_min,
    stage_value,
)

OBJECTIVES = ("energy", "ec", "edp", "edpc")


def random_instance(rng, max_m=8, max_p=4):
    p = rng.randint(1, max_p)
    options = []
    for s in range(p):
        m = rng.randint(1, max_m)
        opts = []
        for i in range(m):
            opts.append(
                StageOption(
                    key=(s, i),
                    t_cmp=rng.uniform(1e-6, 1e-3),
                    e_dyn=rng.uniform(1e-6, 1e-2),
                    p_static=rng.uniform(0.01, 10.0),
                    cost=rng.uniform(1.0, 500.0),
                )
            )
        options.append(opts)
    return options


class TestEquivalence:
    def test_three_solvers_exactly_equal(self):
        rng = random.Random(11)
        for _ in range(120):
            options = random_instance(rng)
            for objective in OBJECTIVES:
                t_max = None
                if rng.random() < 0.5:
                    t_max = rng.uniform(5e-6, 2e-3)
                try:
                    a = naive_search(options, objective, t_max)
                except NoFeasibleDesign:
                    with pytest.raises(NoFeasibleDesign):
                        iso_latency_search(options, objective, t_max)
                    with pytest.raises(NoFeasibleDesign):
                        cht_search(options, objective, t_max)
                    continue
                b = iso_latency_search(options, objective, t_max)
                c = cht_search(options, objective, t_max)
                assert a.objective == b.objective == c.objective
                assert a.period == b.period == c.period
                assert [o.key for o in a.stages] == [o.key for o in b.stages]
                assert [o.key for o in b.stages] == [o.key for o in c.stages]

    def test_deterministic_tie_break(self):
        # two identical options per stage: the smaller key must win
        opts = [
            [
                StageOption((0, 1), 1e-4, 1e-3, 1.0),
                StageOption((0, 0), 1e-4, 1e-3, 1.0),
            ]
        ]
        for solver in (naive_search, iso_latency_search, cht_search):
            assert solver(opts).stages[0].key == (0, 0)


class TestCounters:
    def test_naive_counts_all_tuples(self):
        rng = random.Random(3)
        options = [random_instance(rng, max_m=4, max_p=1)[0] for _ in range(3)]
        counters = SolveCounters()
        naive_search(options, "energy", counters=counters)
        expected = 1
        for opts in options:
            expected *= len(opts)
        assert counters.tuples == expected

    def test_naive_guard(self):
        rng = random.Random(4)
        options = [random_instance(rng, max_m=8, max_p=1)[0][:8] for _ in range(4)]
        options = [opts * 1 for opts in options]
        with pytest.raises(GuardExceeded):
            naive_search(options, guard=10)

    def test_iso_counts_m_p_q(self):
        rng = random.Random(5)
        options = random_instance(rng, max_m=6, max_p=4)
        counters = SolveCounters()
        iso_latency_search(options, "energy", counters=counters)
        q = len(candidate_latencies(options))
        total_m = sum(len(o) for o in options)
        assert counters.stage_evals == q * total_m


class TestBreakpoints:
    def test_optimum_always_at_a_candidate_latency(self):
        rng = random.Random(7)
        for _ in range(40):
            options = random_instance(rng)
            for objective in OBJECTIVES:
                best = cht_search(options, objective)
                lats = candidate_latencies(options)
                assert best.period in lats
                # dense scan between the extremes never beats the breakpoint
                lo, hi = min(lats), max(lats) * 1.5
                for i in range(400):
                    t = lo + (hi - lo) * i / 399
                    vals = [
                        min(stage_value(o, t, objective) for o in opts)
                        for opts in options
                    ]
                    if any(not math.isfinite(v) for v in vals):
                        continue
                    total = sum(vals)
                    if objective in ("edp", "edpc"):
                        total *= t
                    assert total >= best.objective

    def test_latency_cap_filters_everything(self):
        opts = [[StageOption((0, 0), 1e-3, 1.0, 1.0)]]
        for solver in (naive_search, iso_latency_search, cht_search):
            with pytest.raises(NoFeasibleDesign):
                solver(opts, "energy", t_max=1e-6)

    def test_eq1_shape(self):
        opt = StageOption((0, 0), 1e-4, 2e-3, 0.5)
        assert stage_value(opt, 5e-5, "energy") == math.inf
        at_knee = stage_value(opt, 1e-4, "energy")
        assert at_knee == 2e-3 + 0.5 * 1e-4
        assert stage_value(opt, 2e-4, "energy") > at_knee
        # affine above the knee
        v1 = stage_value(opt, 3e-4, "energy")
        v2 = stage_value(opt, 4e-4, "energy")
        assert v2 - v1 == pytest.approx(0.5 * 1e-4, rel=1e-9)


class TestHull:
    def test_hull_matches_linear_scan(self):
        rng = random.Random(13)
        for _ in range(60):
            opts = random_instance(rng, max_m=8, max_p=1)[0]
            hulls = build_threshold_hulls(opts, "energy")
            for _ in range(20):
                t = rng.uniform(5e-7, 2e-3)
                got_opt, got_val = query_stage_min(hulls, t)
                want = min(
                    ((stage_value(o, t, "energy"), o.key) for o in opts),
                )
                if math.isfinite(want[0]):
                    assert got_val == want[0]
                    assert got_opt.key == want[1]
                else:
                    assert got_opt is None or not math.isfinite(got_val)

    def test_hull_insert_keeps_slopes_decreasing(self):
        rng = random.Random(17)
        hull = _Hull()
        opts = random_instance(rng, max_m=8, max_p=1)[0]
        for o in opts:
            hull.insert(_segment(o, "energy"))
        slopes = [s.slope for s in hull.segments]
        assert slopes == sorted(slopes, reverse=True)
        assert hull.crossings == sorted(hull.crossings)

    def test_cost_scaling_changes_envelope(self):
        cheap = StageOption((0, 0), 1e-4, 1.0, 1.0, cost=1.0)
        costly = StageOption((0, 1), 1e-4, 0.9, 0.9, cost=100.0)
        t = 1e-3
        assert cht_search([[cheap, costly]], "energy").stages[0].key == (0, 1)
        assert cht_search([[cheap, costly]], "ec").stages[0].key == (0, 0)
