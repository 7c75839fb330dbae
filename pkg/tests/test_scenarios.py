import itertools
import math
import random
from types import SimpleNamespace

import pytest

from chipforge.perfmodel import (
    default_memory_menu,
    enumerate_candidates,
    partition,
    scaled_chiplet,
)
from chipforge.scenarios import (
    ConstraintCheck,
    Scenario,
    ScenarioGraph,
    SpecDecodeConfig,
    SpecDecodeError,
    _boundary_violation,
    bernoulli_chain_tokens,
    build_scenario,
    check_constraints,
    design_energy,
    design_latency,
    empirical_tar,
    iteration_sim,
    nonuniform_batch_search,
    spec_decode_eval,
)
from chipforge.stagesolver import (
    NoFeasibleDesign,
    StageOption,
    cht_search,
    option_from_candidate,
)
from chipforge.workload import load_bundled


def fake_design(period, payload_batches=(1,), e_dyn=1.0, p_static=0.0):
    stages = tuple(
        StageOption(
            key=(i, 0),
            t_cmp=period,
            e_dyn=e_dyn,
            p_static=p_static,
            payload=SimpleNamespace(batch=b),
        )
        for i, b in enumerate(payload_batches)
    )
    return SimpleNamespace(period=period, stages=stages)


class TestBuildScenario:
    def test_chatbot_defaults(self):
        s = build_scenario("chatbot")
        assert s.graph("prefill").limit == 2.5
        assert s.graph("prefill").latency_mode == "e2e"
        assert s.graph("decode").limit == 0.15
        assert s.graph("decode").latency_mode == "period"
        assert s.batches == (1, 2, 4, 8)

    def test_summarization_relaxes_ttft_only(self):
        s = build_scenario("summarization")
        assert s.graph("prefill").limit == 15.0
        assert s.graph("decode").limit == 0.15

    def test_spec_decode_graphs_and_config(self):
        s = build_scenario("spec-decode")
        assert s.spec_decode == SpecDecodeConfig(k=5, tar=5.6, speedup_cap=2.0)
        assert s.graph("draft").limit == 0.15
        assert s.graph("target").limit is None

    def test_av_deadlines(self):
        s = build_scenario("av-perception", {"deadline": 0.010})
        assert s.graph("vision").limit == 0.010
        assert s.batches == (1,)
        with pytest.raises(ValueError):
            build_scenario("av-perception", {"deadline": 0.020})

    def test_k_floor(self):
        with pytest.raises(ValueError):
            SpecDecodeConfig(k=4)

    def test_overrides(self):
        s = build_scenario("chatbot", {"ttft": 1e-6, "tpot": 0.05})
        assert s.graph("prefill").limit == 1e-6
        assert s.graph("decode").limit == 0.05


class TestConstraints:
    def test_e2e_slack(self):
        s = build_scenario("chatbot")
        d = fake_design(0.25, payload_batches=(1,) * 10)
        report = check_constraints({"prefill": d}, s)
        (check,) = report.checks
        assert check.kind == "ttft"
        assert check.actual == pytest.approx(2.5)
        assert check.ok and check.slack == pytest.approx(0.0)

    def test_inclusive_bound_on_period(self):
        s = build_scenario("chatbot")
        ok = check_constraints({"decode": fake_design(0.15)}, s)
        bad = check_constraints({"decode": fake_design(0.150001)}, s)
        assert ok.passed
        assert not bad.passed and bad.violations[0].kind == "tpot"

    def test_regroup_lengthens_e2e(self):
        plain = fake_design(0.1, payload_batches=(1, 1))
        mixed = fake_design(0.1, payload_batches=(1, 8))
        assert design_latency(plain, "e2e") == pytest.approx(0.2)
        assert design_latency(mixed, "e2e") == pytest.approx(0.5)  # +3 periods
        assert design_latency(mixed, "period") == pytest.approx(0.1)

    def test_single_design_applies_everywhere(self):
        s = build_scenario("summarization")
        report = check_constraints(fake_design(0.01, payload_batches=(1,) * 3), s)
        assert len(report.checks) == 2 and report.passed


class TestNonuniformBatching:
    POOL = [scaled_chiplet("WS", 2, 4)]

    def scenario(self):
        toy = load_bundled("toy_decode")
        return build_scenario(
            "chatbot", {"graphs": {"decode": toy, "prefill": toy}, "tpot": 10.0}
        )

    def exhaustive_oracle(self, scenario):
        """Best boundary-feasible per-stage batch assignment."""
        decode = scenario.graph("decode")
        groups = partition(decode.graph, tuple(range(len(decode.graph.nodes) - 1)))
        window = max(scenario.batches)
        per_stage = []
        for grp in groups:
            by_batch = {}
            for b in scenario.batches:
                cands = enumerate_candidates(
                    grp, self.POOL, default_memory_menu(), (b,), (1, 2), None, None
                )
                by_batch[b] = [option_from_candidate(c, window) for c in cands]
            per_stage.append(by_batch)
        best = math.inf
        for combo in itertools.product(scenario.batches, repeat=len(groups)):
            opts = [per_stage[i][b] for i, b in enumerate(combo)]
            if any(not o for o in opts):
                continue
            try:
                design = cht_search(opts, "energy", decode.limit)
            except NoFeasibleDesign:
                continue
            if _boundary_violation(design, groups) is None:
                best = min(best, design.objective)
        return best

    def test_containment_and_mixed_shape(self):
        s = self.scenario()
        plan = nonuniform_batch_search(s, self.POOL, "energy")
        assert plan.window == 8
        assert plan.objective <= plan.uniform_objective
        # streaming attention stays at low batch while matmuls batch up
        assert len(set(plan.batches)) > 1 or plan.objective == plan.uniform_objective

    def test_matches_exhaustive_per_stage_oracle(self):
        s = self.scenario()
        plan = nonuniform_batch_search(s, self.POOL, "energy")
        oracle = self.exhaustive_oracle(s)
        assert plan.objective >= oracle * (1 - 1e-12)
        assert plan.objective <= plan.uniform_objective

    def test_tight_tpot_still_feasible_uniform(self):
        toy = load_bundled("toy_chain")
        s = build_scenario(
            "chatbot", {"graphs": {"decode": toy, "prefill": toy}}
        )
        plan = nonuniform_batch_search(s, self.POOL, "energy")
        assert design_latency(plan.design, "period") <= s.graph("decode").limit


class TestSpecDecode:
    def test_fast_draft_hits_the_cap(self):
        draft = fake_design(1e-9, e_dyn=1e-6)
        target = fake_design(0.15, e_dyn=1.0)
        rep = spec_decode_eval(draft, target, SpecDecodeConfig())
        assert rep.raw_speedup == pytest.approx(5.6, rel=1e-6)
        assert rep.speedup == 2.0

    def test_tar_one_cannot_speed_up(self):
        draft = fake_design(0.01)
        target = fake_design(0.15)
        rep = spec_decode_eval(draft, target, SpecDecodeConfig(tar=1.0))
        assert rep.speedup <= 1.0

    def test_slow_draft_rejected(self):
        draft = fake_design(0.05)
        target = fake_design(0.15)  # bound 0.03
        with pytest.raises(SpecDecodeError):
            spec_decode_eval(draft, target, SpecDecodeConfig())

    def test_energy_per_token_ignores_cap(self):
        draft = fake_design(0.01, e_dyn=0.2, p_static=1.0)
        target = fake_design(0.15, e_dyn=3.0, p_static=2.0)
        lo = spec_decode_eval(draft, target, SpecDecodeConfig(speedup_cap=1.1))
        hi = spec_decode_eval(draft, target, SpecDecodeConfig(speedup_cap=50.0))
        assert lo.energy_per_token == hi.energy_per_token
        want = (5 * design_energy(draft) + design_energy(target)) / 5.6
        assert lo.energy_per_token == pytest.approx(want, rel=1e-12)

    def test_iteration_sim_matches_closed_form(self):
        cfg = SpecDecodeConfig(k=6, tar=4.2)
        draft = fake_design(0.012, e_dyn=0.3, p_static=0.5)
        target = fake_design(0.15, e_dyn=2.0, p_static=1.0)
        closed = spec_decode_eval(draft, target, cfg)
        sim = iteration_sim(
            cfg,
            draft.period,
            target.period,
            target.period,
            design_energy(draft),
            design_energy(target),
        )
        assert sim.speedup == pytest.approx(closed.speedup, rel=1e-9)
        assert sim.energy_per_token == pytest.approx(closed.energy_per_token, rel=1e-9)
        assert sim.iteration_time == pytest.approx(closed.iteration_time, rel=1e-9)

    def test_bernoulli_chain(self):
        rng = random.Random(0)
        assert bernoulli_chain_tokens(0.0, 5, rng) == 1
        assert bernoulli_chain_tokens(1.0, 5, rng) == 6
        analytic = 1 + sum(0.8**i for i in range(1, 6))
        assert empirical_tar(0.8, 5, trials=20000) == pytest.approx(analytic, abs=0.05)
