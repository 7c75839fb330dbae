"""Latency-constrained serving scenarios.

Four built-in case studies drive the constrained searches: interactive
chat and long-form summarization (TTFT on the prefill pipeline, TPOT on
the decode pipeline), speculative decoding (a latency-critical draft
pipeline feeding a throughput-oriented verifier), and autonomous-vehicle
perception (hard end-to-end deadlines at batch 1).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from . import workload
from .fusion import regroup_extra_periods
from .perfmodel import default_memory_menu, enumerate_candidates, partition
from .stagesolver import (
    NoFeasibleDesign,
    cht_search,
    option_from_candidate,
    stage_value,
)

SCENARIO_KINDS = ("chatbot", "summarization", "spec-decode", "av-perception")
DEFAULT_BATCHES = (1, 2, 4, 8)


class SpecDecodeError(RuntimeError):
    """The draft pipeline is too slow to keep the verifier fed."""


@dataclass(frozen=True)
class SpecDecodeConfig:
    k: int = 5
    tar: float = 5.6  # expected accepted tokens (incl. bonus) per iteration
    speedup_cap: float = 2.0

    def __post_init__(self):
        if self.k < 5:
            raise ValueError("k must be >= 5")
        if self.tar <= 0 or self.speedup_cap <= 0:
            raise ValueError("tar and speedup_cap must be positive")


@dataclass(frozen=True)
class ScenarioGraph:
    """One pipeline of a scenario plus the latency bound it must meet."""

    name: str
    graph: object  # workload.OperatorGraph
    latency_mode: str  # "e2e" (P*T) or "period" (T)
    limit: float | None = None  # seconds; None = unconstrained
    limit_kind: str | None = None  # "ttft", "tpot", or "e2e"

    def __post_init__(self):
        if self.latency_mode not in ("e2e", "period"):
            raise ValueError(f"unknown latency mode {self.latency_mode!r}")
        if self.limit is not None and self.limit <= 0:
            raise ValueError("latency limits must be positive")


@dataclass(frozen=True)
class Scenario:
    kind: str
    graphs: tuple[ScenarioGraph, ...]
    batches: tuple[int, ...] = DEFAULT_BATCHES
    spec_decode: SpecDecodeConfig | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.graphs:
            raise ValueError("scenario needs at least one graph")

    def graph(self, name: str) -> ScenarioGraph:
        for g in self.graphs:
            if g.name == name:
                return g
        raise KeyError(name)


# (role, bundled graph, latency mode, limit kind)
_LLM_GRAPHS = (
    ("prefill", "opt66b_prefill", "e2e", "ttft"),
    ("decode", "opt66b_decode", "period", "tpot"),
)
_SD_GRAPHS = (
    ("draft", "opt1p3b_decode", "period", "tpot"),
    ("target", "opt66b_decode", "period", None),
)


def build_scenario(kind: str, params: dict | None = None) -> Scenario:
    """Built-in scenarios by name; `params` may override the graphs
    (`graphs`: role -> OperatorGraph), the AV `deadline`, the batch menu,
    and the speculative-decoding knobs (`k`, `tar`, `speedup_cap`)."""
    params = dict(params or {})
    supplied = params.pop("graphs", {})
    batches = tuple(params.pop("batches", DEFAULT_BATCHES))

    def pick(role, default_name):
        if role in supplied:
            return supplied[role]
        return workload.load_bundled(default_name)

    if kind in ("chatbot", "summarization"):
        ttft = float(params.pop("ttft", 2.5 if kind == "chatbot" else 15.0))
        tpot = float(params.pop("tpot", 0.15))
        limits = {"ttft": ttft, "tpot": tpot}
        graphs = tuple(
            ScenarioGraph(role, pick(role, name), mode, limits[lk], lk)
            for role, name, mode, lk in _LLM_GRAPHS
        )
        return Scenario(kind, graphs, batches)
    if kind == "av-perception":
        deadline = float(params.pop("deadline", 0.033))
        if deadline not in (0.010, 0.033):
            raise ValueError("av-perception deadline must be 0.010 or 0.033 s")
        backbone = params.pop("backbone", "vit")
        graph = supplied.get("vision", None) or workload.load_bundled(backbone)
        sg = ScenarioGraph("vision", graph, "e2e", deadline, "e2e")
        return Scenario(kind, (sg,), batches=(1,))
    if kind == "spec-decode":
        cfg = SpecDecodeConfig(
            k=int(params.pop("k", 5)),
            tar=float(params.pop("tar", 5.6)),
            speedup_cap=float(params.pop("speedup_cap", 2.0)),
        )
        tpot = float(params.pop("tpot", 0.15))
        graphs = tuple(
            ScenarioGraph(role, pick(role, name), mode, tpot if lk else None, lk)
            for role, name, mode, lk in _SD_GRAPHS
        )
        return Scenario(kind, graphs, batches, spec_decode=cfg)
    raise ValueError(f"unknown scenario kind {kind!r}")


# ---------------------------------------------------------------------------
# constraint checking


def design_latency(design, latency_mode: str) -> float:
    """Pipeline period, or end-to-end latency of one input: one period per
    stage plus the re-accumulation periods where the stage batch changes."""
    if latency_mode == "period":
        return design.period
    batches = tuple(getattr(s.payload, "batch", 1) or 1 for s in design.stages)
    periods = len(design.stages) + regroup_extra_periods(batches)
    return periods * design.period


@dataclass(frozen=True)
class ConstraintCheck:
    graph: str
    kind: str  # ttft / tpot / e2e
    limit: float
    actual: float
    ok: bool

    @property
    def slack(self) -> float:
        return self.limit - self.actual


@dataclass(frozen=True)
class ConstraintReport:
    checks: tuple[ConstraintCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def violations(self) -> tuple[ConstraintCheck, ...]:
        return tuple(c for c in self.checks if not c.ok)


def check_constraints(designs, scenario: Scenario) -> ConstraintReport:
    """Verdict plus per-constraint slack; bounds are inclusive.  `designs`
    is either one design (applied to every graph) or a mapping from graph
    name to design; graphs with no design or no limit are skipped."""
    if not isinstance(designs, dict):
        designs = {g.name: designs for g in scenario.graphs}
    checks = []
    for sg in scenario.graphs:
        design = designs.get(sg.name)
        if design is None or sg.limit is None:
            continue
        actual = design_latency(design, sg.latency_mode)
        checks.append(
            ConstraintCheck(sg.name, sg.limit_kind, sg.limit, actual, actual <= sg.limit)
        )
    return ConstraintReport(tuple(checks))


# ---------------------------------------------------------------------------
# non-uniform operator-level batching


@dataclass
class BatchPlan:
    design: object  # stagesolver.AcceleratorDesign
    batches: tuple[int, ...]  # per stage
    tps: tuple[int, ...]
    window: int
    uniform_batch: int
    uniform_objective: float

    @property
    def objective(self) -> float:
        return self.design.objective


def _boundary_violation(design, groups):
    """First double-buffer boundary whose re-accumulated tensor overflows
    the consumer's GLB half, or None.  The boundary buffer holds the
    producer's per-sample boundary tensor times the worse of the two
    batch ratios."""
    for i in range(len(design.stages) - 1):
        a, b = design.stages[i].payload, design.stages[i + 1].payload
        ratio = max(a.batch, b.batch) // min(a.batch, b.batch)
        if groups[i].output_bytes * ratio > b.chiplet.glb_bytes // 2:
            return i
    return None


def nonuniform_batch_search(
    scenario: Scenario,
    pool,
    objective: str = "energy",
    memories=None,
    cuts: tuple[int, ...] | None = None,
    tps: tuple[int, ...] = (1, 2),
    affinity_table: dict | None = None,
    chiplet_cost_fn=None,
) -> BatchPlan:
    """Joint per-stage batch/memory/TP selection on the scenario's decode
    pipeline, normalized to a common window so mixed-batch plans remain
    exactly comparable; never worse than the best uniform-batch plan."""
    decode = next((g for g in scenario.graphs if g.latency_mode == "period"), None)
    if decode is None:
        raise ValueError("scenario has no decode-mode graph")
    graph = decode.graph
    memories = list(memories) if memories is not None else default_memory_menu()
    chiplets = list(getattr(pool, "members", pool))
    menu = scenario.batches
    window = max(menu)
    if any(window % b for b in menu):
        raise ValueError("every batch must divide the largest batch")

    n = len(graph.nodes)
    group_cuts = tuple(range(n - 1)) if cuts is None else tuple(cuts)
    groups = partition(graph, group_cuts)

    def stage_options(allowed_batches):
        options = []
        for grp in groups:
            cands = enumerate_candidates(
                grp,
                chiplets,
                memories=memories,
                batches=allowed_batches,
                tps=tps,
                affinity_table=affinity_table,
                chiplet_cost_fn=chiplet_cost_fn,
            )
            options.append([option_from_candidate(c, window) for c in cands])
        return options

    t_max = decode.limit
    full_options = stage_options(menu)

    best_uniform = None  # (objective, batch, design)
    for b in menu:
        opts = [[o for o in so if o.payload.batch == b] for so in full_options]
        if any(not o for o in opts):
            continue
        try:
            design = cht_search(opts, objective, t_max)
        except NoFeasibleDesign:
            continue
        key = (design.objective, b)
        if best_uniform is None or key < (best_uniform[0], best_uniform[1]):
            best_uniform = (design.objective, b, design)
    if best_uniform is None:
        raise NoFeasibleDesign("no uniform batch satisfies the scenario constraints")

    # Joint search over the full per-stage batch menu; plans whose batch
    # boundaries overflow the consumer GLB fall back toward uniformity.
    allowed = [set(menu) for _ in groups]
    chosen = None
    for _ in range(len(groups) * len(menu)):
        opts = [
            [o for o in so if o.payload.batch in allowed[i]]
            for i, so in enumerate(full_options)
        ]
        if any(not o for o in opts):
            break
        try:
            design = cht_search(opts, objective, t_max)
        except NoFeasibleDesign:
            break
        bad = _boundary_violation(design, groups)
        if bad is None:
            chosen = design
            break
        i, j = bad, bad + 1
        bi = design.stages[i].payload.batch
        bj = design.stages[j].payload.batch
        big = i if bi > bj else j
        if len(allowed[big]) <= 1:
            break
        allowed[big].discard(max(bi, bj))

    if chosen is None or chosen.objective > best_uniform[0]:
        chosen = best_uniform[2]

    return BatchPlan(
        design=chosen,
        batches=tuple(s.payload.batch for s in chosen.stages),
        tps=tuple(s.payload.tp for s in chosen.stages),
        window=window,
        uniform_batch=best_uniform[1],
        uniform_objective=best_uniform[0],
    )


# ---------------------------------------------------------------------------
# speculative decoding


@dataclass(frozen=True)
class SpecDecodeReport:
    iteration_time: float
    tokens_per_iteration: float
    raw_speedup: float
    speedup: float  # capped
    energy_per_token: float


def design_energy(design) -> float:
    """Energy of one pipeline period (all stages, static power included)."""
    return sum(stage_value(s, design.period, "energy") for s in design.stages)


def spec_decode_eval(
    draft_design,
    target_design,
    cfg: SpecDecodeConfig,
    scenario: Scenario | None = None,
    t_target_per_token: float | None = None,
    t_verify: float | None = None,
) -> SpecDecodeReport:
    """Throughput speedup over plain decoding and energy per emitted token.

    Each iteration drafts k tokens back-to-back and verifies them in one
    batched target pass; the verifier pass and the per-token baseline both
    default to the target design's pipeline period.
    """
    t_draft = draft_design.period
    t_target = t_target_per_token if t_target_per_token is not None else target_design.period
    t_ver = t_verify if t_verify is not None else t_target
    if t_draft > t_target / cfg.k:
        raise SpecDecodeError(
            f"draft period {t_draft:.3e} exceeds the draft-rate bound "
            f"{t_target / cfg.k:.3e}"
        )
    iteration_time = cfg.k * t_draft + t_ver
    tokens = min(cfg.tar, cfg.k + 1.0)
    raw = tokens * t_target / iteration_time
    e_draft = design_energy(draft_design)
    e_verify = design_energy(target_design)
    return SpecDecodeReport(
        iteration_time=iteration_time,
        tokens_per_iteration=tokens,
        raw_speedup=raw,
        speedup=min(raw, cfg.speedup_cap),
        energy_per_token=(cfg.k * e_draft + e_verify) / tokens,
    )


def iteration_sim(
    cfg: SpecDecodeConfig,
    t_draft: float,
    t_verify: float,
    t_target_per_token: float,
    e_draft: float,
    e_verify: float,
    iterations: int = 256,
) -> SpecDecodeReport:
    """Step-by-step iteration accumulator used to cross-check the closed
    form: walks `iterations` draft/verify rounds and derives rates from
    the running totals."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    time = tokens = energy = 0.0
    for _ in range(iterations):
        time += cfg.k * t_draft + t_verify
        tokens += min(cfg.tar, cfg.k + 1.0)
        energy += cfg.k * e_draft + e_verify
    baseline = tokens * t_target_per_token
    raw = baseline / time
    return SpecDecodeReport(
        iteration_time=time / iterations,
        tokens_per_iteration=tokens / iterations,
        raw_speedup=raw,
        speedup=min(raw, cfg.speedup_cap),
        energy_per_token=energy / tokens,
    )


def bernoulli_chain_tokens(p: float, k: int, rng: random.Random) -> int:
    """Tokens emitted by one iteration when each draft token is accepted
    independently with probability p: the run of acceptances before the
    first rejection (at most k) plus the bonus token."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    accepted = 0
    while accepted < k and rng.random() < p:
        accepted += 1
    return accepted + 1


def empirical_tar(p: float, k: int, trials: int = 10000, seed: int = 0) -> float:
    """Monte-Carlo mean tokens/iteration under the Bernoulli-chain model;
    sensitivity companion to the scalar TAR used in reports."""
    rng = random.Random(seed)
    return sum(bernoulli_chain_tokens(p, k, rng) for _ in range(trials)) / trials
