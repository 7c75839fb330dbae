"""Evolutionary search over tensor-fusion groupings and per-group memory
type / batch assignments.

A genome is a cut set over the stored topological order (groups are the
contiguous runs between cuts) plus one memory-menu index and one batch
per group.  Fitness delegates to the exact stage solver.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from . import perfmodel
from .perfmodel import (
    FusionGroup,
    InfeasibleCandidate,
    enumerate_candidates,
    partition,
)
from .stagesolver import (
    NoFeasibleDesign,
    cht_search,
    option_from_candidate,
)
from .workload import OperatorGraph, operator_footprint


class InfeasibleWorkload(RuntimeError):
    """Some operator cannot be mapped on any pool/memory point."""


@dataclass(frozen=True)
class FusionGenome:
    cuts: tuple[int, ...]  # boundary positions over the node order
    memory_idx: tuple[int, ...]  # per group
    batch: tuple[int, ...]  # per group

    def __post_init__(self):
        n_groups = len(self.cuts) + 1
        if len(self.memory_idx) != n_groups or len(self.batch) != n_groups:
            raise ValueError("per-group gene lengths must match the cut set")
        if list(self.cuts) != sorted(set(self.cuts)):
            raise ValueError("cuts must be sorted and distinct")


@dataclass(frozen=True)
class GAParams:
    population: int = 10
    generations: int = 10
    mutation_rate: float = 0.2
    crossover_rate: float = 0.8
    elitism: int = 1


@dataclass
class SearchContext:
    """Everything a fitness evaluation needs besides the genome."""

    graph: OperatorGraph
    pool: object  # ChipletPool or list of ChipletConfig
    memories: list
    objective: str = "energy"
    t_max: float | None = None
    # scenario latency cap: "period" caps T directly, "e2e" caps P*T plus
    # the re-accumulation periods charged at batch-ratio boundaries
    latency_cap: float | None = None
    latency_mode: str = "period"
    batches: tuple[int, ...] = (1,)
    tps: tuple[int, ...] = (1, 2)
    affinity_table: dict | None = None
    chiplet_cost_fn: object = None

    def __post_init__(self):
        if self.memories is None:
            self.memories = perfmodel.default_memory_menu()
        w = max(self.batches)
        if any(w % b for b in self.batches):
            raise ValueError("every batch must divide the largest batch")

    @property
    def chiplets(self):
        members = getattr(self.pool, "members", self.pool)
        return list(members)

    @property
    def window(self) -> int:
        """Samples per pipeline window; stage options are normalized to it
        so plans with mixed per-stage batches stay comparable."""
        return max(self.batches)


def _span_stats(graph: OperatorGraph, lo: int, hi: int):
    """(max internal edge bytes, weight bytes, stream bytes) of nodes[lo:hi]."""
    index = {n.id: i for i, n in enumerate(graph.nodes)}
    tile = 0
    for e in graph.edges:
        si, di = index[e.src], index[e.dst]
        if lo <= si < hi and lo <= di < hi:
            tile = max(tile, e.bytes)
    weights = sum(
        operator_footprint(n, 1).weight_bytes for n in graph.nodes[lo:hi]
    )
    stream = sum(n.stream_bytes for n in graph.nodes[lo:hi])
    return tile, weights, stream


def _span_feasible(ctx: SearchContext, lo: int, hi: int, mem, batch: int) -> bool:
    tile, weights, stream = _span_stats(ctx.graph, lo, hi)
    max_glb = max(c.glb_bytes for c in ctx.chiplets)
    return tile <= max_glb // 2 and weights + batch * stream <= mem.capacity


def legalize_genome(genome: FusionGenome, ctx: SearchContext) -> FusionGenome:
    """Insert the minimal extra cuts (leftmost-first) so every group passes
    the buffer and capacity gates; single infeasible nodes may upgrade
    their memory choice, and a node infeasible everywhere is an error."""
    n = len(ctx.graph.nodes)
    bounds = [0] + [c + 1 for c in genome.cuts] + [n]
    new_cuts: list[int] = []
    new_mem: list[int] = []
    new_batch: list[int] = []
    for g in range(len(bounds) - 1):
        glo, ghi = bounds[g], bounds[g + 1]
        mem_i, batch = genome.memory_idx[g], genome.batch[g]
        lo = glo
        while lo < ghi:
            hi = lo + 1
            while hi < ghi and _span_feasible(ctx, lo, hi + 1, ctx.memories[mem_i], batch):
                hi += 1
            span_mem = mem_i
            if not _span_feasible(ctx, lo, hi, ctx.memories[span_mem], batch):
                # single node too large for the chosen memory: first menu
                # entry that fits wins
                for j, m in enumerate(ctx.memories):
                    if _span_feasible(ctx, lo, hi, m, batch):
                        span_mem = j
                        break
                else:
                    raise InfeasibleWorkload(
                        f"node {ctx.graph.nodes[lo].id} fits no pool/memory point"
                    )
            new_mem.append(span_mem)
            new_batch.append(batch)
            if hi < n:
                new_cuts.append(hi - 1)
            lo = hi
    if new_cuts and new_cuts[-1] == n - 1:
        new_cuts.pop()
    return FusionGenome(tuple(new_cuts), tuple(new_mem), tuple(new_batch))


def seed_memory_choice(ctx: SearchContext, lo: int, hi: int, batch: int) -> int:
    """Cheapest memory keeping the span compute-bound on the pool's highest
    peak chiplet; falls back to the fastest memory."""
    ref = max(ctx.chiplets, key=lambda c: (c.peak_flops, c.id))
    groups = partition(ctx.graph, tuple(range(0, lo)) + tuple(range(hi - 1, len(ctx.graph.nodes) - 1)))
    # locate the group covering [lo, hi)
    span_group = None
    seen = 0
    for grp in groups:
        if seen == lo and len(grp.nodes) == hi - lo:
            span_group = grp
        seen += len(grp.nodes)
    assert span_group is not None
    order = sorted(
        range(len(ctx.memories)), key=lambda i: ctx.memories[i].dollar_cost
    )
    fastest = max(
        range(len(ctx.memories)), key=lambda i: ctx.memories[i].bandwidth
    )
    for i in order:
        mem = ctx.memories[i]
        if not _span_feasible(ctx, lo, hi, mem, batch):
            continue
        try:
            cand = perfmodel.candidate_eval(
                span_group, ref, mem, batch, 1, ctx.affinity_table, ctx.chiplet_cost_fn
            )
        except InfeasibleCandidate:
            continue
        if cand.memory_time <= cand.compute_time:
            return i
    return fastest


def _group_bounds(genome: FusionGenome, n: int):
    bounds = [0] + [c + 1 for c in genome.cuts] + [n]
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def _with_seed_memories(genome: FusionGenome, ctx: SearchContext) -> FusionGenome:
    mems = tuple(
        seed_memory_choice(ctx, lo, hi, b)
        for (lo, hi), b in zip(_group_bounds(genome, len(ctx.graph.nodes)), genome.batch)
    )
    return replace(genome, memory_idx=mems)


def seed_population(ctx: SearchContext, params: GAParams, rng: random.Random) -> list[FusionGenome]:
    """Deterministic roofline-guided seeds plus random fill.

    Seeds: (a) no fusion, (b) maximal legal fusion, (c) early-layer
    fusion (longest legal prefix fused, rest unfused); each with the
    cheapest memory that keeps its groups compute-bound.
    """
    if params.population < 3:
        raise ValueError("population must be >= 3")
    n = len(ctx.graph.nodes)
    batch = max(ctx.batches)

    def make(cuts):
        g = FusionGenome(
            tuple(cuts),
            tuple(0 for _ in range(len(cuts) + 1)),
            tuple(batch for _ in range(len(cuts) + 1)),
        )
        g = legalize_genome(g, ctx)
        return legalize_genome(_with_seed_memories(g, ctx), ctx)

    no_fusion = make(range(n - 1))
    max_fusion = make(())
    # longest feasible prefix under the seed memory rule
    prefix = 1
    while prefix < n and _span_feasible(
        ctx, 0, prefix + 1, ctx.memories[seed_memory_choice(ctx, 0, prefix + 1, batch)], batch
    ):
        prefix += 1
    early = make(range(prefix - 1, n - 1)) if prefix < n else max_fusion
    seeds = [no_fusion, max_fusion, early]
    while len(seeds) < params.population:
        cuts = tuple(i for i in range(n - 1) if rng.random() < 0.5)
        mems = tuple(rng.randrange(len(ctx.memories)) for _ in range(len(cuts) + 1))
        bats = tuple(rng.choice(ctx.batches) for _ in range(len(cuts) + 1))
        seeds.append(legalize_genome(FusionGenome(cuts, mems, bats), ctx))
    return seeds


def stage_options_for(genome: FusionGenome, ctx: SearchContext):
    """Per-group candidate option lists normalized to the search window."""
    groups = partition(ctx.graph, genome.cuts)
    window = ctx.window
    options = []
    for g, grp in enumerate(groups):
        mem = ctx.memories[genome.memory_idx[g]]
        cands = enumerate_candidates(
            grp,
            ctx.chiplets,
            memories=[mem],
            batches=(genome.batch[g],),
            tps=ctx.tps,
            affinity_table=ctx.affinity_table,
            chiplet_cost_fn=ctx.chiplet_cost_fn,
        )
        options.append([option_from_candidate(c, window) for c in cands])
    return options


def regroup_extra_periods(batch: tuple[int, ...]) -> int:
    """Extra pipeline periods charged where adjacent groups change batch
    size: one re-accumulation period per doubling (or halving) step."""
    extra = 0
    for a, b in zip(batch, batch[1:]):
        hi, lo = max(a, b), min(a, b)
        if hi > lo:
            extra += math.ceil(math.log2(hi / lo))
    return extra


def effective_t_max(genome: FusionGenome, ctx: SearchContext) -> float | None:
    """Combine the raw period bound with the scenario latency cap."""
    t = ctx.t_max
    if ctx.latency_cap is not None:
        if ctx.latency_mode == "period":
            cap = ctx.latency_cap
        elif ctx.latency_mode == "e2e":
            periods = len(genome.cuts) + 1 + regroup_extra_periods(genome.batch)
            cap = ctx.latency_cap / periods
        else:
            raise ValueError(f"unknown latency mode {ctx.latency_mode!r}")
        t = cap if t is None else min(t, cap)
    return t


def evaluate_genome(genome: FusionGenome, ctx: SearchContext):
    """(objective value, design) for one genome; inf when unsolvable."""
    # every evaluated genome must be structurally legal and gate-feasible
    assert legalize_genome(genome, ctx) == genome, "evaluating illegal genome"
    options = stage_options_for(genome, ctx)
    if any(not opts for opts in options):
        return math.inf, None
    try:
        design = cht_search(options, ctx.objective, effective_t_max(genome, ctx))
    except NoFeasibleDesign:
        return math.inf, None
    return design.objective, design


def _crossover(a: FusionGenome, b: FusionGenome, n: int, rng: random.Random) -> FusionGenome:
    """One-point crossover over cut positions; group genes follow the
    parent that contributed the group's first node."""
    if n < 2:
        return a
    p = rng.randrange(1, n)
    cuts = tuple(sorted({c for c in a.cuts if c < p} | {c for c in b.cuts if c >= p}))

    def parent_gene(parent: FusionGenome, pos: int):
        for g, (lo, hi) in enumerate(_group_bounds(parent, n)):
            if lo <= pos < hi:
                return parent.memory_idx[g], parent.batch[g]
        raise AssertionError

    mems, bats = [], []
    bounds = [0] + [c + 1 for c in cuts] + [n]
    for i in range(len(bounds) - 1):
        lo = bounds[i]
        m, bt = parent_gene(a if lo < p else b, lo)
        mems.append(m)
        bats.append(bt)
    return FusionGenome(cuts, tuple(mems), tuple(bats))


def _mutate(genome: FusionGenome, ctx: SearchContext, rng: random.Random) -> FusionGenome:
    n = len(ctx.graph.nodes)
    n_groups = len(genome.cuts) + 1
    move = rng.choice(["cut", "memory", "batch"]) if n > 1 else rng.choice(["memory", "batch"])
    if move == "cut":
        pos = rng.randrange(n - 1)
        cuts = set(genome.cuts)
        if pos in cuts:
            cuts.remove(pos)
        else:
            cuts.add(pos)
        cuts = tuple(sorted(cuts))
        # remap group genes onto the new grouping by first-node ownership
        mems, bats = [], []
        bounds = [0] + [c + 1 for c in cuts] + [n]
        for i in range(len(bounds) - 1):
            for g, (lo, hi) in enumerate(_group_bounds(genome, n)):
                if lo <= bounds[i] < hi:
                    mems.append(genome.memory_idx[g])
                    bats.append(genome.batch[g])
                    break
        return FusionGenome(cuts, tuple(mems), tuple(bats))
    g = rng.randrange(n_groups)
    if move == "memory":
        mems = list(genome.memory_idx)
        mems[g] = rng.randrange(len(ctx.memories))
        return replace(genome, memory_idx=tuple(mems))
    bats = list(genome.batch)
    bats[g] = rng.choice(ctx.batches)
    return replace(genome, batch=tuple(bats))


def ga_search(
    ctx: SearchContext,
    params: GAParams | None = None,
    seed: int = 0,
    generation_log: list | None = None,
):
    """Generational GA with elitism; returns (best genome, best design).

    Raises InfeasibleWorkload if no genome can be made legal.
    """
    params = params or GAParams()
    rng = random.Random(seed)
    population = seed_population(ctx, params, rng)
    scored = [(g, *evaluate_genome(g, ctx)) for g in population]
    best = min(scored, key=lambda s: (s[1], s[0].cuts))
    if generation_log is not None:
        generation_log.append((0, best[1]))
    n = len(ctx.graph.nodes)
    for gen in range(1, params.generations + 1):
        nxt = [best[0]][: params.elitism]
        while len(nxt) < params.population:
            a = min(rng.sample(scored, min(2, len(scored))), key=lambda s: s[1])[0]
            b = min(rng.sample(scored, min(2, len(scored))), key=lambda s: s[1])[0]
            child = _crossover(a, b, n, rng) if rng.random() < params.crossover_rate else a
            if rng.random() < params.mutation_rate:
                child = _mutate(child, ctx, rng)
            nxt.append(legalize_genome(child, ctx))
        population = nxt
        scored = [(g, *evaluate_genome(g, ctx)) for g in population]
        gen_best = min(scored, key=lambda s: (s[1], s[0].cuts))
        if gen_best[1] < best[1]:
            best = gen_best
        if generation_log is not None:
            generation_log.append((gen, best[1]))
    if best[2] is None:
        raise InfeasibleWorkload("no feasible design for any genome")
    return best[0], best[2]
