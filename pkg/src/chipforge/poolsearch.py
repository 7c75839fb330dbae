"""Simulated annealing over chiplet-pool compositions.

Each pool is scored by the best accelerator buildable from it for every
target network (inner GA + exact stage solver); the cross-network score
is a geometric mean normalized per network against a fixed reference
design, or the worst case behind a flag.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .fusion import GAParams, InfeasibleWorkload, SearchContext, ga_search
from .perfmodel import (
    ChipletConfig,
    DATAFLOWS,
    GLB_SCALES,
    PE_SCALES,
    scaled_chiplet,
)


@dataclass(frozen=True)
class ChipletPool:
    members: tuple[ChipletConfig, ...]
    id: str = ""

    def __post_init__(self):
        if not self.members:
            raise ValueError("pool must be nonempty")
        keys = [m.design_key for m in self.members]
        if len(set(keys)) != len(keys):
            raise ValueError("pool members must be distinct designs")
        ordered = tuple(sorted(self.members, key=lambda m: m.design_key))
        object.__setattr__(self, "members", ordered)
        if not self.id:
            object.__setattr__(self, "id", "+".join(m.id for m in ordered))


@dataclass(frozen=True)
class SAParams:
    init_temp: float = 1.0
    cooling_rate: float = 0.95
    iters_per_level: int = 5
    temp_floor: float = 1e-3
    max_evals: int | None = None
    worst_case: bool = False  # aggregate by max instead of geomean
    inner_ga: GAParams = field(default_factory=lambda: GAParams(population=6, generations=4))
    polish_ga: GAParams = field(default_factory=GAParams)


def _scales(chiplet: ChipletConfig) -> tuple[int, int]:
    return chiplet.pe_rows // 64, chiplet.glb_bytes // (512 * 1024)


def neighbor_pool(pool: ChipletPool, rng: random.Random, retries: int = 20) -> ChipletPool:
    """Mutate exactly one member by exactly one move (dataflow swap, PE
    scaling step, or GLB scaling step); duplicates force a retry."""
    for _ in range(retries):
        members = list(pool.members)
        i = rng.randrange(len(members))
        c = members[i]
        pe, glb = _scales(c)
        move = rng.choice(("dataflow", "pe", "glb"))
        if move == "dataflow":
            df = rng.choice([d for d in DATAFLOWS if d != c.dataflow])
            members[i] = scaled_chiplet(df, pe, glb)
        elif move == "pe":
            step = rng.choice((-1, 1))
            idx = PE_SCALES.index(pe) + step
            if not 0 <= idx < len(PE_SCALES):
                idx = PE_SCALES.index(pe) - step
            members[i] = scaled_chiplet(c.dataflow, PE_SCALES[idx], glb)
        else:
            step = rng.choice((-1, 1))
            idx = GLB_SCALES.index(glb) + step
            if not 0 <= idx < len(GLB_SCALES):
                idx = GLB_SCALES.index(glb) - step
            members[i] = scaled_chiplet(c.dataflow, pe, GLB_SCALES[idx])
        keys = {m.design_key for m in members}
        if len(keys) == len(members):
            return ChipletPool(tuple(members))
    return pool


def default_reference_pool() -> ChipletPool:
    return ChipletPool((scaled_chiplet("RS", 1, 1),))


@dataclass
class NetworkTarget:
    """One network plus its per-network solve settings."""

    graph: object
    t_max: float | None = None
    batches: tuple[int, ...] = (1,)
    latency_cap: float | None = None
    latency_mode: str = "period"

    def context(self, pool, base: SearchContext) -> SearchContext:
        return replace(
            base,
            graph=self.graph,
            pool=pool,
            t_max=self.t_max,
            batches=self.batches,
            latency_cap=self.latency_cap,
            latency_mode=self.latency_mode,
        )


def reference_scores(networks, base: SearchContext, params: GAParams, seed: int = 0):
    """Per-network best objective under the fixed single-chiplet reference
    pool; used to normalize cross-network aggregation."""
    ref_pool = default_reference_pool()
    out = []
    for k, net in enumerate(networks):
        try:
            _, design = ga_search(net.context(ref_pool, base), params, seed=seed + k)
            out.append(design.objective)
        except InfeasibleWorkload:
            out.append(1.0)
    return out


def pool_score(
    pool: ChipletPool,
    networks,
    base: SearchContext,
    refs,
    ga_params: GAParams,
    seed: int = 0,
    worst_case: bool = False,
    designs_out: list | None = None,
):
    """Normalized geometric-mean (or worst-case) objective across networks;
    +inf if any network is unmappable on the pool."""
    if not networks:
        raise ValueError("networks must be nonempty")
    vals = []
    for k, net in enumerate(networks):
        try:
            _, design = ga_search(net.context(pool, base), ga_params, seed=seed + k)
        except InfeasibleWorkload:
            if designs_out is not None:
                designs_out.append(None)
            return math.inf
        vals.append(design.objective / refs[k])
        if designs_out is not None:
            designs_out.append(design)
    if worst_case:
        return max(vals)
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


@dataclass
class AnnealStep:
    level: int
    temperature: float
    score: float
    accepted: bool


def sa_search(
    initial_pool: ChipletPool,
    networks,
    base: SearchContext,
    params: SAParams | None = None,
    seed: int = 0,
    trace: list | None = None,
):
    """Metropolis annealing over pools; returns (best pool, per-network
    designs from a full-budget GA polish, best score)."""
    params = params or SAParams()
    rng = random.Random(seed)
    refs = reference_scores(networks, base, params.inner_ga, seed)

    def score(pool):
        return pool_score(
            pool, networks, base, refs, params.inner_ga, seed, params.worst_case
        )

    cur = initial_pool
    cur_score = score(cur)
    best, best_score = cur, cur_score
    temp = params.init_temp
    level = 0
    evals = 1
    while temp > params.temp_floor:
        for _ in range(params.iters_per_level):
            if params.max_evals is not None and evals >= params.max_evals:
                temp = 0.0
                break
            cand = neighbor_pool(cur, rng)
            cand_score = score(cand)
            evals += 1
            delta = cand_score - cur_score
            accepted = delta <= 0 or (
                math.isfinite(delta) and rng.random() < math.exp(-delta / temp)
            )
            if trace is not None:
                trace.append(AnnealStep(level, temp, cand_score, accepted))
            if accepted:
                cur, cur_score = cand, cand_score
                if cur_score < best_score:
                    best, best_score = cur, cur_score
        temp *= params.cooling_rate
        level += 1
    designs: list = []
    final_score = pool_score(
        best, networks, base, refs, params.polish_ga, seed, params.worst_case, designs
    )
    return best, designs, min(best_score, final_score)
