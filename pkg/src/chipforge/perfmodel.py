"""Analytical stage evaluation: roofline latency, energy, and cost of one
fusion group mapped onto a (chiplet, memory, batch, tensor-parallel) point.

Latency is max(compute, memory) with a dataflow/operator affinity factor
on compute throughput.  Fused intermediates never leave the chiplet and
are charged zero off-chip traffic; feasibility requires the largest
intermediate tile to fit in half the global buffer (double buffering)
and the resident weights to fit the memory module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .workload import (
    BATCH_AGNOSTIC,
    OperatorGraph,
    OperatorNode,
    operator_footprint,
)

DATAFLOWS = ("RS", "OS", "WS")
PE_BASE = 64
GLB_BASE = 512 * 1024
PE_SCALES = (1, 2, 3, 4)
GLB_SCALES = (1, 4, 9, 16)

# Utilization factor per (operator kind, dataflow).  Matched pairs run at
# full utilization; mismatches pay a fixed derating.  Overridable via the
# config file.
DEFAULT_AFFINITY = {
    ("conv", "RS"): 1.0,
    ("conv", "OS"): 0.8,
    ("conv", "WS"): 0.7,
    ("depthwise-conv", "RS"): 0.85,
    ("depthwise-conv", "OS"): 0.8,
    ("depthwise-conv", "WS"): 0.6,
    ("matmul", "WS"): 1.0,
    ("matmul", "OS"): 0.85,
    ("matmul", "RS"): 0.75,
    ("attention-score", "WS"): 0.85,
    ("attention-score", "OS"): 0.8,
    ("attention-score", "RS"): 0.6,
    ("attention-context", "WS"): 0.85,
    ("attention-context", "OS"): 0.8,
    ("attention-context", "RS"): 0.6,
    ("elementwise", "OS"): 1.0,
    ("elementwise", "RS"): 0.7,
    ("elementwise", "WS"): 0.6,
    ("normalization", "OS"): 0.85,
    ("normalization", "RS"): 0.65,
    ("normalization", "WS"): 0.6,
}

INTERCHIP_PJ_PER_BIT = 1.3

# Area/energy calibration knobs (14 nm-class defaults, overridable).
E_MAC_J = 0.5e-12
STATIC_W_PER_MM2 = 0.05
AREA_MM2_PER_PE = 0.006
AREA_MM2_PER_MIB_GLB = 0.5


class InfeasibleCandidate(Exception):
    """Candidate violates a capacity gate; excluded, not fatal."""


def dataflow_affinity(kind: str, dataflow: str, table: dict | None = None) -> float:
    table = DEFAULT_AFFINITY if table is None else table
    try:
        return table[(kind, dataflow)]
    except KeyError:
        raise KeyError(f"no affinity entry for ({kind}, {dataflow})") from None


@dataclass(frozen=True)
class ChipletConfig:
    id: str
    dataflow: str
    pe_rows: int
    pe_cols: int
    glb_bytes: int
    frequency: float = 1e9
    e_mac: float = E_MAC_J
    static_power_density: float = STATIC_W_PER_MM2
    area_mm2: float = 0.0

    def __post_init__(self):
        if self.dataflow not in DATAFLOWS:
            raise ValueError(f"bad dataflow {self.dataflow!r}")
        if not (PE_BASE <= self.pe_rows <= 512 and PE_BASE <= self.pe_cols <= 512):
            raise ValueError("PE dims must be within 64-512 per side")
        if self.glb_bytes <= 0:
            raise ValueError("glb_bytes must be > 0")
        if self.area_mm2 == 0.0:
            area = (
                AREA_MM2_PER_PE * self.pe_rows * self.pe_cols
                + AREA_MM2_PER_MIB_GLB * self.glb_bytes / (1 << 20)
            )
            object.__setattr__(self, "area_mm2", area)
        if self.area_mm2 <= 0:
            raise ValueError("area must be > 0")

    @property
    def peak_macs(self) -> float:
        return self.pe_rows * self.pe_cols * self.frequency

    @property
    def peak_flops(self) -> float:
        return 2.0 * self.peak_macs

    @property
    def design_key(self) -> tuple:
        """Identity of the silicon design (ignores the instance id)."""
        return (self.dataflow, self.pe_rows, self.pe_cols, self.glb_bytes)


def scaled_chiplet(dataflow: str, pe_scale: int, glb_scale: int) -> ChipletConfig:
    """Menu chiplet: base 64x64 PEs / 512 KiB GLB scaled per the menus."""
    if pe_scale not in PE_SCALES:
        raise ValueError(f"pe_scale must be in {PE_SCALES}")
    if glb_scale not in GLB_SCALES:
        raise ValueError(f"glb_scale must be in {GLB_SCALES}")
    return ChipletConfig(
        id=f"{dataflow.lower()}-p{pe_scale}-g{glb_scale}",
        dataflow=dataflow,
        pe_rows=PE_BASE * pe_scale,
        pe_cols=PE_BASE * pe_scale,
        glb_bytes=GLB_BASE * glb_scale,
    )


@dataclass(frozen=True)
class MemoryModule:
    kind: str
    bandwidth: float  # B/s
    e_bit: float  # J/bit
    capacity: int  # bytes
    dollar_cost_per_gb: float
    static_power: float = 0.0  # W

    def __post_init__(self):
        if self.bandwidth <= 0 or self.capacity <= 0 or self.dollar_cost_per_gb <= 0:
            raise ValueError("bandwidth, capacity, cost must be > 0")

    @property
    def dollar_cost(self) -> float:
        return self.dollar_cost_per_gb * self.capacity / (1 << 30)


def default_memory_menu() -> list[MemoryModule]:
    """Bandwidth and dollar cost both increase LPDDR5 -> HBM3."""
    return [
        MemoryModule("LPDDR5", 51.2e9, 4.0e-12, 16 << 30, 3.0, 0.2),
        MemoryModule("DDR5", 64.0e9, 6.0e-12, 32 << 30, 4.0, 0.3),
        MemoryModule("GDDR7", 192.0e9, 5.0e-12, 16 << 30, 9.0, 0.5),
        MemoryModule("HBM3", 819.0e9, 3.5e-12, 24 << 30, 15.0, 0.8),
    ]


@dataclass(frozen=True)
class FusionGroup:
    """Contiguous run of operators executed on one pipeline stage."""

    group_id: int
    nodes: tuple[OperatorNode, ...]
    input_bytes: int  # per-sample bytes entering the group off-chip
    output_bytes: int  # per-sample bytes leaving the group off-chip
    max_tile_bytes: int  # largest fused intermediate, per sample


def partition(graph: OperatorGraph, cuts) -> list[FusionGroup]:
    """Split the stored node order at the given edge positions.

    ``cuts`` holds boundary positions: cut ``i`` separates node ``i``
    from node ``i+1``.  Edges crossing a cut contribute boundary traffic;
    edges inside a group are fused intermediates.
    """
    n = len(graph.nodes)
    cuts = sorted(set(cuts))
    if any(c < 0 or c >= n - 1 for c in cuts):
        raise ValueError("cut position out of range")
    bounds = [0] + [c + 1 for c in cuts] + [n]
    index = {node.id: i for i, node in enumerate(graph.nodes)}
    group_of = {}
    for g in range(len(bounds) - 1):
        for i in range(bounds[g], bounds[g + 1]):
            group_of[i] = g
    n_groups = len(bounds) - 1
    inputs = [0] * n_groups
    outputs = [0] * n_groups
    tiles = [0] * n_groups
    has_producer = set()
    for e in graph.edges:
        si, di = index[e.src], index[e.dst]
        has_producer.add(di)
        gs, gd = group_of[si], group_of[di]
        if gs == gd:
            tiles[gs] = max(tiles[gs], e.bytes)
        else:
            outputs[gs] += e.bytes
            inputs[gd] += e.bytes
    for i, node in enumerate(graph.nodes):
        if i not in has_producer:
            inputs[group_of[i]] += operator_footprint(node, 1).input_bytes
    # Terminal nodes stream their result off-chip.
    has_consumer = {index[e.src] for e in graph.edges}
    for i, node in enumerate(graph.nodes):
        if i not in has_consumer:
            outputs[group_of[i]] += operator_footprint(node, 1).output_bytes
    return [
        FusionGroup(
            g,
            tuple(graph.nodes[bounds[g] : bounds[g + 1]]),
            inputs[g],
            outputs[g],
            tiles[g],
        )
        for g in range(n_groups)
    ]


def group_weight_bytes(group: FusionGroup) -> int:
    return sum(operator_footprint(n, 1).weight_bytes for n in group.nodes)


def group_stream_bytes(group: FusionGroup) -> int:
    return sum(n.stream_bytes for n in group.nodes)


@dataclass(frozen=True)
class StageCandidate:
    group_id: int
    chiplet: ChipletConfig
    memory: MemoryModule
    batch: int
    tp: int
    t_cmp: float  # seconds per batch of `batch` samples
    compute_time: float
    memory_time: float
    flops: int
    traffic_bytes: int
    interchip_bytes: int
    e_dyn: float  # J per batch
    p_static: float  # W
    dollar_cost: float

    @property
    def key(self) -> tuple:
        """Deterministic ordering key (smaller batch, cheaper point first)."""
        return (self.chiplet.id, self.memory.kind, self.batch, self.tp)


def candidate_eval(
    group: FusionGroup,
    chiplet: ChipletConfig,
    memory: MemoryModule,
    batch: int = 1,
    tp: int = 1,
    affinity_table: dict | None = None,
    chiplet_cost_fn=None,
    interchip_pj_bit: float = INTERCHIP_PJ_PER_BIT,
) -> StageCandidate:
    """Evaluate one stage point; raises InfeasibleCandidate on gate failure."""
    if batch < 1 or tp not in (1, 2):
        raise ValueError("batch >= 1 and tp in {1, 2} required")
    if group.max_tile_bytes > chiplet.glb_bytes // 2:
        raise InfeasibleCandidate("fused tile exceeds GLB/2")
    weights = group_weight_bytes(group)
    stream = group_stream_bytes(group)
    if weights + batch * stream > memory.capacity:
        raise InfeasibleCandidate("resident weights exceed memory capacity")

    compute_time = 0.0
    flops = 0
    for node in group.nodes:
        st = operator_footprint(node, batch)
        aff = dataflow_affinity(node.kind, chiplet.dataflow, affinity_table)
        compute_time += st.flops / (chiplet.peak_flops * aff * tp)
        flops += st.flops

    # Weights are fetched once per batch (amortized across batch-sensitive
    # samples); boundary tensors and streamed state scale with batch.
    traffic = weights + batch * (group.input_bytes + group.output_bytes + stream)
    memory_time = traffic / memory.bandwidth
    t_cmp = max(compute_time, memory_time)
    if t_cmp <= 0:
        raise InfeasibleCandidate("degenerate zero-work group")

    out_bytes = batch * group.output_bytes
    interchip = out_bytes + ((tp - 1) / tp) * out_bytes
    e_dyn = (
        flops * chiplet.e_mac
        + 8 * traffic * memory.e_bit
        + 8 * interchip * interchip_pj_bit * 1e-12
    )
    p_static = chiplet.static_power_density * chiplet.area_mm2 * tp + memory.static_power

    if chiplet_cost_fn is None:
        from .costmodel import CostParams, die_cost

        params = CostParams()
        chiplet_cost_fn = lambda area: die_cost(area, params)
    dollar = tp * chiplet_cost_fn(chiplet.area_mm2) + memory.dollar_cost

    return StageCandidate(
        group_id=group.group_id,
        chiplet=chiplet,
        memory=memory,
        batch=batch,
        tp=tp,
        t_cmp=t_cmp,
        compute_time=compute_time,
        memory_time=memory_time,
        flops=flops,
        traffic_bytes=traffic,
        interchip_bytes=int(interchip),
        e_dyn=e_dyn,
        p_static=p_static,
        dollar_cost=dollar,
    )


def stage_energy_at(candidate: StageCandidate, t: float) -> float:
    """Piecewise-affine stage energy: E_dyn + P_static*t for t >= t_cmp,
    infeasible (inf) below."""
    if t <= 0:
        raise ValueError("t must be > 0")
    if t < candidate.t_cmp:
        return math.inf
    return candidate.e_dyn + candidate.p_static * t


def enumerate_candidates(
    group: FusionGroup,
    pool,
    memories=None,
    batches=(1,),
    tps=(1, 2),
    affinity_table=None,
    chiplet_cost_fn=None,
) -> list[StageCandidate]:
    """Feasible cross product pool x memories x tp x batch, sorted by key.

    An empty result signals an unmappable group.
    """
    chiplets = list(pool.members) if hasattr(pool, "members") else list(pool)
    if not chiplets:
        raise ValueError("pool must be nonempty")
    memories = default_memory_menu() if memories is None else memories
    out = []
    for chiplet in chiplets:
        for mem in memories:
            for tp in tps:
                for b in batches:
                    try:
                        out.append(
                            candidate_eval(
                                group,
                                chiplet,
                                mem,
                                b,
                                tp,
                                affinity_table,
                                chiplet_cost_fn,
                            )
                        )
                    except InfeasibleCandidate:
                        continue
    out.sort(key=lambda c: c.key)
    return out
