"""Event-driven simulator of the pipeline template: stages with double
buffered hand-off and token-passing arbitration of shared memory buses.

Used to cross-validate the analytical stage model: with private buses the
steady-state period and first-output latency match the analytical values;
with contended buses the period degrades toward the bytes/bandwidth bound.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

DEFAULT_TILE_BYTES = 64 * 1024


class SimDeadlock(RuntimeError):
    def __init__(self, blocked):
        super().__init__(f"no event progress; blocked stages: {sorted(blocked)}")
        self.blocked = sorted(blocked)


@dataclass
class SimConfig:
    design: object  # stagesolver.AcceleratorDesign (payloads: StageCandidate)
    inputs: int
    bus_map: dict | None = None  # stage index -> bus id; default private
    tile_bytes: int = DEFAULT_TILE_BYTES
    trace: list | None = None  # optional (time, stage, event) records

    def __post_init__(self):
        if self.inputs < 1:
            raise ValueError("inputs must be >= 1")
        n = len(self.design.stages)
        if self.bus_map is None:
            self.bus_map = {i: i for i in range(n)}
        if sorted(self.bus_map) != list(range(n)):
            raise ValueError("every stage must map to exactly one bus")


@dataclass
class SimReport:
    finish_times: list
    first_output_latency: float
    steady_period: float
    makespan: float
    busy_time: list
    idle_time: list
    energy: float
    grants: list  # (bus, stage) in grant order
    tiles_transferred: list


class _Stage:
    __slots__ = (
        "idx",
        "compute_time",
        "memory_time",
        "bus",
        "tiles_total",
        "tile_times",
        "sample",
        "compute_done",
        "tiles_left",
        "started_at",
        "busy",
        "done_times",
        "started",
        "tiles_moved",
    )

    def __init__(self, idx, cand, bus, tile_bytes):
        self.idx = idx
        self.compute_time = cand.compute_time
        self.memory_time = cand.memory_time
        self.bus = bus
        n_full, rem = divmod(cand.traffic_bytes, tile_bytes)
        times = [tile_bytes / cand.memory.bandwidth] * n_full
        if rem:
            times.append(rem / cand.memory.bandwidth)
        if not times:
            times = [0.0]
        self.tiles_total = len(times)
        self.tile_times = times
        self.sample = -1
        self.compute_done = True
        self.tiles_left = 0
        self.busy = 0.0
        self.done_times = []
        self.started = []
        self.tiles_moved = 0


class _Bus:
    __slots__ = ("id", "stages", "rr", "busy_until")

    def __init__(self, bus_id):
        self.id = bus_id
        self.stages = []
        self.rr = 0
        self.busy_until = 0.0


def simulate(config: SimConfig) -> SimReport:
    """Run all samples through the pipeline and aggregate timing/energy."""
    design = config.design
    n = len(design.stages)
    stages = [
        _Stage(i, design.stages[i].payload, config.bus_map[i], config.tile_bytes)
        for i in range(n)
    ]
    buses = {}
    for st in stages:
        buses.setdefault(st.bus, _Bus(st.bus)).stages.append(st)

    arrived = [[0.0] * config.inputs if i == 0 else [math.inf] * config.inputs for i in range(n)]
    finished = [[math.inf] * config.inputs for _ in range(n)]
    started = [[math.inf] * config.inputs for _ in range(n)]
    grants = []
    now = 0.0
    events = []  # (time, seq, kind, payload)
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, payload))
        seq += 1

    def trace(t, stage, what):
        if config.trace is not None:
            config.trace.append((t, stage, what))

    def try_start(st: _Stage, t):
        s = st.sample + 1
        if s >= config.inputs:
            return
        if not st.compute_done or st.tiles_left > 0:
            return
        if arrived[st.idx][s] > t:
            return
        # output double buffer: the downstream stage must have begun
        # consuming sample s-2 before a new half frees up
        if st.idx + 1 < n and s >= 2 and started[st.idx + 1][s - 2] == math.inf:
            return
        st.sample = s
        st.started_at = t
        started[st.idx][s] = t
        st.compute_done = False
        st.tiles_left = st.tiles_total
        trace(t, st.idx, f"start sample {s}")
        push(t + st.compute_time, "compute", st.idx)
        kick_bus(buses[st.bus], t)

    def finish_if_done(st: _Stage, t):
        if st.compute_done and st.tiles_left == 0 and st.sample >= 0:
            s = st.sample
            if finished[st.idx][s] != math.inf:
                return
            finished[st.idx][s] = t
            st.busy += t - st.started_at
            st.done_times.append(t)
            trace(t, st.idx, f"finish sample {s}")
            if st.idx + 1 < n:
                arrived[st.idx + 1][s] = t
            push(t, "advance", st.idx)

    def kick_bus(bus: _Bus, t):
        if bus.busy_until > t:
            return
        # round-robin token; stages without pending demand pass in zero time
        for k in range(len(bus.stages)):
            st = bus.stages[(bus.rr + k) % len(bus.stages)]
            if st.tiles_left > 0:
                bus.rr = (bus.rr + k + 1) % len(bus.stages)
                dt = st.tile_times[st.tiles_total - st.tiles_left]
                bus.busy_until = t + dt
                grants.append((bus.id, st.idx))
                push(t + dt, "grant", (bus.id, st.idx))
                return

    for i in range(n):
        push(0.0, "advance", i)

    total_done = 0
    while events:
        t, _, kind, payload = heapq.heappop(events)
        now = t
        if kind == "compute":
            st = stages[payload]
            st.compute_done = True
            finish_if_done(st, t)
        elif kind == "grant":
            bus_id, sidx = payload
            st = stages[sidx]
            st.tiles_left -= 1
            st.tiles_moved += 1
            bus = buses[bus_id]
            finish_if_done(st, t)
            kick_bus(bus, t)
        elif kind == "advance":
            # a start can unblock an upstream stage in the same instant
            changed = True
            while changed:
                changed = False
                for st in stages:
                    before = st.sample
                    try_start(st, t)
                    changed = changed or st.sample != before

    blocked = {
        st.idx
        for st in stages
        if st.sample + 1 < config.inputs or not st.compute_done or st.tiles_left
    }
    incomplete = any(
        finished[i][s] == math.inf for i in range(n) for s in range(config.inputs)
    )
    if incomplete:
        raise SimDeadlock(blocked)

    outs = finished[-1]
    first = outs[0]
    if config.inputs > 1:
        # average gap over the second half of the run (steady state)
        k = config.inputs // 2
        period = (outs[-1] - outs[k - 1]) / (config.inputs - k)
    else:
        period = first
    makespan = outs[-1]
    busy = [st.busy for st in stages]
    idle = [makespan - b for b in busy]
    energy = sum(
        config.inputs * s.payload.e_dyn + s.payload.p_static * makespan
        for s in design.stages
    )
    return SimReport(
        finish_times=outs,
        first_output_latency=first,
        steady_period=period,
        makespan=makespan,
        busy_time=busy,
        idle_time=idle,
        energy=energy,
        grants=grants,
        tiles_transferred=[st.tiles_moved for st in stages],
    )
