"""Interposer placement and routing.

Chiplet instances are square tiles on a 0.1 mm grid, shelf-packed in
pipeline order; inter-stage nets are routed as shortest Manhattan paths
over a track grid with per-edge capacity.  The layer is pure constraint
satisfaction plus footprint minimization: it never changes energy or
latency, only feasibility and interposer area.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

GRID_MM = 0.1
DEFAULT_EDGE_CAPACITY = 4
DEFAULT_MAX_SIDE = 600  # grid units (60 mm)


class LayoutInfeasible(RuntimeError):
    pass


@dataclass
class Rect:
    stage: int
    replica: int
    x: int
    y: int
    w: int
    h: int
    rotation: int = 0  # degrees, 0 or 90

    @property
    def cells(self):
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def ports(self):
        """One port per edge midpoint (cell coordinates on the boundary)."""
        x0, y0, x1, y1 = self.cells
        return [
            (x0 + self.w // 2, y1 - 1),
            (x0 + self.w // 2, y0),
            (x0, y0 + self.h // 2),
            (x1 - 1, y0 + self.h // 2),
        ]


@dataclass
class Net:
    id: int
    src: int  # rect index
    dst: int
    path: list = field(default_factory=list)  # list of (x, y) cells


@dataclass
class Placement:
    width: int
    height: int
    rects: list
    nets: list
    edge_capacity: int = DEFAULT_EDGE_CAPACITY

    @property
    def area_mm2(self) -> float:
        return self.width * self.height * GRID_MM * GRID_MM


def chiplet_side_units(area_mm2: float) -> int:
    return max(1, math.ceil(math.sqrt(area_mm2) / GRID_MM))


def design_rects(design) -> list[Rect]:
    """Unplaced square tiles, one per chiplet instance, pipeline order."""
    rects = []
    for i, stage in enumerate(design.stages):
        cand = stage.payload
        side = chiplet_side_units(cand.chiplet.area_mm2)
        for r in range(cand.tp):
            rects.append(Rect(i, r, 0, 0, side, side))
    return rects


def design_nets(rects) -> list[Net]:
    """Pipeline nets between consecutive stages plus replica-pair nets."""
    first_of_stage = {}
    for idx, r in enumerate(rects):
        first_of_stage.setdefault(r.stage, idx)
    nets = []
    nid = 0
    stages = sorted(first_of_stage)
    for a, b in zip(stages, stages[1:]):
        nets.append(Net(nid, first_of_stage[a], first_of_stage[b]))
        nid += 1
    for idx, r in enumerate(rects):
        if r.replica > 0:
            nets.append(Net(nid, first_of_stage[r.stage], idx))
            nid += 1
    return nets


def place(design, width: int, height: int) -> Placement:
    """Deterministic shelf packing in pipeline order (adjacent stages land
    adjacent); raises LayoutInfeasible when packing fails."""
    rects = design_rects(design)
    for r in rects:
        if r.w > width or r.h > height:
            raise LayoutInfeasible(f"chiplet of stage {r.stage} exceeds interposer")
    x = y = shelf_h = 0
    for r in rects:
        if x + r.w > width:
            x = 0
            y += shelf_h
            shelf_h = 0
        if y + r.h > height:
            raise LayoutInfeasible("packing failed")
        r.x, r.y = x, y
        x += r.w
        shelf_h = max(shelf_h, r.h)
    return Placement(width, height, rects, design_nets(rects))


def _edge(a, b):
    return (a, b) if a <= b else (b, a)


def route(placement: Placement) -> Placement:
    """Breadth-first shortest Manhattan path per net, in net order,
    consuming edge capacity; raises LayoutInfeasible when blocked."""
    cap: dict = {}
    w, h = placement.width, placement.height

    def remaining(a, b):
        return cap.get(_edge(a, b), placement.edge_capacity)

    for net in placement.nets:
        srcs = [p for p in placement.rects[net.src].ports() if 0 <= p[0] < w and 0 <= p[1] < h]
        dsts = {p for p in placement.rects[net.dst].ports() if 0 <= p[0] < w and 0 <= p[1] < h}
        prev = {p: None for p in srcs}
        queue = deque(sorted(srcs))
        goal = None
        while queue:
            cell = queue.popleft()
            if cell in dsts:
                goal = cell
                break
            cx, cy = cell
            for nxt in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                if not (0 <= nxt[0] < w and 0 <= nxt[1] < h):
                    continue
                if nxt in prev or remaining(cell, nxt) <= 0:
                    continue
                prev[nxt] = cell
                queue.append(nxt)
        if goal is None:
            raise LayoutInfeasible(f"net {net.id} cannot be routed")
        path = [goal]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()
        for a, b in zip(path, path[1:]):
            cap[_edge(a, b)] = remaining(a, b) - 1
        net.path = path
    return placement


def place_and_route(design, side: int) -> Placement:
    return route(place(design, side, side))


def minimize_footprint(design, max_side: int = DEFAULT_MAX_SIDE) -> Placement:
    """Smallest feasible square interposer (side - 1 grid unit verified
    infeasible); feeds its area into the recurring cost model."""
    rects = design_rects(design)
    lower = max(
        max(r.w for r in rects),
        math.ceil(math.sqrt(sum(r.w * r.h for r in rects))),
    )

    def feasible(side):
        try:
            return place_and_route(design, side)
        except LayoutInfeasible:
            return None

    lo, hi = lower, max_side
    best = feasible(hi)
    if best is None:
        raise LayoutInfeasible(f"infeasible at the configured maximum side {max_side}")
    best_side = hi
    while lo < hi:
        mid = (lo + hi) // 2
        got = feasible(mid)
        if got is not None:
            best, best_side, hi = got, mid, mid
        else:
            lo = mid + 1
    # packing feasibility is not strictly monotone in side; walk down until
    # side - 1 truly fails
    while best_side > lower:
        got = feasible(best_side - 1)
        if got is None:
            break
        best, best_side = got, best_side - 1
    return best


def perimeter_scaling(n: int) -> float:
    """Total perimeter factor when one square splits into n equal squares."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.sqrt(n)


def validate(placement: Placement) -> list[str]:
    """Independent geometric checks; returns a list of violations."""
    errors = []
    for i, a in enumerate(placement.rects):
        ax0, ay0, ax1, ay1 = a.cells
        if ax0 < 0 or ay0 < 0 or ax1 > placement.width or ay1 > placement.height:
            errors.append(f"rect {i} out of bounds")
        for j in range(i + 1, len(placement.rects)):
            bx0, by0, bx1, by1 = placement.rects[j].cells
            if ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1:
                errors.append(f"rects {i} and {j} overlap")
    usage: dict = {}
    for net in placement.nets:
        if not net.path:
            errors.append(f"net {net.id} unrouted")
            continue
        if net.path[0] not in placement.rects[net.src].ports():
            errors.append(f"net {net.id} does not start at a source port")
        if net.path[-1] not in placement.rects[net.dst].ports():
            errors.append(f"net {net.id} does not end at a sink port")
        for a, b in zip(net.path, net.path[1:]):
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                errors.append(f"net {net.id} has a non-unit segment")
            usage[_edge(a, b)] = usage.get(_edge(a, b), 0) + 1
    for edge, n in usage.items():
        if n > placement.edge_capacity:
            errors.append(f"edge {edge} over capacity ({n})")
    return errors


def dump_grid(placement: Placement) -> str:
    """Plain-text layout dump (origin bottom-left)."""
    grid = [["." for _ in range(placement.width)] for _ in range(placement.height)]
    for net in placement.nets:
        for x, y in net.path:
            grid[y][x] = "*"
    for i, r in enumerate(placement.rects):
        mark = chr(ord("A") + (i % 26))
        for y in range(r.y, r.y + r.h):
            for x in range(r.x, r.x + r.w):
                grid[y][x] = mark
    return "\n".join("".join(row) for row in reversed(grid))
