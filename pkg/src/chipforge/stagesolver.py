"""Exact per-pipeline stage assignment.

Each stage candidate is an affine energy function of the common pipeline
period T (dynamic energy intercept, static power slope), infeasible below
its activation point.  Three solvers share one contract and return equal
objective values:

  * naive_search      - exhaustive tuple enumeration, O(M^P)
  * iso_latency_search- per-period independent stage minimization,
                        O(M*P*Q) stage evaluations
  * cht_search        - iso-latency with threshold-indexed lower hulls,
                        O(P*(M log M + Q log M)) comparisons

Objectives: energy, ec (cost-scaled per stage), edp (x T), edpc (both).
Ties break toward smaller T, then smaller candidate key.
"""

from __future__ import annotations

import itertools
import math
from bisect import bisect_right
from dataclasses import dataclass, field

OBJECTIVES = ("energy", "ec", "edp", "edpc")

NAIVE_GUARD = 10**7


class GuardExceeded(RuntimeError):
    pass


class NoFeasibleDesign(RuntimeError):
    pass


@dataclass(frozen=True)
class StageOption:
    """One selectable candidate for a pipeline stage."""

    key: tuple
    t_cmp: float
    e_dyn: float
    p_static: float
    cost: float = 1.0
    payload: object = None

    def __post_init__(self):
        if self.t_cmp <= 0 or self.p_static < 0 or self.e_dyn < 0:
            raise ValueError("bad stage option parameters")


def option_from_candidate(cand, window: int = 1) -> StageOption:
    """Adapt a perfmodel.StageCandidate processing `cand.batch` samples per
    beat to a pipeline window of `window` samples (window % batch == 0):
    the stage fires window/batch times per period."""
    if window % cand.batch != 0:
        raise ValueError("window must be a multiple of the candidate batch")
    beats = window // cand.batch
    return StageOption(
        key=cand.key,
        t_cmp=beats * cand.t_cmp,
        e_dyn=beats * cand.e_dyn,
        p_static=cand.p_static,
        cost=cand.dollar_cost,
        payload=cand,
    )


@dataclass
class AcceleratorDesign:
    stages: list[StageOption]
    period: float
    objective: float
    objective_kind: str

    def __post_init__(self):
        assert all(self.period >= s.t_cmp for s in self.stages)


@dataclass
class SolveCounters:
    """Instrumentation for complexity evidence."""

    tuples: int = 0
    stage_evals: int = 0
    comparisons: int = 0


def _cost_scaled(objective: str) -> bool:
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    return objective in ("ec", "edpc")


def _times_t(objective: str) -> bool:
    return objective in ("edp", "edpc")


def stage_value(opt: StageOption, t: float, objective: str) -> float:
    """Per-stage contribution at period t.  All three solvers evaluate this
    exact expression so objective values agree bit for bit."""
    if t < opt.t_cmp:
        return math.inf
    v = opt.e_dyn + opt.p_static * t
    if _cost_scaled(objective):
        v = v * opt.cost
    return v


def _total(values, t, objective):
    total = 0.0
    for v in values:
        total += v
    if _times_t(objective):
        total *= t
    return total


def candidate_latencies(stage_options, t_max: float | None = None) -> list[float]:
    """Sorted distinct activation values across all stages, filtered by the
    latency cap.  The optimum always occurs at one of these breakpoints."""
    lats = {opt.t_cmp for opts in stage_options for opt in opts}
    if t_max is not None:
        lats = {t for t in lats if t <= t_max}
    return sorted(lats)


def naive_search(
    stage_options,
    objective: str = "energy",
    t_max: float | None = None,
    guard: int = NAIVE_GUARD,
    counters: SolveCounters | None = None,
) -> AcceleratorDesign:
    """Global optimum by exhaustive enumeration of stage tuples."""
    _cost_scaled(objective)
    if any(not opts for opts in stage_options):
        raise NoFeasibleDesign("a stage has no candidates")
    size = 1
    for opts in stage_options:
        size *= len(opts)
    if size > guard:
        raise GuardExceeded(f"{size} tuples exceed the naive guard {guard}")
    best = None
    for tup in itertools.product(*stage_options):
        if counters is not None:
            counters.tuples += 1
        t = max(opt.t_cmp for opt in tup)
        if t_max is not None and t > t_max:
            continue
        val = _total((stage_value(o, t, objective) for o in tup), t, objective)
        cand = (val, t, tuple(o.key for o in tup), tup)
        if best is None or cand[:3] < best[:3]:
            best = cand
    if best is None:
        raise NoFeasibleDesign("no tuple satisfies the latency constraints")
    val, t, _, tup = best
    return AcceleratorDesign(list(tup), t, val, objective)


def iso_latency_search(
    stage_options,
    objective: str = "energy",
    t_max: float | None = None,
    counters: SolveCounters | None = None,
) -> AcceleratorDesign:
    """Fix the period, optimize each stage independently, take the best
    period.  Performs exactly M*P*Q stage-value evaluations."""
    _cost_scaled(objective)
    if any(not opts for opts in stage_options):
        raise NoFeasibleDesign("a stage has no candidates")
    best = None
    for t in candidate_latencies(stage_options, t_max):
        total = 0.0
        chosen = []
        feasible = True
        for opts in stage_options:
            stage_best = None
            for opt in opts:
                if counters is not None:
                    counters.stage_evals += 1
                v = stage_value(opt, t, objective)
                if stage_best is None or (v, opt.key) < stage_best[:2]:
                    stage_best = (v, opt.key, opt)
            if not math.isfinite(stage_best[0]):
                feasible = False
            else:
                total += stage_best[0]
                chosen.append(stage_best[2])
        if not feasible:
            continue
        if _times_t(objective):
            total *= t
        cand = (total, t, tuple(o.key for o in chosen), chosen)
        if best is None or cand[:3] < best[:3]:
            best = cand
    if best is None:
        raise NoFeasibleDesign("no feasible period")
    val, t, _, chosen = best
    return AcceleratorDesign(list(chosen), t, val, objective)


# --- threshold-indexed lower hulls -----------------------------------------


@dataclass(frozen=True)
class AffineSegment:
    slope: float
    intercept: float
    activation: float
    option: StageOption


class _Hull:
    """Lower envelope of lines y = slope*x + intercept, slopes strictly
    decreasing, crossover abscissae strictly increasing."""

    __slots__ = ("segments", "crossings")

    def __init__(self, segments=None, crossings=None):
        self.segments: list[AffineSegment] = segments if segments is not None else []
        self.crossings: list[float] = crossings if crossings is not None else []

    def copy(self) -> "_Hull":
        return _Hull(list(self.segments), list(self.crossings))

    @staticmethod
    def _cross(a: AffineSegment, b: AffineSegment) -> float:
        # a has the larger slope; x beyond which b is at or below a.
        return (b.intercept - a.intercept) / (a.slope - b.slope)

    def insert(self, seg: AffineSegment, counters: SolveCounters | None = None) -> None:
        segs = self.segments

        def note(n=1):
            if counters is not None:
                counters.comparisons += n

        # binary search by slope, decreasing order
        lo, hi = 0, len(segs)
        while lo < hi:
            mid = (lo + hi) // 2
            note()
            if segs[mid].slope > seg.slope:
                lo = mid + 1
            else:
                hi = mid
        pos = lo
        # equal slope: keep the lower intercept (tie: earlier inserted key)
        if pos < len(segs) and segs[pos].slope == seg.slope:
            note()
            if seg.intercept < segs[pos].intercept:
                segs[pos] = seg
                self._rebuild_around(pos, counters)
            return
        # is the new segment useless between its neighbors?
        if 0 < pos < len(segs):
            note()
            if self._cross(segs[pos - 1], seg) >= self._cross(seg, segs[pos]):
                return
        segs.insert(pos, seg)
        # drop neighbors the new segment dominates
        while pos + 2 < len(segs) and self._useless(pos, pos + 1, pos + 2, counters):
            del segs[pos + 1]
        while pos >= 2 and self._useless(pos - 2, pos - 1, pos, counters):
            del segs[pos - 1]
            pos -= 1
        self._recompute_crossings()

    def _useless(self, i, j, k, counters) -> bool:
        if counters is not None:
            counters.comparisons += 1
        a, b, c = self.segments[i], self.segments[j], self.segments[k]
        return (b.intercept - a.intercept) * (b.slope - c.slope) >= (
            c.intercept - b.intercept
        ) * (a.slope - b.slope)

    def _rebuild_around(self, pos, counters):
        segs = self.segments
        while pos + 2 < len(segs) and self._useless(pos, pos + 1, pos + 2, counters):
            del segs[pos + 1]
        while pos >= 2 and self._useless(pos - 2, pos - 1, pos, counters):
            del segs[pos - 1]
            pos -= 1
        self._recompute_crossings()

    def _recompute_crossings(self):
        segs = self.segments
        self.crossings = [
            self._cross(segs[i], segs[i + 1]) for i in range(len(segs) - 1)
        ]

    def argmin_at(self, x: float, counters: SolveCounters | None = None) -> int:
        # binary search over crossover abscissae; returns the segment index
        lo, hi = 0, len(self.crossings)
        while lo < hi:
            mid = (lo + hi) // 2
            if counters is not None:
                counters.comparisons += 1
            if self.crossings[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        return lo


@dataclass
class ThresholdHulls:
    """Per-stage persistent hulls: hulls[i] covers every candidate whose
    activation is <= thresholds[i]."""

    thresholds: list[float]
    hulls: list[_Hull]
    objective: str


def _segment(opt: StageOption, objective: str) -> AffineSegment:
    scale = opt.cost if _cost_scaled(objective) else 1.0
    return AffineSegment(
        slope=opt.p_static * scale,
        intercept=opt.e_dyn * scale,
        activation=opt.t_cmp,
        option=opt,
    )


def build_threshold_hulls(
    options,
    objective: str = "energy",
    counters: SolveCounters | None = None,
) -> ThresholdHulls:
    """Sort candidates by activation; extend the running hull at each new
    threshold, removing dominated segments."""
    if not options:
        raise ValueError("at least one candidate required")
    segs = sorted(
        (_segment(o, objective) for o in options),
        key=lambda s: (s.activation, s.option.key),
    )
    if counters is not None:
        # account for the sort
        n = len(segs)
        counters.comparisons += max(1, round(n * max(1.0, math.log2(n))))
    thresholds: list[float] = []
    hulls: list[_Hull] = []
    cur = _Hull()
    i = 0
    while i < len(segs):
        t = segs[i].activation
        while i < len(segs) and segs[i].activation == t:
            cur.insert(segs[i], counters)
            i += 1
        thresholds.append(t)
        hulls.append(cur.copy())
    return ThresholdHulls(thresholds, hulls, objective)


def query_stage_min(
    hulls: ThresholdHulls,
    t: float,
    counters: SolveCounters | None = None,
) -> tuple[StageOption | None, float]:
    """Minimum stage value at period t over candidates active at t.

    Locates the widest hull whose threshold is <= t (inclusive), then the
    hull's minimal segment at t.  The returned value is recomputed through
    `stage_value` so it matches the scanning solvers exactly; neighbors of
    the hull argmin are compared the same way to keep tie-breaking (and
    borderline crossover rounding) deterministic.
    """
    idx = bisect_right(hulls.thresholds, t) - 1
    if counters is not None:
        counters.comparisons += max(1, math.ceil(math.log2(len(hulls.thresholds) + 1)))
    if idx < 0:
        return None, math.inf
    hull = hulls.hulls[idx]
    pos = hull.argmin_at(t, counters)
    best = None
    for j in (pos - 1, pos, pos + 1):
        if 0 <= j < len(hull.segments):
            opt = hull.segments[j].option
            v = stage_value(opt, t, hulls.objective)
            if counters is not None:
                counters.comparisons += 1
            if best is None or (v, opt.key) < (best[1], best[0].key):
                best = (opt, v)
    return best


def cht_search(
    stage_options,
    objective: str = "energy",
    t_max: float | None = None,
    counters: SolveCounters | None = None,
) -> AcceleratorDesign:
    """Iso-latency search with per-stage threshold hulls."""
    _cost_scaled(objective)
    if any(not opts for opts in stage_options):
        raise NoFeasibleDesign("a stage has no candidates")
    per_stage = [build_threshold_hulls(opts, objective, counters) for opts in stage_options]
    best = None
    for t in candidate_latencies(stage_options, t_max):
        total = 0.0
        chosen = []
        feasible = True
        for hulls in per_stage:
            opt, v = query_stage_min(hulls, t, counters)
            if opt is None or not math.isfinite(v):
                feasible = False
                break
            total += v
            chosen.append(opt)
        if not feasible:
            continue
        if _times_t(objective):
            total *= t
        cand = (total, t, tuple(o.key for o in chosen), chosen)
        if best is None or cand[:3] < best[:3]:
            best = cand
    if best is None:
        raise NoFeasibleDesign("no feasible period")
    val, t, _, chosen = best
    return AcceleratorDesign(list(chosen), t, val, objective)
