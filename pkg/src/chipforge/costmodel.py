"""Manufacturing cost: yield-scaled die cost, packaging, NRE amortization,
and the four composite metrics (energy, EC, EDP, EDPC).

Die yield follows the negative-binomial model Y = (1 + A*D0/alpha)^-alpha;
per-die cost is wafer cost split over gross dies and divided by yield, so
cost grows superlinearly with area whenever D0 > 0.  NRE is charged per
unique chiplet design in the shared ecosystem and amortized over volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

WAFER_DIAMETER_MM = 300.0
RETICLE_LIMIT_MM2 = 858.0  # 26 x 33 mm field


@dataclass(frozen=True)
class CostParams:
    wafer_cost: float = 5000.0  # $ per 300 mm wafer
    defect_density: float = 0.001  # defects / mm^2
    clustering_alpha: float = 3.0
    package_base: float = 20.0  # $
    package_per_mm2: float = 0.05  # $ / mm^2 of interposer
    bonding_multiplier: float = 1.0  # 1.0 = 2D, 2.5D uses 1.6
    nre_per_chiplet_design: float = 10e6  # $
    nre_per_package_design: float = 2e6  # $
    volume: float = 1e6  # units
    networks_sharing_pool: int = 200

    def __post_init__(self):
        if min(
            self.wafer_cost,
            self.package_base,
            self.package_per_mm2,
            self.nre_per_chiplet_design,
            self.nre_per_package_design,
            self.volume,
            self.networks_sharing_pool,
        ) <= 0:
            raise ValueError("cost parameters must be positive")
        if self.defect_density < 0:
            raise ValueError("defect density must be >= 0")
        if self.clustering_alpha < 1:
            raise ValueError("clustering alpha must be >= 1")


BONDING_MULTIPLIERS = {"2D": 1.0, "2.5D": 1.6}


def gross_dies_per_wafer(area_mm2: float, diameter_mm: float = WAFER_DIAMETER_MM) -> float:
    """Standard dies-per-wafer estimate with edge loss correction."""
    if area_mm2 <= 0:
        raise ValueError("area must be > 0")
    r = diameter_mm / 2.0
    return math.pi * r * r / area_mm2 - math.pi * diameter_mm / math.sqrt(2.0 * area_mm2)


def die_yield(area_mm2: float, params: CostParams) -> float:
    if area_mm2 <= 0:
        raise ValueError("area must be > 0")
    d0, a = params.defect_density, params.clustering_alpha
    return (1.0 + area_mm2 * d0 / a) ** (-a)


def die_cost(area_mm2: float, params: CostParams) -> float:
    if area_mm2 > RETICLE_LIMIT_MM2:
        raise ValueError(f"die area {area_mm2:.1f} mm^2 exceeds reticle limit")
    k_die = params.wafer_cost / gross_dies_per_wafer(area_mm2)
    return k_die / die_yield(area_mm2, params)


def design_re_cost(design, params: CostParams, interposer_area_mm2: float | None = None) -> float:
    """Recurring per-unit cost: dies, memory modules, and packaging.

    ``design`` is a solved pipeline (stagesolver.AcceleratorDesign) whose
    stage payloads are perfmodel.StageCandidate instances.  Without a
    placement, interposer area defaults to the summed chiplet footprint.
    """
    total = 0.0
    area = 0.0
    for stage in design.stages:
        cand = stage.payload
        total += die_cost(cand.chiplet.area_mm2, params) * cand.tp
        total += cand.memory.dollar_cost
        area += cand.chiplet.area_mm2 * cand.tp
    if interposer_area_mm2 is not None:
        area = interposer_area_mm2
    total += params.bonding_multiplier * (
        params.package_base + params.package_per_mm2 * area
    )
    return total


def ecosystem_designs(designs) -> set:
    """Unique chiplet silicon designs used across a set of solved pipelines."""
    out = set()
    for design in designs:
        for stage in design.stages:
            out.add(stage.payload.chiplet.design_key)
    return out


def amortized_unit_cost(
    design,
    ecosystem: set,
    params: CostParams,
    interposer_area_mm2: float | None = None,
) -> float:
    """C_unit = C_RE + C_NRE / V, with chiplet-design NRE shared across the
    networks using the pool."""
    if params.volume < 1:
        raise ValueError("volume must be >= 1")
    nre = (
        params.nre_per_chiplet_design * len(ecosystem)
        + params.nre_per_package_design
    )
    re = design_re_cost(design, params, interposer_area_mm2)
    return re + nre / (params.volume * params.networks_sharing_pool)


@dataclass(frozen=True)
class MetricSet:
    energy: float  # J
    delay: float  # s
    dollar_cost: float  # $

    @property
    def ec(self) -> float:
        return self.energy * self.dollar_cost

    @property
    def edp(self) -> float:
        return self.energy * self.delay

    @property
    def edpc(self) -> float:
        return self.energy * self.delay * self.dollar_cost

    def as_dict(self) -> dict:
        return {
            "energy": self.energy,
            "delay": self.delay,
            "cost": self.dollar_cost,
            "ec": self.ec,
            "edp": self.edp,
            "edpc": self.edpc,
        }


def metrics(
    design,
    cost_mode: str = "re",
    latency_mode: str = "period",
    params: CostParams | None = None,
    ecosystem: set | None = None,
    interposer_area_mm2: float | None = None,
) -> MetricSet:
    """Aggregate metrics of a solved pipeline at its chosen period.

    ``latency_mode``: "period" reports the pipeline period T (throughput
    view); "e2e" reports P*T for a single input traversing all stages.
    Cost includes memory modules and interposer packaging.
    """
    if params is None:
        params = CostParams()
    t = design.period
    # Stage options are normalized to a common pipeline window, so summing
    # their dynamic/static terms matches the solver objective exactly.
    energy = sum(s.e_dyn + s.p_static * t for s in design.stages)
    if latency_mode == "period":
        delay = t
    elif latency_mode == "e2e":
        delay = len(design.stages) * t
    else:
        raise ValueError(f"unknown latency mode {latency_mode!r}")
    if cost_mode == "re":
        cost = design_re_cost(design, params, interposer_area_mm2)
    elif cost_mode == "amortized":
        eco = ecosystem if ecosystem is not None else ecosystem_designs([design])
        cost = amortized_unit_cost(design, eco, params, interposer_area_mm2)
    else:
        raise ValueError(f"unknown cost mode {cost_mode!r}")
    return MetricSet(energy=energy, delay=delay, dollar_cost=cost)
