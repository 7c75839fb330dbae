"""Line-oriented run configuration.

Same surface syntax as the workload files: one record per line, `#`
comments, positional heads followed by key=value pairs.  Every knob has
an embedded default; unknown record kinds or keys are hard errors, and
`dump_config(parse_config(text))` round-trips.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .costmodel import BONDING_MULTIPLIERS, CostParams
from .fusion import GAParams
from .perfmodel import (
    DATAFLOWS,
    DEFAULT_AFFINITY,
    ChipletConfig,
    MemoryModule,
    default_memory_menu,
    scaled_chiplet,
)
from .poolsearch import SAParams

OBJECTIVES = ("energy", "ec", "edp", "edpc")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    """One target network of a DSE run."""

    name: str
    path: str = ""  # file path; empty = bundled graph named `name`
    t_max: float | None = None
    latency_cap: float | None = None
    latency_mode: str = "period"
    batches: tuple[int, ...] | None = None  # None = the search-wide menu


@dataclass
class ToolConfig:
    chiplets: list = field(default_factory=list)  # initial pool; empty = default
    memories: list = field(default_factory=default_memory_menu)
    affinity: dict = field(default_factory=lambda: dict(DEFAULT_AFFINITY))
    cost: CostParams = field(default_factory=CostParams)
    ga: GAParams = field(default_factory=GAParams)
    sa: SAParams = field(default_factory=SAParams)
    objective: str = "energy"
    seed: int = 0
    pool_budget: int = 8
    tps: tuple[int, ...] = (1, 2)
    batches: tuple[int, ...] = (1, 2, 4, 8)
    networks: list = field(default_factory=list)
    scenario_kind: str | None = None
    scenario_params: dict = field(default_factory=dict)
    edge_capacity: int = 4
    max_side: int = 600
    tile_bytes: int = 64 * 1024
    sim_inputs: int = 64


def _to_int(s):
    v = int(s)
    return v


def _to_float(s):
    return float(s)


def _to_bool(s):
    if s in ("1", "true", "yes"):
        return True
    if s in ("0", "false", "no"):
        return False
    raise ConfigError(f"bad boolean {s!r}")


def _to_int_tuple(s):
    try:
        return tuple(int(x) for x in s.split(","))
    except ValueError:
        raise ConfigError(f"bad integer list {s!r}") from None


_SCHEMAS = {
    "chiplet": {
        "dataflow": str,
        "pe_scale": _to_int,
        "glb_scale": _to_int,
        "pe_rows": _to_int,
        "pe_cols": _to_int,
        "glb_bytes": _to_int,
        "frequency": _to_float,
        "e_mac": _to_float,
        "static_power_density": _to_float,
        "area_mm2": _to_float,
    },
    "memory": {
        "bandwidth": _to_float,
        "e_bit": _to_float,
        "capacity": _to_int,
        "cost_per_gb": _to_float,
        "static_power": _to_float,
    },
    "affinity": {"value": _to_float},
    "cost": {
        "wafer_cost": _to_float,
        "defect_density": _to_float,
        "clustering_alpha": _to_float,
        "package_base": _to_float,
        "package_per_mm2": _to_float,
        "bonding": str,
        "nre_per_chiplet_design": _to_float,
        "nre_per_package_design": _to_float,
        "volume": _to_float,
        "networks_sharing_pool": _to_int,
    },
    "ga": {
        "population": _to_int,
        "generations": _to_int,
        "mutation_rate": _to_float,
        "crossover_rate": _to_float,
        "elitism": _to_int,
    },
    "sa": {
        "init_temp": _to_float,
        "cooling_rate": _to_float,
        "iters_per_level": _to_int,
        "temp_floor": _to_float,
        "max_evals": _to_int,
        "worst_case": _to_bool,
    },
    "search": {
        "objective": str,
        "seed": _to_int,
        "pool_budget": _to_int,
        "tps": _to_int_tuple,
        "batches": _to_int_tuple,
    },
    "network": {
        "path": str,
        "t_max": _to_float,
        "latency_cap": _to_float,
        "latency_mode": str,
        "batches": _to_int_tuple,
    },
    "scenario": {
        "deadline": _to_float,
        "backbone": str,
        "k": _to_int,
        "tar": _to_float,
        "speedup_cap": _to_float,
        "ttft": _to_float,
        "tpot": _to_float,
    },
    "layout": {"edge_capacity": _to_int, "max_side": _to_int},
    "sim": {"tile_bytes": _to_int, "inputs": _to_int},
}

# records whose first token after the kind is a positional name
_POSITIONALS = {"chiplet": 1, "memory": 1, "affinity": 2, "network": 1, "scenario": 1}


def _parse_kv(kind, tokens, where):
    schema = _SCHEMAS[kind]
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"{where}: expected key=value, got {tok!r}")
        key, _, raw = tok.partition("=")
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r} for {kind!r}")
        try:
            out[key] = schema[key](raw)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    return out


def _make_chiplet(name, kv, where):
    if "pe_scale" in kv or "glb_scale" in kv:
        if not {"pe_scale", "glb_scale", "dataflow"} <= set(kv):
            raise ConfigError(f"{where}: menu chiplet needs dataflow, pe_scale, glb_scale")
        base = scaled_chiplet(kv["dataflow"], kv["pe_scale"], kv["glb_scale"])
        return replace(base, id=name)
    try:
        return ChipletConfig(id=name, **kv)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str) -> ToolConfig:
    cfg = ToolConfig()
    cost_kv: dict = {}
    ga_kv: dict = {}
    sa_kv: dict = {}
    memories_replaced = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        parts = line.split()
        kind = parts[0]
        if kind not in _SCHEMAS:
            raise ConfigError(f"{where}: unknown record kind {kind!r}")
        n_pos = _POSITIONALS.get(kind, 0)
        if len(parts) < 1 + n_pos:
            raise ConfigError(f"{where}: {kind!r} needs {n_pos} positional field(s)")
        pos = parts[1 : 1 + n_pos]
        kv = _parse_kv(kind, parts[1 + n_pos :], where)
        if kind == "chiplet":
            cfg.chiplets.append(_make_chiplet(pos[0], kv, where))
        elif kind == "memory":
            missing = {"bandwidth", "e_bit", "capacity", "cost_per_gb"} - set(kv)
            if missing:
                raise ConfigError(f"{where}: memory missing {sorted(missing)}")
            mod = MemoryModule(
                pos[0],
                kv["bandwidth"],
                kv["e_bit"],
                kv["capacity"],
                kv["cost_per_gb"],
                kv.get("static_power", 0.0),
            )
            if not memories_replaced:
                cfg.memories = []
                memories_replaced = True
            cfg.memories.append(mod)
        elif kind == "affinity":
            op_kind, dataflow = pos
            if dataflow not in DATAFLOWS:
                raise ConfigError(f"{where}: unknown dataflow {dataflow!r}")
            if "value" not in kv:
                raise ConfigError(f"{where}: affinity needs value=")
            cfg.affinity[(op_kind, dataflow)] = kv["value"]
        elif kind == "cost":
            if "bonding" in kv:
                tech = kv.pop("bonding")
                if tech not in BONDING_MULTIPLIERS:
                    raise ConfigError(f"{where}: unknown bonding tech {tech!r}")
                kv["bonding_multiplier"] = BONDING_MULTIPLIERS[tech]
            cost_kv.update(kv)
        elif kind == "ga":
            ga_kv.update(kv)
        elif kind == "sa":
            sa_kv.update(kv)
        elif kind == "search":
            for key, val in kv.items():
                if key == "objective" and val not in OBJECTIVES:
                    raise ConfigError(f"{where}: unknown objective {val!r}")
                setattr(cfg, key if key != "objective" else "objective", val)
        elif kind == "network":
            cfg.networks.append(NetworkSpec(pos[0], **kv))
        elif kind == "scenario":
            cfg.scenario_kind = pos[0]
            cfg.scenario_params.update(kv)
        elif kind == "layout":
            cfg.edge_capacity = kv.get("edge_capacity", cfg.edge_capacity)
            cfg.max_side = kv.get("max_side", cfg.max_side)
        elif kind == "sim":
            cfg.tile_bytes = kv.get("tile_bytes", cfg.tile_bytes)
            cfg.sim_inputs = kv.get("inputs", cfg.sim_inputs)
    try:
        if cost_kv:
            cfg.cost = replace(CostParams(), **cost_kv)
        if ga_kv:
            cfg.ga = replace(GAParams(), **ga_kv)
        if sa_kv:
            cfg.sa = replace(SAParams(), **sa_kv)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ToolConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ToolConfig) -> str:
    """Canonical text form covering every knob (parse_config inverse)."""
    lines = ["# chipforge run configuration"]
    for c in cfg.chiplets:
        lines.append(
            f"chiplet {c.id} dataflow={c.dataflow} pe_rows={c.pe_rows} "
            f"pe_cols={c.pe_cols} glb_bytes={c.glb_bytes} frequency={_fmt(c.frequency)} "
            f"e_mac={_fmt(c.e_mac)} static_power_density={_fmt(c.static_power_density)} "
            f"area_mm2={_fmt(c.area_mm2)}"
        )
    for m in cfg.memories:
        lines.append(
            f"memory {m.kind} bandwidth={_fmt(m.bandwidth)} e_bit={_fmt(m.e_bit)} "
            f"capacity={m.capacity} cost_per_gb={_fmt(m.dollar_cost_per_gb)} "
            f"static_power={_fmt(m.static_power)}"
        )
    for (op_kind, dataflow), v in sorted(cfg.affinity.items()):
        lines.append(f"affinity {op_kind} {dataflow} value={_fmt(v)}")
    p = cfg.cost
    lines.append(
        "cost "
        f"wafer_cost={_fmt(p.wafer_cost)} defect_density={_fmt(p.defect_density)} "
        f"clustering_alpha={_fmt(p.clustering_alpha)} package_base={_fmt(p.package_base)} "
        f"package_per_mm2={_fmt(p.package_per_mm2)} "
        f"nre_per_chiplet_design={_fmt(p.nre_per_chiplet_design)} "
        f"nre_per_package_design={_fmt(p.nre_per_package_design)} "
        f"volume={_fmt(p.volume)} networks_sharing_pool={p.networks_sharing_pool}"
    )
    g = cfg.ga
    lines.append(
        f"ga population={g.population} generations={g.generations} "
        f"mutation_rate={_fmt(g.mutation_rate)} crossover_rate={_fmt(g.crossover_rate)} "
        f"elitism={g.elitism}"
    )
    s = cfg.sa
    sa_line = (
        f"sa init_temp={_fmt(s.init_temp)} cooling_rate={_fmt(s.cooling_rate)} "
        f"iters_per_level={s.iters_per_level} temp_floor={_fmt(s.temp_floor)} "
        f"worst_case={_fmt(s.worst_case)}"
    )
    if s.max_evals is not None:
        sa_line += f" max_evals={s.max_evals}"
    lines.append(sa_line)
    lines.append(
        f"search objective={cfg.objective} seed={cfg.seed} pool_budget={cfg.pool_budget} "
        f"tps={_fmt(cfg.tps)} batches={_fmt(cfg.batches)}"
    )
    for net in cfg.networks:
        ln = f"network {net.name}"
        if net.path:
            ln += f" path={net.path}"
        if net.t_max is not None:
            ln += f" t_max={_fmt(net.t_max)}"
        if net.latency_cap is not None:
            ln += f" latency_cap={_fmt(net.latency_cap)} latency_mode={net.latency_mode}"
        if net.batches is not None:
            ln += f" batches={_fmt(net.batches)}"
        lines.append(ln)
    if cfg.scenario_kind:
        ln = f"scenario {cfg.scenario_kind}"
        for key, val in sorted(cfg.scenario_params.items()):
            ln += f" {key}={_fmt(val)}"
        lines.append(ln)
    lines.append(f"layout edge_capacity={cfg.edge_capacity} max_side={cfg.max_side}")
    lines.append(f"sim tile_bytes={cfg.tile_bytes} inputs={cfg.sim_inputs}")
    return "\n".join(lines) + "\n"
