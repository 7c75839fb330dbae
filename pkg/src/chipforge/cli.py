"""Command-line surface: end-to-end search runs, paradigm comparisons,
cost breakdowns, stage solving, simulation, and place-and-route.

All outputs are plain CSV/JSON/text written under --out; a fixed seed
reproduces every file byte for byte, and manifest.json carries enough
to re-run the command.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

from . import scenarios, workload
from .config import ConfigError, ToolConfig, dump_config, load_config
from .costmodel import (
    CostParams,
    design_re_cost,
    die_cost,
    ecosystem_designs,
    metrics,
)
from .fusion import (
    GAParams,
    InfeasibleWorkload,
    SearchContext,
    ga_search,
)
from .layout import LayoutInfeasible, dump_grid, minimize_footprint, validate
from .perfmodel import (
    DATAFLOWS,
    GLB_SCALES,
    PE_SCALES,
    enumerate_candidates,
    partition,
    scaled_chiplet,
)
from .pipesim import SimConfig, simulate
from .poolsearch import ChipletPool, NetworkTarget, sa_search
from .stagesolver import NoFeasibleDesign, cht_search, option_from_candidate
from .workload import WorkloadError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

PARADIGMS = (
    "homogeneous-asic-all",
    "homogeneous-nsic",
    "heterogeneous-pool",
    "heterogeneous-unconstrained",
)

_DEFAULT_POOL_SEEDS = (
    ("RS", 1, 1),
    ("WS", 2, 4),
    ("OS", 1, 1),
    ("WS", 4, 16),
    ("RS", 2, 4),
    ("OS", 2, 4),
    ("WS", 1, 1),
    ("RS", 4, 9),
)


class Infeasible(RuntimeError):
    """A search layer proved (or failed to disprove) infeasibility."""

    def __init__(self, layer: str, message: str):
        super().__init__(f"[{layer}] {message}")
        self.layer = layer


# ---------------------------------------------------------------------------
# deterministic writers


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x):
    """Stable scalar formatting for CSV cells."""
    if isinstance(x, float):
        return repr(x)
    return x


# ---------------------------------------------------------------------------
# shared plumbing


def _load_config(args) -> ToolConfig:
    cfg = load_config(args.config) if args.config else ToolConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.objective is not None:
        cfg.objective = args.objective
    return cfg


def _targets(cfg) -> tuple[list[str], list[NetworkTarget], object]:
    """(names, search targets, scenario or None) from the configuration."""
    if cfg.scenario_kind:
        sc = scenarios.build_scenario(cfg.scenario_kind, dict(cfg.scenario_params))
        names, targets = [], []
        for sg in sc.graphs:
            names.append(sg.name)
            targets.append(
                NetworkTarget(
                    sg.graph,
                    batches=sc.batches,
                    latency_cap=sg.limit,
                    latency_mode=sg.latency_mode,
                )
            )
        return names, targets, sc
    names, targets = [], []
    for spec in cfg.networks:
        graph = (
            workload.load_network(spec.path)
            if spec.path
            else workload.load_bundled(spec.name)
        )
        targets.append(
            NetworkTarget(
                graph,
                t_max=spec.t_max,
                batches=spec.batches or cfg.batches,
                latency_cap=spec.latency_cap,
                latency_mode=spec.latency_mode,
            )
        )
        names.append(spec.name)
    if not targets:
        raise ConfigError("no networks configured (add network/scenario records)")
    return names, targets, None


def _base_context(cfg) -> SearchContext:
    return SearchContext(
        graph=None,
        pool=None,
        memories=list(cfg.memories),
        objective=cfg.objective,
        tps=cfg.tps,
        batches=cfg.batches,
        affinity_table=cfg.affinity,
        chiplet_cost_fn=lambda area: die_cost(area, cfg.cost),
    )


def _initial_pool(cfg, budget: int | None = None) -> ChipletPool:
    if cfg.chiplets:
        return ChipletPool(tuple(cfg.chiplets))
    budget = budget or cfg.pool_budget
    members = tuple(scaled_chiplet(*t) for t in _DEFAULT_POOL_SEEDS[:budget])
    return ChipletPool(members)


def _manifest(args, cfg, names, scenario) -> dict:
    return {
        "command": args.command,
        "config": dump_config(cfg),
        "cost_mode": getattr(args, "cost_mode", "re"),
        "networks": names,
        "objective": cfg.objective,
        "scenario": scenario.kind if scenario else None,
        "seed": cfg.seed,
    }


def _ga_best(target: NetworkTarget, pool, base, params, seed, name):
    try:
        return ga_search(target.context(pool, base), params, seed=seed)
    except InfeasibleWorkload as exc:
        raise Infeasible(
            "optimizer-ga",
            f"network {name!r}: the capacity gates and latency constraint "
            f"filter rejected every candidate ({exc})",
        ) from exc


def _stage_rows(name, design):
    rows = []
    for i, stage in enumerate(design.stages):
        c = stage.payload
        rows.append(
            [
                name,
                i,
                c.chiplet.id,
                c.chiplet.dataflow,
                c.memory.kind,
                c.batch,
                c.tp,
                _num(c.t_cmp),
                _num(c.e_dyn),
                _num(c.p_static),
                _num(c.dollar_cost),
            ]
        )
    return rows


_STAGE_HEADER = [
    "network",
    "stage",
    "chiplet",
    "dataflow",
    "memory",
    "batch",
    "tp",
    "t_cmp_s",
    "e_dyn_j",
    "p_static_w",
    "cost_usd",
]


# ---------------------------------------------------------------------------
# subcommands


def cmd_dse(args, cfg: ToolConfig) -> int:
    names, targets, scenario = _targets(cfg)
    base = _base_context(cfg)
    pool0 = _initial_pool(cfg, args.pool_budget)
    trace: list = []
    best_pool, designs, score = sa_search(
        pool0, targets, base, cfg.sa, seed=cfg.seed, trace=trace
    )
    for name, design in zip(names, designs):
        if design is None:
            raise Infeasible(
                "optimizer-sa",
                f"network {name!r} is unmappable on every explored pool "
                "(capacity gates or latency constraint filter)",
            )

    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, cfg, names, scenario))
    _write_text(
        os.path.join(out, "pool.txt"),
        "".join(
            f"chiplet {m.id} dataflow={m.dataflow} pe_rows={m.pe_rows} "
            f"pe_cols={m.pe_cols} glb_bytes={m.glb_bytes}\n"
            for m in best_pool.members
        ),
    )
    _write_csv(
        os.path.join(out, "anneal_trace.csv"),
        ["level", "temperature", "score", "accepted"],
        [[s.level, _num(s.temperature), _num(s.score), int(s.accepted)] for s in trace],
    )

    stage_rows = []
    metric_rows = []
    eco = ecosystem_designs(designs)
    report: dict = {"pool": best_pool.id, "score": score, "networks": {}}
    for name, target, design in zip(names, targets, designs):
        stage_rows.extend(_stage_rows(name, design))
        try:
            placement = minimize_footprint(design, max_side=cfg.max_side)
        except LayoutInfeasible as exc:
            raise Infeasible("pnr", f"network {name!r}: {exc}") from exc
        _write_text(os.path.join(out, f"layout_{name}.txt"), dump_grid(placement) + "\n")
        ms = metrics(
            design,
            cost_mode=args.cost_mode,
            latency_mode=target.latency_mode if target.latency_cap else "period",
            params=cfg.cost,
            ecosystem=eco,
            interposer_area_mm2=placement.area_mm2,
        )
        metric_rows.append(
            [name, _num(ms.energy), _num(ms.delay), _num(ms.dollar_cost),
             _num(ms.ec), _num(ms.edp), _num(ms.edpc)]
        )
        entry = {
            "interposer_area_mm2": placement.area_mm2,
            "metrics": ms.as_dict(),
            "objective": design.objective,
            "period_s": design.period,
            "stages": len(design.stages),
        }
        if scenario is not None:
            rep = scenarios.check_constraints({name: design}, scenario)
            entry["constraints"] = [
                {
                    "kind": c.kind,
                    "limit_s": c.limit,
                    "actual_s": c.actual,
                    "slack_s": c.slack,
                    "ok": c.ok,
                }
                for c in rep.checks
            ]
            if not rep.passed:
                raise Infeasible(
                    "scenarios",
                    f"network {name!r} violates "
                    + ", ".join(c.kind for c in rep.violations),
                )
        report["networks"][name] = entry
    _write_csv(os.path.join(out, "designs.csv"), _STAGE_HEADER, stage_rows)
    _write_csv(
        os.path.join(out, "metrics.csv"),
        ["network", "energy_j", "delay_s", "cost_usd", "ec", "edp", "edpc"],
        metric_rows,
    )
    _write_json(os.path.join(out, "report.json"), report)
    return EXIT_OK


def _full_menu():
    return [
        scaled_chiplet(df, p, g)
        for df in DATAFLOWS
        for p in PE_SCALES
        for g in GLB_SCALES
    ]


def _geomean(values):
    return math.exp(sum(math.log(v) for v in values) / len(values))


def cmd_compare(args, cfg: ToolConfig) -> int:
    names, targets, scenario = _targets(cfg)
    paradigms = args.paradigms or list(PARADIGMS)
    for p in paradigms:
        if p not in PARADIGMS:
            raise ConfigError(f"unknown paradigm {p!r}")
    base = _base_context(cfg)
    menu = _full_menu()

    def best_single(target, name):
        """Best single-chiplet design for one network over the whole menu."""
        best = None
        for c in menu:
            try:
                _, design = ga_search(
                    target.context([c], base), cfg.ga, seed=cfg.seed
                )
            except InfeasibleWorkload:
                continue
            if best is None or design.objective < best[1].objective:
                best = (c, design)
        if best is None:
            raise Infeasible(
                "optimizer-ga", f"network {name!r} is unmappable on every menu chiplet"
            )
        return best

    # homogeneous-asic-all: one shared chiplet, best cross-network geomean.
    shared_best = None
    for c in menu:
        designs = []
        try:
            for name, target in zip(names, targets):
                _, d = ga_search(target.context([c], base), cfg.ga, seed=cfg.seed)
                designs.append(d)
        except InfeasibleWorkload:
            continue
        g = _geomean([d.objective for d in designs])
        if shared_best is None or g < shared_best[0]:
            shared_best = (g, c, designs)
    if shared_best is None:
        raise Infeasible(
            "optimizer-ga", "no single menu chiplet can serve every network"
        )
    baseline = {name: d for name, d in zip(names, shared_best[2])}

    nsic = {name: best_single(t, name) for name, t in zip(names, targets)}

    results: dict = {"homogeneous-asic-all": baseline}
    if "homogeneous-nsic" in paradigms:
        results["homogeneous-nsic"] = {n: d for n, (c, d) in nsic.items()}
    if "heterogeneous-pool" in paradigms:
        # seed the pool with the per-network winners so the budgeted search
        # starts inside the space that dominates homogeneous-nsic
        seed_members: list = []
        for c, _ in nsic.values():
            if all(m.design_key != c.design_key for m in seed_members):
                seed_members.append(c)
        for t in _DEFAULT_POOL_SEEDS:
            if len(seed_members) >= cfg.pool_budget:
                break
            c = scaled_chiplet(*t)
            if all(m.design_key != c.design_key for m in seed_members):
                seed_members.append(c)
        pool0 = ChipletPool(tuple(seed_members[: cfg.pool_budget]))
        _, pool_designs, _ = sa_search(pool0, targets, base, cfg.sa, seed=cfg.seed)
        per_net = {}
        for name, d in zip(names, pool_designs):
            if d is None:
                raise Infeasible("optimizer-sa", f"network {name!r} unmappable")
            nd = nsic[name][1]
            per_net[name] = d if d.objective <= nd.objective else nd
        results["heterogeneous-pool"] = per_net
    if "heterogeneous-unconstrained" in paradigms:
        per_net = {}
        for name, target in zip(names, targets):
            _, d = _ga_best(target, menu, base, cfg.ga, cfg.seed, name)
            contenders = [d, nsic[name][1]]
            if "heterogeneous-pool" in results:
                contenders.append(results["heterogeneous-pool"][name])
            per_net[name] = min(contenders, key=lambda x: x.objective)
        results["heterogeneous-unconstrained"] = per_net

    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, cfg, names, scenario))
    header = ["paradigm", "network", "energy", "delay", "cost", "ec", "edp", "edpc"]
    rows = []
    metric_cache: dict = {}
    for paradigm in PARADIGMS:
        if paradigm not in results:
            continue
        for name in names:
            d = results[paradigm][name]
            ms = metrics(d, cost_mode=args.cost_mode, params=cfg.cost).as_dict()
            ref = metric_cache.setdefault(
                name,
                metrics(baseline[name], cost_mode=args.cost_mode, params=cfg.cost).as_dict(),
            )
            rows.append(
                [paradigm, name] + [_num(ms[k] / ref[k]) for k in header[2:]]
            )
    if "heterogeneous-pool" in results and "heterogeneous-unconstrained" in results:
        for name in names:
            mp = metrics(
                results["heterogeneous-pool"][name], cost_mode=args.cost_mode, params=cfg.cost
            ).as_dict()
            mu = metrics(
                results["heterogeneous-unconstrained"][name],
                cost_mode=args.cost_mode,
                params=cfg.cost,
            ).as_dict()
            rows.append(
                ["gap-pool-vs-unconstrained", name]
                + [_num(mp[k] / mu[k]) for k in header[2:]]
            )
    _write_csv(os.path.join(out, "compare.csv"), header, rows)
    return EXIT_OK


_COST_VOLUMES = (1e6, 2e6, 3e6)


def cost_breakdown(design, ecosystem, params: CostParams, volume: float, interposer_area=None):
    """Per-unit dollar columns: dies, memories, packaging, amortized NRE."""
    die = sum(die_cost(s.payload.chiplet.area_mm2, params) * s.payload.tp for s in design.stages)
    mem = sum(s.payload.memory.dollar_cost for s in design.stages)
    area = interposer_area
    if area is None:
        area = sum(s.payload.chiplet.area_mm2 * s.payload.tp for s in design.stages)
    pkg = params.bonding_multiplier * (params.package_base + params.package_per_mm2 * area)
    nre = (
        params.nre_per_chiplet_design * len(ecosystem)
        + params.nre_per_package_design
    ) / (volume * params.networks_sharing_pool)
    return {"die": die, "memory": mem, "packaging": pkg, "nre": nre,
            "total": die + mem + pkg + nre}


def cmd_cost(args, cfg: ToolConfig) -> int:
    names, targets, scenario = _targets(cfg)
    base = _base_context(cfg)
    pool = _initial_pool(cfg)
    designs = [
        _ga_best(t, pool, base, cfg.ga, cfg.seed, n)[1]
        for n, t in zip(names, targets)
    ]
    eco = ecosystem_designs(designs)
    rows = []
    for name, design in zip(names, designs):
        for volume in _COST_VOLUMES:
            b = cost_breakdown(design, eco, replace(cfg.cost, volume=volume), volume)
            rows.append(
                [name, int(volume), _num(b["die"]), _num(b["memory"]),
                 _num(b["packaging"]), _num(b["nre"]), _num(b["total"])]
            )
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, cfg, names, scenario))
    _write_csv(
        os.path.join(out, "cost.csv"),
        ["network", "volume", "die_usd", "memory_usd", "packaging_usd",
         "nre_usd", "total_usd"],
        rows,
    )
    return EXIT_OK


def _single_target(args, cfg):
    names, targets, scenario = _targets(cfg)
    if args.network:
        if args.network not in names:
            raise ConfigError(f"unknown network {args.network!r}; have {names}")
        i = names.index(args.network)
    else:
        i = 0
    return names[i], targets[i], scenario


def cmd_solve_stages(args, cfg: ToolConfig) -> int:
    name, target, scenario = _single_target(args, cfg)
    base = _base_context(cfg)
    pool = _initial_pool(cfg)
    ctx = target.context(pool, base)
    n = len(ctx.graph.nodes)
    groups = partition(ctx.graph, tuple(range(n - 1)))
    window = max(target.batches)
    all_rows = []
    options = []
    for grp in groups:
        cands = enumerate_candidates(
            grp,
            ctx.chiplets,
            memories=ctx.memories,
            batches=target.batches,
            tps=cfg.tps,
            affinity_table=cfg.affinity,
            chiplet_cost_fn=ctx.chiplet_cost_fn,
        )
        opts = [option_from_candidate(c, window) for c in cands]
        options.append(opts)
        for c in cands:
            all_rows.append(
                [name, grp.group_id, c.chiplet.id, c.chiplet.dataflow, c.memory.kind,
                 c.batch, c.tp, _num(c.t_cmp), _num(c.compute_time),
                 _num(c.memory_time), _num(c.e_dyn), _num(c.p_static),
                 _num(c.dollar_cost)]
            )
    if any(not o for o in options):
        raise Infeasible(
            "perfmodel", f"network {name!r}: a stage has no feasible candidate"
        )
    t_max = target.t_max
    if target.latency_cap is not None:
        cap = target.latency_cap
        if target.latency_mode == "e2e":
            cap = cap / len(groups)
        t_max = cap if t_max is None else min(t_max, cap)
    try:
        design = cht_search(options, cfg.objective, t_max)
    except NoFeasibleDesign as exc:
        raise Infeasible(
            "optimizer-cht",
            f"network {name!r}: latency constraint filter left no feasible "
            f"stage tuple ({exc})",
        ) from exc
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, cfg, [name], scenario))
    _write_csv(
        os.path.join(out, "candidates.csv"),
        ["network", "stage", "chiplet", "dataflow", "memory", "batch", "tp",
         "t_cmp_s", "compute_s", "memory_s", "e_dyn_j", "p_static_w", "cost_usd"],
        all_rows,
    )
    _write_csv(os.path.join(out, "chosen.csv"), _STAGE_HEADER, _stage_rows(name, design))
    _write_json(
        os.path.join(out, "solution.json"),
        {"network": name, "objective": design.objective,
         "objective_kind": design.objective_kind, "period_s": design.period},
    )
    return EXIT_OK


def cmd_simulate(args, cfg: ToolConfig) -> int:
    name, target, scenario = _single_target(args, cfg)
    base = _base_context(cfg)
    pool = _initial_pool(cfg)
    _, design = _ga_best(target, pool, base, cfg.ga, cfg.seed, name)
    bus_map = None
    if args.shared_bus:
        bus_map = {i: 0 for i in range(len(design.stages))}
    report = simulate(
        SimConfig(design, inputs=cfg.sim_inputs, bus_map=bus_map, tile_bytes=cfg.tile_bytes)
    )
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, cfg, [name], scenario))
    _write_json(
        os.path.join(out, "sim.json"),
        {
            "network": name,
            "inputs": cfg.sim_inputs,
            "shared_bus": bool(args.shared_bus),
            "analytic_period_s": design.period,
            "simulated_period_s": report.steady_period,
            "period_ratio": report.steady_period / design.period,
            "first_output_s": report.first_output_latency,
            "makespan_s": report.makespan,
            "energy_j": report.energy,
            "tiles_transferred": report.tiles_transferred,
        },
    )
    return EXIT_OK


def cmd_pnr(args, cfg: ToolConfig) -> int:
    name, target, scenario = _single_target(args, cfg)
    base = _base_context(cfg)
    pool = _initial_pool(cfg)
    _, design = _ga_best(target, pool, base, cfg.ga, cfg.seed, name)
    try:
        placement = minimize_footprint(design, max_side=cfg.max_side)
    except LayoutInfeasible as exc:
        raise Infeasible("pnr", f"network {name!r}: {exc}") from exc
    violations = validate(placement)
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, cfg, [name], scenario))
    _write_json(
        os.path.join(out, "pnr.json"),
        {
            "network": name,
            "side_units": placement.width,
            "side_mm": placement.width * 0.1,
            "area_mm2": placement.area_mm2,
            "chiplets": len(placement.rects),
            "nets": len(placement.nets),
            "violations": violations,
        },
    )
    if args.dump:
        _write_text(os.path.join(out, "layout.txt"), dump_grid(placement) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument(
        "--objective", choices=("energy", "ec", "edp", "edpc"), default=None
    )
    common.add_argument("--cost-mode", choices=("re", "amortized"), default="re")
    common.add_argument("--out", default="chipforge-out", help="output directory")

    parser = _Parser(prog="chipforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dse", parents=[common], help="full SA/GA/CHT/PnR search")
    p.add_argument("--pool-budget", type=int, default=None)
    p.set_defaults(func=cmd_dse)

    p = sub.add_parser("compare", parents=[common], help="architectural paradigms")
    p.add_argument("paradigms", nargs="*", metavar="PARADIGM")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cost", parents=[common], help="cost breakdown by volume")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("solve-stages", parents=[common], help="stage candidate table")
    p.add_argument("--network", default=None)
    p.set_defaults(func=cmd_solve_stages)

    p = sub.add_parser("simulate", parents=[common], help="pipeline event simulation")
    p.add_argument("--network", default=None)
    p.add_argument("--shared-bus", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pnr", parents=[common], help="place and route one design")
    p.add_argument("--network", default=None)
    p.add_argument("--dump", action="store_true", help="write the layout grid")
    p.set_defaults(func=cmd_pnr)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InfeasibleWorkload, NoFeasibleDesign) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, WorkloadError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
