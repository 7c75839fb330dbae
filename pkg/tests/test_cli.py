import csv
import json
import subprocess
import sys

import pytest

from chipforge.cli import main

FAST_CFG = """\
ga population=6 generations=3
sa iters_per_level=1 temp_floor=0.9 max_evals=2
search pool_budget=2 batches=1,2
network toy_chain
network toy_decode
sim inputs=16
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run_cli(args):
    return main(list(args))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestDse:
    def test_bundle_and_determinism(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli(["dse", "--config", cfg, "--out", str(out_a)]) == 0
        assert run_cli(["dse", "--config", cfg, "--out", str(out_b)]) == 0
        names = sorted(p.name for p in out_a.iterdir())
        assert {
            "manifest.json",
            "pool.txt",
            "anneal_trace.csv",
            "designs.csv",
            "metrics.csv",
            "report.json",
        } <= set(names)
        for name in names:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_seed_changes_manifest_only_coherently(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out = tmp_path / "o"
        run_cli(["dse", "--config", cfg, "--seed", "3", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3

    def test_scenario_violation_is_infeasible_exit(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path,
            "ga population=6 generations=3\n"
            "sa iters_per_level=1 temp_floor=0.9 max_evals=1\n"
            "search pool_budget=2\n"
            "scenario chatbot ttft=1e-6\n",
        )
        code = run_cli(["dse", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "infeasible" in err
        assert "constraint" in err  # names the failing filter


class TestCompare:
    def test_baseline_normalized_to_one(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out = tmp_path / "o"
        assert run_cli(["compare", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "compare.csv")
        header, body = rows[0], rows[1:]
        by_paradigm = {r[0]: r for r in body}
        base = by_paradigm["homogeneous-asic-all"]
        for col in range(1, len(header)):
            if header[col].startswith("norm_"):
                assert float(base[col]) == 1.0
        order = [r[0] for r in body]
        assert order.index("homogeneous-asic-all") == 0


class TestCost:
    def test_nre_amortizes_with_volume(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out = tmp_path / "o"
        assert run_cli(["cost", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "cost.csv")
        header = rows[0]
        vol_i, nre_i = header.index("volume"), header.index("nre_usd")
        die_i = header.index("die_usd")
        by_net = {}
        for r in rows[1:]:
            by_net.setdefault(r[0], []).append(r)
        for recs in by_net.values():
            recs.sort(key=lambda r: float(r[vol_i]))
            nres = [float(r[nre_i]) for r in recs]
            assert nres == sorted(nres, reverse=True) and nres[0] > nres[-1]
            dies = {r[die_i] for r in recs}
            assert len(dies) == 1  # die cost is volume independent


class TestSingleNetworkCommands:
    def test_solve_stages_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out = tmp_path / "o"
        code = run_cli(
            ["solve-stages", "--config", cfg, "--network", "toy_chain", "--out", str(out)]
        )
        assert code == 0
        sol = json.loads((out / "solution.json").read_text())
        assert sol["objective"] > 0 and sol["period_s"] > 0
        chosen = read_csv(out / "chosen.csv")
        candidates = read_csv(out / "candidates.csv")
        assert len(chosen) >= 2  # header plus at least one stage
        assert len(candidates) >= len(chosen)

    def test_simulate_close_to_analytic(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out = tmp_path / "o"
        code = run_cli(
            ["simulate", "--config", cfg, "--network", "toy_chain", "--out", str(out)]
        )
        assert code == 0
        sim = json.loads((out / "sim.json").read_text())
        assert sim["period_ratio"] == pytest.approx(1.0, rel=0.01)

    def test_pnr_valid(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_CFG)
        out = tmp_path / "o"
        code = run_cli(
            ["pnr", "--config", cfg, "--network", "toy_decode", "--dump", "--out", str(out)]
        )
        assert code == 0
        pnr = json.loads((out / "pnr.json").read_text())
        assert pnr["violations"] == []


class TestExitCodes:
    def test_missing_config_is_error(self, tmp_path):
        assert run_cli(["dse", "--config", str(tmp_path / "nope.cfg")]) == 1

    def test_bad_config_is_error(self, tmp_path):
        cfg = write_cfg(tmp_path, "widget oops\n")
        assert run_cli(["dse", "--config", cfg, "--out", str(tmp_path / "o")]) == 1

    def test_unknown_command_is_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "chipforge.cli", "frobnicate"],
            capture_output=True,
        )
        assert proc.returncode == 1

    def test_infeasible_latency_is_exit_two(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path,
            "ga population=4 generations=2\n"
            "sa iters_per_level=1 temp_floor=0.9 max_evals=1\n"
            "search pool_budget=1\nnetwork toy_chain t_max=1e-12\n",
        )
        code = run_cli(["dse", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        assert "latency constraint" in capsys.readouterr().err
