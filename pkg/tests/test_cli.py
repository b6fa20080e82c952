import json
import subprocess
import sys

import jsonschema
import pytest

from bwk.cli import SUMMARY_SCHEMA, main, read_sweep_csv

CONCRETE = {"generator": "concrete_family", "params": {"c_lb": 0.2, "eps": 0.01, "T": 2000}}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def call(tmp_path, command, cfg, out="out", *extra):
    out_dir = tmp_path / out
    code = main([command, "--config", write_cfg(tmp_path, cfg, f"{out}.json"), "--out", str(out_dir), *extra])
    return code, out_dir


def outputs(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


class TestRun:
    def test_fixed_null(self, tmp_path):
        code, out = call(tmp_path, "run", {"instance": CONCRETE, "policy": {"name": "fixed_null"}, "reps": 3})
        assert code == 0
        doc = json.loads((out / "summary.json").read_text())
        assert doc["summary"]["total_reward_mean"] == 0.0

    def test_schema(self, tmp_path):
        cfg = {"instance": CONCRETE, "policy": {"name": "pruned_ucb_bwk", "params": {"eta": 0.0}},
               "reps": 10, "eps_grid": [0.05, 0.1], "trace_detail": "summary"}
        code, out = call(tmp_path, "run", cfg)
        assert code == 0
        doc = json.loads((out / "summary.json").read_text())
        jsonschema.validate(doc, SUMMARY_SCHEMA)
        assert len(doc["replications"]) == 10 and doc["schema_version"] == 1

    def test_full_traces(self, tmp_path):
        cfg = {"instance": CONCRETE, "policy": {"name": "ucb_bwk", "params": {"eta": 0.0}}, "reps": 2,
               "trace_detail": "full"}
        code, out = call(tmp_path, "run", cfg)
        assert code == 0 and len(list((out / "traces").glob("*.ndjson"))) == 2

    def test_missing_file_exit_2(self, tmp_path):
        code, _ = call(tmp_path, "run", {"instance": {"file": str(tmp_path / "nope.json")},
                                         "policy": {"name": "fixed_null"}})
        assert code == 2

    @pytest.mark.parametrize("cfg", [
        {"instance": CONCRETE},
        {"instance": CONCRETE, "policy": {"name": "bogus"}},
        {"instance": {"generator": "bogus"}, "policy": {"name": "fixed_null"}},
        {"instance": CONCRETE, "policy": {"name": "fixed_null"}, "reps": 0},
        {"instance": CONCRETE, "policy": {"name": "fixed_null"}, "seed": -1},
    ])
    def test_bad_config_exit_2(self, tmp_path, cfg):
        assert call(tmp_path, "run", cfg)[0] == 2

    def test_bad_json_and_usage(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
        assert main(["nonsense"]) == 2

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BWK_OUT_DIR", str(tmp_path / "envout"))
        cfg = write_cfg(tmp_path, {"instance": CONCRETE, "policy": {"name": "fixed_null"}})
        assert main(["run", "--config", cfg]) == 0
        assert (tmp_path / "envout" / "summary.json").is_file()

    def test_threads_do_not_change_bytes(self, tmp_path):
        cfg = {"instance": CONCRETE, "policy": {"name": "pruned_ucb_bwk", "params": {"eta": 0.0}}, "reps": 6}
        _, a = call(tmp_path, "run", cfg, "a", "--threads", "1")
        _, b = call(tmp_path, "run", cfg, "b", "--threads", "4")
        assert outputs(a) == outputs(b)

    def test_module_entry_point(self, tmp_path):
        cfg = write_cfg(tmp_path, {"instance": CONCRETE, "policy": {"name": "fixed_null"}})
        r = subprocess.run([sys.executable, "-m", "bwk.cli", "run", "--config", cfg, "--out",
                            str(tmp_path / "m")], capture_output=True)
        assert r.returncode == 0


class TestSweep:
    def test_rows_and_round_trip(self, tmp_path):
        cfg = {"instance": CONCRETE, "policy": {"name": "pruned_ucb_bwk", "params": {"eta": 0.0}},
               "reps": 4, "horizons": [500, 1000], "eps_grid": [0.1]}
        code, out = call(tmp_path, "sweep", cfg)
        assert code == 0
        rows = read_sweep_csv(out / "sweep.csv")
        mem = json.loads((out / "sweep.json").read_text())["rows"]
        assert len(rows) == 2
        for r, m in zip(rows, mem):
            for k, v in r.items():
                assert v == m[k]

    def test_single_horizon_matches_run(self, tmp_path):
        pol = {"name": "pruned_ucb_bwk", "params": {"eta": 0.0}}
        _, s = call(tmp_path, "sweep", {"instance": CONCRETE, "policy": pol, "reps": 5, "horizons": [2000]}, "s")
        _, r = call(tmp_path, "run", {"instance": CONCRETE, "policy": pol, "reps": 5}, "r")
        row = read_sweep_csv(s / "sweep.csv")[0]
        summ = json.loads((r / "summary.json").read_text())["summary"]
        assert row["regret_mean"] == summ["regret_mean"]

    def test_bad_horizons(self, tmp_path):
        cfg = {"instance": CONCRETE, "policy": {"name": "fixed_null"}, "horizons": [2000, 1000]}
        assert call(tmp_path, "sweep", cfg)[0] == 2


class TestLowerBound:
    def test_report(self, tmp_path):
        params = {"T": 10000, "eps": 0.01}
        cfg = {"pair": {"generator": "deterministic_pair", "params": params},
               "policy": {"name": "ucb_bwk", "params": {"eta": 0.0}}, "reps": 3}
        code, out = call(tmp_path, "lowerbound", cfg)
        doc = json.loads((out / "lowerbound.json").read_text())
        assert code == 0 and doc["pair"]["params"] == params
        import math
        assert math.isfinite(doc["report"]["regret_I"]) and math.isfinite(doc["report"]["regret_I'"])


class TestSensitivity:
    def test_zero_delta(self, tmp_path):
        code, out = call(tmp_path, "sensitivity", {"trials": 7, "delta_fraction": 0.0})
        doc = json.loads((out / "sensitivity.json").read_text())
        assert code == 0 and doc["trials"] == 7 and doc["preserved"] == 7
        assert "gaps" in doc["results"][0]


class TestSemibandit:
    def test_singletons_equal_ordinary(self, tmp_path):
        cfg = {"N": 3, "n": 1, "family": "singletons", "T": 1000, "B_over_T": 0.25, "reps": 3, "eta": 0.0}
        code, out = call(tmp_path, "semibandit", cfg)
        doc = json.loads((out / "semibandit.json").read_text())
        assert code == 0 and "conf_sum_check" in doc
        red, naive = dict(doc["reduced"]), dict(doc["naive"])
        red.pop("policy"), naive.pop("policy")
        assert red == naive

    def test_capacity_exit_2(self, tmp_path):
        cfg = {"N": 20, "n": 10, "family": "all_subsets", "T": 1000, "B_over_T": 0.25}
        assert call(tmp_path, "semibandit", cfg)[0] == 2


class TestGenerate:
    def test_instance_and_pair(self, tmp_path):
        from bwk.model import load_instance
        code, out = call(tmp_path, "generate", {"instance": CONCRETE}, "g1")
        assert code == 0 and load_instance(out / "instance.json").T == 2000
        code, out = call(tmp_path, "generate",
                         {"pair": {"generator": "deterministic_pair", "params": {"T": 10000, "eps": 0.01}}}, "g2")
        assert code == 0 and {p.name for p in out.iterdir()} == {"instance_I.json", "instance_Iprime.json"}

    def test_file_instance_round_trip(self, tmp_path):
        _, g = call(tmp_path, "generate", {"instance": CONCRETE}, "g")
        cfg = {"instance": {"file": str(g / "instance.json")}, "policy": {"name": "fixed_arm", "params": {"arm": 0}}}
        assert call(tmp_path, "run", cfg, "r")[0] == 0
