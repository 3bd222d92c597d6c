import json

import pytest

from lorachain import checks, cli
from lorachain.costmodel import CostReport
from lorachain.selector import PairPlan

SHAPE = ["--b", "2", "--s", "100", "--i", "512", "--o", "512", "--r", "32"]


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_flops_json_example(capsys):
    code, out, _ = run(capsys, "flops", *SHAPE, "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["forward_flops"]["forward1"] == 117964800
    assert doc["forward_flops"]["forward2"] == 121634816
    assert CostReport.from_dict(doc).to_dict() == doc


def test_flops_table(capsys):
    code, out, err = run(capsys, "flops", *SHAPE)
    assert code == 0 and not err
    assert "117,964,800" in out and "backward8" in out


def test_verify_exits_zero(capsys):
    code, out, _ = run(capsys, "verify", "--trials", "50", "--seed", "1",
                       "--dominance-samples", "2000")
    assert code == 0
    assert out.count("PASS") == 7 and "FAIL" not in out


def test_verify_failure_exit_code(capsys, monkeypatch):
    def failing(*args, **kwargs):
        return [checks.CheckResult("gradient equivalence", False, "forced")]
    monkeypatch.setattr(checks, "run_verification", failing)
    code, out, _ = run(capsys, "verify", "--json")
    assert code == 4
    assert json.loads(out)["passed"] is False


def test_select_round_trip(capsys):
    code, out, err = run(capsys, "select", *SHAPE, "--json")
    assert code == 0 and not err
    doc = json.loads(out)
    plan = PairPlan.from_dict(doc)
    assert (plan.forward_choice.value, plan.backward_choice.value) == ("F1", "B1")
    assert plan.to_dict() == doc


def test_select_warns_without_param_reduction(capsys):
    code, out, err = run(capsys, "select", "--b", "1", "--s", "1", "--i", "2", "--o", "2",
                         "--r", "1", "--json")
    assert code == 0
    assert json.loads(out)["parameter_reduction"] is False
    assert "warning" in err


def test_select_by_time(capsys):
    code, out, _ = run(capsys, "select", "--b", "1", "--s", "4", "--i", "64", "--o", "64",
                       "--r", "8", "--criterion", "time", "--repeats", "3", "--json")
    assert code == 0
    assert json.loads(out)["criterion"] == "time"


@pytest.mark.parametrize("argv", [
    [],
    ["flops", "--b", "2"],
    ["flops", *SHAPE[:-1], "0"],
    ["select", *SHAPE, "--criterion", "luck"],
    ["bench", *SHAPE, "--repeats", "1"],
    ["map", "--axis", "embed-rank", "--out", "x.csv"],
    ["map", "--axis", "batch-seq", "--out", "x.csv", "--x-range", "1:2"],
])
def test_usage_errors(capsys, argv):
    code, out, _ = run(capsys, *argv)
    assert code == 2
    assert out == ""


def test_overflow_exit_code(capsys):
    big = ["--b", str(2**20), "--s", str(2**20), "--i", str(2**20), "--o", str(2**20), "--r", "8"]
    code, out, err = run(capsys, "flops", *big, "--json")
    assert code == 3
    assert out == "" and "error" in err


def test_io_errors(capsys, tmp_path):
    code, _, _ = run(capsys, "plan", "--layers", str(tmp_path / "nope.json"), "--b", "1",
                     "--s", "1", "--r", "1")
    assert code == 5
    code, _, _ = run(capsys, "map", "--axis", "embed-rank", "--b", "1", "--s", "8",
                     "--x-range", "256:256:1", "--y-range", "8:8:1",
                     "--out", str(tmp_path / "no" / "such" / "map.csv"))
    assert code == 5


def write_layers(tmp_path, doc):
    path = tmp_path / "layers.json"
    path.write_text(json.dumps(doc))
    return str(path)


LAYERS = [{"name": "q_proj", "in": 512, "out": 512}, {"name": "up_proj", "in": 512, "out": 2048}]


def test_plan_with_defaults(capsys, tmp_path):
    path = write_layers(tmp_path, {"defaults": {"b": 2, "s": 100, "r": 32}, "layers": LAYERS})
    code, out, _ = run(capsys, "plan", "--layers", path, "--json")
    assert code == 0
    doc = json.loads(out)
    assert [p["name"] for p in doc["plans"]] == ["q_proj", "up_proj"]
    for p in doc["plans"]:
        assert PairPlan.from_dict(p).to_dict() == p
    assert doc["totals"]["layers"] == 2
    assert doc["totals"]["activation_bytes_saved"] == 2 * 2 * 100 * 32 * 4


def test_plan_flags_override_defaults(capsys, tmp_path):
    path = write_layers(tmp_path, {"defaults": {"b": 2, "s": 100, "r": 32}, "layers": LAYERS})
    _, out, _ = run(capsys, "plan", "--layers", path, "--r", "8", "--json")
    assert all(p["shape"]["r"] == 8 for p in json.loads(out)["plans"])


@pytest.mark.parametrize("doc", [
    [{"name": "", "in": 4, "out": 4}],
    [{"name": "a", "in": 0, "out": 4}],
    [{"name": "a", "in": 4}],
    {"layers": "q_proj"},
])
def test_plan_rejects_bad_layer_files(capsys, tmp_path, doc):
    path = write_layers(tmp_path, doc)
    code, _, _ = run(capsys, "plan", "--layers", path, "--b", "1", "--s", "1", "--r", "1")
    assert code == 2


def test_plan_needs_geometry(capsys, tmp_path):
    path = write_layers(tmp_path, LAYERS)
    code, _, err = run(capsys, "plan", "--layers", path, "--b", "1", "--s", "1")
    assert code == 2 and "--r" in err


def test_json_output_is_byte_identical(capsys, tmp_path):
    path = write_layers(tmp_path, LAYERS)
    argv = ["plan", "--layers", path, "--b", "4", "--s", "64", "--r", "16", "--json"]
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]
    assert run(capsys, "flops", *SHAPE, "--json")[1] == run(capsys, "flops", *SHAPE, "--json")[1]


def test_bench_smoke(capsys):
    code, out, _ = run(capsys, "bench", "--b", "1", "--s", "8", "--i", "32", "--o", "32",
                       "--r", "4", "--warmup", "1", "--repeats", "3", "--single-thread",
                       "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["plan"]["samples"] == doc["baseline"]["samples"] == 3
    assert {"measured_speedup_pct", "predicted_speedup_pct"} <= set(doc)


def test_map_csv(capsys, tmp_path):
    out_path = tmp_path / "map.csv"
    argv = ["map", "--axis", "batch-seq", "--layer-rule", "explicit", "--i", "4096",
            "--o", "11008", "--r", "128", "--which", "forward", "--x-range", "1:4:1",
            "--y-range", "64:256:64", "--out", str(out_path)]
    code, stdout, err = run(capsys, *argv)
    assert code == 0 and stdout == ""
    first = out_path.read_bytes()
    assert len(first.decode().splitlines()) == 1 + 4 * 4
    run(capsys, *argv)
    assert out_path.read_bytes() == first


def test_thread_env(capsys, monkeypatch):
    monkeypatch.setenv("LORACHAIN_NUM_THREADS", "1")
    assert run(capsys, "flops", *SHAPE, "--json")[0] == 0
    monkeypatch.setenv("LORACHAIN_NUM_THREADS", "many")
    assert run(capsys, "flops", *SHAPE, "--json")[0] == 2
