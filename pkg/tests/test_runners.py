"""Runner payloads: structure, determinism, and rejection paths."""

import base64

import numpy as np
import pytest

from lrfpn.checkpoint import parse_bytes
from lrfpn.config import RunConfig
from lrfpn.errors import ConfigError
from lrfpn.flags import parse_flags
from lrfpn.runners import (
    PRESETS,
    bench_json,
    run_ablate,
    run_bench,
    run_gradcheck,
    run_oracle,
    run_shapes,
    run_train,
)


def mini_cfg(**kw) -> RunConfig:
    base = dict(model="mini", seed=0)
    base.update(kw)
    return RunConfig(**base)


def test_presets_all_parse():
    for name, tokens in PRESETS.items():
        flags = parse_flags(tokens)
        if name == "baseline":
            assert flags.active() == ()
        if name == "full":
            assert flags.active() == ("ci", "li", "ni", "pp", "si", "sp")


def test_presets_normalization_drops_orphan_branches():
    # no si in this preset, so li/ni cannot survive normalization
    flags = parse_flags(PRESETS["+SPIEM+CI"])
    assert flags.active() == ("ci", "pp", "sp")


def test_shapes_payload():
    out = run_shapes(mini_cfg())
    assert out["param_count"] == sum(out["param_groups"].values())
    assert out["param_count"] == sum(int(np.prod(p["shape"])) for p in out["params"])
    assert set(out["param_groups"]) == {"backbone", "spiem", "cim", "extra", "head"}
    assert out["pyramid"]["P1"] == [4, 4, 4]


def test_shapes_default_halves():
    out = run_shapes(RunConfig(model="default"))
    sizes = [out["pyramid"][f"P{i}"] for i in range(1, 6)]
    for a, b in zip(sizes, sizes[1:]):
        assert a[0] == b[0]
        assert (b[1], b[2]) == (a[1] // 2, a[2] // 2)


def test_gradcheck_passes_and_covers_groups():
    out = run_gradcheck(mini_cfg(), probes_per_param=2)
    assert out["passed"]
    assert out["max_rel_err"] < out["tolerance"]
    assert set(out["groups"]) == {
        "backbone", "spiem", "cim.dw", "cim.dwd", "cim.fc", "cim.proj", "extra", "head",
    }
    assert all(g["probes"] >= 1 for g in out["groups"].values())
    assert out["fault_detected"]
    assert out["fault_max_rel_err"] > out["tolerance"]
    assert "PASS" in out["report"]


def test_gradcheck_probe_count_scales():
    out = run_gradcheck(mini_cfg(), probes_per_param=8)
    assert out["n_probes"] >= 200


def test_gradcheck_rejects_f32():
    with pytest.raises(ConfigError, match="f64"):
        run_gradcheck(mini_cfg(dtype="f32"))


def test_oracle_sections():
    out = run_oracle(mini_cfg())
    assert out["passed"]
    names = [s["name"] for s in out["sections"]]
    assert names == [
        "conv_paths", "depthwise_paths", "pool_avg", "pool_max",
        "pool_partition", "gate_range", "cim_additivity", "receptive_field",
    ]
    by_name = {s["name"]: s for s in out["sections"]}
    assert by_name["conv_paths"]["max_abs_diff"] <= 1e-10
    assert by_name["pool_avg"]["max_abs_diff"] <= 1e-12
    assert by_name["pool_max"]["max_abs_diff"] == 0.0
    assert by_name["gate_range"]["cases"] == 1000
    assert by_name["cim_additivity"]["max_abs_diff"] <= 1e-12


def test_oracle_rejects_f32():
    with pytest.raises(ConfigError, match="f64"):
        run_oracle(mini_cfg(dtype="f32"))


def test_train_payload_and_checkpoint():
    cfg = mini_cfg(steps=20, timer="fixed")
    out = run_train(cfg)
    rec = out["record"]
    assert rec["run_id"] == "train_-_s0"
    assert len(rec["losses"]) == 20
    assert out["checkpoint_name"] == "train_-_s0.lrfpn"
    arrs = parse_bytes(base64.b64decode(out["checkpoint_b64"]))
    assert len(arrs) == 50
    assert "head.weight" in arrs
    assert out["metrics_csv"].count("\n") == 2


def test_train_repeat_is_identical():
    cfg = mini_cfg(steps=20, timer="fixed")
    a = run_train(cfg)
    b = run_train(mini_cfg(steps=20, timer="fixed"))
    assert a["metrics_csv"] == b["metrics_csv"]
    assert a["checkpoint_b64"] == b["checkpoint_b64"]


def test_train_flagged_run_differs_from_plain():
    plain = run_train(mini_cfg(steps=20, timer="fixed"))
    flagged = run_train(mini_cfg(steps=20, timer="fixed", flags="sp,pp,si,ci,li,ni"))
    assert flagged["record"]["run_id"] == "train_ci+li+ni+pp+si+sp_s0"
    assert plain["record"]["losses"] != flagged["record"]["losses"]


def test_ablate_rows_and_twin():
    out = run_ablate(mini_cfg(steps=15, timer="fixed"), presets=("baseline", "full"), seeds=(0,))
    assert [r["label"] for r in out["rows"]] == ["baseline", "full"]
    assert out["twin_ok"]
    assert out["twin_checks"] == [{"seed": 0, "trace_equal": True, "outputs_equal": True}]
    lines = out["metrics_csv"].splitlines()
    assert len(lines) == 3
    # "-" sorts before any flag token, so the baseline row comes first
    assert lines[1].startswith("baseline_-_s0,")


def test_ablate_rejects_unknown_preset():
    with pytest.raises(ConfigError, match="valid presets"):
        run_ablate(mini_cfg(steps=5), presets=("nope",), seeds=(0,))


def test_bench_fixed_timer_is_deterministic():
    a = run_bench(mini_cfg(timer="fixed"))
    b = run_bench(mini_cfg(timer="fixed"))
    assert bench_json(a) == bench_json(b)
    assert a["all_within_tolerance"]
    # with a tick clock the measured ratio is just the rep-count ratio
    for case in a["cases"]:
        assert case["speedup"] == pytest.approx(case["reps_fast"] / case["reps_naive"])


def test_bench_json_layout():
    text = bench_json(run_bench(mini_cfg(timer="fixed")))
    assert text.endswith("\n")
    assert text.startswith("{\n")
    assert '"timer": "fixed"' in text


def test_bench_f32_uses_loose_tolerance():
    out = run_bench(mini_cfg(timer="fixed", dtype="f32"))
    assert out["tolerance"] == 1e-3
    assert out["all_within_tolerance"]
