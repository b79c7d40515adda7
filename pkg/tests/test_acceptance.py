"""End-to-end acceptance checks, one test per criterion, driven via the CLI.

Every test prints a single "[criterion N] PASS/FAIL" line carrying the
measured numbers, so a transcript of this suite doubles as the
verification report.  Expensive CLI invocations are shared through
module-scoped fixtures.
"""

import json
import re
import time

import numpy as np
import pytest
from click.testing import CliRunner

from lrfpn.checkpoint import load_into, save_checkpoint
from lrfpn.cli import main
from lrfpn.config import read_metrics
from lrfpn.pyramid import MINI_SPEC, LrFpnModel


def _invoke(args):
    result = CliRunner().invoke(main, args)
    return result


def _timed(args):
    t0 = time.perf_counter()
    result = _invoke(args)
    return result, time.perf_counter() - t0


def _check(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


# ------------------------------------------------------- shared CLI runs


@pytest.fixture(scope="module")
def gradcheck_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gradcheck")
    result, wall = _timed(["gradcheck", "--out", str(out)])
    return result, wall, (out / "gradcheck.txt").read_text()


@pytest.fixture(scope="module")
def oracle_run():
    result, wall = _timed(["oracle"])
    sections = {}
    pattern = re.compile(r"^\s+(\S+)\s+cases=(\d+)\s+(?:max_abs_diff=(\S+))?\s*(ok|FAILED)")
    for line in result.output.splitlines():
        m = pattern.match(line)
        if m:
            name, cases, diff, status = m.groups()
            sections[name] = {
                "cases": int(cases),
                "diff": None if diff is None else float(diff),
                "ok": status == "ok",
            }
    return result, wall, sections


@pytest.fixture(scope="module")
def ablate_runs(tmp_path_factory):
    """Two identical default-config invocations (deterministic clock, so
    the artifact bytes are comparable); 300 steps x {baseline, full} x
    seeds 0..4 plus the plain-pyramid twin training."""
    out1 = tmp_path_factory.mktemp("ablate1")
    out2 = tmp_path_factory.mktemp("ablate2")
    r1, wall1 = _timed(["ablate", "--timer", "fixed", "--out", str(out1)])
    r2 = _invoke(["ablate", "--timer", "fixed", "--out", str(out2)])
    rows = read_metrics(out1 / "metrics.csv") if r1.exit_code == 0 else []
    return r1, r2, wall1, out1, out2, rows


@pytest.fixture(scope="module")
def bench_fixed_runs(tmp_path_factory):
    out1 = tmp_path_factory.mktemp("bench1")
    out2 = tmp_path_factory.mktemp("bench2")
    r1 = _invoke(["bench", "--timer", "fixed", "--out", str(out1)])
    r2 = _invoke(["bench", "--timer", "fixed", "--out", str(out2)])
    return r1, r2, out1, out2


@pytest.fixture(scope="module")
def bench_perf_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchp")
    result = _invoke(["bench", "--out", str(out)])
    payload = json.loads((out / "bench.json").read_text()) if result.exit_code == 0 else {}
    return result, payload


@pytest.fixture(scope="module")
def train_ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    result = _invoke(["train-toy", "--model", "mini", "--steps", "40", "--out", str(out)])
    return result, out / "train_-_s0.lrfpn"


# ------------------------------------------------------------- criteria


def test_criterion_1_gradient_correctness(gradcheck_run):
    result, wall, report = gradcheck_run
    m = re.search(r"^probes=(\d+) max_rel_err=(\S+) (PASS|FAIL)$", report, re.M)
    groups = set(re.findall(r"^group (\S+)", report, re.M))
    required = {"spiem", "cim.dw", "cim.dwd", "cim.fc", "cim.proj", "extra", "head"}
    n_probes, max_err = int(m.group(1)), float(m.group(2))
    ok = (
        result.exit_code == 0
        and "finite differences: central, eps=1e-05" in report
        and "dtype=f64" in report
        and max_err < 1e-4
        and n_probes >= 200
        and required <= groups
        and wall < 120.0
    )
    _check(1, ok, f"max_rel_err={max_err:.3e} over {n_probes} probes in {sorted(groups)}, {wall:.1f}s")


def test_criterion_2_kernel_oracles(oracle_run):
    result, wall, sections = oracle_run
    conv = sections.get("conv_paths", {})
    avg = sections.get("pool_avg", {})
    mx = sections.get("pool_max", {})
    ok = (
        result.exit_code == 0
        and conv.get("cases") == 100 and conv.get("diff") <= 1e-10
        and avg.get("ok") and avg.get("diff") <= 1e-12
        and mx.get("ok") and mx.get("diff") == 0.0
        and wall < 60.0
    )
    _check(
        2,
        ok,
        f"conv diff={conv.get('diff'):.1e} ({conv.get('cases')} cases), "
        f"avg diff={avg.get('diff'):.1e}, max exact, {wall:.2f}s",
    )


def test_criterion_3_baseline_degeneracy(ablate_runs):
    r1, _, _, _, _, rows = ablate_runs
    twin_line = "plain-pyramid twin check: PASS on seeds [0, 1, 2, 3, 4]"
    steps = {r.steps for r in rows}
    ok = r1.exit_code == 0 and twin_line in r1.output and steps == {300}
    _check(3, ok, "flag-free model matches the plain pyramid bit for bit, outputs and 300-step traces, seeds 0-4")


def test_criterion_4_ablation_lattice(oracle_run):
    result, _, sections = oracle_run
    add = sections.get("cim_additivity", {})
    rf = sections.get("receptive_field", {})
    ok = (
        result.exit_code == 0
        and add.get("ok") and add.get("diff") <= 1e-12
        and rf.get("ok")
    )
    _check(
        4,
        ok,
        f"branch additivity diff={add.get('diff'):.1e} ({add.get('cases')} cases), "
        "distance-2 influence iff the dilated branch is on",
    )


def test_criterion_5_gate_and_shape_invariants(oracle_run):
    _, _, sections = oracle_run
    gate = sections.get("gate_range", {})
    result = _invoke(["shapes"])
    shapes = {
        int(m.group(1)): (int(m.group(2)), int(m.group(3)), int(m.group(4)))
        for m in re.finditer(r"^\s+P(\d)\s+\((\d+), (\d+), (\d+)\)$", result.output, re.M)
    }
    halves = all(
        shapes[i][0] == shapes[i + 1][0]
        and shapes[i + 1][1:] == (shapes[i][1] // 2, shapes[i][2] // 2)
        for i in range(1, 5)
    )
    ok = (
        gate.get("ok") and gate.get("cases") == 1000
        and result.exit_code == 0
        and sorted(shapes) == [1, 2, 3, 4, 5]
        and halves
    )
    _check(5, ok, f"gate in (0,1) on {gate.get('cases')} inputs; P1..P5 {[shapes[i] for i in sorted(shapes)]}")


def test_criterion_6_training_viability(ablate_runs):
    r1, _, wall1, _, _, rows = ablate_runs
    drops = {}
    finite = True
    for r in rows:
        losses = np.asarray(r.losses)
        finite &= bool(np.isfinite(losses).all()) and len(losses) == 300
        drops[(r.label, r.seed)] = (losses[0] - losses[-1]) / losses[0]
    expected = {(label, seed) for label in ("baseline", "full") for seed in range(5)}
    ok = (
        r1.exit_code == 0
        and set(drops) == expected
        and finite
        and all(d >= 0.5 for d in drops.values())
        and wall1 < 600.0
    )
    worst = min(drops.values()) if drops else float("nan")
    _check(6, ok, f"10 runs of 300 steps, all losses finite, worst drop {worst:.1%} (need 50%), {wall1:.0f}s")


def test_criterion_7_comparative_trend(ablate_runs):
    r1, _, _, _, _, rows = ablate_runs
    finals = {(r.label, r.seed): r.final_loss for r in rows}
    wins = sum(finals[("full", s)] <= finals[("baseline", s)] for s in range(5))
    ok = r1.exit_code == 0 and len(rows) == 10 and wins >= 3
    _check(7, ok, f"full <= baseline final loss on {wins}/5 seeds; all 10 rows in metrics.csv")


def test_criterion_8_determinism_and_serialization(ablate_runs, bench_fixed_runs, train_ckpt):
    _, r2, _, out1, out2, _ = ablate_runs
    b1, b2, bout1, bout2 = bench_fixed_runs
    t_result, ckpt = train_ckpt

    metrics_same = (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    bench_same = (bout1 / "bench.json").read_bytes() == (bout2 / "bench.json").read_bytes()

    first = ckpt.read_bytes()
    model = LrFpnModel(MINI_SPEC, seed=99)
    load_into(model.params(), ckpt)
    resaved = ckpt.parent / "resaved.lrfpn"
    save_checkpoint(resaved, model.params())
    ckpt_same = first == resaved.read_bytes()

    ok = (
        r2.exit_code == 0 and b1.exit_code == 0 and b2.exit_code == 0
        and t_result.exit_code == 0
        and metrics_same and bench_same and ckpt_same
    )
    _check(
        8,
        ok,
        f"repeat invocations byte-identical (metrics.csv={metrics_same}, bench.json={bench_same}); "
        f"checkpoint save-load-save byte-identical ({ckpt_same})",
    )


def test_criterion_9_performance_report(bench_perf_run):
    result, payload = bench_perf_run
    cases = payload.get("cases", [])
    speedups = [c["speedup"] for c in cases]
    ok = (
        result.exit_code == 0
        and len(cases) == 6
        and all(np.isfinite(s) and s > 0 for s in speedups)
        and payload.get("all_within_tolerance") is True
        and payload.get("timer") == "perf"
    )
    target = payload.get("target_speedup", 3.0)
    met = "met" if speedups and min(speedups) >= target else "NOT met"
    _check(
        9,
        ok,
        f"speedup min {min(speedups):.0f}x / mean {np.mean(speedups):.0f}x reported "
        f"(target {target:.0f}x {met}, report-only)",
    )
