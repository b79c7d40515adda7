"""Verification and benchmark runs behind the service endpoints.

Every runner takes a RunConfig and returns a JSON-ready dict; file
placement is the caller's job.  Verification runners (gradcheck, oracle)
insist on f64: rounding noise in f32 would drown exactly the signals
they exist to measure.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from . import kernels as K
from .baseline import PlainFpn
from .checkpoint import dump_bytes
from .cim import Cim
from .config import MetricsRecord, RunConfig, make_timer, metrics_text
from .errors import ConfigError
from .flags import FULL, Flags, flags_token, parse_flags
from .init import seeded_rng
from .pyramid import LrFpnModel, dampen_params, gradcheck_objective, train_toy
from .scenes import SceneSpec, make_batches
from .tensor import Tape, Tensor, backward, inject_fault, zero_grads

GRADCHECK_EPS = 1e-5
GRADCHECK_TOL = 1e-4
REL_ERR_FLOOR = 1e-3

# Ablation presets: label -> flag tokens.  Order is presentation order.
PRESETS = {
    "baseline": "",
    "+SPIEM": "sp,pp",
    "+CIM": "si,ci,li,ni",
    "+CIM+SP": "sp,si,ci,li,ni",
    "+CIM+PP": "pp,si,ci,li,ni",
    "+SPIEM+SI": "sp,pp,si,li,ni",
    "+SPIEM+CI": "sp,pp,ci",
    "+SPIEM+CI+NI": "sp,pp,ci,si,ni",
    "+SPIEM+CI+LI": "sp,pp,ci,si,li",
    "full": "sp,pp,si,ci,li,ni",
}

DEFAULT_ABLATE_PRESETS = ("baseline", "full")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _require_f64(cfg: RunConfig, what: str) -> None:
    if cfg.dtype != "f64":
        raise ConfigError(f"{what} requires dtype=f64, got {cfg.dtype}")


def _scene_spec(cfg: RunConfig) -> SceneSpec:
    ms = cfg.model_spec()
    return SceneSpec(h=ms.in_h, w=ms.in_w, channels=ms.in_channels)


def _target_hw(cfg: RunConfig) -> tuple[int, int]:
    ms = cfg.model_spec()
    _, h, w = ms.pyramid_shapes()["P1"]
    return (h, w)


def rel_err(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(abs(analytic), abs(fd), REL_ERR_FLOOR)


def _group_of(name: str) -> str:
    """Reporting bucket for a parameter; lateral modules split by branch."""
    parts = name.split(".")
    if parts[0] != "cim":
        return parts[0]
    tag = parts[2]
    return "cim." + ("fc" if tag.startswith("fc") else tag)


# ---------------------------------------------------------------- shapes


def run_shapes(cfg: RunConfig) -> dict:
    ms = cfg.model_spec()
    ms.validate()
    model = LrFpnModel(ms, seed=cfg.seed, dtype=cfg.np_dtype())
    groups: dict[str, int] = {}
    for p in model.params():
        group = p.name.split(".")[0]
        groups[group] = groups.get(group, 0) + p.value.size
    return {
        "model": cfg.model,
        "dtype": cfg.dtype,
        "input": [ms.in_channels, ms.in_h, ms.in_w],
        "features": {f"F{i}": list(shape) for i, shape in ms.feature_shapes().items()},
        "pyramid": {name: list(shape) for name, shape in ms.pyramid_shapes().items()},
        "params": [{"name": p.name, "shape": list(p.value.shape)} for p in model.params()],
        "param_groups": groups,
        "param_count": sum(groups.values()),
    }


# ------------------------------------------------------------- gradcheck


def _gradcheck_point(cfg: RunConfig):
    """Model, input, and target at a well-conditioned probe point."""
    ms = cfg.model_spec()
    model = LrFpnModel(ms, seed=cfg.seed, dtype=np.float64)
    dampen_params(model, 0.5)
    x, t = make_batches(cfg.seed, _scene_spec(cfg), 1, 2, _target_hw(cfg))[0]
    return model, 0.5 * x, t


def run_gradcheck(cfg: RunConfig, probes_per_param: int = 8) -> dict:
    _require_f64(cfg, "gradient checking")
    timer = make_timer(cfg.timer)
    t_start = timer()
    model, x, t = _gradcheck_point(cfg)
    flags = FULL

    params = model.params()
    with Tape() as tape:
        loss = gradcheck_objective(model, x, t, flags)
        backward(tape, loss)

    def objective() -> float:
        return float(gradcheck_objective(model, x, t, flags).value[0, 0, 0, 0])

    rng = seeded_rng(cfg.seed, "gradcheck.probes")
    probes: list[tuple[str, tuple, float, float]] = []
    for p in params:
        count = min(probes_per_param, p.value.size)
        flat = rng.choice(p.value.size, size=count, replace=False)
        for f in flat:
            idx = np.unravel_index(int(f), p.value.shape)
            orig = p.value[idx]
            p.value[idx] = orig + GRADCHECK_EPS
            fp = objective()
            p.value[idx] = orig - GRADCHECK_EPS
            fm = objective()
            p.value[idx] = orig
            fd = (fp - fm) / (2 * GRADCHECK_EPS)
            probes.append((p.name, idx, float(p.grad[idx]), fd))

    groups: dict[str, dict] = {}
    for name, _, analytic, fd in probes:
        g = groups.setdefault(_group_of(name), {"probes": 0, "max_rel_err": 0.0})
        g["probes"] += 1
        g["max_rel_err"] = max(g["max_rel_err"], rel_err(analytic, fd))
    max_err = max(g["max_rel_err"] for g in groups.values())
    passed = max_err < GRADCHECK_TOL

    # prove the checker can see a corrupted backward pass: scale the
    # conv2d pull-backs and re-measure a handful of backbone probes
    zero_grads(params)
    with Tape() as tape, inject_fault("conv2d"):
        loss = gradcheck_objective(model, x, t, flags)
        backward(tape, loss)
    fault_err = 0.0
    for name, idx, _, fd in probes:
        if name.startswith("backbone.1."):
            fault_err = max(fault_err, rel_err(float(model.param_dict()[name].grad[idx]), fd))
    fault_detected = fault_err > GRADCHECK_TOL
    elapsed = timer() - t_start

    lines = [
        "gradient check report",
        f"model={cfg.model} seed={cfg.seed} dtype={cfg.dtype} flags={flags_token(flags)}",
        "objective: bce(pred, target) + 0.05*mean(P4^2) + 0.05*mean(P5^2)",
        "probe point: init parameters scaled by 0.5, input scaled by 0.5"
        " (keeps the head out of sigmoid saturation)",
        f"finite differences: central, eps={GRADCHECK_EPS}",
        f"rel_err = |analytic - fd| / max(|analytic|, |fd|, {REL_ERR_FLOOR}); tolerance {GRADCHECK_TOL}",
        "",
    ]
    for group in sorted(groups):
        g = groups[group]
        lines.append(f"group {group:<9} probes={g['probes']:<4} max_rel_err={g['max_rel_err']:.3e}")
    lines.append("")
    lines.append(
        f"probes={len(probes)} max_rel_err={max_err:.3e} {'PASS' if passed else 'FAIL'}"
    )
    lines.append(
        "fault-injection self-test: corrupted conv2d backward "
        + (f"detected (max_rel_err={fault_err:.3e})" if fault_detected else "NOT DETECTED")
    )

    return {
        "passed": bool(passed and fault_detected),
        "max_rel_err": float(max_err),
        "tolerance": GRADCHECK_TOL,
        "n_probes": len(probes),
        "groups": groups,
        "fault_detected": bool(fault_detected),
        "fault_max_rel_err": float(fault_err),
        "elapsed_s": elapsed,
        "report": "\n".join(lines) + "\n",
    }


# ---------------------------------------------------------------- oracle


def _member_windows(n_in: int, n_out: int) -> list[list[int]]:
    """Window membership derived from real-interval overlap.

    Pixel i (covering [i, i+1)) belongs to window a (covering
    [a*n/m, (a+1)*n/m)) iff the intervals overlap; stated in integers:
    i*m < (a+1)*n and (i+1)*m > a*n.  Independent of pool_windows.
    """
    return [
        [i for i in range(n_in) if i * n_out < (a + 1) * n_in and (i + 1) * n_out > a * n_in]
        for a in range(n_out)
    ]


def run_oracle(cfg: RunConfig) -> dict:
    _require_f64(cfg, "oracle verification")
    timer = make_timer(cfg.timer)
    t_start = timer()
    rng = seeded_rng(cfg.seed, "oracle")
    sections = []

    def section(name: str, cases: int, max_diff: float | None, failures, note: str) -> None:
        sections.append(
            {
                "name": name,
                "cases": cases,
                "max_abs_diff": max_diff,
                "failures": int(failures),
                "ok": int(failures) == 0,
                "note": note,
            }
        )

    # conv2d: vectorised path vs loop reference
    worst = 0.0
    fails = 0
    for _ in range(100):
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 3))
        h = int(rng.integers(max(1, k - 2 * pad), 9))
        w = int(rng.integers(max(1, k - 2 * pad), 9))
        n, cin, cout = (int(rng.integers(1, 4)) for _ in range(3))
        x = Tensor(rng.standard_normal((n, cin, h, w)))
        wt = Tensor(rng.standard_normal((cout, cin, k, k)))
        b = Tensor(rng.standard_normal((1, cout, 1, 1)))
        fast = K.conv2d(x, wt, b, stride=stride, padding=pad, path="im2col")
        ref = K.conv2d(x, wt, b, stride=stride, padding=pad, path="naive")
        diff = float(np.max(np.abs(fast.value - ref.value)))
        worst = max(worst, diff)
        fails += diff > 1e-10
    section("conv_paths", 100, worst, fails, "im2col vs naive forward, tol 1e-10")

    # depthwise: tap accumulation vs loop reference
    worst = 0.0
    fails = 0
    for _ in range(50):
        d = int(rng.integers(1, 3))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        x = Tensor(rng.standard_normal((n, c, h, w)))
        wt = Tensor(rng.standard_normal((c, 1, 3, 3)))
        b = Tensor(rng.standard_normal((1, c, 1, 1)))
        fast = K.depthwise_conv2d(x, wt, b, dilation=d, path="taps")
        ref = K.depthwise_conv2d(x, wt, b, dilation=d, path="naive")
        diff = float(np.max(np.abs(fast.value - ref.value)))
        worst = max(worst, diff)
        fails += diff > 1e-10
    section("depthwise_paths", 50, worst, fails, "taps vs naive forward, tol 1e-10")

    # adaptive average pool vs interval-overlap enumeration
    worst = 0.0
    fails = 0
    for _ in range(60):
        h = int(rng.integers(1, 13))
        w = int(rng.integers(1, 13))
        oh = int(rng.integers(1, h + 1))
        ow = int(rng.integers(1, w + 1))
        x = rng.standard_normal((2, 2, h, w))
        got = K.adaptive_avg_pool2d(Tensor(x), (oh, ow)).value
        hw_, ww_ = _member_windows(h, oh), _member_windows(w, ow)
        for a, rows in enumerate(hw_):
            for bb, cols in enumerate(ww_):
                want = x[:, :, rows][:, :, :, cols].mean(axis=(2, 3))
                diff = float(np.max(np.abs(got[:, :, a, bb] - want)))
                worst = max(worst, diff)
                fails += diff > 1e-12
    section("pool_avg", 60, worst, fails, "window means by enumeration, tol 1e-12")

    # adaptive max pool must match enumeration exactly
    fails = 0
    for _ in range(60):
        h = int(rng.integers(1, 13))
        w = int(rng.integers(1, 13))
        oh = int(rng.integers(1, h + 1))
        ow = int(rng.integers(1, w + 1))
        x = rng.standard_normal((2, 2, h, w))
        got = K.adaptive_max_pool2d(Tensor(x), (oh, ow)).value
        hw_, ww_ = _member_windows(h, oh), _member_windows(w, ow)
        for a, rows in enumerate(hw_):
            for bb, cols in enumerate(ww_):
                want = x[:, :, rows][:, :, :, cols].max(axis=(2, 3))
                fails += not np.array_equal(got[:, :, a, bb], want)
    section("pool_max", 60, 0.0, fails, "window maxima by enumeration, exact")

    # window bookkeeping: coverage and agreement with the interval form
    fails = 0
    cases = 0
    for n in range(1, 17):
        for m in range(1, n + 1):
            cases += 1
            wins = K.pool_windows(n, m)
            members = _member_windows(n, m)
            if wins != [(mm[0], mm[-1] + 1) for mm in members]:
                fails += 1
                continue
            covered = set()
            for s, e in wins:
                covered.update(range(s, e))
            fails += covered != set(range(n))
    section("pool_partition", cases, None, fails, "floor/ceil windows equal interval overlap; full coverage")

    # channel gate stays strictly inside (0, 1), even at wild scales
    gate = Cim(1, 16, 16, seed=cfg.seed)
    fails = 0
    scales = (1e-3, 0.1, 1.0, 10.0, 1e3, 1e6)
    for i in range(1000):
        x = Tensor(scales[i % len(scales)] * rng.standard_normal((1, 16, 6, 6)))
        g = gate.channel_gate(x).value
        fails += not (np.all(g > 0.0) and np.all(g < 1.0))
    section("gate_range", 1000, None, fails, "sigmoid gate strictly inside (0, 1)")

    # spatial branches add independently
    mod = Cim(1, 8, 8, seed=cfg.seed)
    worst = 0.0
    fails = 0
    for _ in range(100):
        x = Tensor(rng.standard_normal((1, 8, 6, 6)))
        both = mod.interact(x, Flags(si=True, li=True, ni=True)).value
        li = mod.interact(x, Flags(si=True, li=True)).value
        ni = mod.interact(x, Flags(si=True, ni=True)).value
        diff = float(np.max(np.abs(both - (li + ni))))
        worst = max(worst, diff)
        fails += diff > 1e-12
    section("cim_additivity", 100, worst, fails, "interact(li,ni) = interact(li) + interact(ni), tol 1e-12")

    # receptive field: distance-2 influence exists only on the dilated grid
    probe = Cim(1, 1, 1, seed=cfg.seed)
    ring2 = [
        (dr, dc)
        for dr in range(-2, 3)
        for dc in range(-2, 3)
        if max(abs(dr), abs(dc)) == 2
    ]
    on_grid = {(dr, dc) for dr, dc in ring2 if dr in (-2, 0, 2) and dc in (-2, 0, 2)}
    fails = 0
    for dr, dc in ring2:
        v = np.zeros((1, 1, 9, 9))
        v[0, 0, 4 + dr, 4 + dc] = 1.0
        li_resp = probe.interact(Tensor(v), Flags(si=True, li=True)).value[0, 0, 4, 4]
        ni_resp = probe.interact(Tensor(v), Flags(si=True, ni=True)).value[0, 0, 4, 4]
        off_resp = probe.interact(Tensor(v), Flags(si=True)).value[0, 0, 4, 4]
        fails += li_resp != 0.0
        fails += off_resp != 0.0
        expect_ni = (dr, dc) in on_grid
        fails += (ni_resp != 0.0) != expect_ni
    section(
        "receptive_field",
        len(ring2),
        None,
        fails,
        "distance-2 spikes reach the centre through ni only, never li or passthrough",
    )

    return {
        "passed": all(s["ok"] for s in sections),
        "sections": sections,
        "elapsed_s": timer() - t_start,
    }


# ----------------------------------------------------------------- train


def _train_once(cfg: RunConfig, label: str, flags: Flags, seed: int):
    """One seeded training run; returns (record, model, batches)."""
    timer = make_timer(cfg.timer)
    ms = cfg.model_spec()
    dtype = cfg.np_dtype()
    t0 = timer()
    batches = make_batches(seed, _scene_spec(cfg), cfg.n_batches, cfg.batch_size, _target_hw(cfg), dtype)
    t1 = timer()
    model = LrFpnModel(ms, seed=seed, dtype=dtype)
    losses = train_toy(
        model, flags, batches,
        steps=cfg.steps, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
    )
    t2 = timer()
    token = flags_token(flags)
    record = MetricsRecord(
        run_id=f"{label}_{token}_s{seed}",
        label=label,
        flags=token,
        seed=seed,
        steps=cfg.steps,
        initial_loss=losses[0],
        final_loss=losses[-1],
        data_wall_s=t1 - t0,
        train_wall_s=t2 - t1,
        losses=losses,
    )
    return record, model, batches


def run_train(cfg: RunConfig) -> dict:
    flags = cfg.parsed_flags()
    record, model, _ = _train_once(cfg, "train", flags, cfg.seed)
    blob = dump_bytes(model.params())
    drop = (record.initial_loss - record.final_loss) / record.initial_loss
    return {
        "record": record.model_dump(),
        "loss_drop": drop,
        "metrics_csv": metrics_text([record]),
        "checkpoint_name": f"{record.run_id}.lrfpn",
        "checkpoint_b64": base64.b64encode(blob).decode("ascii"),
    }


# ---------------------------------------------------------------- ablate


def _twin_check(cfg: RunConfig, seed: int) -> dict:
    """Train the flag-less model and the plain pyramid side by side.

    Both start from identical copied weights and see identical batches,
    so every loss and every output must match bit for bit.
    """
    ms = cfg.model_spec()
    dtype = cfg.np_dtype()
    batches = make_batches(seed, _scene_spec(cfg), cfg.n_batches, cfg.batch_size, _target_hw(cfg), dtype)
    model = LrFpnModel(ms, seed=seed, dtype=dtype)
    plain = PlainFpn(model)
    kwargs = dict(steps=cfg.steps, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    ours = train_toy(model, Flags(), batches, **kwargs)
    theirs = train_toy(plain, Flags(), batches, **kwargs)
    x = Tensor(batches[0][0])
    out_a = model.forward(x, Flags())
    out_b = plain.forward(x)
    outputs_equal = all(
        np.array_equal(out_a[k].value, out_b[k].value)
        for k in ("P1", "P2", "P3", "P4", "P5", "pred")
    )
    return {
        "seed": seed,
        "trace_equal": ours == theirs,
        "outputs_equal": bool(outputs_equal),
    }


def run_ablate(
    cfg: RunConfig,
    presets: tuple[str, ...] = DEFAULT_ABLATE_PRESETS,
    seeds: tuple[int, ...] = DEFAULT_SEEDS,
) -> dict:
    for preset in presets:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; valid presets: {', '.join(PRESETS)}"
            )
    records = []
    for preset in presets:
        flags = parse_flags(PRESETS[preset])
        for seed in seeds:
            record, _, _ = _train_once(cfg, preset, flags, seed)
            records.append(record)

    twin_checks = [_twin_check(cfg, seed) for seed in seeds] if "baseline" in presets else []

    return {
        "presets": {p: PRESETS[p] for p in presets},
        "seeds": list(seeds),
        "rows": [r.model_dump() for r in records],
        "metrics_csv": metrics_text(records),
        "twin_checks": twin_checks,
        "twin_ok": all(t["trace_equal"] and t["outputs_equal"] for t in twin_checks),
    }


# ----------------------------------------------------------------- bench


def run_bench(cfg: RunConfig) -> dict:
    timer = make_timer(cfg.timer)
    dtype = cfg.np_dtype()
    tol = 1e-10 if cfg.dtype == "f64" else 1e-3
    rng = seeded_rng(cfg.seed, "bench")

    def conv_case(name, x_shape, w_shape, reps_naive, reps_fast, **kwargs):
        return (name, "conv2d", x_shape, w_shape, reps_naive, reps_fast, kwargs)

    def dw_case(name, x_shape, w_shape, reps_naive, reps_fast, **kwargs):
        return (name, "depthwise", x_shape, w_shape, reps_naive, reps_fast, kwargs)

    plan = [
        conv_case("conv3x3_in", (2, 3, 64, 64), (8, 3, 3, 3), 2, 30, stride=2, padding=1),
        conv_case("conv3x3_s2", (2, 8, 32, 32), (16, 8, 3, 3), 3, 30, stride=2, padding=1),
        conv_case("conv3x3_s1", (2, 16, 16, 16), (16, 16, 3, 3), 3, 30, stride=1, padding=1),
        conv_case("conv1x1", (2, 32, 8, 8), (16, 32, 1, 1), 5, 50),
        dw_case("depthwise3x3", (2, 16, 16, 16), (16, 1, 3, 3), 2, 40, dilation=1),
        dw_case("depthwise3x3_d2", (2, 16, 16, 16), (16, 1, 3, 3), 2, 40, dilation=2),
    ]

    cases = []
    for name, kind, x_shape, w_shape, reps_naive, reps_fast, kwargs in plan:
        x = Tensor(rng.standard_normal(x_shape).astype(dtype))
        w = Tensor(rng.standard_normal(w_shape).astype(dtype))
        b = Tensor(rng.standard_normal((1, w_shape[0] if kind == "conv2d" else x_shape[1], 1, 1)).astype(dtype))
        if kind == "conv2d":
            fast_path, slow_path = "im2col", "naive"

            def op(path, x=x, w=w, b=b, kwargs=kwargs):
                return K.conv2d(x, w, b, path=path, **kwargs)
        else:
            fast_path, slow_path = "taps", "naive"

            def op(path, x=x, w=w, b=b, kwargs=kwargs):
                return K.depthwise_conv2d(x, w, b, path=path, **kwargs)

        diff = float(np.max(np.abs(op(fast_path).value - op(slow_path).value)))
        t0 = timer()
        for _ in range(reps_naive):
            op(slow_path)
        t1 = timer()
        for _ in range(reps_fast):
            op(fast_path)
        t2 = timer()
        naive_per = (t1 - t0) / reps_naive
        fast_per = (t2 - t1) / reps_fast
        cases.append(
            {
                "name": name,
                "kind": kind,
                "x_shape": list(x_shape),
                "w_shape": list(w_shape),
                "reps_naive": reps_naive,
                "reps_fast": reps_fast,
                "naive_s_per_rep": naive_per,
                "fast_s_per_rep": fast_per,
                "speedup": naive_per / fast_per,
                "max_abs_diff": diff,
                "within_tolerance": diff <= tol,
            }
        )

    speedups = [c["speedup"] for c in cases]
    return {
        "dtype": cfg.dtype,
        "timer": cfg.timer,
        "tolerance": tol,
        "target_speedup": 3.0,
        "cases": cases,
        "mean_speedup": float(np.mean(speedups)),
        "min_speedup": float(min(speedups)),
        "all_within_tolerance": all(c["within_tolerance"] for c in cases),
    }


def bench_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
