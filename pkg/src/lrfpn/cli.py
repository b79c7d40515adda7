"""Command line client for the verification service.

Every subcommand builds a RunConfig (config file first, then flag
overrides), posts it to the service, and materializes artifacts from the
response into --out.  By default the service runs in-process; --server
points at a remote instance started with `lrfpn serve`.

Exit codes: 0 success, 1 a check failed or the run errored, 2 the config
or usage was rejected.
"""

from __future__ import annotations

import base64
import os
import sys
from pathlib import Path

import click

from .config import RunConfig
from .errors import ConfigError
from .runners import bench_json


def _fail(code: int, message: str) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _post(server: str | None, path: str, payload: dict) -> dict:
    if server is None:
        import warnings

        with warnings.catch_warnings():
            # this starlette wants an httpx successor the mirror lacks
            warnings.filterwarnings("ignore", message=".*httpx2.*")
            from fastapi.testclient import TestClient

        from .service import create_app

        with TestClient(create_app(), raise_server_exceptions=False) as client:
            resp = client.post(path, json=payload)
    else:
        import httpx

        try:
            with httpx.Client(base_url=server, timeout=600.0) as client:
                resp = client.post(path, json=payload)
        except httpx.HTTPError as exc:
            _fail(1, f"request failed: {exc}")
    if resp.status_code == 422:
        _fail(2, f"rejected: {resp.json().get('detail')}")
    if resp.status_code >= 400:
        _fail(1, f"server error {resp.status_code}: {resp.text[:500]}")
    return resp.json()


def _build_config(config_path: str | None, **overrides) -> RunConfig:
    if config_path is not None:
        cfg = RunConfig.from_text(Path(config_path).read_text())
    else:
        cfg = RunConfig()
    data = cfg.model_dump()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(data)


def _write_text(out_dir: str, name: str, text: str) -> Path:
    os.makedirs(out_dir, exist_ok=True)
    path = Path(out_dir) / name
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _write_bytes(out_dir: str, name: str, blob: bytes) -> Path:
    os.makedirs(out_dir, exist_ok=True)
    path = Path(out_dir) / name
    path.write_bytes(blob)
    return path


def common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Key=value config file."),
        click.option("--model", type=click.Choice(["default", "mini"]), default=None, help="Model size preset."),
        click.option("--seed", type=click.IntRange(min=0), default=None),
        click.option("--flags", default=None, help="Comma-separated feature flags (sp,pp,si,ci,li,ni)."),
        click.option("--steps", type=click.IntRange(min=1), default=None),
        click.option("--dtype", type=click.Choice(["f64", "f32"]), default=None),
        click.option("--timer", type=click.Choice(["perf", "fixed"]), default=None, help="fixed makes timing fields deterministic."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", help="Directory for output artifacts."),
        click.option("--server", default=None, help="Base URL of a running service; default is in-process."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config_or_exit(config_path, **overrides) -> RunConfig:
    try:
        return _build_config(config_path, **overrides)
    except ConfigError as exc:
        _fail(2, f"bad config: {exc}")


@click.group()
def main() -> None:
    """Feature pyramid kernel library: verification and benchmarks."""


@main.command()
@common_options
def shapes(config_path, model, seed, flags, steps, dtype, timer, out_dir, server) -> None:
    """Print feature, pyramid, and parameter shapes."""
    cfg = _config_or_exit(config_path, model=model, seed=seed, flags=flags, steps=steps, dtype=dtype, timer=timer)
    data = _post(server, "/v1/shapes", {"config": cfg.model_dump()})
    c, h, w = data["input"]
    click.echo(f"model={data['model']} dtype={data['dtype']} input={c}x{h}x{w}")
    for name in sorted(data["features"]):
        click.echo(f"  {name}  {tuple(data['features'][name])}")
    for name in sorted(data["pyramid"]):
        click.echo(f"  {name}  {tuple(data['pyramid'][name])}")
    click.echo(f"parameters: {data['param_count']} in {len(data['params'])} tensors")
    for group in sorted(data["param_groups"]):
        click.echo(f"  {group:<9} {data['param_groups'][group]}")


@main.command()
@common_options
@click.option("--probes", "probes_per_param", type=click.IntRange(min=1, max=64), default=8, help="Finite-difference probes per parameter tensor.")
def gradcheck(config_path, model, seed, flags, steps, dtype, timer, out_dir, server, probes_per_param) -> None:
    """Check analytic gradients against finite differences.

    Writes gradcheck.txt into --out.  Without --config or --model the
    mini model is used; probing exercises every branch regardless of
    --flags.
    """
    if config_path is None and model is None:
        model = "mini"
    cfg = _config_or_exit(config_path, model=model, seed=seed, flags=flags, steps=steps, dtype=dtype, timer=timer)
    data = _post(server, "/v1/gradcheck", {"config": cfg.model_dump(), "probes_per_param": probes_per_param})
    path = _write_text(out_dir, "gradcheck.txt", data["report"])
    click.echo(data["report"], nl=False)
    click.echo(f"wrote {path}")
    sys.exit(0 if data["passed"] else 1)


@main.command()
@common_options
def oracle(config_path, model, seed, flags, steps, dtype, timer, out_dir, server) -> None:
    """Compare kernel outputs against independent reference computations."""
    cfg = _config_or_exit(config_path, model=model, seed=seed, flags=flags, steps=steps, dtype=dtype, timer=timer)
    data = _post(server, "/v1/oracle", {"config": cfg.model_dump()})
    for s in data["sections"]:
        diff = "" if s["max_abs_diff"] is None else f" max_abs_diff={s['max_abs_diff']:.3e}"
        status = "ok" if s["ok"] else f"FAILED ({s['failures']} of {s['cases']})"
        click.echo(f"  {s['name']:<16} cases={s['cases']:<5}{diff}  {status}")
    click.echo(f"oracle: {'PASS' if data['passed'] else 'FAIL'} ({data['elapsed_s']:.2f}s)")
    sys.exit(0 if data["passed"] else 1)


@main.command("train-toy")
@common_options
def train_toy(config_path, model, seed, flags, steps, dtype, timer, out_dir, server) -> None:
    """Train on synthetic scenes; write metrics.csv and a checkpoint."""
    cfg = _config_or_exit(config_path, model=model, seed=seed, flags=flags, steps=steps, dtype=dtype, timer=timer)
    data = _post(server, "/v1/train-toy", {"config": cfg.model_dump()})
    rec = data["record"]
    csv_path = _write_text(out_dir, "metrics.csv", data["metrics_csv"])
    ckpt_path = _write_bytes(out_dir, data["checkpoint_name"], base64.b64decode(data["checkpoint_b64"]))
    click.echo(
        f"{rec['run_id']}: loss {rec['initial_loss']:.4f} -> {rec['final_loss']:.4f} "
        f"({data['loss_drop']:.1%} drop) over {rec['steps']} steps"
    )
    click.echo(f"wrote {csv_path}")
    click.echo(f"wrote {ckpt_path}")


@main.command()
@common_options
@click.option("--presets", default="baseline,full", help="Comma-separated preset names.")
@click.option("--seeds", default="0,1,2,3,4", help="Comma-separated seeds.")
def ablate(config_path, model, seed, flags, steps, dtype, timer, out_dir, server, presets, seeds) -> None:
    """Train preset flag combinations across seeds; write metrics.csv.

    When the baseline preset is included, a separately implemented plain
    pyramid trains on the same batches and must match bit for bit.
    """
    cfg = _config_or_exit(config_path, model=model, seed=seed, flags=flags, steps=steps, dtype=dtype, timer=timer)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    except ValueError:
        _fail(2, f"bad --seeds {seeds!r}: expected comma-separated integers")
    preset_list = [p for p in presets.split(",") if p.strip() != ""]
    payload = {"config": cfg.model_dump(), "presets": preset_list, "seeds": seed_list}
    data = _post(server, "/v1/ablate", payload)
    for row in data["rows"]:
        drop = (row["initial_loss"] - row["final_loss"]) / row["initial_loss"]
        click.echo(
            f"  {row['label']:<14} seed={row['seed']} "
            f"final={row['final_loss']:.5f} drop={drop:.1%}"
        )
    path = _write_text(out_dir, "metrics.csv", data["metrics_csv"])
    click.echo(f"wrote {path}")
    if data["twin_checks"]:
        ok = data["twin_ok"]
        click.echo(f"plain-pyramid twin check: {'PASS' if ok else 'FAIL'} on seeds {data['seeds']}")
        sys.exit(0 if ok else 1)


@main.command()
@common_options
def bench(config_path, model, seed, flags, steps, dtype, timer, out_dir, server) -> None:
    """Time naive versus optimized kernel paths; write bench.json."""
    cfg = _config_or_exit(config_path, model=model, seed=seed, flags=flags, steps=steps, dtype=dtype, timer=timer)
    data = _post(server, "/v1/bench", {"config": cfg.model_dump()})
    for c in data["cases"]:
        click.echo(
            f"  {c['name']:<16} naive={c['naive_s_per_rep'] * 1e3:8.3f}ms "
            f"fast={c['fast_s_per_rep'] * 1e3:7.3f}ms speedup={c['speedup']:8.1f}x"
        )
    click.echo(
        f"mean speedup {data['mean_speedup']:.1f}x, min {data['min_speedup']:.1f}x "
        f"(target {data['target_speedup']:.0f}x, report only; timer={data['timer']})"
    )
    path = _write_text(out_dir, "bench.json", bench_json(data))
    click.echo(f"wrote {path}")
    sys.exit(0 if data["all_within_tolerance"] else 1)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
