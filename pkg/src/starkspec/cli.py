"""Thin command-line client for the service.

Every subcommand builds a request and POSTs it to the FastAPI app: by default
through an in-process ASGI transport (no socket), or to a running server when
--server is given.  `starkspec serve` starts the HTTP server.
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient
    from .service import app
    return TestClient(app)


def _post(ctx, path, payload):
    with _client(ctx.obj.get("server")) as client:
        resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        click.echo(f"error ({resp.status_code}): {detail}", err=True)
        sys.exit(1)
    return resp.json()


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        click.echo(f"malformed JSON in {path}: line {exc.lineno} col {exc.colno}: "
                   f"{exc.msg}", err=True)
        sys.exit(2)
    except OSError as exc:
        click.echo(f"cannot read {path}: {exc}", err=True)
        sys.exit(2)


def _complex_opt(value):
    re, im = (float(v) for v in value.split(","))
    return {"re": re, "im": im}


@click.group()
@click.option("--server", default=None, help="URL of a running service; "
              "default runs the app in-process")
@click.option("--threads", default=None, type=int,
              help="BLAS thread cap (fallback: STARK_SPEC_THREADS)")
@click.option("--seed", default=0, type=int, help="seed recorded in outputs")
@click.option("--tol", default=None, type=float, help="default accuracy override")
@click.option("--route", default=None, type=click.Choice(["table", "propagator"]))
@click.pass_context
def main(ctx, server, threads, seed, tol, route):
    """Numerical toolkit for constant-field complex-potential spectra."""
    ctx.ensure_object(dict)
    ctx.obj.update(server=server, seed=seed, tol=tol, route=route)
    n = threads if threads is not None else os.environ.get("STARK_SPEC_THREADS")
    if n is not None:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(int(n))
        except ImportError:
            os.environ.setdefault("OMP_NUM_THREADS", str(n))


@main.command()
@click.option("--input", "input_path", required=True)
@click.option("--output", "output_path", required=True)
@click.option("--t", default=0.0, type=float)
@click.option("--mode", default="stark",
              type=click.Choice(["stark", "shifted", "free", "damped"]))
@click.option("--z", default=None, help="complex damping 're,im' (damped mode)")
@click.pass_context
def propagate(ctx, input_path, output_path, t, mode, z):
    """Evolve a tabulated field under the exact constant-field flow."""
    payload = {"input_path": input_path, "output_path": output_path,
               "mode": mode, "t": t}
    if z:
        payload["z"] = _complex_opt(z)
    click.echo(json.dumps(_post(ctx, "/propagate", payload), indent=1))


@main.command()
@click.option("--kind", required=True,
              type=click.Choice(["r_zeta", "rho1", "rho2", "nu", "eta",
                                 "mu0", "mu", "resolvent"]))
@click.option("--x", default="0,0,0")
@click.option("--y", default="1,0,0")
@click.option("--lam", required=True, help="complex 're,im'")
@click.option("--zeta", default="2,0")
@click.option("--tol", default=1e-8, type=float)
@click.option("--route", default="mu")
@click.pass_context
def kernel(ctx, kind, x, y, lam, zeta, tol, route):
    """Evaluate an integral kernel at raw coordinates; prints value + error."""
    payload = {
        "kind": kind,
        "x": [float(v) for v in x.split(",")],
        "y": [float(v) for v in y.split(",")],
        "lam": _complex_opt(lam), "zeta": _complex_opt(zeta),
        "tol": tol, "route": route,
    }
    click.echo(json.dumps(_post(ctx, "/kernel", payload), indent=1))


@main.command()
@click.option("--config", "config_path", required=True,
              help="JSON potential spec")
@click.option("--lam", required=True, help="complex 're,im'")
@click.option("--p", default=2.0, type=float)
@click.option("--op-norm", is_flag=True, help="operator norm instead of Schatten")
@click.option("--profile", nargs=3, type=float, default=None,
              help="segment_a segment_b tau (profile mode)")
@click.option("--samples", default=9, type=int)
@click.option("--csv", "csv_path", default=None)
@click.pass_context
def bsnorm(ctx, config_path, lam, p, op_norm, profile, samples, csv_path):
    """Schatten/operator norms of the sandwiched resolvent."""
    pot = _potential_payload(ctx, config_path)
    if profile:
        payload = {"potential": pot, "p": p, "segment": [profile[0], profile[1]],
                   "tau": profile[2], "samples": samples, "csv_path": csv_path}
        if ctx.obj.get("tol"):
            payload["accuracy"] = ctx.obj["tol"]
        click.echo(json.dumps(_post(ctx, "/bsnorm/profile", payload), indent=1))
        return
    payload = {"potential": pot, "lam": _complex_opt(lam),
               "p": None if op_norm else p,
               "route": ctx.obj.get("route") or "table"}
    if ctx.obj.get("tol"):
        payload["accuracy"] = ctx.obj["tol"]
    click.echo(json.dumps(_post(ctx, "/bsnorm", payload), indent=1))


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--lam", required=True)
@click.option("--n", "n_det", default=5, type=int)
@click.pass_context
def det(ctx, config_path, lam, n_det):
    """Perturbation determinant diagnostic at one spectral point."""
    payload = {"potential": _potential_payload(ctx, config_path),
               "lam": _complex_opt(lam), "n_det": n_det,
               "route": ctx.obj.get("route") or "table"}
    click.echo(json.dumps(_post(ctx, "/det", payload), indent=1))


@main.command()
@click.option("--config", "config_path", required=True,
              help="JSON with potential and region")
@click.option("--out", "out_dir", default=None)
@click.option("--oracle", is_flag=True, help="also run the grid diagonalization")
@click.pass_context
def spectrum(ctx, config_path, out_dir, oracle):
    """Locate, refine, and certify determinant zeros in a region."""
    cfg = _load_json(config_path)
    payload = {"potential": _potential_from_cfg(cfg),
               "region": cfg["region"], "oracle": oracle}
    for key in ("n_det", "contour_pps", "max_doublings", "oracle_n", "oracle_box"):
        if key in cfg:
            payload[key] = cfg[key]
    if ctx.obj.get("tol"):
        payload["accuracy"] = ctx.obj["tol"]
    if out_dir:
        payload["out_dir"] = out_dir
    click.echo(json.dumps(_post(ctx, "/spectrum", payload), indent=1))


@main.command()
@click.option("--input", "input_path", required=True, help="JSON request")
@click.pass_context
def zerocount(ctx, input_path):
    """Synthetic zero-counting checks (Blaschke, zero-sum, corner bounds)."""
    click.echo(json.dumps(_post(ctx, "/zerocount", _load_json(input_path)),
                          indent=1))


@main.command()
@click.option("--theorem", required=True)
@click.option("--config", "config_path", required=True, help="potential JSON")
@click.option("--spectrum", "spectrum_csv", required=True, help="spectrum CSV")
@click.option("--params", default="{}", help="JSON dict of theorem parameters")
@click.option("--constant", default=None, type=float)
@click.pass_context
def bounds(ctx, theorem, config_path, spectrum_csv, params, constant):
    """Inequality report for a computed spectrum."""
    payload = {"theorem": theorem,
               "potential": _potential_payload(ctx, config_path),
               "spectrum_csv": spectrum_csv,
               "params": json.loads(params)}
    if constant is not None:
        payload["constant"] = constant
    click.echo(json.dumps(_post(ctx, "/bounds", payload), indent=1))


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.pass_context
def run(ctx, config_path, out_dir):
    """Full pipeline: spectrum, scan heatmap, bound reports, diagnostics."""
    cfg = _load_json(config_path)
    payload = {"potential": _potential_from_cfg(cfg), "region": cfg["region"],
               "checks": cfg.get("checks", []), "out_dir": out_dir,
               "seed": cfg.get("seed", ctx.obj.get("seed", 0))}
    for key in ("n_det", "route", "accuracy"):
        if key in cfg:
            payload[key] = cfg[key]
    if ctx.obj.get("tol"):
        payload["accuracy"] = ctx.obj["tol"]
    if ctx.obj.get("route"):
        payload["route"] = ctx.obj["route"]
    click.echo(json.dumps(_post(ctx, "/run", payload), indent=1))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8787, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run("starkspec.service:app", host=host, port=port)


def _potential_payload(ctx, config_path):
    return _potential_from_cfg(_load_json(config_path))


def _potential_from_cfg(cfg):
    pot = cfg.get("potential", cfg)
    out = {"grid": pot["grid"]}
    for key in ("preset", "amplitude", "sigma", "center", "cutoff_radius",
                "tabulated_path"):
        if key in pot:
            out[key] = pot[key]
    return out


if __name__ == "__main__":
    main()
