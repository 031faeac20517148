"""FastAPI service exposing the toolkit; the CLI is a thin client of this app.

Endpoints mirror the CLI subcommands one to one.  Heavy numerical work runs
synchronously inside the request (desk-scale tool, one worker); file-producing
endpoints write on the server side and return the paths.
"""

from __future__ import annotations

import functools
import json
import math
import pathlib
import time

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .model import (Grid3, PotentialField, build_potential, factorize,
                    weighted_lp_integral, WeightFunction, read_field_binary,
                    write_field_binary, ModelError)
from .propagator import (PropagatorPlan, WaveField, apply_stark_propagator,
                         apply_stark_propagator_shifted,
                         apply_free_laplacian_flow, apply_damped_propagator)
from .kernels import kernel_value, KernelDomainError
from .quadrature import QuadratureBudgetError
from .birman_schwinger import (BSAssembler, schatten_norm, norm_profile,
                               NodeCapError)
from .determinants import det_n
from .eigensolver import (SearchRegion, find_spectrum, direct_grid_oracle,
                          EigenSolverError, IM_FLOOR)
from .zerocount import (verify_zero_sum_bound, corner_count_constant,
                        corner_count_bound, half_plane_unit_sample,
                        blaschke_product_half_plane, DominationError)
from . import bounds as bounds_mod
from .calibration import get_calibration

app = FastAPI(title="starkspec", version=__version__)


class GridModel(BaseModel):
    lo: list[float] = Field(min_length=3, max_length=3)
    hi: list[float] = Field(min_length=3, max_length=3)
    n: list[int] = Field(min_length=3, max_length=3)

    def to_grid(self) -> Grid3:
        return Grid3(tuple(self.lo), tuple(self.hi), tuple(self.n))


class PotentialModel(BaseModel):
    preset: str | None = None
    amplitude: list[float] | None = None       # [re, im]
    sigma: float | list[float] | None = None
    center: list[float] | None = None
    cutoff_radius: float | None = None
    tabulated_path: str | None = None
    grid: GridModel

    def to_field(self) -> PotentialField:
        grid = self.grid.to_grid()
        if self.tabulated_path:
            g2, vals = read_field_binary(self.tabulated_path)
            if g2 != grid:
                raise ModelError("tabulated grid header does not match request")
            return PotentialField(grid, vals)
        if not self.preset:
            raise ModelError("potential needs a preset or a tabulated_path")
        spec = {"preset": self.preset}
        for key in ("amplitude", "sigma", "center", "cutoff_radius"):
            val = getattr(self, key)
            if val is not None:
                spec[key] = val
        return build_potential(spec, grid)


class ComplexModel(BaseModel):
    re: float
    im: float

    def to_complex(self) -> complex:
        return complex(self.re, self.im)

    @staticmethod
    def of(z: complex) -> "ComplexModel":
        return ComplexModel(re=float(np.real(z)), im=float(np.imag(z)))


def _wrap_errors(fn):
    @functools.wraps(fn)
    def inner(*a, **kw):
        try:
            return fn(*a, **kw)
        except (ModelError, KernelDomainError, NodeCapError, DominationError,
                ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except (QuadratureBudgetError, EigenSolverError) as exc:
            raise HTTPException(status_code=500, detail=str(exc))
    return inner


@app.get("/healthz")
def healthz():
    return {"status": "ok", "version": __version__}


# -- kernels --------------------------------------------------------------------

class KernelRequest(BaseModel):
    kind: str
    x: list[float] = Field(default=[0.0, 0.0, 0.0], min_length=3, max_length=3)
    y: list[float] = Field(default=[0.0, 0.0, 0.0], min_length=3, max_length=3)
    lam: ComplexModel
    zeta: ComplexModel = ComplexModel(re=2.0, im=0.0)
    tol: float = 1e-8
    route: str = "mu"


class KernelResponse(BaseModel):
    value: ComplexModel
    error_estimate: float
    evaluations: int


@app.post("/kernel", response_model=KernelResponse)
@_wrap_errors
def kernel_endpoint(req: KernelRequest):
    res = kernel_value(req.kind, req.x, req.y, req.lam.to_complex(),
                       req.zeta.to_complex(), req.tol, req.route)
    return KernelResponse(value=ComplexModel.of(res.value),
                          error_estimate=res.error, evaluations=res.evaluations)


# -- propagator -----------------------------------------------------------------

class PropagateRequest(BaseModel):
    input_path: str
    output_path: str
    mode: str = "stark"            # stark | shifted | free | damped
    t: float = 0.0
    z: ComplexModel | None = None  # damped mode


class PropagateResponse(BaseModel):
    output_path: str
    norm_in: float
    norm_out: float


@app.post("/propagate", response_model=PropagateResponse)
@_wrap_errors
def propagate_endpoint(req: PropagateRequest):
    grid, vals = read_field_binary(req.input_path)
    plan = PropagatorPlan(grid)
    u = WaveField(grid, vals)
    if req.mode == "stark":
        out = apply_stark_propagator(plan, req.t, u)
    elif req.mode == "shifted":
        out = apply_stark_propagator_shifted(plan, req.t, u)
    elif req.mode == "free":
        out = apply_free_laplacian_flow(plan, req.t, u)
    elif req.mode == "damped":
        if req.z is None:
            raise ModelError("damped mode needs z")
        out = apply_damped_propagator(plan, req.z.to_complex(), u)
    else:
        raise ModelError(f"unknown propagate mode {req.mode!r}")
    write_field_binary(req.output_path, grid, out.amplitudes.ravel())
    return PropagateResponse(output_path=req.output_path,
                             norm_in=u.norm(), norm_out=out.norm())


# -- Birman-Schwinger norms -------------------------------------------------------

class BsnormRequest(BaseModel):
    potential: PotentialModel
    lam: ComplexModel
    p: float | None = 2.0          # None = operator norm
    route: str = "table"
    accuracy: float = 1e-6


class BsnormResponse(BaseModel):
    norm: float
    p: float | None
    n_nodes: int
    assembly_error: float
    diagnostics: dict


@app.post("/bsnorm", response_model=BsnormResponse)
@_wrap_errors
def bsnorm_endpoint(req: BsnormRequest):
    V = req.potential.to_field()
    asmb = BSAssembler(V, accuracy=req.accuracy)
    M = asmb.assemble(req.lam.to_complex(), route=req.route)
    p = req.p if req.p is not None else math.inf
    val = schatten_norm(M, p)
    diag = {k: v for k, v in M.diagnostics.items() if k != "table"}
    diag["truncation_mass"] = V.truncation_mass
    return BsnormResponse(norm=val, p=req.p, n_nodes=M.n,
                          assembly_error=M.assembly_error, diagnostics=diag)


class ProfileRequest(BaseModel):
    potential: PotentialModel
    p: float
    segment: list[float] = Field(min_length=2, max_length=2)
    tau: float
    samples: int = 9
    accuracy: float = 1e-6
    csv_path: str | None = None


class ProfileResponse(BaseModel):
    lam_re: list[float]
    norms: list[float]
    integral_p: float
    csv_path: str | None


@app.post("/bsnorm/profile", response_model=ProfileResponse)
@_wrap_errors
def profile_endpoint(req: ProfileRequest):
    V = req.potential.to_field()
    prof = norm_profile(V, req.p, tuple(req.segment), req.tau, req.samples,
                        accuracy=req.accuracy)
    if req.csv_path:
        _write_csv(req.csv_path, ["lam_re", "lam_im", "norm"], prof.as_rows())
    return ProfileResponse(lam_re=[float(x) for x in prof.lam_re],
                           norms=[float(x) for x in prof.norms],
                           integral_p=prof.integral_p, csv_path=req.csv_path)


# -- determinant diagnostic -------------------------------------------------------

class DetRequest(BaseModel):
    potential: PotentialModel
    lam: ComplexModel
    n_det: int = 5
    route: str = "table"
    accuracy: float = 1e-6


class DetResponse(BaseModel):
    value: ComplexModel
    log_magnitude: float
    phase: float
    n_nodes: int
    min_dist_minus_one: float


@app.post("/det", response_model=DetResponse)
@_wrap_errors
def det_endpoint(req: DetRequest):
    V = req.potential.to_field()
    asmb = BSAssembler(V, accuracy=req.accuracy)
    M = asmb.assemble(req.lam.to_complex(), route=req.route)
    d = det_n(M.entries, req.n_det)
    return DetResponse(value=ComplexModel.of(d.value),
                       log_magnitude=d.log_magnitude,
                       phase=float(np.imag(d.log_value)),
                       n_nodes=M.n, min_dist_minus_one=d.min_dist_minus_one)


# -- spectrum ---------------------------------------------------------------------

class RegionModel(BaseModel):
    re_min: float
    re_max: float
    im_min: float = IM_FLOOR
    im_max: float
    n_re: int = 15
    n_im: int = 8
    pad: float = 0.15

    def to_region(self) -> SearchRegion:
        return SearchRegion(self.re_min, self.re_max, self.im_min, self.im_max,
                            self.n_re, self.n_im, self.pad)


class SpectrumRequest(BaseModel):
    potential: PotentialModel
    region: RegionModel
    n_det: int = 5
    accuracy: float = 1e-6
    contour_pps: int = 16
    max_doublings: int = 2
    out_dir: str | None = None
    oracle: bool = False
    oracle_n: int = 16
    oracle_box: list[float] | None = None


class EigenModel(BaseModel):
    lam: ComplexModel
    multiplicity: int
    residual: float
    op_norm: float
    iterations: int
    converged: bool


class SpectrumResponse(BaseModel):
    records: list[EigenModel]
    n_candidates: int
    artifacts: dict
    oracle: list[dict] | None = None


@app.post("/spectrum", response_model=SpectrumResponse)
@_wrap_errors
def spectrum_endpoint(req: SpectrumRequest):
    V = req.potential.to_field()
    region = req.region.to_region()
    result = find_spectrum(V, region, req.n_det, accuracy=req.accuracy,
                           contour_pps=req.contour_pps,
                           max_doublings=req.max_doublings)
    records = result["records"]
    scan = result["scan"]
    artifacts = {}
    if req.out_dir:
        out = pathlib.Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        spec_csv = out / "spectrum.csv"
        _write_csv(spec_csv, ["re", "im", "multiplicity", "residual"],
                   [(r.lam.real, r.lam.imag, r.multiplicity, r.residual)
                    for r in records])
        scan_csv = out / "scan_sigma_min.csv"
        rows = []
        for iy, y in enumerate(scan.im_grid):
            for ix, x in enumerate(scan.re_grid):
                rows.append((x, y, scan.sigma_min[iy, ix]))
        _write_csv(scan_csv, ["re", "im", "sigma_min"], rows)
        artifacts = {"spectrum_csv": str(spec_csv), "scan_csv": str(scan_csv)}
    oracle_rows = None
    if req.oracle:
        box = tuple(req.oracle_box) if req.oracle_box else (-5.0, 5.0)
        seeds = [r.lam for r in records] or [None]
        oracle_rows = []
        seen = set()
        for seed in seeds:
            for rec in direct_grid_oracle(V, box, req.oracle_n, sigma=seed):
                key = (round(rec["lam"].real, 6), round(rec["lam"].imag, 6))
                if key not in seen:
                    seen.add(key)
                    oracle_rows.append({"re": rec["lam"].real,
                                        "im": rec["lam"].imag,
                                        "interior_mass": rec["interior_mass"]})
    return SpectrumResponse(
        records=[EigenModel(lam=ComplexModel.of(r.lam),
                            multiplicity=r.multiplicity, residual=r.residual,
                            op_norm=r.op_norm, iterations=r.iterations,
                            converged=r.converged) for r in records],
        n_candidates=len(scan.candidates), artifacts=artifacts,
        oracle=oracle_rows)


# -- zero counting -----------------------------------------------------------------

class ZerocountRequest(BaseModel):
    mode: str                       # blaschke | zero_sum | corner_constant | corner_bound
    zeros: list[ComplexModel] = []
    eps: float = 0.0
    at: ComplexModel | None = None
    eps_lattice: list[float] | None = None
    alpha: float | None = None
    p: float | None = None
    delta: float | None = None
    M: float | None = None
    c_pdelta: float | None = None


@app.post("/zerocount")
@_wrap_errors
def zerocount_endpoint(req: ZerocountRequest):
    zeros = [z.to_complex() for z in req.zeros]
    if req.mode == "blaschke":
        if req.at is None:
            raise ModelError("mode 'blaschke' needs an evaluation point 'at'")
        val = blaschke_product_half_plane(zeros, req.eps, req.at.to_complex())
        return {"value": {"re": val.real, "im": val.imag}}
    if req.mode == "zero_sum":
        sample = half_plane_unit_sample(zeros)
        lattice = req.eps_lattice or [1e-3 * 2.0**-k for k in range(6)]

        def f_bound(eps, xs):
            vals = np.asarray([sample(complex(x, eps)) for x in xs])
            return np.maximum(np.log(np.abs(vals)), 0.0)
        rep = verify_zero_sum_bound(sample, f_bound, lattice)
        return {k: v for k, v in rep.items()}
    if req.mode == "corner_constant":
        cal = get_calibration()
        c = req.c_pdelta if req.c_pdelta is not None else cal["corner_constant"]
        return corner_count_constant(req.alpha, req.p, req.delta, c)
    if req.mode == "corner_bound":
        cal = get_calibration()
        c = req.c_pdelta if req.c_pdelta is not None else cal["corner_constant"]
        val = corner_count_bound(req.alpha, req.eps, req.p, req.delta, req.M, c)
        return {"bound": val}
    raise ModelError(f"unknown zerocount mode {req.mode!r}")


# -- bounds -------------------------------------------------------------------------

class SpectrumRowModel(BaseModel):
    re: float
    im: float
    multiplicity: int = 1
    residual: float = 0.0


class BoundsRequest(BaseModel):
    theorem: str
    potential: PotentialModel
    params: dict = {}
    constant: float | None = None
    spectrum: list[SpectrumRowModel] | None = None
    spectrum_csv: str | None = None
    region: RegionModel | None = None


@app.post("/bounds")
@_wrap_errors
def bounds_endpoint(req: BoundsRequest):
    V = req.potential.to_field()
    rows = req.spectrum or []
    if req.spectrum_csv:
        for re_, im_, mult, res in _read_csv(req.spectrum_csv, 4):
            rows.append(SpectrumRowModel(re=re_, im=im_, multiplicity=int(mult),
                                         residual=res))

    class _Rec:
        def __init__(self, row):
            self.lam = complex(row.re, row.im)
            self.multiplicity = row.multiplicity
    spectrum = [_Rec(r) for r in rows]
    cal = get_calibration()
    constant = req.constant
    if constant is None:
        constant = cal["bound_constants"].get(req.theorem, 1.0)
    region = req.region.model_dump() if req.region else None
    rep = bounds_mod.check(req.theorem, spectrum, V, req.params,
                           constant=constant, region=region)
    return rep.as_dict()


# -- whole run ------------------------------------------------------------------------

class RunRequest(BaseModel):
    potential: PotentialModel
    region: RegionModel
    n_det: int = 5
    route: str = "table"
    accuracy: float = 1e-6
    seed: int = 0
    checks: list[dict] = []         # [{"theorem": ..., "params": {...}}]
    out_dir: str


class RunResponse(BaseModel):
    out_dir: str
    spectrum: list[EigenModel]
    reports: list[dict]
    artifacts: dict
    elapsed: float


@app.post("/run", response_model=RunResponse)
@_wrap_errors
def run_endpoint(req: RunRequest):
    t0 = time.time()
    V = req.potential.to_field()
    if V.truncation_mass > 1e-6:
        raise ModelError(
            f"preset truncation mass {V.truncation_mass:.2e} above 1e-6; "
            "enlarge the box or cutoff radius")
    region = req.region.to_region()
    result = find_spectrum(V, region, req.n_det, accuracy=req.accuracy)
    records = result["records"]
    scan = result["scan"]
    out = pathlib.Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_csv = out / "spectrum.csv"
    _write_csv(spec_csv, ["re", "im", "multiplicity", "residual"],
               [(r.lam.real, r.lam.imag, r.multiplicity, r.residual)
                for r in records])
    rows = []
    for iy, y in enumerate(scan.im_grid):
        for ix, x in enumerate(scan.re_grid):
            rows.append((x, y, scan.sigma_min[iy, ix]))
    _write_csv(out / "scan_sigma_min.csv", ["re", "im", "sigma_min"], rows)

    cal = get_calibration()
    reports = []
    for chk in req.checks:
        tag = chk["theorem"]
        constant = chk.get("constant", cal["bound_constants"].get(tag, 1.0))
        rep = bounds_mod.check(tag, records, V, chk.get("params", {}),
                               constant=constant,
                               region=req.region.model_dump())
        reports.append(rep.as_dict())
        (out / f"bound_{tag.replace('.', '_')}.json").write_text(
            json.dumps(rep.as_dict(), indent=1))
    diag = {
        "seed": req.seed, "n_det": req.n_det, "route": req.route,
        "truncation_mass": V.truncation_mass,
        "coarse_warning": V.coarse_warning,
        "n_support_nodes": int(np.sum(V.support_mask())),
        "candidates": len(scan.candidates),
        "elapsed": time.time() - t0,
    }
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=1))
    return RunResponse(
        out_dir=str(out),
        spectrum=[EigenModel(lam=ComplexModel.of(r.lam),
                             multiplicity=r.multiplicity, residual=r.residual,
                             op_norm=r.op_norm, iterations=r.iterations,
                             converged=r.converged) for r in records],
        reports=reports,
        artifacts={"spectrum_csv": str(spec_csv),
                   "scan_csv": str(out / "scan_sigma_min.csv"),
                   "diagnostics": str(out / "diagnostics.json")},
        elapsed=time.time() - t0)


# -- csv helpers -----------------------------------------------------------------------

def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("%.17g" % float(v) for v in row))
    pathlib.Path(path).write_text("\n".join(lines) + "\n")


def _read_csv(path, ncols):
    out = []
    text = pathlib.Path(path).read_text().strip().splitlines()
    for line in text[1:]:
        parts = line.split(",")
        if len(parts) < ncols:
            raise ModelError(f"bad CSV row in {path}: {line!r}")
        out.append(tuple(float(p) for p in parts[:ncols]))
    return out
