"""Locating nonreal eigenvalues as zeros of the perturbation determinant.

Pipeline: a minimum-singular-value scan of I + Y0(lambda) over a search
rectangle flags candidates; Newton refinement on the log-derivative of
det_n(I + Y0) locates each zero; a winding-number integral around the refined
location certifies the count with multiplicity.  An independent cross-check
diagonalizes the (periodic finite-difference) grid operator directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import PotentialField, Grid3, build_potential
from .birman_schwinger import BSAssembler
from .determinants import logderiv_from_matrices

__all__ = ["SearchRegion", "EigenRecord", "ScanResult", "scan_min_singular",
           "count_zeros_contour", "refine_newton", "direct_grid_oracle",
           "find_spectrum", "EigenSolverError"]

IM_FLOOR = 0.25  # grid-validity floor for the search region


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchRegion:
    re_min: float
    re_max: float
    im_min: float
    im_max: float
    n_re: int = 15
    n_im: int = 8
    pad: float = 0.15

    def __post_init__(self):
        if not (self.re_max > self.re_min and self.im_max > self.im_min):
            raise ValueError("degenerate search rectangle")
        if self.im_min < IM_FLOOR:
            raise ValueError(f"region must stay above Im lambda = {IM_FLOOR}")

    def lattice(self):
        xs = np.linspace(self.re_min, self.re_max, self.n_re)
        ys = np.linspace(self.im_min, self.im_max, self.n_im)
        return xs, ys


@dataclass
class EigenRecord:
    lam: complex
    multiplicity: int
    residual: float           # sigma_min(I + Y0) at the zero
    op_norm: float            # ||Y0||, the residual scale
    iterations: int
    converged: bool

    def as_dict(self):
        return {"re": self.lam.real, "im": self.lam.imag,
                "multiplicity": self.multiplicity, "residual": self.residual,
                "op_norm": self.op_norm, "iterations": self.iterations,
                "converged": self.converged}


@dataclass
class ScanResult:
    region: SearchRegion
    re_grid: np.ndarray
    im_grid: np.ndarray
    sigma_min: np.ndarray             # (n_im, n_re)
    candidates: list = field(default_factory=list)


def _sigma_min_from_lu(lu_piv, n, iters=30, tol=1e-4, seed=7):
    """Smallest singular value via inverse power iteration on (A A^H)^{-1}."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(iters):
        y = sla.lu_solve(lu_piv, v, trans=2)
        z = sla.lu_solve(lu_piv, y, trans=0)
        nz = np.linalg.norm(z)
        if not np.isfinite(nz) or nz == 0:
            return 0.0
        sig = 1.0 / math.sqrt(nz)
        v = z / nz
        if abs(sig - prev) <= tol * sig:
            return sig
        prev = sig
    return sig


def _op_norm(X, iters=20, seed=11):
    if X.shape[0] == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(X.shape[0]) + 1j * rng.standard_normal(X.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = X.conj().T @ (X @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = math.sqrt(nw)
        v = w / nw
        if abs(new - est) <= 1e-3 * new:
            return new
        est = new
    return est


def _point_state(asmb: BSAssembler, lam: complex, deriv: bool):
    """Assemble at lambda; return (X, Xp, lu, sigma_min)."""
    if deriv:
        M, Xp = asmb.assemble_with_dlam(lam)
    else:
        M, Xp = asmb.assemble(lam), None
    X = M.entries
    n = X.shape[0]
    lu = sla.lu_factor(np.eye(n, dtype=complex) + X)
    sig = _sigma_min_from_lu(lu, n)
    return X, Xp, lu, sig


def scan_min_singular(V_or_asmb, region: SearchRegion, n_det: int = 5,
                      threshold: float = 0.1) -> ScanResult:
    """Sample sigma_min(I + Y0) on the region lattice and flag local minima
    below the candidate threshold."""
    asmb = V_or_asmb if isinstance(V_or_asmb, BSAssembler) else BSAssembler(V_or_asmb)
    xs, ys = region.lattice()
    sig = np.empty((len(ys), len(xs)))
    if len(asmb.idx) == 0:
        sig[:] = 1.0
        return ScanResult(region, xs, ys, sig, [])
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            _, _, _, s = _point_state(asmb, complex(x, y), deriv=False)
            sig[iy, ix] = s
    cands = []
    for iy in range(len(ys)):
        for ix in range(len(xs)):
            v = sig[iy, ix]
            if v >= threshold:
                continue
            neigh = sig[max(0, iy - 1):iy + 2, max(0, ix - 1):ix + 2]
            if v <= neigh.min() + 1e-15:
                cands.append({"lam": complex(xs[ix], ys[iy]), "sigma_min": float(v)})
    cands.sort(key=lambda c: c["sigma_min"])
    return ScanResult(region, xs, ys, sig, cands)


def _rect_contour_nodes(center: complex, half_w: float, half_h: float, pps: int):
    """Gauss-Legendre nodes and weights along a rectangle, counterclockwise."""
    x, w = np.polynomial.legendre.leggauss(pps)
    c = center
    corners = [c + complex(-half_w, -half_h), c + complex(half_w, -half_h),
               c + complex(half_w, half_h), c + complex(-half_w, half_h)]
    zs, ws = [], []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        zs.append(mid + half * x)
        ws.append(half * w)
    return np.concatenate(zs), np.concatenate(ws)


def count_zeros_contour(target, contour, n_det: int = 5, pps: int = 64,
                        max_doublings: int = 3, guard: float = 0.002,
                        residue_tol: float = 0.2) -> dict:
    """Winding number (1/2 pi i) contour integral of F'/F on a rectangle.

    target: a BSAssembler/PotentialField (F = det_n(I + Y0)) or a callable
    F(lambda) for synthetic checks (derivative by central differences).
    contour: (center, half_width, half_height).
    The count is doubled in quadrature order until the integer stabilizes.
    """
    center, half_w, half_h = contour
    if callable(target):
        def logderiv(lam):
            h = 1e-6 * (1.0 + abs(lam))
            f0 = target(lam)
            return (target(lam + h) - target(lam - h)) / (2.0 * h) / f0, math.inf
    else:
        asmb = target if isinstance(target, BSAssembler) else BSAssembler(target)

        def logderiv(lam):
            X, Xp, lu, sig = _point_state(asmb, lam, deriv=True)
            if sig < guard:
                raise EigenSolverError(
                    f"zero within guard distance of the contour (sigma_min={sig:.2e})")
            val = complex(np.trace(sla.lu_solve(lu, Xp)))
            if n_det >= 2:
                val -= complex(np.trace(Xp))
            if n_det >= 3:
                val += complex(np.einsum("ij,ji->", X, Xp))
            Xpow = X
            for j in range(2, n_det - 1):
                Xpow = Xpow @ X
                val += (-1.0) ** (j + 1) * complex(np.einsum("ij,ji->", Xpow, Xp))
            return val, sig

    prev = None
    evaluations = 0
    for dbl in range(max_doublings + 1):
        zs, ws = _rect_contour_nodes(complex(center), half_w, half_h, pps)
        total = 0.0 + 0.0j
        for z, w in zip(zs, ws):
            ld, _ = logderiv(z)
            total += w * ld
        evaluations += len(zs)
        raw = total / (2.0j * math.pi)
        count = round(raw.real)
        residue = abs(raw - count)
        if residue < residue_tol and (prev == count or max_doublings == 0):
            return {"count": int(count), "raw": complex(raw), "residue": float(residue),
                    "pps": pps, "evaluations": evaluations}
        prev = count
        pps *= 2
    if residue >= residue_tol:
        raise EigenSolverError(
            f"winding number did not settle (raw={raw}, residue={residue:.3f})")
    return {"count": int(count), "raw": complex(raw), "residue": float(residue),
            "pps": pps // 2, "evaluations": evaluations}


def refine_newton(target, lam0: complex, n_det: int = 5, max_iter: int = 50,
                  step_tol: float = 1e-9, residual_factor: float = 1e-6,
                  im_floor: float = 0.05):
    """Newton iteration lambda <- lambda - F/F' on F = det_n(I + Y0).

    target may be a BSAssembler/PotentialField, or a callable F(lambda) for
    synthetic cases.  Returns an EigenRecord (multiplicity filled by the
    caller from a winding count; 1 by default).
    """
    lam = complex(lam0)
    if callable(target):
        for it in range(1, max_iter + 1):
            h = 1e-7 * (1.0 + abs(lam))
            f0 = target(lam)
            ld = (target(lam + h) - target(lam - h)) / (2.0 * h) / f0
            step = 1.0 / ld
            lam = lam - step
            if abs(step) < step_tol * (1.0 + abs(lam)):
                return EigenRecord(lam, 1, abs(target(lam)), 1.0, it, True)
        return EigenRecord(lam, 1, abs(target(lam)), 1.0, max_iter, False)

    from .quadrature import QuadratureBudgetError
    from .kernels import KernelDomainError

    asmb = target if isinstance(target, BSAssembler) else BSAssembler(target)
    sig = math.inf
    opn = 0.0
    lam_start = lam
    basin_checked = False
    for it in range(1, max_iter + 1):
        try:
            X, Xp, lu, sig = _point_state(asmb, lam, deriv=True)
        except (QuadratureBudgetError, KernelDomainError):
            return EigenRecord(lam, 1, sig, opn, it, False)
        opn = _op_norm(X)
        if not basin_checked:
            basin_checked = True
            if sig >= 0.1:
                return EigenRecord(lam, 1, sig, opn, it, False)
        if sig < residual_factor * opn:
            return EigenRecord(lam, 1, sig, opn, it, True)
        ld = logderiv_from_matrices(X, Xp, n_det)
        step = 1.0 / ld
        cap = 0.5 * (1.0 + abs(lam))
        if abs(step) > cap:
            step *= cap / abs(step)
        new = lam - step
        if new.imag < im_floor:
            new = complex(new.real, 0.5 * (lam.imag + im_floor))
        if abs(new - lam_start) > 10.0 * (1.0 + abs(lam_start)):
            return EigenRecord(new, 1, sig, opn, it, False)
        lam = new
        if abs(step) < step_tol * (1.0 + abs(lam)):
            X, _, lu, sig = _point_state(asmb, lam, deriv=False)
            opn = _op_norm(X)
            return EigenRecord(lam, 1, sig, opn, it,
                               sig < residual_factor * opn)
    return EigenRecord(lam, 1, sig, opn, max_iter, False)


# -- independent grid diagonalization ------------------------------------------

_FD_COEFFS = {
    2: [1.0, -2.0, 1.0],
    4: [-1.0 / 12, 4.0 / 3, -5.0 / 2, 4.0 / 3, -1.0 / 12],
    6: [1.0 / 90, -3.0 / 20, 3.0 / 2, -49.0 / 18, 3.0 / 2, -3.0 / 20, 1.0 / 90],
}


def _periodic_second_derivative(n, h, order):
    coeffs = _FD_COEFFS[order]
    half = len(coeffs) // 2
    D = sp.lil_matrix((n, n))
    for off, c in zip(range(-half, half + 1), coeffs):
        for i in range(n):
            D[i, (i + off) % n] += c / h**2
    return D.tocsr()


def direct_grid_oracle(V: PotentialField, box, n_per_axis: int, *,
                       sigma: complex | None = None, k: int = 8,
                       fd_order: int = 6, im_floor: float = IM_FLOOR,
                       interior_mass: float = 0.99) -> list[dict]:
    """Eigenvalues of the periodic grid operator -Lap + x1 + V on the box.

    V must carry an analytic preset (it is resampled on the oracle grid).
    Admissible eigenvalues have Im >= im_floor and >= interior_mass of the
    eigenvector mass in the middle half of the box; everything else is a
    discretization artifact and is dropped.
    """
    if n_per_axis > 24:
        raise ValueError("oracle instances are capped at 24 points per axis")
    if V.preset is None:
        raise ValueError("the oracle needs an analytic preset to resample")
    lo, hi = box
    grid = Grid3((lo,) * 3, (hi,) * 3, (n_per_axis,) * 3)
    Vg = build_potential(V.preset, grid)
    n = n_per_axis
    h = grid.spacing[0]
    D1 = _periodic_second_derivative(n, h, fd_order)
    eye = sp.identity(n, format="csr")
    lap = (sp.kron(sp.kron(D1, eye), eye) + sp.kron(sp.kron(eye, D1), eye)
           + sp.kron(sp.kron(eye, eye), D1)).tocsr()
    diag = grid.nodes()[:, 0] + Vg.values
    A = (-lap + sp.diags(diag)).tocsc()

    if sigma is None or n**3 <= 3000:
        w, vecs = sla.eig(A.toarray())
    else:
        w, vecs = spla.eigs(A, k=k, sigma=complex(sigma))

    nodes = grid.nodes()
    center = 0.5 * (lo + hi)
    quarter = 0.25 * (hi - lo)
    inside = np.all(np.abs(nodes - center) <= quarter, axis=1)
    out = []
    for i in range(len(w)):
        if w[i].imag < im_floor:
            continue
        psi2 = np.abs(vecs[:, i]) ** 2
        mass = float(np.sum(psi2[inside]) / np.sum(psi2))
        if mass >= interior_mass:
            out.append({"lam": complex(w[i]), "interior_mass": mass})
    out.sort(key=lambda r: -r["lam"].imag)
    return out


def find_spectrum(V: PotentialField, region: SearchRegion, n_det: int = 5,
                  accuracy: float = 1e-6, scan_threshold: float = 0.1,
                  contour_pps: int = 16, max_doublings: int = 2,
                  dedupe_tol: float = 1e-5) -> dict:
    """Scan, refine, and certify all zeros of D_n in the region."""
    asmb = BSAssembler(V, accuracy=accuracy)
    scan = scan_min_singular(asmb, region, n_det, threshold=scan_threshold)
    records: list[EigenRecord] = []
    for cand in scan.candidates:
        rec = refine_newton(asmb, cand["lam"], n_det)
        if not rec.converged:
            continue
        if any(abs(rec.lam - r.lam) < dedupe_tol * (1 + abs(rec.lam)) for r in records):
            continue
        records.append(rec)
    for rec in records:
        pad = region.pad
        try:
            cnt = count_zeros_contour(asmb, (rec.lam, pad, pad), n_det,
                                      pps=contour_pps, max_doublings=max_doublings)
            rec.multiplicity = max(1, cnt["count"])
        except EigenSolverError:
            rec.multiplicity = 1
    records.sort(key=lambda r: (r.lam.real, r.lam.imag))
    return {"scan": scan, "records": records}
