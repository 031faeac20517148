"""Dense Nystrom discretization of the sandwiched resolvent W1 R0(lambda) W2.

The matrix lives on the nodes where V is nonzero.  Entries use symmetrized
quadrature weights, entry(i,j) = sqrt(w_i) W1_i r0(x_i, x_j) W2_j sqrt(w_j),
so the spectrum matches the unweighted integral-operator discretization.

Two assembly routes:
  table       kernel-table lookups (singular part exact, correction bicubic);
              the weakly singular diagonal cell is integrated over the
              equal-volume ball in closed form
  propagator  columns from a time integral of the exact grid flow applied to
              grid deltas on a padded grid (diagnostic cross-check; its delta
              is band-limited, so near-diagonal entries differ at the
              quadrature-error level)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import Grid3, PotentialField, factorize
from .propagator import PropagatorPlan, WaveField, apply_stark_propagator
from .kernels import (KernelTable, build_kernel_table, mu0, mu0_ball_integral,
                      sqrt_upper, KernelDomainError)

__all__ = ["BSMatrix", "BSAssembler", "assemble", "schatten_norm",
           "norm_profile", "SchattenProfile", "NodeCapError",
           "resolvent_apply_grid", "discrete_stark_apply"]

NODE_CAP = 6000


class NodeCapError(ValueError):
    """Support node count above the dense-assembly cap."""


@dataclass
class BSMatrix:
    lam: complex
    node_index: np.ndarray          # indices into the potential's grid nodes
    entries: np.ndarray             # (N, N) complex
    route: str
    assembly_error: float           # kernel-level relative error estimate
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.node_index)


class BSAssembler:
    """Cached geometry and factor data for assembling Y0(lambda) matrices."""

    def __init__(self, V: PotentialField, accuracy: float = 1e-6,
                 table_margin: float = 0.75, row_chunk: int = 512):
        self.V = V
        self.accuracy = accuracy
        self.table_margin = table_margin
        self.row_chunk = row_chunk
        fac = factorize(V)
        idx = np.flatnonzero(V.support_mask())
        if len(idx) > NODE_CAP:
            raise NodeCapError(
                f"{len(idx)} support nodes exceed the cap of {NODE_CAP}; "
                "coarsen the grid or shrink the support")
        self.idx = idx
        nodes = V.grid.nodes()[idx]
        w = V.grid.weights()[idx]
        self.nodes = nodes
        self.weights = w
        sw = np.sqrt(w)
        self.a = sw * fac.w1[idx]          # left factor, sqrt(w_i) W1_i
        self.b = fac.w2[idx] * sw          # right factor, W2_j sqrt(w_j)
        self.x1 = nodes[:, 0]
        self._sep = None
        self._halfsum = None
        self._tables: dict[complex, KernelTable] = {}

    # pairwise geometry, computed once
    def _geometry(self):
        if self._sep is None:
            d2 = np.zeros((len(self.nodes), len(self.nodes)))
            for k in range(3):
                c = self.nodes[:, k]
                d2 += (c[:, None] - c[None, :]) ** 2
            self._sep = np.sqrt(d2)
            self._halfsum = 0.5 * (self.x1[:, None] + self.x1[None, :])
        return self._sep, self._halfsum

    def table_for(self, lam: complex) -> KernelTable:
        lam = complex(lam)
        if lam not in self._tables:
            if len(self._tables) > 8:
                self._tables.clear()
            self._tables[lam] = build_kernel_table(
                self.V.grid, lam, accuracy=self.accuracy, margin=self.table_margin)
        return self._tables[lam]

    def _resolvent_block(self, table, rows, lam, deriv=False):
        sep, halfsum = self._geometry()
        s_blk = sep[rows]
        v_blk = lam.real - halfsum[rows]
        Lam_blk = v_blk + 1j * lam.imag
        fn = table.resolvent_dlam if deriv else table.resolvent
        return fn(np.maximum(s_blk, 1e-300), Lam_blk)

    def assemble(self, lam: complex, route: str = "table", **kw) -> BSMatrix:
        lam = complex(lam)
        if lam.imag <= 0:
            raise KernelDomainError("Im lambda > 0 required")
        if len(self.idx) == 0:
            return BSMatrix(lam, self.idx, np.zeros((0, 0), dtype=complex),
                            route, 0.0)
        if route == "table":
            return self._assemble_table(lam, deriv=False)[0]
        if route == "propagator":
            return self._assemble_propagator(lam, **kw)
        raise ValueError(f"unknown assembly route {route!r}")

    def assemble_with_dlam(self, lam: complex):
        """Matrix and its analytic lambda-derivative (table route)."""
        return self._assemble_table(complex(lam), deriv=True)

    def _assemble_table(self, lam, deriv):
        table = self.table_for(lam)
        n = len(self.idx)
        X = np.empty((n, n), dtype=complex)
        Xp = np.empty((n, n), dtype=complex) if deriv else None
        for r0 in range(0, n, self.row_chunk):
            rows = slice(r0, min(r0 + self.row_chunk, n))
            blk = self._resolvent_block(table, rows, lam)
            X[rows] = self.a[rows, None] * blk * self.b[None, :]
            if deriv:
                blkp = self._resolvent_block(table, rows, lam, deriv=True)
                Xp[rows] = self.a[rows, None] * blkp * self.b[None, :]
        self._set_diagonal(X, table, lam, deriv=False)
        if deriv:
            self._set_diagonal(Xp, table, lam, deriv=True)
        err = table.stats.get("holdout_max_rel", self.accuracy)
        m = BSMatrix(lam, self.idx, X, "table", err,
                     {"table": dict(table.stats)})
        return (m, Xp) if deriv else (m, None)

    def _set_diagonal(self, X, table, lam, deriv):
        # diagonal cell: closed-form ball integral of the singular part plus
        # the bounded correction at s = 0 times the cell volume
        Lam_d = lam - self.x1
        zeros = np.zeros_like(self.x1)
        if not deriv:
            ball = mu0_ball_integral(Lam_d, self.weights)
            corr = table.correction(zeros, Lam_d.real)
        else:
            ball = _mu0_ball_integral_dlam(Lam_d, self.weights)
            corr = table.correction_dlam(zeros, Lam_d.real)
        diag = self.a * self.b * (ball / self.weights + corr)
        np.fill_diagonal(X, diag)

    def _assemble_propagator(self, lam, pad_factor=4.0, tol=1e-4,
                             steps_min=64, richardson=True):
        g = self.V.grid
        ext = [hi - lo for lo, hi in zip(g.lo, g.hi)]
        spacing = g.spacing
        pad_n = []
        pad_lo = []
        pad_hi = []
        for lo, hi, h, e, n in zip(g.lo, g.hi, spacing, ext, g.n):
            extra = int(math.ceil((pad_factor - 1.0) * e / (2 * h)))
            pad_lo.append(lo - extra * h)
            pad_hi.append(hi + extra * h)
            pad_n.append(n + 2 * extra)
        pg = Grid3(tuple(pad_lo), tuple(pad_hi), tuple(pad_n))
        plan = PropagatorPlan(pg)

        # flat index of each support node inside the padded grid
        offs = [int(round((l - pl) / h)) for l, pl, h in
                zip(g.lo, pad_lo, spacing)]
        n1, n2, n3 = g.n
        p2, p3 = pad_n[1], pad_n[2]
        ii, jj, kk = np.unravel_index(self.idx, (n1, n2, n3))
        flat_pad = ((ii + offs[0]) * p2 + (jj + offs[1])) * p3 + (kk + offs[2])

        T = math.log(1.0 / tol) / lam.imag
        if T * spacing[0] / 2.0 > np.pi:
            warnings.warn("time horizon exceeds the x1-phase aliasing guard",
                          stacklevel=2)
        kmax2 = float(np.max(plan.k2))
        x1max = max(abs(pad_lo[0]), abs(pad_hi[0]))
        omega = kmax2 + x1max + abs(lam)
        n_steps = max(steps_min, int(math.ceil(T * omega / 2.0)))
        dt = T / n_steps

        cell = math.prod(spacing)
        n = len(self.idx)
        cols = np.zeros((n, n), dtype=complex)
        cols_coarse = np.zeros((n, n), dtype=complex) if richardson else None
        for cidx in range(n):
            u = np.zeros(pg.num_nodes, dtype=complex)
            u[flat_pad[cidx]] = 1.0 / cell
            fld = WaveField(pg, u.reshape(pg.n))
            acc = 0.5 * fld.amplitudes.ravel()[flat_pad]
            acc_c = 0.5 * fld.amplitudes.ravel()[flat_pad] if richardson else None
            for m in range(1, n_steps + 1):
                fld = apply_stark_propagator(plan, dt, fld)
                wgt = 0.5 if m == n_steps else 1.0
                samp = np.exp(1j * m * dt * lam) * fld.amplitudes.ravel()[flat_pad]
                acc = acc + wgt * samp
                if richardson and m % 2 == 0:
                    wc = 0.5 if m == n_steps else 1.0
                    acc_c = acc_c + wc * samp
            col = 1j * dt * acc
            cols[:, cidx] = col
            if richardson:
                cols_coarse[:, cidx] = 1j * (2 * dt) * acc_c
        if richardson:
            cols = (4.0 * cols - cols_coarse) / 3.0
        X = self.a[:, None] * cols * self.b[None, :]
        return BSMatrix(lam, self.idx, X, "propagator", tol,
                        {"padded_grid": pg.to_dict(), "n_steps": n_steps,
                         "horizon": T, "richardson": richardson})


def _mu0_ball_integral_dlam(z, volume, h=1e-6):
    zc = np.asarray(z, dtype=complex)
    return (mu0_ball_integral(zc + h, volume)
            - mu0_ball_integral(zc - h, volume)) / (2 * h)


def assemble(V: PotentialField, lam: complex, route: str = "table",
             accuracy: float = 1e-6, **kw) -> BSMatrix:
    return BSAssembler(V, accuracy=accuracy).assemble(lam, route=route, **kw)


# -- norms ---------------------------------------------------------------------

def schatten_norm(M, p) -> float:
    """l^p norm of the singular values (full SVD); p = inf gives the operator norm."""
    if p != math.inf and p < 1:
        raise ValueError("p must be >= 1")
    A = M.entries if isinstance(M, BSMatrix) else np.asarray(M)
    if A.size == 0:
        return 0.0
    sv = np.linalg.svd(A, compute_uv=False)
    if p == math.inf:
        return float(sv[0])
    return float(np.sum(sv**p) ** (1.0 / p))


@dataclass
class SchattenProfile:
    p: float
    tau: float
    lam_re: np.ndarray
    norms: np.ndarray
    integral_p: float        # segment integral of the p-th power of the norm

    def as_rows(self):
        return [(float(x), float(self.tau), float(n))
                for x, n in zip(self.lam_re, self.norms)]


def norm_profile(V: PotentialField, p: float, segment, tau: float,
                 samples: int, accuracy: float = 1e-6) -> SchattenProfile:
    """Schatten norms of Y0 along lambda = x + i tau, x in [a, b], plus the
    trapezoid integral of the p-th power over the segment."""
    if tau <= 0:
        raise ValueError("tau > 0 required")
    a, b = float(segment[0]), float(segment[1])
    xs = np.linspace(a, b, samples)
    asmb = BSAssembler(V, accuracy=accuracy)
    norms = np.array([schatten_norm(asmb.assemble(complex(x, tau)), p)
                      for x in xs])
    integral = float(np.trapezoid(norms**p, xs)) if samples > 1 else 0.0
    return SchattenProfile(p, tau, xs, norms, integral)


# -- full-grid resolvent application (consistency diagnostics) -----------------

def resolvent_apply_grid(grid: Grid3, lam: complex, f: np.ndarray,
                         accuracy: float = 1e-6) -> np.ndarray:
    """Apply the discretized free resolvent to a grid function.

    Nystrom sum with singularity subtraction: the windowed singular kernel
    (frozen at the target's spectral shift) times the second-order Taylor
    polynomial of f is removed from the sum and restored from the closed-form
    Gaussian moments of the kernel.  This cancels the O(h^2) cone errors of
    the product rule, leaving the smooth-remainder quadrature error.
    """
    table = build_kernel_table(grid, lam, accuracy=accuracy)
    nodes = grid.nodes()
    w = grid.weights()
    f = np.asarray(f, dtype=complex).ravel()
    grad, hess = _spectral_derivatives(grid, f)
    alpha = 0.25
    out = np.empty_like(f)
    lamc = complex(lam)
    chunk = max(1, int(8e6 / len(nodes)))
    for r0 in range(0, len(nodes), chunk):
        rows = slice(r0, min(r0 + chunk, len(nodes)))
        m = rows.stop - rows.start
        diff = nodes[rows, None, :] - nodes[None, :, :]
        d2 = np.einsum("mjk,mjk->mj", diff, diff)
        s = np.sqrt(d2)
        halfsum = 0.5 * (nodes[rows, 0][:, None] + nodes[None, :, 0])
        Lam = lamc - halfsum
        Lam_d = lamc - nodes[rows, 0]
        s_safe = np.maximum(s, 1e-300)
        r0v = table.resolvent(s_safe, Lam)
        sub = mu0(s_safe, Lam_d[:, None]) * np.exp(-alpha * d2)
        # T2 f(x_i; y_j): value + gradient + Hessian quadratic
        t2 = (f[rows, None]
              + np.einsum("ma,mja->mj", grad[rows], diff)
              + 0.5 * np.einsum("mab,mja,mjb->mj", hess[rows], diff, diff))
        integrand = r0v * f[None, :] - sub * t2
        # at the target node the singular parts cancel; only the bounded
        # correction kernel survives
        diag_vals = table.correction(np.zeros(m), Lam_d.real) * f[rows]
        integrand[np.arange(m), np.arange(rows.start, rows.stop)] = diag_vals
        sums = integrand @ w
        s0 = _mu0_gauss_integral(Lam_d, alpha)
        s2 = _mu0_gauss_moment2(Lam_d, alpha)
        lap_f = hess[rows, 0, 0] + hess[rows, 1, 1] + hess[rows, 2, 2]
        out[rows] = sums + f[rows] * s0 + lap_f * s2 / 6.0
    return out


def _spectral_derivatives(grid: Grid3, f: np.ndarray):
    """Gradient and Hessian of a well-resolved grid function via FFT."""
    ks = [2.0 * np.pi * np.fft.fftfreq(n, d=h)
          for n, h in zip(grid.n, grid.spacing)]
    kg = np.meshgrid(*ks, indexing="ij")
    fh = np.fft.fftn(np.asarray(f, dtype=complex).reshape(grid.n))
    npts = grid.num_nodes
    grad = np.empty((npts, 3), dtype=complex)
    hess = np.empty((npts, 3, 3), dtype=complex)
    for a in range(3):
        grad[:, a] = np.fft.ifftn(1j * kg[a] * fh).ravel()
        for b in range(a, 3):
            hab = np.fft.ifftn(-kg[a] * kg[b] * fh).ravel()
            hess[:, a, b] = hab
            hess[:, b, a] = hab
    return grad, hess


def _mu0_gauss_moment2(z, alpha, dk=1e-5):
    """int_R3 mu0(z,|y|) e^{-alpha|y|^2} |y|^2 dy = int_0^inf s^3 e^{iks-alpha s^2} ds,
    obtained as -d^2/dk^2 of the first moment."""
    zc = np.asarray(z, dtype=complex)
    k = sqrt_upper(zc)
    # differentiate under k directly (z = k^2)
    vals = []
    for delta in (-dk, 0.0, dk):
        kk = k + delta
        vals.append(_mu0_gauss_first_moment(kk, alpha))
    return -(vals[0] - 2.0 * vals[1] + vals[2]) / dk**2


def _mu0_gauss_first_moment(k, alpha):
    """int_0^inf s e^{iks - alpha s^2} ds via the Faddeeva function."""
    from scipy.special import wofz
    sa = math.sqrt(alpha)
    return (1.0 / (2.0 * alpha)
            + 1j * k * math.sqrt(math.pi) * wofz(k / (2.0 * sa)) / (4.0 * alpha * sa))


def _mu0_gauss_integral(z, alpha):
    """int_R3 mu0(z, |y|) e^{-alpha |y|^2} dy."""
    return _mu0_gauss_first_moment(sqrt_upper(np.asarray(z, dtype=complex)), alpha)


def discrete_stark_apply(grid: Grid3, lam: complex, g: np.ndarray) -> np.ndarray:
    """(H0 - lambda) g with the spectral periodic Laplacian plus diagonal x1."""
    plan = PropagatorPlan(grid)
    gg = np.asarray(g, dtype=complex).reshape(grid.n)
    lap = np.fft.ifftn(plan.k2 * np.fft.fftn(gg))     # -Laplacian
    return (lap + (plan.x1 - lam) * gg).ravel()
