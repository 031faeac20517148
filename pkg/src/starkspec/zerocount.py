"""Zero-counting machinery for analytic functions on a half-plane or corner.

Two inequality verifiers are implemented numerically:

  * the half-plane zero-sum bound: if a -> 1 + o(1/|z|) on the upper
    half-plane and ln|a(x + i eps)| <= f_eps(x) on the real line, the zero
    imaginary parts sum to at most (1/2 pi) sup_eps int f_eps;
  * the corner count bound: an explicit bracket, minimized over the corner
    inflation eps, bounds the number of zeros in {Re z <= alpha, Im z >= 0}
    of functions with the two-term exponential majorant.

The bracket of the corner bound is implemented twice, independently, and the
two implementations are compared in the tests.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["blaschke_product_half_plane", "AnalyticSample",
           "verify_zero_sum_bound", "corner_count_bound",
           "corner_count_constant", "corner_bracket_alt",
           "corner_blaschke", "verify_corner_bound", "count_zeros_rect"]


class DominationError(ValueError):
    """The proposed majorant fails to dominate ln|a| at a sampled point."""


def blaschke_product_half_plane(zeros, eps: float, lam) -> complex:
    """prod over Im z_j > eps of (lam + i eps - z_j)/(lam - i eps - conj z_j).

    Unit modulus on the real line; zeros at z_j - i eps.
    """
    lam = np.asarray(lam, dtype=complex)
    out = np.ones_like(lam)
    for z in zeros:
        z = complex(z)
        if z.imag <= eps:
            continue
        den = lam - 1j * eps - z.conjugate()
        if np.any(den == 0):
            raise ZeroDivisionError("evaluation point is a pole of the product")
        out = out * (lam + 1j * eps - z) / den
    return out if out.shape else complex(out)


@dataclass
class AnalyticSample:
    """Black-box analytic function with optional declared zeros."""

    fn: object                      # callable lambda -> complex
    zeros: list = field(default_factory=list)
    domain: str = "upper-half-plane"

    def __call__(self, z):
        return self.fn(z)


def half_plane_unit_sample(zeros, mass_height: float = 3.0) -> AnalyticSample:
    """Blaschke product times a correcting exponential so that
    a(z) = 1 + O(z^{-2}) at infinity (the bare product is only 1 + O(1/z))."""
    zeros = [complex(z) for z in zeros]
    S = sum(z.imag for z in zeros)

    def fn(lam):
        b = blaschke_product_half_plane(zeros, 0.0, lam)
        return b * np.exp(2j * S / (lam + 1j * mass_height))
    return AnalyticSample(fn, zeros)


def verify_zero_sum_bound(sample: AnalyticSample, f_bound, eps_lattice,
                          window: float = 60.0, n_quad: int = 4001,
                          n_check: int = 241) -> dict:
    """Check sum Im z_j <= (1/2 pi) sup_eps int f_eps over a log eps lattice.

    f_bound(eps, x_array) must dominate ln|a(x + i eps)|; domination is
    validated by sampling and a violation aborts with the offending point.
    """
    xs_check = np.linspace(-window, window, n_check)
    sup_int = -math.inf
    best_eps = None
    for eps in eps_lattice:
        fa = np.log(np.abs(np.asarray([sample(complex(x, eps)) for x in xs_check])))
        fb = np.asarray(f_bound(eps, xs_check), dtype=float)
        bad = np.nonzero(fa > fb + 1e-10)[0]
        if bad.size:
            i = bad[0]
            raise DominationError(
                f"ln|a| = {fa[i]:.6g} exceeds bound {fb[i]:.6g} at "
                f"x = {xs_check[i]:.6g}, eps = {eps:g}")
        xq = np.linspace(-window, window, n_quad)
        integral = float(np.trapezoid(np.asarray(f_bound(eps, xq), dtype=float), xq))
        if integral > sup_int:
            sup_int = integral
            best_eps = eps
    lhs = sum(z.imag for z in sample.zeros)
    rhs = sup_int / (2.0 * math.pi)
    return {"zero_sum": lhs, "bound": rhs, "passes": lhs <= rhs + 1e-12,
            "gap": (rhs - lhs) / rhs if rhs > 0 else 0.0,
            "best_eps": best_eps, "eps_lattice": list(eps_lattice)}


# -- corner bound ---------------------------------------------------------------

def _corner_bracket(alpha: float, eps: float, p: float, delta: float) -> float:
    """eps^-2 e^{(1+d)p(a+e)} ( (a+e)/e^{1+2d} + (1+e^2) e^{2(1+d)p e^2} )."""
    a_e = alpha + eps
    exponent = (1.0 + delta) * p * a_e - 2.0 * math.log(eps)
    inner = 2.0 * (1.0 + delta) * p * eps * eps
    if exponent + max(inner, 0.0) > 690.0:
        return math.inf
    return (math.exp(exponent)
            * (a_e / eps**(1.0 + 2.0 * delta)
               + (1.0 + eps * eps) * math.exp(inner)))


def corner_bracket_alt(alpha: float, eps: float, p: float, delta: float) -> float:
    """Independent re-derivation of the bracket in exp/log form (two-path rule)."""
    a_e = alpha + eps
    base = (1.0 + delta) * p * a_e - 2.0 * math.log(eps)
    t1 = math.exp(base + math.log(a_e) - (1.0 + 2.0 * delta) * math.log(eps))
    t2 = math.exp(base + math.log1p(eps * eps)
                  + 2.0 * (1.0 + delta) * p * eps * eps)
    return t1 + t2


def corner_count_bound(alpha: float, eps: float, p: float, delta: float,
                       M: float, c_pdelta: float = 1.0) -> float:
    """Zero-count bound at a fixed corner inflation eps."""
    if min(alpha, eps, delta, M) <= 0 or p <= 5:
        raise ValueError("need alpha, eps, delta, M > 0 and p > 5")
    return c_pdelta * M * _corner_bracket(alpha, eps, p, delta)


def corner_count_constant(alpha: float, p: float, delta: float,
                          c_pdelta: float = 1.0, tol: float = 1e-8) -> dict:
    """min over eps > 0 of the bracket (golden-section after a bracketing scan)."""
    if min(alpha, delta) <= 0 or p <= 5:
        raise ValueError("need alpha, delta > 0 and p > 5")

    def f(log_eps):
        return _corner_bracket(alpha, math.exp(log_eps), p, delta)

    grid = np.linspace(math.log(1e-6), math.log(10.0), 181)
    vals = [f(g) for g in grid]
    i0 = int(np.argmin(vals))
    lo = grid[max(i0 - 1, 0)]
    hi = grid[min(i0 + 1, len(grid) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    log_eps = 0.5 * (a + b)
    eps = math.exp(log_eps)
    return {"constant": c_pdelta * f(log_eps), "eps_min": eps,
            "bracket": f(log_eps), "c_pdelta": c_pdelta}


def corner_blaschke(zeros, alpha: float, eps: float, z) -> complex:
    """Blaschke-type product for the corner domain; unit modulus on its boundary."""
    z = complex(z)
    w = z - alpha + (1j - 1.0) * eps
    out = 1.0 + 0.0j
    for zj in zeros:
        zj = complex(zj)
        wj = zj - alpha + (1j - 1.0) * eps
        wjc = zj.conjugate() - alpha - (1.0 + 1j) * eps
        out *= (w * w - wj * wj) / (w * w - wjc * wjc)
    return out


def count_zeros_rect(fn, re_range, im_range, pps: int = 256) -> int:
    """Argument-principle count of zeros of a callable in a rectangle."""
    a, b = re_range
    c, d = im_range
    corners = [complex(a, c), complex(b, c), complex(b, d), complex(a, d)]
    total = 0.0
    for p, q in zip(corners, corners[1:] + corners[:1]):
        ts = np.linspace(0.0, 1.0, pps, endpoint=False)
        zs = p + (q - p) * ts
        vals = np.asarray([fn(z) for z in zs])
        total += np.sum(np.diff(np.unwrap(np.angle(
            np.append(vals, fn(q))))))
    n = total / (2.0 * math.pi)
    if abs(n - round(n)) > 0.2:
        raise ValueError(f"winding number did not settle: {n}")
    return int(round(n))


def verify_corner_bound(sample: AnalyticSample, alpha: float, p: float,
                        delta: float, M: float, c_pdelta: float,
                        eps_check: float = 0.5, boundary_samples: int = 160,
                        count_box_im: float = 40.0) -> dict:
    """Count zeros of a(.) in {Re z <= alpha, Im z >= 0} and compare against
    the corner bound with the calibrated constant.

    Domination of ln|a| by the two-term majorant (power M) is validated by
    sampling along the inflated corner boundary.
    """
    def majorant(z):
        zim = z.imag
        t1 = (1.0 + math.exp(p * z.real)) / (1.0 + abs(z)) ** 2
        t2 = (math.exp(2.0 * p * max(-zim, 0.0) ** 2 + p * z.real)
              / (1.0 + max(zim, 0.0)) ** p)
        return (t1 + t2) ** (1.0 + delta) * M

    # boundary of the inflated corner
    pts = []
    for t in np.linspace(-count_box_im, alpha + eps_check, boundary_samples // 2):
        pts.append(complex(t, -eps_check))
    for t in np.linspace(-eps_check, count_box_im, boundary_samples // 2):
        pts.append(complex(alpha + eps_check, t))
    for z in pts:
        av = abs(sample(z))
        if av > 0 and math.log(av) > majorant(z) + 1e-9:
            raise DominationError(
                f"ln|a({z:.4g})| = {math.log(av):.5g} exceeds the majorant "
                f"{majorant(z):.5g}")

    if sample.zeros:
        count = sum(1 for z in sample.zeros
                    if z.real <= alpha and z.imag >= 0)
    else:
        count = count_zeros_rect(sample, (-count_box_im, alpha),
                                 (0.0, count_box_im))
    bound = corner_count_constant(alpha, p, delta, c_pdelta)["constant"] * M
    return {"count": count, "bound": bound, "passes": count <= bound,
            "margin": bound / count if count else math.inf}
