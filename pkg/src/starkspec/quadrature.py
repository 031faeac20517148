"""Composite Gauss-Legendre quadrature along polyline contours in C.

The integrands in this project are analytic away from t = 0, so all paths are
polylines of complex waypoints.  Panels are bisected until an order-n vs
order-2n comparison passes a local tolerance; evaluation is batched so the
integrand is called on large arrays, never point by point.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["contour_quad", "QuadratureBudgetError", "gauss_panels"]


class QuadratureBudgetError(RuntimeError):
    """Adaptive refinement exhausted its panel budget before converging."""


@lru_cache(maxsize=64)
def _gl(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _panel_nodes(a: np.ndarray, b: np.ndarray, n: int):
    """GL nodes/weights for panels [a_k, b_k]; returns (P, n) arrays."""
    x, w = _gl(n)
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    return mid + half * x[None, :], half * w[None, :]


def gauss_panels(waypoints, per_decade=4.0, min_panels=1):
    """Split each polyline segment into panels, geometric when an endpoint is 0.

    Used to seed the adaptive integrator; returns (a, b) panel endpoint arrays.
    """
    a_list, b_list = [], []
    pts = [complex(p) for p in waypoints]
    for p, q in zip(pts[:-1], pts[1:]):
        if p == 0 or q == 0:
            # geometric subdivision toward the origin endpoint
            far, near = (q, p) if p == 0 else (p, q)
            n_dec = max(1.0, np.log10(max(abs(far), 1e-300) / max(abs(far) * 1e-6, 1e-300)))
            k = max(min_panels, int(np.ceil(per_decade * n_dec)))
            r = np.geomspace(1e-6, 1.0, k + 1)
            r[0] = 0.0
            seg = far * r if p == 0 else far * r[::-1]
            a_list.extend(seg[:-1])
            b_list.extend(seg[1:])
        else:
            k = min_panels
            seg = p + (q - p) * np.linspace(0.0, 1.0, k + 1)
            a_list.extend(seg[:-1])
            b_list.extend(seg[1:])
    return np.asarray(a_list, dtype=complex), np.asarray(b_list, dtype=complex)


def contour_quad(f, waypoints=None, *, panels=None, rel_tol=1e-9, abs_tol=1e-14,
                 order=12, max_panels=20000, max_rounds=40):
    """Integrate a vectorized integrand along a polyline contour.

    f maps a complex ndarray to a complex ndarray.  Returns
    (value, error_estimate, n_evaluations).  Raises QuadratureBudgetError if
    the bisection stack exceeds max_panels without meeting the tolerance.
    """
    if panels is None:
        a, b = gauss_panels(waypoints)
    else:
        a, b = panels
        a = np.asarray(a, dtype=complex)
        b = np.asarray(b, dtype=complex)

    n_eval = 0
    done_val = 0.0 + 0.0j
    done_err = 0.0
    total_panels = len(a)

    # first pass to set the magnitude scale
    scale = None
    for _ in range(max_rounds):
        t1, w1 = _panel_nodes(a, b, order)
        t2, w2 = _panel_nodes(a, b, 2 * order)
        f1 = f(t1.ravel()).reshape(t1.shape)
        f2 = f(t2.ravel()).reshape(t2.shape)
        n_eval += t1.size + t2.size
        coarse = np.sum(w1 * f1, axis=1)
        fine = np.sum(w2 * f2, axis=1)
        err = np.abs(fine - coarse)

        if scale is None:
            scale = max(abs(done_val + np.sum(fine)), abs_tol)
        tol_local = max(abs_tol, rel_tol * scale) / max(total_panels, 16)

        ok = err <= tol_local
        done_val += np.sum(fine[ok])
        done_err += float(np.sum(err[ok]))
        if np.all(ok):
            return done_val, done_err, n_eval

        a_bad, b_bad = a[~ok], b[~ok]
        mid = 0.5 * (a_bad + b_bad)
        a = np.concatenate([a_bad, mid])
        b = np.concatenate([mid, b_bad])
        total_panels += len(a_bad)
        if total_panels > max_panels:
            raise QuadratureBudgetError(
                f"quadrature budget exhausted ({total_panels} panels)")
    raise QuadratureBudgetError("quadrature did not converge within round limit")
