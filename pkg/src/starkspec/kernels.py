"""Integral kernels of the free Stark resolvent and their time-integral family.

The resolvent kernel depends on (x, y, lambda) only through the separation
s = |x - y| and the shifted spectral parameter Lambda = lambda - (x1+y1)/2.
All kernels here are 1-d time integrals; the oscillatory ones are evaluated on
contours descending into the lower half t-plane, where the integrands decay,
which also provides the analytic continuation of the small-t piece down to
zeta = 1.  Three independent representations of the resolvent kernel are
implemented and cross-checked in the tests:

  split   i * (small-t + large-t oscillatory integrals), continued to zeta = 1
  damped  heat-semigroup piece on (0,1] plus a unit-shifted contour integral
  mu      free-resolvent-type singular part at Lambda plus a bounded correction

The `mu` route separates the Coulomb-type diagonal singularity analytically,
so it is the one backing the interpolation table used for matrix assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import contour_quad, QuadratureBudgetError

__all__ = [
    "ReducedPoint",
    "QuadResult",
    "KernelDomainError",
    "r_zeta",
    "rho_split",
    "nu_kernel",
    "eta_kernel",
    "mu0",
    "mu1",
    "mu_correction",
    "resolvent_kernel",
    "kernel_value",
    "sqrt_upper",
    "mu0_ball_integral",
    "KernelTable",
    "build_kernel_table",
]

_FOURPI32 = (4.0 * math.pi) ** 1.5
PREF_OSC = np.exp(-0.75j * math.pi) / _FOURPI32     # small/large-t oscillatory family
PREF_SHIFTED = np.exp(-0.25j * math.pi) / _FOURPI32  # unit-shifted contour, includes the i
PREF_CORR = np.exp(-0.25j * math.pi) / _FOURPI32     # correction integral, includes the i


class KernelDomainError(ValueError):
    """Kernel evaluated outside its validity domain."""


@dataclass(frozen=True)
class ReducedPoint:
    """Separation s = |x-y| and shifted spectral parameter Lambda."""

    s: float
    lam: complex  # Lambda

    def __post_init__(self):
        if self.s < 0:
            raise KernelDomainError("separation must be >= 0")


@dataclass(frozen=True)
class QuadResult:
    value: complex
    error: float
    evaluations: int


def cexpm1(z):
    """exp(z) - 1 without cancellation for small complex z."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    return (np.expm1(x) * np.cos(y) - 2.0 * np.sin(y / 2.0) ** 2
            + 1j * np.exp(x) * np.sin(y))


def sqrt_upper(z):
    """Square root with nonnegative imaginary part (branch cut along [0, inf))."""
    w = np.sqrt(np.asarray(z, dtype=complex))
    return np.where(w.imag < 0, -w, w)


# -- contour construction -----------------------------------------------------

def _ray_angle(lam: complex, base=0.55):
    """Descent angle below the real axis; capped so exp(i t Lambda) cannot grow."""
    phi = base
    if lam.real > 0:
        if lam.imag <= 0:
            raise KernelDomainError("Im Lambda > 0 required for this contour")
        phi = min(phi, 0.75 * math.atan2(lam.imag, lam.real))
    return max(phi, 0.012)


def _ray_reach(s, lam, phi, L, cubic=True):
    """Radius at which the decay exponent along the ray falls below -L.

    cubic=False is for integrands missing the exp(-i t^3/12) factor (the
    constant term of the correction kernel), whose tail decays only through
    exp(i t Lambda).
    """
    sin3 = math.sin(3.0 * phi)
    lin = math.sin(phi) * lam.real - math.cos(phi) * lam.imag
    if not cubic:
        if lin >= -1e-12:
            raise KernelDomainError("no decay direction for the linear tail")
        return (L + 2.0) / (-lin)
    r_cub = (12.0 * (L + 2.0) / sin3) ** (1.0 / 3.0)
    r = r_cub
    if lin < -1e-12:
        r = min(r, (L + 2.0) / (-lin))

    def decay(rr):
        e = -(rr**3) * sin3 / 12.0 + rr * lin
        if s > 0:
            e -= s * s * math.sin(phi) / (4.0 * rr)
        return e

    while decay(r) > -L and r < 2.0 * r_cub:
        r *= 1.3
    return min(r, 2.0 * r_cub)


def _variation_panels(f, waypoints, probes_per_seg, max_step=1.9, cap=30000):
    """Initial panels along a polyline, split where arg/log of f varies.

    Variation accumulated in regions where |f| is negligible against the
    running maximum is discarded; those stretches contribute nothing to the
    integral and would otherwise flood the panel budget.
    """
    pts = np.asarray([complex(p) for p in waypoints])
    m = int(probes_per_seg)
    frac = np.linspace(0.0, 1.0, m, endpoint=False)
    ts = (pts[:-1, None] + (pts[1:] - pts[:-1])[:, None] * frac[None, :]).ravel()
    ts = np.append(ts, pts[-1])
    vals = f(ts)
    av = np.abs(vals)
    scale = float(np.max(av)) if av.size else 0.0
    live = av > 1e-18 * max(scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        lv = np.log(np.where(live, vals, 1.0))
    dphase = np.abs(np.diff(np.unwrap(lv.imag)))
    dmag = np.minimum(np.abs(np.diff(lv.real)), 4.0)
    both_live = live[1:] & live[:-1]
    var = np.cumsum(np.where(both_live, dphase + 0.5 * dmag, 0.0))
    # segment endpoints are mandatory marks (panels must not straddle kinks)
    marks = [0]
    level = max_step
    for i in range(1, len(ts)):
        forced = (i % m == 0) or i == len(ts) - 1
        if forced or var[i - 1] >= level:
            if i != marks[-1]:
                marks.append(i)
            level = var[i - 1] + max_step
    seg_pts = ts[np.asarray(marks)]
    a_all, b_all = seg_pts[:-1], seg_pts[1:]
    if len(a_all) > cap:
        raise QuadratureBudgetError("panel seeding exceeded budget")
    return np.asarray(a_all), np.asarray(b_all)


def _geom_points(r0, r1, per_decade=24):
    n = max(8, int(per_decade * math.log10(max(r1 / max(r0, 1e-300), 1.0001))))
    return np.geomspace(r0, r1, n)


def _descending_path(t0, s, lam, phi, L, boundary_layer):
    """Probe points along t0 + r e^{-i phi}: geometric in r, dense where needed."""
    reach = _ray_reach(s, lam, phi, L)
    if boundary_layer and s > 0:
        r_lo = s * s * math.sin(phi) / (4.0 * (L + 2.0))
        r_start = r_lo / 8.0
    else:
        r_start = reach * 1e-7
    rs = _geom_points(r_start, reach)
    return t0 + rs * np.exp(-1j * phi)


def _quad_on_path(f, path, rel_tol, order=12):
    """Variation-seeded adaptive quadrature along a probe polyline."""
    # the probe path doubles as the waypoint list; panels never straddle kinks
    a, b = _variation_panels(f, path, probes_per_seg=8)
    return contour_quad(f, panels=(a, b), rel_tol=rel_tol, abs_tol=1e-15,
                        order=order)


# -- integrands ---------------------------------------------------------------

def _osc_integrand(s, lam, zeta):
    ss4 = 0.25 * s * s

    def f(t):
        return np.exp(1j * ss4 / t - 1j * t**3 / 12.0 + 1j * t * lam) * t**(zeta - 2.5)
    return f


def _heat_integrand(s, lam, zeta):
    ss4 = 0.25 * s * s
    pref = np.exp(zeta**2) / _FOURPI32

    def f(t):
        return pref * np.exp(-ss4 / t + t**3 / 12.0 + t * lam) * t**(zeta - 2.5)
    return f


def _shifted_integrand(s, lam, zeta):
    ss4 = 0.25 * s * s

    def f(t):
        w = t - 1j
        return (PREF_SHIFTED * np.exp((1j * t - 1.0) * ss4 / (t * t + 1.0)
                                      - 1j * w**3 / 12.0 + 1j * w * lam)
                * t**(zeta - 1.0) / w**1.5)
    return f


def _corr_integrand(s, lam):
    ss4 = 0.25 * s * s

    def f(t):
        return (PREF_CORR * np.exp(1j * ss4 / t + 1j * t * lam)
                * cexpm1(-1j * t**3 / 12.0) * t**(-1.5))
    return f


def _tol_L(tol):
    return -math.log(max(tol, 1e-15)) + 8.0


# -- pointwise kernels --------------------------------------------------------

def r_zeta(point: ReducedPoint, zeta: complex, tol: float = 1e-10) -> QuadResult:
    """Time-integral kernel over (0, inf) with power t^(zeta-1).

    For s = 0 the small-t end converges only for Re zeta > 3/2; for s > 0 the
    descending-ray continuation is valid for every zeta (zeta = 1 gives the
    resolvent kernel up to a factor i).
    """
    s, lam = point.s, complex(point.lam)
    if lam.imag <= 0:
        raise KernelDomainError("Im Lambda > 0 required")
    zeta = complex(zeta)
    L = _tol_L(tol)
    g = _osc_integrand(s, lam, zeta)

    if s == 0.0:
        if zeta.real <= 1.5:
            raise KernelDomainError("s = 0 needs Re zeta > 3/2")
        phi = _ray_angle(lam)
        direction = np.exp(-1j * phi)
        reach = _ray_reach(0.0, lam, phi, L)
        t_break = min(1.0, reach / 4.0)

        def exp_part(t):
            return np.exp(-1j * t**3 / 12.0 + 1j * t * lam)

        v1, e1, n1 = _power_sub_leg(exp_part, zeta - 2.5, direction, t_break, tol)
        path = direction * _geom_points(t_break, reach)
        v2, e2, n2 = _quad_on_path(g, path, tol)
        return QuadResult(PREF_OSC * (v1 + v2), abs(PREF_OSC) * (e1 + e2), n1 + n2)

    phi = _ray_angle(lam)
    path = _descending_path(0.0, s, lam, phi, L, boundary_layer=True)
    val, err, ne = _quad_on_path(g, path, tol)
    return QuadResult(PREF_OSC * val, abs(PREF_OSC) * err, ne)


def _power_sub_leg(exp_part, a_pow, direction, t_break, tol):
    """Integrate exp_part(t) * t^a_pow over the segment [0, direction*t_break].

    Substitutes t = direction * v^m with m large enough that the transformed
    integrand is bounded at v = 0; the power factor is evaluated analytically
    so nothing is lost at the endpoint.  Needs Re(a_pow) > -1.
    """
    a_pow = complex(a_pow)
    if a_pow.real <= -1.0 + 1e-12:
        raise KernelDomainError("endpoint power not integrable")
    m = max(2, int(math.ceil(1.2 / (a_pow.real + 1.0))))
    if m > 40:
        raise KernelDomainError("endpoint power too close to divergence")
    v_max = t_break ** (1.0 / m)
    dir_pow = complex(direction) ** (a_pow + 1.0)

    def g_sub(v):
        t = direction * v**m
        return m * dir_pow * v ** (m * (a_pow + 1.0) - 1.0) * exp_part(t)

    a, b = _variation_panels(g_sub, np.linspace(0.0, v_max, 64), 8)
    return contour_quad(g_sub, panels=(a, b), rel_tol=tol, abs_tol=1e-15)


def rho_split(point: ReducedPoint, zeta: complex, part: int,
              tol: float = 1e-10) -> QuadResult:
    """Small-t (part 1, over (0,1]) or large-t (part 2, over [1,inf)) piece.

    Part 1 at Re zeta <= 3/2 is the contour continuation and needs s > 0.
    """
    if part not in (1, 2):
        raise KernelDomainError("part must be 1 or 2")
    s, lam = point.s, complex(point.lam)
    if lam.imag <= 0:
        raise KernelDomainError("Im Lambda > 0 required")
    zeta = complex(zeta)
    L = _tol_L(tol)
    g = _osc_integrand(s, lam, zeta)

    if part == 1:
        if s == 0.0:
            if zeta.real <= 1.5:
                raise KernelDomainError("part 1 at s = 0 needs Re zeta > 3/2")

            def exp_part(t):
                return np.exp(-1j * t**3 / 12.0 + 1j * t * lam)

            val, err, ne = _power_sub_leg(exp_part, zeta - 2.5, 1.0, 1.0, tol)
            return QuadResult(PREF_OSC * val, abs(PREF_OSC) * err, ne)
        phi = _ray_angle(lam)
        r_lo = s * s * math.sin(phi) / (4.0 * (L + 2.0))
        depth = min(1.0, max(s * s / 8.0, 8.0 * r_lo))
        down = _geom_points(r_lo / 8.0, depth) * np.exp(-1j * phi)
        back = down[-1] + (1.0 - down[-1]) * np.linspace(0.0, 1.0, 64)[1:]
        path = np.concatenate([down, back])
        val, err, ne = _quad_on_path(g, path, tol)
        return QuadResult(PREF_OSC * val, abs(PREF_OSC) * err, ne)

    # part 2: descending ray out of t = 1
    phi = _ray_angle(lam)
    path = _descending_path(1.0, s, lam, phi, L, boundary_layer=False)
    path = np.concatenate([[1.0 + 0.0j], path])
    val, err, ne = _quad_on_path(g, path, tol)
    return QuadResult(PREF_OSC * val, abs(PREF_OSC) * err, ne)


def nu_kernel(x1py1: float, s: float, lam: complex, zeta: complex,
              tol: float = 1e-10) -> QuadResult:
    """Heat-semigroup kernel piece on (0, 1] (non-oscillatory integrand).

    Depends on x, y, lambda only through s and Lambda = lambda - (x1+y1)/2.
    Needs Re zeta > 3/2 at s = 0 and is finite for s > 0 at every zeta.
    """
    Lam = complex(lam) - 0.5 * x1py1
    zeta = complex(zeta)
    g = _heat_integrand(s, Lam, zeta)
    L = _tol_L(tol)
    if s == 0.0:
        if zeta.real <= 1.5:
            raise KernelDomainError("s = 0 needs Re zeta > 3/2")
        pref = np.exp(zeta**2) / _FOURPI32

        def exp_part(t):
            return pref * np.exp(t**3 / 12.0 + t * Lam)

        val, err, ne = _power_sub_leg(exp_part, zeta - 2.5, 1.0, 1.0, tol)
        return QuadResult(val, err, ne)
    r_lo = s * s / (4.0 * (L + 2.0))
    path = _geom_points(min(r_lo / 8.0, 0.5), 1.0)
    val, err, ne = _quad_on_path(g, path, tol)
    return QuadResult(val, err, ne)


def eta_kernel(x1py1: float, s: float, lam: complex, zeta: complex,
               tol: float = 1e-10) -> QuadResult:
    """Unit-shifted contour kernel piece over [0, inf); needs Re zeta > 0.

    The branch of (t - i)^(3/2) is principal, i.e. e^{-i 3 pi/4} at t = 0.
    """
    Lam = complex(lam) - 0.5 * x1py1
    zeta = complex(zeta)
    if zeta.real <= 0:
        raise KernelDomainError("Re zeta > 0 required")
    g = _shifted_integrand(s, Lam, zeta)
    L = _tol_L(tol)
    # Gaussian decay exp((1-3t^2)/12), plus exp(-t Im Lambda) when Im > 0
    T = math.sqrt((12.0 * (L + 2.0) + 1.0) / 3.0)
    t1 = min(1.0, T / 4.0)
    ss4 = 0.25 * s * s

    def exp_part(t):
        w = t - 1j
        return (PREF_SHIFTED * np.exp((1j * t - 1.0) * ss4 / (t * t + 1.0)
                                      - 1j * w**3 / 12.0 + 1j * w * Lam) / w**1.5)

    v1, e1, n1 = _power_sub_leg(exp_part, zeta - 1.0, 1.0, t1, tol)
    path = np.linspace(t1, T, 256)
    v2, e2, n2 = _quad_on_path(g, path, tol)
    return QuadResult(v1 + v2, e1 + e2, n1 + n2)


def mu0(s: float, z: complex):
    """Free-resolvent-type kernel e^{i sqrt(z) s} / (4 pi s); s > 0."""
    if np.any(np.asarray(s) <= 0):
        raise KernelDomainError("mu0 needs s > 0")
    k = sqrt_upper(z)
    return np.exp(1j * k * s) / (4.0 * math.pi * s)


def mu1(s: float, lam: complex, x1py1: float):
    """Difference mu0(Lambda) - mu0(lambda) with Lambda = lambda - (x1+y1)/2."""
    return mu0(s, lam - 0.5 * x1py1) - mu0(s, lam)


def mu_correction(point: ReducedPoint, tol: float = 1e-10) -> QuadResult:
    """Bounded correction so that resolvent = mu0(Lambda) + correction.

    The (e^{-i t^3/12} - 1) factor kills the t^{-3/2} endpoint singularity, so
    the value is finite for every s >= 0 including the diagonal.
    """
    s, lam = point.s, complex(point.lam)
    if lam.imag < 0.02:
        raise KernelDomainError("correction integral requires Im Lambda >= 0.02")
    g = _corr_integrand(s, lam)
    L = _tol_L(tol)
    phi = _ray_angle(lam)
    reach = _ray_reach(s, lam, phi, L, cubic=False)
    path = _geom_points(reach * 1e-8, reach) * np.exp(-1j * phi)
    val, err, ne = _quad_on_path(g, path, tol)
    return QuadResult(val, err, ne)


def resolvent_kernel(point: ReducedPoint, route: str = "mu",
                     tol: float = 1e-8) -> QuadResult:
    """Free Stark resolvent kernel r0(s, Lambda), Im Lambda > 0.

    route 'split'  : i * (continued small-t + large-t oscillatory integrals)
    route 'damped' : e^{-1} * heat piece + shifted-contour piece at zeta = 1
    route 'mu'     : mu0(Lambda) + bounded correction (s > 0 only)
    """
    s, lam = point.s, complex(point.lam)
    if lam.imag <= 0:
        raise KernelDomainError("Im Lambda > 0 required")
    if route == "split":
        if s == 0.0:
            raise KernelDomainError("route 'split' is singular at s = 0")
        p1 = rho_split(point, 1.0, 1, tol)
        p2 = rho_split(point, 1.0, 2, tol)
        return QuadResult(1j * (p1.value + p2.value), p1.error + p2.error,
                          p1.evaluations + p2.evaluations)
    if route == "damped":
        if s == 0.0:
            raise KernelDomainError("route 'damped' is singular at s = 0")
        x1py1 = 0.0  # work directly at Lambda
        h = nu_kernel(x1py1, s, lam, 1.0, tol)
        e = eta_kernel(x1py1, s, lam, 1.0, tol)
        return QuadResult(h.value / math.e + e.value, h.error / math.e + e.error,
                          h.evaluations + e.evaluations)
    if route == "mu":
        if s == 0.0:
            raise KernelDomainError("resolvent kernel is singular at s = 0")
        c = mu_correction(point, tol)
        return QuadResult(mu0(s, lam) + c.value, c.error, c.evaluations)
    raise KernelDomainError(f"unknown route {route!r}")


def kernel_value(kind: str, x, y, lam: complex, zeta: complex = 2.0,
                 tol: float = 1e-8, route: str = "mu") -> QuadResult:
    """Raw-coordinate entry point; reduces (x, y) to (s, x1+y1) internally,
    so the value is symmetric under x <-> y by construction."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = float(np.linalg.norm(x - y))
    x1py1 = float(x[0] + y[0])
    Lam = complex(lam) - 0.5 * x1py1
    if kind == "r_zeta":
        return r_zeta(ReducedPoint(s, Lam), zeta, tol)
    if kind == "rho1":
        return rho_split(ReducedPoint(s, Lam), zeta, 1, tol)
    if kind == "rho2":
        return rho_split(ReducedPoint(s, Lam), zeta, 2, tol)
    if kind == "nu":
        return nu_kernel(x1py1, s, lam, zeta, tol)
    if kind == "eta":
        return eta_kernel(x1py1, s, lam, zeta, tol)
    if kind == "mu0":
        return QuadResult(complex(mu0(s, Lam)), 0.0, 0)
    if kind == "mu":
        return mu_correction(ReducedPoint(s, Lam), tol)
    if kind == "resolvent":
        return resolvent_kernel(ReducedPoint(s, Lam), route=route, tol=tol)
    raise KernelDomainError(f"unknown kernel kind {kind!r}")


# -- diagonal regularization --------------------------------------------------

def mu0_ball_integral(z, volume):
    """Integral of mu0(., z) over the ball of the given volume centered at 0.

    Used for the diagonal of Nystrom matrices: the node's quadrature cell is
    replaced by the equal-volume ball, over which the weakly singular part
    integrates in closed form: int_ball mu0 = int_0^R s e^{i k s} ds, k = sqrt(z).
    """
    z = np.asarray(z, dtype=complex)
    R = (3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)
    k = sqrt_upper(z)
    kR = k * R
    small = np.abs(kR) < 0.5
    # closed form, guarded against k ~ 0
    ksafe = np.where(small, 1.0, k)
    closed = (R * np.exp(1j * ksafe * R) / (1j * ksafe)
              + (np.exp(1j * ksafe * R) - 1.0) / ksafe**2)
    # series sum_n (ik)^n R^(n+2) / (n! (n+2))
    ser = np.zeros_like(z, dtype=complex)
    term = np.ones_like(z, dtype=complex)  # (ik)^n / n!
    for n in range(10):
        ser = ser + term * R ** (n + 2) / (n + 2)
        term = term * (1j * kR / R) / (n + 1)
    return np.where(small, ser, closed)


# -- interpolation table ------------------------------------------------------

def _lagrange4(xi):
    """Cubic Lagrange weights on the stencil {-1, 0, 1, 2} at offset xi in [0,1]."""
    w_m1 = -xi * (xi - 1.0) * (xi - 2.0) / 6.0
    w_0 = (xi + 1.0) * (xi - 1.0) * (xi - 2.0) / 2.0
    w_1 = -(xi + 1.0) * xi * (xi - 2.0) / 2.0
    w_2 = (xi + 1.0) * xi * (xi - 1.0) / 6.0
    return w_m1, w_0, w_1, w_2


@dataclass
class KernelTable:
    """Bicubic table of the bounded correction kernel at fixed Im(lambda).

    Stored values are the correction mu(s, Lambda) and its Lambda-derivative on
    a uniform grid in (u, v) = (log(s + eps0), Re Lambda); the resolvent is
    reconstructed as mu0(Lambda, s) + interpolated correction, so the singular
    part is always exact.
    """

    lam_im: float
    eps0: float
    u0: float
    du: float
    nu: int
    v0: float
    dv: float
    nv: int
    mu_vals: np.ndarray
    dmu_vals: np.ndarray
    order: int = 4
    stats: dict = field(default_factory=dict)

    @property
    def s_nodes(self):
        u = self.u0 + self.du * np.arange(self.nu)
        s = np.exp(u) - self.eps0
        s[0] = max(s[0], 0.0)
        return s

    @property
    def v_nodes(self):
        return self.v0 + self.dv * np.arange(self.nv)

    @staticmethod
    def _snap(frac):
        # lookups at tabulated nodes must return the stored value bit-exactly
        r = np.round(frac)
        return np.where(np.abs(frac - r) < 1e-9, r, frac)

    def _weights(self, s, v):
        u = np.log(np.asarray(s, dtype=float) + self.eps0)
        fu = self._snap((u - self.u0) / self.du)
        fv = self._snap((np.asarray(v, dtype=float) - self.v0) / self.dv)
        iu = np.clip(np.floor(fu).astype(np.int64), 1, self.nu - 3)
        iv = np.clip(np.floor(fv).astype(np.int64), 1, self.nv - 3)
        return iu, fu - iu, iv, fv - iv

    def _interp(self, grid, s, v):
        iu, xiu, iv, xiv = self._weights(s, v)
        wu = _lagrange4(xiu)
        wv = _lagrange4(xiv)
        out = np.zeros(np.broadcast(s, v).shape, dtype=complex)
        for a, wa in zip((-1, 0, 1, 2), wu):
            row = iu + a
            acc = np.zeros_like(out)
            for b, wb in zip((-1, 0, 1, 2), wv):
                acc += wb * grid[row, iv + b]
            out += wa * acc
        return out

    def correction(self, s, re_lam):
        """Interpolated correction kernel mu at (s, Re Lambda)."""
        return self._interp(self.mu_vals, s, re_lam)

    def correction_dlam(self, s, re_lam):
        return self._interp(self.dmu_vals, s, re_lam)

    def resolvent(self, s, Lam):
        """r0(s, Lambda) for s > 0; Im Lambda must equal the table height."""
        Lam = np.asarray(Lam, dtype=complex)
        if not np.allclose(Lam.imag, self.lam_im, atol=1e-9):
            raise KernelDomainError("Im Lambda does not match the table height")
        return mu0(s, Lam) + self.correction(s, Lam.real)

    def resolvent_dlam(self, s, Lam):
        Lam = np.asarray(Lam, dtype=complex)
        k = sqrt_upper(Lam)
        dmu0 = 1j * np.exp(1j * k * np.asarray(s)) / (8.0 * math.pi * k)
        return dmu0 + self.correction_dlam(s, Lam.real)


def _table_panels(s_max, v_lo, v_hi, lam_im, tol):
    """Shared descending-ray panels valid for all table nodes."""
    L = _tol_L(tol)
    worst = complex(max(v_hi, 0.0), lam_im)
    phi = _ray_angle(worst)
    reach = max(_ray_reach(s_max, complex(v, lam_im), phi, L, cubic=False)
                for v in (v_lo, 0.0, v_hi))
    rs = _geom_points(reach * 1e-8, reach, per_decade=10)
    path = rs * np.exp(-1j * phi)
    # seed panels with the worst-variation integrand among the corner cases
    best = None
    for s_p, v_p in ((s_max, v_lo), (s_max, v_hi), (0.0, v_lo), (0.0, v_hi)):
        g = _corr_integrand(s_p, complex(v_p, lam_im))
        a, b = _variation_panels(g, path, probes_per_seg=8)
        if best is None or len(a) > len(best[0]):
            best = (a, b)
    return best, phi


def _gl_nodes_for_panels(a, b, order):
    x, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    return (mid + half * x[None, :]).ravel(), (half * w[None, :]).ravel()


def _table_values(s_nodes, v_nodes, lam_im, t, w, deriv=True):
    """Correction kernel (and optionally its Lambda-derivative) on the grid,
    GEMM-accumulated over chunks of quadrature nodes to bound memory."""
    K, M = len(s_nodes), len(v_nodes)
    chunk = max(256, int(2.5e7 / max(K, M)))
    mu = np.zeros((K, M), dtype=complex)
    dmu = np.zeros((K, M), dtype=complex) if deriv else None
    for q0 in range(0, len(t), chunk):
        tq = t[q0:q0 + chunk]
        wq = w[q0:q0 + chunk]
        A = np.exp(1j * np.outer(0.25 * s_nodes**2, 1.0 / tq))        # (K, q)
        B = PREF_CORR * cexpm1(-1j * tq**3 / 12.0) * tq**(-1.5) * wq  # (q,)
        C = np.exp(1j * np.outer(tq, v_nodes + 1j * lam_im))          # (q, M)
        mu += (A * B[None, :]) @ C
        if deriv:
            dmu += (A * (B * 1j * tq)[None, :]) @ C
    return mu, dmu


def build_kernel_table(grid, lam: complex, accuracy: float = 1e-6,
                       margin: float = 0.75, rng_seed: int = 20,
                       max_refine: int = 7) -> KernelTable:
    """Tabulate the correction kernel for all node pairs of a grid at fixed lambda.

    The table covers s in [0, diameter] and Re Lambda over the range spanned by
    lambda - (x1+y1)/2, with a margin for Newton steps.  A held-out sample of
    direct evaluations (same quadrature, off the interpolation grid) validates
    the interpolation error; the grid is refined until it passes.
    """
    lam = complex(lam)
    if lam.imag <= 0:
        raise KernelDomainError("Im lambda > 0 required")
    if hasattr(grid, "nodes"):
        x1 = grid.nodes()[:, 0]
        lo = np.asarray(grid.lo)
        hi = np.asarray(grid.hi)
        s_max = float(np.linalg.norm(hi - lo)) * 1.02 + 1e-9
        x1_lo, x1_hi = float(np.min(x1)), float(np.max(x1))
        h_min = min(grid.spacing)
    else:  # (s_max, x1_lo, x1_hi, h_min) tuple
        s_max, x1_lo, x1_hi, h_min = grid
    v_lo = lam.real - x1_hi - margin
    v_hi = lam.real - x1_lo + margin
    eps0 = max(h_min / 2.0, 1e-3)

    (pa, pb), phi = _table_panels(s_max, v_lo, v_hi, lam.imag, accuracy * 1e-2)
    t, w = _gl_nodes_for_panels(pa, pb, 10)
    t2, w2 = _gl_nodes_for_panels(pa, pb, 16)

    nu = 64
    nv = max(48, int(8.0 * (v_hi - v_lo)))
    rng = np.random.default_rng(rng_seed)
    evals = 0
    for round_i in range(max_refine + 1):
        if nu > 4000 or nv > 12000:
            raise KernelDomainError(
                "spectral parameter too oscillatory to tabulate at this "
                "accuracy (Re Lambda large against Im Lambda)")
        u0 = math.log(eps0)
        u1 = math.log(s_max + eps0)
        du = (u1 - u0) / (nu - 1)
        u0_ext = u0 - 2 * du
        nu_ext = nu + 4
        v_span = v_hi - v_lo
        dv = v_span / (nv - 1)
        v0_ext = v_lo - 2 * dv
        nv_ext = nv + 4
        s_nodes = np.exp(u0_ext + du * np.arange(nu_ext)) - eps0
        s_nodes = np.maximum(s_nodes, 0.0)
        v_nodes = v0_ext + dv * np.arange(nv_ext)

        mu, _ = _table_values(s_nodes, v_nodes, lam.imag, t, w, deriv=False)
        mu_hi, _ = _table_values(s_nodes, v_nodes, lam.imag, t2, w2, deriv=False)
        evals += (len(t) + len(t2)) * (len(s_nodes) + len(v_nodes))
        quad_err = float(np.max(np.abs(mu - mu_hi)))
        scale = float(np.max(np.abs(mu_hi)))
        if quad_err > 0.2 * accuracy * scale:
            if len(pa) > 4000:
                raise KernelDomainError(
                    "kernel quadrature cannot meet the accuracy target here")
            # refine the shared panels, not the grid
            mid = 0.5 * (pa + pb)
            pa = np.concatenate([pa, mid])
            pb = np.concatenate([mid, pb])
            idx = np.argsort(pa.real**2 + pa.imag**2)
            pa, pb = pa[idx], pb[idx]
            t, w = _gl_nodes_for_panels(pa, pb, 10)
            t2, w2 = _gl_nodes_for_panels(pa, pb, 16)
            continue

        table = KernelTable(lam_im=lam.imag, eps0=eps0, u0=u0_ext, du=du,
                            nu=nu_ext, v0=v0_ext, dv=dv, nv=nv_ext,
                            mu_vals=mu_hi, dmu_vals=None)

        # holdout: direct (non-interpolated) evaluations at random off-grid points
        n_hold = min(4096, max(64, (nu * nv) // 10))
        s_h = np.exp(rng.uniform(u0, u1, n_hold)) - eps0
        s_h = np.clip(s_h, 1e-6, s_max)
        v_h = rng.uniform(v_lo, v_hi, n_hold)
        B = PREF_CORR * cexpm1(-1j * t2**3 / 12.0) * t2**(-1.5) * w2
        direct = np.empty(n_hold, dtype=complex)
        blk = max(16, int(2e7 / max(len(t2), 1)))
        for h0 in range(0, n_hold, blk):
            hs = slice(h0, min(h0 + blk, n_hold))
            A = np.exp(1j * np.outer(0.25 * s_h[hs]**2, 1.0 / t2))
            C_h = np.exp(1j * np.outer(t2, v_h[hs] + 1j * lam.imag))
            direct[hs] = np.einsum("hq,q,qh->h", A, B, C_h)
        interp = table.correction(s_h, v_h)
        Lam_h = v_h + 1j * lam.imag
        r0_ref = mu0(s_h, Lam_h) + direct
        # relative per point, floored at 1% of the largest kernel value seen:
        # entries that small are negligible in any assembled matrix
        r0_scale = float(np.max(np.abs(r0_ref)))
        if r0_scale == 0.0:
            hold_err = 0.0
        else:
            denom = np.maximum(np.abs(r0_ref), 1e-2 * r0_scale)
            hold_err = float(np.max(np.abs(interp - direct) / denom))
        evals += n_hold * len(t2)
        if hold_err <= accuracy or round_i == max_refine:
            if hold_err > accuracy:
                raise QuadratureBudgetError(
                    f"kernel table holdout error {hold_err:.2e} above {accuracy:.0e}")
            _, dmu_hi = _table_values(s_nodes, v_nodes, lam.imag, t2, w2)
            table.dmu_vals = dmu_hi
            table.stats = {
                "evaluations": int(evals),
                "panels": int(len(pa)),
                "quadrature_delta": quad_err,
                "holdout_max_rel": hold_err,
                "refine_rounds": round_i,
                "nu": nu, "nv": nv,
                "phi": phi,
            }
            return table
        nu = int(nu * 1.3)
        nv = int(nv * 2.0)
    raise QuadratureBudgetError("kernel table refinement did not converge")
