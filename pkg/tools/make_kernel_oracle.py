"""Generate high-precision golden values for the kernel time integrals.

Independent of the package implementation: plain mpmath tanh-sinh panels at 50
digits, on a per-point descent contour chosen by a different rule than the
production code uses, with phase-aware segmentation.  Output is frozen into
tests/data/kernel_golden.json and the test suite compares the fast evaluators
against it.

Run from the repository root:  python tools/make_kernel_oracle.py
"""

import json
import math
import pathlib

import mpmath as mp

mp.mp.dps = 50

FOURPI32 = (4 * mp.pi) ** mp.mpf(1.5)
PREF_OSC = mp.e ** (-0.75j * mp.pi) / FOURPI32
PREF_SHIFTED = mp.e ** (-0.25j * mp.pi) / FOURPI32


def seg_quad(f, marks):
    return mp.quad(f, marks)


def phase_marks(lo, hi, phase, step=3.0, cap=4000):
    """Monotone-ish phase function -> segment marks every ~step radians."""
    marks = [mp.mpf(lo)]
    t = mp.mpf(lo)
    while t < hi:
        ph0 = phase(t)
        t_next = min(mp.mpf(hi), t + max((hi - lo) / 200, mp.mpf("1e-6")))
        # expand until the phase has moved by ~step
        while t_next < hi and abs(phase(t_next) - ph0) < step:
            t_next = min(mp.mpf(hi), t_next * 2 if t > 0 else t_next + (hi - lo) / 50)
        # bisect back if overshot badly
        while abs(phase(t_next) - ph0) > 2 * step and t_next - t > mp.mpf("1e-9"):
            t_next = t + (t_next - t) / 2
        t = t_next
        marks.append(t)
        if len(marks) > cap:
            raise RuntimeError("too many phase segments")
    return marks


def oscillatory_ray(s, lam, zeta, t0=0.0):
    """integral over [t0, inf) of e^{i s^2/4t - i t^3/12 + i t L} t^{z-5/2} dt
    along a descending ray out of t0 (angle rule independent of production)."""
    s, lam, zeta = mp.mpf(s), mp.mpc(lam), mp.mpc(zeta)
    phi = mp.pi / 4
    if mp.re(lam) > 0:
        phi = min(phi, mp.mpf("0.5") * mp.atan2(mp.im(lam), mp.re(lam)))
    d = mp.e ** (-1j * phi)
    L = mp.mpf(130)  # ~50 digits of decay
    sin3 = mp.sin(3 * phi)
    lin = mp.sin(phi) * mp.re(lam) - mp.cos(phi) * mp.im(lam)
    r_hi = (12 * L / sin3) ** (mp.mpf(1) / 3)
    if lin < 0:
        r_hi = min(r_hi, L / (-lin))
        while (-(r_hi**3) * sin3 / 12 + r_hi * lin) > -L:
            r_hi *= mp.mpf("1.3")

    def g(r):
        t = t0 + d * r
        return (mp.e ** (1j * s * s / (4 * t) - 1j * t**3 / 12 + 1j * t * lam)
                * t ** (zeta - mp.mpf("2.5")) * d)

    if t0 == 0:
        if s > 0:
            r_lo = s * s * mp.sin(phi) / (4 * L)
            lo = r_lo / 16
        else:
            if mp.re(zeta) <= 1.5:
                raise ValueError("needs Re zeta > 3/2 at s = 0")
            # substitute r = v^2 on the first leg
            r_break = min(mp.mpf(1), r_hi / 4)

            def gv(v):
                r = v * v
                return g(r) * 2 * v

            head = seg_quad(gv, [0, mp.sqrt(r_break) / 3, mp.sqrt(r_break)])
            marks = phase_marks(r_break, r_hi,
                                lambda r: (s * s / (4 * r) if s > 0 else mp.mpf(0))
                                + r**3 * abs(mp.cos(3 * phi)) / 12
                                + r * abs(lam))
            return head + seg_quad(g, marks)
    else:
        lo = mp.mpf(0)

    cphi = mp.cos(phi)

    def ph(r):
        t_eff = t0 + r * cphi if t0 > 0 else max(r * cphi, mp.mpf("1e-30"))
        out = (t0 + r) ** 3 / 12 + r * abs(lam)
        if s > 0:
            out += s * s / (4 * t_eff)
        return out

    marks = phase_marks(lo, r_hi, ph)
    return seg_quad(g, marks)


def r_zeta_ref(s, Lam, zeta):
    return PREF_OSC * oscillatory_ray(s, Lam, zeta)


def rho1_ref(s, Lam, zeta):
    """small-t piece over (0,1]; contour [0 -> depth*e^{-i phi} -> 1]."""
    s, Lam, zeta = mp.mpf(s), mp.mpc(Lam), mp.mpc(zeta)
    if s == 0:
        def gv(v):
            t = v * v
            return (mp.e ** (-1j * t**3 / 12 + 1j * t * Lam)
                    * t ** (zeta - mp.mpf("2.5")) * 2 * v)
        return PREF_OSC * seg_quad(gv, [0, mp.mpf("0.5"), 1])
    phi = mp.pi / 4
    if mp.re(Lam) > 0:
        phi = min(phi, mp.mpf("0.5") * mp.atan2(mp.im(Lam), mp.re(Lam)))
    d = mp.e ** (-1j * phi)
    depth = min(mp.mpf(1), max(s * s / 8, mp.mpf("0.05")))

    def g(t):
        return (mp.e ** (1j * s * s / (4 * t) - 1j * t**3 / 12 + 1j * t * Lam)
                * t ** (zeta - mp.mpf("2.5")))

    r_lo = s * s * mp.sin(phi) / (4 * mp.mpf(130))
    leg1 = phase_marks(r_lo / 16, depth, lambda r: s * s / (4 * r) + r * abs(Lam))
    v1 = seg_quad(lambda r: g(d * r) * d, leg1)
    corner = d * depth
    leg2 = phase_marks(0, 1, lambda u: abs(Lam) * u + s * s / 2)

    def g2(u):
        t = corner + (1 - corner) * u
        return g(t) * (1 - corner)
    v2 = seg_quad(g2, [mp.mpf(m) for m in leg2])
    return PREF_OSC * (v1 + v2)


def rho2_ref(s, Lam, zeta):
    return PREF_OSC * oscillatory_ray(s, Lam, zeta, t0=mp.mpf(1))


def nu_ref(s, Lam, zeta):
    """heat piece on (0,1], with the e^{zeta^2} normalization."""
    s, Lam, zeta = mp.mpf(s), mp.mpc(Lam), mp.mpc(zeta)
    pref = mp.e ** (zeta**2) / FOURPI32

    if s == 0:
        def gv(v):
            t = v * v
            return (mp.e ** (t**3 / 12 + t * Lam) * t ** (zeta - mp.mpf("2.5"))
                    * 2 * v)
        return pref * seg_quad(gv, [0, mp.mpf("0.3"), 1])

    def g(t):
        return (mp.e ** (-s * s / (4 * t) + t**3 / 12 + t * Lam)
                * t ** (zeta - mp.mpf("2.5")))
    marks = [0, s * s / (4 * mp.mpf(130)), mp.mpf("0.01"), mp.mpf("0.1"),
             mp.mpf("0.5"), 1]
    marks = sorted(set(min(mp.mpf(1), m) for m in marks))
    return pref * seg_quad(g, marks)


def eta_ref(s, Lam, zeta):
    """unit-shifted contour piece over [0, inf); principal (t-i)^{3/2}."""
    s, Lam, zeta = mp.mpf(s), mp.mpc(Lam), mp.mpc(zeta)

    def g(t):
        w = t - 1j
        return (PREF_SHIFTED * mp.e ** ((1j * t - 1) * s * s / (4 * (t * t + 1))
                                        - 1j * w**3 / 12 + 1j * w * Lam)
                * t ** (zeta - 1) / w ** mp.mpf("1.5"))

    T = mp.sqrt((12 * 130 + 1) / mp.mpf(3))
    t1 = min(mp.mpf(1), T / 4)

    def gv(v):
        t = v * v
        return g(t) * 2 * v

    head = seg_quad(gv, [0, mp.sqrt(t1) / 2, mp.sqrt(t1)])
    marks = phase_marks(t1, T, lambda t: abs(t**3 - 3 * t) / 12
                        + t * abs(Lam) + s * s / 8)
    return head + seg_quad(g, marks)


POINTS = [
    # (kernel, s, Lambda, zeta)
    ("r_zeta", 0.0, 1j, 2.0),
    ("r_zeta", 0.0, -2.0 + 0.5j, 2.0),
    ("r_zeta", 0.0, 1.0 + 3j, 2.5),
    ("r_zeta", 1.0, 1j, 2.0),
    ("r_zeta", 1.0, 1.0 + 1j, 1.7),
    ("r_zeta", 2.7, -1.5 + 1j, 2.0),
    ("r_zeta", 6.0, 0.3 + 1j, 2.0),
    ("r_zeta", 0.3, -6.0 + 3j, 2.0 + 0.7j),
    ("rho1", 1.0, 1j, 2.0),
    ("rho1", 0.5, -2.0 + 0.5j, 1.0),
    ("rho2", 1.0, 1j, 2.0),
    ("rho2", 0.5, -2.0 + 0.5j, 1.0),
    ("nu", 0.0, 1j, 2.0),
    ("nu", 1.0, 1j, 2.0),
    ("nu", 1.0, -10.0 + 1j, 2.5),
    ("nu", 2.7, -1.5 + 0.5j, 1.0),
    ("eta", 0.0, 1j, 2.0),
    ("eta", 1.0, 1j, 2.0),
    ("eta", 0.7, 0.5 + 1j, 0.4),
    ("eta", 2.7, -1.5 + 3j, 1.0),
]

FNS = {"r_zeta": r_zeta_ref, "rho1": rho1_ref, "rho2": rho2_ref,
       "nu": nu_ref, "eta": eta_ref}


def main():
    out = []
    for kernel, s, Lam, zeta in POINTS:
        val = FNS[kernel](s, Lam, zeta)
        # error estimate: recompute at reduced precision and compare
        with mp.workdps(38):
            val_lo = FNS[kernel](s, Lam, zeta)
        err = abs(val - val_lo)
        out.append({
            "kernel": kernel, "s": s,
            "lam_re": float(mp.re(mp.mpc(Lam))), "lam_im": float(mp.im(mp.mpc(Lam))),
            "zeta_re": float(mp.re(mp.mpc(zeta))), "zeta_im": float(mp.im(mp.mpc(zeta))),
            "value_re": float(mp.re(val)), "value_im": float(mp.im(val)),
            "oracle_err": float(err),
        })
        print(f"{kernel:7s} s={s:4.1f} Lam={complex(Lam)} zeta={complex(zeta)} "
              f"-> {complex(val):.12e} (est err {float(err):.1e})")
    path = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data" / "kernel_golden.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=1))
    print(f"wrote {len(out)} golden values to {path}")


if __name__ == "__main__":
    main()
