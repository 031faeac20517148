"""Right-hand sides of the quantitative eigenvalue bounds and report assembly.

All evaluators return the constant-stripped RHS; the universal constants are
nonconstructive, so reports carry the constant-stripped ratio LHS/RHS together
with whatever calibrated constant was supplied (default 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import PotentialField, WeightFunction, weighted_lp_integral
from .zerocount import corner_count_constant

__all__ = ["BoundReport", "rhs_sum_im", "rhs_moment", "rhs_count",
           "rhs_disk_radius", "rhs_lifted", "weighted_count_mass",
           "check", "moment_identity_gap", "THEOREMS"]

THEOREMS = ("T1.1", "T1.2", "T1.3", "T1.4", "Tlift")


@dataclass
class BoundReport:
    theorem: str
    lhs: float
    rhs: float                # constant-stripped
    constant: float
    ratio: float              # lhs / (constant * rhs)
    passes: bool
    params: dict
    spectrum_size: int
    region: dict | None = None
    note: str = ""

    def as_dict(self):
        return {"theorem": self.theorem, "lhs": self.lhs, "rhs": self.rhs,
                "constant": self.constant, "ratio": self.ratio,
                "passes": self.passes, "params": self.params,
                "spectrum_size": self.spectrum_size, "region": self.region,
                "note": self.note}


def rhs_sum_im(V: PotentialField, p: float) -> float:
    """(int |V|^{p/2})^2 + (int |V|^{p/(p-2)})^{p-2}, for 4 < p <= 5."""
    if not (4.0 < p <= 5.0):
        raise ValueError("p must lie in (4, 5]")
    a = weighted_lp_integral(V, p / 2.0)
    b = weighted_lp_integral(V, p / (p - 2.0))
    return a**2 + b ** (p - 2.0)


def rhs_moment(V: PotentialField, p: float, q: float) -> float:
    """(int |V|^{p/2})^{2q/(p-3)}, for q > 1 and 4 < p < q + 3."""
    if not (q > 1.0 and 4.0 < p < q + 3.0):
        raise ValueError("need q > 1 and 4 < p < q + 3")
    return weighted_lp_integral(V, p / 2.0) ** (2.0 * q / (p - 3.0))


def rhs_count(V: PotentialField, p: float, delta: float, alpha: float,
              c_pdelta: float = 1.0) -> float:
    """C_{alpha,p,delta} * (int |V|^{p/2} rho)^{2(1+delta)} with the
    eps-minimized corner constant; rho is the exponentially tilted weight."""
    if p <= 5.0 or delta <= 0 or alpha <= 0:
        raise ValueError("need p > 5, delta > 0, alpha > 0")
    wint = weighted_lp_integral(V, p / 2.0, WeightFunction("rho", p=p))
    cc = corner_count_constant(alpha, p, delta, c_pdelta)["constant"]
    return cc * wint ** (2.0 * (1.0 + delta))


def rhs_disk_radius(V: PotentialField) -> float:
    """(int (1+|x|)^4 |V| + (int |V|^2)^{1/2})^4."""
    a = weighted_lp_integral(V, 1.0, WeightFunction("poly4"))
    b = math.sqrt(weighted_lp_integral(V, 2.0))
    return (a + b) ** 4


def rhs_lifted(V: PotentialField, p: float, gamma: float) -> float:
    """gamma^{-(p-4)} (int |V|^{p/2})^2, for p > 4, gamma > 0."""
    if p <= 4.0 or gamma <= 0:
        raise ValueError("need p > 4 and gamma > 0")
    return gamma ** (-(p - 4.0)) * weighted_lp_integral(V, p / 2.0) ** 2


def weighted_count_mass(V: PotentialField, p: float) -> float:
    """(int (1+e^{-x1/2})^p (1+|x1|)^2 |V|^{p/2})^2 — the mass fed to the
    corner-count pipeline."""
    if p <= 5.0:
        raise ValueError("p > 5 required")
    nodes = V.grid.nodes()
    x1 = nodes[:, 0]
    weight = (1.0 + np.exp(-x1 / 2.0)) ** p * (1.0 + np.abs(x1)) ** 2
    av = np.abs(V.values)
    integrand = np.where(av > 0, av ** (p / 2.0), 0.0) * weight
    return float(np.dot(V.grid.weights(), integrand)) ** 2


def _lhs(theorem: str, spectrum, params) -> float:
    ims = np.array([r.lam.imag * r.multiplicity for r in spectrum], dtype=float)
    if theorem == "T1.1":
        return float(np.sum(np.abs(ims)))
    if theorem == "T1.2":
        q = params["q"]
        return float(sum(r.multiplicity * abs(r.lam.imag) ** q for r in spectrum))
    if theorem == "T1.3":
        alpha = params["alpha"]
        return float(sum(r.multiplicity for r in spectrum if r.lam.real < alpha))
    if theorem == "T1.4":
        return max((abs(r.lam) for r in spectrum), default=0.0)
    if theorem == "Tlift":
        g = params["gamma"]
        return float(sum(r.multiplicity * max(r.lam.imag - g, 0.0)
                         for r in spectrum))
    raise ValueError(f"unknown theorem tag {theorem!r}")


def check(theorem: str, spectrum, V: PotentialField, params: dict,
          constant: float = 1.0, region: dict | None = None) -> BoundReport:
    """Inequality report: multiplicity-weighted LHS against constant * RHS."""
    if theorem == "T1.1":
        rhs = rhs_sum_im(V, params["p"])
    elif theorem == "T1.2":
        rhs = rhs_moment(V, params["p"], params["q"])
    elif theorem == "T1.3":
        rhs = rhs_count(V, params["p"], params["delta"], params["alpha"],
                        params.get("c_pdelta", 1.0))
    elif theorem == "T1.4":
        rhs = rhs_disk_radius(V)
    elif theorem == "Tlift":
        rhs = rhs_lifted(V, params["p"], params["gamma"])
    else:
        raise ValueError(f"unknown theorem tag {theorem!r}")
    lhs = _lhs(theorem, spectrum, params)
    denom = constant * rhs
    ratio = lhs / denom if denom > 0 else (0.0 if lhs == 0 else math.inf)
    note = ""
    if region is None:
        note = "spectrum truncation region not recorded"
    return BoundReport(theorem, lhs, rhs, constant, ratio, ratio <= 1.0,
                       dict(params), len(spectrum), region, note)


def moment_identity_gap(q: float, m: float, n_quad: int = 200001) -> float:
    """|int_0^inf (m - g)_+ g^{q-2} dg  -  m^q int_0^1 (1-g) g^{q-2} dg| via
    quadrature; the change of variables makes the two sides equal."""
    if q <= 1.0 or m <= 0:
        raise ValueError("need q > 1 and m > 0")
    g = np.linspace(0.0, m, n_quad)
    left = np.trapezoid(np.maximum(m - g, 0.0) * g ** (q - 2.0), g) if q >= 2 else None
    if q < 2:
        # integrable endpoint singularity: substitute g = m u^2
        u = np.linspace(0.0, 1.0, n_quad)
        gg = m * u * u
        left = np.trapezoid(np.maximum(m - gg, 0.0) * gg ** (q - 2.0)
                            * 2.0 * m * u, u)
    right = m**q / ((q - 1.0) * q)
    return float(abs(left - right))
