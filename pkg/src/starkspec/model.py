"""Potentials on 3-d boxes: grids, presets, factorizations, weighted integrals.

Everything downstream (kernel tables, Birman-Schwinger matrices, bound
evaluators) consumes the types defined here.  All types are immutable after
construction and all operations are pure.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid3",
    "PotentialField",
    "FactorPair",
    "WeightFunction",
    "build_potential",
    "factorize",
    "weighted_lp_integral",
    "potential_from_json",
    "read_field_binary",
    "write_field_binary",
]


class ModelError(ValueError):
    """Invalid grid/potential specification."""


@dataclass(frozen=True)
class Grid3:
    """Vertex grid on a box [lo, hi]^3 with product trapezoid quadrature.

    Spacing is (hi - lo)/(n - 1) per axis; the quadrature weight of a node is
    h1*h2*h3 reduced by 1/2 for every axis on which the node sits at the box
    boundary, so the weights are positive and sum exactly to the box volume.
    """

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    n: tuple[int, int, int]

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3 or len(self.n) != 3:
            raise ModelError("grid needs 3 components per field")
        if any(int(k) != k or k < 2 for k in self.n):
            raise ModelError("points per axis must be integers >= 2")
        if any(u <= l for l, u in zip(self.lo, self.hi)):
            raise ModelError("upper corner must exceed lower corner componentwise")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple((u - l) / (k - 1) for l, u, k in zip(self.lo, self.hi, self.n))

    @property
    def num_nodes(self) -> int:
        return self.n[0] * self.n[1] * self.n[2]

    @property
    def volume(self) -> float:
        return math.prod(u - l for l, u in zip(self.lo, self.hi))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            np.linspace(l, u, k) for l, u, k in zip(self.lo, self.hi, self.n)
        )

    def nodes(self) -> np.ndarray:
        """(N, 3) array of node coordinates in node-major (x-fastest-last) order."""
        ax = self.axes()
        g = np.meshgrid(*ax, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    def weights(self) -> np.ndarray:
        """(N,) trapezoid product weights; sums to the box volume."""
        ws = []
        for h, k in zip(self.spacing, self.n):
            w = np.full(k, h)
            w[0] *= 0.5
            w[-1] *= 0.5
            ws.append(w)
        return (
            ws[0][:, None, None] * ws[1][None, :, None] * ws[2][None, None, :]
        ).ravel()

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "n": list(self.n)}

    @staticmethod
    def from_dict(d: dict) -> "Grid3":
        return Grid3(tuple(d["lo"]), tuple(d["hi"]), tuple(d["n"]))


@dataclass(frozen=True)
class PotentialField:
    """Complex potential sampled on a Grid3.

    ``values`` is flat, aligned with ``grid.nodes()``.  ``truncation_mass`` is
    the estimated fraction of the |V| mass lost by hard truncation of an
    analytic preset at its support (box or ball); 0.0 for tabulated input.
    """

    grid: Grid3
    values: np.ndarray
    preset: dict | None = None
    truncation_mass: float = 0.0
    coarse_warning: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128).ravel()
        if v.size != self.grid.num_nodes:
            raise ModelError("value count does not match grid")
        if not np.all(np.isfinite(v.real)) or not np.all(np.isfinite(v.imag)):
            raise ModelError("potential values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def support_mask(self) -> np.ndarray:
        return self.values != 0

    def scaled(self, s: complex) -> "PotentialField":
        return PotentialField(self.grid, s * self.values, self.preset,
                              self.truncation_mass, self.coarse_warning)


@dataclass(frozen=True)
class FactorPair:
    """Pointwise factorization V = w1*w2 with |w1| = |w2|, both 0 off supp V."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "w2"):
            a = np.asarray(getattr(self, name), dtype=np.complex128)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


# -- weight functions ---------------------------------------------------------

_WEIGHT_TAGS = ("rho", "P", "P1", "psi", "chi_lambda", "poly4")


@dataclass(frozen=True)
class WeightFunction:
    """Named positive weight used in the integral bounds.

    rho(x)        = (1 + exp(-p*x1/2)) * (1 + |x1|)^2      (needs parameter p)
    P(x)          = 1 + exp(-x1/2)
    P1(x)         = (1 + |x1|) * (1 + exp(-x1/2))
    psi(x)        = exp(-x1/2)
    chi_lambda(x) = 1 if |x1| < |lambda|/2 else 0           (needs parameter lam)
    poly4(x)      = (1 + |x|)^4
    """

    tag: str
    p: float | None = None
    lam: complex | None = None

    def __post_init__(self):
        if self.tag not in _WEIGHT_TAGS:
            raise ModelError(f"unknown weight tag {self.tag!r}")
        if self.tag == "rho" and self.p is None:
            raise ModelError("weight 'rho' needs parameter p")
        if self.tag == "chi_lambda" and self.lam is None:
            raise ModelError("weight 'chi_lambda' needs parameter lam")

    def __call__(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        x1 = nodes[:, 0]
        if self.tag == "rho":
            return (1.0 + np.exp(-self.p * x1 / 2.0)) * (1.0 + np.abs(x1)) ** 2
        if self.tag == "P":
            return 1.0 + np.exp(-x1 / 2.0)
        if self.tag == "P1":
            return (1.0 + np.abs(x1)) * (1.0 + np.exp(-x1 / 2.0))
        if self.tag == "psi":
            return np.exp(-x1 / 2.0)
        if self.tag == "chi_lambda":
            return (np.abs(x1) < abs(self.lam) / 2.0).astype(float)
        # poly4
        r = np.linalg.norm(nodes, axis=1)
        return (1.0 + r) ** 4


# -- presets ------------------------------------------------------------------

def _gauss_tail_ball(radius_sq_over_sigma_sq: float) -> float:
    # fraction of int exp(-r^2) r^2 dr mass beyond u = R^2/sigma^2
    u = radius_sq_over_sigma_sq
    return math.erfc(math.sqrt(u)) + 2.0 * math.sqrt(u / math.pi) * math.exp(-u)


def _sample_preset(preset: dict, nodes: np.ndarray):
    """Return (values, truncation_mass, length_scale) for an analytic preset."""
    kind = preset["preset"]
    amp = preset.get("amplitude", [1.0, 0.0])
    c = complex(amp[0], amp[1]) if not isinstance(amp, (int, float, complex)) else complex(amp)
    center = np.asarray(preset.get("center", [0.0, 0.0, 0.0]), dtype=float)
    d = nodes - center[None, :]

    if kind == "zero":
        return np.zeros(len(nodes), dtype=np.complex128), 0.0, math.inf

    if kind == "gaussian":
        sigma = float(preset.get("sigma", 1.0))
        if not (sigma > 0 and math.isfinite(sigma)):
            raise ModelError("gaussian sigma must be positive and finite")
        r2 = np.einsum("ij,ij->i", d, d)
        vals = c * np.exp(-r2 / sigma**2)
        cutoff = preset.get("cutoff_radius")
        if cutoff is not None:
            cutoff = float(cutoff)
            if cutoff <= 0:
                raise ModelError("cutoff_radius must be positive")
            vals = np.where(r2 <= cutoff**2, vals, 0.0)
            trunc = _gauss_tail_ball(cutoff**2 / sigma**2)
        else:
            trunc = None  # box truncation, estimated by caller
        return vals, trunc, sigma

    if kind == "aniso_gaussian":
        sig = np.asarray(preset.get("sigma", [1.0, 1.0, 1.0]), dtype=float)
        if sig.shape != (3,) or np.any(sig <= 0) or not np.all(np.isfinite(sig)):
            raise ModelError("aniso_gaussian sigma must be 3 positive finite values")
        vals = c * np.exp(-np.einsum("ij,ij->i", d / sig[None, :], d / sig[None, :]))
        return vals, None, float(np.min(sig))

    if kind == "exp_screened":
        # c * exp(-|x - center|)
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        vals = c * np.exp(-r)
        cutoff = preset.get("cutoff_radius")
        if cutoff is not None:
            R = float(cutoff)
            if R <= 0:
                raise ModelError("cutoff_radius must be positive")
            vals = np.where(r <= R, vals, 0.0)
            # int_R^inf e^{-r} r^2 dr / int_0^inf = (R^2+2R+2) e^{-R} / 2
            trunc = (R * R + 2 * R + 2) * math.exp(-R) / 2.0
        else:
            trunc = None
        return vals, trunc, 1.0

    raise ModelError(f"unknown preset {kind!r}")


def _box_truncation_mass(preset: dict, grid: Grid3) -> float:
    """Fraction of the |V| mass outside the grid box (per-axis product bound)."""
    kind = preset["preset"]
    center = np.asarray(preset.get("center", [0.0, 0.0, 0.0]), dtype=float)
    if kind == "gaussian" or kind == "aniso_gaussian":
        sig = preset.get("sigma", 1.0)
        sig = np.asarray([sig] * 3 if isinstance(sig, (int, float)) else sig, dtype=float)
        inside = 1.0
        for i in range(3):
            a = (center[i] - grid.lo[i]) / sig[i]
            b = (grid.hi[i] - center[i]) / sig[i]
            inside *= 0.5 * (math.erf(a) + math.erf(b))
        return max(0.0, 1.0 - inside)
    if kind == "exp_screened":
        R = min(min(c - l for c, l in zip(center, grid.lo)),
                min(u - c for c, u in zip(center, grid.hi)))
        R = max(R, 0.0)
        return (R * R + 2 * R + 2) * math.exp(-R) / 2.0
    return 0.0


def build_potential(spec: dict, grid: Grid3 | None = None) -> PotentialField:
    """Sample a potential spec on a grid.

    ``spec`` is either an analytic preset dict ({"preset": ..., ...}, with the
    grid given separately or as spec["grid"]) or a tabulated dict
    ({"tabulated": values, "grid": ...}).  Analytic presets are hard-truncated
    at the grid box (or at spec["cutoff_radius"] when given) and the lost |V|
    mass is reported on the field.
    """
    if grid is None:
        if "grid" not in spec:
            raise ModelError("no grid given")
        grid = Grid3.from_dict(spec["grid"])

    if "tabulated" in spec:
        return PotentialField(grid, np.asarray(spec["tabulated"]), preset=None)

    if "preset" not in spec:
        raise ModelError("spec needs 'preset' or 'tabulated'")

    nodes = grid.nodes()
    vals, trunc, scale = _sample_preset(spec, nodes)
    if trunc is None:
        trunc = _box_truncation_mass(spec, grid)
    # fewer than 4 grid points across the preset length scale: warn, not fail
    coarse = any(scale / h < 4.0 for h in grid.spacing) if math.isfinite(scale) else False
    return PotentialField(grid, vals, preset=dict(spec),
                          truncation_mass=float(trunc), coarse_warning=coarse)


def factorize(V: PotentialField) -> FactorPair:
    """Canonical factor pair w1 = |V|^(1/2), w2 = V/|V|^(1/2), zero off supp V."""
    v = V.values
    av = np.abs(v)
    w1 = np.sqrt(av).astype(np.complex128)
    with np.errstate(divide="ignore", invalid="ignore"):
        w2 = np.where(av > 0, v / np.where(av > 0, w1, 1.0), 0.0)
    w1 = np.where(av > 0, w1, 0.0)
    return FactorPair(w1, w2)


def weighted_lp_integral(V: PotentialField, exponent: float,
                         weight: WeightFunction | None = None) -> float:
    """Quadrature of |V|^exponent * weight over the grid box.

    |V|^0 is taken as the indicator of supp V, so the zero potential
    integrates to 0 for every exponent.
    """
    if exponent < 0:
        raise ModelError("exponent must be >= 0")
    av = np.abs(V.values)
    if exponent == 0:
        integrand = (av > 0).astype(float)
    else:
        integrand = av**exponent
    if weight is not None:
        integrand = integrand * weight(V.grid.nodes())
    return float(np.dot(V.grid.weights(), integrand))


# -- external formats ---------------------------------------------------------

_MAGIC = b"SSF1"


def potential_from_json(text_or_dict) -> PotentialField:
    """Build from the JSON potential spec (preset form)."""
    spec = json.loads(text_or_dict) if isinstance(text_or_dict, (str, bytes)) else dict(text_or_dict)
    if "grid" not in spec:
        raise ModelError("potential spec must carry a grid")
    return build_potential(spec)


def write_field_binary(path, grid: Grid3, values: np.ndarray) -> None:
    """Tabulated field format: grid header + interleaved (re, im) LE doubles."""
    v = np.asarray(values, dtype=np.complex128).ravel()
    if v.size != grid.num_nodes:
        raise ModelError("value count does not match grid")
    header = json.dumps(grid.to_dict()).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        inter = np.empty(2 * v.size, dtype="<f8")
        inter[0::2] = v.real
        inter[1::2] = v.imag
        f.write(inter.tobytes())


def read_field_binary(path) -> tuple[Grid3, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ModelError("bad field file magic")
        (hlen,) = struct.unpack("<I", f.read(4))
        grid = Grid3.from_dict(json.loads(f.read(hlen).decode()))
        raw = np.frombuffer(f.read(), dtype="<f8")
    if raw.size != 2 * grid.num_nodes:
        raise ModelError("field payload size does not match grid")
    return grid, (raw[0::2] + 1j * raw[1::2]).astype(np.complex128)
