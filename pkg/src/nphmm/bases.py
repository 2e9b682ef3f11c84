"""Orthonormal projection bases on the unit interval.

Two families are available:

``histogram``
    ``phi_m = sqrt(M)`` on the bin ``[(m-1)/M, m/M)``; the point ``y = 1``
    belongs to the last bin.
``trigonometric``
    ``phi_1 = 1``, ``phi_{2j} = sqrt(2) cos(2 pi j y)``,
    ``phi_{2j+1} = sqrt(2) sin(2 pi j y)``; ``M`` must be odd.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

FAMILIES = ("histogram", "trigonometric")
_ALIASES = {"hist": "histogram", "trig": "trigonometric"}


@dataclass(frozen=True)
class BasisSpec:
    family: str
    size: int

    def __post_init__(self):
        family = _ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"basis size must be a positive integer, got {self.size}")
        object.__setattr__(self, "size", int(self.size))
        if family == "trigonometric" and self.size % 2 == 0:
            raise ValueError(f"trigonometric basis needs odd size, got {self.size}")

    def to_dict(self):
        return {"family": self.family, "size": self.size}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d["size"])


@dataclass(frozen=True)
class Quadrature:
    """Nodes and positive weights on [0, 1]; weights sum to one."""

    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values):
        """Integrate sampled values (first axis indexed by node)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=32)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n=2048, breakpoints=None):
    """Composite Gauss-Legendre rule on [0, 1].

    With ``breakpoints`` the interval is split into panels at those points and
    ``n`` nodes are shared evenly between panels (at least 8 per panel), so
    piecewise-smooth integrands with jumps at the breakpoints are handled to
    full accuracy.
    """
    edges = np.array([0.0, 1.0]) if breakpoints is None else np.unique(
        np.concatenate([[0.0, 1.0], np.asarray(breakpoints, dtype=float)])
    )
    panels = len(edges) - 1
    per_panel = max(8, int(np.ceil(n / panels)))
    x, w = _leggauss(per_panel)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel()
    return Quadrature(nodes, weights)


def quadrature_for(spec, n=2048):
    """Default inner-product rule for ``spec``: panels aligned with histogram bins."""
    if spec.family == "histogram":
        return gauss_legendre(n, breakpoints=np.arange(1, spec.size) / spec.size)
    return gauss_legendre(n)


def _check_domain(y):
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(y)) or np.any(y < 0.0) or np.any(y > 1.0):
        raise DomainError("observations must lie in [0, 1]")
    return y


def bin_index(size, y):
    """Histogram bin of each ``y`` (0-based; ``y = 1`` goes to the last bin)."""
    y = _check_domain(y)
    return np.minimum((y * size).astype(np.int64), size - 1)


def eval_basis(spec, y):
    """Evaluate ``(phi_1(y), ..., phi_M(y))``.

    A scalar ``y`` gives a vector of length M; an array of shape ``(n,)``
    gives an ``(n, M)`` matrix.
    """
    y = _check_domain(y)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    m = spec.size
    if spec.family == "histogram":
        out = np.zeros((y.size, m))
        out[np.arange(y.size), bin_index(m, y)] = np.sqrt(m)
    else:
        out = np.empty((y.size, m))
        out[:, 0] = 1.0
        j = np.arange(1, (m - 1) // 2 + 1)
        arg = 2.0 * np.pi * np.outer(y, j)
        out[:, 1::2] = np.sqrt(2.0) * np.cos(arg)
        out[:, 2::2] = np.sqrt(2.0) * np.sin(arg)
    return out[0] if scalar else out


@dataclass(frozen=True)
class CoeffVec:
    basis: BasisSpec
    coefficients: np.ndarray

    def __call__(self, y):
        return reconstruct(self, y)

    def norm(self):
        return float(np.linalg.norm(self.coefficients))


def project_density(f, spec, quad=None):
    """Coefficients ``<f, phi_m>`` computed with the quadrature rule ``quad``.

    ``f`` must accept an array of points. With the default rule the
    quadrature error is below 1e-8 for smooth densities.
    """
    quad = quadrature_for(spec) if quad is None else quad
    values = np.asarray(f(quad.nodes), dtype=float)
    coeffs = quad.integrate(values[:, None] * eval_basis(spec, quad.nodes))
    return CoeffVec(spec, coeffs)


def reconstruct(c, y):
    """``sum_m c_m phi_m(y)``; the result can be negative."""
    return eval_basis(c.basis, y) @ c.coefficients


@dataclass(frozen=True)
class Eta3:
    """Value of the triple-product oscillation functional of a basis.

    ``upper_bound`` is set when ``value`` bounds the supremum from above
    rather than equalling it.
    """

    value: float
    upper_bound: bool


def eta3(spec):
    """Square root of the sup over (y, y') in ([0,1]^3)^2 of the squared
    distance between the tensor products ``phi(y1) x phi(y2) x phi(y3)``.

    Histogram: two triples in different cells give ``2 M^3`` under the root,
    so the exact value is ``sqrt(2) M^{3/2}`` (zero when ``M = 1``).
    Trigonometric: each tensor product has squared norm ``M^3``, so Cauchy-
    Schwarz bounds the sup by ``4 M^3`` and ``2 M^{3/2}`` is returned as an
    upper bound. The Dirichlet kernel goes negative, so the smaller value
    ``sqrt(2) M^{3/2}`` would not be a valid bound.
    """
    m = spec.size
    if spec.family == "histogram":
        return Eta3(float(np.sqrt(2.0) * m**1.5) if m > 1 else 0.0, False)
    if m == 1:
        return Eta3(0.0, False)
    return Eta3(float(2.0 * m**1.5), True)


def eta3_trig_sup(size, grid=20001):
    """Numerical sup for the trigonometric family (used to check the bound).

    The squared distance equals ``2 M^3 - 2 prod_i D(y_i - y'_i)`` with the
    Dirichlet kernel ``D(t) = 1 + 2 sum_j cos(2 pi j t)``; its most negative
    product is ``M^2 min_t D(t)``.
    """
    t = np.linspace(0.0, 1.0, grid)
    j = np.arange(1, (size - 1) // 2 + 1)
    d = 1.0 + 2.0 * np.cos(2.0 * np.pi * np.outer(t, j)).sum(axis=1)
    dmin = min(d.min(), 0.0)
    return float(np.sqrt(2.0 * size**3 - 2.0 * size**2 * dmin))
