"""Momentum-space quadrature of the Vlasov source integrals.

Five integrals over the momentum box of a density profile appear in the
constraints. With ``p'`` the ``n`` independent momentum components
(generator component first), ``T`` the angular metric and ``d = |T|``:

=========  =============================================================
kind       integrand
=========  =============================================================
S_ham      ``f |theta| sqrt(d) (m^2 + T_ab p^a p^b)^2 / (p^g)^2``
S_mom      ``f |theta| sqrt(d) (m^2 + T_cd p^c p^d) T_ab p^b / (p^g)^2``
S_tr       ``f theta sqrt(d) (m^2 + T_ab p^a p^b) / p^g``
S_ab       ``f 2 theta sqrt(d) T_ae T_bf p^e p^f / p^g``
S_final    ``f |theta|^3 sqrt(d) p^g``
=========  =============================================================

where ``p^g`` is the generator-direction component. Note the mixture of
``theta`` and ``|theta|``; it is kept as written.
"""

from __future__ import annotations

import enum
import itertools
import os
from dataclasses import dataclass

import numpy as np

from ..freedata import DensityProfile

if os.environ.get("CHARINIT_PURE_PYTHON"):
    from ._moments_py import angular_sums
    BACKEND = "python"
else:
    try:
        from ._moments import angular_sums
        BACKEND = "compiled"
    except ImportError:
        from ._moments_py import angular_sums
        BACKEND = "python"

DEFAULT_Q = 24


class QuadratureError(ValueError):
    pass


class SourceIntegralKind(str, enum.Enum):
    S_ham = "S_ham"
    S_mom = "S_mom"
    S_tr = "S_tr"
    S_ab = "S_ab"
    S_final = "S_final"

    @property
    def rank(self) -> int:
        return {"S_mom": 1, "S_ab": 2}.get(self.value, 0)


def gauss_legendre(Q: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(Q)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


@dataclass(frozen=True)
class MomentumQuadrature:
    """Tensor-product Gauss-Legendre rule over a momentum box."""

    nodes: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    @classmethod
    def for_profile(cls, f: DensityProfile, Q: int = DEFAULT_Q) -> "MomentumQuadrature":
        if f.p_lo[0] <= 0:
            raise QuadratureError(
                f"momentum box touches p^g = 0 (lower edge {f.p_lo[0]:g}); integrands are singular there")
        rules = [gauss_legendre(Q, lo, hi) for lo, hi in zip(f.p_lo, f.p_hi)]
        return cls(tuple(r[0] for r in rules), tuple(r[1] for r in rules))

    @property
    def Q(self) -> tuple[int, ...]:
        return tuple(len(x) for x in self.nodes)

    def generator_sums(self, f: DensityProfile) -> dict[int, float]:
        """``sum_q w B(p) p**j`` along the generator momentum axis, j in {-2, -1, 1}."""
        p, w = self.nodes[0], self.weights[0]
        wb = w * f.momentum_factor(0, p)
        return {j: float(np.sum(wb * p**j)) for j in (-2, -1, 1)}

    def angular_rule(self, f: DensityProfile) -> tuple[np.ndarray, np.ndarray]:
        """Flattened angular tensor-product points ``(Qa, k)`` and bump-weighted weights."""
        k = len(self.nodes) - 1
        if k == 0:
            return np.zeros((1, 0)), np.ones(1)
        pts = np.array(list(itertools.product(*self.nodes[1:])))
        wts = np.ones(len(pts))
        for a in range(k):
            idx = np.array(list(itertools.product(*[range(len(x)) for x in self.nodes[1:]])))[:, a]
            wts = wts * self.weights[a + 1][idx] * f.momentum_factor(a + 1, self.nodes[a + 1][idx])
        return np.ascontiguousarray(pts), wts


def eval_source_integral(kind: SourceIntegralKind | str, f: DensityProfile, theta: float,
                         metric: np.ndarray, mass: float, quad: MomentumQuadrature,
                         spatial: float = 1.0):
    """One source integral at one surface node by a direct tensor-product sum.

    ``spatial`` is the value of the position-dependent factor of ``f`` at the
    node; ``metric`` the ``(k, k)`` angular metric there.
    """
    kind = SourceIntegralKind(kind)
    k = metric.shape[0]
    if spatial == 0.0 or f.is_zero:
        return np.zeros((k,) * kind.rank) if kind.rank else 0.0
    mesh = np.meshgrid(*quad.nodes, indexing="ij")
    wmesh = np.meshgrid(*quad.weights, indexing="ij")
    fw = spatial * np.ones_like(mesh[0])
    for i in range(k + 1):
        fw = fw * wmesh[i] * f.momentum_factor(i, mesh[i])
    pg = mesh[0]
    pa = np.stack(mesh[1:]) if k else np.zeros((0,) + pg.shape)
    lowered = np.einsum("ab,b...->a...", metric, pa)
    quadform = np.einsum("a...,a...->...", lowered, pa)
    e = mass**2 + quadform
    root = np.sqrt(np.linalg.det(metric))
    if kind is SourceIntegralKind.S_ham:
        return float(np.sum(fw * abs(theta) * root * e**2 / pg**2))
    if kind is SourceIntegralKind.S_mom:
        return np.sum(fw * abs(theta) * root * e * lowered / pg**2, axis=tuple(range(1, k + 2)))
    if kind is SourceIntegralKind.S_tr:
        return float(np.sum(fw * theta * root * e / pg))
    if kind is SourceIntegralKind.S_ab:
        integrand = 2.0 * theta * root * lowered[:, None] * lowered[None, :] / pg
        return np.sum(fw * integrand, axis=tuple(range(2, k + 3)))
    return float(np.sum(fw * abs(theta) ** 3 * root * pg))


def source_integrals(f: DensityProfile, spatial: np.ndarray, theta: np.ndarray,
                     metric: np.ndarray, det: np.ndarray, mass: float,
                     quad: MomentumQuadrature) -> dict[str, np.ndarray]:
    """All five integrals at every node of a sampled surface.

    ``spatial`` and ``theta`` have the node shape, ``metric`` the full
    ``(k, k) + node shape`` layout. The generator-momentum axis factors out
    of each tensor-product sum; the remaining per-node sum over angular
    momenta is done by the compiled kernel when available.
    """
    k = metric.shape[0]
    shape = theta.shape
    zero = {"S_ham": np.zeros(shape), "S_mom": np.zeros((k,) + shape), "S_tr": np.zeros(shape),
            "S_ab": np.zeros((k, k) + shape), "S_final": np.zeros(shape)}
    if f.is_zero or not np.any(spatial):
        return zero
    g = quad.generator_sums(f)
    pts, wts = quad.angular_rule(f)
    flat_metric = np.ascontiguousarray(np.moveaxis(metric.reshape(k, k, -1), -1, 0))
    flat_spatial = np.ascontiguousarray(spatial.reshape(-1))
    A0, A1, A2, A3 = angular_sums(flat_metric, flat_spatial, pts, wts, float(mass) ** 2)
    A4 = float(wts.sum())

    root = np.sqrt(det)
    base = spatial * root
    ath = np.abs(theta)
    return {
        "S_ham": base * ath * g[-2] * A0.reshape(shape),
        "S_mom": base * ath * g[-2] * np.moveaxis(A1, 0, -1).reshape((k,) + shape),
        "S_tr": base * theta * g[-1] * A2.reshape(shape),
        "S_ab": 2.0 * base * theta * g[-1] * np.moveaxis(A3, 0, -1).reshape((k, k) + shape),
        "S_final": base * ath**3 * g[1] * A4,
    }


def assemble_T_ab(dphi: np.ndarray, dphi_gen: np.ndarray, u: np.ndarray, theta: np.ndarray,
                  metric: np.ndarray, inverse: np.ndarray, V: np.ndarray,
                  S_ab: np.ndarray) -> np.ndarray:
    """Angular stress tensor on the surface.

    ``dphi`` is the angular gradient (leading axis a), ``dphi_gen`` the
    generator derivative and ``u`` the transverse derivative of the scalar.
    """
    grad2 = np.einsum("cd...,c...,d...->...", inverse, dphi, dphi)
    scalar = (2.0 / theta) * u * dphi_gen + grad2 + V
    return (np.einsum("a...,b...->ab...", dphi, dphi) - 0.5 * metric * scalar - S_ab)


def matter_scalar_rhs(dphi: np.ndarray, inverse: np.ndarray, V: np.ndarray,
                      S_tr: np.ndarray) -> np.ndarray:
    return np.einsum("cd...,c...,d...->...", inverse, dphi, dphi) + V + 2.0 * S_tr
