"""A-posteriori verification of solved surface data.

Every constraint is re-evaluated from the node samples of a bundle alone:
generator derivatives come from finite differences of the stored fields
(free data included), never from the solver's analytic profiles, dense
output or interpolants. Residuals are ``LHS - RHS`` of each constraint.

For the traceless constraint only the symmetric trace-free part (with
respect to Theta) is a residual; its trace and antisymmetric parts are
reported as diagnostics, as is the gap between the literal curvature-trace
formula and the matter-side value ``M / theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .freedata import SurfaceFreeData
from .geometry import (CharSurfaceGrid, angular_gradient, angular_hessian, christoffel_angular,
                       fd_angular, fd_generator, invert_angular_metric, metric_derivatives)
from .kinetic import MomentumQuadrature, assemble_T_ab, matter_scalar_rhs, source_integrals

CONSTRAINTS = ("hamiltonian", "momentum", "trace_momentum", "traceless", "final")
DEFAULT_TOLERANCES = {"hamiltonian": 1e-8, "momentum": 1e-6, "trace_momentum": 1e-6, "traceless": 1e-6, "final": 1e-6}
TRACE_CLOSURE_TOL = 1e-10
SATURATION_FLOOR = 1e-13
# generator-direction FD order used to evaluate residuals; sixth order keeps
# the stencil error below the fourth-order solver error at desk resolutions
# (grids shorter than 8 nodes fall back to fourth order)
RESIDUAL_ACCURACY = 6


class IncompleteBundleError(ValueError):
    pass


def norms(values: np.ndarray) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    return {"max": float(np.max(np.abs(v))), "rms": float(np.sqrt(np.mean(v * v)))}


@dataclass
class ResidualReport:
    residuals: dict[str, np.ndarray]
    norms: dict[str, dict]
    diagnostics: dict[str, dict]
    tolerances: dict[str, float]
    passed: dict[str, bool]
    convergence: dict | None = None

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def summary(self) -> dict:
        return {"norms": self.norms, "diagnostics": self.diagnostics,
                "tolerances": self.tolerances, "passed": self.passed, "ok": self.ok}


# -- node-level geometry ---------------------------------------------------------

class _Nodes:
    """Everything the constraints need, computed from node samples."""

    def __init__(self, bundle, free: SurfaceFreeData, quad: MomentumQuadrature | None):
        g: CharSurfaceGrid = bundle.grid
        self.g, self.k = g, g.k
        for name in ("psi11", "chi", "u", "psi01", "theta", "phi"):
            v = getattr(bundle, name).values
            if not np.all(np.isfinite(v)):
                raise IncompleteBundleError(f"field {name} has non-finite entries")
            setattr(self, name, v)
        acc = RESIDUAL_ACCURACY if g.N_gen >= 8 else 4
        D = lambda v: fd_generator(v, g, accuracy=acc, wide_edges=True)        # noqa: E731
        T = bundle.Theta.full()
        self.T = T
        self.Ti, self.det = invert_angular_metric(T)
        self.T1 = D(T)
        self.ldet2 = fd_generator(np.log(self.det), g, order=2, accuracy=acc)
        self.dT = metric_derivatives(T, g)
        self.G = christoffel_angular(self.Ti, self.dT)
        self.p = bundle.psi1a.full()
        self.psi = bundle.psi_ab.full()

        self.th1 = D(self.theta)
        self.phi1 = D(self.phi)
        self.p1 = D(self.p)
        self.chi1 = D(self.chi)
        self.psi11_1 = D(self.psi11)
        self.psi_1 = D(self.psi)
        self.psi01_1 = D(self.psi01)

        self.dth = angular_gradient(self.theta, g)
        self.ddth = angular_hessian(self.theta, g)
        lth = np.log(np.abs(self.theta))
        self.dlth = angular_gradient(lth, g)
        self.ddlth = angular_hessian(lth, g)
        self.dphi = angular_gradient(self.phi, g)
        self.ddphi = angular_hessian(self.phi, g)
        self.dpsi11 = angular_gradient(self.psi11, g)
        self.dp = np.stack([angular_gradient(self.p[b], g) for b in range(self.k)], axis=1)

        self.V = free.potential.V(self.phi)
        s = g.generator_coords()
        spatial = free.f.spatial_factor(s, g)
        if quad is None:
            one = np.array([1.0])
            quad = MomentumQuadrature((one,) * (self.k + 1), (one,) * (self.k + 1))
        self.S = source_integrals(free.f, spatial, self.theta, T, self.det, free.mass, quad)
        self.M = matter_scalar_rhs(self.dphi, self.Ti, self.V, self.S["S_tr"])
        self.Tab = assemble_T_ab(self.dphi, self.phi1, self.u, self.theta, T, self.Ti, self.V,
                                 self.S["S_ab"])

    # small contractions
    def tr(self):
        return np.einsum("ab...,ab...->...", self.Ti, self.T1)

    def W(self):
        # W[c, a] = Theta^{cb} d1 Theta_ba
        return np.einsum("cb...,ba...->ca...", self.Ti, self.T1)

    def Y(self):
        # Y[c] = Theta^{de} d_c Theta_de
        return np.einsum("de...,cde...->c...", self.Ti, self.dT)


# -- constraint expressions --------------------------------------------------------

def _hamiltonian(n: _Nodes) -> np.ndarray:
    th = n.theta
    W = n.W()
    lhs = (n.tr() * n.psi11 + 2.0 * th * n.ldet2
           + th * np.einsum("cd...,dc...->...", W, W) - 2.0 * n.th1 * n.tr())
    return lhs - (4.0 * n.phi1**2 - 2.0 * n.S["S_ham"])


def _momentum(n: _Nodes) -> np.ndarray:
    g, k, th = n.g, n.k, n.theta
    Ti, T1, dT, p = n.Ti, n.T1, n.dT, n.p
    W = n.W()
    divW = sum(fd_angular(W[c], g, c) for c in range(k))
    dth1 = angular_gradient(n.th1, g)
    TT = np.einsum("cd...,cd...->...", Ti, n.T)
    sym3 = (np.einsum("aec...->aec...", dT) + np.einsum("cea...->aec...", dT)
            - np.einsum("eac...->aec...", dT))
    lhs = (n.p1
           + (n.psi11 + th * n.tr() - n.th1) / (2.0 * th) * p
           + n.psi11 * n.dth / (2.0 * th)
           + np.einsum("cb...,ca...,b...->a...", Ti, T1, n.dth)
           - 1.5 * n.th1 * n.dth / th
           + dth1
           - th * divW
           + 0.5 * angular_gradient(TT, g)
           - th**2 * n.dpsi11
           - np.einsum("cb...,c...,ba...->a...", Ti, n.dth, T1)
           - 0.5 * th * np.einsum("de...,cb...,ba...,cde...->a...", Ti, Ti, T1, dT)
           + 0.5 * th * np.einsum("de...,cb...,db...,aec...->a...", Ti, Ti, T1, sym3))
    rhs = 2.0 * th * (n.phi1 * n.dphi + n.S["S_mom"])
    return lhs - rhs


def _gamma_terms(n: _Nodes):
    G = n.G
    GG = np.einsum("dac...,cdb...->ab...", G, G)
    contr = n.dlth + np.einsum("ddc...->c...", G)
    return GG, contr


def _trace_momentum_lhs_parts(n: _Nodes) -> dict[str, np.ndarray]:
    g, k, th = n.g, n.k, n.theta
    Ti, dT, p = n.Ti, n.dT, n.p
    X = (2.0 * np.einsum("cd...,abd...->cab...", Ti, dT) - np.einsum("cd...,dab...->cab...", Ti, dT))
    divX = sum(fd_angular(X[c], g, c) for c in range(k))
    Y = n.Y()
    dY = np.stack([angular_gradient(Y[a], g) for a in range(k)], axis=1)    # dY[b, a] = d_b Y_a
    GG, contr = _gamma_terms(n)
    return {
        "transport": n.chi1 + 0.5 * (n.tr() - n.psi11 / th) * n.chi,
        "div_psi1": -np.einsum("ab...,ab...->...", Ti, n.dp),
        "psi1_christoffel": 0.5 * np.einsum("cd...,ab...,acb...,d...->...", Ti, Ti, 2.0 * dT, p)
        - 0.5 * np.einsum("cd...,ab...,cab...,d...->...", Ti, Ti, dT, p),
        "hess_lntheta": th * np.einsum("ab...,ab...->...", Ti, n.ddlth),
        "d_logdet": 0.5 * th * np.einsum("ab...,ba...->...", Ti, dY),
        "div_X": -0.5 * th * np.einsum("ab...,ab...->...", Ti, divX),
        "quadratic": (np.einsum("ab...,a...,b...->...", Ti, p, p)
                      + np.einsum("ab...,a...,b...->...", Ti, n.dth, n.dth)) / (2.0 * th),
        "GG": th * np.einsum("ab...,ab...->...", Ti, GG),
        "contracted": -th * np.einsum("c...,ab...,cab...->...", contr, Ti, n.G),
    }


def _trace_momentum(n: _Nodes) -> np.ndarray:
    return sum(_trace_momentum_lhs_parts(n).values()) - n.M


def _traceless_full(n: _Nodes) -> np.ndarray:
    """``E[a, b]`` (not symmetrized) of the traceless constraint."""
    g, k, th = n.g, n.k, n.theta
    Ti, T, dT, p, psi = n.Ti, n.T, n.dT, n.p, n.psi
    W = n.W()
    G = n.G
    divG = sum(fd_angular(G[c], g, c) for c in range(k))
    Y = n.Y()
    GG, contr = _gamma_terms(n)
    dY = np.stack([angular_gradient(Y[a], g) for a in range(k)], axis=0)    # dY[a, b] = d_b Y_a
    sym3 = (np.einsum("bca...->cab...", dT) + np.einsum("acb...->cab...", dT)
            - np.einsum("cba...->cab...", dT))
    lhs = (n.psi_1
           + 0.5 * (-n.psi11 / th + n.tr()) * psi
           - (np.einsum("ca...,cb...->ab...", W, psi) + np.einsum("db...,ad...->ab...", W, psi))
           / (2.0 * th)
           - th * divG
           + 0.5 * np.einsum("cd...,d...,cab...->ab...", Ti, p, sym3)
           - 0.5 * (np.swapaxes(n.dp, 0, 1) - n.dp)
           + th * n.ddlth
           + 0.5 * th * dY
           + np.einsum("a...,b...->ab...", p, 2.0 * p - n.dth) / (4.0 * th)
           + GG
           + 0.5 * th * n.T1 * n.chi
           - th * np.einsum("c...,cab...->ab...", contr, G))
    R = n.M / th
    trT = np.einsum("cd...,cd...->...", Ti, n.Tab)
    return lhs - ((R - trT) / k * T + n.Tab)


def _stf(E: np.ndarray, n: _Nodes) -> np.ndarray:
    S = 0.5 * (E + np.swapaxes(E, 0, 1))
    return S - n.T * np.einsum("ab...,ab...->...", n.Ti, S) / n.k


def _final(n: _Nodes) -> np.ndarray:
    g, k, th = n.g, n.k, n.theta
    Ti, p, psi11 = n.Ti, n.p, n.psi11
    lth1 = n.th1 / th
    divTi = sum(fd_angular(Ti[d], g, d) for d in range(k))
    Gtr = np.einsum("dcd...->c...", n.G)
    lhs = (n.psi01_1
           - 0.5 * (0.5 * n.chi + lth1) * n.psi01
           + 0.5 * th * n.chi1
           - 1.5 * th * np.einsum("cd...,d...,c...->...", Ti, p, n.dth)
           + 0.5 * th * np.einsum("c...,c...->...", divTi, n.dth)
           + 0.5 * th * np.einsum("cd...,cd...->...", Ti, n.ddth)
           - 0.75 * np.einsum("cb...,b...,c...->...", Ti, p, p)
           + 0.25 * np.einsum("cb...,b...,c...->...", Ti, n.dth, n.dth)
           - 0.25 * n.chi * psi11
           + 0.5 * th * np.einsum("cb...,c...,b...->...", Ti, Gtr, n.dth)
           - 0.5 * lth1 * psi11
           - 0.125 * n.tr() * psi11
           + 0.5 * n.psi11_1
           - psi11**2 / (2.0 * th)
           - 0.25 * th * np.einsum("ab...,ab...->...", Ti, n.psi_1)
           - psi11 * n.th1 / (2.0 * th)
           - np.einsum("ad...,d...,a...->...", Ti, p, p)
           + 0.5 * th * np.einsum("ac...,bd...,ab...,cd...->...", Ti, Ti, n.T1, n.psi))
    R = n.M / th
    rhs = (0.5 * th * (n.u**2 - 2.0 * n.S["S_final"])
           - 0.5 * th**2 * (R + 2.0 * np.einsum("ab...,ab...->...", Ti, n.Tab) / k))
    return lhs - rhs


def _curvature_trace(n: _Nodes) -> tuple[np.ndarray, np.ndarray]:
    """The literal curvature-trace formula and its suspect term.

    The suspect term carries a free index ``c`` with no derivative to
    contract it; it is summed over ``c`` as written.
    """
    th = n.theta
    parts = _trace_momentum_lhs_parts(n)
    suspect = -0.5 * np.einsum("ab...,cd...,abd...->...", n.Ti, n.Ti, 2.0 * n.dT) \
        + 0.5 * np.einsum("ab...,cd...,dab...->...", n.Ti, n.Ti, n.dT)
    literal = (parts["transport"] + parts["div_psi1"] + parts["psi1_christoffel"]
               + parts["hess_lntheta"] + parts["d_logdet"] + parts["quadratic"]
               + parts["GG"] + parts["contracted"]) / th + suspect
    return literal, suspect


# -- public API --------------------------------------------------------------------

def _check_bundle(bundle):
    needed = ("Theta", "theta", "phi", "psi11", "psi1a", "chi", "u", "psi_ab", "psi01")
    missing = [f for f in needed if getattr(bundle, f, None) is None]
    if missing:
        raise IncompleteBundleError(f"bundle lacks fields: {', '.join(missing)}")


def _nodes(bundle, free, Q, quad):
    _check_bundle(bundle)
    free = free if free is not None else bundle.free
    if quad is None and not free.f.is_zero:
        quad = MomentumQuadrature.for_profile(free.f, Q)
    return _Nodes(bundle, free, quad)


def eval_constraint_residual(bundle, which: str, free: SurfaceFreeData | None = None, Q: int = 24,
                             quad: MomentumQuadrature | None = None, _n: _Nodes | None = None):
    """Residual field and norms of one constraint on a solved bundle.

    ``which`` is one of ``hamiltonian`` (Hamiltonian), ``momentum`` (generator-angular
    momentum), ``trace_momentum`` (trace momentum), ``traceless`` (traceless, trace-free
    symmetric part) and ``final`` (last constraint).
    """
    n = _n if _n is not None else _nodes(bundle, free, Q, quad)
    if which == "hamiltonian":
        r = _hamiltonian(n)
    elif which == "momentum":
        r = _momentum(n)
    elif which == "trace_momentum":
        r = _trace_momentum(n)
    elif which == "traceless":
        r = _stf(_traceless_full(n), n)
    elif which == "final":
        r = _final(n)
    else:
        raise ValueError(f"unknown constraint {which!r}; expected one of {CONSTRAINTS}")
    return r, norms(r)


def cross_check_curvature_trace(bundle, free: SurfaceFreeData | None = None, Q: int = 24,
                    quad: MomentumQuadrature | None = None, _n: _Nodes | None = None) -> dict:
    """Literal curvature-trace formula versus the matter-side value ``M / theta``.

    Reports the discrepancy without deciding which is right.
    """
    n = _n if _n is not None else _nodes(bundle, free, Q, quad)
    literal, suspect = _curvature_trace(n)
    gap = literal - n.M / n.theta
    return {"discrepancy": gap, "suspect_term": suspect, "norms": norms(gap),
            "suspect_norms": norms(suspect)}


def verify_bundle(bundle, free: SurfaceFreeData | None = None, Q: int = 24,
                  tolerances: dict[str, float] | None = None) -> ResidualReport:
    n = _nodes(bundle, free, Q, None)
    tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    fields, nrm, passed = {}, {}, {}
    for c in CONSTRAINTS:
        r, nm = eval_constraint_residual(bundle, c, _n=n)
        fields[c] = r
        if c == "momentum":
            nm["components"] = {f"a={a + 2}": norms(r[a]) for a in range(n.k)}
        if c == "traceless":
            nm["components"] = {f"ab={a + 2}{b + 2}": norms(r[a, b])
                                for a in range(n.k) for b in range(a, n.k)}
        nrm[c] = nm
        passed[c] = bool(np.isfinite(nm["max"]) and nm["max"] <= tol[c])

    closure = np.einsum("ab...,ab...->...", n.Ti, n.psi) - n.chi
    rel = np.abs(closure) / (1.0 + np.abs(n.chi))
    E = _traceless_full(n)
    curvature_trace = cross_check_curvature_trace(bundle, _n=n)
    diagnostics = {
        "trace_closure": norms(rel),
        "traceless_trace": norms(np.einsum("ab...,ab...->...", n.Ti, 0.5 * (E + np.swapaxes(E, 0, 1)))),
        "traceless_antisymmetric": norms(0.5 * (E - np.swapaxes(E, 0, 1))),
        "curvature_trace_gap": curvature_trace["norms"],
        "curvature_trace_suspect": curvature_trace["suspect_norms"],
    }
    passed["trace_closure"] = diagnostics["trace_closure"]["max"] <= TRACE_CLOSURE_TOL
    return ResidualReport(fields, nrm, diagnostics, tol, passed)


@dataclass
class ConvergenceFit:
    h: list[float]
    norms: list[float]
    order: float | None
    saturated: bool = False
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"h": self.h, "norms": self.norms,
                "order": "saturated" if self.saturated else self.order}


def estimate_convergence(h: list[float], values: list[float],
                         floor: float = SATURATION_FLOOR) -> ConvergenceFit:
    """Least-squares slope of ``log(norm)`` against ``log(h)``.

    Norms at or below ``floor`` on every level are reported as saturated.
    """
    if len(h) < 3 or len(values) != len(h):
        raise ValueError(f"convergence estimate needs at least 3 refinement levels, got {len(h)}")
    h = [float(x) for x in h]
    values = [float(v) for v in values]
    if max(values) <= floor:
        return ConvergenceFit(h, values, None, saturated=True)
    slope = np.polyfit(np.log(h), np.log(np.maximum(values, 1e-300)), 1)[0]
    return ConvergenceFit(h, values, float(slope))


__all__ = [
    "CONSTRAINTS", "ConvergenceFit", "DEFAULT_TOLERANCES", "IncompleteBundleError",
    "ResidualReport", "cross_check_curvature_trace", "estimate_convergence", "eval_constraint_residual",
    "norms", "verify_bundle",
]
