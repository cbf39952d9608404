"""Ordered resolution of the null-surface constraints.

On each surface the unknowns are obtained in a fixed order, every stage
reading only what earlier stages produced::

    Theta -> psi11 -> psi1a -> chi -> u -> psi_ab -> psi01

``psi11`` is algebraic; the other stages are linear ODEs along the
generators, integrated with classical RK4 from the corner. Coefficients
are tabulated on a refined generator grid holding every node and every
midpoint of the RK4 substeps. Free-data coefficients (and ``psi11``,
which depends on free data only) are evaluated exactly there; earlier ODE
stages supply their dense output (substep values plus cubic Hermite
midpoints).

The second surface runs the identical pipeline on its own free data, so
"generator" means ``y1`` on I0 and ``y0`` on I1 throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .freedata import DensityProfile, FreeDataSpec, SurfaceFreeData, pullback_free_metric
from .geometry import (AngularTensorField, CharSurfaceGrid, MetricError, ScalarField, SurfaceId,
                       angular_gradient, angular_hessian, christoffel_angular, fd_angular,
                       fd_generator, invert_angular_metric, metric_derivatives, sym_pairs)
from .kinetic import MomentumQuadrature, assemble_T_ab, matter_scalar_rhs, source_integrals

OVERFLOW_CAP = 1e12
STAGES = ("pullback", "psi11", "psi1a", "chi", "u", "psi_ab", "psi01")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and offending node."""

    def __init__(self, stage: str, message: str, node: tuple | None = None):
        self.stage = stage
        self.node = node
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"stage {stage} failed{where}: {message}")


class _Overflow(Exception):
    def __init__(self, step: int, node: tuple, finite: bool):
        self.step = step
        self.node = node
        self.finite = finite


# -- refined-grid helpers ------------------------------------------------------

SUBSTEPS = 2        # RK4 steps per grid interval
REFINE = 2 * SUBSTEPS


def fine_grid(grid: CharSurfaceGrid, r: int = REFINE) -> CharSurfaceGrid:
    return CharSurfaceGrid(grid.surface_id, grid.n, grid.L, r * (grid.N_gen - 1) + 1, grid.N_ang,
                           grid.angular_extent, grid.fd_order)


def _lagrange4(x: float) -> np.ndarray:
    """Cubic Lagrange weights on nodes 0..3 at position ``x``."""
    nodes = np.arange(4.0)
    w = np.ones(4)
    for i in range(4):
        for m in range(4):
            if m != i:
                w[i] *= (x - nodes[m]) / (nodes[i] - nodes[m])
    return w


def refine(values: np.ndarray, axis: int, r: int = REFINE) -> np.ndarray:
    """Node values plus ``r - 1`` cubic interpolants inside every interval."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    N = v.shape[0]
    if N < 4:
        raise ValueError("cubic interpolation needs at least 4 nodes")
    out = np.empty((r * (N - 1) + 1,) + v.shape[1:])
    out[0::r] = v
    for q in range(1, r):
        t = q / r
        w = _lagrange4(1.0 + t)
        out[r + q:r * (N - 2):r] = (w[0] * v[0:N - 3] + w[1] * v[1:N - 2]
                                    + w[2] * v[2:N - 1] + w[3] * v[3:N])
        w = _lagrange4(t)
        out[q] = w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]
        w = _lagrange4(2.0 + t)
        out[r * (N - 2) + q] = w[0] * v[N - 4] + w[1] * v[N - 3] + w[2] * v[N - 2] + w[3] * v[N - 1]
    return np.moveaxis(out, 0, axis)


def _gen_axis(arr: np.ndarray, k: int) -> int:
    return arr.ndim - k - 1


# -- marching ------------------------------------------------------------------

def march(rhs: Callable[[int, np.ndarray], np.ndarray], y0: np.ndarray, n_nodes: int, h: float,
          method: str = "rk4", substeps: int = SUBSTEPS) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``y' = rhs(j, y)`` over ``n_nodes`` nodes.

    ``j`` indexes the refined grid with ``2 * substeps`` stations per grid
    interval, node ``i`` sitting at ``j = 2 * substeps * i``. Returns
    ``(nodes, dense)`` with the generator axis first: the node values and
    the solution on every refined station. Substep midpoints in ``dense``
    come from cubic Hermite interpolation of the end values and slopes.
    ``method="euler"`` is a first-order debug integrator.
    """
    r = 2 * substeps
    dense = np.empty((r * (n_nodes - 1) + 1,) + np.shape(y0))
    y = np.array(y0, dtype=float)
    dense[0] = y
    dt = h / substeps
    f0 = rhs(0, y)
    for i in range(n_nodes - 1):
        for q in range(substeps):
            j = 2 * (substeps * i + q)
            if method == "rk4":
                k2 = rhs(j + 1, y + 0.5 * dt * f0)
                k3 = rhs(j + 1, y + 0.5 * dt * k2)
                k4 = rhs(j + 2, y + dt * k3)
                y_new = y + (dt / 6.0) * (f0 + 2.0 * k2 + 2.0 * k3 + k4)
            elif method == "euler":
                y_new = y + dt * f0
            else:
                raise ValueError(f"unknown integrator {method!r}")
            finite = np.isfinite(y_new)
            bad = ~finite | (np.abs(y_new) > OVERFLOW_CAP)
            if bad.any():
                raise _Overflow(i + 1, tuple(int(x) for x in np.argwhere(bad)[0]),
                                bool(finite.all()))
            f1 = rhs(j + 2, y_new)
            if method == "rk4":
                dense[j + 1] = 0.5 * (y + y_new) + 0.125 * dt * (f0 - f1)
            else:
                dense[j + 1] = 0.5 * (y + y_new)
            dense[j + 2] = y_new
            y, f0 = y_new, f1
    return dense[0::r].copy(), dense


# -- coefficient tables --------------------------------------------------------

@dataclass
class Coefficients:
    """Free-data coefficients on the refined generator grid.

    Index conventions: ``T[a, b]`` is Theta_ab, ``Ti`` its inverse,
    ``T1``/``T2`` its first and second generator derivatives, ``dT[c, a, b]``
    the angular derivative d_c Theta_ab and ``G[c, a, b]`` the angular
    Christoffel symbols.
    """

    grid: CharSurfaceGrid       # the refined grid
    s: np.ndarray
    arrays: dict[str, np.ndarray]

    def __getattr__(self, name):
        try:
            return self.__dict__["arrays"][name]
        except KeyError:
            raise AttributeError(name) from None

    def truncated(self, n_keep_nodes: int) -> "Coefficients":
        m = REFINE * (n_keep_nodes - 1) + 1
        k = self.grid.k
        arrays = {}
        for key, arr in self.arrays.items():
            ax = _gen_axis(arr, k)
            arrays[key] = np.take(arr, np.arange(m), axis=ax)
        g = CharSurfaceGrid(self.grid.surface_id, self.grid.n, self.s[m - 1], m, self.grid.N_ang,
                            self.grid.angular_extent, self.grid.fd_order)
        return Coefficients(g, self.s[:m], arrays)


def tabulate_coefficients(sf: SurfaceFreeData, grid: CharSurfaceGrid,
                          quad: MomentumQuadrature | None) -> Coefficients:
    fg = fine_grid(grid)
    s = fg.generator_coords()
    k = grid.k
    T = sf.metric.evaluate(s, fg)
    T1 = sf.metric.evaluate(s, fg, 1)
    T2 = sf.metric.evaluate(s, fg, 2)
    Ti, det = invert_angular_metric(T)
    dT = metric_derivatives(T, fg)
    G = christoffel_angular(Ti, dT)

    th = sf.theta.evaluate(s, fg)
    th1 = sf.theta.evaluate(s, fg, 1)
    th2 = sf.theta.evaluate(s, fg, 2)
    phi = sf.phi.evaluate(s, fg)
    phi1 = sf.phi.evaluate(s, fg, 1)
    lth = np.log(np.abs(th))

    Ti1 = -np.einsum("ac...,cd...,db...->ab...", Ti, T1, Ti)
    W = np.einsum("cb...,ba...->ca...", Ti, T1)
    Y = np.einsum("de...,cde...->c...", Ti, dT)
    X = np.einsum("cd...,abd...->cab...", Ti, 2.0 * dT) - np.einsum("cd...,dab...->cab...", Ti, dT)
    arr = dict(
        T=T, T1=T1, T2=T2, Ti=Ti, Ti1=Ti1, det=det, dT=dT, G=G,
        tr=np.einsum("ab...,ab...->...", Ti, T1),
        dtr=np.einsum("ab...,ab...->...", Ti1, T1) + np.einsum("ab...,ab...->...", Ti, T2),
        W=W, Y=Y,
        dY=np.stack([angular_gradient(Y[a], fg) for a in range(k)], axis=1),   # dY[b, a] = d_b Y_a
        divX=sum(fd_angular(X[c], fg, c) for c in range(k)),
        divG=sum(fd_angular(G[c], fg, c) for c in range(k)),
        divW=sum(fd_angular(W[c], fg, c) for c in range(k)),
        dTT=angular_gradient(np.einsum("cd...,cd...->...", Ti, T), fg),
        divTi=sum(fd_angular(Ti[d], fg, d) for d in range(k)),
        GG=np.einsum("dac...,cdb...->ab...", G, G),
        Gtr=np.einsum("ddc...->c...", G),
        Gcon=np.einsum("ab...,cab...->c...", Ti, G),
        th=th, th1=th1, th2=th2,
        dth=angular_gradient(th, fg), dth1=angular_gradient(th1, fg), ddth=angular_hessian(th, fg),
        dlth=angular_gradient(lth, fg), ddlth=angular_hessian(lth, fg),
        phi=phi, phi1=phi1, dphi=angular_gradient(phi, fg), ddphi=angular_hessian(phi, fg),
        V=sf.potential.V(phi), dV=sf.potential.dV(phi),
    )
    spatial = sf.f.spatial_factor(s, fg)
    S = source_integrals(sf.f, spatial, th, T, det, sf.mass, quad or _dummy_quad(k))
    arr.update(S)
    arr["M"] = matter_scalar_rhs(arr["dphi"], Ti, arr["V"], S["S_tr"])
    return Coefficients(fg, s, arr)


def _dummy_quad(k: int) -> MomentumQuadrature:
    one = np.array([1.0])
    return MomentumQuadrature((one,) * (k + 1), (one,) * (k + 1))


# -- workspace and bundle ------------------------------------------------------

@dataclass
class Workspace:
    """Mutable state of one surface solve.

    ``fields`` holds node arrays (components first, then generator and
    angular axes). Storage for every unknown is allocated up front, so a
    stage that reached for a later unknown would read garbage instead of
    failing loudly; the ordering tests rely on this.
    """

    sf: SurfaceFreeData
    grid: CharSurfaceGrid
    coef: Coefficients
    quad: MomentumQuadrature | None
    method: str = "rk4"
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    fine: dict[str, np.ndarray] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)
    truncated_at: int | None = None

    def allocate(self):
        k, shape = self.grid.k, self.grid.shape
        for name, comp in (("psi11", ()), ("psi1a", (k,)), ("chi", ()), ("u", ()),
                           ("psi_ab", (k, k)), ("psi01", ())):
            self.fields.setdefault(name, np.zeros(comp + shape))

    def truncate(self, n_keep: int):
        self.grid = self.grid.truncated(n_keep)
        self.coef = self.coef.truncated(n_keep)
        k = self.grid.k
        for store, m in ((self.fields, n_keep), (self.fine, REFINE * (n_keep - 1) + 1)):
            for key, arr in store.items():
                store[key] = np.take(arr, np.arange(m), axis=_gen_axis(arr, k))
        self.truncated_at = n_keep

    def refined(self, name: str) -> np.ndarray:
        """A field on the refined grid: dense solver output, else cubic interpolation."""
        if name not in self.fine:
            arr = self.fields[name]
            self.fine[name] = refine(arr, _gen_axis(arr, self.grid.k))
        return self.fine[name]


@dataclass
class SolvedInitialData:
    """All constraint-determined data on one surface, at the grid nodes."""

    surface_id: SurfaceId
    grid: CharSurfaceGrid
    Theta: AngularTensorField
    theta: ScalarField
    phi: ScalarField
    psi11: ScalarField
    psi1a: AngularTensorField
    chi: ScalarField
    u: ScalarField
    psi_ab: AngularTensorField
    psi01: ScalarField
    free: SurfaceFreeData
    stage_log: list[dict] = field(default_factory=list)
    truncated_at: int | None = None
    config_hash: str | None = None

    def scalar_fields(self) -> dict[str, ScalarField]:
        return {"theta": self.theta, "phi": self.phi, "psi11": self.psi11, "chi": self.chi,
                "u": self.u, "psi01": self.psi01}

    def tensor_fields(self) -> dict[str, AngularTensorField]:
        return {"Theta": self.Theta, "psi1a": self.psi1a, "psi_ab": self.psi_ab}


# -- stages --------------------------------------------------------------------

def _run_ode(ws: Workspace, rhs, y0):
    return march(rhs, y0, ws.grid.N_gen, ws.grid.h_gen, ws.method)


def psi11_formula(c: Coefficients) -> np.ndarray:
    """psi11 from the Hamiltonian constraint, on the refined grid."""
    WW = np.einsum("cd...,dc...->...", c.W, c.W)
    num = (4.0 * c.phi1**2 - 2.0 * c.S_ham - 2.0 * c.th * c.dtr - c.th * WW
           + 2.0 * c.th1 * c.tr)
    return num / c.tr


def solve_psi11(ws: Workspace, floor: float = 1e-6) -> np.ndarray:
    c = ws.coef
    small = np.abs(c.tr) < floor
    if small.any():
        j = tuple(int(x) for x in np.argwhere(small)[0])
        raise StageError("psi11", f"expansion |Theta^ab d1 Theta_ab| below floor {floor:g}",
                         (j[0] / REFINE,) + j[1:])
    fine = psi11_formula(c)
    ws.fine["psi11"] = fine
    ws.fine["psi11_1"] = fd_generator(fine, c.grid)
    ws.fine["dpsi11"] = angular_gradient(fine, c.grid)
    ws.fields["psi11"] = fine[0::REFINE].copy()
    return ws.fields["psi11"]


def psi1a_rhs(c: Coefficients, j: int, p: np.ndarray, psi11: np.ndarray, dpsi11: np.ndarray):
    th, th1 = c.th[j], c.th1[j]
    Ti, T1, dT = c.Ti[:, :, j], c.T1[:, :, j], c.dT[:, :, :, j]
    W, dth = c.W[:, :, j], c.dth[:, j]
    Ti_dth = np.einsum("bc...,c...->b...", Ti, dth)
    last = np.einsum("de...,cb...,db...,aec...->a...", Ti, Ti, T1, dT)
    last = (last + np.einsum("de...,cb...,db...,cea...->a...", Ti, Ti, T1, dT)
            - np.einsum("de...,cb...,db...,eac...->a...", Ti, Ti, T1, dT))
    rest = ((psi11 + th * c.tr[j] - th1) / (2.0 * th) * p
            + psi11 * dth / (2.0 * th)
            + np.einsum("ba...,b...->a...", W, dth)
            - 1.5 * th1 * dth / th
            + c.dth1[:, j]
            - th * c.divW[:, j]
            + 0.5 * c.dTT[:, j]
            - th**2 * dpsi11
            - np.einsum("b...,ba...->a...", Ti_dth, T1)
            - 0.5 * th * np.einsum("cb...,ba...,c...->a...", Ti, T1, c.Y[:, j])
            + 0.5 * th * last)
    rhs = 2.0 * th * (c.phi1[j] * c.dphi[:, j] + c.S_mom[:, j])
    return rhs - rest


def solve_psi1a(ws: Workspace) -> np.ndarray:
    c = ws.coef
    psi11, dpsi11 = ws.fine["psi11"], ws.fine["dpsi11"]
    y0 = np.zeros((c.grid.k,) + ws.grid.angular_shape)
    out, dense = _run_ode(ws, lambda j, p: psi1a_rhs(c, j, p, psi11[j], dpsi11[:, j]), y0)
    ws.fields["psi1a"] = np.moveaxis(out, 0, 1).copy()
    ws.fine["psi1a"] = np.moveaxis(dense, 0, 1).copy()
    return ws.fields["psi1a"]


def chi_rhs(c: Coefficients, j: int, chi, psi11, p, dp):
    """d1 chi from the trace momentum constraint; ``dp[a, b] = d_a psi_1b``."""
    th = c.th[j]
    Ti, dT, G = c.Ti[:, :, j], c.dT[:, :, :, j], c.G[:, :, :, j]
    lower = (2.0 * np.einsum("cd...,ab...,acb...->d...", Ti, Ti, dT)
             - np.einsum("cd...,ab...,cab...->d...", Ti, Ti, dT))
    rest = (0.5 * (c.tr[j] - psi11 / th) * chi
            - np.einsum("ab...,ab...->...", Ti, dp)
            + 0.5 * np.einsum("d...,d...->...", lower, p)
            + th * np.einsum("ab...,ab...->...", Ti, c.ddlth[:, :, j])
            + 0.5 * th * np.einsum("ab...,ba...->...", Ti, c.dY[:, :, j])
            - 0.5 * th * np.einsum("ab...,ab...->...", Ti, c.divX[:, :, j])
            + np.einsum("ab...,a...,b...->...", Ti, p, p) / (2.0 * th)
            + np.einsum("ab...,a...,b...->...", Ti, c.dth[:, j], c.dth[:, j]) / (2.0 * th)
            + th * np.einsum("ab...,ab...->...", Ti, c.GG[:, :, j])
            - th * np.einsum("c...,c...->...", c.dlth[:, j] + c.Gtr[:, j], c.Gcon[:, j]))
    return c.M[j] - rest


def solve_chi(ws: Workspace) -> np.ndarray:
    c = ws.coef
    psi11 = ws.fine["psi11"]
    p = ws.refined("psi1a")
    dp = np.stack([angular_gradient(p[b], c.grid) for b in range(c.grid.k)], axis=1)
    ws.fine["dpsi1a"] = dp
    psi_ab0 = ws.sf.other_metric.evaluate([0.0], ws.grid, 1)[:, :, 0]
    chi0 = np.einsum("ab...,ab...->...", c.Ti[:, :, 0], psi_ab0)
    out, dense = _run_ode(ws, lambda j, y: chi_rhs(c, j, y, psi11[j], p[:, j], dp[:, :, j]), chi0)
    ws.fields["chi"] = out
    ws.fine["chi"] = dense
    return out


def u_coefficients(c: Coefficients, j: int, psi11, p, chi):
    """``(A, B)`` of the restricted wave equation ``(2/theta) d1 u + A u + B = 0``."""
    th = c.th[j]
    Ti = c.Ti[:, :, j]
    A = -(psi11 / th - 0.5 * c.tr[j]) / th
    Gamma = (np.einsum("cd...,d...->c...", Ti, p - c.dth[:, j]) / th + c.Gcon[:, j])
    B = (np.einsum("ab...,ab...->...", Ti, c.ddphi[:, :, j])
         + chi * c.phi1[j] / (2.0 * th)
         - np.einsum("c...,c...->...", Gamma, c.dphi[:, j])
         - c.dV[j])
    return A, B


def solve_u(ws: Workspace) -> np.ndarray:
    """Transverse scalar derivative from the wave equation restricted to the surface.

    Reads Theta, theta, phi, V, psi11, psi1a and chi only.
    """
    c = ws.coef
    psi11, p, chi = ws.fine["psi11"], ws.refined("psi1a"), ws.refined("chi")

    def rhs(j, y):
        A, B = u_coefficients(c, j, psi11[j], p[:, j], chi[j])
        return -0.5 * c.th[j] * (A * y + B)

    u0 = ws.sf.other_phi.evaluate([0.0], ws.grid, 1)[0]
    ws.fields["u"], ws.fine["u"] = _run_ode(ws, rhs, u0)
    return ws.fields["u"]


def traceless_forcing(c: Coefficients, j: int, psi, psi11, p, dp, chi, u):
    """Symmetrized part of every term of the traceless constraint except d1 psi_ab."""
    th, k = c.th[j], c.grid.k
    Ti, T, T1 = c.Ti[:, :, j], c.T[:, :, j], c.T1[:, :, j]
    dT, G, W = c.dT[:, :, :, j], c.G[:, :, :, j], c.W[:, :, j]
    F = (0.5 * (-psi11 / th + c.tr[j]) * psi
         - (np.einsum("ca...,cb...->ab...", W, psi) + np.einsum("db...,ad...->ab...", W, psi))
         / (2.0 * th)
         - th * c.divG[:, :, j]
         + 0.5 * np.einsum("cd...,d...,cab...->ab...", Ti, p,
                           np.einsum("bca...->cab...", dT) + np.einsum("acb...->cab...", dT)
                           - np.einsum("cba...->cab...", dT))
         - 0.5 * (np.swapaxes(dp, 0, 1) - dp)     # dp[x, y] = d_x psi_1y
         + th * c.ddlth[:, :, j]
         + 0.5 * th * np.swapaxes(c.dY[:, :, j], 0, 1)
         + np.einsum("a...,b...->ab...", p, 2.0 * p - c.dth[:, j]) / (4.0 * th)
         + c.GG[:, :, j]
         + 0.5 * th * T1 * chi
         - th * np.einsum("c...,cab...->ab...", c.dlth[:, j] + c.Gtr[:, j], G))
    Tab = assemble_T_ab(c.dphi[:, j], c.phi1[j], u, th, T, Ti, c.V[j], c.S_ab[:, :, j])
    R = c.M[j] / th
    trT = np.einsum("cd...,cd...->...", Ti, Tab)
    F = F - ((R - trT) / (k) * T + Tab)
    return 0.5 * (F + np.swapaxes(F, 0, 1))


def psi_ab_rate(c: Coefficients, j: int, psi, psi11, p, dp, chi, dchi, u):
    """d1 psi_ab: traceless part fixed by the constraint, trace fixed by chi."""
    k = c.grid.k
    F = traceless_forcing(c, j, psi, psi11, p, dp, chi, u)
    Ti = c.Ti[:, :, j]
    tau = dchi - np.einsum("ab...,ab...->...", c.Ti1[:, :, j], psi)
    lam = (tau + np.einsum("ab...,ab...->...", Ti, F)) / k
    return -F + c.T[:, :, j] * lam


def close_trace(psi: np.ndarray, Ti: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """Set psi_22 so that Theta^ab psi_ab = chi."""
    k = psi.shape[0]
    rest = np.zeros_like(chi)
    for a in range(k):
        for b in range(k):
            if (a, b) != (0, 0):
                rest = rest + Ti[a, b] * psi[a, b]
    psi = psi.copy()
    psi[0, 0] = (chi - rest) / Ti[0, 0]
    return psi


def solve_psi_ab(ws: Workspace) -> np.ndarray:
    c = ws.coef
    k = c.grid.k
    pairs = [pq for pq in sym_pairs(k) if pq != (0, 0)]
    psi11, p, dp = ws.fine["psi11"], ws.refined("psi1a"), ws.fine["dpsi1a"]
    chi, u = ws.refined("chi"), ws.refined("u")
    dchi = np.stack([chi_rhs(c, j, chi[j], psi11[j], p[:, j], dp[:, :, j])
                     for j in range(c.grid.N_gen)])
    ws.fine["chi_1"] = dchi
    if np.any(np.abs(c.Ti[0, 0]) < 1e-14):
        raise StageError("psi_ab", "Theta^22 below floor; trace closure impossible")

    def unpack(j, y):
        psi = np.zeros((k, k) + y.shape[1:])
        for m, (a, b) in enumerate(pairs):
            psi[a, b] = psi[b, a] = y[m]
        return close_trace(psi, c.Ti[:, :, j], chi[j])

    def rhs(j, y):
        psi = unpack(j, y)
        D = psi_ab_rate(c, j, psi, psi11[j], p[:, j], dp[:, :, j], chi[j], dchi[j], u[j])
        return np.stack([D[a, b] for a, b in pairs])

    corner = ws.sf.other_metric.evaluate([0.0], ws.grid, 1)[:, :, 0]
    y0 = np.stack([corner[a, b] for a, b in pairs])
    _, dense = _run_ode(ws, rhs, y0)
    fine = np.stack([unpack(j, dense[j]) for j in range(c.grid.N_gen)], axis=2)
    fine[:, :, 0] = corner          # exact corner data, closure reproduces it to round-off
    ws.fine["psi_ab"] = fine
    full = fine[:, :, 0::REFINE].copy()
    ws.fields["psi_ab"] = full
    return full


def psi01_coefficients(c: Coefficients, j: int, psi11, psi11_1, p, chi, dchi, psi, dpsi, u):
    """``(a, b)`` with ``d1 psi01 = a psi01 + b`` from the last constraint."""
    th, th1, k = c.th[j], c.th1[j], c.grid.k
    Ti, T, T1 = c.Ti[:, :, j], c.T[:, :, j], c.T1[:, :, j]
    dth = c.dth[:, j]
    lth1 = th1 / th
    a = 0.5 * (0.5 * chi + lth1)
    rest = (0.5 * th * dchi
            - 1.5 * th * np.einsum("cd...,d...,c...->...", Ti, p, dth)
            + 0.5 * th * np.einsum("c...,c...->...", c.divTi[:, j], dth)
            + 0.5 * th * np.einsum("cd...,cd...->...", Ti, c.ddth[:, :, j])
            - 0.75 * np.einsum("cb...,b...,c...->...", Ti, p, p)
            + 0.25 * np.einsum("cb...,b...,c...->...", Ti, dth, dth)
            - 0.25 * chi * psi11
            + 0.5 * th * np.einsum("cb...,c...,b...->...", Ti, c.Gtr[:, j], dth)
            - 0.5 * lth1 * psi11
            - 0.125 * c.tr[j] * psi11
            + 0.5 * psi11_1
            - psi11**2 / (2.0 * th)
            - 0.25 * th * np.einsum("ab...,ab...->...", Ti, dpsi)
            - psi11 * th1 / (2.0 * th)
            - np.einsum("ad...,d...,a...->...", Ti, p, p)
            + 0.5 * th * np.einsum("ac...,bd...,ab...,cd...->...", Ti, Ti, T1, psi))
    Tab = assemble_T_ab(c.dphi[:, j], c.phi1[j], u, th, T, Ti, c.V[j], c.S_ab[:, :, j])
    R = c.M[j] / th
    rhs = (0.5 * th * (u**2 - 2.0 * c.S_final[j])
           - 0.5 * th**2 * (R + 2.0 * np.einsum("ab...,ab...->...", Ti, Tab) / k))
    return a, rhs - rest


def solve_psi01(ws: Workspace) -> np.ndarray:
    c = ws.coef
    psi11, psi11_1 = ws.fine["psi11"], ws.fine["psi11_1"]
    p, dp = ws.refined("psi1a"), ws.fine["dpsi1a"]
    chi, dchi, u = ws.refined("chi"), ws.fine["chi_1"], ws.refined("u")
    psi = ws.refined("psi_ab")
    dpsi = np.stack([psi_ab_rate(c, j, psi[:, :, j], psi11[j], p[:, j], dp[:, :, j], chi[j],
                                 dchi[j], u[j]) for j in range(c.grid.N_gen)], axis=2)
    ws.fine["psi_ab_1"] = dpsi

    def rhs(j, y):
        a, b = psi01_coefficients(c, j, psi11[j], psi11_1[j], p[:, j], chi[j], dchi[j],
                                  psi[:, :, j], dpsi[:, :, j], u[j])
        return a * y + b

    y0 = ws.sf.other_theta.evaluate([0.0], ws.grid, 1)[0]
    ws.fields["psi01"], ws.fine["psi01"] = _run_ode(ws, rhs, y0)
    return ws.fields["psi01"]


# -- drivers -------------------------------------------------------------------

def make_workspace(sf: SurfaceFreeData, grid: CharSurfaceGrid, quad: MomentumQuadrature | None,
                   method: str = "rk4") -> Workspace:
    try:
        coef = tabulate_coefficients(sf, grid, quad)
    except MetricError as e:
        raise StageError("pullback", str(e)) from None
    ws = Workspace(sf, grid, coef, quad, method)
    ws.allocate()
    return ws


MIN_NODES = 5


def run_stage(ws: Workspace, name: str, fn: Callable[[], np.ndarray]) -> np.ndarray:
    """Run one stage, truncating the domain if marching breaches the cap.

    A finite breach of ``OVERFLOW_CAP`` keeps the healthy prefix of the
    generator (all stored fields are cut consistently) and reruns the
    stage there. Non-finite values, or fewer than ``MIN_NODES`` healthy
    nodes, abort with :class:`StageError`.
    """
    t0 = time.perf_counter()
    while True:
        try:
            out = fn()
            break
        except _Overflow as ov:
            node = (ov.step,) + tuple(ov.node[-ws.grid.k:])
            if not ov.finite:
                raise StageError(name, "non-finite value while marching", node) from None
            if ov.step < MIN_NODES:
                raise StageError(name, f"|value| above {OVERFLOW_CAP:g} within the first "
                                       f"{MIN_NODES} nodes", node) from None
            ws.truncate(ov.step)
            ws.log.append({"stage": name, "status": "truncated", "n_keep": ov.step,
                           "reason": f"|value| above {OVERFLOW_CAP:g} at node {node}"})
    ws.log.append({"stage": name, "status": "ok", "max_abs": float(np.max(np.abs(out))),
                   "n_gen": ws.grid.N_gen, "wall_time": time.perf_counter() - t0})
    return out


def run_pipeline(ws: Workspace, floor: float = 1e-6) -> Workspace:
    stages = (("psi11", lambda: solve_psi11(ws, floor)), ("psi1a", lambda: solve_psi1a(ws)),
              ("chi", lambda: solve_chi(ws)), ("u", lambda: solve_u(ws)),
              ("psi_ab", lambda: solve_psi_ab(ws)), ("psi01", lambda: solve_psi01(ws)))
    for name, fn in stages:
        run_stage(ws, name, fn)
    return ws


def _bundle(ws: Workspace, Theta: np.ndarray) -> SolvedInitialData:
    g = ws.grid
    f = ws.fields
    s = g.generator_coords()
    return SolvedInitialData(
        surface_id=g.surface_id, grid=g,
        Theta=AngularTensorField.from_full(g, Theta[:, :, :g.N_gen]),
        theta=ScalarField(g, ws.sf.theta.evaluate(s, g)),
        phi=ScalarField(g, ws.sf.phi.evaluate(s, g)),
        psi11=ScalarField(g, f["psi11"]),
        psi1a=AngularTensorField(g, 1, f["psi1a"]),
        chi=ScalarField(g, f["chi"]), u=ScalarField(g, f["u"]),
        psi_ab=AngularTensorField.from_full(g, f["psi_ab"]),
        psi01=ScalarField(g, f["psi01"]),
        free=ws.sf, stage_log=ws.log, truncated_at=ws.truncated_at)


def solve_surface(free: FreeDataSpec, grid: CharSurfaceGrid, Q: int = 24,
                  method: str = "rk4", validate: bool = True) -> SolvedInitialData:
    """Run the full pipeline on one surface of ``free``."""
    if validate:
        free.validate(grid)
    sf = free.surface(grid.surface_id)
    t0 = time.perf_counter()
    try:
        Theta = pullback_free_metric(free, grid).full()
    except MetricError as e:
        raise StageError("pullback", str(e)) from None
    quad = None if sf.f.is_zero else MomentumQuadrature.for_profile(sf.f, Q)
    ws = make_workspace(sf, grid, quad, method)
    ws.log.append({"stage": "pullback", "status": "ok", "max_abs": float(np.max(np.abs(Theta))),
                   "n_gen": grid.N_gen, "wall_time": time.perf_counter() - t0})
    run_pipeline(ws, free.expansion_floor)
    return _bundle(ws, Theta)


def solve_both(free: FreeDataSpec, grid: CharSurfaceGrid, Q: int = 24,
               method: str = "rk4") -> dict[SurfaceId, SolvedInitialData]:
    free.validate(grid)
    out = {}
    for sid in SurfaceId:
        g = CharSurfaceGrid(sid, grid.n, grid.L, grid.N_gen, grid.N_ang, grid.angular_extent,
                            grid.fd_order)
        out[sid] = solve_surface(free, g, Q, method, validate=False)
    return out


__all__ = [
    "Coefficients", "OVERFLOW_CAP", "STAGES", "SolvedInitialData", "StageError", "Workspace",
    "REFINE", "SUBSTEPS", "make_workspace", "march", "psi11_formula", "refine", "run_pipeline",
    "solve_both", "solve_chi", "solve_psi01", "solve_psi11", "solve_psi1a", "solve_psi_ab",
    "solve_surface", "solve_u", "tabulate_coefficients", "u_coefficients",
]
