"""Parametric free data and its validation.

Every profile evaluates analytically in the generator coordinate (value and
first two derivatives) on an arbitrary set of generator stations, and is
sampled on the periodic angular lattice of a grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (AngularTensorField, CharSurfaceGrid, MetricError, SurfaceId,
                       is_positive_definite, sym_pairs)

TWO_PI = 2.0 * np.pi
CORNER_TOL = 1e-12


class FreeDataError(ValueError):
    """Free data violate one or more admissibility conditions."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(f"[{v.code}] {v.message}" for v in violations))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def _phase_field(k_vec, ang_mesh, extent):
    arg = 0.0
    for kk, y, P in zip(k_vec, ang_mesh, extent):
        arg = arg + TWO_PI * kk * y / P
    return arg


def _powexp(s, power, rate, deriv):
    """d^deriv/ds^deriv of s**power * exp(rate * s)."""
    e = np.exp(rate * s)
    terms = {0: [(1.0, power)],
             1: [(power, power - 1), (rate, power)],
             2: [(power * (power - 1), power - 2), (2.0 * power * rate, power - 1),
                 (rate * rate, power)]}[deriv]
    out = np.zeros_like(s, dtype=float)
    for coef, p in terms:
        if coef != 0.0:
            out = out + coef * s**p
    return out * e


@dataclass(frozen=True)
class TrigMode:
    """``amp * s**power * exp(rate*s) * cos(2 pi k.y/P + phase)``."""

    amp: float
    k: tuple[int, ...]
    phase: float = 0.0
    power: int = 0
    rate: float = 0.0


@dataclass(frozen=True)
class ScalarProfile:
    constant: float
    modes: tuple[TrigMode, ...] = ()

    def evaluate(self, s: np.ndarray, grid: CharSurfaceGrid, deriv: int = 0) -> np.ndarray:
        """Samples on ``s`` (1-D) times the angular lattice of ``grid``."""
        s = np.asarray(s, dtype=float).reshape((-1,) + (1,) * grid.k)
        mesh = grid.angular_mesh()
        out = np.full(s.shape[:1] + grid.angular_shape, self.constant if deriv == 0 else 0.0)
        for mode in self.modes:
            ang = np.cos(_phase_field(mode.k, mesh, grid.angular_extent) + mode.phase)
            out = out + mode.amp * _powexp(s, mode.power, mode.rate, deriv) * ang
        return out


@dataclass(frozen=True)
class MetricMode:
    """Perturbation of the (a, b) and (b, a) entries of the angular metric.

    Contributes ``amp * cos(2 pi k.y/P + omega * x1 + phase)``; ``a``, ``b``
    count angular axes from 0.
    """

    a: int
    b: int
    amp: float
    k: tuple[int, ...]
    omega: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class GammaProfile:
    """``gamma_ab(x1, y) = exp(rate x1) (delta_ab + sum of MetricMode terms)``."""

    rate: float
    modes: tuple[MetricMode, ...] = ()

    def evaluate(self, x1: np.ndarray, grid: CharSurfaceGrid, deriv: int = 0) -> np.ndarray:
        k = grid.k
        x1 = np.asarray(x1, dtype=float).reshape((-1,) + (1,) * k)
        mesh = grid.angular_mesh()
        shape = x1.shape[:1] + grid.angular_shape
        # P and its x1-derivatives, then Leibniz with exp(rate x1)
        P = [np.zeros((k, k) + shape) for _ in range(3)]
        for a in range(k):
            P[0][a, a] = 1.0
        for m in self.modes:
            arg = _phase_field(m.k, mesh, grid.angular_extent) + m.omega * x1 + m.phase
            vals = (m.amp * np.cos(arg), -m.amp * m.omega * np.sin(arg),
                    -m.amp * m.omega**2 * np.cos(arg))
            for d in range(3):
                P[d][m.a, m.b] += vals[d]
                if m.a != m.b:
                    P[d][m.b, m.a] += vals[d]
        e = np.exp(self.rate * x1)
        r = self.rate
        if deriv == 0:
            return e * P[0]
        if deriv == 1:
            return e * (r * P[0] + P[1])
        return e * (r * r * P[0] + 2 * r * P[1] + P[2])

    def mirrored(self) -> "GammaProfile":
        """The profile of ``x1 -> gamma(-x1)``."""
        return GammaProfile(-self.rate, tuple(replace(m, omega=-m.omega) for m in self.modes))


def cos_bump(t: np.ndarray, lo: float, hi: float, power: int, deriv: int = 0) -> np.ndarray:
    """``cos(pi s / 2)**(2 power)`` on ``[lo, hi]`` (s in [-1, 1]), zero outside."""
    t = np.asarray(t, dtype=float)
    half = 0.5 * (hi - lo)
    s = (t - 0.5 * (lo + hi)) / half
    inside = np.abs(s) < 1.0
    c = np.cos(0.5 * np.pi * s)
    n = 2 * power
    if deriv == 0:
        val = c**n
    elif deriv == 1:
        val = -n * c**(n - 1) * np.sin(0.5 * np.pi * s) * (0.5 * np.pi / half)
    else:
        sn = np.sin(0.5 * np.pi * s)
        val = (n * (n - 1) * c**(n - 2) * sn**2 - n * c**n) * (0.5 * np.pi / half) ** 2
    return np.where(inside, val, 0.0)


@dataclass(frozen=True)
class DensityProfile:
    """Tensor-product phase-space density on one surface.

    ``f = amplitude * B(s; gen_lo, gen_hi) * H(y) * prod_i B(p_i; p_lo[i], p_hi[i])``
    with ``B`` a cos-power bump and ``H = 1 + ang_amp cos(2 pi k.y/P + phase)``.
    Momentum axis 0 is the generator-direction component (p^1 on I0, p^0 on
    I1), axes 1..n-1 the angular components p^a.
    """

    amplitude: float
    p_lo: tuple[float, ...]
    p_hi: tuple[float, ...]
    gen_lo: float = 0.25
    gen_hi: float = 2.0
    collar: float = 0.1
    power: int = 4
    ang_amp: float = 0.0
    ang_k: tuple[int, ...] = ()
    ang_phase: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def spatial_factor(self, s: np.ndarray, grid: CharSurfaceGrid) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape((-1,) + (1,) * grid.k)
        out = self.amplitude * cos_bump(s, self.gen_lo, self.gen_hi, self.power)
        if self.ang_amp:
            arg = _phase_field(self.ang_k, grid.angular_mesh(), grid.angular_extent)
            out = out * (1.0 + self.ang_amp * np.cos(arg + self.ang_phase))
        return np.broadcast_to(out, s.shape[:1] + grid.angular_shape).copy()

    def momentum_factor(self, axis: int, p: np.ndarray) -> np.ndarray:
        return cos_bump(p, self.p_lo[axis], self.p_hi[axis], self.power)


@dataclass(frozen=True)
class Potential:
    kind: str = "zero"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "quadratic", "quartic"):
            raise ValueError(f"unknown potential family {self.kind!r}")

    def V(self, phi):
        if self.kind == "quadratic":
            return 0.5 * self.param * phi**2
        if self.kind == "quartic":
            return 0.25 * self.param * phi**4
        return np.zeros_like(phi)

    def dV(self, phi):
        if self.kind == "quadratic":
            return self.param * phi
        if self.kind == "quartic":
            return self.param * phi**3
        return np.zeros_like(phi)


@dataclass(frozen=True)
class SurfaceFreeData:
    """The free data seen from one surface, plus what its corner needs from the other."""

    surface_id: SurfaceId
    metric: GammaProfile      # Theta(s, y) on this surface
    theta: ScalarProfile
    phi: ScalarProfile
    f: DensityProfile
    other_metric: GammaProfile  # transverse dependence, for corner psi_ab
    other_theta: ScalarProfile
    other_phi: ScalarProfile
    mass: float
    potential: Potential


@dataclass(frozen=True)
class FreeDataSpec:
    gamma: GammaProfile
    theta_I0: ScalarProfile
    theta_I1: ScalarProfile
    phi_I0: ScalarProfile
    phi_I1: ScalarProfile
    f_I0: DensityProfile
    f_I1: DensityProfile
    mass: float = 0.0
    potential: Potential = field(default_factory=Potential)
    c0: float = 0.1
    c1: float = 0.1
    c2: float = 0.1
    c2_prime: float = 0.1
    expansion_floor: float = 1e-6

    def surface(self, sid: SurfaceId | str) -> SurfaceFreeData:
        """On I0, Theta(y1) = gamma(-y1); on I1, Theta(y0) = gamma(y0)."""
        sid = SurfaceId(sid)
        if sid is SurfaceId.I0:
            return SurfaceFreeData(sid, self.gamma.mirrored(), self.theta_I0, self.phi_I0, self.f_I0,
                                   self.gamma, self.theta_I1, self.phi_I1, self.mass, self.potential)
        return SurfaceFreeData(sid, self.gamma, self.theta_I1, self.phi_I1, self.f_I1,
                               self.gamma.mirrored(), self.theta_I0, self.phi_I0, self.mass,
                               self.potential)

    def reflected(self) -> "FreeDataSpec":
        """Image under the swap y0 <-> y1 (x1 -> -x1)."""
        return replace(self, gamma=self.gamma.mirrored(),
                       theta_I0=self.theta_I1, theta_I1=self.theta_I0,
                       phi_I0=self.phi_I1, phi_I1=self.phi_I0,
                       f_I0=self.f_I1, f_I1=self.f_I0,
                       c0=self.c1, c1=self.c0, c2=self.c2_prime, c2_prime=self.c2)

    # -- validation ----------------------------------------------------------

    def violations(self, grid: CharSurfaceGrid) -> list[Violation]:
        """All admissibility failures, sampled on ``grid`` and its mirror."""
        out: list[Violation] = []
        s = grid.generator_coords()
        k = grid.k

        for sid, prof in ((SurfaceId.I0, self.theta_I0), (SurfaceId.I1, self.theta_I1)):
            th = prof.evaluate(s, grid)
            if not np.all(th < 0):
                out.append(Violation(
                    "theta_sign",
                    f"theta < 0 required everywhere on {sid.value} (max sampled {th.max():.6g})"))
                break

        x1 = np.concatenate([-s[::-1], s[1:]])
        g = self.gamma.evaluate(x1, grid)
        if not is_positive_definite(g).all():
            out.append(Violation("gamma_not_spd",
                                 "gamma_ab must be symmetric positive definite at every sampled point"))
        else:
            g1 = self.gamma.evaluate(x1, grid, deriv=1)
            gm = np.moveaxis(np.moveaxis(g, 0, -1), 0, -1)
            inv = np.moveaxis(np.moveaxis(np.linalg.inv(gm), -1, 0), -1, 0)
            expansion = np.abs(np.einsum("ab...,ab...->...", inv, g1))
            if expansion.min() <= self.expansion_floor:
                out.append(Violation(
                    "expansion_degenerate",
                    f"|gamma^ab d gamma_ab/dx1| must exceed {self.expansion_floor:g} "
                    f"(min sampled {expansion.min():.3e})"))

        out.extend(self._density_violations(k))

        corner = {"theta": (self.theta_I0, self.theta_I1), "phi": (self.phi_I0, self.phi_I1)}
        for name, (p0, p1) in corner.items():
            d = np.abs(p0.evaluate([0.0], grid) - p1.evaluate([0.0], grid)).max()
            if d > CORNER_TOL:
                out.append(Violation(
                    "corner_compatibility",
                    f"{name} and its I1 counterpart must agree on the corner S (max mismatch {d:.3e})"))
        return out

    def _density_violations(self, k: int) -> list[Violation]:
        out = []
        checks = ((SurfaceId.I0, self.f_I0, self.c1, self.c2_prime, "p1", "c1", "c2'"),
                  (SurfaceId.I1, self.f_I1, self.c0, self.c2, "p0", "c0", "c2"))
        for sid, f, c_gen, c_ang, pname, cname, c2name in checks:
            if f.is_zero:
                continue
            if len(f.p_lo) != k + 1 or len(f.p_hi) != k + 1:
                out.append(Violation("f_support_shape",
                                     f"f on {sid.value} needs a {k + 1}-dimensional momentum box"))
                continue
            if f.amplitude < 0 or abs(f.ang_amp) > 1:
                out.append(Violation("f_negative", f"f on {sid.value} must be non negative"))
            if not (c_gen > 0 and f.p_lo[0] > c_gen):
                out.append(Violation(
                    "f_support_generator_momentum",
                    f"support of f on {sid.value} must be contained in {{{pname} > {cname} > 0}} "
                    f"(box starts at {pname}={f.p_lo[0]:g}, {cname}={c_gen:g})"))
            if self.mass == 0:
                # squared distance from the angular momentum box to the origin
                lo = np.array(f.p_lo[1:])
                hi = np.array(f.p_hi[1:])
                nearest = np.clip(0.0, lo, hi)
                dist2 = float(np.sum(nearest**2))
                if not (c_ang > 0 and dist2 > c_ang):
                    out.append(Violation(
                        "f_massless_angular_support",
                        f"massless f on {sid.value} must be supported in {{sum_a (p^a)^2 > {c2name} > 0}} "
                        f"(box reaches {dist2:g})"))
            if not (f.collar > 0 and f.gen_lo >= f.collar):
                out.append(Violation(
                    "f_corner_collar",
                    f"f on {sid.value} must vanish on a collar around the corner S "
                    f"(support starts at {f.gen_lo:g}, collar {f.collar:g})"))
        return out

    def validate(self, grid: CharSurfaceGrid) -> None:
        v = self.violations(grid)
        if v:
            raise FreeDataError(v)


def pullback_free_metric(free: FreeDataSpec, grid: CharSurfaceGrid):
    """Theta_ab on the nodes of ``grid``: gamma(-y1) on I0, gamma(y0) on I1."""
    sf = free.surface(grid.surface_id)
    full = sf.metric.evaluate(grid.generator_coords(), grid)
    if not is_positive_definite(full).all():
        raise MetricError(f"pulled-back metric on {grid.surface_id.value} is not positive definite")
    return AngularTensorField.from_full(grid, full)


__all__ = [
    "DensityProfile", "FreeDataError", "FreeDataSpec", "GammaProfile", "MetricMode", "Potential",
    "ScalarProfile", "SurfaceFreeData", "TrigMode", "Violation", "cos_bump", "pullback_free_metric",
    "sym_pairs",
]
