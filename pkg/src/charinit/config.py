"""Run configuration: a strict TOML schema mapped onto free data and grids.

Unknown keys anywhere in the file are rejected. Physical admissibility
(signs, supports, corner compatibility) is not checked here; that is the
job of :meth:`FreeDataSpec.validate`.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .freedata import (DensityProfile, FreeDataSpec, GammaProfile, MetricMode, Potential,
                       ScalarProfile, TrigMode)
from .geometry import CharSurfaceGrid, SurfaceId, build_surface_grid
from .residuals import DEFAULT_TOLERANCES, TRACE_CLOSURE_TOL


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TrigModeCfg(_Strict):
    amp: float
    k: list[int]
    phase: float = 0.0
    power: int = Field(0, ge=0)
    rate: float = 0.0


class ScalarCfg(_Strict):
    constant: float
    modes: list[TrigModeCfg] = []

    def build(self) -> ScalarProfile:
        return ScalarProfile(self.constant, tuple(
            TrigMode(m.amp, tuple(m.k), m.phase, m.power, m.rate) for m in self.modes))


class MetricModeCfg(_Strict):
    a: int = Field(ge=0)
    b: int = Field(ge=0)
    amp: float
    k: list[int]
    omega: float = 0.0
    phase: float = 0.0


class GammaCfg(_Strict):
    rate: float
    modes: list[MetricModeCfg] = []

    def build(self) -> GammaProfile:
        return GammaProfile(self.rate, tuple(
            MetricMode(m.a, m.b, m.amp, tuple(m.k), m.omega, m.phase) for m in self.modes))


class DensityCfg(_Strict):
    amplitude: float = 0.0
    p_lo: list[float] = []
    p_hi: list[float] = []
    gen_lo: float = 0.25
    gen_hi: float = 2.0
    collar: float = 0.1
    power: int = Field(4, ge=1)
    ang_amp: float = 0.0
    ang_k: list[int] = []
    ang_phase: float = 0.0

    def build(self, n: int) -> DensityProfile:
        p_lo = tuple(self.p_lo) if self.p_lo else (1.0,) + (0.0,) * (n - 1)
        p_hi = tuple(self.p_hi) if self.p_hi else (2.0,) + (1.0,) * (n - 1)
        return DensityProfile(self.amplitude, p_lo, p_hi, self.gen_lo, self.gen_hi, self.collar,
                              self.power, self.ang_amp, tuple(self.ang_k), self.ang_phase)


class PotentialCfg(_Strict):
    kind: Literal["zero", "quadratic", "quartic"] = "zero"
    param: float = 0.0


class FreeCfg(_Strict):
    gamma: GammaCfg
    theta_I0: ScalarCfg
    theta_I1: ScalarCfg
    phi_I0: ScalarCfg = ScalarCfg(constant=0.0)
    phi_I1: ScalarCfg = ScalarCfg(constant=0.0)
    f_I0: DensityCfg = DensityCfg()
    f_I1: DensityCfg = DensityCfg()
    mass: float = Field(0.0, ge=0.0)
    potential: PotentialCfg = PotentialCfg()
    c0: float = 0.1
    c1: float = 0.1
    c2: float = 0.1
    c2_prime: float = 0.1
    expansion_floor: float = Field(1e-6, gt=0.0)


class GridCfg(_Strict):
    n: int = Field(3, ge=3)
    L: float = Field(1.0, gt=0.0)
    N_gen: int = Field(65, ge=5)
    N_ang: int = Field(16, ge=5)
    angular_extent: float | list[float] = 1.0
    ladder: list[tuple[int, int]] = []

    @field_validator("ladder")
    @classmethod
    def _ladder_sizes(cls, v):
        for N_gen, N_ang in v:
            if N_gen < 5 or N_ang < 5:
                raise ValueError("ladder resolutions must be at least 5 nodes per axis")
        return v


class QuadCfg(_Strict):
    Q: int = Field(24, ge=1)


class TolCfg(_Strict):
    hamiltonian: float = DEFAULT_TOLERANCES["hamiltonian"]
    momentum: float = DEFAULT_TOLERANCES["momentum"]
    trace_momentum: float = DEFAULT_TOLERANCES["trace_momentum"]
    traceless: float = DEFAULT_TOLERANCES["traceless"]
    final: float = DEFAULT_TOLERANCES["final"]
    trace_closure: float = TRACE_CLOSURE_TOL
    min_order: float = 3.0


class PerturbCfg(_Strict):
    """Seeded random angular modes added to theta and phi on both surfaces.

    Every mode carries a factor ``s**power`` with ``power >= 1`` so the
    corner values, and with them corner compatibility, are untouched.
    """

    count: int = Field(0, ge=0)
    amplitude: float = Field(1e-3, ge=0.0)
    max_k: int = Field(2, ge=1)
    power: int = Field(1, ge=1)


class RunCfg(_Strict):
    name: str = "run"
    seed: int = 0
    integrator: Literal["rk4", "euler"] = "rk4"


class RunConfig(_Strict):
    run: RunCfg = RunCfg()
    grid: GridCfg = GridCfg()
    quadrature: QuadCfg = QuadCfg()
    tolerances: TolCfg = TolCfg()
    perturbation: PerturbCfg = PerturbCfg()
    free: FreeCfg

    # -- derived objects ---------------------------------------------------------

    def free_data(self) -> FreeDataSpec:
        f = self.free
        n = self.grid.n
        profiles = {name: getattr(f, name).build() for name in
                    ("theta_I0", "theta_I1", "phi_I0", "phi_I1")}
        if self.perturbation.count:
            profiles = _perturb(profiles, self.perturbation, self.run.seed, n - 1)
        return FreeDataSpec(
            gamma=f.gamma.build(), f_I0=f.f_I0.build(n), f_I1=f.f_I1.build(n),
            mass=f.mass, potential=Potential(f.potential.kind, f.potential.param),
            c0=f.c0, c1=f.c1, c2=f.c2, c2_prime=f.c2_prime, expansion_floor=f.expansion_floor,
            **profiles)

    def make_grid(self, N_gen: int | None = None, N_ang: int | None = None,
                  surface_id: SurfaceId = SurfaceId.I0) -> CharSurfaceGrid:
        g = self.grid
        ext = g.angular_extent if isinstance(g.angular_extent, float) else tuple(g.angular_extent)
        return build_surface_grid(g.L, N_gen or g.N_gen, N_ang or g.N_ang, g.n, surface_id, ext)

    def tolerance_map(self) -> dict[str, float]:
        return self.tolerances.model_dump()

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def content_hash(self) -> str:
        return sha256_json(self.canonical())


def _perturb(profiles: dict, cfg: PerturbCfg, seed: int, k: int) -> dict:
    rng = np.random.default_rng(seed)
    out = {}
    for name in sorted(profiles):
        prof = profiles[name]
        extra = []
        for _ in range(cfg.count):
            kv = tuple(int(x) for x in rng.integers(-cfg.max_k, cfg.max_k + 1, size=k))
            extra.append(TrigMode(float(cfg.amplitude * rng.uniform(-1, 1)), kv,
                                  float(rng.uniform(0, 2 * np.pi)), cfg.power, 0.0))
        out[name] = ScalarProfile(prof.constant, prof.modes + tuple(extra))
    return out


def sha256_json(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    """Parse and schema-check a TOML config (raises OSError, TOMLDecodeError, ValidationError)."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return RunConfig.model_validate(data)


def config_from_dict(data: dict) -> RunConfig:
    return RunConfig.model_validate(data)


__all__ = ["RunConfig", "config_from_dict", "load_config", "sha256_json", "tomllib"]
