"""Shared free data and solved bundles."""

from __future__ import annotations

from pathlib import Path

import pytest

from charinit.config import load_config
from charinit.freedata import DensityProfile, FreeDataSpec, GammaProfile, ScalarProfile
from charinit.geometry import SurfaceId, build_surface_grid
from charinit.hierarchy import solve_both

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def zero_density(n: int = 3) -> DensityProfile:
    return DensityProfile(0.0, (1.0,) + (0.0,) * (n - 1), (2.0,) + (1.0,) * (n - 1))


def exp_vacuum(rate: float = 1.0, n: int = 3) -> FreeDataSpec:
    """gamma_ab = exp(rate x1) delta_ab, theta = -1/2, phi = V = f = 0."""
    z = zero_density(n)
    return FreeDataSpec(GammaProfile(rate), ScalarProfile(-0.5), ScalarProfile(-0.5),
                        ScalarProfile(0.0), ScalarProfile(0.0), z, z)


@pytest.fixture(scope="session")
def corpus_config():
    return load_config(CONFIGS / "corpus.toml")


@pytest.fixture(scope="session")
def corpus_spec(corpus_config):
    return corpus_config.free_data()


@pytest.fixture(scope="session")
def vacuum_bundles():
    grid = build_surface_grid(1.0, 65, 8)
    return solve_both(exp_vacuum(), grid)


@pytest.fixture(scope="session")
def corpus_bundles(corpus_config):
    cfg = corpus_config
    return solve_both(cfg.free_data(), cfg.make_grid(), cfg.quadrature.Q)


@pytest.fixture(scope="session")
def vacuum_I0(vacuum_bundles):
    return vacuum_bundles[SurfaceId.I0]


def valid_kinetic_spec() -> FreeDataSpec:
    """Massless kinetic data satisfying every admissibility condition."""
    from charinit.freedata import MetricMode, TrigMode
    f0 = DensityProfile(0.05, (0.6, 0.5, 0.4), (1.6, 1.0, 0.9), gen_lo=0.25, gen_hi=0.9)
    f1 = DensityProfile(0.05, (0.7, 0.4, 0.5), (1.5, 0.9, 1.0), gen_lo=0.3, gen_hi=0.9)
    return FreeDataSpec(
        GammaProfile(0.8, (MetricMode(0, 1, 0.05, (1,), 0.3),)),
        ScalarProfile(-0.5, (TrigMode(0.05, (1,), 0.0, 1),)), ScalarProfile(-0.5),
        ScalarProfile(0.1), ScalarProfile(0.1, (TrigMode(0.02, (1,), 0.4, 2),)), f0, f1,
        mass=0.0, c0=0.2, c1=0.2, c2=0.1, c2_prime=0.1)


def single_violations() -> dict:
    """``{violation code: spec breaking exactly that condition}``."""
    from dataclasses import replace

    from charinit.freedata import MetricMode, TrigMode
    base = valid_kinetic_spec()
    return {
        "theta_sign": replace(base, theta_I0=ScalarProfile(-0.5, (TrigMode(0.8, (1,), 0.0, 1),))),
        "gamma_not_spd": replace(base, gamma=GammaProfile(0.8, (MetricMode(0, 1, 1.5, (0,)),))),
        "expansion_degenerate": replace(base, gamma=GammaProfile(0.0)),
        "f_support_generator_momentum": replace(base, f_I0=replace(base.f_I0, p_lo=(0.0, 0.5, 0.4))),
        "f_massless_angular_support": replace(base, f_I1=replace(base.f_I1, p_lo=(0.7, -0.4, -0.5))),
        "f_corner_collar": replace(base, f_I0=replace(base.f_I0, gen_lo=0.05)),
        "corner_compatibility": replace(base, theta_I1=ScalarProfile(-0.4)),
    }
