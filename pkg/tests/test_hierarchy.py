import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from charinit.freedata import DensityProfile, FreeDataError, GammaProfile
from charinit.geometry import SurfaceId, build_surface_grid
from charinit.hierarchy import (STAGES, StageError, make_workspace, march, refine, solve_both,
                                solve_chi, solve_psi11, solve_psi1a, solve_surface, solve_u)
from charinit.kinetic import MomentumQuadrature, eval_source_integral
from charinit.residuals import verify_bundle

from conftest import exp_vacuum

HERE = Path(__file__).resolve().parent


def _closed_form_errors(bundle, lam):
    s = bundle.grid.generator_coords()[:, None, None]
    psi = bundle.psi_ab.full()
    return {
        "psi11": np.max(np.abs(bundle.psi11.values + lam / 2)),
        "psi1a": np.max(np.abs(bundle.psi1a.components)),
        "chi": np.max(np.abs(bundle.chi.values - 2 * lam * np.exp(1.5 * lam * s))),
        "psi22": np.max(np.abs(psi[0, 0] - lam * np.exp(lam * s / 2))),
        "psi33": np.max(np.abs(psi[1, 1] - lam * np.exp(lam * s / 2))),
        "psi23": np.max(np.abs(psi[0, 1])),
        "u": np.max(np.abs(bundle.u.values)),
    }


@pytest.mark.parametrize("lam", [1.0, -1.0])
def test_exponential_vacuum_closed_form(lam):
    # expanding (lam = 1) and contracting (lam = -1) pulled-back metric on I0
    b = solve_surface(exp_vacuum(lam), build_surface_grid(1.0, 65, 5))
    err = _closed_form_errors(b, lam)
    assert err["psi11"] <= 1e-12 and err["psi1a"] <= 1e-12 and err["u"] == 0.0
    assert err["chi"] <= 1e-8
    assert max(err["psi22"], err["psi33"]) <= 1e-7 and err["psi23"] <= 1e-12


@pytest.mark.parametrize("lam", [1.0, -1.0])
def test_psi01_matches_ode_oracle(lam):
    # homogeneous vacuum reduces the last constraint to
    # d psi01 = (lam/2) e^{1.5 lam s} psi01 - (lam^2/8)(1 + e^{1.5 lam s}), psi01(0) = 0
    g = build_surface_grid(1.0, 65, 5)
    b = solve_surface(exp_vacuum(lam), g)
    s = g.generator_coords()
    ref = solve_ivp(lambda t, y: 0.5 * lam * np.exp(1.5 * lam * t) * y
                    - lam**2 / 8 * (1 + np.exp(1.5 * lam * t)),
                    (0.0, 1.0), [0.0], t_eval=s, rtol=1e-13, atol=1e-15).y[0]
    assert np.max(np.abs(b.psi01.values[:, 2, 2] - ref)) <= 1e-8


def test_psi01_self_refinement():
    vals = {}
    for N in (17, 33, 129):
        b = solve_surface(exp_vacuum(), build_surface_grid(1.0, N, 5))
        vals[N] = b.psi01.values[::(N - 1) // 16, 0, 0]
    e17 = np.max(np.abs(vals[17] - vals[129]))
    e33 = np.max(np.abs(vals[33] - vals[129]))
    assert 12.0 <= e17 / e33 <= 20.0


def test_rk4_and_euler_convergence_rates():
    def chi_error(N, method):
        g = build_surface_grid(1.0, N, 5)
        b = solve_surface(exp_vacuum(), g, method=method)
        s = g.generator_coords()[:, None, None]
        return np.max(np.abs(b.chi.values - 2 * np.exp(1.5 * s)))

    rk = [chi_error(N, "rk4") for N in (17, 33)]
    eu = [chi_error(N, "euler") for N in (17, 33, 65)]
    assert 12.0 <= rk[0] / rk[1] <= 20.0
    orders = np.log2(np.array(eu[:-1]) / np.array(eu[1:]))
    assert np.all(np.abs(orders - 1.0) < 0.1)


def test_march_integrates_linear_ode():
    nodes, dense = march(lambda j, y: -2.0 * y, np.array([1.0]), 17, 1 / 16, "rk4", 2)
    t = np.linspace(0, 1, 17)
    assert np.max(np.abs(nodes[:, 0] - np.exp(-2 * t))) < 1e-7
    assert dense.shape[0] == 4 * 16 + 1
    np.testing.assert_array_equal(dense[::4], nodes)
    with pytest.raises(ValueError):
        march(lambda j, y: y, np.array([1.0]), 5, 0.1, "leapfrog", 1)


def test_refine_reproduces_cubics():
    x = np.linspace(0, 1, 9)
    fine = refine(x**3, 0, 4)
    xf = np.linspace(0, 1, 33)
    np.testing.assert_allclose(fine, xf**3, atol=1e-14)


def test_u_equation_derivation():
    # symbolic check: the restricted wave operator of the adapted metric equals
    # (2/theta) d1 u + A u + B with the coefficients used by solve_u
    out = subprocess.run([sys.executable, str(HERE / "symbolic_u_check.py")], capture_output=True,
                         text=True, timeout=300)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip().splitlines()[-1] == "0"
    assert "psi01 present: False" in out.stdout


def test_u_ignores_later_storage(corpus_spec):
    g = build_surface_grid(1.0, 17, 8)
    sf = corpus_spec.surface(SurfaceId.I0)
    quad = MomentumQuadrature.for_profile(sf.f, 8)
    results = []
    for noisy in (False, True):
        ws = make_workspace(sf, g, quad)
        if noisy:
            rng = np.random.default_rng(11)
            ws.fields["psi01"] = rng.normal(size=ws.fields["psi01"].shape) * 1e3
            ws.fields["psi_ab"] = rng.normal(size=ws.fields["psi_ab"].shape)
        solve_psi11(ws)
        solve_psi1a(ws)
        solve_chi(ws)
        results.append(solve_u(ws).copy())
    np.testing.assert_array_equal(results[0], results[1])


def test_stage_log_follows_pipeline_order(vacuum_I0):
    assert [e["stage"] for e in vacuum_I0.stage_log] == list(STAGES)
    assert all(e["status"] == "ok" for e in vacuum_I0.stage_log)


def test_mirror_bundles_agree(corpus_spec):
    g = build_surface_grid(1.0, 17, 8)
    direct = solve_both(corpus_spec, g, Q=12)[SurfaceId.I0]
    mirror = solve_both(corpus_spec.reflected(), g, Q=12)[SurfaceId.I1]
    for name, f in direct.scalar_fields().items():
        np.testing.assert_allclose(getattr(mirror, name).values, f.values, rtol=0, atol=1e-12)
    for name, t in direct.tensor_fields().items():
        np.testing.assert_allclose(getattr(mirror, name).components, t.components, rtol=0, atol=1e-12)


def test_corner_conditions_exact(corpus_bundles, corpus_spec):
    gam = corpus_spec.gamma
    for sid, sign in ((SurfaceId.I0, 1.0), (SurfaceId.I1, -1.0)):
        b = corpus_bundles[sid]
        g = b.grid
        dgam = gam.evaluate([0.0], g, 1)[:, :, 0]
        np.testing.assert_allclose(b.psi_ab.full()[:, :, 0], sign * dgam, rtol=0, atol=1e-15)
        assert np.all(b.psi1a.components[:, 0] == 0.0)
        sf = b.free
        np.testing.assert_array_equal(b.psi01.values[0], sf.other_theta.evaluate([0.0], g, 1)[0])
        np.testing.assert_array_equal(b.u.values[0], sf.other_phi.evaluate([0.0], g, 1)[0])


def test_hamiltonian_source_superposition():
    # with phi = 0 the only matter term in psi11 is -2 S_ham / Theta^ab d1 Theta_ab
    f = DensityProfile(0.05, (0.6, -0.5, -0.5), (1.5, 0.5, 0.6), gen_lo=0.3, gen_hi=0.9)
    vac = replace(exp_vacuum(), mass=1.0)
    kin = replace(vac, f_I0=f, f_I1=f, c0=0.5, c1=0.5)
    g = build_surface_grid(1.0, 17, 5)
    shift = solve_surface(kin, g).psi11.values - solve_surface(vac, g).psi11.values
    quad = MomentumQuadrature.for_profile(f, 24)
    s = g.generator_coords()
    sp = f.spatial_factor(s, g)
    for j in (3, 8, 12, 16):
        S = eval_source_integral("S_ham", f, -0.5, np.exp(-s[j]) * np.eye(2), 1.0, quad,
                                 spatial=sp[j, 0, 0])
        tr = -2.0
        assert shift[j, 0, 0] == pytest.approx(-2.0 * S / tr, rel=1e-12, abs=1e-15)
    assert np.all(shift[s <= 0.3] == 0.0) and shift.max() > 0


def test_focusing_data_truncates_domain():
    spec = replace(exp_vacuum(), gamma=GammaProfile(3.0))
    b = solve_surface(spec, build_surface_grid(10.0, 65, 5))
    assert b.truncated_at is not None and 5 <= b.truncated_at < 65
    assert b.grid.N_gen == b.truncated_at
    for f in list(b.scalar_fields().values()):
        assert np.all(np.isfinite(f.values)) and np.max(np.abs(f.values)) <= 1e12
    cut = [e for e in b.stage_log if e["status"] == "truncated"]
    assert cut and all("at node" in e["reason"] for e in cut)
    assert [e["n_keep"] for e in cut] == sorted((e["n_keep"] for e in cut), reverse=True)


def test_immediate_blow_up_is_a_stage_error():
    spec = replace(exp_vacuum(), gamma=GammaProfile(3.0))
    with pytest.raises(StageError) as exc:
        solve_surface(spec, build_surface_grid(100.0, 65, 5))
    assert exc.value.stage in STAGES and exc.value.node is not None


def test_invalid_free_data_rejected_before_solving():
    spec = replace(exp_vacuum(), theta_I0=replace(exp_vacuum().theta_I0, constant=0.5),
                   theta_I1=replace(exp_vacuum().theta_I1, constant=0.5))
    with pytest.raises(FreeDataError, match="theta_sign"):
        solve_both(spec, build_surface_grid(1.0, 9, 5))


def test_four_dimensional_angular_sections():
    from charinit.config import load_config
    cfg = load_config(HERE.parent / "configs" / "n4.toml")
    spec = cfg.free_data()
    norms = []
    for N in (9, 17):
        bundles = solve_both(spec, cfg.make_grid(N, 6), Q=6)
        for b in bundles.values():
            assert b.psi_ab.components.shape == (6, N, 6, 6, 6)
            for f in b.scalar_fields().values():
                assert np.all(np.isfinite(f.values))
            rep = verify_bundle(b, Q=6)
            assert rep.diagnostics["trace_closure"]["max"] <= 1e-10
            assert rep.norms["hamiltonian"]["max"] <= 1e-8
        norms.append(verify_bundle(bundles[SurfaceId.I1], Q=6).norms["trace_momentum"]["max"])
    assert norms[0] / norms[1] > 8.0
