"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

The lines bypass output capture, so they show in a plain ``pytest`` run too.
Standalone: ``python3 tests/test_acceptance.py``.
"""

import json
import sys
import time

import numpy as np
import pytest

from charinit.cli import main, run_convergence, run_verify
from charinit.config import load_config
from charinit.freedata import DensityProfile
from charinit.geometry import SurfaceId, build_surface_grid
from charinit.hierarchy import (make_workspace, solve_both, solve_chi, solve_psi11, solve_psi1a,
                                solve_surface, solve_u)
from charinit.kinetic import MomentumQuadrature, SourceIntegralKind, eval_source_integral
from charinit.residuals import CONSTRAINTS, verify_bundle

from conftest import CONFIGS, exp_vacuum, single_violations, valid_kinetic_spec


@pytest.fixture
def report(capsys):
    def _report(num: int, title: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\ncriterion {num} {title}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
        assert ok, detail
    return _report


def test_criterion_1_closed_form_vacuum(report):
    t0 = time.perf_counter()
    g = build_surface_grid(1.0, 65, 8)
    b = solve_surface(exp_vacuum(), g)
    elapsed = time.perf_counter() - t0
    s = g.generator_coords()[:, None, None]
    psi = b.psi_ab.full()
    e = {
        "psi11": np.max(np.abs(b.psi11.values + 0.5)),
        "psi1a": np.max(np.abs(b.psi1a.components)),
        "chi": np.max(np.abs(b.chi.values - 2.0 * np.exp(1.5 * s))),
        "psi22": np.max(np.abs(psi[0, 0] - np.exp(s / 2))),
    }
    ok = (e["psi11"] <= 1e-12 and e["psi1a"] <= 1e-12 and e["chi"] <= 1e-8 and e["psi22"] <= 1e-7
          and elapsed < 10.0)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in e.items()) + f", {elapsed:.2f} s"
    report(1, "closed-form vacuum", ok, detail)


def test_criterion_2_corpus_residuals_and_orders(report, tmp_path):
    cfg = load_config(CONFIGS / "corpus.toml")
    bundles = solve_both(cfg.free_data(), cfg.make_grid(), cfg.quadrature.Q)
    worst = {c: 0.0 for c in CONSTRAINTS}
    for b in bundles.values():
        rep = verify_bundle(b, Q=cfg.quadrature.Q)
        for c in CONSTRAINTS:
            worst[c] = max(worst[c], rep.norms[c]["max"])
    t0 = time.perf_counter()
    result, _ = run_convergence(cfg, tmp_path, None)
    elapsed = time.perf_counter() - t0
    orders = [f["order"] for per in result["fits"].values()
              for c, f in per.items() if c != "hamiltonian"]
    min_order = min(o for o in orders if o != "saturated")
    ok = (worst["hamiltonian"] <= 1e-8 and all(worst[c] <= 1e-6 for c in CONSTRAINTS[1:])
          and len(result["ladder"]) >= 3 and min_order >= 3.0 and elapsed < 300.0)
    detail = (", ".join(f"{c} {v:.1e}" for c, v in worst.items())
              + f", min order {min_order:.2f}, ladder {elapsed:.1f} s")
    report(2, "corpus residual suite", ok, detail)


def test_criterion_3_trace_closure(report, corpus_bundles, vacuum_bundles):
    worst = 0.0
    for bundles in (corpus_bundles, vacuum_bundles):
        for b in bundles.values():
            Ti = np.linalg.inv(np.moveaxis(np.moveaxis(b.Theta.full(), 0, -1), 0, -1))
            tr = np.einsum("...ab,ab...->...", Ti, b.psi_ab.full())
            worst = max(worst, float(np.max(np.abs(tr - b.chi.values) / (1 + np.abs(b.chi.values)))))
    report(3, "trace closure", worst <= 1e-10, f"max {worst:.1e}")


def test_criterion_4_pipeline_order(report, corpus_spec):
    g = build_surface_grid(1.0, 17, 8)
    sf = corpus_spec.surface(SurfaceId.I0)
    quad = MomentumQuadrature.for_profile(sf.f, 8)
    us = []
    for seed in (None, 3):
        ws = make_workspace(sf, g, quad)
        if seed is not None:
            ws.fields["psi01"] = np.random.default_rng(seed).normal(size=ws.fields["psi01"].shape)
        solve_psi11(ws)
        solve_psi1a(ws)
        solve_chi(ws)
        us.append(solve_u(ws).copy())
    ok = np.array_equal(us[0], us[1])
    report(4, "pipeline order", ok, "u bit-identical under psi01 noise" if ok else "u changed")


def test_criterion_5_mirror(report, corpus_spec):
    g = build_surface_grid(1.0, 17, 8)
    direct = solve_both(corpus_spec, g, Q=12)
    mirror = solve_both(corpus_spec.reflected(), g, Q=12)
    worst = 0.0
    for a, b in ((SurfaceId.I0, SurfaceId.I1), (SurfaceId.I1, SurfaceId.I0)):
        x, y = direct[a], mirror[b]
        for name, f in x.scalar_fields().items():
            worst = max(worst, float(np.max(np.abs(getattr(y, name).values - f.values))))
        for name, t in x.tensor_fields().items():
            worst = max(worst, float(np.max(np.abs(getattr(y, name).components - t.components))))
    report(5, "mirror", worst <= 1e-12, f"max {worst:.1e}")


def test_criterion_6_kinetic_quadrature(report):
    bump = DensityProfile(0.3, (0.5, -0.6, -0.4), (1.5, 0.5, 0.7), power=4)
    eye = np.eye(2)
    q24, q96 = (MomentumQuadrature.for_profile(bump, Q) for Q in (24, 96))
    rel = 0.0
    for kind in SourceIntegralKind:
        a = np.asarray(eval_source_integral(kind, bump, -0.5, eye, 1.0, q24))
        b = np.asarray(eval_source_integral(kind, bump, -0.5, eye, 1.0, q96))
        rel = max(rel, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    sym = DensityProfile(0.3, (0.5, -0.5, -0.7), (1.5, 0.5, 0.7))
    qs = MomentumQuadrature.for_profile(sym, 24)
    parity = float(np.max(np.abs(eval_source_integral("S_mom", sym, -0.5, eye, 1.0, qs))))
    parity /= abs(eval_source_integral("S_ham", sym, -0.5, eye, 1.0, qs))
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(100):
        lo = np.concatenate([[rng.uniform(0.2, 1.0)], rng.uniform(-1.0, 0.0, 2)])
        f = DensityProfile(float(rng.uniform(0.01, 1.0)), tuple(lo), tuple(lo + rng.uniform(0.3, 1.5, 3)))
        A = rng.normal(size=(2, 2)) * 0.3
        metric = A @ A.T + eye * rng.uniform(0.5, 2.0)
        theta, mass = -float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.0, 2.0))
        quad = MomentumQuadrature.for_profile(f, 6)
        v = {k: eval_source_integral(k, f, theta, metric, mass, quad) for k in ("S_ham", "S_final", "S_tr")}
        scaled = eval_source_integral("S_ham", f, theta, metric, mass, quad, spatial=2.5)
        if not (v["S_ham"] >= 0 and v["S_final"] >= 0 and v["S_tr"] <= 0
                and abs(scaled - 2.5 * v["S_ham"]) <= 1e-12 * abs(scaled)):
            bad += 1
    ok = rel <= 1e-8 and parity <= 1e-12 and bad == 0
    report(6, "kinetic quadrature", ok,
           f"oracle {rel:.1e}, parity {parity:.1e}, {bad}/100 random profiles failed")


def test_criterion_7_validator_completeness(report):
    grid = build_surface_grid(1.0, 17, 8)
    cases = single_violations()
    named = {code: [v.code for v in spec.violations(grid)] == [code] for code, spec in cases.items()}
    valid = valid_kinetic_spec().violations(grid) == []
    ok = len(cases) == 7 and all(named.values()) and valid
    missed = [c for c, hit in named.items() if not hit]
    report(7, "validator completeness", ok,
           f"{sum(named.values())}/7 rejected by name, valid config {'accepted' if valid else 'rejected'}"
           + (f", missed {missed}" if missed else ""))


def test_criterion_8_cli_round_trip(report, tmp_path):
    cfg = CONFIGS / "corpus.toml"
    runs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["solve", "--config", str(cfg), "--out", str(d), "--quiet"]) for d in runs]
    hashes = [json.loads((d / "manifest.json").read_text())["manifest_hash"] for d in runs]
    manifest = json.loads((runs[0] / "manifest.json").read_text())
    summary, _ = run_verify(runs[0])
    gap = 0.0
    for sid, rep in summary.items():
        ref = manifest["surfaces"][sid]["residuals"]["norms"]
        for c in CONSTRAINTS:
            for key in ("max", "rms"):
                gap = max(gap, abs(rep["norms"][c][key] - ref[c][key]) / abs(ref[c][key]))
    ok = codes == [0, 0] and gap <= 1e-14 and hashes[0] == hashes[1]
    report(8, "CLI round trip", ok,
           f"norm gap {gap:.1e}, hashes {'identical' if hashes[0] == hashes[1] else 'differ'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
