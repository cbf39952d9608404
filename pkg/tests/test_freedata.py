from dataclasses import replace

import numpy as np
import pytest

from charinit.freedata import (DensityProfile, FreeDataError, Potential, ScalarProfile, TrigMode,
                               cos_bump)
from charinit.geometry import SurfaceId, build_surface_grid

from conftest import exp_vacuum, single_violations, valid_kinetic_spec

GRID = build_surface_grid(1.0, 17, 8)


def test_valid_spec_has_no_violations():
    assert valid_kinetic_spec().violations(GRID) == []
    valid_kinetic_spec().validate(GRID)


@pytest.mark.parametrize("code", sorted(single_violations()))
def test_each_violation_reported_alone(code):
    spec = single_violations()[code]
    found = spec.violations(GRID)
    assert [v.code for v in found] == [code]
    with pytest.raises(FreeDataError, match=code) as exc:
        spec.validate(GRID)
    assert exc.value.violations == found


def test_violation_messages_name_the_condition():
    v = single_violations()
    assert "theta < 0" in v["theta_sign"].violations(GRID)[0].message
    assert "contained in {p1 > c1 > 0}" in v["f_support_generator_momentum"].violations(GRID)[0].message
    assert "c2" in v["f_massless_angular_support"].violations(GRID)[0].message
    assert "collar" in v["f_corner_collar"].violations(GRID)[0].message


def test_massive_data_skip_angular_support_condition():
    spec = replace(single_violations()["f_massless_angular_support"], mass=1.0)
    assert spec.violations(GRID) == []


def test_several_violations_all_reported():
    spec = replace(single_violations()["theta_sign"], theta_I1=ScalarProfile(-0.4))
    codes = {v.code for v in spec.violations(GRID)}
    assert codes == {"theta_sign", "corner_compatibility"}


def test_density_box_dimension_checked():
    spec = replace(valid_kinetic_spec(), f_I0=DensityProfile(0.1, (0.5, 0.5), (1.0, 1.0)))
    assert [v.code for v in spec.violations(GRID)] == ["f_support_shape"]


def test_cos_bump_support_and_derivatives():
    t = np.linspace(-0.5, 1.5, 2001)
    b = cos_bump(t, 0.0, 1.0, 4)
    assert np.all(b[(t <= 0) | (t >= 1)] == 0.0)
    assert b.max() == pytest.approx(1.0)
    h = t[1] - t[0]
    for d in (1, 2):
        fd = np.gradient(cos_bump(t, 0.0, 1.0, 4, d - 1), h)
        assert np.max(np.abs(fd - cos_bump(t, 0.0, 1.0, 4, d))[5:-5]) < 1e-3 * np.abs(fd).max()


def test_density_vanishes_on_collar():
    f = valid_kinetic_spec().f_I0
    s = GRID.generator_coords()
    vals = f.spatial_factor(s, GRID)
    assert np.all(vals[s < f.gen_lo] == 0.0)
    assert vals.max() > 0


def test_scalar_profile_derivatives():
    prof = ScalarProfile(0.3, (TrigMode(0.2, (1,), 0.5, 2, 0.7),))
    s = np.linspace(0, 1, 401)
    v = [prof.evaluate(s, GRID, d)[:, 3, 3] for d in range(3)]
    h = s[1] - s[0]
    for d in (1, 2):
        assert np.max(np.abs(np.gradient(v[d - 1], h) - v[d])[2:-2]) < 1e-4


def test_potential_families():
    phi = np.array([0.0, 0.5, -1.0])
    np.testing.assert_allclose(Potential("quadratic", 2.0).V(phi), phi**2)
    np.testing.assert_allclose(Potential("quartic", 4.0).dV(phi), 4 * phi**3)
    assert np.all(Potential().V(phi) == 0.0)
    with pytest.raises(ValueError):
        Potential("cosine")


def test_surface_views_and_reflection():
    spec = valid_kinetic_spec()
    i0, i1 = spec.surface(SurfaceId.I0), spec.surface("I1")
    assert i0.theta is spec.theta_I0 and i0.other_theta is spec.theta_I1
    assert i1.f is spec.f_I1 and i1.metric == spec.gamma
    r = spec.reflected()
    assert r.surface("I1").theta is spec.theta_I0
    assert r.c1 == spec.c0 and r.c2 == spec.c2_prime
    assert r.reflected() == spec


def test_vacuum_corner_compatible():
    assert exp_vacuum().violations(GRID) == []
