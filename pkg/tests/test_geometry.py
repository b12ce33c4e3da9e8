import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nfcodebook.correlation import correlation
from nfcodebook.geometry import (ArrayConfig, ArrayFamily, PhysicalPosition, UlaPoint,
                                 UpaPoint, beam_focusing, channel, element_coordinates,
                                 exact_distance, exact_distances, far_field_steering,
                                 fresnel_beams, fresnel_distance, from_transform,
                                 phase_basis, region_bounds, to_transform,
                                 transform_features)

LAM = oracles.wavelength()


# ---------------------------------------------------------------------------
# configuration


def test_half_wavelength_defaults():
    cfg = ArrayConfig.ula(512)
    assert cfg.wavelength_m == pytest.approx(LAM, rel=1e-15)
    assert cfg.spacing_m == pytest.approx(LAM / 2, rel=1e-15)
    assert cfg.half_wavelength_ratio == pytest.approx(1.0, rel=1e-15)
    assert cfg.aperture == pytest.approx(511 * LAM / 2)
    assert cfg.total_elements == 512
    assert ArrayConfig.upa(16).total_elements == 256


@pytest.mark.parametrize("kwargs", [dict(n=1), dict(n=2.5), dict(spacing_m=0.0),
                                    dict(wavelength_m=-1.0), dict(aperture_m=0.0)])
def test_config_validation(kwargs):
    base = dict(family=ArrayFamily.ULA, n=8, spacing_m=0.05, wavelength_m=0.1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        ArrayConfig(**base)


def test_config_dict_round_trip():
    cfg = ArrayConfig.from_carrier("upa", 8, 28e9, aperture_m=0.2)
    assert ArrayConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# element geometry and distances


def test_element_coordinates_centred_and_ordered():
    cfg = ArrayConfig.upa(4)
    xyz = element_coordinates(cfg)
    assert xyz.shape == (16, 3)
    assert np.allclose(xyz.mean(axis=0), 0)
    # x is the outer (slow) index
    assert np.all(xyz[:4, 0] == xyz[0, 0]) and np.all(np.diff(xyz[:4, 1]) > 0)
    ula = element_coordinates(ArrayConfig.ula(5))
    assert np.allclose(ula[:, 1], np.array(oracles.ula_positions(5, LAM / 2)))


def test_exact_distance_matches_law_of_cosines():
    cfg = ArrayConfig.ula(64)
    ue = PhysicalPosition(7.3, 0.4)
    pos = oracles.ula_positions(64, cfg.spacing_m)
    expect = [math.sqrt(7.3 ** 2 + x * x - 2 * 7.3 * x * math.sin(0.4)) for x in pos]
    assert np.allclose(exact_distances(cfg, ue), expect, rtol=0, atol=1e-12)
    assert exact_distance(cfg, 3, ue) == pytest.approx(expect[3], abs=1e-12)


def test_fresnel_distance_error_is_third_order():
    cfg = ArrayConfig.ula(32)
    x = oracles.ula_positions(32, cfg.spacing_m)[0]
    errs = []
    for r in (20.0, 40.0):
        ue = PhysicalPosition(r, 0.6)
        errs.append(abs(fresnel_distance(cfg, 0, ue) - exact_distance(cfg, 0, ue)))
    # leading error term scales as x^3 / r^2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[0] < abs(x) ** 3 / 20.0 ** 2


# ---------------------------------------------------------------------------
# beams


@pytest.mark.parametrize("model", ["exact", "fresnel"])
def test_ula_beam_matches_oracle(model):
    cfg = ArrayConfig.ula(48)
    ue = PhysicalPosition(3.1, -0.7)
    ref = (oracles.ula_exact_beam if model == "exact" else oracles.ula_fresnel_beam)(
        48, cfg.spacing_m, LAM, 3.1, -0.7)
    assert np.allclose(beam_focusing(cfg, ue, model).elements, ref, atol=1e-12)


@pytest.mark.parametrize("model", ["exact", "fresnel"])
def test_upa_beam_matches_oracle(model):
    cfg = ArrayConfig.upa(6)
    ue = PhysicalPosition(1.7, 0.5, 2.2)
    vec = beam_focusing(cfg, ue, model).elements
    if model == "exact":
        ref = oracles.upa_exact_beam(6, cfg.spacing_m, LAM, 1.7, 0.5, 2.2)
    else:
        tp = to_transform(cfg, ue)
        ref = oracles.upa_fresnel_beam(6, cfg.spacing_m, LAM, tp.psi, tp.varphi, tp.rho)
    assert np.allclose(vec, ref, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 40), r=st.floats(0.5, 1e4), theta=st.floats(-1.5, 1.5),
       phi=st.floats(0, math.pi), model=st.sampled_from(["exact", "fresnel"]),
       upa=st.booleans())
def test_beams_have_unit_norm(n, r, theta, phi, model, upa):
    cfg = ArrayConfig.upa(min(n, 12)) if upa else ArrayConfig.ula(n)
    vec = beam_focusing(cfg, PhysicalPosition(r, theta, phi), model).elements
    assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)


def test_infinite_distance_gives_steering_vector():
    cfg = ArrayConfig.ula(16)
    a = far_field_steering(cfg, 0.3).elements
    b = beam_focusing(cfg, PhysicalPosition(math.inf, 0.3)).elements
    assert np.allclose(a, b)
    # large but finite r approaches the steering vector
    far = beam_focusing(cfg, PhysicalPosition(1e9, 0.3), "exact").elements
    assert correlation(a, far) == pytest.approx(1.0, abs=1e-9)


def test_upa_steering_is_kronecker_of_ula_steering():
    n, theta, phi = 8, 0.6, 1.1
    cfg = ArrayConfig.upa(n)
    ula = ArrayConfig.ula(n)
    s = math.sin(theta)
    ax = far_field_steering(ula, math.asin(s * math.cos(phi))).elements
    ay = far_field_steering(ula, math.asin(s * math.sin(phi))).elements
    assert np.allclose(far_field_steering(cfg, theta, phi).elements, np.kron(ax, ay),
                       atol=1e-14)


def test_channel_gain_and_scaling():
    cfg = ArrayConfig.ula(16)
    ue = PhysicalPosition(12.0, 0.1)
    h = channel(cfg, ue, eta=4.0)
    assert abs(h.gain) == pytest.approx(2.0 / 12.0)
    assert np.linalg.norm(h.elements) == pytest.approx(math.sqrt(16) * 2.0 / 12.0)
    with pytest.raises(ValueError):
        channel(cfg, PhysicalPosition(math.inf, 0.0))
    with pytest.raises(ValueError):
        channel(cfg, ue, eta=0.0)


@pytest.mark.parametrize("bad", [dict(r_m=0.0, theta_rad=0.0),
                                 dict(r_m=1.0, theta_rad=2.0),
                                 dict(r_m=1.0, theta_rad=0.0, phi_rad=-0.5)])
def test_position_validation(bad):
    with pytest.raises(ValueError):
        PhysicalPosition(**bad)


# ---------------------------------------------------------------------------
# transform coordinates


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0.05, 1e5), theta=st.floats(-1.5, 1.5))
def test_ula_transform_round_trip(r, theta):
    cfg = ArrayConfig.ula(64)
    tp = to_transform(cfg, PhysicalPosition(r, theta))
    assert tp.alpha == pytest.approx(LAM * math.cos(theta) ** 2 / (4 * r), rel=1e-12)
    back = from_transform(cfg, tp)
    assert back.r_m == pytest.approx(r, rel=1e-9)
    assert back.theta_rad == pytest.approx(theta, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0.05, 1e5), theta=st.floats(-1.5, 1.5), phi=st.floats(0, math.pi))
def test_upa_transform_round_trip(r, theta, phi):
    cfg = ArrayConfig.upa(8)
    tp = to_transform(cfg, PhysicalPosition(r, theta, phi))
    back = to_transform(cfg, from_transform(cfg, tp))
    assert np.allclose(back.as_array(), tp.as_array(), rtol=1e-12, atol=1e-12)
    assert from_transform(cfg, tp).r_m == pytest.approx(r, rel=1e-12)


def test_transform_edge_cases():
    ula = ArrayConfig.ula(8)
    assert math.isinf(from_transform(ula, UlaPoint(0.0, 0.2)).r_m)
    assert math.isinf(from_transform(ula, UlaPoint(0.0, 1.0)).r_m)
    with pytest.raises(ValueError):
        from_transform(ula, UlaPoint(0.01, 1.0))
    with pytest.raises(ValueError):
        UlaPoint(0.0, 1.5)
    with pytest.raises(ValueError):
        UlaPoint(-0.1, 0.0)
    upa = ArrayConfig.upa(8)
    with pytest.raises(ValueError):
        from_transform(upa, UpaPoint(0.9, 0.9, 0.1))
    assert math.isinf(from_transform(upa, UpaPoint(0.1, 0.2, 0.0)).r_m)


def test_region_bounds_values():
    cfg = ArrayConfig.ula(512)
    b = region_bounds(cfg)
    D = 511 * LAM / 2
    assert b.fresnel_min_r == pytest.approx(math.sqrt(0.62 * D ** 3 / LAM), rel=1e-14)
    assert b.rayleigh_r == pytest.approx(2 * D * D / LAM, rel=1e-14)
    assert b.q_alpha * 512 * math.sqrt(512) == pytest.approx(1.0, rel=0.03)
    assert b.alpha_fresnel == pytest.approx(LAM / (4 * b.fresnel_min_r))
    assert b.q_alpha >= b.alpha_fresnel
    upa = region_bounds(ArrayConfig.upa(16))
    D16 = 15 * LAM / 2
    assert upa.q_rho == pytest.approx(math.sqrt(LAM / (0.62 * D16 ** 3)), rel=1e-14)


@pytest.mark.parametrize("n", [4, 8, 12])
def test_small_ula_region_covers_fresnel_users(n):
    b = region_bounds(ArrayConfig.ula(n))
    assert b.q_alpha >= b.alpha_fresnel


# ---------------------------------------------------------------------------
# vectorised Fresnel beams


def test_fresnel_beams_match_oracle_in_transform_coordinates():
    cfg = ArrayConfig.ula(40)
    pts = np.array([[0.0, 0.3], [2e-3, -0.8], [5e-4, 0.99]])
    rows = fresnel_beams(cfg, pts)
    for row, (a, b) in zip(rows, pts):
        ref = oracles.ula_beam_from_transform(40, cfg.spacing_m, LAM, a, b)
        assert np.allclose(row, ref, atol=1e-12)
    upa = ArrayConfig.upa(5)
    p = np.array([[0.2, -0.4, 0.3]])
    ref = oracles.upa_fresnel_beam(5, upa.spacing_m, LAM, 0.2, -0.4, 0.3)
    assert np.allclose(fresnel_beams(upa, p)[0], ref, atol=1e-12)


def test_canonical_beams_have_real_first_element():
    cfg = ArrayConfig.upa(6)
    rows = fresnel_beams(cfg, [[0.3, 0.1, 0.2], [-0.5, 0.5, 0.0]], canonical=True)
    assert np.allclose(rows[:, 0].imag, 0) and np.all(rows[:, 0].real > 0)


def test_features_and_basis_shapes():
    assert transform_features(ArrayConfig.ula(8), [[0, 0]]).shape == (1, 2)
    assert phase_basis(ArrayConfig.upa(4)).shape == (5, 16)
    with pytest.raises(ValueError):
        transform_features(ArrayConfig.ula(8), [[0, 0, 0]])
