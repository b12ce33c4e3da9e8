import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nfcodebook.codebooks import (Codebook, Scheme, build_equal_grid, build_ula_uniform,
                                  codeword_count)
from nfcodebook.evaluation import (LinkParams, achievable_rate, cdf_series, eval_cdf,
                                   eval_rate_curve, from_db, min_correlation_audit,
                                   overhead_curve, rate_from_correlation, sample_stream,
                                   sample_transform_points, sample_ues, select_codeword,
                                   select_codewords, snr, to_db)
from nfcodebook.experiments import ComparisonSettings, run_comparison
from nfcodebook.geometry import ArrayConfig, fresnel_beams, region_bounds, to_transform

HEX_RATIO = 4 / (3 * math.sqrt(3))


# ---------------------------------------------------------------------------
# codeword selection


@pytest.fixture(scope="module")
def small_book():
    return build_ula_uniform(ArrayConfig.ula(32), 0.9)


def test_codeword_itself_is_selected(small_book):
    V = small_book.vectors()
    for k in (0, 7, len(small_book) - 1):
        idx, corr = select_codeword(V[k], small_book)
        assert idx == k and corr == pytest.approx(1.0, abs=1e-12)


def test_selection_is_invariant_to_complex_scaling(small_book):
    rng = np.random.default_rng(11)
    H = rng.normal(size=(1000, 32)) + 1j * rng.normal(size=(1000, 32))
    scale = rng.lognormal(size=1000) * np.exp(2j * np.pi * rng.random(1000))
    i0, c0 = select_codewords(H, small_book)
    i1, c1 = select_codewords(H * scale[:, None], small_book)
    assert np.array_equal(i0, i1)
    assert np.allclose(c0, c1, atol=1e-12)


def test_ties_go_to_lowest_index():
    cfg = ArrayConfig.ula(8)
    v = fresnel_beams(cfg, [[0.0, 0.3]])[0]
    cb = Codebook(Scheme.LLOYD_MAX, cfg,
                  explicit_vectors=np.stack([np.roll(v, 3), v, v, v * 1j]))
    assert select_codeword(v, cb)[0] == 1


def test_selection_dimension_mismatch(small_book):
    with pytest.raises(ValueError):
        select_codeword(np.ones(31), small_book)


# ---------------------------------------------------------------------------
# SNR and rate


def test_snr_examples():
    assert snr(1, 1, 1, 1, 1) == 1.0
    assert to_db(snr(1, 1, 1, 1, 1)) == 0.0
    assert snr(1, 1, 8, 2, 1) == pytest.approx(snr(1, 1, 8, 1, 1) / 4)
    val = snr(1, 1, 512, 100, 1e-9)
    assert val == pytest.approx(5.12e7, rel=1e-12)
    assert to_db(val) == pytest.approx(77.09, abs=0.01)
    assert from_db(to_db(val)) == pytest.approx(val, rel=1e-12)
    with pytest.raises(ValueError):
        snr(1, 1, 512, 0, 1e-9)


def test_achievable_rate_examples():
    link = LinkParams(P=from_db(15.0), eta=1, total_elements=1, r=1, sigma2=1)
    w = np.zeros(4, complex)
    w[0] = 1
    b = np.zeros(4, complex)
    b[0], b[1] = 0.95, math.sqrt(1 - 0.95 ** 2)
    assert achievable_rate(link, w, b) == pytest.approx(4.88, abs=0.005)
    assert achievable_rate(link, w, w) == pytest.approx(math.log2(1 + from_db(15.0)))
    assert achievable_rate(link, w, np.roll(w, 1)) == 0.0
    d = dict(P=1.0, eta=1.0, total_elements=1, r=1.0, sigma2=1.0)
    assert achievable_rate(d, w, w) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(c1=st.floats(0, 1), c2=st.floats(0, 1), s=st.floats(-10, 30))
def test_rate_is_monotone_in_correlation(c1, c2, s):
    r = rate_from_correlation([c1, c2], [from_db(s)])[0]
    if c1 <= c2:
        assert r[0] <= r[1]
    else:
        assert r[0] >= r[1]


# ---------------------------------------------------------------------------
# user sampling


def test_sampling_is_deterministic_and_independent_of_chunking():
    cfg = ArrayConfig.ula(64)
    a = sample_transform_points(cfg, 1000, 9)
    b = sample_transform_points(cfg, 1000, 9)
    assert a.tobytes() == b.tobytes()
    tail = sample_transform_points(cfg, 400, 9, start=600)
    assert np.array_equal(a[600:], tail)
    assert not np.array_equal(a, sample_transform_points(cfg, 1000, 10))
    x = sample_stream(9, 3).random()
    assert x == sample_stream(9, 3).random()


@pytest.mark.parametrize("family,n", [("ula", 128), ("upa", 8)])
@pytest.mark.parametrize("dist", ["uniform_transform", "uniform_physical"])
def test_samples_respect_region(family, n, dist):
    cfg = ArrayConfig.ula(n) if family == "ula" else ArrayConfig.upa(n)
    b = region_bounds(cfg)
    pts = sample_transform_points(cfg, 500, 1, dist)
    assert np.all(b.physical(pts))
    if family == "ula":
        assert np.all(pts[:, 0] <= b.alpha_fresnel * (1 + 1e-12))
    else:
        assert np.all(pts[:, 2] <= b.q_rho * (1 + 1e-12))
        assert np.all(pts[:, 0] ** 2 + pts[:, 1] ** 2 <= 1)


def test_ue_samples_are_consistent():
    cfg = ArrayConfig.upa(6)
    for u in sample_ues(cfg, 50, 2):
        assert np.allclose(to_transform(cfg, u.position).as_array(), u.transform.as_array(),
                           atol=1e-9)
        assert np.linalg.norm(u.channel.elements) > 0
    with pytest.raises(ValueError):
        sample_transform_points(cfg, 0, 1)
    with pytest.raises(ValueError):
        sample_transform_points(cfg, 5, 1, "gaussian")


def test_beta_mean_is_centred():
    pts = sample_transform_points(ArrayConfig.ula(512), 100_000, 0)
    assert -0.02 <= pts[:, 1].mean() <= 0.02


# ---------------------------------------------------------------------------
# curves


def test_own_beam_codebook_gives_step_cdf():
    cfg = ArrayConfig.ula(16)
    ues = sample_ues(cfg, 40, 4)
    own = np.stack([u.channel.elements / np.linalg.norm(u.channel.elements) for u in ues])
    cb = Codebook(Scheme.LLOYD_MAX, cfg, explicit_vectors=own)
    cdf = eval_cdf(cb, ues)
    assert np.allclose(cdf[:, 0], 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        eval_cdf(cb, [])


def test_cdf_validity():
    rng = np.random.default_rng(3)
    cdf = cdf_series(rng.random(257))
    assert np.all(np.diff(cdf[:, 0]) >= 0) and np.all(np.diff(cdf[:, 1]) > 0)
    assert cdf[-1, 1] == 1.0 and cdf[0, 1] > 0


def test_rate_curves_stay_below_perfect_csi(small_book):
    cfg = small_book.cfg
    ues = sample_ues(cfg, 100, 6)
    grid = np.arange(-10, 21, 2.0)
    curves = eval_rate_curve({"uniform": small_book, "equal": build_equal_grid(cfg, 8)},
                             ues, grid)
    top = curves["perfect_csi"][:, 1]
    for name in ("uniform", "equal"):
        assert np.array_equal(curves[name][:, 0], grid)
        assert np.all(curves[name][:, 1] <= top + 1e-12)
    assert np.all(np.diff(top) > 0)


# ---------------------------------------------------------------------------
# overhead


def test_overhead_rows():
    rows = overhead_curve(ArrayConfig.ula(512), [0.9, 0.95, 0.99])
    for r in rows:
        assert r.ratio == pytest.approx(HEX_RATIO, abs=1e-6)
        assert r.dislocation_count < r.uniform_count
    assert rows[1].uniform_real == pytest.approx(23376, rel=1e-3)
    u = [r.uniform_count for r in rows]
    assert u == sorted(u) and len(set(u)) == 3
    with pytest.raises(ValueError):
        overhead_curve(ArrayConfig.upa(8), [0.9])


# ---------------------------------------------------------------------------
# audit


def test_single_codeword_audit_minimum_on_boundary():
    cfg = ArrayConfig.ula(64)
    centre = np.array([[2e-5, 0.1]])
    da, db = 4e-5, 0.02
    cb = Codebook(Scheme.ULA_UNIFORM, cfg, centers=centre,
                  steps={"alpha": da, "beta": db})
    lo = centre[0] - [da / 2, db / 2]
    hi = centre[0] + [da / 2, db / 2]
    rec = min_correlation_audit(cb, grid_density=8, region="box", bounds=(lo, hi))
    on_edge = np.isclose(rec.ue_transform, lo) | np.isclose(rec.ue_transform, hi)
    assert on_edge.any()
    assert rec.correlation < rec.mean_correlation < 1


def test_audit_rejects_sparse_grid(small_book):
    with pytest.raises(ValueError):
        min_correlation_audit(small_book, grid_density=3)


def test_kd_audit_matches_exhaustive(small_book):
    a = min_correlation_audit(small_book, grid_density=4)
    b = min_correlation_audit(small_book, grid_density=4, exhaustive=True)
    assert a.n_points == b.n_points
    assert a.correlation == pytest.approx(b.correlation, abs=1e-12)


def test_equal_grid_worse_than_proposed_near_array():
    cfg = ArrayConfig.ula(512)
    b = region_bounds(cfg)
    box = ([0.0, -0.02], [b.alpha_fresnel, 0.02])
    unif = build_ula_uniform(cfg, 0.95)
    eq = build_equal_grid(cfg, 512)
    ru = min_correlation_audit(unif, grid_density=5, bounds=box)
    re = min_correlation_audit(eq, grid_density=5, bounds=box)
    assert re.correlation < ru.correlation
    assert ru.correlation >= 0.94


# ---------------------------------------------------------------------------
# reports


def _small_run(seed=0):
    cfg = ArrayConfig.ula(32)
    s = ComparisonSettings(ue_count=120, seed=seed, bits=8, lloyd_training=300,
                           lloyd_max_iter=5)
    return run_comparison(cfg, s, config={"n": 32, "seed": seed})


def test_report_is_deterministic(tmp_path):
    r1, _ = _small_run()
    r2, _ = _small_run()
    assert r1.csv_files() == r2.csv_files()
    assert r1.manifest() == r2.manifest()
    r1.write(tmp_path / "a")
    r2.write(tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    r3, _ = _small_run(seed=1)
    assert r3.manifest()["files"] != r1.manifest()["files"]


def test_report_csv_format():
    rep, books = _small_run()
    files = rep.csv_files()
    assert "cdf.csv" in files and "rates.csv" in files
    assert files["cdf.csv"] == files[f"cdf_{next(iter(books))}.csv"]
    for text in files.values():
        assert "\r" not in text and ";" not in text
    lines = files["rates.csv"].splitlines()
    assert lines[0] == "codebook,snr_db,mean_rate"
    assert any(line.startswith("perfect_csi,") for line in lines)
    man = rep.manifest()
    assert man["seed"] == 0 and len(man["config_digest"]) == 64 and man["code_version"]
