"""Quantisation and link-level evaluation.

All Monte-Carlo randomness is drawn from per-sample Philox streams keyed by
``(seed, sample_index)``, so results do not depend on chunking or on the
number of worker threads.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import __version__
from ._parallel import ordered_map
from .codebooks import Codebook, Scheme, codeword_count
from .correlation import DEFAULT_ULA_COEFFS, UlaFitCoefficients
from .geometry import (ArrayConfig, BeamVector, ChannelVector, PhysicalPosition,
                       TransformPoint, channel, fresnel_beams, from_transform,
                       region_bounds, to_transform, transform_features,
                       transform_point)
from . import kernels

DISTRIBUTIONS = ("uniform_transform", "uniform_physical")
_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# codeword selection


def _rows(h) -> np.ndarray:
    if isinstance(h, (BeamVector, ChannelVector)):
        return h.elements[None, :]
    arr = np.asarray(h)
    return arr[None, :] if arr.ndim == 1 else arr


def select_codewords(H, cb: Codebook, block: int = 4096):
    """Exhaustive best-codeword search for every row of ``H``.

    Returns ``(indices, correlations)`` where the correlation is
    ``|h^H w| / |h|``.  Ties resolve to the lowest index.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim == 1:
        H = H[None, :]
    if H.shape[1] != cb.cfg.total_elements:
        raise ValueError(f"dimension mismatch: channel has {H.shape[1]} elements, "
                         f"codebook {cb.cfg.total_elements}")
    norms = np.linalg.norm(H, axis=1)
    Hn = H / norms[:, None]
    best = np.full(H.shape[0], -1.0)
    idx = np.zeros(H.shape[0], dtype=np.int64)
    for start, W in cb.iter_blocks(block):
        corr = np.abs(Hn.conj() @ W.T)
        j = corr.argmax(axis=1)
        v = corr[np.arange(len(j)), j]
        better = v > best
        best[better] = v[better]
        idx[better] = j[better] + start
    return idx, np.minimum(best, 1.0)


def select_codeword(h, cb: Codebook):
    """Best codeword ``argmax_s |h^H W_s|^2`` for one channel; ``(index, corr)``."""
    idx, corr = select_codewords(_rows(h), cb)
    return int(idx[0]), float(corr[0])


# ---------------------------------------------------------------------------
# SNR and rate


def snr(P, eta, total_elements, r, sigma2):
    """Receive SNR ``P eta N / (r^2 sigma^2)`` (linear)."""
    for name, v in (("P", P), ("eta", eta), ("total_elements", total_elements),
                    ("r", r), ("sigma2", sigma2)):
        if not np.all(np.asarray(v) > 0):
            raise ValueError(f"{name} must be positive")
    return P * eta * total_elements / (np.square(r) * sigma2)


def to_db(x):
    return 10 * np.log10(x)


def from_db(x_db):
    return 10 ** (np.asarray(x_db, dtype=float) / 10)


@dataclass(frozen=True)
class LinkParams:
    P: float
    eta: float
    total_elements: int
    r: float
    sigma2: float

    @property
    def snr(self) -> float:
        return snr(self.P, self.eta, self.total_elements, self.r, self.sigma2)


def achievable_rate(h_params, w, b) -> float:
    """``log2(1 + SNR |w^H b|^2)`` in bits/s/Hz.

    ``h_params`` is a :class:`LinkParams` or a mapping with keys ``P``,
    ``eta``, ``total_elements``, ``r`` and ``sigma2``.
    """
    if not isinstance(h_params, LinkParams):
        h_params = LinkParams(**h_params)
    w = w.elements if isinstance(w, BeamVector) else np.asarray(w)
    b = b.elements if isinstance(b, BeamVector) else np.asarray(b)
    g = abs(np.vdot(w, b)) ** 2
    return float(math.log2(1 + h_params.snr * g))


def rate_from_correlation(corr, snr_linear):
    """Rates for correlations ``corr`` (array) at linear SNRs (array)."""
    corr = np.asarray(corr, dtype=float)
    return np.log2(1 + np.multiply.outer(np.asarray(snr_linear, dtype=float), corr ** 2))


# ---------------------------------------------------------------------------
# user sampling


@dataclass(frozen=True, eq=False)
class UeSample:
    position: PhysicalPosition
    transform: TransformPoint
    channel: ChannelVector


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for sample ``index`` of run ``seed``."""
    key = np.array([int(seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_transform(cfg, bounds, rng):
    if cfg.is_ula:
        while True:
            alpha = bounds.alpha_fresnel * (1.0 - rng.random())
            beta = rng.uniform(-1.0, 1.0)
            if alpha <= bounds.alpha_fresnel * (1 - beta * beta):
                return np.array([alpha, beta])
    while True:
        psi, vp = rng.uniform(-1.0, 1.0, size=2)
        if psi * psi + vp * vp <= 1:
            return np.array([psi, vp, bounds.q_rho * (1.0 - rng.random())])


def _draw_physical(cfg, bounds, rng):
    theta = rng.uniform(-math.pi / 2, math.pi / 2)
    r = rng.uniform(bounds.fresnel_min_r, bounds.rayleigh_r)
    phi = rng.uniform(0.0, math.pi) if not cfg.is_ula else 0.0
    return PhysicalPosition(r, theta, phi)


def sample_transform_points(cfg: ArrayConfig, count: int, seed: int,
                            distribution: str = "uniform_transform",
                            start: int = 0) -> np.ndarray:
    """Transform coordinates of samples ``start .. start+count-1``.

    ``uniform_transform`` is uniform over the physical part of the
    transform region (``alpha <= alpha_fresnel (1 - beta^2)`` for a ULA,
    the unit disc times ``(0, q_rho]`` for a UPA).  ``uniform_physical``
    draws angles uniformly and ``r`` uniformly on
    ``[fresnel_min_r, rayleigh_r]``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
    bounds = region_bounds(cfg)
    dim = 2 if cfg.is_ula else 3
    out = np.empty((count, dim))
    for i in range(count):
        rng = sample_stream(seed, start + i)
        if distribution == "uniform_transform":
            out[i] = _draw_transform(cfg, bounds, rng)
        else:
            out[i] = to_transform(cfg, _draw_physical(cfg, bounds, rng)).as_array()
    return out


def sample_ues(cfg: ArrayConfig, count: int, seed: int,
               distribution: str = "uniform_transform", eta: float = 1.0,
               model: str = "fresnel") -> list:
    """Random users with their line-of-sight channels."""
    pts = sample_transform_points(cfg, count, seed, distribution)
    out = []
    for p in pts:
        tp = transform_point(cfg, p)
        pos = from_transform(cfg, tp)
        out.append(UeSample(pos, tp, channel(cfg, pos, eta, model)))
    return out


def _ue_matrix(ues) -> np.ndarray:
    if isinstance(ues, np.ndarray):
        return ues
    return np.stack([u.channel.elements for u in ues])


# ---------------------------------------------------------------------------
# Monte-Carlo curves


def quantization_correlations(cb: Codebook, ues) -> np.ndarray:
    """Best-codeword correlation for each user (channel rows or UeSamples)."""
    _, corr = select_codewords(_ue_matrix(ues), cb)
    return corr


def cdf_series(corr) -> np.ndarray:
    """Empirical CDF as ``(k, 2)`` rows ``(correlation, probability)``."""
    c = np.sort(np.asarray(corr, dtype=float))
    p = np.arange(1, len(c) + 1) / len(c)
    return np.column_stack([c, p])


def eval_cdf(cb: Codebook, ues) -> np.ndarray:
    """Empirical CDF of the quantisation correlation over ``ues``."""
    if len(ues) == 0:
        raise ValueError("no users")
    return cdf_series(quantization_correlations(cb, ues))


DEFAULT_SNR_GRID_DB = tuple(float(x) for x in range(-10, 21, 2))


def eval_rate_curve(cbs, ues, snr_grid_db=DEFAULT_SNR_GRID_DB,
                    correlations: Optional[Mapping[str, np.ndarray]] = None) -> dict:
    """Mean achievable rate against SNR for each codebook plus perfect CSI.

    Each user is given the transmit power that makes its SNR equal to the
    grid value, so the rate is ``log2(1 + SNR corr^2)``.  ``cbs`` is a
    mapping name -> Codebook or a sequence (named by scheme).  Returns a
    mapping name -> ``(len(grid), 2)`` array of ``(snr_db, mean_rate)``;
    the key ``"perfect_csi"`` holds the upper bound.
    """
    if isinstance(cbs, Codebook):
        cbs = [cbs]
    if not isinstance(cbs, Mapping):
        cbs = {cb.scheme.value: cb for cb in cbs}
    if len(ues) == 0 or len(cbs) == 0:
        raise ValueError("need users and codebooks")
    grid = np.asarray(snr_grid_db, dtype=float)
    lin = from_db(grid)
    out = {"perfect_csi": np.column_stack([grid, np.log2(1 + lin)])}
    for name, cb in cbs.items():
        corr = (correlations or {}).get(name)
        if corr is None:
            corr = quantization_correlations(cb, ues)
        out[name] = np.column_stack([grid, rate_from_correlation(corr, lin).mean(axis=1)])
    return out


@dataclass(frozen=True)
class OverheadRow:
    c: float
    uniform_count: int
    dislocation_count: int
    uniform_bits: int
    dislocation_bits: int
    uniform_real: float
    dislocation_real: float

    @property
    def ratio(self) -> float:
        return self.dislocation_real / self.uniform_real


def overhead_curve(cfg: ArrayConfig, c_grid: Sequence[float],
                   coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> list:
    """Uniform and dislocation ULA codebook sizes across design correlations."""
    if not cfg.is_ula:
        raise ValueError("overhead curve is defined for a ULA")
    rows = []
    for c in c_grid:
        u = codeword_count(Scheme.ULA_UNIFORM, cfg.n, c, coeffs, cfg)
        d = codeword_count(Scheme.ULA_DISLOCATION, cfg.n, c, coeffs, cfg)
        rows.append(OverheadRow(float(c), u.total, d.total, u.bits, d.bits,
                                u.total_real, d.total_real))
    return rows


# ---------------------------------------------------------------------------
# min-correlation audit


@dataclass(frozen=True)
class AuditRecord:
    correlation: float
    ue_transform: np.ndarray
    mean_correlation: float
    n_points: int
    spacing: tuple
    method: str


def _axis_pitch(cb: Codebook):
    """Per-axis codeword pitch used to size the audit grid."""
    s = cb.steps
    if cb.cfg.is_ula:
        if cb.scheme is Scheme.ULA_DISLOCATION:
            return np.array([s["alpha"] / 2, s["beta"] / 2])
        if "alpha" in s:
            return np.array([s["alpha"], s["beta"]])
        b = region_bounds(cb.cfg)
        return np.array([b.q_alpha, s.get("beta", 2 / cb.cfg.n)])
    if "rho" in s:
        return np.array([s["psi"], s["varphi"], s["rho"]])
    b = region_bounds(cb.cfg)
    return np.array([s.get("psi", 2 / cb.cfg.n), s.get("varphi", 2 / cb.cfg.n), b.q_rho])


def _metric_scale(cb: Codebook, pitch):
    """Axis scaling under which correlation loss is roughly isotropic."""
    cfg = cb.cfg
    if cfg.is_ula:
        p = DEFAULT_ULA_COEFFS
        if cb.coeffs and "p_alpha" in cb.coeffs:
            p = UlaFitCoefficients(cb.coeffs["p_alpha"], cb.coeffs["p_beta"])
        hw = cfg.half_wavelength_ratio
        return np.array([cfg.n ** 2 * math.sqrt(-p.p_alpha) / hw ** 2,
                         cfg.n * math.sqrt(-p.p_beta) / hw])
    return 1.0 / pitch


def _axis_grid(lo, hi, step):
    count = int(math.floor((hi - lo) / step + 1e-9))
    g = lo + np.arange(count + 1) * step
    if hi - g[-1] > 1e-12 * max(1.0, abs(hi)):
        g = np.append(g, hi)
    return g


def audit_grid(cb: Codebook, grid_density: int = 6, region: str = "physical",
               bounds=None) -> tuple:
    """Dense transform-domain user grid for :func:`min_correlation_audit`."""
    b = region_bounds(cb.cfg)
    lo, hi = (b.lower(), b.upper()) if bounds is None else map(np.asarray, bounds)
    if cb.cfg.is_ula and region == "physical":
        hi = np.array([min(hi[0], b.alpha_fresnel), hi[1]])
    pitch = _axis_pitch(cb)
    spacing = pitch / grid_density
    axes = [_axis_grid(l, h, s) for l, h, s in zip(lo, hi, spacing)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    if region == "physical":
        pts = pts[b.physical(pts)]
    elif region != "box":
        raise ValueError("region must be 'physical' or 'box'")
    return pts, tuple(float(s) for s in spacing)


def _wrap_offsets(cfg):
    period = cfg.wavelength_m / cfg.spacing_m
    if cfg.is_ula:
        return [np.array([0.0, k * period]) for k in (0, 1, -1)]
    return [np.array([i * period, j * period, 0.0])
            for i in (0, 1, -1) for j in (0, 1, -1)]


def min_correlation_audit(cb: Codebook, grid_density: int = 6,
                          region: str = "physical", bounds=None,
                          k: Optional[int] = None, exhaustive: bool = False,
                          chunk: int = 32768, threads=None) -> AuditRecord:
    """Worst best-codeword correlation over a dense user grid.

    The grid has ``grid_density`` points per codeword pitch on every axis,
    starts at the region's lower corner and includes the upper corner.  For
    codebooks with centres, candidate codewords are the ``k`` nearest
    centres in a metric-scaled space (with copies shifted by the angular
    period to catch aliasing); their correlations are exact.  Missing the
    true best codeword can only lower the reported minimum.  With
    ``exhaustive=True`` (forced for trained codebooks) every codeword is
    tested by matrix products.
    """
    if grid_density < 4:
        raise ValueError("grid_density must be >= 4 points per cell per axis")
    cfg = cb.cfg
    pts, spacing = audit_grid(cb, grid_density, region, bounds)
    if len(pts) == 0:
        raise ValueError("audit grid is empty")
    exhaustive = exhaustive or not cb.has_centers
    if exhaustive:
        def run(block):
            vecs = fresnel_beams(cfg, block)
            return select_codewords(vecs, cb)[1]
        method = "exhaustive"
    else:
        if k is None:
            k = 12 if cfg.is_ula else 27
        scale = _metric_scale(cb, _axis_pitch(cb))
        offsets = _wrap_offsets(cfg)
        centers = cb.centers
        tree = cKDTree(np.vstack([(centers + o) * scale for o in offsets]))
        kk = min(k, len(centers) * len(offsets))
        feats = cb.features()
        S = len(centers)

        def run(block):
            _, nb = tree.query(block * scale, k=kk)
            nb = np.atleast_2d(nb).reshape(len(block), kk) % S
            ue_f = transform_features(cfg, block)
            best = np.zeros(len(block))
            for j in range(kk):
                diff = ue_f - feats[nb[:, j]]
                if cfg.is_ula:
                    v = kernels.line_correlation(diff[:, 0], diff[:, 1], cfg.n)
                else:
                    v = kernels.plane_correlation(diff, cfg.n)
                np.maximum(best, v, out=best)
            return best
        method = f"kd-{kk}"
    blocks = [pts[i:i + chunk] for i in range(0, len(pts), chunk)]
    best = np.concatenate(ordered_map(run, blocks, threads))
    i = int(np.argmin(best))
    return AuditRecord(float(best[i]), pts[i].copy(), float(best.mean()), len(pts),
                       spacing, method)


# ---------------------------------------------------------------------------
# reports


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=",", lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return buf.getvalue()


def config_digest(config: Mapping) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class EvalReport:
    """Monte-Carlo results: CDFs, rate curves and overhead rows.

    ``cdf`` maps codebook name to ``(k, 2)`` arrays; ``primary`` names the
    codebook written to ``cdf.csv`` (the others go to ``cdf_<name>.csv``).
    """

    cdf: dict = field(default_factory=dict)
    rate_curves: dict = field(default_factory=dict)
    overhead: list = field(default_factory=list)
    seed: int = 0
    config_digest: str = ""
    primary: Optional[str] = None
    mean_correlation: dict = field(default_factory=dict)

    def csv_files(self) -> dict:
        """File name -> CSV text."""
        files = {}
        names = list(self.cdf)
        if names:
            primary = self.primary or names[0]
            files["cdf.csv"] = _csv_text(["correlation", "cdf"], self.cdf[primary])
            for name in names:
                files[f"cdf_{name}.csv"] = _csv_text(["correlation", "cdf"], self.cdf[name])
        if self.rate_curves:
            rows = [(name, s, r) for name, curve in self.rate_curves.items()
                    for s, r in curve]
            files["rates.csv"] = _csv_text(["codebook", "snr_db", "mean_rate"], rows)
        if self.overhead:
            rows = [(o.c, o.uniform_count, o.dislocation_count, o.uniform_bits,
                     o.dislocation_bits, o.ratio) for o in self.overhead]
            files["overhead.csv"] = _csv_text(
                ["c", "uniform_count", "dislocation_count", "uniform_bits",
                 "dislocation_bits", "ratio"], rows)
        return files

    def manifest(self, files: Optional[dict] = None) -> dict:
        files = self.csv_files() if files is None else files
        return {"seed": int(self.seed), "config_digest": self.config_digest,
                "code_version": __version__,
                "mean_correlation": {k: float(v) for k, v in self.mean_correlation.items()},
                "files": {name: hashlib.sha256(text.encode("utf-8")).hexdigest()
                          for name, text in sorted(files.items())}}

    def write(self, out_dir) -> list:
        """Write CSVs and ``manifest.json``; returns the written paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = self.csv_files()
        paths = []
        for name, text in files.items():
            p = out / name
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            paths.append(p)
        man = out / "manifest.json"
        man.write_text(json.dumps(self.manifest(files), sort_keys=True, indent=2) + "\n",
                       encoding="utf-8")
        paths.append(man)
        return paths
