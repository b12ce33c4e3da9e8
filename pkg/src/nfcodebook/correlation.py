"""Codeword/channel correlation and its quadratic level-set models.

Under the Fresnel phase model the correlation between beams at two transform
points depends only on the difference of their phase features (see
:func:`nfcodebook.geometry.transform_features`).  For a ULA this makes the
correlation a function of ``(d_alpha, d_beta)`` alone, approximated near the
peak by the ellipse model ``1 + p_alpha d_alpha^2 N^4 + p_beta d_beta^2 N^2``.
A UPA correlation is not stationary; it is modelled locally by an ellipsoid
whose coefficients depend on the centre, and globally by a conservative
*reference ellipsoid* taken as the per-axis minimum over a probe grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from . import kernels
from ._parallel import ordered_map
from .geometry import (ArrayConfig, BeamVector, ChannelVector, UpaPoint,
                       region_bounds, transform_features)

#: Least-squares constants shipped as the default ULA ellipse coefficients.
PUBLISHED_P_ALPHA = -0.025983670363830
PUBLISHED_P_BETA = -0.391749735984250

_LEVEL_TOL = 1e-6


def _as_vector(v) -> np.ndarray:
    if isinstance(v, (BeamVector, ChannelVector)):
        return v.elements
    return np.asarray(v)


def correlation(w, b) -> float:
    """Normalised correlation ``|w^H b| / (|w| |b|)``.

    Accepts :class:`BeamVector`, :class:`ChannelVector` or plain arrays; for
    unit-norm beams this is ``|w^H b|``.
    """
    w = _as_vector(w)
    b = _as_vector(b)
    if w.shape != b.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {b.shape}")
    nw = np.linalg.norm(w)
    nb = np.linalg.norm(b)
    return float(abs(np.vdot(w, b)) / (nw * nb))


def transform_correlation(cfg: ArrayConfig, p, q, backend=None) -> np.ndarray:
    """Fresnel-beam correlation between transform points, row by row.

    ``p`` and ``q`` broadcast against each other; each is ``(k, 2)`` for a ULA
    or ``(k, 3)`` for a UPA.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p, q = np.broadcast_arrays(p, q)
    diff = transform_features(cfg, q) - transform_features(cfg, p)
    if cfg.is_ula:
        return kernels.line_correlation(diff[:, 0], diff[:, 1], cfg.n, backend)
    return kernels.plane_correlation(diff, cfg.n, backend)


def correlation_ula_delta(d_alpha, d_beta, N: int, backend=None):
    """Stationary ULA correlation at transform offsets, half-wavelength spacing.

    ``f = |sum_n exp(-j pi (d_beta m_n - d_alpha m_n^2))| / N`` with
    ``m_n = n - (N+1)/2``.  Scalars in, float out; arrays broadcast.
    """
    da, db = np.broadcast_arrays(np.asarray(d_alpha, dtype=float),
                                 np.asarray(d_beta, dtype=float))
    out = kernels.line_correlation(-math.pi * db.ravel(), math.pi * da.ravel(),
                                   N, backend)
    return float(out[0]) if da.ndim == 0 else out.reshape(da.shape)


def _scaled_scalar(a, b):
    def re(t):
        return math.cos(math.pi * (b * t - a * t * t))

    def im(t):
        return -math.sin(math.pi * (b * t - a * t * t))

    limit = 50 + int(abs(a) + abs(b))
    kw = dict(epsabs=1e-11, epsrel=1e-11, limit=limit)
    r, _ = integrate.quad(re, -0.5, 0.5, **kw)
    i, _ = integrate.quad(im, -0.5, 0.5, **kw)
    return math.hypot(r, i)


def scaled_correlation(d_alpha_tilde, d_beta_tilde):
    """Continuous-aperture correlation in scaled offsets.

    ``|int_{-1/2}^{1/2} exp(-j pi (b t - a t^2)) dt|`` with ``a = d_alpha N^2``
    and ``b = d_beta N``, evaluated by adaptive quadrature.
    """
    a, b = np.broadcast_arrays(np.asarray(d_alpha_tilde, dtype=float),
                               np.asarray(d_beta_tilde, dtype=float))
    out = np.array([_scaled_scalar(x, y) for x, y in zip(a.ravel(), b.ravel())])
    return float(out[0]) if a.ndim == 0 else out.reshape(a.shape)


# ---------------------------------------------------------------------------
# ULA ellipse model


@dataclass(frozen=True)
class UlaFitCoefficients:
    """Coefficients of ``f ~ 1 + p_alpha d_alpha^2 N^4 + p_beta d_beta^2 N^2``."""

    p_alpha: float = PUBLISHED_P_ALPHA
    p_beta: float = PUBLISHED_P_BETA
    fit_info: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.p_alpha < 0 and self.p_beta < 0):
            raise ValueError("ULA fit coefficients must be negative")

    def fitted(self, d_alpha, d_beta, N):
        da = np.asarray(d_alpha, dtype=float)
        db = np.asarray(d_beta, dtype=float)
        return 1 + self.p_alpha * da ** 2 * N ** 4 + self.p_beta * db ** 2 * N ** 2

    def to_dict(self) -> dict:
        return {"p_alpha": self.p_alpha, "p_beta": self.p_beta,
                "fit_info": self.fit_info}

    @classmethod
    def from_dict(cls, data: dict) -> "UlaFitCoefficients":
        return cls(float(data["p_alpha"]), float(data["p_beta"]),
                   data.get("fit_info"))


DEFAULT_ULA_COEFFS = UlaFitCoefficients()


def _level_radius(fn, level, t0, t_max=None):
    """First ``t > 0`` with ``fn(t) = level`` for ``fn(0) = 1`` decreasing.

    The bracket grows geometrically from ``t0``.  Returns ``None`` when
    ``t_max`` is reached before ``fn`` drops below ``level``.
    """
    if t_max is not None and t0 >= t_max:
        t0 = t_max / 2
    lo, hi = 0.0, t0
    while fn(hi) > level:
        lo = hi
        hi *= 1.5
        if t_max is not None and hi >= t_max:
            if fn(t_max) > level:
                return None
            hi = t_max
            break
        if hi > 1e12 * t0:
            raise RuntimeError("correlation never reaches the requested level")
    t = optimize.brentq(lambda s: fn(s) - level, lo, hi, xtol=1e-15 * hi,
                        rtol=4 * np.finfo(float).eps, maxiter=200)
    return t


def _ray_samples(fn, direction, c_level, n_radii, t0, t_max=None):
    """Radii along a ray spanning ``f`` from 0.999 down to ``c_level``."""
    t_c = _level_radius(fn, c_level, t0, t_max)
    capped = t_c is None
    if capped:
        t_c = t_max
    if fn(t_c) >= 0.999:
        return np.empty(0), capped
    t_hi = _level_radius(fn, 0.999, t0 * 1e-3, t_c)
    return np.linspace(t_hi, t_c, n_radii), capped


def fit_ula_coefficients(N: int, c_level: float, n_rays: int = 32,
                         n_radii: int = 16, backend=None) -> UlaFitCoefficients:
    """Least-squares ellipse fit of the stationary ULA correlation.

    Rays are spread uniformly in angle in the scaled plane
    ``(d_alpha N^2, d_beta N)``; along each, ``n_radii`` radii span the
    correlation range ``[c_level, 0.999]``.  ``f - 1`` is regressed on
    ``(d_alpha^2 N^4, d_beta^2 N^2)`` without intercept or weights.
    """
    if not 0.8 < c_level < 1:
        raise ValueError("c_level must lie in (0.8, 1)")
    angles = np.linspace(0, 2 * math.pi, n_rays, endpoint=False)
    return _fit_ula_rays(N, c_level, angles, n_radii, backend, "rays")


def fit_ula_axis(N: int, c_level: float, axis: str, n_radii: int = 64,
                 backend=None) -> float:
    """Single-axis curvature fit: ``p_alpha`` (``axis="alpha"``) or ``p_beta``."""
    if axis not in ("alpha", "beta"):
        raise ValueError("axis must be 'alpha' or 'beta'")
    angle = 0.0 if axis == "alpha" else math.pi / 2
    X, y = _ula_design(N, c_level, np.array([angle]), n_radii, backend)
    col = 0 if axis == "alpha" else 1
    x = X[:, col]
    return float(np.dot(x, y) / np.dot(x, x))


def _ula_design(N, c_level, angles, n_radii, backend):
    rows, ys = [], []
    for t in angles:
        ua, ub = math.cos(t) / N ** 2, math.sin(t) / N

        def fn(s, ua=ua, ub=ub):
            return correlation_ula_delta(s * ua, s * ub, N, backend)

        radii, _ = _ray_samples(fn, (ua, ub), c_level, n_radii, 0.05)
        if radii.size == 0:
            continue
        f = correlation_ula_delta(radii * ua, radii * ub, N, backend)
        rows.append(np.column_stack([(radii * ua) ** 2 * N ** 4,
                                     (radii * ub) ** 2 * N ** 2]))
        ys.append(f - 1)
    if not rows:
        raise ValueError("degenerate sample set: no usable rays")
    X = np.vstack(rows)
    y = np.concatenate(ys)
    if X.shape[0] < 8:
        raise ValueError(f"degenerate sample set: {X.shape[0]} points < 8")
    return X, y


def _fit_ula_rays(N, c_level, angles, n_radii, backend, design):
    X, y = _ula_design(N, c_level, angles, n_radii, backend)
    p, *_ = np.linalg.lstsq(X, y, rcond=None)
    info = {"N": int(N), "c_level": float(c_level), "design": design,
            "n_rays": int(len(angles)), "n_radii": int(n_radii),
            "n_samples": int(X.shape[0]), "range": [float(c_level), 0.999],
            "weights": "none"}
    return UlaFitCoefficients(float(p[0]), float(p[1]), info)


def ula_contour_semiaxes(c: float, N: int,
                         coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS):
    """Semi-axes ``(a_alpha, a_beta)`` of the level-``c`` fitted ellipse."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    return (math.sqrt((c - 1) / coeffs.p_alpha) / N ** 2,
            math.sqrt((c - 1) / coeffs.p_beta) / N)


def in_ula_region(d_alpha, d_beta, c: float, N: int,
                  coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS):
    """Membership of offsets in the fitted quantisation ellipse (``f >= c``)."""
    return coeffs.fitted(d_alpha, d_beta, N) >= c


def ula_contour_points(c: float, N: int, count: int = 64,
                       coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> np.ndarray:
    """``count`` offsets ``(d_alpha, d_beta)`` evenly spaced in angle on the ellipse."""
    a_alpha, a_beta = ula_contour_semiaxes(c, N, coeffs)
    t = np.linspace(0, 2 * math.pi, count, endpoint=False)
    return np.column_stack([a_alpha * np.cos(t), a_beta * np.sin(t)])


# ---------------------------------------------------------------------------
# UPA ellipsoid model


@dataclass(frozen=True)
class UpaFitCoefficients:
    """Coefficients of ``f ~ 1 + p_psi dpsi^2 N^2 + p_varphi dvarphi^2 N^2 + p_rho drho^2 N^4``.

    ``shrunk`` records that some sampling rays were cut short by the domain
    boundary.
    """

    p_psi: float
    p_varphi: float
    p_rho: float
    center: Optional[UpaPoint] = None
    c_fit: Optional[float] = None
    shrunk: bool = False
    fit_info: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.p_psi < 0 and self.p_varphi < 0 and self.p_rho < 0):
            raise ValueError("UPA fit coefficients must be negative")

    def fitted(self, d_psi, d_varphi, d_rho, N):
        return (1 + self.p_psi * np.square(d_psi) * N ** 2
                + self.p_varphi * np.square(d_varphi) * N ** 2
                + self.p_rho * np.square(d_rho) * N ** 4)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_psi, self.p_varphi, self.p_rho])

    def to_dict(self) -> dict:
        return {"p_psi": self.p_psi, "p_varphi": self.p_varphi, "p_rho": self.p_rho,
                "center": None if self.center is None else
                [self.center.psi, self.center.varphi, self.center.rho],
                "c_fit": self.c_fit, "shrunk": self.shrunk,
                "fit_info": self.fit_info}

    @classmethod
    def from_dict(cls, data: dict) -> "UpaFitCoefficients":
        ctr = data.get("center")
        return cls(float(data["p_psi"]), float(data["p_varphi"]), float(data["p_rho"]),
                   None if ctr is None else UpaPoint(*map(float, ctr)),
                   None if data.get("c_fit") is None else float(data["c_fit"]),
                   bool(data.get("shrunk", False)), data.get("fit_info"))


def _upa_scale(cfg: ArrayConfig):
    """Rough correlation widths per UPA axis, used to seed brackets."""
    n, d, k = cfg.n, cfg.spacing_m, cfg.wavenumber
    return np.array([1.0 / (n * k * d), 1.0 / (n * k * d), 4.0 / (k * d * d * n * n)])


def _upa_admissible(point) -> bool:
    return point[0] ** 2 + point[1] ** 2 <= 1 + 1e-12 and point[2] >= -1e-15


def _upa_ray_limit(center, direction):
    """Largest ``t`` keeping ``center + t direction`` inside the UPA domain."""
    p0 = np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)
    t_max = math.inf
    a = d[0] ** 2 + d[1] ** 2
    if a > 0:
        b = p0[0] * d[0] + p0[1] * d[1]
        cc = p0[0] ** 2 + p0[1] ** 2 - 1
        disc = b * b - a * cc
        if disc >= 0:
            t_max = min(t_max, (-b + math.sqrt(disc)) / a)
    if d[2] < 0:
        t_max = min(t_max, -p0[2] / d[2])
    return max(t_max, 0.0)


def halfwidth(cfg: ArrayConfig, center, axis: int, c: float, sign: int = 1,
              backend=None) -> Optional[float]:
    """Distance from ``center`` along ``sign * e_axis`` to the level-``c`` set.

    Returns ``None`` when the UPA domain boundary (unit disc, ``rho >= 0``)
    is reached first.  Accuracy ``|f - c| <= 1e-6``.
    """
    center = np.asarray(center, dtype=float)
    direction = np.zeros(len(center))
    direction[axis] = sign
    if cfg.is_ula:
        t_max = None
        scale = (0.5 / cfg.n ** 2, 0.5 / cfg.n)[axis]
    else:
        t_max = _upa_ray_limit(center, direction)
        scale = 0.25 * _upa_scale(cfg)[axis]
        if t_max <= 0:
            return None

    def fn(t):
        return transform_correlation(cfg, center, center + t * direction, backend)[0]

    t = _level_radius(fn, c, min(scale, t_max if t_max else scale), t_max)
    if t is not None and abs(fn(t) - c) > _LEVEL_TOL:
        raise RuntimeError(f"level bisection failed on axis {axis} at {center}")
    return t


def _fibonacci_sphere(count):
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    az = math.pi * (1 + 5 ** 0.5) * i
    s = np.sqrt(1 - z * z)
    return np.column_stack([s * np.cos(az), s * np.sin(az), z])


def fit_upa_local(cfg: ArrayConfig, center: UpaPoint, c_level: float,
                  n_dirs: int = 32, n_radii: int = 16,
                  backend=None) -> UpaFitCoefficients:
    """Local least-squares ellipsoid fit of the UPA correlation at ``center``.

    Sampling rays follow a Fibonacci sphere stretched by the per-axis
    correlation widths.  A ray leaving the domain is reversed (the model is
    even in every offset); if both senses leave it, the ray is capped at the
    boundary and ``shrunk`` is set.
    """
    if cfg.is_ula:
        raise ValueError("fit_upa_local needs a UPA configuration")
    if not 0.8 < c_level < 1:
        raise ValueError("c_level must lie in (0.8, 1)")
    p0 = center.as_array()
    if not _upa_admissible(p0):
        raise ValueError(f"centre outside the UPA domain: {center}")
    widths = np.array([halfwidth(cfg, p0, ax, c_level, s, backend) or np.nan
                       for ax in range(3) for s in (1, -1)]).reshape(3, 2)
    widths = np.nanmax(widths, axis=1)
    widths = np.where(np.isfinite(widths), widths, _upa_scale(cfg))
    N = cfg.n
    rows, ys, shrunk = [], [], False
    for u in _fibonacci_sphere(n_dirs):
        d = u * widths
        limit = _upa_ray_limit(p0, d)
        if limit < 4:  # reaches the boundary before roughly the c level
            if _upa_ray_limit(p0, -d) > limit:
                d = -d
                limit = _upa_ray_limit(p0, d)

        def fn(t, d=d):
            return transform_correlation(cfg, p0, p0 + t * d, backend)[0]

        radii, capped = _ray_samples(fn, d, c_level, n_radii, 0.25,
                                     None if math.isinf(limit) else limit)
        shrunk |= capped
        if radii.size == 0:
            continue
        pts = p0 + radii[:, None] * d
        f = transform_correlation(cfg, p0, pts, backend)
        off = pts - p0
        rows.append(np.column_stack([off[:, 0] ** 2 * N ** 2, off[:, 1] ** 2 * N ** 2,
                                     off[:, 2] ** 2 * N ** 4]))
        ys.append(f - 1)
    if not rows or sum(len(y) for y in ys) < 8:
        raise ValueError("degenerate sample set for the ellipsoid fit")
    X = np.vstack(rows)
    y = np.concatenate(ys)
    p, *_ = np.linalg.lstsq(X, y, rcond=None)
    info = {"n_dirs": int(n_dirs), "n_radii": int(n_radii),
            "n_samples": int(X.shape[0]), "range": [float(c_level), 0.999],
            "weights": "none"}
    return UpaFitCoefficients(float(p[0]), float(p[1]), float(p[2]), center,
                              float(c_level), bool(shrunk), info)


@dataclass(frozen=True)
class ReferenceEllipsoid:
    """Per-axis minimum level-``c`` half-widths over a UPA probe grid."""

    l_psi: float
    l_varphi: float
    l_rho: float
    p_star: UpaFitCoefficients
    c: float
    n: int
    probe_grid_spec: dict
    probe_points: np.ndarray = field(repr=False, compare=False)
    probe_halfwidths: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if not (self.l_psi > 0 and self.l_varphi > 0 and self.l_rho > 0):
            raise ValueError("reference axes must be positive")

    @property
    def axes(self) -> np.ndarray:
        return np.array([self.l_psi, self.l_varphi, self.l_rho])

    def recomputed_p_star(self) -> np.ndarray:
        return p_star_from_axes(self.axes, self.c, self.n)

    def to_dict(self) -> dict:
        return {"l_psi": self.l_psi, "l_varphi": self.l_varphi, "l_rho": self.l_rho,
                "p_star": self.p_star.to_dict(), "c": self.c, "n": self.n,
                "probe_grid_spec": self.probe_grid_spec,
                "probe_points": self.probe_points.tolist(),
                "probe_halfwidths": self.probe_halfwidths.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceEllipsoid":
        return cls(float(data["l_psi"]), float(data["l_varphi"]), float(data["l_rho"]),
                   UpaFitCoefficients.from_dict(data["p_star"]), float(data["c"]),
                   int(data["n"]), dict(data["probe_grid_spec"]),
                   np.asarray(data.get("probe_points", []), dtype=float),
                   np.asarray(data.get("probe_halfwidths", []), dtype=float))


def p_star_from_axes(axes, c: float, N: int) -> np.ndarray:
    """Ellipsoid coefficients whose level-``c`` set has semi-axes ``axes``."""
    l_psi, l_varphi, l_rho = axes
    return np.array([(c - 1) / (l_psi * N) ** 2, (c - 1) / (l_varphi * N) ** 2,
                     (c - 1) / (l_rho * N * N) ** 2])


def probe_grid(cfg: ArrayConfig, probe_counts) -> np.ndarray:
    """Midpoint probe grid over the UPA box, restricted to the unit disc."""
    s_psi, s_vp, s_rho = (int(s) for s in probe_counts)
    q_rho = region_bounds(cfg).q_rho
    psi = -1 + (np.arange(s_psi) + 0.5) * 2 / s_psi
    vp = -1 + (np.arange(s_vp) + 0.5) * 2 / s_vp
    rho = (np.arange(s_rho) + 0.5) * q_rho / s_rho
    grid = np.array([(a, b, r) for a in psi for b in vp for r in rho])
    return grid[grid[:, 0] ** 2 + grid[:, 1] ** 2 <= 1]


def reference_ellipsoid(cfg: ArrayConfig, c: float, probe_counts=(9, 9, 4),
                        threads=None, backend=None) -> ReferenceEllipsoid:
    """Reference ellipsoid for UPA codebook design at correlation ``c``.

    Every probe's half-width on each axis is the smaller of its two
    directions that stay inside the domain; the reference axes are the
    per-axis minima over all probes.

    Raises
    ------
    RuntimeError
        If a probe admits neither direction on some axis.
    """
    if cfg.is_ula:
        raise ValueError("reference_ellipsoid needs a UPA configuration")
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    if min(probe_counts) < 2:
        raise ValueError("probe_counts must be >= 2 per axis")
    probes = probe_grid(cfg, probe_counts)

    def widths(point):
        out = []
        for axis in range(3):
            both = [halfwidth(cfg, point, axis, c, s, backend) for s in (1, -1)]
            both = [w for w in both if w is not None]
            if not both:
                raise RuntimeError(f"probe {point.tolist()} has no admissible "
                                   f"direction on axis {axis}")
            out.append(min(both))
        return out

    hw = np.array(ordered_map(widths, probes, threads))
    axes = hw.min(axis=0)
    p = p_star_from_axes(axes, c, cfg.n)
    spec = {"counts": [int(s) for s in probe_counts], "placement": "midpoint",
            "region": "unit disc x [0, q_rho]", "n_probes": int(len(probes)),
            "argmin": [int(i) for i in hw.argmin(axis=0)]}
    p_star = UpaFitCoefficients(float(p[0]), float(p[1]), float(p[2]), None,
                                float(c), False, {"source": "reference ellipsoid"})
    return ReferenceEllipsoid(float(axes[0]), float(axes[1]), float(axes[2]),
                              p_star, float(c), cfg.n, spec, probes, hw)
