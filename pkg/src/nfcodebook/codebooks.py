"""Codebook construction.

Proposed codebooks sample the transform domain on grids derived from the
quadratic correlation models in :mod:`nfcodebook.correlation`:

* ``ULA_UNIFORM``: a rectangular grid whose cell vertices lie on the
  level-``c`` ellipse (largest inscribed rectangle).
* ``ULA_DISLOCATION``: two interleaved rectangular lattices forming a
  hexagonal lattice whose Voronoi vertices lie on the same ellipse.
* ``UPA_UNIFORM``: a box grid whose cuboid vertices lie on the reference
  ellipsoid.

Baselines are the (2D-)DFT codebook, an equal-count grid over the
quantisation region and a Lloyd-trained codebook.

Codewords on a grid are stored by their transform-domain centres and
regenerated on demand as canonical Fresnel beams (first element real and
positive).  Trained codewords are stored as explicit vectors.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .correlation import (DEFAULT_ULA_COEFFS, ReferenceEllipsoid,
                          UlaFitCoefficients, reference_ellipsoid)
from .geometry import (ArrayConfig, BeamVector, TransformPoint, fresnel_beams,
                       region_bounds, transform_features, transform_point)


class Scheme(str, enum.Enum):
    ULA_UNIFORM = "ula_uniform"
    ULA_DISLOCATION = "ula_dislocation"
    UPA_UNIFORM = "upa_uniform"
    DFT_ULA = "dft_ula"
    DFT2D_UPA = "dft2d_upa"
    EQUAL_GRID = "equal_grid"
    LLOYD_MAX = "lloyd_max"


SCHEME_TAGS = {s: i for i, s in enumerate(Scheme)}


@dataclass(frozen=True, eq=False)
class Codeword:
    vector: BeamVector
    center: Optional[TransformPoint]
    index: int
    grid_indices: tuple


def _canonical(vectors: np.ndarray) -> np.ndarray:
    """Rotate each row so its first element is real and non-negative."""
    first = vectors[:, :1]
    mag = np.abs(first)
    rot = np.where(mag > 0, np.conj(first) / np.where(mag > 0, mag, 1), 1)
    return vectors * rot


@dataclass(eq=False)
class Codebook:
    """Ordered codeword set with its design metadata.

    Exactly one of ``centers`` (transform points, one row per codeword) and
    ``explicit_vectors`` is set.
    """

    scheme: Scheme
    cfg: ArrayConfig
    centers: Optional[np.ndarray] = None
    explicit_vectors: Optional[np.ndarray] = None
    grid_indices: Optional[np.ndarray] = None
    design_c: Optional[float] = None
    steps: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    coeffs: Optional[dict] = None
    metadata: dict = field(default_factory=dict)
    _features: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if (self.centers is None) == (self.explicit_vectors is None):
            raise ValueError("exactly one of centers and explicit_vectors is required")
        if self.centers is not None:
            self.centers = np.ascontiguousarray(self.centers, dtype=float)
            self.centers.setflags(write=False)
        else:
            ev = np.ascontiguousarray(self.explicit_vectors, dtype=complex)
            if ev.shape[1] != self.cfg.total_elements:
                raise ValueError("explicit vectors do not match the array size")
            self.explicit_vectors = ev
            ev.setflags(write=False)

    # size ------------------------------------------------------------------
    def __len__(self) -> int:
        if self.centers is not None:
            return self.centers.shape[0]
        return self.explicit_vectors.shape[0]

    @property
    def size(self) -> int:
        return len(self)

    @property
    def bits(self) -> int:
        """Feedback bits ``ceil(log2 S)``."""
        return int(math.ceil(math.log2(len(self)))) if len(self) > 1 else 0

    @property
    def has_centers(self) -> bool:
        return self.centers is not None

    # vectors ---------------------------------------------------------------
    def vectors(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        """Codeword vectors ``start:stop`` as rows of a complex matrix."""
        if self.centers is not None:
            return fresnel_beams(self.cfg, self.centers[start:stop], canonical=True)
        return self.explicit_vectors[start:stop]

    def iter_blocks(self, block: int = 4096) -> Iterator[tuple]:
        """Yield ``(start, vectors)`` blocks covering the codebook in order."""
        for start in range(0, len(self), block):
            yield start, self.vectors(start, start + block)

    def features(self) -> np.ndarray:
        """Fresnel phase features of the centres (cached)."""
        if self.centers is None:
            raise ValueError("codebook has no transform-domain centres")
        if self._features is None:
            self._features = transform_features(self.cfg, self.centers)
        return self._features

    def codeword(self, index: int) -> Codeword:
        vec = self.vectors(index, index + 1)[0]
        center = None
        if self.centers is not None:
            center = transform_point(self.cfg, self.centers[index])
        gi = () if self.grid_indices is None else tuple(int(v) for v in self.grid_indices[index])
        model = "fresnel" if self.centers is not None else "custom"
        return Codeword(BeamVector(vec, model), center, int(index), gi)

    @property
    def codewords(self) -> "CodewordSequence":
        return CodewordSequence(self)

    def describe(self) -> dict:
        """JSON-compatible summary (no vectors)."""
        return {"scheme": self.scheme.value, "array": self.cfg.to_dict(),
                "size": len(self), "bits": self.bits, "design_c": self.design_c,
                "counts": self.counts, "steps": self.steps, "coeffs": self.coeffs,
                "metadata": self.metadata}


class CodewordSequence(Sequence):
    """Lazy ordered view of a codebook's codewords."""

    def __init__(self, cb: Codebook):
        self._cb = cb

    def __len__(self):
        return len(self._cb)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._cb.codeword(j) for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self._cb.codeword(i)


# ---------------------------------------------------------------------------
# sampling steps and counts


def _check_c(c):
    if not 0 < c < 1:
        raise ValueError(f"design correlation must lie in (0, 1), got {c!r}")


def ula_uniform_steps(N: int, c: float,
                      coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS):
    """Rectangle steps ``(d_alpha, d_beta)`` inscribed in the level-``c`` ellipse.

    ``d_alpha = sqrt(2 (c-1) / p_alpha) / N^2`` and
    ``d_beta = sqrt(2 (c-1) / p_beta) / N`` (half-wavelength spacing).
    """
    _check_c(c)
    return (math.sqrt(2 * (c - 1) / coeffs.p_alpha) / N ** 2,
            math.sqrt(2 * (c - 1) / coeffs.p_beta) / N)


def ula_dislocation_steps(N: int, c: float,
                          coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS):
    """Steps ``(d_alpha_bar, d_beta_bar)`` of the interleaved lattice.

    ``d_alpha_bar = 3 sqrt((c-1) / p_alpha) / N^2`` and
    ``d_beta_bar = sqrt(3 (c-1) / p_beta) / N``.  Each sublattice has these
    steps; the second is offset by half of each.
    """
    _check_c(c)
    return (3 * math.sqrt((c - 1) / coeffs.p_alpha) / N ** 2,
            math.sqrt(3 * (c - 1) / coeffs.p_beta) / N)


def upa_steps(N: int, c: float, p_star) -> np.ndarray:
    """Cuboid steps ``(2 / (sqrt(3) N)) sqrt((c-1)/p*)`` on the angle axes and
    ``(2 / (sqrt(3) N^2)) sqrt((c-1)/p*_rho)`` on the distance axis."""
    _check_c(c)
    p = np.asarray(p_star, dtype=float)
    k = 2 / math.sqrt(3)
    return np.array([k * math.sqrt((c - 1) / p[0]) / N,
                     k * math.sqrt((c - 1) / p[1]) / N,
                     k * math.sqrt((c - 1) / p[2]) / N ** 2])


@dataclass(frozen=True)
class CodewordCount:
    """Pre-rounding and rounded codeword counts."""

    per_domain_real: dict
    per_domain: dict
    total_real: float
    total: int

    @property
    def bits(self) -> int:
        return int(math.ceil(math.log2(self.total))) if self.total > 1 else 0

    @property
    def bits_real(self) -> float:
        return math.log2(self.total_real)


def _ceil(x):
    # guard against 3.0000000000000004-style round-off on exact multiples
    return int(math.ceil(x - 1e-9))


def _ula_scaled(cfg):
    hw = cfg.half_wavelength_ratio
    return hw * hw, hw


def codeword_count(scheme, N: int, c: float, coeffs=None,
                   cfg: Optional[ArrayConfig] = None) -> CodewordCount:
    """Closed-form codeword counts of a proposed scheme.

    For the ULA schemes ``coeffs`` is a :class:`UlaFitCoefficients`
    (defaults if omitted).  For ``UPA_UNIFORM`` it is a
    :class:`ReferenceEllipsoid` (computed if omitted).  ``cfg`` defaults to a
    half-wavelength array at the default carrier.
    """
    scheme = Scheme(scheme)
    _check_c(c)
    if scheme in (Scheme.ULA_UNIFORM, Scheme.ULA_DISLOCATION):
        cfg = cfg or ArrayConfig.ula(N)
        coeffs = coeffs or DEFAULT_ULA_COEFFS
        b = region_bounds(cfg)
        sa, sb = _ula_scaled(cfg)
        if scheme is Scheme.ULA_UNIFORM:
            da, db = ula_uniform_steps(N, c, coeffs)
            ra, rb = b.q_alpha / (da * sa), b.q_beta / (db * sb)
            real = {"alpha": ra, "beta": rb}
            ints = {"alpha": _ceil(ra), "beta": _ceil(rb)}
            return CodewordCount(real, ints, ra * rb, ints["alpha"] * ints["beta"])
        da, db = ula_dislocation_steps(N, c, coeffs)
        ra, rb = b.q_alpha / (da * sa), b.q_beta / (db * sb)
        real = {"alpha": ra, "beta": rb, "sublattices": 2}
        ints = {"alpha": _ceil(ra), "beta": _ceil(rb), "sublattices": 2}
        return CodewordCount(real, ints, 2 * ra * rb, 2 * ints["alpha"] * ints["beta"])
    if scheme is Scheme.UPA_UNIFORM:
        cfg = cfg or ArrayConfig.upa(N)
        ref = coeffs if coeffs is not None else reference_ellipsoid(cfg, c)
        if not isinstance(ref, ReferenceEllipsoid):
            raise TypeError("UPA counts need a ReferenceEllipsoid")
        b = region_bounds(cfg)
        steps = upa_steps(N, c, ref.p_star.as_array())
        ranges = np.array([b.q_psi, b.q_varphi, b.q_rho])
        r = ranges / steps
        real = {"psi": r[0], "varphi": r[1], "rho": r[2]}
        ints = {k: _ceil(v) for k, v in real.items()}
        return CodewordCount(real, ints, float(np.prod(r)),
                             ints["psi"] * ints["varphi"] * ints["rho"])
    raise ValueError(f"no closed-form count for scheme {scheme.value}")


# ---------------------------------------------------------------------------
# builders


def _midpoints(lo, span, count):
    return lo + (np.arange(count) + 0.5) * span / count


def _box_grid(axes):
    """Cartesian product, first axis outermost; returns points and indices."""
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.meshgrid(*[np.arange(len(a)) for a in axes], indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    gi = np.column_stack([i.ravel() for i in idx])
    return pts, gi


def _ula_uniform_from_counts(cfg, S_a, S_b, coeffs, design_c, steps, metadata):
    b = region_bounds(cfg)
    alpha = _midpoints(0.0, b.q_alpha, S_a)
    beta = _midpoints(-1.0, b.q_beta, S_b)
    pts, gi = _box_grid([beta, alpha])
    steps = dict(steps, alpha=b.q_alpha / S_a, beta=b.q_beta / S_b)
    metadata = dict(metadata, fitted_worst_c=ula_lattice_correlation(
        cfg, Scheme.ULA_UNIFORM, S_a, S_b, coeffs))
    return Codebook(
        Scheme.ULA_UNIFORM, cfg, centers=pts[:, ::-1], grid_indices=gi[:, ::-1],
        design_c=float(design_c), steps=steps,
        counts={"alpha": int(S_a), "beta": int(S_b)},
        coeffs=coeffs.to_dict(), metadata=metadata)


def _ula_dislocation_from_counts(cfg, S_a, S_b, coeffs, design_c, steps, metadata):
    b = region_bounds(cfg)
    da, db = b.q_alpha / S_a, b.q_beta / S_b
    r, i, s = np.meshgrid(np.arange(S_b), np.arange(S_a), np.arange(2), indexing="ij")
    r, i, s = r.ravel(), i.ravel(), s.ravel()
    row = 2 * r + s
    alpha = np.clip(i * da + s * da / 2, 0.0, b.q_alpha)
    beta = np.clip(-1.0 + row * db / 2, -1.0, -1.0 + b.q_beta)
    steps = dict(steps, alpha=da, beta=db)
    metadata = dict(metadata, row_offset_alpha=da / 2, row_step_beta=db / 2,
                    fitted_worst_c=ula_lattice_correlation(
                        cfg, Scheme.ULA_DISLOCATION, S_a, S_b, coeffs))
    return Codebook(
        Scheme.ULA_DISLOCATION, cfg, centers=np.column_stack([alpha, beta]),
        grid_indices=np.column_stack([i, r, s]), design_c=float(design_c),
        steps=steps, counts={"alpha": int(S_a), "beta": int(S_b), "sublattices": 2},
        coeffs=coeffs.to_dict(), metadata=metadata)


def build_ula_uniform(cfg: ArrayConfig, c: float,
                      coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> Codebook:
    """Rectangular ULA codebook over ``[0, q_alpha] x [-1, 1]``.

    Per-domain counts are ``ceil(range / design_step)``; the realised step is
    ``range / count`` (never larger than the design step) and codewords sit
    at cell midpoints.  Order: beta outer, alpha inner.
    """
    if not cfg.is_ula:
        raise ValueError("ULA codebook needs a ULA configuration")
    cnt = codeword_count(Scheme.ULA_UNIFORM, cfg.n, c, coeffs, cfg)
    sa, sb = _ula_scaled(cfg)
    da, db = ula_uniform_steps(cfg.n, c, coeffs)
    return _ula_uniform_from_counts(
        cfg, cnt.per_domain["alpha"], cnt.per_domain["beta"], coeffs, c,
        {"design_alpha": da * sa, "design_beta": db * sb},
        {"count_real": cnt.per_domain_real, "total_real": cnt.total_real})


def build_ula_dislocation(cfg: ArrayConfig, c: float,
                          coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> Codebook:
    """Interleaved (hexagonal) ULA codebook.

    Per-domain counts ``S_alpha, S_beta`` are ``ceil(range / design_step)``
    and the realised steps are ``d_alpha = q_alpha / S_alpha`` and
    ``d_beta = 2 / S_beta``, never larger than the design steps.  Row
    ``j = 0 .. 2 S_beta - 1`` sits at ``beta = -1 + j d_beta / 2``; column
    ``i`` at ``alpha = i d_alpha``, shifted by ``d_alpha / 2`` on odd rows.
    Order: row pair, then column, then sublattice.
    """
    if not cfg.is_ula:
        raise ValueError("ULA codebook needs a ULA configuration")
    cnt = codeword_count(Scheme.ULA_DISLOCATION, cfg.n, c, coeffs, cfg)
    sa, sb = _ula_scaled(cfg)
    da, db = ula_dislocation_steps(cfg.n, c, coeffs)
    return _ula_dislocation_from_counts(
        cfg, cnt.per_domain["alpha"], cnt.per_domain["beta"], coeffs, c,
        {"design_alpha": da * sa, "design_beta": db * sb},
        {"count_real": cnt.per_domain_real, "total_real": cnt.total_real})


def build_upa_uniform(cfg: ArrayConfig, c: float,
                      ref: Optional[ReferenceEllipsoid] = None,
                      prune_invalid: bool = False) -> Codebook:
    """Box-grid UPA codebook from a reference ellipsoid.

    The grid covers ``psi, varphi in [-1, 1]`` and ``rho in [0, q_rho]``.
    Codewords outside the unit disc are kept (flagged in
    ``metadata["valid"]``) unless ``prune_invalid`` is set.  Order: psi
    outer, then varphi, then rho.
    """
    if cfg.is_ula:
        raise ValueError("UPA codebook needs a UPA configuration")
    _check_c(c)
    if ref is None:
        ref = reference_ellipsoid(cfg, c)
    if abs(ref.c - c) > 1e-12 or ref.n != cfg.n:
        raise ValueError("reference ellipsoid was computed for a different design")
    cnt = codeword_count(Scheme.UPA_UNIFORM, cfg.n, c, ref, cfg)
    b = region_bounds(cfg)
    design = upa_steps(cfg.n, c, ref.p_star.as_array())
    S = [cnt.per_domain[k] for k in ("psi", "varphi", "rho")]
    axes = [_midpoints(-1.0, b.q_psi, S[0]), _midpoints(-1.0, b.q_varphi, S[1]),
            _midpoints(0.0, b.q_rho, S[2])]
    pts, gi = _box_grid(axes)
    valid = pts[:, 0] ** 2 + pts[:, 1] ** 2 <= 1
    if prune_invalid:
        pts, gi = pts[valid], gi[valid]
        valid = valid[valid]
    return Codebook(
        Scheme.UPA_UNIFORM, cfg, centers=pts, grid_indices=gi, design_c=float(c),
        steps={"psi": b.q_psi / S[0], "varphi": b.q_varphi / S[1], "rho": b.q_rho / S[2],
               "design_psi": design[0], "design_varphi": design[1],
               "design_rho": design[2]},
        counts=dict(cnt.per_domain), coeffs=ref.p_star.to_dict(),
        metadata={"count_real": cnt.per_domain_real, "total_real": cnt.total_real,
                  "reference_axes": ref.axes.tolist(), "pruned": bool(prune_invalid),
                  "n_invalid": int((~valid).sum()), "valid": valid.tolist()})


def build_dft(cfg: ArrayConfig) -> Codebook:
    """DFT (ULA) or 2D-DFT (UPA) codebook: far-field beams on the grid
    ``-1 + 2 i / N`` of each angle axis, i.e. centres at ``alpha = 0`` or
    ``rho = 0``.  Orthonormal for half-wavelength spacing."""
    grid = -1 + 2 * np.arange(cfg.n) / cfg.n
    if cfg.is_ula:
        pts = np.column_stack([np.zeros(cfg.n), grid])
        return Codebook(Scheme.DFT_ULA, cfg, centers=pts,
                        grid_indices=np.arange(cfg.n)[:, None],
                        steps={"beta": 2 / cfg.n}, counts={"beta": cfg.n})
    pts, gi = _box_grid([grid, grid])
    pts = np.column_stack([pts, np.zeros(len(pts))])
    return Codebook(Scheme.DFT2D_UPA, cfg, centers=pts, grid_indices=gi,
                    steps={"psi": 2 / cfg.n, "varphi": 2 / cfg.n},
                    counts={"psi": cfg.n, "varphi": cfg.n})


def build_equal_grid(cfg: ArrayConfig, per_domain: int) -> Codebook:
    """Midpoint grid with ``per_domain`` points on every transform axis."""
    if per_domain < 2:
        raise ValueError("per_domain must be >= 2")
    b = region_bounds(cfg)
    P = int(per_domain)
    if cfg.is_ula:
        pts, gi = _box_grid([_midpoints(-1.0, b.q_beta, P), _midpoints(0.0, b.q_alpha, P)])
        return Codebook(Scheme.EQUAL_GRID, cfg, centers=pts[:, ::-1],
                        grid_indices=gi[:, ::-1],
                        steps={"alpha": b.q_alpha / P, "beta": b.q_beta / P},
                        counts={"alpha": P, "beta": P})
    pts, gi = _box_grid([_midpoints(-1.0, b.q_psi, P), _midpoints(-1.0, b.q_varphi, P),
                         _midpoints(0.0, b.q_rho, P)])
    return Codebook(Scheme.EQUAL_GRID, cfg, centers=pts, grid_indices=gi,
                    steps={"psi": b.q_psi / P, "varphi": b.q_varphi / P, "rho": b.q_rho / P},
                    counts={"psi": P, "varphi": P, "rho": P},
                    metadata={"valid": (pts[:, 0] ** 2 + pts[:, 1] ** 2 <= 1).tolist()})


def build_scheme(cfg: ArrayConfig, scheme, c: Optional[float] = None,
                 coeffs=None, per_domain: Optional[int] = None) -> Codebook:
    """Dispatch to the builder of ``scheme``."""
    scheme = Scheme(scheme)
    if scheme is Scheme.ULA_UNIFORM:
        return build_ula_uniform(cfg, c, coeffs or DEFAULT_ULA_COEFFS)
    if scheme is Scheme.ULA_DISLOCATION:
        return build_ula_dislocation(cfg, c, coeffs or DEFAULT_ULA_COEFFS)
    if scheme is Scheme.UPA_UNIFORM:
        return build_upa_uniform(cfg, c, coeffs)
    if scheme in (Scheme.DFT_ULA, Scheme.DFT2D_UPA):
        return build_dft(cfg)
    if scheme is Scheme.EQUAL_GRID:
        return build_equal_grid(cfg, per_domain or cfg.n)
    raise ValueError(f"scheme {scheme.value} is not grid-constructible")


def covering_radius2(b1, b2) -> float:
    """Squared covering radius of the planar lattice spanned by ``b1, b2``.

    The basis is Lagrange-Gauss reduced and oriented so the triangle
    ``(0, u, v)`` has no obtuse angle; it is then a Delaunay triangle and
    its circumradius is the covering radius.
    """
    u, v = np.asarray(b1, dtype=float), np.asarray(b2, dtype=float)
    if abs(u[0] * v[1] - u[1] * v[0]) <= 0:
        raise ValueError("degenerate lattice basis")
    if u @ u > v @ v:
        u, v = v, u
    while True:
        m = round(float(u @ v) / float(u @ u))
        v = v - m * u
        if v @ v >= u @ u:
            break
        u, v = v, u
    if u @ v < 0:
        v = -v
    a2, b2_, c2 = u @ u, v @ v, (u - v) @ (u - v)
    cross = u[0] * v[1] - u[1] * v[0]
    return float(a2 * b2_ * c2 / (4 * cross * cross))


def ula_lattice_correlation(cfg: ArrayConfig, scheme, S_a: int, S_b: int,
                            coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> float:
    """Worst-case fitted correlation of a ULA grid with realised steps.

    Coordinates are scaled so that the fitted correlation is
    ``1 - |x|^2``; the value returned is ``1 - R^2`` with ``R`` the covering
    radius of the codeword lattice (negative when the lattice is so coarse
    that the quadratic model no longer applies).
    """
    scheme = Scheme(scheme)
    b = region_bounds(cfg)
    hw = cfg.half_wavelength_ratio
    ka = cfg.n ** 2 * math.sqrt(-coeffs.p_alpha) / hw ** 2
    kb = cfg.n * math.sqrt(-coeffs.p_beta) / hw
    A, B = ka * b.q_alpha / S_a, kb * b.q_beta / S_b
    if scheme is Scheme.ULA_UNIFORM:
        return 1.0 - covering_radius2((A, 0.0), (0.0, B))
    if scheme is Scheme.ULA_DISLOCATION:
        return 1.0 - covering_radius2((A, 0.0), (A / 2, B / 2))
    raise ValueError("lattice correlation is defined for the ULA schemes")


@dataclass(frozen=True)
class BitAllocation:
    """Per-domain counts chosen to fill a bit budget."""

    scheme: Scheme
    bits: int
    alpha: int
    beta: int
    total: int
    fitted_c: float


def allocate_bits(cfg: ArrayConfig, scheme, bits: int,
                  coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> BitAllocation:
    """Best integer per-domain counts of a ULA scheme within ``2**bits`` codewords.

    Every ``S_alpha`` is tried with the largest ``S_beta`` that fits; the
    pair maximising :func:`ula_lattice_correlation` wins (ties go to the
    larger codebook, then to the smaller ``S_alpha``).
    """
    scheme = Scheme(scheme)
    if scheme not in (Scheme.ULA_UNIFORM, Scheme.ULA_DISLOCATION):
        raise ValueError("bit allocation supports the ULA schemes")
    if not cfg.is_ula:
        raise ValueError("bit allocation needs a ULA configuration")
    per = 2 if scheme is Scheme.ULA_DISLOCATION else 1
    budget = 2 ** int(bits) // per
    if budget < 1:
        raise ValueError(f"{bits} bits cannot hold a {scheme.value} codebook")
    best = None
    for S_a in range(1, budget + 1):
        S_b = budget // S_a
        if S_b < 1:
            break
        key = (ula_lattice_correlation(cfg, scheme, S_a, S_b, coeffs), per * S_a * S_b)
        if best is None or key > best[0]:
            best = (key, S_a, S_b)
    (c_fit, total), S_a, S_b = best
    return BitAllocation(scheme, int(bits), S_a, S_b, total, c_fit)


def build_for_bits(cfg: ArrayConfig, scheme, bits: int,
                   coeffs: UlaFitCoefficients = DEFAULT_ULA_COEFFS) -> Codebook:
    """ULA codebook of ``scheme`` filling a ``bits``-bit budget.

    The design correlation recorded is the fitted worst case of the chosen
    lattice.
    """
    alloc = allocate_bits(cfg, scheme, bits, coeffs)
    meta = {"bit_budget": int(bits)}
    if alloc.scheme is Scheme.ULA_UNIFORM:
        return _ula_uniform_from_counts(cfg, alloc.alpha, alloc.beta, coeffs,
                                        alloc.fitted_c, {}, meta)
    return _ula_dislocation_from_counts(cfg, alloc.alpha, alloc.beta, coeffs,
                                        alloc.fitted_c, {}, meta)


# ---------------------------------------------------------------------------
# Lloyd training


def _as_matrix(training) -> np.ndarray:
    if isinstance(training, np.ndarray):
        return np.ascontiguousarray(training, dtype=complex)
    return np.ascontiguousarray(np.stack([t.elements for t in training]), dtype=complex)


def _assign(train, codes, block=4096):
    """Best codeword index and |correlation| for every training row."""
    best = np.full(train.shape[0], -1.0)
    idx = np.zeros(train.shape[0], dtype=np.int64)
    for start in range(0, codes.shape[0], block):
        corr = np.abs(train @ codes[start:start + block].conj().T)
        j = corr.argmax(axis=1)
        v = corr[np.arange(len(j)), j]
        better = v > best
        best[better] = v[better]
        idx[better] = j[better] + start
    return idx, best


def _principal(rows):
    if rows.shape[0] == 1:
        v = rows[0]
    else:
        _, _, vh = np.linalg.svd(rows, full_matrices=False)
        v = vh[0]
    return v / np.linalg.norm(v)


def lloyd_codebook(cfg: ArrayConfig, training, S: int, max_iter: int = 50,
                   tol: float = 1e-6, seed: int = 0,
                   min_samples_per_codeword: int = 10) -> Codebook:
    """Lloyd-trained codebook maximising mean squared correlation.

    Parameters
    ----------
    training : ndarray of shape (T, N_total) or sequence of BeamVector
        Unit-norm training vectors.
    S : int
        Number of codewords.
    min_samples_per_codeword : int
        Required ratio ``T / S``; the default demands ten samples per cell.

    Notes
    -----
    Initial codewords are a seeded random subset of the training set.  Each
    iteration assigns every sample to its best codeword and replaces each
    codeword with the principal eigenvector of its cell's ``sum h h^H``.  An
    empty cell is reseeded with the worst-quantised sample not already used
    for reseeding.  Iteration stops when the mean distortion
    ``1 - |corr|^2`` improves by less than ``tol``.
    """
    train = _as_matrix(training)
    train = train / np.linalg.norm(train, axis=1, keepdims=True)
    T = train.shape[0]
    if S < 1:
        raise ValueError("S must be >= 1")
    if T < min_samples_per_codeword * S:
        raise ValueError(f"training size {T} < {min_samples_per_codeword} x S = "
                         f"{min_samples_per_codeword * S}")
    rng = np.random.default_rng(seed)
    codes = train[np.sort(rng.choice(T, size=S, replace=False))].copy()
    history = []
    prev = math.inf
    for it in range(max_iter):
        idx, best = _assign(train, codes)
        dist = float(np.mean(1 - best ** 2))
        history.append(dist)
        if prev - dist < tol or dist <= 1e-15:
            break
        prev = dist
        order = np.argsort(idx, kind="stable")
        bounds = np.searchsorted(idx[order], np.arange(S + 1))
        worst = iter(np.argsort(best, kind="stable"))
        for s in range(S):
            members = order[bounds[s]:bounds[s + 1]]
            if members.size:
                codes[s] = _principal(train[members])
            else:
                codes[s] = train[next(worst)]
    return Codebook(Scheme.LLOYD_MAX, cfg, explicit_vectors=_canonical(codes),
                    counts={"total": int(S)},
                    metadata={"training_size": int(T), "iterations": len(history),
                              "distortion_history": history, "seed": int(seed),
                              "max_iter": int(max_iter), "tol": float(tol)})
