"""Array geometry, near-field channel models and transform coordinates.

Conventions
-----------
* A ULA lies on the y axis with element ``n`` (1-based) at
  ``y_n = (n - (N+1)/2) d``; the user sits at ``(r cos(theta), r sin(theta))``.
* A UPA lies in the xy plane with elements ``(m, n)`` stored row-major,
  flat index ``(m-1) N + (n-1)``, ``x`` varying along ``m``.  The user sits at
  ``r (sin(theta)cos(phi), sin(theta)sin(phi), cos(theta))``.
* A beam vector element has phase ``-k (r_n - r)``; it is the response
  normalised to unit Euclidean norm.
* Transform coordinates: ``alpha = lambda cos^2(theta) / (4 r)`` and
  ``beta = sin(theta)`` for a ULA; ``psi = sin(theta)cos(phi)``,
  ``varphi = sin(theta)sin(phi)`` and ``rho = 1/r`` for a UPA.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_HZ = 3.0e9

#: Model flags accepted by :func:`beam_focusing` and :func:`channel`.
MODELS = ("exact", "fresnel")


class ArrayFamily(str, enum.Enum):
    ULA = "ula"
    UPA = "upa"


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna array description.

    Parameters
    ----------
    family : ArrayFamily
        Linear (``ULA``) or square planar (``UPA``) array.
    n : int
        Elements per axis; a UPA has ``n**2`` elements.
    spacing_m : float
        Inter-element spacing in metres.
    wavelength_m : float
        Carrier wavelength in metres.
    aperture_m : float, optional
        Override for the aperture ``D`` used by :func:`region_bounds`.
        Defaults to the per-axis aperture ``(n - 1) * spacing_m``.
    """

    family: ArrayFamily
    n: int
    spacing_m: float
    wavelength_m: float
    aperture_m: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", ArrayFamily(self.family))
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if not (self.spacing_m > 0 and math.isfinite(self.spacing_m)):
            raise ValueError("spacing_m must be positive")
        if not (self.wavelength_m > 0 and math.isfinite(self.wavelength_m)):
            raise ValueError("wavelength_m must be positive")
        if self.aperture_m is not None and not self.aperture_m > 0:
            raise ValueError("aperture_m override must be positive")

    # factories -----------------------------------------------------------
    @classmethod
    def from_carrier(cls, family, n, carrier_hz=DEFAULT_CARRIER_HZ,
                     spacing_m=None, aperture_m=None) -> "ArrayConfig":
        """Build from a carrier frequency; spacing defaults to half a wavelength."""
        if not carrier_hz > 0:
            raise ValueError("carrier_hz must be positive")
        lam = SPEED_OF_LIGHT / carrier_hz
        return cls(family, n, lam / 2 if spacing_m is None else spacing_m, lam,
                   aperture_m)

    @classmethod
    def ula(cls, n, carrier_hz=DEFAULT_CARRIER_HZ, spacing_m=None) -> "ArrayConfig":
        return cls.from_carrier(ArrayFamily.ULA, n, carrier_hz, spacing_m)

    @classmethod
    def upa(cls, n, carrier_hz=DEFAULT_CARRIER_HZ, spacing_m=None) -> "ArrayConfig":
        return cls.from_carrier(ArrayFamily.UPA, n, carrier_hz, spacing_m)

    # derived quantities ----------------------------------------------------
    @property
    def carrier_hz(self) -> float:
        return SPEED_OF_LIGHT / self.wavelength_m

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength_m

    @property
    def aperture(self) -> float:
        """Aperture ``D`` in metres (per axis for a UPA)."""
        if self.aperture_m is not None:
            return self.aperture_m
        return (self.n - 1) * self.spacing_m

    @property
    def total_elements(self) -> int:
        return self.n if self.family is ArrayFamily.ULA else self.n * self.n

    @property
    def is_ula(self) -> bool:
        return self.family is ArrayFamily.ULA

    @property
    def half_wavelength_ratio(self) -> float:
        """``lambda / (2 d)``; equal to one for half-wavelength spacing."""
        return self.wavelength_m / (2 * self.spacing_m)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "n": self.n,
                "spacing_m": self.spacing_m, "wavelength_m": self.wavelength_m,
                "aperture_m": self.aperture_m}

    @classmethod
    def from_dict(cls, data: dict) -> "ArrayConfig":
        return cls(ArrayFamily(data["family"]), int(data["n"]),
                   float(data["spacing_m"]), float(data["wavelength_m"]),
                   None if data.get("aperture_m") is None else float(data["aperture_m"]))


@dataclass(frozen=True)
class PhysicalPosition:
    """User location; ``r_m = inf`` denotes the far-field limit."""

    r_m: float
    theta_rad: float
    phi_rad: float = 0.0

    def __post_init__(self):
        if not self.r_m > 0:
            raise ValueError(f"r_m must be positive, got {self.r_m!r}")
        if not -math.pi / 2 - 1e-12 <= self.theta_rad <= math.pi / 2 + 1e-12:
            raise ValueError("theta_rad must lie in [-pi/2, pi/2]")
        if not -1e-12 <= self.phi_rad <= math.pi + 1e-12:
            raise ValueError("phi_rad must lie in [0, pi]")


@dataclass(frozen=True)
class UlaPoint:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if abs(self.beta) > 1 + 1e-12:
            raise ValueError(f"|beta| must not exceed 1, got {self.beta!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta])


@dataclass(frozen=True)
class UpaPoint:
    psi: float
    varphi: float
    rho: float

    def __post_init__(self):
        if abs(self.psi) > 1 + 1e-12 or abs(self.varphi) > 1 + 1e-12:
            raise ValueError("psi and varphi must lie in [-1, 1]")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.varphi, self.rho])


TransformPoint = Union[UlaPoint, UpaPoint]


def transform_point(cfg: ArrayConfig, values) -> TransformPoint:
    """Wrap a coordinate row (2 values for a ULA, 3 for a UPA)."""
    values = [float(v) for v in values]
    return UlaPoint(*values) if cfg.is_ula else UpaPoint(*values)


@dataclass(frozen=True, eq=False)
class BeamVector:
    """Unit-norm array response.

    ``model`` is one of ``"exact"``, ``"fresnel"``, ``"far-field"`` or
    ``"custom"`` (e.g. trained codewords).
    """

    elements: np.ndarray
    model: str = "custom"
    position: Optional[PhysicalPosition] = None

    def __len__(self):
        return self.elements.shape[0]


@dataclass(frozen=True, eq=False)
class ChannelVector:
    """``h = sqrt(total_elements) * gain * beam``."""

    elements: np.ndarray
    gain: complex
    beam: BeamVector = field(repr=False)


@dataclass(frozen=True)
class RegionBounds:
    """Quantisation region of an array.

    ``q_alpha`` and ``q_beta`` (ULA) or ``q_psi``, ``q_varphi`` and ``q_rho``
    (UPA) are the ranges of the transform axes; the ULA alpha axis spans
    ``[0, q_alpha]``, the beta axis ``[-1, 1]``, the UPA angle axes ``[-1, 1]``
    and rho ``[0, q_rho]``.  ``alpha_fresnel`` is ``lambda / (4 r_min)``,
    the largest alpha a user beyond ``fresnel_min_r`` can have.
    """

    aperture_m: float
    fresnel_min_r: float
    rayleigh_r: float
    q_alpha: Optional[float] = None
    q_beta: Optional[float] = None
    alpha_fresnel: Optional[float] = None
    q_psi: Optional[float] = None
    q_varphi: Optional[float] = None
    q_rho: Optional[float] = None

    def lower(self) -> np.ndarray:
        if self.q_alpha is not None:
            return np.array([0.0, -1.0])
        return np.array([-1.0, -1.0, 0.0])

    def upper(self) -> np.ndarray:
        if self.q_alpha is not None:
            return np.array([self.q_alpha, -1.0 + self.q_beta])
        return np.array([-1.0 + self.q_psi, -1.0 + self.q_varphi, self.q_rho])

    def contains(self, points, tol=1e-12) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower() - tol) & (pts <= self.upper() + tol), axis=1)

    def physical(self, points, tol=1e-12) -> np.ndarray:
        """Mask of points reachable by a user at ``r >= fresnel_min_r``."""
        pts = np.atleast_2d(points)
        ok = self.contains(pts, tol)
        if self.q_alpha is not None:
            return ok & (pts[:, 0] <= self.alpha_fresnel * (1 - pts[:, 1] ** 2) + tol)
        return ok & (pts[:, 0] ** 2 + pts[:, 1] ** 2 <= 1 + tol)


# ---------------------------------------------------------------------------
# geometry


def _centred_index(n):
    return np.arange(1, n + 1, dtype=float) - (n + 1) / 2


def element_coordinates(cfg: ArrayConfig) -> np.ndarray:
    """Element positions in metres.

    Returns an ``(N, 2)`` array of ``(x, y)`` for a ULA (``x = 0``) and an
    ``(N*N, 3)`` array of ``(x, y, z)`` for a UPA (``z = 0``), row-major.
    """
    c = _centred_index(cfg.n) * cfg.spacing_m
    if cfg.is_ula:
        return np.column_stack([np.zeros_like(c), c])
    x = np.repeat(c, cfg.n)
    y = np.tile(c, cfg.n)
    return np.column_stack([x, y, np.zeros_like(x)])


def _unit_direction(cfg, ue):
    if cfg.is_ula:
        return np.array([math.cos(ue.theta_rad), math.sin(ue.theta_rad)])
    st = math.sin(ue.theta_rad)
    return np.array([st * math.cos(ue.phi_rad), st * math.sin(ue.phi_rad),
                     math.cos(ue.theta_rad)])


def _excess_exact(cfg, ue, coords):
    """``r_n - r`` evaluated without cancellation."""
    proj = coords @ _unit_direction(cfg, ue)
    if math.isinf(ue.r_m):
        return -proj
    sq = np.einsum("ij,ij->i", coords, coords)
    r = ue.r_m
    rn = np.sqrt(np.maximum(r * r - 2 * r * proj + sq, 0.0))
    return (sq - 2 * r * proj) / (rn + r)


def _excess_fresnel(cfg, ue, coords):
    """Second-order expansion of ``r_n - r``."""
    inv_r = 0.0 if math.isinf(ue.r_m) else 1.0 / ue.r_m
    if cfg.is_ula:
        y = coords[:, 1]
        s, c = math.sin(ue.theta_rad), math.cos(ue.theta_rad)
        return -s * y + c * c * y * y * inv_r / 2
    x, y = coords[:, 0], coords[:, 1]
    st = math.sin(ue.theta_rad)
    psi, vp = st * math.cos(ue.phi_rad), st * math.sin(ue.phi_rad)
    return (-psi * x - vp * y + (1 - psi * psi) * x * x * inv_r / 2
            + (1 - vp * vp) * y * y * inv_r / 2 - psi * vp * x * y * inv_r)


def exact_distances(cfg: ArrayConfig, ue: PhysicalPosition) -> np.ndarray:
    """Euclidean distance from every element to the user."""
    return ue.r_m + _excess_exact(cfg, ue, element_coordinates(cfg))


def fresnel_distances(cfg: ArrayConfig, ue: PhysicalPosition) -> np.ndarray:
    """Second-order (Fresnel) distance from every element to the user."""
    return ue.r_m + _excess_fresnel(cfg, ue, element_coordinates(cfg))


def exact_distance(cfg: ArrayConfig, antenna_index, ue: PhysicalPosition):
    """Distance from element ``antenna_index`` (0-based flat index, or array)."""
    return exact_distances(cfg, ue)[antenna_index]


def fresnel_distance(cfg: ArrayConfig, antenna_index, ue: PhysicalPosition):
    """Fresnel-approximated distance from element ``antenna_index``."""
    return fresnel_distances(cfg, ue)[antenna_index]


def beam_focusing(cfg: ArrayConfig, ue: PhysicalPosition,
                  model: str = "fresnel") -> BeamVector:
    """Near-field beam focusing vector; far-field steering when ``r`` is infinite."""
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    if math.isinf(ue.r_m):
        return far_field_steering(cfg, ue.theta_rad, ue.phi_rad)
    coords = element_coordinates(cfg)
    excess = (_excess_exact if model == "exact" else _excess_fresnel)(cfg, ue, coords)
    vec = np.exp(-1j * cfg.wavenumber * excess) / math.sqrt(cfg.total_elements)
    return BeamVector(vec, model, ue)


def far_field_steering(cfg: ArrayConfig, theta_rad: float,
                       phi_rad: Optional[float] = None) -> BeamVector:
    """Plane-wave steering vector; for a UPA it is ``a_x kron a_y``."""
    k = cfg.wavenumber
    c = _centred_index(cfg.n) * cfg.spacing_m
    st = math.sin(theta_rad)
    if cfg.is_ula:
        vec = np.exp(1j * k * st * c) / math.sqrt(cfg.n)
        pos = PhysicalPosition(math.inf, theta_rad)
    else:
        phi = 0.0 if phi_rad is None else phi_rad
        ax = np.exp(1j * k * st * math.cos(phi) * c) / math.sqrt(cfg.n)
        ay = np.exp(1j * k * st * math.sin(phi) * c) / math.sqrt(cfg.n)
        vec = np.kron(ax, ay)
        pos = PhysicalPosition(math.inf, theta_rad, phi)
    return BeamVector(vec, "far-field", pos)


# ---------------------------------------------------------------------------
# transform coordinates


def to_transform(cfg: ArrayConfig, ue: PhysicalPosition) -> TransformPoint:
    """Map a physical position to transform coordinates."""
    inv_r = 0.0 if math.isinf(ue.r_m) else 1.0 / ue.r_m
    st = math.sin(ue.theta_rad)
    if cfg.is_ula:
        alpha = cfg.wavelength_m * math.cos(ue.theta_rad) ** 2 * inv_r / 4
        return UlaPoint(alpha, st)
    return UpaPoint(st * math.cos(ue.phi_rad), st * math.sin(ue.phi_rad), inv_r)


def from_transform(cfg: ArrayConfig, tp: TransformPoint) -> PhysicalPosition:
    """Inverse of :func:`to_transform`.

    ``alpha = 0`` or ``rho = 0`` map to ``r = inf``.  At ``|beta| = 1`` (ULA)
    the distance is unobservable and ``alpha`` must be zero; ``r = inf`` is
    returned.  For a UPA the angle pair is chosen with ``phi`` in ``[0, pi]``
    and ``theta`` carrying the sign.

    Raises
    ------
    ValueError
        On ``|beta| > 1`` or ``psi**2 + varphi**2 > 1``.
    """
    if cfg.is_ula:
        alpha, beta = float(tp.alpha), float(tp.beta)
        if abs(beta) > 1 + 1e-12:
            raise ValueError(f"|beta| > 1: {beta!r}")
        beta = max(-1.0, min(1.0, beta))
        cos2 = 1.0 - beta * beta
        if alpha == 0:
            r = math.inf
        elif cos2 <= 0:
            raise ValueError("alpha must be zero at |beta| = 1")
        else:
            r = cfg.wavelength_m * cos2 / (4 * alpha)
        return PhysicalPosition(r, math.asin(beta))
    psi, vp, rho = float(tp.psi), float(tp.varphi), float(tp.rho)
    s2 = psi * psi + vp * vp
    if s2 > 1 + 1e-12:
        raise ValueError(f"psi^2 + varphi^2 > 1: {s2!r}")
    s = math.sqrt(min(s2, 1.0))
    phi = math.atan2(vp, psi) if s > 0 else 0.0
    if phi < 0:
        phi += math.pi
        s = -s
    r = math.inf if rho == 0 else 1.0 / rho
    return PhysicalPosition(r, math.asin(s), phi)


def region_bounds(cfg: ArrayConfig) -> RegionBounds:
    """Quantisation region for users beyond the Fresnel lower bound.

    ``fresnel_min_r = sqrt(0.62 D^3 / lambda)`` and ``rayleigh_r = 2 D^2 /
    lambda``.  The ULA alpha range is ``q_alpha = (lambda / (2 d N))^1.5``,
    which is ``N^-1.5`` at half-wavelength spacing and slightly exceeds
    ``alpha_fresnel`` for ``N >= 16``; it is raised to ``alpha_fresnel`` for
    smaller arrays so the region beyond ``fresnel_min_r`` is always covered.
    The UPA rho range is ``1 / fresnel_min_r``.
    """
    lam = cfg.wavelength_m
    D = cfg.aperture
    r_min = math.sqrt(0.62 * D ** 3 / lam)
    rayleigh = 2 * D * D / lam
    if cfg.is_ula:
        alpha_fresnel = lam / (4 * r_min)
        q_alpha = max((cfg.half_wavelength_ratio / cfg.n) ** 1.5, alpha_fresnel)
        return RegionBounds(D, r_min, rayleigh, q_alpha=q_alpha, q_beta=2.0,
                            alpha_fresnel=alpha_fresnel)
    return RegionBounds(D, r_min, rayleigh, q_psi=2.0, q_varphi=2.0,
                        q_rho=1.0 / r_min)


def channel(cfg: ArrayConfig, ue: PhysicalPosition, eta: float = 1.0,
            model: str = "fresnel") -> ChannelVector:
    """Line-of-sight channel ``sqrt(N_total) g b`` with ``g = sqrt(eta) e^{-jkr} / r``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if math.isinf(ue.r_m):
        raise ValueError("channel requires a finite distance")
    beam = beam_focusing(cfg, ue, model)
    gain = math.sqrt(eta) * np.exp(-1j * cfg.wavenumber * ue.r_m) / ue.r_m
    return ChannelVector(math.sqrt(cfg.total_elements) * gain * beam.elements,
                         complex(gain), beam)


# ---------------------------------------------------------------------------
# vectorised transform-domain beams


def transform_features(cfg: ArrayConfig, points) -> np.ndarray:
    """Phase coefficients of Fresnel beams at transform points.

    The Fresnel beam at a point has element phase ``F . basis(u)`` over the
    centred element indices: ``basis = (u, u^2)`` for a ULA and
    ``(u, v, u^2, v^2, u v)`` for a UPA.  Correlation between two beams is
    therefore a function of the feature difference only.

    Parameters
    ----------
    points : array_like, shape (k, 2) or (k, 3)
        ``(alpha, beta)`` rows for a ULA or ``(psi, varphi, rho)`` for a UPA.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k, d, lam = cfg.wavenumber, cfg.spacing_m, cfg.wavelength_m
    if cfg.is_ula:
        if pts.shape[1] != 2:
            raise ValueError("ULA points need 2 columns")
        return np.column_stack([k * d * pts[:, 1],
                                -4 * math.pi * d * d * pts[:, 0] / (lam * lam)])
    if pts.shape[1] != 3:
        raise ValueError("UPA points need 3 columns")
    psi, vp, rho = pts.T
    kd2 = k * d * d
    return np.column_stack([k * d * psi, k * d * vp,
                            -kd2 * rho * (1 - psi * psi) / 2,
                            -kd2 * rho * (1 - vp * vp) / 2,
                            kd2 * rho * psi * vp])


def phase_basis(cfg: ArrayConfig) -> np.ndarray:
    """Element basis matching :func:`transform_features`, shape (F, N_total)."""
    u = _centred_index(cfg.n)
    if cfg.is_ula:
        return np.stack([u, u * u])
    uu = np.repeat(u, cfg.n)
    vv = np.tile(u, cfg.n)
    return np.stack([uu, vv, uu * uu, vv * vv, uu * vv])


def fresnel_beams(cfg: ArrayConfig, points, canonical: bool = False) -> np.ndarray:
    """Fresnel beam vectors at transform points as rows of a complex matrix.

    With ``canonical=True`` each row is rotated so its first element is real
    and positive.
    """
    feats = transform_features(cfg, points)
    basis = phase_basis(cfg)
    phase = feats @ basis
    if canonical:
        phase -= phase[:, :1]
    return np.exp(1j * phase) / math.sqrt(cfg.total_elements)
