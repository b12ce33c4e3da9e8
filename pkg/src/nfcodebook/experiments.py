"""Comparison runs: proposed codebooks against the baselines.

The ULA set holds the uniform and dislocation codebooks, each with the
per-domain counts that give the best fitted worst case inside the bit
budget, together with an
``N x N`` equal grid and a Lloyd codebook trained on random users.  The UPA
set holds the reference-ellipsoid codebook at the design correlation, an
``N x N x N`` equal grid and a Lloyd codebook.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .codebooks import (Codebook, Scheme, build_equal_grid, build_for_bits,
                        build_upa_uniform, lloyd_codebook)
from .correlation import DEFAULT_ULA_COEFFS, reference_ellipsoid
from .evaluation import (DEFAULT_SNR_GRID_DB, EvalReport, cdf_series, config_digest,
                         eval_rate_curve, quantization_correlations,
                         sample_transform_points)
from .geometry import ArrayConfig, fresnel_beams

log = logging.getLogger(__name__)

#: Offset separating training-sample streams from user streams.
TRAINING_STREAM_OFFSET = 1 << 40


@dataclass
class ComparisonSettings:
    ue_count: int = 1000
    seed: int = 0
    distribution: str = "uniform_transform"
    bits: int = 15
    design_c: float = 0.95
    lloyd_training: int = 10_000
    lloyd_max_iter: int = 20
    lloyd_tol: float = 1e-6
    probe_counts: tuple = (9, 9, 4)
    snr_grid_db: tuple = DEFAULT_SNR_GRID_DB
    coeffs: object = field(default=DEFAULT_ULA_COEFFS)


def user_channels(cfg: ArrayConfig, count: int, seed: int,
                  distribution: str = "uniform_transform", start: int = 0):
    """Transform points and unit-norm Fresnel channels of random users."""
    pts = sample_transform_points(cfg, count, seed, distribution, start)
    return pts, fresnel_beams(cfg, pts)


def train_lloyd(cfg: ArrayConfig, bits: int, settings: ComparisonSettings) -> Codebook:
    """Lloyd codebook on ``lloyd_training`` random users.

    The codebook size is ``2**bits`` capped at the training size; the
    ten-samples-per-codeword rule is relaxed to make a bit-matched run
    possible at desk scale.
    """
    T = settings.lloyd_training
    _, train = user_channels(cfg, T, settings.seed, settings.distribution,
                             start=TRAINING_STREAM_OFFSET)
    S = min(2 ** bits, T)
    cb = lloyd_codebook(cfg, train, S, settings.lloyd_max_iter, settings.lloyd_tol,
                        settings.seed, min_samples_per_codeword=1)
    cb.metadata["requested_size"] = 2 ** bits
    return cb


def ula_codebooks(cfg: ArrayConfig, settings: ComparisonSettings) -> dict:
    disl = build_for_bits(cfg, Scheme.ULA_DISLOCATION, settings.bits, settings.coeffs)
    unif = build_for_bits(cfg, Scheme.ULA_UNIFORM, settings.bits, settings.coeffs)
    log.info("bit-matched designs: uniform %s c=%.6f, dislocation %s c=%.6f",
             unif.counts, unif.design_c, disl.counts, disl.design_c)
    books = {"dislocation": disl,
             "uniform": unif,
             "lloyd": train_lloyd(cfg, settings.bits, settings),
             "equal_grid": build_equal_grid(cfg, cfg.n)}
    return books


def upa_codebooks(cfg: ArrayConfig, settings: ComparisonSettings) -> dict:
    ref = reference_ellipsoid(cfg, settings.design_c, settings.probe_counts)
    proposed = build_upa_uniform(cfg, settings.design_c, ref)
    return {"proposed": proposed,
            "lloyd": train_lloyd(cfg, proposed.bits, settings),
            "equal_grid": build_equal_grid(cfg, cfg.n)}


def run_comparison(cfg: ArrayConfig, settings: Optional[ComparisonSettings] = None,
                   codebooks: Optional[dict] = None,
                   config: Optional[dict] = None) -> tuple:
    """Build (unless given) and evaluate the comparison set.

    Returns ``(report, codebooks)``.
    """
    settings = settings or ComparisonSettings()
    if codebooks is None:
        codebooks = ula_codebooks(cfg, settings) if cfg.is_ula else upa_codebooks(cfg, settings)
    _, H = user_channels(cfg, settings.ue_count, settings.seed, settings.distribution)
    corr = {}
    for name, cb in codebooks.items():
        log.info("quantising %d users with %s (%d codewords)", len(H), name, len(cb))
        corr[name] = quantization_correlations(cb, H)
    rates = eval_rate_curve(codebooks, H, settings.snr_grid_db, correlations=corr)
    report = EvalReport(cdf={k: cdf_series(v) for k, v in corr.items()},
                        rate_curves=rates, seed=settings.seed,
                        config_digest=config_digest(config or {}),
                        primary=next(iter(codebooks)),
                        mean_correlation={k: float(np.mean(v)) for k, v in corr.items()})
    return report, codebooks
