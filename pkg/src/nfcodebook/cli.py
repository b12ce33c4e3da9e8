"""Command-line front end.

Subcommands
-----------
build     construct one codebook and write ``<scheme>.nfcb`` plus sidecar
eval      Monte-Carlo CDF and rate curves (given codebooks or the default
          comparison set)
overhead  uniform against dislocation codebook sizes over a grid of ``c``
fit       correlation-model coefficients (ULA ellipse or UPA reference
          ellipsoid)
audit     worst-case quantisation correlation of a stored codebook

Every command reads an optional flat JSON config (``--config``); unknown
keys are rejected.  ``--seed``, ``--out`` and ``--threads`` override the
matching config keys.  Exit status is 0 on success, 2 for a bad config or a
violated precondition and 3 for an I/O failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from ._parallel import set_default_threads
from .codebooks import Scheme, build_for_bits, build_scheme, lloyd_codebook
from .correlation import (DEFAULT_ULA_COEFFS, ReferenceEllipsoid, UlaFitCoefficients,
                          fit_ula_coefficients, reference_ellipsoid)
from .evaluation import (DISTRIBUTIONS, EvalReport, config_digest,
                         min_correlation_audit, overhead_curve)
from .experiments import (TRAINING_STREAM_OFFSET, ComparisonSettings, run_comparison,
                          user_channels)
from .geometry import ArrayConfig, ArrayFamily
from .storage import FormatError, dumps_json, load_codebook, save_codebook

log = logging.getLogger("nfcodebook")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(ValueError):
    """Invalid configuration or violated precondition."""


@dataclass
class RunConfig:
    """Flat run configuration; field names are the accepted config keys."""

    family: str = "ula"
    n: int = 512
    carrier_hz: float = 3.0e9
    spacing_m: Optional[float] = None
    aperture_m: Optional[float] = None
    scheme: Optional[str] = None
    design_c: float = 0.95
    bits: Optional[int] = None
    coeff_source: str = "defaults"
    coeff_file: Optional[str] = None
    fit_c_level: float = 0.9
    per_domain: Optional[int] = None
    probe_counts: list = field(default_factory=lambda: [9, 9, 4])
    ue_count: int = 1000
    seed: int = 0
    distribution: str = "uniform_transform"
    snr_min_db: float = -10.0
    snr_max_db: float = 20.0
    snr_step_db: float = 2.0
    comparison_bits: int = 15
    lloyd_size: Optional[int] = None
    lloyd_training: int = 10_000
    lloyd_max_iter: int = 20
    lloyd_tol: float = 1e-6
    c_grid: list = field(default_factory=lambda: [0.8, 0.85, 0.9, 0.95, 0.99])
    audit_density: int = 6
    audit_region: str = "physical"
    audit_exhaustive: bool = False
    threads: Optional[int] = None
    out_dir: str = "out"

    # construction --------------------------------------------------------
    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_mapping(data)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.family in ("ula", "upa"), "family must be 'ula' or 'upa'")
        need(isinstance(self.n, int) and self.n >= 2, "n must be an integer >= 2")
        need(self.carrier_hz > 0, "carrier_hz must be positive")
        need(self.spacing_m is None or self.spacing_m > 0, "spacing_m must be positive")
        need(self.aperture_m is None or self.aperture_m > 0, "aperture_m must be positive")
        if self.scheme is not None:
            need(self.scheme in {s.value for s in Scheme},
                 f"scheme must be one of {[s.value for s in Scheme]}")
        need(0 < self.design_c < 1, f"design_c must lie in (0, 1), got {self.design_c}")
        need(self.bits is None or (isinstance(self.bits, int) and 1 <= self.bits <= 30),
             "bits must be an integer in [1, 30]")
        need(self.coeff_source in ("defaults", "fitted", "file"),
             "coeff_source must be 'defaults', 'fitted' or 'file'")
        need(self.coeff_source != "file" or self.coeff_file,
             "coeff_source 'file' needs coeff_file")
        need(0.8 < self.fit_c_level < 1, "fit_c_level must lie in (0.8, 1)")
        need(self.per_domain is None or self.per_domain >= 2, "per_domain must be >= 2")
        need(len(self.probe_counts) == 3 and min(self.probe_counts) >= 2,
             "probe_counts must be three integers >= 2")
        need(isinstance(self.ue_count, int) and self.ue_count >= 1, "ue_count must be >= 1")
        need(isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64,
             "seed must be an unsigned 64-bit integer")
        need(self.distribution in DISTRIBUTIONS,
             f"distribution must be one of {list(DISTRIBUTIONS)}")
        need(self.snr_step_db > 0 and self.snr_max_db >= self.snr_min_db,
             "snr sweep needs snr_step_db > 0 and snr_max_db >= snr_min_db")
        need(isinstance(self.comparison_bits, int) and 1 <= self.comparison_bits <= 30,
             "comparison_bits must be an integer in [1, 30]")
        need(self.lloyd_size is None or self.lloyd_size >= 1, "lloyd_size must be >= 1")
        need(self.lloyd_training >= 1 and self.lloyd_max_iter >= 1 and self.lloyd_tol >= 0,
             "lloyd_training and lloyd_max_iter must be >= 1, lloyd_tol >= 0")
        need(len(self.c_grid) > 0 and all(0 < c < 1 for c in self.c_grid),
             "c_grid values must lie in (0, 1)")
        need(self.audit_density >= 4, "audit_density must be >= 4")
        need(self.audit_region in ("physical", "box"),
             "audit_region must be 'physical' or 'box'")
        need(self.threads is None or self.threads >= 1, "threads must be >= 1")

    # derived objects -----------------------------------------------------
    def array(self) -> ArrayConfig:
        return ArrayConfig.from_carrier(ArrayFamily(self.family), self.n, self.carrier_hz,
                                        self.spacing_m, self.aperture_m)

    def snr_grid_db(self) -> tuple:
        count = int(math.floor((self.snr_max_db - self.snr_min_db) / self.snr_step_db + 1e-9))
        return tuple(float(self.snr_min_db + i * self.snr_step_db) for i in range(count + 1))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Digest of the result-determining keys (not threads or out_dir)."""
        doc = self.to_dict()
        for key in ("threads", "out_dir"):
            doc.pop(key)
        return config_digest(doc)


# ---------------------------------------------------------------------------
# helpers


def _ula_coeffs(rc: RunConfig) -> UlaFitCoefficients:
    if rc.coeff_source == "defaults":
        return DEFAULT_ULA_COEFFS
    if rc.coeff_source == "fitted":
        return fit_ula_coefficients(rc.n, rc.fit_c_level)
    doc = json.loads(Path(rc.coeff_file).read_text(encoding="utf-8"))
    return UlaFitCoefficients.from_dict(doc.get("coefficients", doc))


def _upa_reference(rc: RunConfig, cfg: ArrayConfig) -> ReferenceEllipsoid:
    if rc.coeff_source == "file":
        doc = json.loads(Path(rc.coeff_file).read_text(encoding="utf-8"))
        ref = ReferenceEllipsoid.from_dict(doc.get("reference_ellipsoid", doc))
        if ref.n != cfg.n or abs(ref.c - rc.design_c) > 1e-12:
            raise ConfigError("coefficient file was computed for a different design")
        return ref
    return reference_ellipsoid(cfg, rc.design_c, tuple(rc.probe_counts), rc.threads)


def _settings(rc: RunConfig) -> ComparisonSettings:
    return ComparisonSettings(
        ue_count=rc.ue_count, seed=rc.seed, distribution=rc.distribution,
        bits=rc.comparison_bits, design_c=rc.design_c, lloyd_training=rc.lloyd_training,
        lloyd_max_iter=rc.lloyd_max_iter, lloyd_tol=rc.lloyd_tol,
        probe_counts=tuple(rc.probe_counts), snr_grid_db=rc.snr_grid_db(),
        coeffs=_ula_coeffs(rc) if rc.family == "ula" else DEFAULT_ULA_COEFFS)


def _out_dir(rc: RunConfig) -> Path:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(doc) -> None:
    sys.stdout.write(dumps_json(doc))
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# commands


def cmd_build(rc: RunConfig, args) -> int:
    cfg = rc.array()
    if rc.scheme is None:
        raise ConfigError("build needs 'scheme' in the config")
    scheme = Scheme(rc.scheme)
    ula_schemes = (Scheme.ULA_UNIFORM, Scheme.ULA_DISLOCATION, Scheme.DFT_ULA)
    if cfg.is_ula and scheme in (Scheme.UPA_UNIFORM, Scheme.DFT2D_UPA):
        raise ConfigError(f"scheme {scheme.value} needs family 'upa'")
    if not cfg.is_ula and scheme in ula_schemes:
        raise ConfigError(f"scheme {scheme.value} needs family 'ula'")
    if scheme is Scheme.LLOYD_MAX:
        size = rc.lloyd_size or min(2 ** (rc.bits or rc.comparison_bits), rc.lloyd_training)
        _, train = user_channels(cfg, rc.lloyd_training, rc.seed, rc.distribution,
                                 start=TRAINING_STREAM_OFFSET)
        cb = lloyd_codebook(cfg, train, size, rc.lloyd_max_iter, rc.lloyd_tol, rc.seed,
                            min_samples_per_codeword=1)
    elif rc.bits is not None and scheme in (Scheme.ULA_UNIFORM, Scheme.ULA_DISLOCATION):
        cb = build_for_bits(cfg, scheme, rc.bits, _ula_coeffs(rc))
    elif scheme is Scheme.UPA_UNIFORM:
        cb = build_scheme(cfg, scheme, rc.design_c, _upa_reference(rc, cfg))
    elif scheme in (Scheme.ULA_UNIFORM, Scheme.ULA_DISLOCATION):
        cb = build_scheme(cfg, scheme, rc.design_c, _ula_coeffs(rc))
    else:
        cb = build_scheme(cfg, scheme, per_domain=rc.per_domain)
    out = _out_dir(rc)
    path, side = save_codebook(cb, out / f"{scheme.value}.nfcb")
    log.info("wrote %s and %s", path, side)
    _emit({"scheme": scheme.value, "counts": cb.counts, "size": len(cb), "bits": cb.bits,
           "design_c": cb.design_c, "file": str(path), "sidecar": str(side)})
    return EXIT_OK


def cmd_eval(rc: RunConfig, args) -> int:
    cfg = rc.array()
    settings = _settings(rc)
    books = None
    if args.codebooks:
        books = {}
        for p in args.codebooks:
            cb = load_codebook(p)
            if cb.cfg != cfg:
                raise ConfigError(f"{p}: codebook array {cb.cfg.to_dict()} does not match "
                                  f"the configured array {cfg.to_dict()}")
            name = Path(p).name.split(".")[0]
            if name in books:
                raise ConfigError(f"duplicate codebook name {name!r}")
            books[name] = cb
    report, books = run_comparison(cfg, settings, books)
    report.config_digest = rc.digest()
    paths = report.write(_out_dir(rc))
    for p in paths:
        log.info("wrote %s", p)
    _emit({"mean_correlation": report.mean_correlation,
           "sizes": {k: len(v) for k, v in books.items()},
           "files": [str(p) for p in paths]})
    return EXIT_OK


def cmd_overhead(rc: RunConfig, args) -> int:
    cfg = rc.array()
    if not cfg.is_ula:
        raise ConfigError("overhead needs family 'ula'")
    rows = overhead_curve(cfg, rc.c_grid, _ula_coeffs(rc))
    report = EvalReport(overhead=rows, seed=rc.seed, config_digest=rc.digest())
    paths = report.write(_out_dir(rc))
    for p in paths:
        log.info("wrote %s", p)
    _emit({"rows": [{"c": r.c, "uniform_count": r.uniform_count,
                     "dislocation_count": r.dislocation_count, "ratio": r.ratio}
                    for r in rows]})
    return EXIT_OK


def cmd_fit(rc: RunConfig, args) -> int:
    cfg = rc.array()
    if cfg.is_ula:
        coeffs = fit_ula_coefficients(rc.n, rc.fit_c_level)
        doc = {"family": "ula", "coefficients": coeffs.to_dict()}
    else:
        ref = reference_ellipsoid(cfg, rc.design_c, tuple(rc.probe_counts), rc.threads)
        doc = {"family": "upa", "reference_ellipsoid": ref.to_dict()}
    doc["array"] = cfg.to_dict()
    doc["code_version"] = __version__
    path = _out_dir(rc) / "coefficients.json"
    path.write_text(dumps_json(doc), encoding="utf-8")
    log.info("wrote %s", path)
    _emit(doc)
    return EXIT_OK


def cmd_audit(rc: RunConfig, args) -> int:
    cb = load_codebook(args.codebook)
    rec = min_correlation_audit(cb, rc.audit_density, rc.audit_region,
                                exhaustive=rc.audit_exhaustive, threads=rc.threads)
    doc = {"codebook": str(args.codebook), "scheme": cb.scheme.value,
           "design_c": cb.design_c, "min_correlation": rec.correlation,
           "ue_transform": rec.ue_transform.tolist(),
           "mean_correlation": rec.mean_correlation, "n_points": rec.n_points,
           "spacing": list(rec.spacing), "method": rec.method,
           "grid_density": rc.audit_density, "region": rc.audit_region}
    path = _out_dir(rc) / "audit.json"
    path.write_text(dumps_json(doc), encoding="utf-8")
    log.info("wrote %s", path)
    _emit(doc)
    return EXIT_OK


COMMANDS = {"build": cmd_build, "eval": cmd_eval, "overhead": cmd_overhead,
            "fit": cmd_fit, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser = argparse.ArgumentParser(prog="nfcodebook", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="construct and store a codebook")
    p = sub.add_parser("eval", parents=[common], help="Monte-Carlo CDF and rate curves")
    p.add_argument("codebooks", nargs="*", help="NFCB files (default: comparison set)")
    sub.add_parser("overhead", parents=[common], help="codebook size against c")
    sub.add_parser("fit", parents=[common], help="correlation-model coefficients")
    p = sub.add_parser("audit", parents=[common], help="worst-case correlation audit")
    p.add_argument("codebook", help="NFCB file")
    return parser


def _run_config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "out_dir": args.out, "threads": args.threads}
    for key, value in overrides.items():
        if value is not None:
            setattr(rc, key, value)
    rc.validate()
    return rc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rc = _run_config(args)
        if rc.threads is not None:
            set_default_threads(rc.threads)
        return COMMANDS[args.command](rc, args)
    except FormatError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (ConfigError, ValueError, TypeError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
