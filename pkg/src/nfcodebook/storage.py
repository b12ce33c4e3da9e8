"""Binary codebook container (``NFCB``) and its JSON sidecar.

Layout (little-endian throughout)::

    magic        4s    b"NFCB"
    version      u16
    family       u8    0 = ULA, 1 = UPA
    n            u32
    spacing_m    f64
    wavelength_m f64
    aperture_m   f64   NaN when not overridden
    scheme       u8    index into Scheme
    design_c     f64   NaN when absent
    n_counts     u8    then n_counts x (u8 name length, name, u32 value)
    size         u32   number of codewords S
    payload      u8    0 = centres, 1 = explicit vectors
    dim          u8    centre dimension (2 or 3) or 0
    centres      S x dim f64              (payload 0)
    n_total      u32, S x n_total x 2 f64 (payload 1: real, imaginary)
    gi_dim       u8    then S x gi_dim i32 grid indices

Centres are stored instead of vectors so files grow as ``O(S)``; vectors are
regenerated on load.  Trained codebooks have no centres and store vectors.
The sidecar holds the remaining metadata (steps, coefficients, design
notes) and the SHA-256 of the binary.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .codebooks import SCHEME_TAGS, Codebook, Scheme
from .geometry import ArrayConfig, ArrayFamily

MAGIC = b"NFCB"
VERSION = 1
_SCHEMES = list(Scheme)
_FAMILIES = [ArrayFamily.ULA, ArrayFamily.UPA]


class FormatError(ValueError):
    """Raised on malformed codebook files."""


def _nan_if_none(x):
    return math.nan if x is None else float(x)


def encode_codebook(cb: Codebook) -> bytes:
    cfg = cb.cfg
    parts = [MAGIC, struct.pack("<H", VERSION),
             struct.pack("<BIddd", _FAMILIES.index(cfg.family), cfg.n, cfg.spacing_m,
                         cfg.wavelength_m, _nan_if_none(cfg.aperture_m)),
             struct.pack("<Bd", SCHEME_TAGS[cb.scheme], _nan_if_none(cb.design_c))]
    counts = [(k, int(v)) for k, v in cb.counts.items()]
    parts.append(struct.pack("<B", len(counts)))
    for name, value in counts:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<B", len(raw)) + raw + struct.pack("<I", value))
    parts.append(struct.pack("<I", len(cb)))
    if cb.has_centers:
        dim = cb.centers.shape[1]
        parts.append(struct.pack("<BB", 0, dim))
        parts.append(cb.centers.astype("<f8").tobytes())
    else:
        vec = cb.explicit_vectors
        parts.append(struct.pack("<BBI", 1, 0, vec.shape[1]))
        parts.append(np.stack([vec.real, vec.imag], axis=-1).astype("<f8").tobytes())
    gi = cb.grid_indices
    if gi is None:
        parts.append(struct.pack("<B", 0))
    else:
        gi = np.asarray(gi)
        parts.append(struct.pack("<B", gi.shape[1]))
        parts.append(gi.astype("<i4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("truncated codebook file")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise FormatError("truncated codebook file")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return out.copy()


def decode_codebook(data: bytes, sidecar: dict | None = None) -> Codebook:
    r = _Reader(data)
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise FormatError("not an NFCB file")
    (version,) = r.take("<H")
    if version != VERSION:
        raise FormatError(f"unsupported NFCB version {version}")
    fam, n, spacing, lam, aperture = r.take("<BIddd")
    if fam >= len(_FAMILIES):
        raise FormatError("bad array family tag")
    cfg = ArrayConfig(_FAMILIES[fam], n, spacing, lam,
                      None if math.isnan(aperture) else aperture)
    tag, design_c = r.take("<Bd")
    if tag >= len(_SCHEMES):
        raise FormatError("bad scheme tag")
    (n_counts,) = r.take("<B")
    counts = {}
    for _ in range(n_counts):
        (ln,) = r.take("<B")
        (name,) = r.take(f"<{ln}s")
        (value,) = r.take("<I")
        counts[name.decode("utf-8")] = value
    (size,) = r.take("<I")
    payload, dim = r.take("<BB")
    centers = vectors = None
    if payload == 0:
        centers = r.array("<f8", size * dim).reshape(size, dim)
    elif payload == 1:
        (n_total,) = r.take("<I")
        raw = r.array("<f8", size * n_total * 2).reshape(size, n_total, 2)
        vectors = raw[..., 0] + 1j * raw[..., 1]
    else:
        raise FormatError("bad payload tag")
    (gi_dim,) = r.take("<B")
    gi = r.array("<i4", size * gi_dim).reshape(size, gi_dim).astype(np.int64) if gi_dim else None
    if r.pos != len(data):
        raise FormatError("trailing bytes in codebook file")
    side = sidecar or {}
    return Codebook(_SCHEMES[tag], cfg, centers=centers, explicit_vectors=vectors,
                    grid_indices=gi,
                    design_c=None if math.isnan(design_c) else design_c,
                    steps=side.get("steps", {}), counts=counts,
                    coeffs=side.get("coeffs"), metadata=side.get("metadata", {}))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def sidecar_document(cb: Codebook, payload: bytes) -> dict:
    doc = cb.describe()
    doc.update({"format": "NFCB", "version": VERSION,
                "sha256": hashlib.sha256(payload).hexdigest()})
    return doc


def dumps_json(doc) -> str:
    """Deterministic JSON text; floats use the shortest round-trip repr."""
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_codebook(cb: Codebook, path) -> tuple[Path, Path]:
    """Write ``path`` (binary) and ``path.json`` (sidecar)."""
    path = Path(path)
    payload = encode_codebook(cb)
    path.write_bytes(payload)
    side = sidecar_path(path)
    side.write_text(dumps_json(sidecar_document(cb, payload)), encoding="utf-8")
    return path, side


def load_codebook(path) -> Codebook:
    """Read a codebook and, when present, its sidecar."""
    path = Path(path)
    payload = path.read_bytes()
    side = sidecar_path(path)
    doc = None
    if side.exists():
        doc = json.loads(side.read_text(encoding="utf-8"))
        if doc.get("sha256") not in (None, hashlib.sha256(payload).hexdigest()):
            raise FormatError(f"sidecar digest does not match {path}")
    return decode_codebook(payload, doc)
