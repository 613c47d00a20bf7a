"""File formats: binary PGM/PPM images, landmark text files, model container.

Landmark file (UTF-8 text)::

    landmarks v1
    count <J> confidence <0|1>
    <x> <y> <z> [<confidence>]      (J lines)
    END

Model container (little endian)::

    8 bytes   magic b"RFMODEL\\0"
    uint32    format version (1)
    uint32    header length H
    H bytes   JSON header: N, K, J, T, z_convention, units, expression_K
    payload   float64 mean (3N), basis (3N x K, row major), eigvals (K),
              int64 triangles (T x 3), landmark indices (J),
              [float64 expression mean (3N), basis (3N x Ke), eigvals (Ke)]
    32 bytes  SHA-256 of header bytes + payload
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ChecksumError, MalformedFileError, ModelError, UnsupportedFormatError
from .image import Image
from .shape_model import ExpressionPart, ShapeModel

MAGIC = b"RFMODEL\0"
MODEL_VERSION = 1
Z_CONVENTION = "smaller-is-nearer"
LANDMARK_HEADER = "landmarks v1"

_WS = b" \t\r\n\v\f"


# -- images ------------------------------------------------------------------


def mask_path(path) -> Path:
    """Sidecar holding the validity mask of ``path``: ``<stem>.mask.pgm``."""
    p = Path(path)
    return p.with_name(p.stem + ".mask.pgm")


def encode_pnm(pixels: np.ndarray) -> bytes:
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    magic = b"P5" if px.ndim == 2 else b"P6"
    H, W = px.shape[:2]
    return magic + b"\n%d %d\n255\n" % (W, H) + px.tobytes()


def decode_pnm(data: bytes) -> np.ndarray:
    """Parse a binary 8-bit PGM (P5) or PPM (P6) into a uint8 array."""
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise MalformedFileError("not a binary PGM/PPM file")
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    fields = []
    while len(fields) < 3:
        # at least one whitespace or comment before each header field
        start = pos
        while pos < len(data) and (data[pos] in _WS or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                end = data.find(b"\n", pos)
                if end < 0:
                    raise MalformedFileError("unterminated header comment")
                pos = end
            pos += 1
        if pos == start:
            raise MalformedFileError("missing whitespace in header")
        m = re.match(rb"[0-9]+", data[pos:])
        if m is None:
            raise MalformedFileError("malformed header field")
        fields.append(int(m.group()))
        pos += m.end()
    if pos >= len(data) or data[pos] not in _WS:
        raise MalformedFileError("header must end with one whitespace byte")
    pos += 1
    W, H, maxval = fields
    if W < 1 or H < 1:
        raise MalformedFileError(f"invalid dimensions {W} x {H}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 is supported, got {maxval}")
    n = W * H * channels
    if len(data) - pos != n:
        raise MalformedFileError(f"payload has {len(data) - pos} bytes, expected {n}")
    px = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos)
    return px.reshape((H, W) if channels == 1 else (H, W, 3)).copy()


def save_image(path, img: Image) -> None:
    """Write ``img``; a mask sidecar is written only when some pixel is invalid."""
    path = Path(path)
    path.write_bytes(encode_pnm(img.pixels))
    side = mask_path(path)
    if img.mask.all():
        if side.exists():
            side.unlink()
    else:
        side.write_bytes(encode_pnm(np.where(img.mask, 255, 0).astype(np.uint8)))


def load_image(path) -> Image:
    path = Path(path)
    px = decode_pnm(path.read_bytes())
    side = mask_path(path)
    mask = None
    if side.exists():
        m = decode_pnm(side.read_bytes())
        if m.ndim != 2 or m.shape != px.shape[:2]:
            raise MalformedFileError("mask sidecar does not match the image size")
        if not np.all((m == 0) | (m == 255)):
            raise MalformedFileError("mask sidecar must contain only 0 and 255")
        mask = m == 255
    return Image(px, mask)


# -- landmarks ---------------------------------------------------------------


def format_landmarks(points, confidence=None) -> str:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(P)):
        raise ValueError("landmark coordinates must be finite")
    conf = None if confidence is None else np.asarray(confidence, dtype=float).ravel()
    if conf is not None and conf.size != len(P):
        raise ValueError("one confidence per landmark is required")
    lines = [LANDMARK_HEADER, f"count {len(P)} confidence {int(conf is not None)}"]
    for j, p in enumerate(P):
        vals = list(p) + ([conf[j]] if conf is not None else [])
        lines.append(" ".join(repr(float(v)) for v in vals))
    lines.append("END")
    return "\n".join(lines) + "\n"


def parse_landmarks(text: str):
    """Parse landmark text; returns ``(points (J, 3), confidence or None)``."""
    if not text.endswith("END\n"):
        raise MalformedFileError("landmark file must end with an END line")
    lines = text.split("\n")[:-1]
    if len(lines) < 3 or lines[0].strip() != LANDMARK_HEADER:
        raise MalformedFileError("missing landmark header")
    m = re.fullmatch(r"count (\d+) confidence ([01])", lines[1].strip())
    if m is None:
        raise MalformedFileError("malformed count line")
    J, has_conf = int(m.group(1)), m.group(2) == "1"
    records = lines[2:-1]
    if lines[-1].strip() != "END" or len(records) != J:
        raise MalformedFileError(f"expected {J} landmark records")
    width = 4 if has_conf else 3
    out = np.empty((J, width))
    for j, line in enumerate(records):
        parts = line.split()
        if len(parts) != width:
            raise MalformedFileError(f"record {j} has {len(parts)} fields, expected {width}")
        try:
            out[j] = [float(v) for v in parts]
        except ValueError:
            raise MalformedFileError(f"record {j} is not numeric") from None
    if not np.all(np.isfinite(out)):
        raise MalformedFileError("landmark values must be finite")
    return out[:, :3].copy(), (out[:, 3].copy() if has_conf else None)


def save_landmarks(path, points, confidence=None) -> None:
    Path(path).write_text(format_landmarks(points, confidence))


def load_landmarks(path, with_confidence: bool = False):
    pts, conf = parse_landmarks(Path(path).read_text())
    return (pts, conf) if with_confidence else pts


# -- shape model -------------------------------------------------------------


def encode_model_arrays(mean, basis, eigvals, triangles, landmark_indices, expression=None, units="unspecified") -> bytes:
    """Serialize raw arrays without validating them (tests use this for bad files)."""
    mean = np.asarray(mean, dtype="<f8").ravel()
    basis = np.asarray(basis, dtype="<f8").reshape(mean.size, -1)
    eigvals = np.asarray(eigvals, dtype="<f8").ravel()
    tris = np.asarray(triangles, dtype="<i8").reshape(-1, 3)
    lm = np.asarray(landmark_indices, dtype="<i8").ravel()
    header = {
        "N": mean.size // 3,
        "K": basis.shape[1],
        "J": lm.size,
        "T": len(tris),
        "z_convention": Z_CONVENTION,
        "units": units,
        "expression_K": None,
    }
    chunks = [mean, basis, eigvals, tris, lm]
    if expression is not None:
        em, eb, ee = (np.asarray(a, dtype="<f8") for a in expression)
        eb = eb.reshape(mean.size, -1)
        header["expression_K"] = eb.shape[1]
        chunks += [em.ravel(), eb, ee.ravel()]
    hdr = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(c).tobytes() for c in chunks)
    digest = hashlib.sha256(hdr + payload).digest()
    return MAGIC + struct.pack("<II", MODEL_VERSION, len(hdr)) + hdr + payload + digest


def encode_model(model: ShapeModel, units: str = "unspecified") -> bytes:
    ex = model.expression
    return encode_model_arrays(
        model.mean,
        model.basis,
        model.eigvals,
        model.triangles,
        model.landmark_indices,
        None if ex is None else (ex.mean, ex.basis, ex.eigvals),
        units,
    )


def decode_model(data: bytes) -> ShapeModel:
    if len(data) < 16 or data[:8] != MAGIC:
        raise MalformedFileError("not a model container")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != MODEL_VERSION:
        raise UnsupportedFormatError(f"model format version {version} is not supported")
    if len(data) < 16 + hlen + 32:
        raise MalformedFileError("model file is truncated")
    hdr = data[16 : 16 + hlen]
    body = data[16 + hlen : -32]
    if hashlib.sha256(hdr + body).digest() != data[-32:]:
        raise ChecksumError("model checksum mismatch")
    try:
        h = json.loads(hdr)
        N, K, J, T = (int(h[k]) for k in ("N", "K", "J", "T"))
        Ke = h["expression_K"]
        conv = h["z_convention"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedFileError(f"bad model header: {exc}") from None
    if conv != Z_CONVENTION:
        raise UnsupportedFormatError(f"unsupported depth convention {conv!r}")
    if min(N, K, J, T) < 0 or (Ke is not None and int(Ke) < 0):
        raise MalformedFileError("negative dimension in model header")
    sizes = [("f8", 3 * N), ("f8", 3 * N * K), ("f8", K), ("i8", 3 * T), ("i8", J)]
    if Ke is not None:
        sizes += [("f8", 3 * N), ("f8", 3 * N * int(Ke)), ("f8", int(Ke))]
    if len(body) != 8 * sum(n for _, n in sizes):
        raise MalformedFileError("model payload length does not match the header")
    arrays, pos = [], 0
    for kind, n in sizes:
        arrays.append(np.frombuffer(body, dtype="<" + kind, count=n, offset=pos).copy())
        pos += 8 * n
    expression = None
    if Ke is not None:
        expression = ExpressionPart(arrays[5], arrays[6].reshape(3 * N, int(Ke)), arrays[7])
    if K == 0:
        raise ModelError("model has no modes")
    model = ShapeModel(
        mean=arrays[0],
        basis=arrays[1].reshape(3 * N, K),
        eigvals=arrays[2],
        triangles=arrays[3].reshape(T, 3),
        landmark_indices=arrays[4],
        expression=expression,
    )
    model.check_orthonormal()
    return model


def save_model(path, model: ShapeModel, units: str = "unspecified") -> None:
    data = encode_model(model, units)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_model(path) -> ShapeModel:
    return decode_model(Path(path).read_bytes())
