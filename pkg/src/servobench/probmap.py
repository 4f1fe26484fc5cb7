"""Probability maps (per-pixel scores in [0, 1]) and their file codecs.

Scores are held as float32 so that the PFM codec and the float32 wire
payload round-trip bit-exactly. Grid cell (col x, row y) corresponds to the
image keypoint (x, y, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DimensionMismatch(ValueError):
    """Two maps (or a map and an image) that must share dims do not."""


class MapFormatError(ValueError):
    """Malformed PFM/PGM payload."""


@dataclass(frozen=True)
class ProbabilityMap:
    """H x W grid of scores in [0, 1], row-major, float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"probability map must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probability map contains non-finite scores")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"scores outside [0, 1]: min={float(arr.min())}, max={float(arr.max())}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def score(self, x: int, y: int) -> float:
        return float(self.data[y, x])

    @classmethod
    def zeros(cls, width: int, height: int) -> "ProbabilityMap":
        return cls(np.zeros((height, width), dtype=np.float32))


def encode_pfm(pm: ProbabilityMap) -> bytes:
    """Grayscale PFM ("Pf"), scale -1.0 (little-endian), rows bottom-to-top."""
    header = f"Pf\n{pm.width} {pm.height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(pm.data[::-1, :]).astype("<f4").tobytes()
    return header + body


def decode_pfm(blob: bytes) -> ProbabilityMap:
    tokens, offset = _read_header_tokens(blob, 4)
    if tokens[0] != b"Pf":
        raise MapFormatError(f"not a grayscale PFM (magic {tokens[0]!r})")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise MapFormatError(f"bad PFM header: {exc}") from exc
    if width <= 0 or height <= 0 or scale == 0.0:
        raise MapFormatError(f"bad PFM dimensions/scale: {width}x{height}, scale {scale}")
    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * 4
    body = blob[offset : offset + expected]
    if len(body) != expected:
        raise MapFormatError(f"PFM body has {len(body)} bytes, expected {expected}")
    rows = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return ProbabilityMap(rows[::-1, :])


def encode_pgm(pm: ProbabilityMap) -> bytes:
    """Binary PGM (P5), maxval 255; score maps to round(score * 255)."""
    header = f"P5\n{pm.width} {pm.height}\n255\n".encode("ascii")
    gray = np.rint(pm.data.astype(np.float64) * 255.0).astype(np.uint8)
    return header + gray.tobytes()


def decode_pgm(blob: bytes) -> ProbabilityMap:
    tokens, offset = _read_header_tokens(blob, 4)
    if tokens[0] != b"P5":
        raise MapFormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise MapFormatError(f"bad PGM header: {exc}") from exc
    if width <= 0 or height <= 0 or not (0 < maxval < 256):
        raise MapFormatError(f"bad PGM header values: {width}x{height}, maxval {maxval}")
    expected = width * height
    body = blob[offset : offset + expected]
    if len(body) != expected:
        raise MapFormatError(f"PGM body has {len(body)} bytes, expected {expected}")
    gray = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return ProbabilityMap(gray.astype(np.float32) / np.float32(maxval))


def write_map(pm: ProbabilityMap, path) -> None:
    path = Path(path)
    codec = encode_pfm if path.suffix.lower() == ".pfm" else encode_pgm
    path.write_bytes(codec(pm))


def read_map(path) -> ProbabilityMap:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:2] == b"Pf":
        return decode_pfm(blob)
    if blob[:2] == b"P5":
        return decode_pgm(blob)
    raise MapFormatError(f"{path}: unrecognized map format (magic {blob[:2]!r})")


def _read_header_tokens(blob: bytes, count: int):
    """Collect whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the first body byte (one whitespace
    byte after the last token, per Netpbm convention).
    """
    tokens = []
    i = 0
    n = len(blob)
    while len(tokens) < count:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            while i < n and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not blob[i : i + 1].isspace():
            i += 1
        if start == i:
            raise MapFormatError("truncated header")
        tokens.append(blob[start:i])
    if i >= n or not blob[i : i + 1].isspace():
        raise MapFormatError("header not terminated by whitespace")
    return tokens, i + 1
