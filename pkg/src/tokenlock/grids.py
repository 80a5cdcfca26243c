"""Raster data types: token grids, region masks, and RGB pixel grids.

All rasters are row-major (left-to-right, then top-to-bottom); flat index
``i`` maps to ``(row, col) = divmod(i, width)``.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import InvalidArgumentError


def _check_dims(height: int, width: int) -> None:
    if height < 1 or width < 1:
        raise InvalidArgumentError(f"grid dimensions must be positive, got {height}x{width}")


class TokenGrid:
    """An ``height x width`` raster of token ids, stored flat in raster order."""

    def __init__(self, height: int, width: int, tokens) -> None:
        _check_dims(height, width)
        arr = np.asarray(tokens, dtype=np.int64).ravel()
        if arr.size != height * width:
            raise InvalidArgumentError(
                f"token count {arr.size} does not match {height}x{width} grid"
            )
        self.height = height
        self.width = width
        self.tokens = arr

    def token_at(self, row: int, col: int) -> int:
        return int(self.tokens[row * self.width + col])

    def as_array(self) -> np.ndarray:
        return self.tokens.reshape(self.height, self.width)

    def copy(self) -> "TokenGrid":
        return TokenGrid(self.height, self.width, self.tokens.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and bool(np.array_equal(self.tokens, other.tokens))
        )

    def __repr__(self) -> str:
        return f"TokenGrid({self.height}x{self.width})"

    def to_json_bytes(self) -> bytes:
        doc = {"h": self.height, "w": self.width, "tokens": [int(t) for t in self.tokens]}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")

    @classmethod
    def from_json_bytes(cls, blob: bytes) -> "TokenGrid":
        doc = json.loads(blob)
        return cls(int(doc["h"]), int(doc["w"]), doc["tokens"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_json_bytes())

    @classmethod
    def load(cls, path) -> "TokenGrid":
        with open(path, "rb") as fh:
            return cls.from_json_bytes(fh.read())


class RegionMask:
    """Boolean raster marking foreground (edit-relevant) positions."""

    def __init__(self, height: int, width: int, bits) -> None:
        _check_dims(height, width)
        arr = np.asarray(bits, dtype=bool).ravel()
        if arr.size != height * width:
            raise InvalidArgumentError(
                f"mask length {arr.size} does not match {height}x{width} grid"
            )
        self.height = height
        self.width = width
        self.bits = arr

    def area(self) -> int:
        return int(self.bits.sum())

    def area_fraction(self) -> float:
        return self.area() / self.bits.size

    def as_array(self) -> np.ndarray:
        return self.bits.reshape(self.height, self.width)

    def matches(self, grid: TokenGrid) -> bool:
        return self.height == grid.height and self.width == grid.width

    def __eq__(self, other) -> bool:
        if not isinstance(other, RegionMask):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and bool(np.array_equal(self.bits, other.bits))
        )

    def to_json_bytes(self) -> bytes:
        doc = {"h": self.height, "w": self.width, "bits": [int(b) for b in self.bits]}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")

    @classmethod
    def from_json_bytes(cls, blob: bytes) -> "RegionMask":
        doc = json.loads(blob)
        return cls(int(doc["h"]), int(doc["w"]), doc["bits"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_json_bytes())

    @classmethod
    def load(cls, path) -> "RegionMask":
        with open(path, "rb") as fh:
            return cls.from_json_bytes(fh.read())


class PixelGrid:
    """An 8-bit RGB image with shape ``(height, width, 3)``."""

    def __init__(self, height: int, width: int, data) -> None:
        _check_dims(height, width)
        arr = np.asarray(data, dtype=np.uint8)
        if arr.size != height * width * 3:
            raise InvalidArgumentError(
                f"pixel buffer size {arr.size} does not match {height}x{width}x3"
            )
        self.height = height
        self.width = width
        self.data = arr.reshape(height, width, 3)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelGrid):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and bool(np.array_equal(self.data, other.data))
        )

    def to_ppm_bytes(self) -> bytes:
        # Binary PPM: magic "P6", width/height, maxval 255, then raw RGB bytes.
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.data.tobytes()

    def save_ppm(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_ppm_bytes())

    @classmethod
    def from_ppm_bytes(cls, blob: bytes) -> "PixelGrid":
        if not blob.startswith(b"P6"):
            raise InvalidArgumentError("not a binary PPM (P6) payload")
        fields: list[bytes] = []
        pos = 2
        while len(fields) < 3:
            while pos < len(blob) and blob[pos : pos + 1].isspace():
                pos += 1
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            fields.append(blob[start:pos])
        pos += 1  # single whitespace after maxval
        width, height, maxval = (int(f) for f in fields)
        if maxval != 255:
            raise InvalidArgumentError(f"unsupported PPM maxval {maxval}")
        raw = np.frombuffer(blob, dtype=np.uint8, count=height * width * 3, offset=pos)
        return cls(height, width, raw)
