"""Scalar formats and format-tagged dense 4-D arrays.

Three scalar formats are supported: float32, float16 (binary16 layout,
round-to-nearest-even with saturation at the max finite value 65504), and
fixed16 (signed 16-bit raw integers scaled by 2^-frac_bits, saturating).

Storage is emulated: values are held widened to float32 and the format's
semantics are enforced at construction and conversion boundaries, so only
the represented values are contractual, not the in-memory encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

FLOAT16_MAX = 65504.0
FIXED16_RAW_MIN = -32768
FIXED16_RAW_MAX = 32767

_TAGS = ("float32", "float16", "fixed16")
_BYTES_PER_SCALAR = {"float32": 4, "float16": 2, "fixed16": 2}


@dataclass(frozen=True)
class ScalarFormat:
    tag: str
    frac_bits: int | None = None

    def __post_init__(self) -> None:
        if self.tag not in _TAGS:
            raise ValueError(f"unknown scalar format tag {self.tag!r}")
        if self.tag == "fixed16":
            if not isinstance(self.frac_bits, int) or not 1 <= self.frac_bits <= 14:
                raise ValueError(
                    f"fixed16 frac_bits must be an integer in [1, 14], got {self.frac_bits!r}"
                )
        elif self.frac_bits is not None:
            raise ValueError(f"{self.tag} takes no frac_bits")

    @property
    def bytes_per_scalar(self) -> int:
        return _BYTES_PER_SCALAR[self.tag]

    def __str__(self) -> str:
        if self.tag == "fixed16":
            return f"fixed16(frac={self.frac_bits})"
        return self.tag


FLOAT32 = ScalarFormat("float32")
FLOAT16 = ScalarFormat("float16")


def fixed16(frac_bits: int) -> ScalarFormat:
    return ScalarFormat("fixed16", frac_bits)


def narrow(values: np.ndarray, fmt: ScalarFormat) -> np.ndarray:
    """Round a float32 array to the nearest values representable in `fmt`.

    float16 uses round-to-nearest-even and saturates overflow at +-65504;
    fixed16 rounds to the nearest raw integer (ties to even) and saturates
    at the int16 bounds. Result is float32 holding exactly representable
    values. Never raises: saturating by contract.
    """
    values = np.asarray(values, dtype=np.float32)
    if fmt.tag == "float32":
        return values
    if fmt.tag == "float16":
        with np.errstate(over="ignore"):
            widened = values.astype(np.float16).astype(np.float32)
        # clip maps +-inf overflow to the max finite value and keeps NaN
        return np.clip(widened, -FLOAT16_MAX, FLOAT16_MAX)
    scale = float(2 ** fmt.frac_bits)
    raw = np.rint(values.astype(np.float64) * scale)
    raw = np.where(np.isnan(raw), 0.0, raw)
    raw = np.clip(raw, FIXED16_RAW_MIN, FIXED16_RAW_MAX)
    return (raw / scale).astype(np.float32)


def representable(value: float, fmt: ScalarFormat) -> bool:
    """True if the float32 value is finite and survives narrowing to `fmt` unchanged."""
    v = np.float32(value)
    if not np.isfinite(v):
        return False
    return bool(narrow(np.asarray([v]), fmt)[0] == v)


def _as_4d_shape(shape) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in shape)
    if len(dims) != 4:
        raise DimensionError(f"tensor shape must be a 4-tuple, got {shape!r}")
    if any(d < 0 for d in dims):
        raise DimensionError(f"tensor dims must be non-negative, got {shape!r}")
    return dims


class Tensor:
    """Immutable dense (n, c, h, w) float32 array tagged with a ScalarFormat.

    Every stored scalar is exactly representable in `format`; conversion
    between formats is explicit via `convert`, never implicit.
    """

    __slots__ = ("data", "format")

    def __init__(self, data, fmt: ScalarFormat = FLOAT32, *, _trusted: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 4:
            raise DimensionError(f"tensor data must be 4-D, got ndim={arr.ndim}")
        if not _trusted and fmt.tag != "float32":
            rounded = narrow(arr, fmt)
            same = (rounded == arr) | (np.isnan(rounded) & np.isnan(arr))
            if not same.all():
                raise ValueError(f"values not exactly representable in {fmt}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "format", fmt)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, format={self.format})"


def tensor_new(shape, fmt: ScalarFormat, fill: float = 0.0) -> Tensor:
    """Tensor of the given shape with every element equal to `fill`.

    `fill` is interpreted as a float32 quantity and must be exactly
    representable in `fmt`; an out-of-range or inexact fixed16 fill raises.
    """
    dims = _as_4d_shape(shape)
    fill32 = np.float32(fill)
    if not math.isfinite(float(fill32)):
        raise ValueError(f"fill {fill!r} is not finite in float32")
    if not representable(float(fill32), fmt):
        raise ValueError(f"fill {fill!r} is not representable in {fmt}")
    data = np.full(dims, fill32, dtype=np.float32)
    return Tensor(data, fmt, _trusted=True)


def convert(t: Tensor, target: ScalarFormat) -> Tensor:
    """Element-wise conversion of a tensor into `target` format (saturating)."""
    return Tensor(narrow(t.data, target), target, _trusted=True)


def fixed16_raw(t: Tensor) -> np.ndarray:
    """Raw int16 values of a fixed16 tensor (value * 2^frac_bits)."""
    if t.format.tag != "fixed16":
        raise ValueError(f"tensor format is {t.format}, not fixed16")
    scale = float(2 ** t.format.frac_bits)
    return np.rint(t.data.astype(np.float64) * scale).astype(np.int16)
