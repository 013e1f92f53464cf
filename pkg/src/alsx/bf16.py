"""Software emulation of bfloat16 rounding on float32 storage words.

bfloat16 keeps the float32 sign and 8-bit exponent but only the top 7
mantissa bits.  We never use a native 16-bit type: values are rounded to
the nearest bfloat16-representable number (ties to even) and kept as
float32, which makes the quantization bit-exact and portable.
"""

from __future__ import annotations

import numpy as np


def round_to_bf16(x):
    """Round float32 value(s) to the nearest bfloat16-representable value.

    Round-to-nearest-even on the 16 dropped bits; idempotent.  NaN passes
    through; magnitudes beyond the largest finite bfloat16 round to inf,
    as IEEE nearest-rounding prescribes.  Accepts scalars or arrays and
    returns float32 of the same shape.
    """
    arr = np.asarray(x, dtype=np.float32)
    bits = arr.view(np.uint32)
    # Carry-based nearest-even: add 0x7FFF plus the lowest kept bit, then
    # truncate.  NaNs are restored afterwards (the carry can corrupt them).
    lsb = (bits >> np.uint32(16)) & np.uint32(1)
    rounded = (bits + np.uint32(0x7FFF) + lsb) & np.uint32(0xFFFF0000)
    out = rounded.view(np.float32)
    nan_mask = np.isnan(arr)
    if nan_mask.any():
        out = np.where(nan_mask, arr, out)
    if np.ndim(x) == 0:
        return np.float32(out[()])
    return out


def is_bf16_exact(x) -> bool:
    """True if every element is already exactly bfloat16-representable."""
    arr = np.asarray(x, dtype=np.float32)
    return bool(np.array_equal(round_to_bf16(arr), arr, equal_nan=True))
