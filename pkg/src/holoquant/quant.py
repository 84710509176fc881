"""Int8 encodings: symmetric linear codes and a sign/magnitude log code for gains.

Gain codes use bit 7 as a sign bit (always 0 for std-valued gains) and bits
0-6 as the magnitude code.  Magnitude codes 0..126 decode to
``2 ** (log_min + code * log_step)``; code 127 is reserved for an exact zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gsb import Codebook, CompressedLayer, CompressedNetwork

__all__ = [
    "QuantizationError",
    "LinearQuantParams",
    "LogQuantParams",
    "quantize_linear_i8",
    "dequantize_linear_i8",
    "quantize_gains_log_i8",
    "dequantize_gains_log_i8",
    "quantize_compressed_layer",
    "quantize_network",
    "LOG_ZERO_CODE",
    "LOG_MAX_CODE",
]

LINEAR_MAX_CODE = 127
LOG_MAX_CODE = 126
LOG_ZERO_CODE = 127
SIGN_BIT = 0x80


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class LinearQuantParams:
    scale: float
    zero_point: int = 0


@dataclass(frozen=True)
class LogQuantParams:
    log_min: float
    log_step: float

    def max_relative_error(self) -> float:
        return 2.0 ** (self.log_step / 2.0) - 1.0


def quantize_linear_i8(values):
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise QuantizationError("cannot quantize non-finite values")
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    scale = peak / LINEAR_MAX_CODE
    if scale == 0.0:
        # all-zero input, or a subnormal peak whose step underflows
        scale = 1.0
    codes = np.clip(np.rint(v / scale), -LINEAR_MAX_CODE, LINEAR_MAX_CODE).astype(np.int8)
    return codes, LinearQuantParams(scale)


def dequantize_linear_i8(codes, params: LinearQuantParams) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * params.scale


def quantize_gains_log_i8(gains):
    g = np.asarray(gains, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise QuantizationError("cannot quantize non-finite gains")
    if np.any(g < 0):
        raise QuantizationError("gains must be non-negative")
    pos = g > 0
    if not np.any(pos):
        return np.full(g.shape, LOG_ZERO_CODE, dtype=np.int8), LogQuantParams(0.0, 1.0)
    logs = np.log2(g[pos])
    log_min, log_max = float(logs.min()), float(logs.max())
    log_step = (log_max - log_min) / LOG_MAX_CODE if log_max > log_min else 1.0
    codes = np.full(g.shape, LOG_ZERO_CODE, dtype=np.int8)
    mag = np.clip(np.rint((logs - log_min) / log_step), 0, LOG_MAX_CODE)
    codes[pos] = mag.astype(np.int8)
    return codes, LogQuantParams(log_min, log_step)


def dequantize_gains_log_i8(codes, params: LogQuantParams) -> np.ndarray:
    c = np.asarray(codes).astype(np.int64) & 0xFF
    if np.any(c & SIGN_BIT):
        raise QuantizationError("signed gain codes are not supported")
    mag = c & 0x7F
    out = np.exp2(params.log_min + mag * params.log_step)
    return np.where(mag == LOG_ZERO_CODE, 0.0, out)


def quantize_compressed_layer(cl: CompressedLayer) -> CompressedLayer:
    if cl.is_int8:
        raise QuantizationError("layer is already int8")
    cb_codes, cb_params = quantize_linear_i8(cl.codebook.values())
    gain_codes, gain_params = quantize_gains_log_i8(cl.gain_values())
    bias_codes, bias_params = quantize_linear_i8(cl.bias_values())
    return CompressedLayer(
        codebook=Codebook(cb_codes, cl.codebook.meta, cb_params.scale),
        indices=cl.indices,
        gains=gain_codes,
        biases=bias_codes,
        in_dim=cl.in_dim,
        out_dim=cl.out_dim,
        domain=cl.domain,
        gain_params=gain_params,
        bias_params=bias_params,
    )


def quantize_network(cn: CompressedNetwork) -> CompressedNetwork:
    return CompressedNetwork([quantize_compressed_layer(l) for l in cn.layers])

