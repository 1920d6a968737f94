"""Uniform and twin-uniform fake quantization.

All quantizers here are symmetric (no zero point) and operate per tensor.
Values are mapped to ``clip(round(x / delta), q_min, q_max) * delta`` with
round-half-to-even. The twin quantizer splits the value range into two
regions that each get their own interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NonFiniteError, ParameterError, ShapeError


@dataclass(frozen=True)
class BitWidthSpec:
    bits: int
    signed: bool = True

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 2 <= self.bits <= 16:
            raise ParameterError(f"bits must be an integer in [2, 16], got {self.bits!r}")

    @property
    def q_min(self) -> int:
        return -(2 ** (self.bits - 1)) if self.signed else 0

    @property
    def q_max(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.signed else 2**self.bits - 1


def _check_delta(delta: float) -> None:
    if not (np.isfinite(delta) and delta > 0):
        raise ParameterError(f"quantization interval must be positive and finite, got {delta}")


@dataclass(frozen=True)
class QuantParams:
    delta: float
    bitwidth: BitWidthSpec

    def __post_init__(self):
        _check_delta(self.delta)

    def to_dict(self) -> dict:
        return {"kind": "uniform", "delta": float(self.delta), "bits": self.bitwidth.bits,
                "signed": self.bitwidth.signed}


@dataclass(frozen=True)
class Partition:
    """Region split for twin quantization.

    ``by-sign``: x < 0 goes to R1, x >= 0 to R2.
    ``by-threshold``: |x| <= threshold goes to R1, the rest to R2.
    """

    kind: str = "by-sign"
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in ("by-sign", "by-threshold"):
            raise ParameterError(f"unknown partition kind {self.kind!r}")
        if self.kind == "by-threshold" and not (np.isfinite(self.threshold) and self.threshold >= 0):
            raise ParameterError("threshold must be a finite nonnegative real")

    def region1_mask(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "by-sign":
            return x < 0
        return np.abs(x) <= self.threshold


@dataclass(frozen=True)
class TwinQuantParams:
    delta_r1: float
    delta_r2: float
    bitwidth: BitWidthSpec
    partition: Partition = Partition()

    def __post_init__(self):
        _check_delta(self.delta_r1)
        _check_delta(self.delta_r2)

    def to_dict(self) -> dict:
        return {"kind": "twin", "delta_r1": float(self.delta_r1), "delta_r2": float(self.delta_r2),
                "bits": self.bitwidth.bits, "signed": self.bitwidth.signed,
                "partition": self.partition.kind, "threshold": float(self.partition.threshold)}


AnyQuantParams = Union[QuantParams, TwinQuantParams]


def params_from_dict(d: dict) -> AnyQuantParams:
    bw = BitWidthSpec(int(d["bits"]), bool(d["signed"]))
    if d["kind"] == "uniform":
        return QuantParams(float(d["delta"]), bw)
    if d["kind"] == "twin":
        part = Partition(d["partition"], float(d.get("threshold", 0.0)))
        return TwinQuantParams(float(d["delta_r1"]), float(d["delta_r2"]), bw, part)
    raise ParameterError(f"unknown quantizer kind {d['kind']!r}")


def _finite_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cannot quantize non-finite values")
    return x


def quantize_codes(x, delta: float, bitwidth: BitWidthSpec) -> np.ndarray:
    """Integer grid codes ``clip(round_half_even(x / delta), q_min, q_max)`` as float64."""
    x = _finite_input(x)
    _check_delta(delta)
    return np.clip(np.rint(x / delta), bitwidth.q_min, bitwidth.q_max)


def quantize_uniform(x, p: QuantParams) -> np.ndarray:
    return quantize_codes(x, p.delta, p.bitwidth) * p.delta


def quantize_twin(x, p: TwinQuantParams) -> np.ndarray:
    x = _finite_input(x)
    in_r1 = p.partition.region1_mask(x)
    bw = p.bitwidth
    q1 = np.clip(np.rint(x / p.delta_r1), bw.q_min, bw.q_max) * p.delta_r1
    q2 = np.clip(np.rint(x / p.delta_r2), bw.q_min, bw.q_max) * p.delta_r2
    return np.where(in_r1, q1, q2)


def quantize(x, p: AnyQuantParams | None) -> np.ndarray:
    """Dispatch on the parameter type; ``None`` passes ``x`` through unchanged."""
    if p is None:
        return np.asarray(x, dtype=np.float64)
    if isinstance(p, TwinQuantParams):
        return quantize_twin(x, p)
    return quantize_uniform(x, p)


def quant_error(x, xq) -> float:
    x = np.asarray(x, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    if x.shape != xq.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {xq.shape}")
    if x.size == 0:
        raise ShapeError("empty tensors")
    return float(np.mean((x - xq) ** 2))
