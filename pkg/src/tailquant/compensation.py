"""Low-rank residual compensation gated by tail relative error (TRE)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import solve_least_squares, top_k_indices, truncated_svd


@dataclass(frozen=True)
class TREConfig:
    rho: float = 0.01
    tau: float = 0.007
    eps: float = 1e-12

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if self.tau < 0 or math.isnan(self.tau):
            raise ParameterError(f"tau must be nonnegative, got {self.tau}")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")

    def tail_size(self, n: int) -> int:
        return max(1, int(math.floor(self.rho * n)))


def tre(y, y_q, cfg: TREConfig = TREConfig()) -> float:
    """Squared error over the top-k magnitude entries of ``y``, relative to their energy."""
    y = np.asarray(y, dtype=np.float64)
    y_q = np.asarray(y_q, dtype=np.float64)
    if y.shape != y_q.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {y_q.shape}")
    if y.size == 0:
        raise ShapeError("TRE of an empty tensor is undefined")
    flat, flat_q = y.ravel(), y_q.ravel()
    tail = top_k_indices(flat, cfg.tail_size(flat.size))
    num = float(np.sum((flat[tail] - flat_q[tail]) ** 2))
    den = float(np.sum(flat[tail] ** 2)) + cfg.eps
    return num / den


def tre_per_sample(y, y_q, cfg: TREConfig = TREConfig()) -> float:
    """Mean TRE over the leading (sample) axis."""
    y = np.asarray(y, dtype=np.float64)
    y_q = np.asarray(y_q, dtype=np.float64)
    if y.shape != y_q.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {y_q.shape}")
    return float(np.mean([tre(a, b, cfg) for a, b in zip(y, y_q)]))


@dataclass
class Adapter:
    u: np.ndarray  # [d_out, r]
    v: np.ndarray  # [r, d_in]
    b: np.ndarray  # [d_out]
    rank: int
    active: bool
    tre_at_fit: float

    @property
    def d_in(self) -> int:
        return self.v.shape[1]

    @property
    def d_out(self) -> int:
        return self.u.shape[0]

    def weight(self) -> np.ndarray:
        return self.u @ self.v

    @classmethod
    def inactive(cls, d_in: int, d_out: int, rank: int, tre_value: float) -> "Adapter":
        return cls(np.zeros((d_out, rank)), np.zeros((rank, d_in)), np.zeros(d_out), rank,
                   False, tre_value)


def _round_f32(a: np.ndarray) -> np.ndarray:
    # adapters are stored as float32; keep the in-memory copy identical to the stored one
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def fit_adapter(x_cal, y_fp, y_q, r: int = 16, lam: float = 1e-6,
                cfg: TREConfig = TREConfig(), *, fit_always: bool = False,
                tre_mode: str = "pooled", n_samples: int = 1,
                store_f32: bool = False) -> Adapter:
    """Fit ``W, b`` so that ``y_q + x W^T + b`` best matches ``y_fp`` on the
    calibration rows, then keep the top-``r`` singular components of ``W``.

    The ridge term ``lam`` penalizes ``W`` only; the bias is left free by
    centering. When TRE does not exceed ``cfg.tau`` the returned adapter is
    inactive (and unfitted unless ``fit_always``).

    With ``tre_mode="per-sample"`` the rows are split into ``n_samples``
    equal groups and the gate uses the mean of their TREs.
    """
    x = np.asarray(x_cal, dtype=np.float64)
    y = np.asarray(y_fp, dtype=np.float64)
    yq = np.asarray(y_q, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or y.shape != yq.shape or x.shape[0] != y.shape[0]:
        raise ShapeError(f"incompatible shapes x{x.shape} y{y.shape} y_q{yq.shape}")
    if x.shape[0] < 1:
        raise ShapeError("need at least one calibration row")
    d_in, d_out = x.shape[1], y.shape[1]
    if not 1 <= r <= min(d_in, d_out):
        raise ParameterError(f"rank {r} outside [1, {min(d_in, d_out)}]")

    if tre_mode == "pooled":
        t = tre(y, yq, cfg)
    elif tre_mode == "per-sample":
        if n_samples < 1 or y.shape[0] % n_samples:
            raise ShapeError(f"{y.shape[0]} rows do not split into {n_samples} samples")
        t = tre_per_sample(y.reshape(n_samples, -1), yq.reshape(n_samples, -1), cfg)
    else:
        raise ParameterError(f"unknown TRE mode {tre_mode!r}")
    active = t > cfg.tau
    if not active and not fit_always:
        return Adapter.inactive(d_in, d_out, r, t)

    resid = y - yq
    x_mean, r_mean = x.mean(axis=0), resid.mean(axis=0)
    w_t = solve_least_squares(x - x_mean, resid - r_mean, lam)  # [d_in, d_out] = W^T
    b = r_mean - x_mean @ w_t
    u, s, v = truncated_svd(w_t.T, r)
    u = u * s
    if store_f32:
        u, v, b = _round_f32(u), _round_f32(v), _round_f32(b)
    return Adapter(u, v, b, r, bool(active), t)


def apply_adapter(a: Adapter, x, y_q) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y_q = np.asarray(y_q, dtype=np.float64)
    if not a.active:
        return y_q
    if x.shape[-1] != a.d_in or y_q.shape[-1] != a.d_out or x.shape[:-1] != y_q.shape[:-1]:
        raise ShapeError(f"adapter {a.d_in}->{a.d_out} cannot map x{x.shape} onto y{y_q.shape}")
    return y_q + (x @ a.v.T) @ a.u.T + a.b


def adapter_param_bytes(a: Adapter) -> int:
    if not a.active:
        return 0
    return 4 * (a.d_out * a.rank + a.rank * a.d_in + a.d_out)


def gate_sweep(tres, taus, sizes) -> list[dict]:
    """Active-adapter counts and bytes when gating fixed TRE values at each ``tau``.

    ``sizes`` holds ``(d_in, d_out, rank)`` per module.
    """
    rows = []
    for tau in taus:
        active = [t > tau for t in tres]
        nbytes = sum(4 * (dout * r + r * din + dout)
                     for on, (din, dout, r) in zip(active, sizes) if on)
        rows.append({"tau": tau, "active": int(sum(active)), "bytes": int(nbytes)})
    return rows
