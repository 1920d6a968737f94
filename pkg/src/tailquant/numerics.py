"""Dense linear-algebra helpers and seeded random streams.

Tensors are plain ``numpy.ndarray`` objects in float64. The helpers below add
the shape checks and tie-breaking rules the rest of the package relies on.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, SingularSystemError

Tensor = np.ndarray

# reciprocal condition number below which the unregularized normal equations
# are treated as singular
_RCOND_LIMIT = 1e-14


def as_tensor(x, *, check_finite: bool = False) -> Tensor:
    t = np.asarray(x, dtype=np.float64)
    if check_finite and not np.all(np.isfinite(t)):
        raise ParameterError("tensor contains non-finite values")
    return t


@dataclass(frozen=True)
class RngState:
    """Seed for a PCG64 stream. ``derive`` gives independent, label-keyed substreams."""

    seed: int
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, label: str) -> "RngState":
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())])
        return RngState(int(ss.generate_state(1, dtype=np.uint64)[0]))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def solve_least_squares(X: Tensor, R: Tensor, lam: float = 0.0) -> Tensor:
    """Ridge least squares via the normal equations.

    Returns ``W`` minimizing ``||R - X W||_F^2 + lam ||W||_F^2``. The system
    ``(X^T X + lam I) W = X^T R`` is solved with an LU factorization with
    partial pivoting.
    """
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if X.ndim != 2 or X.shape[0] != R.shape[0]:
        raise ShapeError(f"incompatible regression shapes {X.shape} and {R.shape}")
    if X.shape[0] < 1:
        raise ShapeError("need at least one row")
    if lam < 0 or not np.isfinite(lam):
        raise ParameterError(f"ridge parameter must be a nonnegative real, got {lam}")
    gram = X.T @ X
    if lam > 0:
        gram = gram + lam * np.eye(gram.shape[0])
    else:
        if 1.0 / np.linalg.cond(gram) < _RCOND_LIMIT:
            raise SingularSystemError("normal equations are singular; use lam > 0")
    try:
        return np.linalg.solve(gram, X.T @ R)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc


def truncated_svd(W: Tensor, r: int) -> tuple[Tensor, Tensor, Tensor]:
    """Rank-``r`` SVD factors ``(U[p,r], S[r], V[r,q])`` with ``S`` descending."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeError(f"truncated_svd expects a matrix, got shape {W.shape}")
    if not 1 <= r <= min(W.shape):
        raise ParameterError(f"rank {r} outside [1, {min(W.shape)}]")
    u, s, vt = np.linalg.svd(W, full_matrices=False)
    return u[:, :r], s[:r], vt[:r, :]


def top_k_indices(v: Tensor, k: int) -> np.ndarray:
    """Indices of the ``k`` largest ``|v_i|``; equal magnitudes resolve to the lower index."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if not 1 <= k <= v.size:
        raise ParameterError(f"k={k} outside [1, {v.size}]")
    order = np.argsort(-np.abs(v), kind="stable")
    return order[:k]


def rand_normal(rng: RngState, shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
    if std < 0:
        raise ParameterError("std must be nonnegative")
    return mean + std * rng.generator().standard_normal(shape)


def rand_student_t(rng: RngState, shape, df: float, scale: float = 1.0) -> Tensor:
    # df <= 2 has no finite variance
    if not df > 2:
        raise ParameterError(f"student-t needs df > 2, got {df}")
    return scale * rng.generator().standard_t(df, shape)
