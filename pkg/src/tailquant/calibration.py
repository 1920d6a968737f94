"""Calibration-set construction.

A pool of unlabeled samples is embedded into a feature space, purified by a
two-cluster majority vote, and then reduced to ``n_target`` samples by picking
the two members nearest each centroid of an ``n_target / 2``-means clustering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, ParameterError, ShapeError
from .numerics import RngState


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------

@dataclass
class CalibrationSample:
    id: str
    payload: np.ndarray
    feature: Optional[np.ndarray] = None


@dataclass
class CalibrationPool:
    samples: list
    planted_ids: frozenset = frozenset()
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def by_id(self) -> dict:
        return {s.id: s for s in self.samples}

    def ids(self) -> list:
        return [s.id for s in self.samples]

    def subset(self, ids: Sequence[str]) -> "CalibrationPool":
        lookup = self.by_id()
        return CalibrationPool([lookup[i] for i in ids], self.planted_ids & frozenset(ids), dict(self.meta))

    def stack(self, ids: Sequence[str] | None = None) -> np.ndarray:
        lookup = self.by_id()
        ids = self.ids() if ids is None else ids
        return np.stack([lookup[i].payload for i in ids])


@dataclass
class ClusterResult:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list = field(default_factory=list)
    n_iter: int = 0
    ids: Optional[list] = None

    @property
    def assignment(self) -> dict:
        ids = self.ids if self.ids is not None else [str(i) for i in range(len(self.labels))]
        return {sid: int(c) for sid, c in zip(ids, self.labels)}

    def sizes(self) -> list:
        return [int(np.sum(self.labels == c)) for c in range(self.k)]

    def to_dict(self) -> dict:
        return {"k": self.k, "inertia": float(self.inertia), "n_iter": self.n_iter,
                "sizes": self.sizes(), "assignment": self.assignment}


@dataclass
class SelectionResult:
    selected_ids: list
    stage1_kept: list
    stage1_clusters: ClusterResult
    stage2_clusters: ClusterResult
    provenance: dict  # id -> {"cluster": c, "rank": r, "backfill": bool}

    def to_dict(self) -> dict:
        return {
            "selected_ids": list(self.selected_ids),
            "stage1_kept": sorted(self.stage1_kept),
            "stage1_clusters": self.stage1_clusters.to_dict(),
            "stage2_clusters": self.stage2_clusters.to_dict(),
            "provenance": {k: dict(v) for k, v in sorted(self.provenance.items())},
        }


@dataclass
class StabilityReport:
    v_bar: dict
    score: dict
    layer_variances: dict
    eps: float

    def ranking(self) -> list:
        """Sample ids from most to least stable (ties by id)."""
        return sorted(self.score, key=lambda i: (-self.score[i], i))

    def to_dict(self) -> dict:
        ranks = {sid: r + 1 for r, sid in enumerate(self.ranking())}
        return {"eps": self.eps,
                "samples": {i: {"v_bar": self.v_bar[i], "score": self.score[i], "rank": ranks[i],
                                "layer_variances": list(self.layer_variances[i])}
                            for i in sorted(self.score)}}


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def moment_features(payload) -> np.ndarray:
    """Per-channel mean, std, skewness, excess kurtosis, min and max.

    ``payload`` is ``[tokens, channels]``; statistics run over tokens and are
    concatenated statistic-major. Channels with zero spread get zero skewness
    and kurtosis.
    """
    x = np.asarray(payload, dtype=np.float64)
    if x.size == 0:
        raise DegenerateInputError("empty payload")
    if x.ndim == 1:
        x = x[:, None]
    x = x.reshape(x.shape[0], -1)
    mean = x.mean(axis=0)
    c = x - mean
    m2 = (c**2).mean(axis=0)
    std = np.sqrt(m2)
    safe = np.where(m2 > 0, m2, 1.0)
    skew = np.where(m2 > 0, (c**3).mean(axis=0) / safe**1.5, 0.0)
    kurt = np.where(m2 > 0, (c**4).mean(axis=0) / safe**2 - 3.0, 0.0)
    return np.concatenate([mean, std, skew, kurt, x.min(axis=0), x.max(axis=0)])


EXTRACTORS: dict = {"moments": moment_features}


def register_extractor(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    EXTRACTORS[name] = fn


def embed_features(payload, extractor: str | Callable = "moments") -> np.ndarray:
    fn = EXTRACTORS[extractor] if isinstance(extractor, str) else extractor
    if np.asarray(payload).size == 0:
        raise DegenerateInputError("empty payload")
    return np.asarray(fn(payload), dtype=np.float64).ravel()


def pool_features(samples, extractor: str | Callable = "moments") -> np.ndarray:
    # a precomputed sample.feature takes precedence over the extractor
    feats = [s.feature if s.feature is not None else embed_features(s.payload, extractor)
             for s in samples]
    dims = {f.shape for f in feats}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent feature dimensions {sorted(dims)}")
    return np.stack(feats)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def signed_log(X) -> np.ndarray:
    """``sign(x) * log1p(|x|)``: keeps order and sign, compresses heavy-tailed statistics."""
    X = np.asarray(X, dtype=np.float64)
    return np.sign(X) * np.log1p(np.abs(X))


TRANSFORMS: dict = {"signed-log": signed_log, "none": lambda X: np.asarray(X, dtype=np.float64)}


@dataclass(frozen=True)
class ClusterConfig:
    extractor: object = "moments"
    transform: str = "signed-log"
    max_iter: int = 100
    n_init: int = 10

    def features(self, samples) -> np.ndarray:
        return TRANSFORMS[self.transform](pool_features(samples, self.extractor))


DEFAULT_CLUSTERING = ClusterConfig()


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeanspp(X: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    centers = [int(gen.integers(m))]
    d2 = _sq_dists(X, X[centers])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point already coincides with a center; duplicate one (its cluster stays empty)
            centers.append(centers[0])
            continue
        idx = int(np.searchsorted(np.cumsum(d2), gen.random() * total, side="right"))
        idx = min(idx, m - 1)
        centers.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[[idx]])[:, 0])
    return X[centers].copy()


def kmeans(features, k: int, rng: RngState, max_iter: int = 100,
           ids: Optional[list] = None, n_init: int = 1) -> ClusterResult:
    """Lloyd iterations from k-means++ seeds; stops when assignments stop changing.

    With ``n_init > 1`` the clustering is restarted from independent seedings
    and the lowest-inertia result is kept (earliest on ties).
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be [m, d], got {X.shape}")
    m = X.shape[0]
    if not 1 <= k <= m:
        raise ParameterError(f"k={k} outside [1, {m}]")
    if n_init < 1:
        raise ParameterError("n_init must be >= 1")
    if n_init == 1:
        return _lloyd(X, k, rng.generator(), max_iter, ids)
    best = None
    for j in range(n_init):
        cr = _lloyd(X, k, rng.derive(f"init{j}").generator(), max_iter, ids)
        if best is None or cr.inertia < best.inertia:
            best = cr
    return best


def _lloyd(X, k, gen, max_iter, ids) -> ClusterResult:
    m = X.shape[0]
    C = _kmeanspp(X, k, gen)
    d = _sq_dists(X, C)
    labels = np.argmin(d, axis=1)
    history = [float(d[np.arange(m), labels].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        C_new = C.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                C_new[c] = X[members].mean(axis=0)
        d = _sq_dists(X, C_new)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(m), new_labels].sum()))
        C = C_new
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break
    return ClusterResult(k, C, labels, history[-1], history, n_iter, ids)


# ---------------------------------------------------------------------------
# Two-stage selection
# ---------------------------------------------------------------------------

def _sorted_samples(samples) -> list:
    return sorted(samples, key=lambda s: s.id)


def _stage1(pool, rng: RngState, cc: ClusterConfig):
    samples = _sorted_samples(pool.samples if isinstance(pool, CalibrationPool) else pool)
    if len(samples) < 2:
        raise ParameterError("stage 1 needs at least 2 samples")
    ids = [s.id for s in samples]
    cr = kmeans(cc.features(samples), 2, rng, cc.max_iter, ids, cc.n_init)
    sizes = cr.sizes()
    if sizes[0] != sizes[1]:
        keep = int(np.argmax(sizes))
    else:
        keep = int(cr.labels[ids.index(min(ids))])
    kept = [sid for sid, c in zip(ids, cr.labels) if c == keep]
    return kept, cr


def stage1_suppress(pool, rng: RngState, cc: ClusterConfig = DEFAULT_CLUSTERING) -> set:
    """Ids of the larger of two k-means clusters (majority vote)."""
    return set(_stage1(pool, rng, cc)[0])


def stage2_select(kept, n_target: int, rng: RngState,
                  cc: ClusterConfig = DEFAULT_CLUSTERING) -> tuple[list, ClusterResult, dict]:
    """Pick the two samples nearest each of ``n_target / 2`` centroids.

    Returns ``(selected_ids, clusters, provenance)``. Clusters with fewer than
    two members leave a deficit that is filled, one sample at a time, with
    the nearest unselected member of whichever cluster has the most
    unselected members left.
    """
    samples = _sorted_samples(kept.samples if isinstance(kept, CalibrationPool) else kept)
    if n_target <= 0 or n_target % 2:
        raise ParameterError(f"n_target must be a positive even integer, got {n_target}")
    if n_target > len(samples):
        raise ParameterError(f"cannot select {n_target} from {len(samples)} samples")
    ids = [s.id for s in samples]
    X = cc.features(samples)
    cr = kmeans(X, n_target // 2, rng, cc.max_iter, ids, cc.n_init)

    # per-cluster members ordered by (distance to centroid, id)
    ranked = {}
    for c in range(cr.k):
        members = np.nonzero(cr.labels == c)[0]
        dist = np.sqrt(((X[members] - cr.centroids[c]) ** 2).sum(axis=1))
        order = sorted(range(len(members)), key=lambda j: (dist[j], ids[members[j]]))
        ranked[c] = [ids[members[j]] for j in order]

    selected, provenance = [], {}
    for c in range(cr.k):
        for r, sid in enumerate(ranked[c][:2]):
            selected.append(sid)
            provenance[sid] = {"cluster": c, "rank": r + 1, "backfill": False}

    taken = {c: min(2, len(ranked[c])) for c in ranked}
    while len(selected) < n_target:
        c = max(ranked, key=lambda c: (len(ranked[c]) - taken[c], -c))
        sid = ranked[c][taken[c]]
        taken[c] += 1
        selected.append(sid)
        provenance[sid] = {"cluster": c, "rank": taken[c], "backfill": True}
    return selected, cr, provenance


def build_calibration_set(pool: CalibrationPool, n_target: int, rng: RngState,
                          cc: ClusterConfig = DEFAULT_CLUSTERING) -> SelectionResult:
    kept, cr1 = _stage1(pool, rng.derive("stage1"), cc)
    if n_target <= 0 or n_target % 2:
        raise ParameterError(f"n_target must be a positive even integer, got {n_target}")
    if n_target > len(kept):
        raise ParameterError(f"only {len(kept)} samples survive stage 1; cannot select {n_target}")
    lookup = pool.by_id()
    selected, cr2, prov = stage2_select([lookup[i] for i in kept], n_target, rng.derive("stage2"), cc)
    return SelectionResult(selected, kept, cr1, cr2, prov)


# ---------------------------------------------------------------------------
# Stability diagnostic
# ---------------------------------------------------------------------------

def token_variance(T) -> float:
    """Mean over tokens of the population variance across channels."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] == 0 or T.shape[1] == 0:
        raise ShapeError(f"token representation must be non-empty [tokens, channels], got {T.shape}")
    return float(np.mean(np.var(T, axis=1)))


def stability_scores(samples, model: Callable[[np.ndarray], list], eps_s: float = 1e-8) -> StabilityReport:
    """``model(payload)`` returns the per-layer token matrices of one sample."""
    if isinstance(samples, CalibrationPool):
        samples = samples.samples
    v_bar, score, layers = {}, {}, {}
    for s in samples:
        v = [token_variance(T) for T in model(s.payload)]
        if not v:
            raise ShapeError("model exposed no layers")
        vb = float(np.mean(v))
        v_bar[s.id], score[s.id], layers[s.id] = vb, 1.0 / (vb + eps_s), v
    return StabilityReport(v_bar, score, layers, eps_s)
