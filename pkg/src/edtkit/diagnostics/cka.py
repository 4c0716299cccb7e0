"""Linear CKA between layer activations, full-dataset and minibatch estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "UndefinedSimilarityError",
    "ActivationMatrix",
    "CkaMap",
    "gram",
    "centering_matrix",
    "hsic",
    "hsic_unbiased",
    "cka",
    "MinibatchCKA",
    "minibatch_cka",
    "cka_map",
    "minibatch_cka_map",
    "similarity_ratio",
]

# self-HSIC below this fraction of the raw Gram energy counts as zero variance;
# the unbiased estimator leaves roundoff of order m * eps on constant layers
_ZERO_VAR = 1e-12


class UndefinedSimilarityError(ValueError):
    """A layer has zero variance across data points, so CKA is undefined."""


@dataclass
class ActivationMatrix:
    """``m`` data points by ``p`` flattened neurons of one layer."""

    X: np.ndarray
    layer: str = ""
    model: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            X = X.reshape(X.shape[0], -1)
        if X.shape[0] < 2:
            raise ValueError(f"need at least 2 data points, got {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError(f"layer {self.layer!r} has non-finite activations")
        self.X = X

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _as_2d(X) -> np.ndarray:
    if isinstance(X, ActivationMatrix):
        return X.X
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(X.shape[0], -1) if X.ndim != 2 else X


def gram(X) -> np.ndarray:
    """Linear kernel ``X X^T``."""
    X = _as_2d(X)
    return X @ X.T


def centering_matrix(m: int) -> np.ndarray:
    return np.eye(m) - np.full((m, m), 1.0 / m)


def _check_pair(K, L, min_m):
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.shape != L.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"Gram matrices must be equal square shapes, got {K.shape} and {L.shape}")
    if K.shape[0] < min_m:
        raise ValueError(f"need at least {min_m} data points, got {K.shape[0]}")
    return K, L


def hsic(K, L) -> float:
    """Biased HSIC: ``vec(HKH) . vec(HLH) / (m-1)^2``."""
    K, L = _check_pair(K, L, 2)
    m = K.shape[0]
    H = centering_matrix(m)
    return float(np.sum((H @ K @ H) * (H @ L @ H)) / (m - 1) ** 2)


def hsic_unbiased(K, L) -> float:
    """Unbiased HSIC estimator (Song et al., 2012); needs ``m >= 4``."""
    K, L = _check_pair(K, L, 4)
    n = K.shape[0]
    K = K.copy()
    L = L.copy()
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(L, 0.0)
    ones_K = K.sum(axis=0)
    ones_L = L.sum(axis=0)
    term = np.sum(K * L) + K.sum() * L.sum() / ((n - 1) * (n - 2)) - 2.0 * ones_K @ ones_L / (n - 2)
    return float(term / (n * (n - 3)))


def _energy(K: np.ndarray) -> float:
    return float(np.sum(K * K) / (K.shape[0] - 1) ** 2)


def _zero_var(self_term: float, K: np.ndarray) -> bool:
    scale = _energy(K)
    return scale == 0.0 or abs(self_term) <= _ZERO_VAR * scale


def _ratio(cross: float, sk: float, sl: float) -> float:
    denom = sk * sl
    if denom <= 0.0:
        raise UndefinedSimilarityError("a self-HSIC term is not positive")
    return float(cross / np.sqrt(denom))


def cka(X, Y, unbiased: bool = False) -> float:
    """``HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))`` with linear kernels."""
    X, Y = _as_2d(X), _as_2d(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"data point counts differ: {X.shape[0]} vs {Y.shape[0]}")
    K, L = gram(X), gram(Y)
    f = hsic_unbiased if unbiased else hsic
    sk, sl = f(K, K), f(L, L)
    if _zero_var(sk, K) or _zero_var(sl, L):
        raise UndefinedSimilarityError("zero-variance activations")
    return _ratio(f(K, L), sk, sl)


class MinibatchCKA:
    """Running means of unbiased cross and self HSIC terms for one layer pair."""

    def __init__(self):
        self.n = 0
        self.cross = 0.0
        self.self_x = 0.0
        self.self_y = 0.0

    def update(self, X, Y) -> None:
        X, Y = _as_2d(X), _as_2d(Y)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("paired batches must have equal sizes")
        if X.shape[0] < 4:
            raise ValueError(f"minibatch needs at least 4 points, got {X.shape[0]}")
        K, L = gram(X), gram(Y)
        self.n += 1
        # incremental means keep the accumulator order-stable
        self.cross += (hsic_unbiased(K, L) - self.cross) / self.n
        self.self_x += (hsic_unbiased(K, K) - self.self_x) / self.n
        self.self_y += (hsic_unbiased(L, L) - self.self_y) / self.n

    def value(self) -> float:
        if self.n == 0:
            raise ValueError("no batches accumulated")
        return _ratio(self.cross, self.self_x, self.self_y)


def _batches(m: int, batch_size: int, passes: int, seed: int) -> Iterable[np.ndarray]:
    """Shuffled index batches; a trailing partial batch is dropped."""
    if batch_size < 4:
        raise ValueError(f"batch_size must be >= 4, got {batch_size}")
    if batch_size > m:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {m}")
    rng = np.random.default_rng(seed)
    for _ in range(passes):
        perm = rng.permutation(m)
        for lo in range(0, m - batch_size + 1, batch_size):
            yield perm[lo : lo + batch_size]


def minibatch_cka(X=None, Y=None, batch_size: int = 300, passes: int = 10, seed: int = 0, stream=None) -> float:
    """Minibatch CKA over ``passes`` shuffled sweeps of ``(X, Y)``.

    Alternatively pass ``stream``, an iterable of ``(X_batch, Y_batch)``.
    """
    acc = MinibatchCKA()
    if stream is not None:
        for xb, yb in stream:
            acc.update(xb, yb)
        return acc.value()
    if X is None or Y is None:
        raise ValueError("pass both X and Y, or a stream of batches")
    X, Y = _as_2d(X), _as_2d(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must have the same number of data points")
    for idx in _batches(X.shape[0], batch_size, passes, seed):
        acc.update(X[idx], Y[idx])
    return acc.value()


@dataclass
class CkaMap:
    """``L_a x L_b`` CKA values; undefined entries are NaN and flagged."""

    values: np.ndarray
    labels_a: list[str]
    labels_b: list[str]
    estimator: str = "full"
    undefined: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.undefined is None:
            self.undefined = np.isnan(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _layers(trace) -> tuple[list[str], list[np.ndarray]]:
    """Accept an ActivationTrace, a mapping label -> array, or a sequence."""
    if hasattr(trace, "labels") and hasattr(trace, "arrays"):
        return list(trace.labels), [_as_2d(a) for a in trace.arrays]
    if isinstance(trace, dict):
        return list(trace), [_as_2d(a) for a in trace.values()]
    mats = list(trace)
    labels = [m.layer if isinstance(m, ActivationMatrix) and m.layer else str(i) for i, m in enumerate(mats)]
    return labels, [_as_2d(m) for m in mats]


def _common_m(*groups):
    ms = {a.shape[0] for g in groups for a in g}
    if len(ms) != 1:
        raise ValueError(f"all layers must share the number of data points, found {sorted(ms)}")
    return ms.pop()


def _assemble(cross, sa, sb, za, zb, la, lb, estimator):
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = cross / np.sqrt(np.outer(sa, sb))
    bad = za[:, None] | zb[None, :] | ~(np.outer(sa, sb) > 0)
    vals = np.where(bad, np.nan, vals)
    return CkaMap(vals, la, lb, estimator, bad)


def cka_map(trace_a, trace_b=None, unbiased: bool = False) -> CkaMap:
    """Pairwise CKA between every layer of ``trace_a`` and of ``trace_b``.

    With ``trace_b`` omitted the self-map is returned. Zero-variance layers
    yield NaN entries with ``undefined`` set instead of raising.
    """
    la, A = _layers(trace_a)
    same = trace_b is None or trace_b is trace_a
    lb, B = (la, A) if same else _layers(trace_b)
    m = _common_m(A, B)
    f = hsic_unbiased if unbiased else hsic
    if unbiased:
        Ka = [gram(a) for a in A]
        Kb = Ka if same else [gram(b) for b in B]

        def pair(K, L):
            return f(K, L)

    else:
        # center once per layer; biased HSIC is then a plain inner product
        H = centering_matrix(m)
        Ka = [H @ gram(a) @ H for a in A]
        Kb = Ka if same else [H @ gram(b) @ H for b in B]

        def pair(K, L):
            return float(np.sum(K * L) / (m - 1) ** 2)

    raw_a = [gram(a) for a in A]
    raw_b = raw_a if same else [gram(b) for b in B]
    sa = np.array([pair(K, K) for K in Ka])
    sb = sa if same else np.array([pair(K, K) for K in Kb])
    za = np.array([_zero_var(s, K) for s, K in zip(sa, raw_a)])
    zb = za if same else np.array([_zero_var(s, K) for s, K in zip(sb, raw_b)])
    cross = np.empty((len(Ka), len(Kb)))
    for i, K in enumerate(Ka):
        for j, L in enumerate(Kb):
            if same and j < i:
                cross[i, j] = cross[j, i]
            else:
                cross[i, j] = pair(K, L)
    return _assemble(cross, sa, sb, za, zb, la, lb, "full-unbiased" if unbiased else "full")


def minibatch_cka_map(trace_a, trace_b=None, batch_size: int = 300, passes: int = 10, seed: int = 0) -> CkaMap:
    """Streaming map with shared shuffled batches for every layer pair."""
    la, A = _layers(trace_a)
    same = trace_b is None or trace_b is trace_a
    lb, B = (la, A) if same else _layers(trace_b)
    m = _common_m(A, B)
    cross = np.zeros((len(A), len(B)))
    sa = np.zeros(len(A))
    sb = np.zeros(len(B))
    # running mean raw Gram energy, the scale for the zero-variance test
    ea = np.zeros(len(A))
    eb = np.zeros(len(B))
    n = 0
    for idx in _batches(m, batch_size, passes, seed):
        Ka = [gram(a[idx]) for a in A]
        Kb = Ka if same else [gram(b[idx]) for b in B]
        n += 1
        sa += (np.array([hsic_unbiased(K, K) for K in Ka]) - sa) / n
        ea += (np.array([_energy(K) for K in Ka]) - ea) / n
        if not same:
            sb += (np.array([hsic_unbiased(K, K) for K in Kb]) - sb) / n
            eb += (np.array([_energy(K) for K in Kb]) - eb) / n
        c = np.array([[hsic_unbiased(K, L) for L in Kb] for K in Ka])
        cross += (c - cross) / n
    if same:
        sb, eb = sa, ea
    za = ~(sa > _ZERO_VAR * ea)
    zb = ~(sb > _ZERO_VAR * eb)
    return _assemble(cross, sa, sb, za, zb, la, lb, f"minibatch({batch_size},{passes})")


def similarity_ratio(cmap: CkaMap | np.ndarray, threshold: float = 0.6) -> np.ndarray:
    """Per row, the fraction of columns whose CKA exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    vals = cmap.values if isinstance(cmap, CkaMap) else np.asarray(cmap, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        above = np.nan_to_num(vals, nan=-np.inf) > threshold
    return above.mean(axis=1)
