"""Ridge-penalized weighted least squares and random-walk podium weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "INFEASIBLE",
    "PodiumWeights",
    "RankDeficiencyError",
    "RidgeSpec",
    "Standardizer",
    "podium_stack",
    "podium_weights",
    "ridge_wls_solve",
    "split_objective",
]

INFEASIBLE = np.inf
_RANK_RTOL = 1e-10
_JITTER = 1e-8
_COND_JITTER = 1e10


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RidgeSpec:
    """Penalty settings: ``lam * ||beta - prior_mean||^2``.

    ``prior_mean=None`` means the (unpenalized) weighted OLS fit of the data
    being solved, falling back to zero when that fit is rank deficient.
    """

    lam: float = 0.5
    prior_mean: np.ndarray | None = None
    standardize: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam!r}")
        if self.prior_mean is not None:
            object.__setattr__(self, "prior_mean", np.asarray(self.prior_mean, dtype=float).ravel())


@dataclass(frozen=True)
class PodiumWeights:
    weights: np.ndarray
    zeta: float

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


def podium_stack(mask: np.ndarray, zeta: float) -> np.ndarray:
    """Podium weights for a stack of membership masks along the last axis.

    Members get 1, non-members one step away from any member get ``zeta``,
    two steps away ``zeta**2``; overlapping podiums keep the maximal weight.
    """
    mask = np.asarray(mask, dtype=bool)
    w = mask.astype(float)
    if zeta <= 0:
        return w
    near = np.zeros_like(mask)
    near[..., 1:] |= mask[..., :-1]
    near[..., :-1] |= mask[..., 1:]
    far = np.zeros_like(mask)
    far[..., 2:] |= mask[..., :-2]
    far[..., :-2] |= mask[..., 2:]
    np.maximum(w, np.where(far, zeta * zeta, 0.0), out=w)
    np.maximum(w, np.where(near, zeta, 0.0), out=w)
    return w


def podium_weights(leaf, zeta: float, T: int) -> PodiumWeights:
    """Symmetric five-step podium around the time indices of a leaf (0-based)."""
    if not 0 <= zeta < 1:
        raise ValueError(f"zeta must lie in [0, 1), got {zeta!r}")
    idx = np.unique(np.asarray(list(leaf) if not isinstance(leaf, np.ndarray) else leaf, dtype=int))
    if idx.size == 0:
        raise ValueError("leaf is empty")
    if idx[0] < 0 or idx[-1] >= T:
        raise ValueError(f"leaf indices must lie in 0..{T - 1}")
    mask = np.zeros(T, dtype=bool)
    mask[idx] = True
    return PodiumWeights(podium_stack(mask, zeta), float(zeta))


class Standardizer:
    """Column standardization of a linear design with coefficient mapping.

    Non-constant columns are scaled to unit standard deviation; they are also
    centered when the design contains a constant column (which then absorbs
    the shift).  Constant columns are left untouched.
    """

    def __init__(self, X, rows=None):
        X = np.asarray(X, dtype=float)
        sample = X if rows is None else X[rows]
        sample = sample[np.isfinite(sample).all(axis=1)]
        if sample.shape[0] == 0:
            raise ValueError("no complete rows to standardize on")
        mean = sample.mean(axis=0)
        sd = sample.std(axis=0)
        self.const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
        self.const_col = int(np.flatnonzero(self.const)[0]) if self.const.any() else None
        self.const_value = mean[self.const_col] if self.const_col is not None else 1.0
        self.center = np.where(self.const | (self.const_col is None), 0.0, mean)
        self.scale = np.where(self.const, 1.0, sd)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def beta_to_original(self, gamma) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        beta = gamma / self.scale
        if self.const_col is not None:
            shift = (gamma * self.center / self.scale).sum(axis=-1)
            beta = beta.copy()
            beta[..., self.const_col] -= shift / self.const_value
        return beta

    def beta_to_standard(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        gamma = beta * self.scale
        if self.const_col is not None:
            gamma = gamma.copy()
            gamma[..., self.const_col] += (beta * self.center).sum(axis=-1) / self.const_value
        return gamma


def _weighted_ols(Xw: np.ndarray, yw: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(Xw, full_matrices=False)
    K = Xw.shape[1]
    if s.size < K or s[-1] <= _RANK_RTOL * s[0] or s[0] == 0:
        raise RankDeficiencyError(
            f"weighted design has rank < {K}; raise lambda or the minimum leaf fraction (MLF)"
        )
    return Vt.T @ ((U.T @ yw) / s)


def ridge_wls_solve(X, y, w, spec: RidgeSpec = RidgeSpec()) -> tuple[np.ndarray, float]:
    """Minimize ``sum w (y - X b)^2 + lam ||b - prior||^2``.

    Returns the coefficients (original scale) and the weighted residual sum
    of squares at the optimum, penalty excluded.  With ``lam == 0`` a
    rank-deficient weighted design raises :class:`RankDeficiencyError`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    n, K = X.shape
    if n < 1 or K < 1 or y.size != n or w.size != n:
        raise ValueError(f"inconsistent shapes X{X.shape}, y({y.size}), w({w.size})")
    if (w < 0).any() or not (w > 0).any():
        raise ValueError("weights must be non-negative with at least one positive entry")

    scaler = Standardizer(X, rows=w > 0) if spec.standardize else None
    Xs = scaler.transform(X) if scaler is not None else X
    sw = np.sqrt(w)
    Xw, yw = Xs * sw[:, None], y * sw

    if spec.prior_mean is None:
        try:
            prior = _weighted_ols(Xw, yw)
        except RankDeficiencyError:
            if spec.lam == 0:
                raise
            prior = np.zeros(K)
    else:
        if spec.prior_mean.size != K:
            raise ValueError(f"prior mean has length {spec.prior_mean.size}, expected {K}")
        prior = scaler.beta_to_standard(spec.prior_mean) if scaler is not None else spec.prior_mean

    if spec.lam == 0:
        gamma = _weighted_ols(Xw, yw)
        A = Xw.T @ Xw
        if np.linalg.cond(A) > _COND_JITTER:
            gamma = np.linalg.solve(A + _JITTER * np.eye(K), Xw.T @ yw)
    else:
        A = Xw.T @ Xw + spec.lam * np.eye(K)
        gamma = np.linalg.solve(A, Xw.T @ yw + spec.lam * prior)

    resid = y - Xs @ gamma
    sse = float(np.sum(w * resid * resid))
    beta = scaler.beta_to_original(gamma) if scaler is not None else gamma
    return beta, sse


def batched_penalized_sse(G, b, c, lam: float, prior, check_rank: bool):
    """Solve a stack of ridge normal equations from sufficient statistics.

    ``G`` (m, K, K) holds X'WX, ``b`` (m, K) X'Wy and ``c`` (m,) y'Wy.
    Returns ``(objective, beta)`` where objective is the penalized weighted
    SSE; systems with no weight or (when ``check_rank``) a numerically
    singular X'WX get :data:`INFEASIBLE`.
    """
    m, K, _ = G.shape
    eye = np.eye(K)
    A = G + lam * eye
    rhs = b + lam * prior
    bad = np.trace(G, axis1=1, axis2=2) <= 0
    if check_rank:
        if K == 1:
            bad |= A[:, 0, 0] <= _RANK_RTOL * np.abs(A[:, 0, 0]).max(initial=0.0)
        else:
            s = np.linalg.svd(A, compute_uv=False)
            bad |= s[:, -1] <= _RANK_RTOL * s[:, 0]
    if bad.any():
        A = np.where(bad[:, None, None], eye, A)
    if K == 1:
        beta = rhs / A[:, :, 0]
    else:
        beta = np.linalg.solve(A, rhs[..., None])[..., 0]
    fit = np.einsum("mi,mij,mj->m", beta, G, beta)
    obj = c - 2.0 * np.einsum("mi,mi->m", beta, b) + fit
    if lam:
        dev = beta - prior
        obj = obj + lam * np.einsum("mi,mi->m", dev, dev)
    obj = np.where(bad, INFEASIBLE, np.maximum(obj, 0.0))
    return obj, beta


def split_objective(candidate, node, X, y, S, spec: RidgeSpec, zeta: float,
                    *, min_leaf: int = 1, available=None) -> float:
    """Penalized WLS objective of splitting ``node`` on ``S[:, j] <= c``.

    Each child is expanded with its random-walk podium over the rows marked
    ``available`` (all rows by default), solved with ridge shrinkage toward
    ``spec.prior_mean`` (the node's own OLS fit when unset), and the two
    penalized weighted SSEs are summed.  Children smaller than ``min_leaf``
    make the split infeasible.  Everything is computed in the coordinates of
    ``X`` as given; ``spec.standardize`` is ignored.
    """
    j, c = candidate
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    S = np.asarray(S, dtype=float)
    T = y.size
    node = np.unique(np.asarray(node, dtype=int))
    avail = np.ones(T, dtype=bool) if available is None else np.asarray(available, dtype=bool)
    left = node[S[node, j] <= c]
    right = node[S[node, j] > c]
    if min(left.size, right.size) < max(1, min_leaf):
        return INFEASIBLE
    prior = spec.prior_mean
    if prior is None:
        w_node = podium_stack(np.isin(np.arange(T), node), zeta) * avail
        try:
            prior = ridge_wls_solve(X[w_node > 0], y[w_node > 0], w_node[w_node > 0], RidgeSpec(0.0))[0]
        except RankDeficiencyError:
            prior = np.zeros(X.shape[1])
    spec = RidgeSpec(spec.lam, prior, standardize=False)
    total = 0.0
    for child in (left, right):
        w = podium_stack(np.isin(np.arange(T), child), zeta) * avail
        keep = w > 0
        try:
            beta, sse = ridge_wls_solve(X[keep], y[keep], w[keep], spec)
        except RankDeficiencyError:
            return INFEASIBLE
        total += sse + spec.lam * float(np.sum((beta - spec.prior_mean) ** 2))
    return total
