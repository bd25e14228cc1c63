"""Comparison features and KL-divergence estimates between sample sets.

The DVE reward is the reciprocal of ``KL(source batch || target buffer)``
computed over per-transition feature rows. Three estimators are offered:

* ``knn``: nonparametric k-nearest-neighbour estimate for continuous data;
* ``gaussian``: closed form between moment-fitted diagonal Gaussians;
* ``histogram``: plug-in estimate over exact feature vectors, meant for
  domains whose features take finitely many values (the toy grids).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .buffer import ReplayBuffer

KNN = "knn"
GAUSSIAN = "gaussian"
HISTOGRAM = "histogram"
METHODS = (KNN, GAUSSIAN, HISTOGRAM)

# k-NN distances are floored here so exact duplicates cannot produce log(0).
DISTANCE_FLOOR = 1e-10
VARIANCE_FLOOR = 1e-12


class FeatureMode(str, enum.Enum):
    STATE_ONLY = "state"
    STATE_ACTION_NEXT = "state_action_next"

    def width(self, state_dim: int, action_width: int) -> int:
        if self is FeatureMode.STATE_ONLY:
            return state_dim
        return 2 * state_dim + action_width


@dataclass(frozen=True)
class KlEstimatorConfig:
    method: str = KNN
    k: int = 5
    clamp_floor: float = 1e-3
    # Dequantization jitter for discrete-valued features, see ``dequantize``.
    dequantize: bool = True
    # Histogram estimator: add-alpha smoothing of the Q side and the
    # Miller-Madow correction of the P-side entropy.
    smoothing: float = 0.5
    bias_correction: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.clamp_floor > 0:
            raise ValueError("clamp_floor must be positive")
        if not self.smoothing > 0:
            raise ValueError("smoothing must be positive")

    @property
    def needs_neighbours(self) -> bool:
        return self.method == KNN

    @property
    def reward_cap(self) -> float:
        return 1.0 / self.clamp_floor


def extract_features(batch: ReplayBuffer, mode: FeatureMode) -> np.ndarray:
    """Feature matrix for ``batch``; rewards and terminal flags never appear.

    ``STATE_ONLY`` rows are ``x``; ``STATE_ACTION_NEXT`` rows are
    ``[x, u, x']`` with a discrete action embedded as one real coordinate.
    """
    mode = FeatureMode(mode)
    if len(batch) == 0:
        raise ValueError("cannot extract features from an empty batch")
    a = batch.arrays
    if mode is FeatureMode.STATE_ONLY:
        return np.array(a.states, dtype=np.float64)
    actions = a.actions.reshape(len(a), -1).astype(np.float64)
    return np.hstack([a.states, actions, a.next_states])


def _check_pair(p, q):
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"feature dimension mismatch: {p.shape[1]} vs {q.shape[1]}")
    return p, q


def kl_knn(p_samples, q_samples, k: int = 5) -> float:
    """k-nearest-neighbour estimate of ``D(P || Q)`` from samples.

    Uses the Wang-Kulkarni-Verdu estimator

        D = d/n * sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))

    where ``rho_k`` is the distance from ``p_i`` to its k-th neighbour among
    the other P samples and ``nu_k`` the distance to its k-th neighbour in Q.
    Negative estimates are clamped to zero.
    """
    p, q = _check_pair(p_samples, q_samples)
    n, d = p.shape
    m = q.shape[0]
    if n < k + 1 or m < k + 1:
        raise ValueError(f"k-NN estimator needs at least k+1={k + 1} samples per set")
    # k+1 because the nearest point to p_i within P is p_i itself
    rho = cKDTree(p).query(p, k=[k + 1])[0][:, 0]
    nu = cKDTree(q).query(p, k=[k])[0][:, 0]
    rho = np.maximum(rho, DISTANCE_FLOOR)
    nu = np.maximum(nu, DISTANCE_FLOOR)
    est = d * np.mean(np.log(nu / rho)) + np.log(m / (n - 1.0))
    return max(0.0, float(est))


def _diag_moments(x, weights=None):
    if weights is None:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        mean = w @ x
        var = w @ (x - mean) ** 2
    return mean, np.maximum(var, VARIANCE_FLOOR)


def kl_gaussian(p_samples, q_samples, p_weights=None) -> float:
    """Closed-form KL between diagonal Gaussians fitted by moments.

    ``p_weights`` turns the P-side fit into weighted moments. Variances are
    population (ddof=0) moments floored at ``VARIANCE_FLOOR``.
    """
    p, q = _check_pair(p_samples, q_samples)
    if p.shape[0] < 2 and p_weights is None or q.shape[0] < 2:
        raise ValueError("Gaussian fit needs at least 2 samples per set")
    mu_p, var_p = _diag_moments(p, p_weights)
    mu_q, var_q = _diag_moments(q)
    kl = 0.5 * np.sum(np.log(var_q / var_p) + var_p / var_q + (mu_p - mu_q) ** 2 / var_q - 1.0)
    return max(0.0, float(kl))


def cell_codes(*sample_sets) -> list[np.ndarray]:
    """Integer codes of distinct rows, consistent across all given sets."""
    sets = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in sample_sets]
    _, inverse = np.unique(np.vstack(sets), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    bounds = np.cumsum([0] + [len(x) for x in sets])
    return [inverse[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def kl_histogram(p_samples, q_samples, p_weights=None, smoothing=0.5, bias_correction=True) -> float:
    """Plug-in KL over the distinct rows of both sample sets.

    Each distinct feature vector is one cell. With K cells in the union of
    both sets (zero-weight P rows included), the Q side is smoothed to
    ``(count + smoothing) / (m + smoothing * K)`` so P mass on cells absent
    from Q is finite but heavily penalised. The P side is the (weighted)
    empirical distribution; with ``bias_correction`` the Miller-Madow term
    ``(K_p - 1) / (2 n_eff)`` is subtracted, where ``K_p`` counts occupied
    P cells and ``n_eff = (sum w)^2 / sum w^2``. That term removes the
    leading bias of the plug-in entropy, which would otherwise reward
    larger selections for their size alone. The result is clamped at 0.
    """
    p, q = _check_pair(p_samples, q_samples)
    p_codes, q_codes = cell_codes(p, q)
    return kl_histogram_codes(p_codes, q_codes, p_weights, smoothing, bias_correction)


def kl_histogram_codes(p_codes, q_codes, p_weights=None, smoothing=0.5, bias_correction=True) -> float:
    """``kl_histogram`` on precomputed cell codes (see ``cell_codes``)."""
    p_codes = np.asarray(p_codes)
    q_codes = np.asarray(q_codes)
    if len(p_codes) == 0 or len(q_codes) == 0:
        raise ValueError("histogram estimator needs non-empty sample sets")
    w = np.ones(len(p_codes)) if p_weights is None else np.asarray(p_weights, dtype=np.float64)
    if w.shape != p_codes.shape:
        raise ValueError("one weight per P row is required")
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")
    # relabel so that K counts only the cells present in these two sets
    present, local = np.unique(np.concatenate([p_codes, q_codes]), return_inverse=True)
    n_cells = len(present)
    p_mass = np.bincount(local[: len(p_codes)], weights=w, minlength=n_cells)
    q_count = np.bincount(local[len(p_codes) :], minlength=n_cells)
    q_prob = (q_count + smoothing) / (len(q_codes) + smoothing * n_cells)
    occupied = p_mass > 0
    p_prob = p_mass[occupied] / p_mass.sum()
    kl = float(np.sum(p_prob * np.log(p_prob / q_prob[occupied])))
    if bias_correction:
        n_eff = w.sum() ** 2 / np.sum(w**2)
        kl -= (occupied.sum() - 1) / (2.0 * n_eff)
    return max(0.0, kl)


def grid_spacing(samples) -> np.ndarray:
    """Smallest gap between distinct values in each column (1.0 if constant)."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    gaps = np.ones(x.shape[1])
    for j in range(x.shape[1]):
        vals = np.unique(x[:, j])
        if len(vals) > 1:
            gaps[j] = np.min(np.diff(vals))
    return gaps


def dequantize(samples, spacing, rng: np.random.Generator) -> np.ndarray:
    """Add uniform jitter of one grid cell per column.

    Spreading each discrete point uniformly over its own cell keeps the KL
    between two discrete distributions unchanged while removing the exact
    ties that break nearest-neighbour distances.
    """
    x = np.asarray(samples, dtype=np.float64)
    return x + (rng.random(x.shape) - 0.5) * spacing


def estimate_kl(p, q, cfg: KlEstimatorConfig, rng=None, spacing=None) -> float:
    """Unweighted KL per ``cfg``; k-NN jitters both sets first when ``spacing`` is given."""
    if cfg.method == GAUSSIAN:
        return kl_gaussian(p, q)
    if cfg.method == HISTOGRAM:
        return kl_histogram(p, q, smoothing=cfg.smoothing, bias_correction=cfg.bias_correction)
    if spacing is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        p = dequantize(p, spacing, rng)
        q = dequantize(q, spacing, rng)
    return kl_knn(p, q, cfg.k)


def weighted_kl(
    p, q, weights, cfg: KlEstimatorConfig, rng: np.random.Generator, spacing=None
) -> float:
    """KL with the P side reweighted by ``weights``.

    Gaussian fits use weighted moments and the histogram estimator
    weighted cell masses. The k-NN estimator resamples P with replacement
    proportionally to the weights (same sample count), then jitters both
    sets by ``spacing`` if given; without jitter the resampled duplicates
    sit at distance zero from each other.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")
    if cfg.method == GAUSSIAN:
        return kl_gaussian(p, q, p_weights=w)
    if cfg.method == HISTOGRAM:
        return kl_histogram(p, q, w, cfg.smoothing, cfg.bias_correction)
    p = np.asarray(p, dtype=np.float64)
    idx = rng.choice(len(p), size=len(p), replace=True, p=w / w.sum())
    p = p[idx]
    if spacing is not None:
        p = dequantize(p, spacing, rng)
        q = dequantize(q, spacing, rng)
    return kl_knn(p, q, cfg.k)


def reward_from_kl(kl: float, cfg: KlEstimatorConfig) -> float:
    """Reciprocal-KL reward ``1 / max(kl, clamp_floor)``."""
    if kl < 0:
        raise ValueError("KL must be non-negative")
    return 1.0 / max(kl, cfg.clamp_floor)
