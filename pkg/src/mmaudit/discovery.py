"""Label-aware slice discovery.

A diagonal Gaussian mixture is fitted over embeddings jointly with binary
labels and predictions. Each slice j carries a weight, a Gaussian over the
embedding, and categorical distributions over the label and the prediction.
The categorical factor is raised to the power ``gamma``, so large gamma
pulls slices toward (label, prediction) purity and gamma = 0 reduces to a
plain GMM. An error-only variant clusters just the misclassified samples of
each class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


class DiscoveryError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iters: int = 200
    tol: float = 1e-5
    n_init: int = 3
    alpha: float = 1e-2  # pseudo-counts on label/prediction distributions
    var_floor: float = 1e-6
    kmeans_iters: int = 10


@dataclass(frozen=True)
class SliceModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, k)
    variances: np.ndarray  # (K, k)
    label_dist: np.ndarray  # (K, 2) P(y | slice)
    pred_dist: np.ndarray  # (K, 2) P(yhat | slice)
    gamma: float
    log_likelihood_trace: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def objective(self) -> float:
        return self.log_likelihood_trace[-1]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "gamma": self.gamma,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "label_dist": self.label_dist.tolist(),
            "pred_dist": self.pred_dist.tolist(),
            "log_likelihood_trace": list(self.log_likelihood_trace),
        }


@dataclass(frozen=True)
class SliceAssignment:
    memberships: np.ndarray  # (N, K)
    slices: list[np.ndarray]  # per slice, indices with membership > beta
    beta: float
    # log(r / (1 - r)) per entry, kept separately because r saturates at 1.0
    log_odds: np.ndarray | None = None

    def slice_ids(self, j: int, ids) -> list[str]:
        return [ids[i] for i in self.slices[j]]


def _check_inputs(u, y, yhat):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise DiscoveryError("u must be a 2-D array")
    if not np.isfinite(u).all():
        raise DiscoveryError("non-finite values in u")
    y = np.asarray(y).astype(np.int64)
    yhat = np.asarray(yhat).astype(np.int64)
    n = u.shape[0]
    if y.shape != (n,) or yhat.shape != (n,):
        raise DiscoveryError("y and yhat must be length-N vectors")
    if not (np.isin(y, (0, 1)).all() and np.isin(yhat, (0, 1)).all()):
        raise DiscoveryError("y and yhat must be binary")
    return u, y, yhat


def kmeans_pp_resp(u: np.ndarray, K: int, rng: np.random.Generator, lloyd_iters: int = 10) -> np.ndarray:
    """Hard one-hot responsibilities from k-means++ seeding plus Lloyd steps."""
    n = u.shape[0]
    if np.unique(u, axis=0).shape[0] < K:
        raise DiscoveryError("insufficient diversity: fewer distinct rows than slices")
    centers = np.empty((K, u.shape[1]))
    centers[0] = u[rng.integers(n)]
    d2 = ((u - centers[0]) ** 2).sum(axis=1)
    for c in range(1, K):
        centers[c] = u[rng.choice(n, p=d2 / d2.sum())]
        d2 = np.minimum(d2, ((u - centers[c]) ** 2).sum(axis=1))
    labels = None
    for _ in range(lloyd_iters + 1):
        dist = ((u[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(K):
            members = u[labels == c]
            # an emptied cluster keeps its previous center
            if len(members):
                centers[c] = members.mean(axis=0)
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    return resp


def _m_step(u, y, yhat, resp, opts: FitOptions):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = resp.T @ u / nk[:, None]
    variances = np.empty_like(means)
    for j in range(resp.shape[1]):
        variances[j] = resp[:, j] @ (u - means[j]) ** 2 / nk[j]
    variances = np.maximum(variances, opts.var_floor)
    label_dist = resp.T @ np.stack([1 - y, y], axis=1) + opts.alpha
    pred_dist = resp.T @ np.stack([1 - yhat, yhat], axis=1) + opts.alpha
    label_dist /= label_dist.sum(axis=1, keepdims=True)
    pred_dist /= pred_dist.sum(axis=1, keepdims=True)
    return weights, means, variances, label_dist, pred_dist


def _log_joint(u, y, yhat, weights, means, variances, label_dist, pred_dist, gamma):
    """(N, K) matrix of log pi_j + log N(u_i) + gamma * log[p_j(y_i) q_j(yhat_i)]."""
    maha = np.stack([((u - m) ** 2 / v).sum(axis=1) for m, v in zip(means, variances)], axis=1)
    log_norm = -0.5 * (u.shape[1] * LOG_2PI + np.log(variances).sum(axis=1) + maha)
    with np.errstate(divide="ignore"):
        out = np.log(weights) + log_norm
        if gamma != 0:
            out = out + gamma * (np.log(label_dist[:, y].T) + np.log(pred_dist[:, yhat].T))
    return out


def _e_step(log_joint):
    """Normalized responsibilities and the per-row log normalizer.

    Rows where every component has zero density fall back to uniform.
    """
    with np.errstate(invalid="ignore"):
        norm = logsumexp(log_joint, axis=1)
    dead = ~np.isfinite(norm)
    resp = np.empty_like(log_joint)
    resp[~dead] = np.exp(log_joint[~dead] - norm[~dead, None])
    resp[dead] = 1.0 / log_joint.shape[1]
    return resp, norm


def _prior_term(label_dist, pred_dist, gamma, alpha):
    # Log of the smoothing prior; the smoothed M-step maximizes data term + this.
    if gamma == 0 or alpha == 0:
        return 0.0
    return gamma * alpha * float(np.log(label_dist).sum() + np.log(pred_dist).sum())


def _run_em(u, y, yhat, resp, gamma, opts: FitOptions) -> SliceModel:
    trace: list[float] = []
    params = _m_step(u, y, yhat, resp, opts)
    for it in range(opts.max_iters + 1):
        log_joint = _log_joint(u, y, yhat, *params, gamma)
        resp, norm = _e_step(log_joint)
        obj = float(norm.sum()) + _prior_term(params[3], params[4], gamma, opts.alpha)
        trace.append(obj)
        if it == opts.max_iters:
            break
        if it > 0 and abs(obj - trace[-2]) < opts.tol * abs(trace[-2]):
            break
        params = _m_step(u, y, yhat, resp, opts)
    weights, means, variances, label_dist, pred_dist = params
    return SliceModel(weights, means, variances, label_dist, pred_dist, float(gamma), trace)


def fit_slice_model(
    u,
    y,
    yhat,
    K: int = 5,
    gamma: float = 10.0,
    seed: int = 0,
    opts: FitOptions | None = None,
    init_resp: np.ndarray | None = None,
) -> SliceModel:
    """Fit the gamma-weighted mixture by EM; best of ``opts.n_init`` restarts.

    Restart r is initialised by k-means++ with seed ``seed + r``. Passing
    ``init_resp`` (an N x K responsibility matrix) replaces the k-means++
    initialisation and runs a single restart.
    """
    opts = opts or FitOptions()
    u, y, yhat = _check_inputs(u, y, yhat)
    if not u.shape[0] > K >= 1:
        raise DiscoveryError(f"need N > K >= 1, got N={u.shape[0]}, K={K}")
    if gamma < 0:
        raise DiscoveryError("gamma must be non-negative")
    return _fit(u, y, yhat, K, gamma, seed, opts, init_resp)


def _fit(u, y, yhat, K, gamma, seed, opts, init_resp=None) -> SliceModel:
    if init_resp is not None:
        return _run_em(u, y, yhat, np.asarray(init_resp, dtype=float), gamma, opts)
    if K > 1 and np.all(u == u[0]):
        raise DiscoveryError("insufficient diversity: all rows identical")
    best = None
    for r in range(max(1, opts.n_init)):
        rng = np.random.default_rng(seed + r)
        model = _run_em(u, y, yhat, kmeans_pp_resp(u, K, rng, opts.kmeans_iters), gamma, opts)
        # strict '>' keeps the lowest restart seed on ties
        if best is None or model.objective > best.objective:
            best = model
    return best


def _log_joint_for(model: SliceModel, u, y, yhat):
    u, y, yhat = _check_inputs(u, y, yhat)
    if u.shape[1] != model.means.shape[1]:
        raise DiscoveryError(f"u has {u.shape[1]} columns, model expects {model.means.shape[1]}")
    return _log_joint(
        u, y, yhat, model.weights, model.means, model.variances, model.label_dist, model.pred_dist, model.gamma
    )


def memberships(model: SliceModel, u, y, yhat) -> np.ndarray:
    return _e_step(_log_joint_for(model, u, y, yhat))[0]


def _log_odds(log_joint: np.ndarray, resp: np.ndarray) -> np.ndarray:
    K = log_joint.shape[1]
    out = np.empty_like(log_joint)
    if K == 1:
        out[:] = np.inf
        return out
    with np.errstate(invalid="ignore", divide="ignore"):
        for j in range(K):
            rest = logsumexp(np.delete(log_joint, j, axis=1), axis=1)
            out[:, j] = log_joint[:, j] - rest
    dead = ~np.isfinite(logsumexp(log_joint, axis=1))
    out[dead] = np.log(resp[dead] / (1 - resp[dead]))
    return out


def assign_slices(model: SliceModel, u, y, yhat, beta: float = 0.5) -> SliceAssignment:
    if not 0 <= beta < 1:
        raise DiscoveryError("beta must lie in [0, 1)")
    log_joint = _log_joint_for(model, u, y, yhat)
    resp = _e_step(log_joint)[0]
    slices = [np.flatnonzero(resp[:, j] > beta) for j in range(model.K)]
    return SliceAssignment(memberships=resp, slices=slices, beta=float(beta), log_odds=_log_odds(log_joint, resp))


def slice_error_rates(assignment: SliceAssignment, y, yhat) -> np.ndarray:
    wrong = np.asarray(y) != np.asarray(yhat)
    return np.array([wrong[s].mean() if len(s) else np.nan for s in assignment.slices])


def rank_slices(model: SliceModel, assignment: SliceAssignment, y, yhat) -> list[int]:
    """Slices by descending error rate, then larger size, then lower index; empty slices last."""
    rates = slice_error_rates(assignment, y, yhat)
    sizes = [len(s) for s in assignment.slices]
    return sorted(
        range(len(sizes)),
        key=lambda j: (sizes[j] == 0, -(rates[j] if sizes[j] else 0.0), -sizes[j], j),
    )


def fit_error_only(u, y, yhat, K: int = 5, seed: int = 0, opts: FitOptions | None = None) -> SliceModel:
    """Plain GMM per class on that class's misclassified samples, merged.

    Each merged component has a one-hot label distribution (its class) and a
    one-hot prediction distribution (the wrong class), and ``gamma`` is 1, so
    under :func:`memberships` only misclassified samples of the matching class
    get non-zero density. Samples no component explains get uniform rows.
    Classes with fewer than K misclassified samples are skipped.
    """
    opts = opts or FitOptions()
    u, y, yhat = _check_inputs(u, y, yhat)
    parts = []
    for c in (0, 1):
        mask = (y == c) & (yhat != c)
        if mask.sum() < K:
            continue
        sub = u[mask]
        model = _fit(sub, y[mask], yhat[mask], K, 0.0, seed, opts)
        parts.append((c, int(mask.sum()), model))
    if not parts:
        raise DiscoveryError(f"fewer than K={K} misclassified samples in every class")
    total = sum(n for _, n, _ in parts)
    weights = np.concatenate([m.weights * n / total for _, n, m in parts])
    label_dist = np.vstack([np.tile(np.eye(2)[c], (K, 1)) for c, _, _ in parts])
    pred_dist = np.vstack([np.tile(np.eye(2)[1 - c], (K, 1)) for c, _, _ in parts])
    length = max(len(m.log_likelihood_trace) for _, _, m in parts)
    trace = np.zeros(length)
    for _, _, m in parts:
        t = m.log_likelihood_trace
        trace += np.array(t + [t[-1]] * (length - len(t)))
    return SliceModel(
        weights=weights,
        means=np.vstack([m.means for _, _, m in parts]),
        variances=np.vstack([m.variances for _, _, m in parts]),
        label_dist=label_dist,
        pred_dist=pred_dist,
        gamma=1.0,
        log_likelihood_trace=trace.tolist(),
    )
