"""Comparison models: LINEAR-k autoregressors, Gaussian HMMs, the average
predictor, and the exact discrete-HMM filter used as an oracle."""
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (CorruptModelFile, InsufficientPairs, NonFiniteLoss,
                     UnknownHorizon, ZeroProbabilityObservation)
from .numerics import ridge_solve

VARIANCE_FLOOR = 1e-4
RIDGE_GRID = (1e-6, 1e-4, 1e-2, 1.0)


def _obs(seq):
    return seq.obs if hasattr(seq, "obs") else np.asarray(seq, dtype=np.float64)


# --------------------------------------------------------------------------
# LINEAR-k
# --------------------------------------------------------------------------

@dataclass(eq=False)
class LinearArModel:
    """Direct multi-horizon autoregressor.

    ``weights[k]`` has shape (order*d, d); block i (rows i*d:(i+1)*d) is the
    matrix applied to x_{t-i}. ``biases[k]`` is the offset for horizon k.
    """
    order: int
    d: int
    weights: dict
    biases: dict
    lambdas: dict

    @property
    def horizons(self):
        return sorted(self.weights)

    def L(self, i, horizon):
        """Weight block applied to x_{t-i+1} (1-based, as L^i)."""
        return self.weights[horizon][(i - 1) * self.d:i * self.d]


def ar_windows(obs, order, horizon):
    """Stacked (window, target) pairs; window row is [x_t, x_{t-1}, ...]."""
    obs = _obs(obs)
    T = obs.shape[0]
    ts = np.arange(order, T - horizon + 1)  # 1-based t with a full window and a target
    if len(ts) == 0:
        return np.empty((0, order * obs.shape[1])), np.empty((0, obs.shape[1]))
    X = np.concatenate([obs[ts - 1 - i] for i in range(order)], axis=1)
    return X, obs[ts - 1 + horizon]


def _fit_one(data, order, horizon, lam):
    pairs = [ar_windows(s, order, horizon) for s in data]
    X = np.concatenate([p[0] for p in pairs])
    Y = np.concatenate([p[1] for p in pairs])
    if len(X) == 0:
        raise InsufficientPairs(
            f"no (window, target) pairs for order {order} at horizon {horizon}")
    xm, ym = X.mean(axis=0), Y.mean(axis=0)
    W = ridge_solve(X - xm, Y - ym, lam)
    return W, ym - xm @ W


def fit_linear_ar(data, k, horizon=1, lam=0.0):
    """Ridge fit of x_{t+h} on [x_t, ..., x_{t-k+1}] for each requested horizon.

    The intercept is not penalized. ``horizon`` may be an int or a list.
    """
    horizons = [horizon] if np.isscalar(horizon) else list(horizon)
    d = _obs(data[0]).shape[1]
    W, b, lams = {}, {}, {}
    for hz in horizons:
        W[hz], b[hz] = _fit_one(data, k, hz, lam)
        lams[hz] = lam
    return LinearArModel(order=k, d=d, weights=W, biases=b, lambdas=lams)


def fit_linear_ar_selected(train, validation, k, horizons, grid=RIDGE_GRID):
    """Per-horizon ridge penalty chosen by validation MSE over ``grid``."""
    d = _obs(train[0]).shape[1]
    W, b, lams = {}, {}, {}
    for hz in horizons:
        val = [ar_windows(s, k, hz) for s in validation]
        Xv = np.concatenate([v[0] for v in val]) if val else np.empty((0, k * d))
        Yv = np.concatenate([v[1] for v in val]) if val else np.empty((0, d))
        best = None
        for lam in grid:
            Wl, bl = _fit_one(train, k, hz, lam)
            err = np.mean((Xv @ Wl + bl - Yv) ** 2) if len(Xv) else 0.0
            if best is None or err < best[0]:
                best = (err, lam, Wl, bl)
        _, lams[hz], W[hz], b[hz] = best
    return LinearArModel(order=k, d=d, weights=W, biases=b, lambdas=lams)


def predict_linear_ar(model, window, horizon):
    """``window`` lists x_t, x_{t-1}, ..., newest first."""
    if horizon not in model.weights:
        raise UnknownHorizon(f"model was not fitted for horizon {horizon}; has {model.horizons}")
    window = [np.asarray(v, dtype=np.float64) for v in window]
    if len(window) != model.order:
        raise ValueError(f"window has {len(window)} vectors, model order is {model.order}")
    return np.concatenate(window) @ model.weights[horizon] + model.biases[horizon]


# --------------------------------------------------------------------------
# average predictor
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AveragePredictor:
    d: int

    def predict(self, prefix=None, k=1):
        return np.zeros(self.d)


def average_predictor(d):
    return AveragePredictor(d)


# --------------------------------------------------------------------------
# Gaussian-emission HMM
# --------------------------------------------------------------------------

@dataclass(eq=False)
class GaussianHmm:
    pi: np.ndarray
    trans: np.ndarray
    means: np.ndarray       # (n, d)
    variances: np.ndarray   # (n, d), diagonal covariances

    @property
    def n_states(self):
        return len(self.pi)

    @property
    def d(self):
        return self.means.shape[1]


def gaussian_log_emissions(model, obs):
    obs = _obs(obs)
    diff = obs[:, None, :] - model.means[None, :, :]
    return -0.5 * (np.sum(np.log(2.0 * np.pi * model.variances), axis=1)[None, :]
                   + np.sum(diff * diff / model.variances[None, :, :], axis=2))


def _init_hmm(data, n_states, rng, var_floor):
    X = np.concatenate([_obs(s) for s in data])
    labels = rng.integers(0, n_states, len(X))
    gmean = X.mean(axis=0)
    gvar = np.maximum(X.var(axis=0), var_floor)
    means = np.empty((n_states, X.shape[1]))
    variances = np.empty_like(means)
    for k in range(n_states):
        pts = X[labels == k]
        if len(pts) == 0:
            means[k] = gmean
            variances[k] = gvar
        else:
            means[k] = pts.mean(axis=0)
            variances[k] = np.maximum(pts.var(axis=0), var_floor) if len(pts) > 1 else gvar
    pi = np.full(n_states, 1.0 / n_states)
    trans = np.full((n_states, n_states), 1.0 / n_states)
    return GaussianHmm(pi, trans, means, variances)


def _em_step(model, data, var_floor):
    n, d = model.n_states, model.d
    pi_acc = np.zeros(n)
    xi_acc = np.zeros((n, n))
    w_acc = np.zeros(n)
    x_acc = np.zeros((n, d))
    xx_acc = np.zeros((n, d))
    ll = 0.0
    for s in data:
        obs = _obs(s)
        gamma, xi, lls = kernels.hmm_forward_backward(gaussian_log_emissions(model, obs),
                                                      model.pi, model.trans)
        ll += lls
        pi_acc += gamma[0]
        xi_acc += xi
        w_acc += gamma.sum(axis=0)
        x_acc += gamma.T @ obs
        xx_acc += gamma.T @ (obs * obs)
    if not np.isfinite(ll):
        raise NonFiniteLoss("HMM log-likelihood became non-finite")

    pi = pi_acc / pi_acc.sum()
    rows = xi_acc.sum(axis=1)
    trans = model.trans.copy()
    live = rows > 0
    trans[live] = xi_acc[live] / rows[live, None]
    means = model.means.copy()
    variances = model.variances.copy()
    used = w_acc > 1e-300
    means[used] = x_acc[used] / w_acc[used, None]
    raw_var = xx_acc[used] / w_acc[used, None] - means[used] ** 2
    variances[used] = np.maximum(raw_var, var_floor)
    # rows renormalized so stochasticity holds to rounding
    pi /= pi.sum()
    trans /= trans.sum(axis=1, keepdims=True)
    return GaussianHmm(pi, trans, means, variances), ll


def hmm_loglik(model, data):
    total = 0.0
    for s in data:
        _, c = kernels.hmm_forward(gaussian_log_emissions(model, s), model.pi, model.trans)
        total += float(c.sum())
    return total


def hmm_em_fit(data, n_states, iters, rng, var_floor=VARIANCE_FLOOR, restarts=1):
    """Baum-Welch with diagonal Gaussian emissions.

    Returns the fitted model and the log-likelihood curve; entry i is the
    log-likelihood of the parameters after i M-steps (the last entry scores
    the returned model). The restart with the best final value wins.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if not data:
        raise ValueError("no training data")
    best = None
    for r in range(restarts):
        model = _init_hmm(data, n_states, rng.split(f"restart{r}"), var_floor)
        curve = []
        for _ in range(iters):
            model_next, ll = _em_step(model, data, var_floor)
            curve.append(ll)
            model = model_next
        curve.append(hmm_loglik(model, data))
        if best is None or curve[-1] > best[1][-1]:
            best = (model, curve)
    return best


def hmm_filter(model, obs):
    """Filtering posteriors P(y_t | x_1..x_t) for every t, shape (T, n)."""
    alpha, _ = kernels.hmm_forward(gaussian_log_emissions(model, obs), model.pi, model.trans)
    return alpha


def hmm_predict(model, seq, t, k):
    """Mixture mean of x_{t+k} given x_1..x_t under exact filtering."""
    obs = _obs(seq)[:t]
    if t < 1 or len(obs) < t:
        raise ValueError(f"t={t} outside 1..{len(_obs(seq))}")
    if k < 1:
        raise ValueError("k must be >= 1")
    post = hmm_filter(model, obs)[-1]
    return post @ np.linalg.matrix_power(model.trans, k) @ model.means


def stationary_mean(model):
    vals, vecs = np.linalg.eig(model.trans.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    v = v / v.sum()
    return v @ model.means


# --------------------------------------------------------------------------
# exact discrete-HMM filter
# --------------------------------------------------------------------------

@dataclass(eq=False)
class DiscreteHmm:
    pi: np.ndarray
    trans: np.ndarray
    emit: np.ndarray   # (n_states, n_symbols)

    @property
    def n_states(self):
        return len(self.pi)

    @property
    def n_symbols(self):
        return self.emit.shape[1]


@dataclass
class FilterResult:
    posteriors: np.ndarray   # (T, n): P(y_t | x_1..x_t)
    predictive: np.ndarray   # (T+1, m): row t is P(x_{t+1} | x_1..x_t)


def discrete_filter(model, symbols):
    symbols = [int(s) for s in symbols]
    for s in symbols:
        if not 0 <= s < model.n_symbols:
            raise ValueError(f"symbol {s} outside 0..{model.n_symbols - 1}")
    T = len(symbols)
    post = np.empty((T, model.n_states))
    pred = np.empty((T + 1, model.n_symbols))
    prior = np.asarray(model.pi, dtype=np.float64)
    pred[0] = prior @ model.emit
    for t, x in enumerate(symbols):
        joint = prior * model.emit[:, x]
        z = joint.sum()
        if z <= 0.0:
            raise ZeroProbabilityObservation(
                f"symbol {x} at position {t + 1} has zero probability under the model")
        post[t] = joint / z
        prior = post[t] @ model.trans
        pred[t + 1] = prior @ model.emit
        pred[t + 1] /= pred[t + 1].sum()
    return FilterResult(post, pred)


# --------------------------------------------------------------------------
# binary model files (same header + float64 payload idea as SPR models)
# --------------------------------------------------------------------------

LINEAR_MAGIC = b"SPRLAR\x00\x01"
HMM_MAGIC = b"SPRGHM\x00\x01"
AVERAGE_MAGIC = b"SPRAVG\x00\x01"
_VERSION = 1


def _f8(x):
    return np.ascontiguousarray(x, dtype="<f8").tobytes()


def serialize_baseline(model):
    if isinstance(model, LinearArModel):
        out = [struct.pack("<8sI3Q", LINEAR_MAGIC, _VERSION, model.order, model.d,
                           len(model.weights))]
        for hz in model.horizons:
            out.append(struct.pack("<Qd", hz, model.lambdas[hz]))
            out.append(_f8(model.weights[hz]))
            out.append(_f8(model.biases[hz]))
        return b"".join(out)
    if isinstance(model, GaussianHmm):
        return (struct.pack("<8sI2Q", HMM_MAGIC, _VERSION, model.n_states, model.d)
                + _f8(model.pi) + _f8(model.trans) + _f8(model.means) + _f8(model.variances))
    if isinstance(model, AveragePredictor):
        return struct.pack("<8sIQ", AVERAGE_MAGIC, _VERSION, model.d)
    raise TypeError(f"cannot serialize {type(model).__name__}")


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.data):
            raise CorruptModelFile("unexpected end of file", self.pos)
        vals = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return vals

    def array(self, *shape):
        n = int(np.prod(shape))
        if self.pos + 8 * n > len(self.data):
            raise CorruptModelFile("unexpected end of file", self.pos)
        a = np.frombuffer(self.data, "<f8", n, self.pos).astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(a)):
            raise CorruptModelFile("non-finite parameter value", self.pos)
        self.pos += 8 * n
        return a

    def finish(self):
        if self.pos != len(self.data):
            raise CorruptModelFile("trailing bytes after model payload", self.pos)


def deserialize_baseline(data):
    data = bytes(data)
    r = _Reader(data)
    magic, version = r.unpack("<8sI")
    if version != _VERSION:
        raise CorruptModelFile(f"unsupported format version {version}", 8)
    if magic == LINEAR_MAGIC:
        order, d, nh = r.unpack("<3Q")
        W, b, lams = {}, {}, {}
        for _ in range(nh):
            hz, lam = r.unpack("<Qd")
            W[hz] = r.array(order * d, d)
            b[hz] = r.array(d)
            lams[hz] = lam
        r.finish()
        return LinearArModel(order=order, d=d, weights=W, biases=b, lambdas=lams)
    if magic == HMM_MAGIC:
        n, d = r.unpack("<2Q")
        m = GaussianHmm(r.array(n), r.array(n, n), r.array(n, d), r.array(n, d))
        r.finish()
        return m
    if magic == AVERAGE_MAGIC:
        (d,) = r.unpack("<Q")
        r.finish()
        return AveragePredictor(d)
    raise CorruptModelFile("unrecognized magic number", 0)
