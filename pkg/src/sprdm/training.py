"""Three-stage SPR training.

1. Per-timestep initialization: A and C_2 are fit on x_1 -> x_2; then for
   t = 3..T, (B_t, C_t) start at the average of the earlier timesteps and
   take SGD steps with the earlier chain frozen.
2. Conditional training: a candidate shared B' is one BPTT gradient step.
3. Stochastic mixing: the candidate is installed with probability alpha,
   alpha annealed toward zero.

Projection operators D_j are fit last, in closed form.
"""
import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InsufficientPairs, NonFiniteLoss
from .model import (SprParams, augment_all, filter_states, init_params, n_projections,
                    with_projections)
from .numerics import Rng

log = logging.getLogger(__name__)

ANNEAL_KINDS = ("linear", "constant", "exponential")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    updates_per_timestep: int = 500
    mixing_iterations: int = 500
    alpha0: float = 0.9
    anneal: str = "linear"
    anneal_rate: float = 5.0        # only used by "exponential"
    w: int = 2
    h: int = 20
    ridge_lambda_D: float = 1e-6
    projection_anchor: float = 1.0
    seed: int = 0
    clip_norm: float = 10.0
    mixing_learning_rate: float = None   # defaults to learning_rate
    init_stddev: float = 0.01
    log_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.mixing_learning_rate is not None and not self.mixing_learning_rate >= 0:
            raise ValueError("mixing_learning_rate must be >= 0")
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ValueError("alpha0 must lie in [0, 1]")
        if self.anneal not in ANNEAL_KINDS:
            raise ValueError(f"anneal must be one of {ANNEAL_KINDS}")
        if self.w < 1 or self.h < 1:
            raise ValueError("w and h must be >= 1")
        if self.updates_per_timestep < 0 or self.mixing_iterations < 0:
            raise ValueError("update counts must be nonnegative")
        if min(self.ridge_lambda_D, self.projection_anchor) < 0:
            raise ValueError("ridge_lambda_D and projection_anchor must be >= 0")
        if self.clip_norm <= 0 or self.log_every < 1:
            raise ValueError("clip_norm must be > 0 and log_every >= 1")

    @property
    def mix_lr(self):
        return self.learning_rate if self.mixing_learning_rate is None else self.mixing_learning_rate


@dataclass
class PerTimestepParams:
    """Stacks of per-timestep operators; index i holds timestep t = i + 2."""
    d: int
    h: int
    w: int
    T: int
    A: np.ndarray
    b_A: np.ndarray
    B1: np.ndarray    # (T-1, p, h)
    B2: np.ndarray    # (T-1, h, h)
    b_B: np.ndarray   # (T-1, h)
    C: np.ndarray     # (T-1, h, d)
    a: np.ndarray     # (T-1, d)

    @property
    def timesteps(self):
        return range(2, self.T + 1)


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)   # (stage, iteration, loss)
    final_validation_loss: float = float("nan")
    wall_seconds: float = 0.0
    skipped_projections: list = field(default_factory=list)
    mixing_accepted: int = 0

    def record(self, stage, iteration, loss):
        if not np.isfinite(loss) or loss < 0:
            raise NonFiniteLoss(f"stage {stage}: loss {loss} at iteration {iteration}")
        self.rows.append((stage, int(iteration), float(loss)))

    def stage(self, name):
        return [(it, loss) for s, it, loss in self.rows if s == name]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "iteration", "loss"])
        for s, it, loss in self.rows:
            w.writerow([s, it, "%.17g" % loss])
        return buf.getvalue()


def _check_data(data):
    if not data:
        raise ValueError("training data is empty")
    d = data[0].obs.shape[1]
    for s in data:
        if s.obs.shape[1] != d:
            raise DimensionMismatch(f"sequence {s.id!r} has dim {s.obs.shape[1]}, expected {d}")
    return d


def _mean_losses(S, C, a, X):
    r = S @ C + a - X
    return float(np.mean(np.sum(r * r, axis=1)))


def _sgd_order(rng, n, updates):
    """Seeded shuffled passes over ``n`` sequences, truncated to ``updates``."""
    passes = -(-updates // n) if updates else 0
    order = np.concatenate([rng.permutation(n) for _ in range(passes)]) if passes else \
        np.empty(0, dtype=np.int64)
    return order[:updates]


def _run_stage(name, W, R, b, C, a, V, Sp, X, order, lr, log_every, report):
    def current():
        S = kernels._sig_np(V @ W + Sp @ R + b)
        return _mean_losses(S, C, a, X)

    report.record(name, 0, current())
    for start in range(0, len(order), log_every):
        chunk = order[start:start + log_every]
        losses = kernels.stage_sgd(W, R, b, C, a, V, Sp, X, chunk, lr)
        if len(losses) < len(chunk) or not np.all(np.isfinite(losses)):
            raise NonFiniteLoss(
                f"stage {name}: loss diverged at update {start + len(losses)}; "
                "lower the learning rate")
        report.record(name, start + len(chunk), current())


def train_initialization(data, cfg, report=None):
    """Stage 1: returns (PerTimestepParams, TrainReport)."""
    d = _check_data(data)
    report = TrainReport() if report is None else report
    h, w = cfg.h, cfg.w
    T = max(len(s) for s in data)
    if T < 2:
        raise ValueError("sequences need at least two observations to train")
    rng = Rng(cfg.seed).split("train")
    base = init_params(d, h, T, w, rng.split("init"), cfg.init_stddev)
    order_rng = rng.split("sgd-order")

    n_t = T - 1
    B1 = np.empty((n_t, base.p, h))
    B2 = np.empty((n_t, h, h))
    bB = np.empty((n_t, h))
    Cs = np.empty((n_t, h, d))
    As = np.empty((n_t, d))
    B1[0], B2[0], bB[0] = base.B1, base.B2, base.b_B

    Us = [augment_all(s.obs, w, T) for s in data]
    seqs = [s.obs for s in data]

    # t = 2: A and C_2 from x_1 -> x_2
    active = [i for i, o in enumerate(seqs) if len(o) >= 2]
    A = base.A.copy()
    bA = base.b_A.copy()
    C = base.C.copy()
    a = base.a.copy()
    V = np.array([Us[i][0] for i in active])
    X = np.array([seqs[i][1] for i in active])
    zeros_R = np.zeros((h, h))
    Sp = np.zeros((len(active), h))
    order = _sgd_order(order_rng, len(active), cfg.updates_per_timestep)
    _run_stage("init_t2", A, zeros_R, bA, C, a, V, Sp, X, order, cfg.learning_rate,
               cfg.log_every, report)
    Cs[0], As[0] = C, a
    state = {i: kernels._sig_np(Us[i][0] @ A + bA) for i in active}   # s_2

    for t in range(3, T + 1):
        k = t - 2
        W = B1[:k].mean(axis=0)
        R = B2[:k].mean(axis=0)
        b = bB[:k].mean(axis=0)
        C = Cs[:k].mean(axis=0)
        a = As[:k].mean(axis=0)
        active = [i for i, o in enumerate(seqs) if len(o) >= t]
        if active:
            V = np.array([Us[i][t - 2] for i in active])      # u_{t-1}
            Sp = np.array([state[i] for i in active])          # s_{t-1}
            X = np.array([seqs[i][t - 1] for i in active])     # x_t
            order = _sgd_order(order_rng, len(active), cfg.updates_per_timestep)
            _run_stage(f"init_t{t}", W, R, b, C, a, V, Sp, X, order, cfg.learning_rate,
                       cfg.log_every, report)
            new = kernels._sig_np(V @ W + Sp @ R + b)
            state = {i: new[r] for r, i in enumerate(active)}
        B1[k], B2[k], bB[k], Cs[k], As[k] = W, R, b, C, a

    per_t = PerTimestepParams(d=d, h=h, w=w, T=T, A=A, b_A=bA, B1=B1, B2=B2, b_B=bB,
                              C=Cs, a=As)
    return per_t, report


def collapse_to_shared(per_t, rng=None, init_stddev=0.01):
    """Uniform average over timesteps; projections freshly initialized."""
    h = per_t.h
    n = n_projections(per_t.T)
    if rng is None:
        D = tuple(np.zeros((h, h)) for _ in range(n))
    else:
        D = tuple(rng.normal(h * h, 0.0, init_stddev).reshape(h, h) for _ in range(n))
    return SprParams(d=per_t.d, h=h, w=per_t.w, T=per_t.T,
                     A=per_t.A.copy(), b_A=per_t.b_A.copy(),
                     B1=per_t.B1.mean(axis=0), B2=per_t.B2.mean(axis=0),
                     b_B=per_t.b_B.mean(axis=0),
                     C=per_t.C.mean(axis=0), a=per_t.a.mean(axis=0),
                     D=D, d_proj=tuple(np.zeros(h) for _ in range(n)))


GRAD_KEYS = ("A", "b_A", "B1", "B2", "b_B", "C", "a")
B_KEYS = ("B1", "B2", "b_B")


def sequence_loss(params, seq):
    """sum_{t=2..T} ||C's_t + a - x_t||^2 with the shared filter."""
    obs = seq.obs if hasattr(seq, "obs") else np.asarray(seq, dtype=np.float64)
    S = filter_states(params, obs[:-1])
    return float(np.sum((S @ params.C + params.a - obs[1:]) ** 2))


def bptt_gradient(params, seq, U=None):
    """Exact gradient of :func:`sequence_loss` through the whole recursion.

    Returns ``(loss, grads)`` with ``grads`` keyed like the parameter fields.
    """
    obs = seq.obs if hasattr(seq, "obs") else np.asarray(seq, dtype=np.float64)
    if len(obs) < 2:
        raise ValueError("BPTT needs a sequence of length >= 2")
    if obs.shape[1] != params.d:
        raise DimensionMismatch(f"observations have dim {obs.shape[1]}, model expects {params.d}")
    if U is None:
        U = augment_all(obs, params.w, params.T)
    loss, grads = kernels.spr_bptt(params.A, params.b_A, params.B1, params.B2, params.b_B,
                                   params.C, params.a, U, obs)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteLoss("BPTT produced a non-finite loss or gradient")
    return loss, dict(zip(GRAD_KEYS, grads))


def conditional_training_step(params, data, cfg, rng, inputs=None):
    """One clipped BPTT step on the B blocks over a sampled sequence.

    Returns the candidate ``{"B1", "B2", "b_B"}``. ``inputs`` optionally
    caches the augmented input arrays, aligned with ``data``.
    """
    i = int(rng.integers(0, len(data)))
    seq = data[i]
    if len(seq.obs) < 2:
        return {k: getattr(params, k) for k in B_KEYS}
    U = inputs[i] if inputs is not None else None
    _, g = bptt_gradient(params, seq, U)
    norm = np.sqrt(sum(float(np.sum(g[k] ** 2)) for k in B_KEYS))
    scale = cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0
    lr = cfg.mix_lr
    return {k: getattr(params, k) - lr * scale * g[k] for k in B_KEYS}


def stochastic_mix(params, candidate, alpha, rng):
    """Install ``candidate`` with probability ``alpha``.

    Returns the same object when the update is rejected.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if rng.uniform() < alpha:
        return replace(params, **candidate)
    return params


def anneal_alpha(alpha0, i, n, kind="linear", rate=5.0):
    if kind == "constant":
        return alpha0
    if kind == "linear":
        return alpha0 * (1.0 - i / n)
    return alpha0 * float(np.exp(-rate * i / n))


def _fit_projection(S, Sf, Y, C, a, lam, anchor):
    """Closed-form D, d for  sum ||(s D + d) C + a - y||^2 + anchor ||s D + d - s_f||^2
    + lam ||D||^2.

    The anchor term pins state directions the decoder barely sees to the
    filtered future state; anchor = 0 is plain least squares through C.
    Solved exactly in the eigenbases of S'S and CC' + anchor I.
    """
    h = S.shape[1]
    Y1 = Y - a
    Sm = S.mean(axis=0)
    Sc = S - Sm
    M = C @ C.T + anchor * np.eye(h)
    R = Sc.T @ (Y1 @ C.T + anchor * Sf)
    lg, Ug = np.linalg.eigh(Sc.T @ Sc)
    lm, Vm = np.linalg.eigh(M)
    denom = np.outer(np.maximum(lg, 0.0), np.maximum(lm, 0.0)) + lam
    tiny = denom <= 1e-12 * max(float(denom.max()), 1e-300)
    Wt = np.where(tiny, 0.0, (Ug.T @ R @ Vm) / np.where(tiny, 1.0, denom))
    D = Ug @ Wt @ Vm.T
    target = Y1.mean(axis=0) @ C.T + anchor * Sf.mean(axis=0)
    d = np.linalg.lstsq(M, target, rcond=None)[0] - Sm @ D
    return D, d


def projection_pairs(params, data, j):
    """Filtered states s_t, filtered s_{t+2^j} and targets x_{t+2^j}, t = 2..T-2^j."""
    gap = 2 ** j
    Ss, Sfs, Ys = [], [], []
    for s in data:
        obs = s.obs
        n = len(obs) - gap - 1
        if n < 1:
            continue
        S = filter_states(params, obs)    # s_2..s_{T+1}
        Ss.append(S[:n])
        Sfs.append(S[gap:gap + n])
        Ys.append(obs[1 + gap:1 + gap + n])
    if not Ss:
        return None, None, None
    return np.concatenate(Ss), np.concatenate(Sfs), np.concatenate(Ys)


def train_projections(params, data, cfg, report=None):
    """Closed-form D_j for every exponent; A, B and C stay untouched."""
    D = list(params.D)
    dp = list(params.d_proj)
    trained = 0
    for j in range(len(D)):
        S, Sf, Y = projection_pairs(params, data, j)
        if S is None:
            if report is not None:
                report.skipped_projections.append(j)
            log.info("projection %d skipped: no (s_t, x_{t+%d}) pairs", j, 2 ** j)
            continue
        D[j], dp[j] = _fit_projection(S, Sf, Y, params.C, params.a, cfg.ridge_lambda_D,
                                      cfg.projection_anchor)
        trained += 1
        if report is not None:
            r = np.clip(S @ D[j] + dp[j], 1e-6, 1 - 1e-6) @ params.C + params.a - Y
            report.record(f"proj_j{j}", 0, float(np.mean(np.sum(r * r, axis=1))))
    if trained == 0:
        raise InsufficientPairs("no projection operator has training pairs")
    return with_projections(params, D, dp)


def mean_step_loss(params, data):
    """Mean over (sequence, t >= 2) of ||C's_t + a - x_t||^2."""
    total, count = 0.0, 0
    for s in data:
        if len(s.obs) >= 2:
            total += sequence_loss(params, s)
            count += len(s.obs) - 1
    return total / max(count, 1)


def train_full(data, cfg, validation=None):
    """Initialization, collapse, mixing, projections. Returns (params, report)."""
    start = time.perf_counter()
    report = TrainReport()
    per_t, _ = train_initialization(data, cfg, report)
    rng = Rng(cfg.seed).split("train")
    params = collapse_to_shared(per_t, rng.split("proj-init"), cfg.init_stddev)
    report.record("collapse", 0, mean_step_loss(params, data))
    log.info("stage 1 done: collapsed loss %.6g", report.rows[-1][2])

    n = cfg.mixing_iterations
    if n:
        sample_rng = rng.split("mix-sample")
        accept_rng = rng.split("mix-accept")
        inputs = [augment_all(s.obs, params.w, params.T) for s in data]
        for i in range(n):
            alpha = anneal_alpha(cfg.alpha0, i, n, cfg.anneal, cfg.anneal_rate)
            cand = conditional_training_step(params, data, cfg, sample_rng, inputs)
            mixed = stochastic_mix(params, cand, alpha, accept_rng)
            report.mixing_accepted += mixed is not params
            params = mixed
            if (i + 1) % cfg.log_every == 0 or i + 1 == n:
                report.record("mixing", i + 1, mean_step_loss(params, data))
        log.info("mixing done: %d of %d candidates installed", report.mixing_accepted, n)

    params = train_projections(params, data, cfg, report)
    if validation:
        report.final_validation_loss = mean_step_loss(params, validation)
    report.wall_seconds = time.perf_counter() - start
    return params, report
