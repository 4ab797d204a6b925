"""Time the numba kernels against the numpy fallback at full-size shapes (d=58, h=20, T=50).

    python benchmarks/bench_kernels.py [--repeat N]

Both paths run in one process by flipping the dispatch flag, so numba
must be installed. Compilation happens in a warm-up call and is not timed.
Also checks that the two paths agree before trusting the timings.
"""
import argparse
import time

import numpy as np

from sprdm import _accel, kernels
from sprdm.datasets import GeneratorSpec, generate_nonlinear_cts, normalize, split
from sprdm.model import augment_all
from sprdm.training import TrainConfig, train_full

D, H, W, T, N_STATES = 58, 20, 2, 50, 20


def _inputs(rng):
    p = D * W + 1
    X = rng.normal(size=(T, D))
    U = augment_all(X, W, T)
    params = [rng.normal(0, 0.1, s) for s in [(p, H), (H,), (p, H), (H, H), (H,), (H, D), (D,)]]
    return params, U, X


def _time(fn, repeat):
    fn()                       # warm-up (JIT compile on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    (A, bA, B1, B2, bB, C, a), U, X = _inputs(rng)
    logE = rng.normal(size=(T, N_STATES)) * 5
    pi = rng.dirichlet(np.ones(N_STATES))
    P = rng.dirichlet(np.ones(N_STATES), size=N_STATES)
    Sp = rng.uniform(size=(25, H))
    V = rng.normal(size=(25, D * W + 1))
    Xs = rng.normal(size=(25, D))
    order = rng.integers(0, 25, 500)

    def sgd():
        Wm, R, b, Cm, am = (x.copy() for x in (B1, B2, bB, C, a))
        return kernels.stage_sgd(Wm, R, b, Cm, am, V, Sp, Xs, order, 1e-3)

    return {
        "spr_states (T=50, h=20)": lambda: kernels.spr_states(A, bA, B1, B2, bB, U),
        "spr_bptt (T=50, h=20, d=58)": lambda: kernels.spr_bptt(A, bA, B1, B2, bB, C, a, U, X),
        "stage_sgd (500 updates)": sgd,
        "hmm_forward_backward (T=50, n=20)": lambda: kernels.hmm_forward_backward(logE, pi, P),
    }


def _agree(fn):
    _accel.USE_NUMBA = True
    x = fn()
    _accel.USE_NUMBA = False
    y = fn()
    flat = lambda v: np.concatenate([np.ravel(np.asarray(e, dtype=float))
                                     for e in (v if isinstance(v, tuple) else (v,))
                                     for e in (e if isinstance(e, tuple) else (e,))])
    return float(np.max(np.abs(flat(x) - flat(y))))


def train_case():
    seqs = generate_nonlinear_cts(GeneratorSpec("nonlinear_cts", 38, 50, 0, {}))
    b = normalize(split(seqs, (25, 5, 8), 0))
    cfg = TrainConfig(h=20, updates_per_timestep=200, mixing_iterations=200, log_every=1000)
    return lambda: train_full(b.train, cfg)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    saved = _accel.USE_NUMBA
    rng = np.random.default_rng(0)
    rows = []
    try:
        all_cases = cases(rng)
        for name, fn in all_cases.items():
            diff = _agree(fn)
            _accel.USE_NUMBA = True
            tn = _time(fn, args.repeat)
            _accel.USE_NUMBA = False
            tp = _time(fn, args.repeat)
            rows.append((name, tn, tp, diff))
        fn = train_case()
        _accel.USE_NUMBA = True
        tn = _time(fn, 1)
        _accel.USE_NUMBA = False
        tp = _time(fn, 1)
        rows.append(("train_full (200 SGD + 200 mixing)", tn, tp, float("nan")))
    finally:
        _accel.USE_NUMBA = saved

    print(f"{'kernel':38s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, tn, tp, diff in rows:
        print(f"{name:38s} {tn * 1e3:10.3f} {tp * 1e3:10.3f} {tp / tn:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
