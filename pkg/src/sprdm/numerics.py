"""Small dense numerics: logistic, ridge regression, and a seeded RNG."""
import hashlib
import struct

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, SingularSystem

LOGISTIC_CLAMP = 709.0


def logistic(v):
    """Componentwise 1/(1+exp(-v)), computed without overflow.

    Inputs are clamped to [-709, 709]; the output never reaches 0 or 1
    for moderate inputs but may round to them in float64 beyond |v|~37.
    """
    v = np.clip(np.asarray(v, dtype=np.float64), -LOGISTIC_CLAMP, LOGISTIC_CLAMP)
    return 1.0 / (1.0 + np.exp(-v))


def ridge_solve(X, Y, lam=0.0):
    """Solve min_W ||XW - Y||^2 + lam ||W||^2 through the normal equations.

    Returns a (p, q) array. ``Y`` may be one-dimensional, in which case the
    result is too. Raises SingularSystem when ``lam == 0`` and X'X is rank
    deficient.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-d, got shape {X.shape}")
    vector_target = Y.ndim == 1
    if vector_target:
        Y = Y[:, None]
    n, p = X.shape
    if n < 1 or p < 1:
        raise DimensionMismatch(f"X must be non-empty, got shape {X.shape}")
    if Y.shape[0] != n:
        raise DimensionMismatch(f"X has {n} rows but Y has {Y.shape[0]}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")

    G = X.T @ X
    R = X.T @ Y
    scale = max(float(np.max(np.abs(np.diag(G)))), 1.0)
    A = G + lam * np.eye(p)

    if lam == 0.0:
        try:
            factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise SingularSystem("X'X is not positive definite; use lam > 0") from None
        pivots = np.abs(np.diag(factor[0])) ** 2
        if pivots.min() <= p * np.finfo(float).eps * scale:
            raise SingularSystem("X'X is numerically rank deficient; use lam > 0")
    else:
        jitter = 0.0
        for _ in range(8):
            try:
                factor = scipy.linalg.cho_factor(A + jitter * np.eye(p), lower=True,
                                                 check_finite=False)
                break
            except np.linalg.LinAlgError:
                jitter = 1e-10 * scale if jitter == 0.0 else jitter * 10.0
        else:
            raise SingularSystem("regularized system could not be factored")

    W = scipy.linalg.cho_solve(factor, R, check_finite=False)
    # one step of iterative refinement keeps the normal-equation residual tight
    resid = R - A @ W
    if np.linalg.norm(resid) > 1e-12 * (1.0 + np.linalg.norm(R)):
        W = W + scipy.linalg.cho_solve(factor, resid, check_finite=False)
    return W[:, 0] if vector_target else W


def _derive_key(seed, path):
    h = hashlib.sha256()
    h.update(struct.pack("<Q", seed))
    for label in path:
        h.update(b"\x00")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


class Rng:
    """Counter-based (Philox) random stream with labeled substreams.

    ``Rng(seed).split("train")`` gives a stream that depends only on the
    seed and the label path, never on how many draws were taken elsewhere.
    """

    def __init__(self, seed, _path=()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.path = tuple(_path)
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(seed, self.path)))

    def split(self, label):
        return Rng(self.seed, self.path + (str(label),))

    def uniform(self, n=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(n)

    def normal(self, n, mean=0.0, stddev=1.0):
        """Box-Muller normals built on the uniform stream."""
        n = int(n)
        m = (n + 1) // 2
        u = self._gen.random(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], keeps log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return mean + stddev * z[:n]

    def integers(self, low, high, n=None):
        return self._gen.integers(low, high, size=n)

    def permutation(self, n):
        return self._gen.permutation(n)

    def bernoulli(self, p):
        return bool(self._gen.random() < p)

    def choice(self, n, p):
        """Single categorical draw from probabilities ``p`` over range(n)."""
        u = self._gen.random()
        c = np.cumsum(p)
        return int(min(np.searchsorted(c, u * c[-1], side="right"), n - 1))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '-'})"


def gaussian_draws(rng, n, mean=0.0, stddev=1.0):
    if stddev < 0:
        raise ValueError("stddev must be nonnegative")
    return rng.normal(n, mean, stddev)
