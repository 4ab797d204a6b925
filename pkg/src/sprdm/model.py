"""SPR dynamic model: parameters, operators, filtering and horizon prediction.

A model carries four operators over a logistic state s in (0, 1)^h:

    s_2      = sigmoid(A' u_1 + b_A)                  state initialization
    s_{t+1}  = sigmoid(B1' u_t + B2' s_t + b_B)        state update
    x_hat_t  = C' s_t + a                              observation decoding
    s_{t+2^j} = clamp(D_j' s_t + d_j)                  state projection

``u_t`` is the augmented input: the last ``w`` observations (newest first,
zero padded before the sequence start) followed by the timestep feature t/T.
"""
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (CorruptModelFile, DimensionMismatch, EmptySequence,
                     HorizonOutOfRange, UnknownExponent)
from .numerics import logistic

STATE_FLOOR = 1e-6
MAGIC = b"SPRDM\x00\x01\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI6Q")


@dataclass(frozen=True)
class State:
    values: np.ndarray
    time_index: int


@dataclass(frozen=True, eq=False)
class SprParams:
    d: int
    h: int
    w: int
    T: int
    A: np.ndarray
    b_A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    b_B: np.ndarray
    C: np.ndarray
    a: np.ndarray
    D: tuple = field(default=())
    d_proj: tuple = field(default=())

    @property
    def p(self):
        return self.d * self.w + 1

    @property
    def exponents(self):
        return tuple(range(len(self.D)))

    def arrays(self):
        """All parameter arrays in serialization order."""
        out = [self.A, self.b_A, self.B1, self.B2, self.b_B, self.C, self.a]
        for Dj, dj in zip(self.D, self.d_proj):
            out += [Dj, dj]
        return out

    def __eq__(self, other):
        if not isinstance(other, SprParams):
            return NotImplemented
        if (self.d, self.h, self.w, self.T, len(self.D)) != \
                (other.d, other.h, other.w, other.T, len(other.D)):
            return False
        return all(x.shape == y.shape and x.tobytes() == y.tobytes()
                   for x, y in zip(self.arrays(), other.arrays()))

    __hash__ = None

    def validate(self):
        p, h, d = self.p, self.h, self.d
        shapes = {"A": (p, h), "b_A": (h,), "B1": (p, h), "B2": (h, h), "b_B": (h,),
                  "C": (h, d), "a": (d,)}
        for name, shape in shapes.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionMismatch(f"{name} has shape {got}, expected {shape}")
        if len(self.D) != len(self.d_proj):
            raise DimensionMismatch("projection matrices and biases differ in count")
        for j, (Dj, dj) in enumerate(zip(self.D, self.d_proj)):
            if Dj.shape != (h, h) or dj.shape != (h,):
                raise DimensionMismatch(f"projection {j} has shapes {Dj.shape}, {dj.shape}")
        for x in self.arrays():
            if not np.all(np.isfinite(x)):
                raise ValueError("parameters contain non-finite entries")
        return self


def n_projections(T):
    """floor(log2 T) + 1 operators cover exponents 0..floor(log2 T)."""
    return int(T).bit_length()


def init_params(d, h, T, w, rng, stddev=0.01):
    """Weights ~ N(0, stddev^2) drawn from ``rng``; biases zero."""
    if min(d, h, T, w) < 1:
        raise ValueError("d, h, T and w must all be >= 1")
    p = d * w + 1

    def draw(*shape):
        return rng.normal(int(np.prod(shape)), 0.0, stddev).reshape(shape)

    A = draw(p, h)
    B1 = draw(p, h)
    B2 = draw(h, h)
    C = draw(h, d)
    D = tuple(draw(h, h) for _ in range(n_projections(T)))
    return SprParams(d=d, h=h, w=w, T=T, A=A, b_A=np.zeros(h), B1=B1, B2=B2,
                     b_B=np.zeros(h), C=C, a=np.zeros(d), D=D,
                     d_proj=tuple(np.zeros(h) for _ in D))


def augment(obs, t, w, T):
    """Augmented input u_t for 1-based time ``t``."""
    obs = np.asarray(obs, dtype=np.float64)
    n, d = obs.shape
    if not 1 <= t <= n:
        raise DimensionMismatch(f"t={t} outside 1..{n}")
    u = np.zeros(d * w + 1)
    for lag in range(w):
        if t - lag >= 1:
            u[lag * d:(lag + 1) * d] = obs[t - 1 - lag]
    u[-1] = min(t / T, 1.0)
    return u


def augment_all(obs, w, T):
    """Rows u_1..u_n for a whole observation array of shape (n, d)."""
    obs = np.asarray(obs, dtype=np.float64)
    n, d = obs.shape
    U = np.zeros((n, d * w + 1))
    for lag in range(w):
        U[lag:, lag * d:(lag + 1) * d] = obs[: n - lag]
    U[:, -1] = np.minimum(np.arange(1, n + 1) / T, 1.0)
    return U


def _obs(seq):
    return seq.obs if hasattr(seq, "obs") else np.asarray(seq, dtype=np.float64)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.p,):
        raise DimensionMismatch(f"augmented input has shape {x.shape}, expected ({params.p},)")
    return x


def _check_state(params, s):
    if s.values.shape != (params.h,):
        raise DimensionMismatch(f"state has shape {s.values.shape}, expected ({params.h},)")


def apply_A(params, x1):
    x1 = _check_input(params, x1)
    return State(logistic(x1 @ params.A + params.b_A), 2)


def apply_B(params, x, s):
    x = _check_input(params, x)
    _check_state(params, s)
    z = x @ params.B1 + s.values @ params.B2 + params.b_B
    return State(logistic(z), s.time_index + 1)


def apply_C(params, s):
    _check_state(params, s)
    return s.values @ params.C + params.a


def _project(params, j, values):
    v = values @ params.D[j] + params.d_proj[j]
    return np.clip(v, STATE_FLOOR, 1.0 - STATE_FLOOR)


def apply_D(params, j, s):
    if not 0 <= j < len(params.D):
        raise UnknownExponent(f"no projection operator for exponent {j}")
    _check_state(params, s)
    return State(_project(params, j, s.values), s.time_index + 2 ** j)


def filter_states(params, obs):
    """All filtered states s_2..s_{n+1} for an (n, d) observation array."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise EmptySequence("cannot filter an empty sequence")
    if obs.shape[1] != params.d:
        raise DimensionMismatch(f"observations have dim {obs.shape[1]}, model expects {params.d}")
    U = augment_all(obs, params.w, params.T)
    return kernels.spr_states(params.A, params.b_A, params.B1, params.B2, params.b_B, U)


def filter(params, seq, upto):
    """State s_{upto+1} after absorbing x_1..x_upto."""
    obs = _obs(seq)
    if len(obs) == 0:
        raise EmptySequence("cannot filter an empty sequence")
    if not 1 <= upto <= len(obs):
        raise ValueError(f"upto={upto} outside 1..{len(obs)}")
    S = filter_states(params, obs[:upto])
    return State(S[-1], upto + 1)


def decompose_gap(g):
    """Binary expansion exponents of ``g``, largest first."""
    if g < 0:
        raise ValueError("gap must be nonnegative")
    return [j for j in range(int(g).bit_length() - 1, -1, -1) if (g >> j) & 1]


def _check_horizon(params, k):
    if k < 1:
        raise HorizonOutOfRange(f"horizon must be >= 1, got {k}")
    chain = decompose_gap(k - 1)
    if chain and chain[0] >= len(params.D):
        raise HorizonOutOfRange(
            f"horizon {k} needs projection exponent {chain[0]}, "
            f"model has 0..{len(params.D) - 1}")
    return chain


def project_values(params, values, k):
    """Advance filtered state values (one row per position) by gap k - 1 and decode."""
    chain = _check_horizon(params, k)
    for j in chain:
        values = _project(params, j, values)
    return values @ params.C + params.a


def predict_horizon(params, seq, t, k):
    """Predict x_{t+k} from x_1..x_t."""
    obs = _obs(seq)
    if not 1 <= t <= len(obs):
        raise HorizonOutOfRange(f"t={t} outside 1..{len(obs)}")
    chain = _check_horizon(params, k)
    s = filter(params, obs, t)
    for j in chain:
        s = apply_D(params, j, s)
    return apply_C(params, s)


def with_projections(params, D, d_proj):
    return replace(params, D=tuple(D), d_proj=tuple(d_proj))


# --------------------------------------------------------------------------
# binary model files
# --------------------------------------------------------------------------

def serialize(params):
    """Header (magic, version, d, h, w, T, n_proj, payload size) then float64 LE arrays."""
    body = b"".join(np.ascontiguousarray(x, dtype="<f8").tobytes() for x in params.arrays())
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, params.d, params.h, params.w,
                          params.T, len(params.D), len(body))
    return header + body


def deserialize(data):
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise CorruptModelFile(f"file too short for header ({len(data)} bytes)", len(data))
    magic, version, d, h, w, T, n_proj, nbytes = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptModelFile("bad magic number, not an SPR model file", 0)
    if version != FORMAT_VERSION:
        raise CorruptModelFile(f"unsupported format version {version}", 8)
    if min(d, h, w, T) < 1:
        raise CorruptModelFile("declared dimensions must be positive", 12)
    if n_proj != n_projections(T):
        raise CorruptModelFile(
            f"declares {n_proj} projections but T={T} needs {n_projections(T)}", 44)
    p = d * w + 1
    shapes = [(p, h), (h,), (p, h), (h, h), (h,), (h, d), (d,)]
    shapes += [(h, h), (h,)] * n_proj
    expected = 8 * sum(int(np.prod(s)) for s in shapes)
    if nbytes != expected:
        raise CorruptModelFile(
            f"payload size {nbytes} does not match declared dims (expected {expected})", 52)
    offset = _HEADER.size
    if len(data) != offset + expected:
        raise CorruptModelFile(
            f"file holds {len(data) - offset} payload bytes, dims require {expected}",
            min(len(data), offset + expected))
    arrays = []
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=offset)
                      .astype(np.float64).reshape(s))
        offset += 8 * n
    A, bA, B1, B2, bB, C, a = arrays[:7]
    D = tuple(arrays[7::2])
    dp = tuple(arrays[8::2])
    params = SprParams(d=d, h=h, w=w, T=T, A=A, b_A=bA, B1=B1, B2=B2, b_B=bB, C=C, a=a,
                       D=D, d_proj=dp)
    for x in params.arrays():
        if not np.all(np.isfinite(x)):
            raise CorruptModelFile("non-finite parameter value", None)
    return params


def save(params, path):
    with open(path, "wb") as f:
        f.write(serialize(params))


def load(path):
    with open(path, "rb") as f:
        return deserialize(f.read())
