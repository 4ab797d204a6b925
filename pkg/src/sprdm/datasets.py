"""Sequence containers, synthetic generators, normalization, splits and file I/O."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, InconsistentDims, ParseError, TooFewSequences
from .numerics import Rng


@dataclass(eq=False)
class Sequence:
    id: str
    obs: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        if self.obs.ndim == 1:
            self.obs = self.obs[:, None]
        if self.obs.ndim != 2 or self.obs.shape[0] < 1:
            raise ValueError(f"sequence {self.id!r} must be a non-empty (T, d) array")
        if not np.all(np.isfinite(self.obs)):
            raise ValueError(f"sequence {self.id!r} has non-finite entries")

    @property
    def T(self):
        return self.obs.shape[0]

    @property
    def d(self):
        return self.obs.shape[1]

    def __len__(self):
        return self.obs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.obs, other.obs)

    __hash__ = None


@dataclass
class DatasetBundle:
    train: list
    validation: list
    test: list
    means: np.ndarray = None
    scale: float = 1.0

    def splits(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def denormalize(self, seq):
        return Sequence(seq.id, seq.obs * self.scale + self.means)

    def normalize_sequence(self, seq):
        return Sequence(seq.id, (seq.obs - self.means) / self.scale)


@dataclass
class GeneratorSpec:
    kind: str
    n_sequences: int
    length: int = 50
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.n_sequences < 1 or self.length < 1:
            raise ValueError("n_sequences and length must be >= 1")


# --------------------------------------------------------------------------
# two-branch process whose states share the second observation
# --------------------------------------------------------------------------

def generate_example41(n, seed):
    """Length-3 binary sequences: x1 uniform, x2 = 0, x3 = x1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    first = (Rng(seed).split("example41").uniform(n) < 0.5).astype(float)
    return [Sequence(f"ex41-{i:05d}", np.array([[v], [0.0], [v]])) for i, v in enumerate(first)]


# --------------------------------------------------------------------------
# two-state HMM with a frozen hidden state
# --------------------------------------------------------------------------

def example42_model():
    from .baselines import DiscreteHmm
    return DiscreteHmm(pi=np.array([0.5, 0.5]), trans=np.eye(2),
                       emit=np.array([[0.75, 0.25], [0.25, 0.75]]))


def generate_example42(n, T, seed, return_states=False):
    """Sample ``n`` sequences of length ``T`` from the frozen-state HMM.

    Returns ``(sequences, model)``; with ``return_states`` the hidden state
    of each sequence is appended as a third element.
    """
    if n < 1 or T < 1:
        raise ValueError("n and T must be >= 1")
    model = example42_model()
    rng = Rng(seed).split("example42")
    states = (rng.uniform(n) >= 0.5).astype(int)  # 0 -> s1, 1 -> s2
    u = rng.uniform(n * T).reshape(n, T)
    p_one = model.emit[states, 1][:, None]
    symbols = (u < p_one).astype(float)
    seqs = [Sequence(f"ex42-{i:05d}", symbols[i][:, None]) for i in range(n)]
    if return_states:
        return seqs, model, states
    return seqs, model


# --------------------------------------------------------------------------
# smooth nonlinear continuous system
# --------------------------------------------------------------------------

NONLINEAR_DEFAULTS = {
    "d": 58,
    "theta0": 0.6,        # base rotation per step (radians)
    "theta1": 0.5,        # angle gain on radius
    "radius_gain": 2.0,   # tanh slope in the radius
    "phase_gain": 0.4,    # angle modulation along the orbit
    "radius_low": 1.0,    # start radius drawn uniformly from [low, high]
    "radius_high": 1.0,
    "radius_pull": 0.5,   # relaxation toward the start radius
    "process_noise": 0.002,
    "obs_noise": 0.05,
}


def rotation_angle(z, theta0, theta1, gain=2.0, phase_gain=0.0):
    """Step angle: smooth in the latent radius, modulated by the phase."""
    r = np.linalg.norm(z)
    theta = theta0 + theta1 * np.tanh(gain * (r - 1.0))
    if phase_gain and r > 0:
        theta += phase_gain * z[1] / r
    return theta


def latent_step(z, r0, cfg):
    theta = rotation_angle(z, cfg["theta0"], cfg["theta1"], cfg["radius_gain"],
                           cfg["phase_gain"])
    c, s = np.cos(theta), np.sin(theta)
    zr = np.array([c * z[0] - s * z[1], s * z[0] + c * z[1]])
    r = np.linalg.norm(zr)
    if r > 0:
        zr = zr * (1.0 + cfg["radius_pull"] * (r0 - r) / r)
    return zr


def generate_nonlinear_cts(spec):
    """Latent 2-d rotation with state-dependent speed, lifted affinely to d dims.

    The orbit is traversed fast on one side and slowly on the other, so
    a few steps look linear while long-range phase is not a linear
    function of the last couple of frames.
    """
    cfg = dict(NONLINEAR_DEFAULTS)
    unknown = set(spec.params) - set(cfg)
    if unknown:
        raise ValueError(f"unknown nonlinear_cts parameters: {sorted(unknown)}")
    cfg.update(spec.params)
    d = int(cfg["d"])
    root = Rng(spec.seed).split("nonlinear_cts")
    lift_rng = root.split("lift")
    L = lift_rng.normal(2 * d).reshape(2, d)
    offset = lift_rng.normal(d, 0.0, 0.5)
    seqs = []
    for i in range(spec.n_sequences):
        r = root.split(f"seq{i}")
        r0 = cfg["radius_low"] + (cfg["radius_high"] - cfg["radius_low"]) * r.uniform()
        phase = 2.0 * np.pi * r.uniform()
        z = r0 * np.array([np.cos(phase), np.sin(phase)])
        proc = r.normal(2 * spec.length, 0.0, cfg["process_noise"]).reshape(spec.length, 2)
        noise = r.normal(d * spec.length, 0.0, cfg["obs_noise"]).reshape(spec.length, d)
        Z = np.empty((spec.length, 2))
        for t in range(spec.length):
            Z[t] = z
            z = latent_step(z, r0, cfg) + proc[t]
        seqs.append(Sequence(f"cts-{i:05d}", Z @ L + offset + noise))
    return seqs


GENERATORS = {"example41", "example42", "nonlinear_cts"}


def generate(spec):
    if spec.kind == "example41":
        return generate_example41(spec.n_sequences, spec.seed)
    if spec.kind == "example42":
        return generate_example42(spec.n_sequences, spec.length, spec.seed)[0]
    return generate_nonlinear_cts(spec)


# --------------------------------------------------------------------------
# normalization and splitting
# --------------------------------------------------------------------------

def normalize(bundle):
    """Center on train means, then divide by one global scale.

    The scale makes the average per-dimension variance of the training
    split exactly one. Statistics come from the training split only.
    """
    if not bundle.train:
        raise ValueError("training split is empty")
    stacked = np.concatenate([s.obs for s in bundle.train])
    means = stacked.mean(axis=0)
    var = ((stacked - means) ** 2).mean(axis=0)
    if not np.any(var > 0):
        raise DegenerateData("training data has zero variance in every dimension")
    scale = float(np.sqrt(var.mean()))

    def fix(seqs):
        return [Sequence(s.id, (s.obs - means) / scale) for s in seqs]

    return DatasetBundle(fix(bundle.train), fix(bundle.validation), fix(bundle.test),
                         means=means, scale=scale)


def _allocate(n, ratios):
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios < 0) or ratios.sum() <= 0:
        raise ValueError("ratios must be nonnegative with a positive sum")
    exact = n * ratios / ratios.sum()
    counts = np.floor(exact + 1e-9).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def split(sequences, ratios=(25, 5, 8), seed=0):
    """Seeded shuffle, then partition into train/validation/test by ``ratios``."""
    sequences = list(sequences)
    ids = [s.id for s in sequences]
    if len(set(ids)) != len(ids):
        raise ValueError("sequence ids must be unique")
    counts = _allocate(len(sequences), ratios)
    for c, r in zip(counts, ratios):
        if r > 0 and c == 0:
            raise TooFewSequences(
                f"{len(sequences)} sequences cannot fill ratios {tuple(ratios)}")
    perm = Rng(seed).split("split").permutation(len(sequences))
    shuffled = [sequences[i] for i in perm]
    a, b = counts[0], counts[0] + counts[1]
    return DatasetBundle(shuffled[:a], shuffled[a:b], shuffled[b:])


# --------------------------------------------------------------------------
# text file format
# --------------------------------------------------------------------------

def format_float(x):
    return "%.17g" % x


def dumps_sequences(seqs):
    lines = []
    for i, s in enumerate(seqs):
        if any(c.isspace() for c in s.id) or not s.id:
            raise ValueError(f"sequence id {s.id!r} must be non-empty without whitespace")
        if i:
            lines.append("")
        lines.append(f"#SEQ {s.id} {s.T} {s.d}")
        for row in s.obs:
            lines.append(" ".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def save_sequences(path, seqs):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_sequences(seqs))


def loads_sequences(text):
    lines = text.split("\n")
    seqs = []
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        parts = line.split()
        if parts[0] != "#SEQ":
            raise ParseError("expected '#SEQ id T d' header", line=i + 1, column=1)
        if len(parts) != 4:
            raise ParseError("header must be '#SEQ id T d'", line=i + 1, column=1)
        sid = parts[1]
        try:
            T, d = int(parts[2]), int(parts[3])
        except ValueError:
            raise ParseError("T and d must be integers", line=i + 1,
                             column=line.index(parts[2]) + 1) from None
        if T < 1 or d < 1:
            raise ParseError("T and d must be positive", line=i + 1, column=1)
        rows = np.empty((T, d))
        for r in range(T):
            ln = i + 2 + r
            if ln > n or not lines[ln - 1].strip():
                raise ParseError(f"sequence {sid!r} ends after {r} of {T} rows", line=ln, column=1)
            fields = lines[ln - 1].split()
            if fields[0] == "#SEQ":
                raise ParseError(f"sequence {sid!r} ends after {r} of {T} rows", line=ln, column=1)
            if len(fields) != d:
                raise InconsistentDims(
                    f"row {r + 1} of sequence {sid!r} has {len(fields)} values, header says d={d}",
                    line=ln, column=1)
            col = 1
            for c, tok in enumerate(fields):
                col = lines[ln - 1].index(tok, col - 1) + 1
                try:
                    rows[r, c] = float(tok)
                except ValueError:
                    raise ParseError(f"cannot parse {tok!r} as a number", line=ln,
                                     column=col) from None
                if not np.isfinite(rows[r, c]):
                    raise ParseError(f"non-finite value {tok!r}", line=ln, column=col)
                col += len(tok)
        seqs.append(Sequence(sid, rows))
        i += 1 + T
    if not seqs:
        raise ParseError("no sequences found", line=1, column=1)
    return seqs


def load_sequences(path):
    with open(path, encoding="utf-8") as f:
        return loads_sequences(f.read())
