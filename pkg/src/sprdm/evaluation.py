"""Multi-horizon squared-error evaluation and model comparison tables."""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import baselines, model as spr
from .errors import CorruptModelFile, NoValidPositions, UnknownHorizon

DEFAULT_HORIZONS = (1, 2, 4, 8, 10, 16, 25)
MSE_CONVENTION = "squared error averaged over observation dimensions, then over positions"


class Forecaster:
    """Predicts x_{t+k} from the prefix x_1..x_t.

    Subclasses implement :meth:`predict_many`; it receives one full
    sequence but may only look at rows before each requested t.
    """
    name = "model"

    def predict(self, prefix, k):
        prefix = np.asarray(prefix, dtype=np.float64)
        return self.predict_many(prefix, np.array([len(prefix)]), k)[0]

    def predict_many(self, obs, ts, k):
        raise NotImplementedError


class SprForecaster(Forecaster):
    def __init__(self, params, name="SPR"):
        self.params = params
        self.name = name

    def predict_many(self, obs, ts, k):
        S = spr.filter_states(self.params, obs[: int(np.max(ts))])
        return spr.project_values(self.params, S[np.asarray(ts) - 1], k)


class LinearForecaster(Forecaster):
    def __init__(self, model, name=None):
        self.model = model
        self.name = name or f"LINEAR-{model.order}"

    def predict_many(self, obs, ts, k):
        ts = np.asarray(ts)
        m = self.model
        if np.any(ts < m.order):
            raise ValueError(f"LINEAR-{m.order} needs a prefix of at least {m.order}")
        window = np.concatenate([obs[ts - 1 - i] for i in range(m.order)], axis=1)
        if k not in m.weights:
            raise UnknownHorizon(f"model was not fitted for horizon {k}")
        return window @ m.weights[k] + m.biases[k]


class HmmForecaster(Forecaster):
    def __init__(self, model, name=None):
        self.model = model
        self.name = name or f"HMM-{model.n_states}"

    def predict_many(self, obs, ts, k):
        ts = np.asarray(ts)
        post = baselines.hmm_filter(self.model, obs[: int(np.max(ts))])
        P = np.linalg.matrix_power(self.model.trans, k)
        return post[ts - 1] @ P @ self.model.means


class AverageForecaster(Forecaster):
    def __init__(self, d, name="AVERAGE"):
        self.d = d
        self.name = name

    def predict_many(self, obs, ts, k):
        return np.zeros((len(ts), self.d))


class OracleForecaster(Forecaster):
    """Cheats by reading the target; used to test the harness."""
    name = "ORACLE"

    def predict_many(self, obs, ts, k):
        return obs[np.asarray(ts) - 1 + k]


def as_forecaster(model, name=None):
    if isinstance(model, Forecaster):
        return model
    if isinstance(model, spr.SprParams):
        return SprForecaster(model, name or "SPR")
    if isinstance(model, baselines.LinearArModel):
        return LinearForecaster(model, name)
    if isinstance(model, baselines.GaussianHmm):
        return HmmForecaster(model, name)
    if isinstance(model, baselines.AveragePredictor):
        return AverageForecaster(model.d, name or "AVERAGE")
    raise TypeError(f"no forecaster adapter for {type(model).__name__}")


def load_model(path):
    """Read any model file, dispatching on its magic number."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] == spr.MAGIC:
        return spr.deserialize(data)
    if data[:8] in (baselines.LINEAR_MAGIC, baselines.HMM_MAGIC, baselines.AVERAGE_MAGIC):
        return baselines.deserialize_baseline(data)
    raise CorruptModelFile(f"{path}: unrecognized model file", 0)


def save_model(model, path):
    data = spr.serialize(model) if isinstance(model, spr.SprParams) \
        else baselines.serialize_baseline(model)
    with open(path, "wb") as f:
        f.write(data)


@dataclass
class HorizonReport:
    model: str
    horizons: list
    mse: list
    n_predictions: list
    missing: list = field(default_factory=list)

    def as_dict(self):
        return dict(zip(self.horizons, self.mse))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon", "mse", "n_predictions"])
        for hz, m, n in zip(self.horizons, self.mse, self.n_predictions):
            w.writerow([hz, "%.17g" % m, n])
        return buf.getvalue()


def position_errors(model, seq, k, min_prefix=5):
    """Per-position errors ||pred - x_{t+k}||^2 / d for t = min_prefix..T-k."""
    f = as_forecaster(model)
    obs = seq.obs
    ts = np.arange(min_prefix, len(obs) - k + 1)
    if len(ts) == 0:
        return np.empty(0)
    pred = f.predict_many(obs, ts, k)
    r = pred - obs[ts - 1 + k]
    return np.sum(r * r, axis=1) / obs.shape[1]


def evaluate(model, test, horizons=DEFAULT_HORIZONS, min_prefix=5, name=None):
    """Mean per-dimension squared error at each horizon over identical positions."""
    if min_prefix < 1 or any(k < 1 for k in horizons):
        raise ValueError("horizons and min_prefix must be >= 1")
    f = as_forecaster(model, name)
    out = HorizonReport(name or f.name, [], [], [])
    for k in horizons:
        errs = [position_errors(f, s, k, min_prefix) for s in test]
        n = sum(len(e) for e in errs)
        if n == 0:
            out.missing.append(k)
            continue
        # fixed-order sum: positions within a sequence, then sequences
        total = 0.0
        for e in sorted(errs, key=lambda e: tuple(e)):
            total += float(np.sum(e))
        out.horizons.append(k)
        out.mse.append(total / n)
        out.n_predictions.append(n)
    if not out.horizons:
        raise NoValidPositions(
            f"no sequence is longer than min_prefix + k for any horizon in {list(horizons)}")
    return out


@dataclass
class Comparison:
    horizons: list
    models: list
    table: np.ndarray           # (len(horizons), len(models))
    dropped_horizons: list = field(default_factory=list)

    @property
    def empty(self):
        return len(self.horizons) == 0

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon"] + list(self.models))
        for i, hz in enumerate(self.horizons):
            w.writerow([hz] + ["%.17g" % v for v in self.table[i]])
        return buf.getvalue()


def compare(reports):
    """Align reports on the horizons they all share."""
    if not reports:
        return Comparison([], [], np.empty((0, 0)))
    common = set(reports[0].horizons)
    every = set(reports[0].horizons)
    for r in reports[1:]:
        common &= set(r.horizons)
        every |= set(r.horizons)
    hz = sorted(common)
    table = np.array([[r.as_dict()[k] for r in reports] for k in hz]).reshape(len(hz), len(reports))
    return Comparison(hz, [r.model for r in reports], table, sorted(every - common))
