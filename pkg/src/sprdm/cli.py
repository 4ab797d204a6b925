"""Command-line pipeline: generate -> train -> evaluate, plus one-off predict.

All commands read an INI config (``--config``) with the sections below.
Every random draw comes from ``[run] seed`` (or ``--seed``) through
labeled substreams, so reruns reproduce byte-identical files.

    [run]        seed (required)
    [dataset]    kind, n_sequences, length, split, normalize, generator knobs
    [spr]        TrainConfig fields (seed excluded)
    [baselines]  linear_orders, linear_lambdas, hmm_states, hmm_iterations,
                 hmm_restarts, average
    [evaluate]   horizons, min_prefix
"""
import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import baselines, datasets, evaluation, model as spr
from .errors import HorizonOutOfRange, InvalidConfig, SprError
from .numerics import Rng
from .training import TrainConfig, train_full

log = logging.getLogger("sprdm")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SPLIT_FILES = ("train", "validation", "test")


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------

def _int(key, v, lo=None):
    try:
        x = int(v)
    except ValueError:
        raise InvalidConfig(f"{key} must be an integer, got {v!r}", key) from None
    if lo is not None and x < lo:
        raise InvalidConfig(f"{key} must be >= {lo}, got {x}", key)
    return x


def _float(key, v, lo=None):
    try:
        x = float(v)
    except ValueError:
        raise InvalidConfig(f"{key} must be a number, got {v!r}", key) from None
    if not np.isfinite(x) or (lo is not None and x < lo):
        raise InvalidConfig(f"{key} must be finite and >= {lo}, got {v!r}", key)
    return x


def _bool(key, v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"{key} must be a boolean, got {v!r}", key)


def _int_list(key, v, lo=1):
    parts = [p for p in v.replace(",", " ").split()]
    if not parts:
        raise InvalidConfig(f"{key} must not be empty", key)
    return [_int(key, p, lo) for p in parts]


def _float_list(key, v):
    parts = [p for p in v.replace(",", " ").split()]
    if not parts:
        raise InvalidConfig(f"{key} must not be empty", key)
    return [_float(key, p, 0.0) for p in parts]


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig) if f.name != "seed"}
_TRAIN_INTS = {"updates_per_timestep", "mixing_iterations", "w", "h", "log_every"}

_DATASET_KEYS = {"kind", "n_sequences", "length", "split", "normalize"}
_BASELINE_KEYS = {"linear_orders", "linear_lambdas", "hmm_states", "hmm_iterations",
                  "hmm_restarts", "average"}
_EVAL_KEYS = {"horizons", "min_prefix"}


class RunConfig:
    """Validated view of a config file; unknown keys are errors."""

    def __init__(self, parser, seed_override=None):
        known = {"run", "dataset", "spr", "baselines", "evaluate"}
        for sec in parser.sections():
            if sec not in known:
                raise InvalidConfig(f"unknown section [{sec}]", sec)
        get = lambda sec: dict(parser.items(sec)) if parser.has_section(sec) else {}

        run = get("run")
        self._reject(run, {"seed"}, "run")
        if seed_override is not None:
            self.seed = seed_override
        elif "seed" in run:
            self.seed = _int("seed", run["seed"], 0)
        else:
            raise InvalidConfig("missing required key 'seed' in [run]", "seed")

        ds = get("dataset")
        self.kind = ds.pop("kind", "example42")
        if self.kind not in datasets.GENERATORS:
            raise InvalidConfig(f"kind must be one of {sorted(datasets.GENERATORS)}", "kind")
        gen_keys = set(datasets.NONLINEAR_DEFAULTS) if self.kind == "nonlinear_cts" else set()
        self._reject(ds, _DATASET_KEYS | gen_keys, "dataset")
        self.n_sequences = _int("n_sequences", ds.pop("n_sequences", "38"), 1)
        self.length = _int("length", ds.pop("length", "50"), 1)
        self.split = [_float("split", p, 0.0)
                      for p in ds.pop("split", "25,5,8").replace(",", " ").split()]
        if len(self.split) != 3 or sum(self.split) <= 0:
            raise InvalidConfig("split needs three nonnegative ratios", "split")
        self.normalize = _bool("normalize", ds.pop("normalize", "true"))
        self.generator_params = {}
        for k, v in ds.items():
            self.generator_params[k] = _int(k, v, 1) if k == "d" else _float(k, v)

        self.train_kwargs = self._train_kwargs(get("spr"))
        TrainConfig(seed=self.seed, **self.train_kwargs)   # range checks now, not mid-run

        bl = get("baselines")
        self._reject(bl, _BASELINE_KEYS, "baselines")
        self.linear_orders = _int_list("linear_orders", bl.get("linear_orders", "2,5"))
        self.linear_lambdas = _float_list(
            "linear_lambdas", bl.get("linear_lambdas", " ".join(map(repr, baselines.RIDGE_GRID))))
        self.hmm_states = _int("hmm_states", bl.get("hmm_states", "20"), 0)
        self.hmm_iterations = _int("hmm_iterations", bl.get("hmm_iterations", "30"), 0)
        self.hmm_restarts = _int("hmm_restarts", bl.get("hmm_restarts", "1"), 1)
        self.average = _bool("average", bl.get("average", "true"))

        ev = get("evaluate")
        self._reject(ev, _EVAL_KEYS, "evaluate")
        self.horizons = _int_list("horizons", ev.get("horizons", "1,2,4,8,10,16,25"))
        self.min_prefix = _int("min_prefix", ev.get("min_prefix", "5"), 1)

    @staticmethod
    def _reject(items, allowed, section):
        for k in items:
            if k not in allowed:
                raise InvalidConfig(f"unknown key '{k}' in [{section}]", k)

    @staticmethod
    def _train_kwargs(items):
        out = {}
        for k, v in items.items():
            if k not in _TRAIN_FIELDS:
                raise InvalidConfig(f"unknown key '{k}' in [spr]", k)
            if k == "anneal":
                out[k] = v.strip()
            elif k in _TRAIN_INTS:
                out[k] = _int(k, v, 0)
            elif k == "mixing_learning_rate" and v.strip().lower() in ("", "none"):
                out[k] = None
            else:
                out[k] = _float(k, v)
        return out

    def train_config(self):
        return TrainConfig(seed=self.seed, **self.train_kwargs)

    def generator_spec(self):
        return datasets.GeneratorSpec(self.kind, self.n_sequences, self.length, self.seed,
                                      dict(self.generator_params))


def load_config(path, seed_override=None):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise InvalidConfig(f"{path}: {e}", None) from None
    try:
        return RunConfig(parser, seed_override)
    except ValueError as e:
        if isinstance(e, InvalidConfig):
            raise
        raise InvalidConfig(str(e), None) from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_generate(cfg, out):
    os.makedirs(out, exist_ok=True)
    spec = cfg.generator_spec()
    seqs = datasets.generate(spec)
    bundle = datasets.split(seqs, cfg.split, cfg.seed)
    if cfg.normalize:
        bundle = datasets.normalize(bundle)
    files = {}
    for name, part in bundle.splits().items():
        path = os.path.join(out, f"{name}.seq")
        if part:
            datasets.save_sequences(path, part)
        else:
            _write_text(path, "")
        files[f"{name}.seq"] = _sha256(path)
    manifest = {
        "seed": cfg.seed,
        "spec": {"kind": spec.kind, "n_sequences": spec.n_sequences, "length": spec.length,
                 "params": spec.params, "split": cfg.split},
        "normalized": cfg.normalize,
        "files": files,
    }
    if cfg.normalize:
        manifest["normalization"] = {"scale": bundle.scale, "means": bundle.means.tolist()}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    log.info("generated %d/%d/%d sequences in %s", len(bundle.train),
             len(bundle.validation), len(bundle.test), out)


def _load_split(data_dir, name, required=True):
    path = os.path.join(data_dir, f"{name}.seq")
    if not os.path.exists(path):
        if required:
            raise FileNotFoundError(f"dataset file {path} not found")
        return []
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if not text.strip():
        if required:
            raise FileNotFoundError(f"dataset file {path} is empty")
        return []
    return datasets.loads_sequences(text)


def _baseline_names(cfg):
    names = [f"linear-{k}" for k in cfg.linear_orders]
    if cfg.hmm_states:
        names.append(f"hmm-{cfg.hmm_states}")
    if cfg.average:
        names.append("average")
    return names


def cmd_train(cfg, out, data_dir):
    os.makedirs(out, exist_ok=True)
    train = _load_split(data_dir, "train")
    val = _load_split(data_dir, "validation", required=False)

    params, report = train_full(train, cfg.train_config(), val or None)
    evaluation.save_model(params, os.path.join(out, "spr.model"))
    _write_text(os.path.join(out, "train_report.csv"), report.to_csv())
    log.info("SPR trained: %d mixing candidates installed", report.mixing_accepted)

    d = train[0].d
    for k in cfg.linear_orders:
        m = baselines.fit_linear_ar_selected(train, val, k, cfg.horizons, cfg.linear_lambdas)
        evaluation.save_model(m, os.path.join(out, f"linear-{k}.model"))
    if cfg.hmm_states:
        m, _ = baselines.hmm_em_fit(train, cfg.hmm_states, cfg.hmm_iterations,
                                    Rng(cfg.seed).split("hmm"), restarts=cfg.hmm_restarts)
        evaluation.save_model(m, os.path.join(out, f"hmm-{cfg.hmm_states}.model"))
    if cfg.average:
        evaluation.save_model(baselines.average_predictor(d), os.path.join(out, "average.model"))
    log.info("baselines trained: %s", ", ".join(_baseline_names(cfg)))


def _display_name(stem, m):
    if isinstance(m, spr.SprParams):
        return "SPR"
    return stem.upper()


def cmd_evaluate(cfg, out, data_dir, model_paths):
    os.makedirs(out, exist_ok=True)
    test = _load_split(data_dir, "test")
    if not model_paths:
        stems = ["spr"] + _baseline_names(cfg)
        model_paths = [os.path.join(out, f"{s}.model") for s in stems]
    reports = []
    for path in model_paths:
        if not os.path.exists(path):
            raise FileNotFoundError(f"model file {path} not found")
        stem = os.path.splitext(os.path.basename(path))[0]
        m = evaluation.load_model(path)
        name = _display_name(stem, m)
        r = evaluation.evaluate(m, test, cfg.horizons, cfg.min_prefix, name=name)
        _write_text(os.path.join(out, f"report_{stem}.csv"), r.to_csv())
        reports.append((stem, r))
    comp = evaluation.compare([r for _, r in reports])
    _write_text(os.path.join(out, "comparison.csv"), comp.to_csv())
    meta = {
        "mse_convention": evaluation.MSE_CONVENTION,
        "min_prefix": cfg.min_prefix,
        "horizons_requested": cfg.horizons,
        "horizons_compared": comp.horizons,
        "horizons_dropped": comp.dropped_horizons,
        "models": {stem: {"name": r.model, "missing_horizons": r.missing,
                          "n_predictions": dict(zip(map(str, r.horizons), r.n_predictions))}
                   for stem, r in reports},
    }
    _write_json(os.path.join(out, "evaluation_meta.json"), meta)
    log.info("evaluated %d models on %d test sequences", len(reports), len(test))


def cmd_predict(model_path, seq_path, t, k, index=0):
    m = evaluation.load_model(model_path)
    seqs = datasets.load_sequences(seq_path)
    if not 0 <= index < len(seqs):
        raise IndexError(f"--index {index} outside 0..{len(seqs) - 1}")
    obs = seqs[index].obs
    if not 1 <= t <= len(obs):
        raise HorizonOutOfRange(f"t={t} outside 1..{len(obs)}")
    if isinstance(m, spr.SprParams):
        pred = spr.predict_horizon(m, obs, t, k)
    else:
        if k < 1:
            raise HorizonOutOfRange(f"horizon must be >= 1, got {k}")
        pred = evaluation.as_forecaster(m).predict(obs[:t], k)
    return " ".join("%.17g" % v for v in pred)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="sprdm", description="SPR dynamic models: generate, train, evaluate, predict")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, help="INI config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override [run] seed")

    g = sub.add_parser("generate", help="write dataset splits and a manifest")
    common(g)
    t = sub.add_parser("train", help="train SPR and baselines on a generated dataset")
    common(t)
    t.add_argument("--data", help="dataset directory (default: --out)")
    e = sub.add_parser("evaluate", help="multi-horizon test error for trained models")
    common(e)
    e.add_argument("--data", help="dataset directory (default: --out)")
    e.add_argument("--model", action="append", help="model file (repeatable; default: all)")
    pr = sub.add_parser("predict", help="print the k-step prediction after t observations")
    pr.add_argument("--model", required=True)
    pr.add_argument("--sequences", required=True, help="sequence file")
    pr.add_argument("--t", type=int, required=True, help="observations available")
    pr.add_argument("--k", type=int, required=True, help="horizon")
    pr.add_argument("--index", type=int, default=0, help="which sequence in the file")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "predict":
            print(cmd_predict(args.model, args.sequences, args.t, args.k, args.index))
            return EXIT_OK
        cfg = load_config(args.config, args.seed)
        if args.command == "generate":
            cmd_generate(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.out, args.data or args.out)
        else:
            cmd_evaluate(cfg, args.out, args.data or args.out, args.model)
    except InvalidConfig as e:
        print(f"sprdm {args.command}: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SprError, OSError, ValueError, IndexError, ArithmeticError) as e:
        print(f"sprdm {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
