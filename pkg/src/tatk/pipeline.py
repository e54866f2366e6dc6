"""Config-driven benchmark stages: generate -> train -> attribute -> evaluate."""

from __future__ import annotations

import copy
import csv
import json
import logging
import shutil
import time
from pathlib import Path

import numpy as np

from . import datasets as ds
from .attribution import (METHODS, NEEDS_BACKGROUND, WRAPPERS, BaselineSpec, read_attributions,
                          write_attributions)
from .metrics import MaskPolicy, black_box_metric_batch, lipschitz_max, white_box_metrics
from .models import MLP, RNN, TrainConfig, accuracy, load_model, save_model, train

logger = logging.getLogger(__name__)

DATASETS = ("arma", "hmm", "hawkes")
MODEL_KINDS = ("whitebox", "rnn", "mlp")
STAGES = ("generate", "train", "attribute", "evaluate")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage, self.cause = stage, cause


# -- config -----------------------------------------------------------------

def method_label(entry: dict) -> str:
    if "label" in entry:
        return entry["label"]
    if entry["name"] in WRAPPERS:
        return f"{entry['name']}-{entry['inner']}"
    return entry["name"]


def validate_config(cfg: dict) -> dict:
    """Check names and seeds up front; returns a deep copy."""
    cfg = copy.deepcopy(cfg)
    for key in ("dataset", "model", "methods", "metrics"):
        if key not in cfg:
            raise ConfigError(f"config is missing the {key!r} block")
    data = cfg["dataset"]
    if data.get("name") not in DATASETS:
        raise ConfigError(f"unknown dataset {data.get('name')!r}; available: {', '.join(DATASETS)}")
    if "seed" not in data:
        raise ConfigError("dataset block needs a seed")
    model = cfg["model"]
    if model.get("kind") not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model.get('kind')!r}; available: {', '.join(MODEL_KINDS)}")
    if model["kind"] == "whitebox" and data["name"] != "arma":
        raise ConfigError("the whitebox model only exists for the arma dataset")
    if model["kind"] != "whitebox" and "seed" not in model.get("train", {}):
        raise ConfigError("model.train block needs a seed")
    available = sorted(METHODS) + sorted(WRAPPERS)
    if not cfg["methods"]:
        raise ConfigError("methods list is empty")
    labels = set()
    for entry in cfg["methods"]:
        name = entry.get("name")
        if name not in METHODS and name not in WRAPPERS:
            raise ConfigError(f"unknown method {name!r}; available methods: {', '.join(available)}")
        if name in WRAPPERS and entry.get("inner") not in METHODS:
            raise ConfigError(f"{name} needs an 'inner' method from: {', '.join(sorted(METHODS))}")
        if "seed" not in entry:
            raise ConfigError(f"method {name!r} needs a seed")
        label = method_label(entry)
        if label in labels:
            raise ConfigError(f"duplicate method label {label!r}")
        labels.add(label)
    for pol in cfg["metrics"].get("black_box", []):
        if "seed" not in pol:
            raise ConfigError("every black-box policy needs a seed")
    lip = cfg["metrics"].get("lipschitz_max")
    if lip and "seed" not in lip:
        raise ConfigError("lipschitz_max needs a seed")
    return cfg


def override_seed(cfg: dict, seed: int) -> dict:
    cfg = copy.deepcopy(cfg)
    cfg["dataset"]["seed"] = seed
    if "train" in cfg["model"]:
        cfg["model"]["train"]["seed"] = seed
    for entry in cfg["methods"]:
        entry["seed"] = seed
    for pol in cfg["metrics"].get("black_box", []):
        pol["seed"] = seed
    if cfg["metrics"].get("lipschitz_max"):
        cfg["metrics"]["lipschitz_max"]["seed"] = seed
    return cfg


def bundled_configs() -> list[str]:
    return sorted(p.stem for p in (Path(__file__).parent / "configs").glob("*.json"))


def load_config(path) -> dict:
    """Read a JSON config; a bare name such as ``arma`` selects a bundled config."""
    path = Path(path)
    if not path.exists():
        bundled = Path(__file__).parent / "configs" / f"{path.name}.json"
        if path.suffix or not bundled.exists():
            raise ConfigError(f"config file {path} not found; bundled configs: "
                              f"{', '.join(bundled_configs())}")
        path = bundled
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{stage} needs {path}, which does not exist; run the upstream stage first")
    return path


# -- stages -----------------------------------------------------------------

def generate(cfg: dict, out: Path) -> None:
    data = cfg["dataset"]
    params = dict(data.get("params", {}))
    seed = int(data["seed"])
    d = out / "dataset"
    meta = {"name": data["name"], "params": dict(params), "seed": seed}
    if data["name"] == "arma":
        batch, truth, model = ds.generate_arma(seed=seed, **params)
        d.mkdir(parents=True, exist_ok=True)
        save_model(model, d / "whitebox.tatk")
    elif data["name"] == "hmm":
        n_train = int(params.pop("n_train", 200))
        n_test = int(params.pop("n_test", 50))
        train_batch, _ = ds.generate_hmm(B=n_train, seed=seed, **params)
        batch, truth = ds.generate_hmm(B=n_test, seed=seed + 1, n_background=16, **params)
        ds.save_dataset(d / "train", train_batch, meta=dict(meta, split="train"))
    else:
        hp = ds.HawkesParams(params.pop("mu"), params.pop("alpha"), params.pop("beta"),
                             params.pop("horizon"))
        n_train = int(params.pop("n_train", 64))
        n_test = int(params.pop("n_test", 16))
        T = int(params.pop("T", 50))
        _, train_batch, _ = ds.generate_hawkes(hp, B=n_train, T=T, seed=seed)
        _, batch, truth = ds.generate_hawkes(hp, B=n_test, T=T, seed=seed + 1, n_background=16)
        ds.save_dataset(d / "train", train_batch, meta=dict(meta, split="train"))
    batch.aux = {}
    ds.save_dataset(d, batch, truth, meta=dict(meta, split="test"))


def _load_dataset(out: Path, stage: str) -> dict:
    d = out / "dataset"
    _require(d / "meta.json", stage)
    for name in ("inputs.csv", "labels.csv", "truth.csv"):
        _require(d / name, stage)
    batch, truth, meta = ds.load_dataset(d)
    arrays = {"meta": meta, "inputs": batch.inputs, "labels": batch.labels,
              "truth": truth.values, "truth_kind": truth.kind}
    if batch.background is not None:
        arrays["background"] = batch.background
    if (d / "train" / "meta.json").exists():
        train_batch, _, _ = ds.load_dataset(d / "train")
        arrays["train_inputs"], arrays["train_labels"] = train_batch.inputs, train_batch.labels
    return arrays


def train_stage(cfg: dict, out: Path) -> None:
    data = _load_dataset(out, "train")
    spec = cfg["model"]
    if spec["kind"] == "whitebox":
        shutil.copyfile(_require(out / "dataset" / "whitebox.tatk", "train"), out / "model.tatk")
        _dump({"kind": "whitebox", "trained": False}, out / "train.json")
        return
    if "train_inputs" not in data:
        raise FileNotFoundError(f"train needs {out / 'dataset' / 'train' / 'inputs.csv'}, "
                                "which does not exist; run generate first")
    xs, ys = data["train_inputs"], data["train_labels"]
    tc = dict(spec.get("train", {}))
    N = xs.shape[2]
    task = spec.get("task", "regression" if data["meta"]["name"] == "hawkes" else "binary")
    n_out = 1 if task == "regression" else int(spec.get("n_outputs", 2))
    tc.setdefault("loss", "mse" if task == "regression" else "cross_entropy")
    if spec["kind"] == "rnn":
        model = RNN(N, int(spec.get("hidden", 32)), n_out, task=task,
                    activation=spec.get("activation", "tanh"), seed=int(tc["seed"]))
    else:
        hidden = [int(h) for h in spec.get("hidden", [32])]
        model = MLP([xs.shape[1] * N, *hidden, n_out], activation=spec.get("activation", "relu"),
                    task=task, seed=int(tc["seed"]))
        if ys.ndim == 2:
            ys = ys[:, -1]
    result = train(model, xs, ys, TrainConfig(**tc))
    save_model(result.model, out / "model.tatk")
    info = {"kind": spec["kind"], "trained": True, "losses": result.losses}
    if task != "regression":
        test_labels = data["labels"] if model.recurrent or data["labels"].ndim == 1 else data["labels"][:, -1]
        info["test_accuracy"] = accuracy(result.model, data["inputs"], test_labels)
    _dump(info, out / "train.json")


def _needs_background(name: str, options: dict) -> bool:
    return name in NEEDS_BACKGROUND or str(options.get("strategy", "")).endswith("augmented")


def _method_callable(entry: dict, background):
    """Bind config options (seed, baseline, background) to a method; returns (call, options)."""
    options = dict(entry.get("options", {}))
    seed = int(entry["seed"])
    if "baseline" in options:
        b = options["baseline"]
        b = {"kind": b} if isinstance(b, str) else dict(b)
        if b.get("kind") == "sample":
            b["background"] = background
        options["baseline"] = BaselineSpec(**b)
    if entry["name"] in WRAPPERS:
        inner, wrapper = METHODS[entry["inner"]], WRAPPERS[entry["name"]]
        inner_opts = dict(options.pop("inner_options", {}), seed=seed)
        if background is not None and _needs_background(entry["inner"], inner_opts):
            inner_opts["background"] = background
        if "swaps" in options:
            options["swaps"] = [tuple(s) for s in options["swaps"]]

        def call(model, x):
            return wrapper(inner, model, x, **options, **inner_opts)

        return call, {**options, "inner": entry["inner"], "inner_options": inner_opts}
    fn = METHODS[entry["name"]]
    options["seed"] = seed
    if background is not None and _needs_background(entry["name"], options):
        options["background"] = background

    def call(model, x):
        return fn(model, x, **options)

    return call, options


def attribute_stage(cfg: dict, out: Path, only: list[str] | None = None) -> None:
    data = _load_dataset(out, "attribute")
    model_path = _require(out / "model.tatk", "attribute")
    model = load_model(model_path)
    model_hash = model.fingerprint()
    n = int(cfg["dataset"].get("n_explain", len(data["inputs"])))
    xs = data["inputs"][:n]
    background = data.get("background")
    for entry in cfg["methods"]:
        label = method_label(entry)
        if only and label not in only:
            continue
        call, options = _method_callable(entry, background)
        attrs = [call(model, x) for x in xs]
        for a in attrs:
            a.options = options
        write_attributions(attrs, out / "attributions" / label, seed=int(entry["seed"]),
                           model_hash=model_hash)


def _policy(spec: dict, background) -> tuple[str, MaskPolicy]:
    spec = dict(spec)
    kind = spec.pop("kind")
    b = spec.pop("baseline", "zeros")
    b = {"kind": b} if isinstance(b, str) else dict(b)
    if b.get("kind") == "sample":
        b["background"] = background
    if spec.get("weight_fn") == "lof":
        spec["background"] = background
    return kind, MaskPolicy(baseline=BaselineSpec(**b), **spec)


def evaluate_stage(cfg: dict, out: Path, timings: dict | None = None) -> list[dict]:
    data = _load_dataset(out, "evaluate")
    model = load_model(_require(out / "model.tatk", "evaluate"))
    n = int(cfg["dataset"].get("n_explain", len(data["inputs"])))
    xs, truth = data["inputs"][:n], data["truth"][:n]
    labels = data.get("labels")
    if labels is not None:
        labels = labels[:n]
        if labels.ndim == 2:
            labels = labels[:, -1]
    background = data.get("background")
    mcfg = cfg["metrics"]
    rows = []
    for entry in cfg["methods"]:
        label = method_label(entry)
        attr_dir = out / "attributions" / label
        values, meta = read_attributions(attr_dir)
        if mcfg.get("white_box", True):
            if values.shape != truth.shape:
                raise ValueError(f"shape mismatch: {attr_dir / 'attributions.csv'} has shape "
                                 f"{tuple(values.shape)} but {out / 'dataset' / 'truth.csv'} has "
                                 f"shape {tuple(truth.shape)}")
            for metric, v in white_box_metrics(values, truth, kind=data["truth_kind"]).items():
                rows.append({"method": label, "metric": metric, "policy": "-", "value": v})
        for spec in mcfg.get("black_box", []):
            if values.shape != xs.shape:
                logger.info("skipping black-box metrics for temporal attribution %s", label)
                break
            kind, policy = _policy(spec, background)
            v = black_box_metric_batch(kind, model, xs, values, policy, labels)
            rows.append({"method": label, "metric": kind, "policy": policy.label(), "value": v})
        lip = mcfg.get("lipschitz_max")
        if lip:
            call, _ = _method_callable(entry, background)
            k = int(lip.get("n_instances", 1))
            vals = [lipschitz_max(lambda m, z: call(m, z), model, x, radius=float(lip.get("radius", 0.1)),
                                  n_samples=int(lip.get("n_samples", 5)), seed=int(lip["seed"]))
                    for x in xs[:k]]
            rows.append({"method": label, "metric": "lipschitz_max",
                         "policy": f"r{lip.get('radius', 0.1)}", "value": float(np.mean(vals))})
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "metric", "policy", "value"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "value": repr(float(r["value"]))})
    report = {"config_echo": cfg, "stage_timings_ms": timings or {}, "metrics": rows}
    _dump(report, out / "report.json")
    return rows


# -- orchestration ----------------------------------------------------------

def prepare_output(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {out} exists; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _timings_path(out: Path) -> Path:
    return out / "stage_timings.json"


def run_stage(stage: str, cfg: dict, out: Path, **kw) -> None:
    """Run one stage, record its wall time and write ``error.json`` on failure."""
    start = time.perf_counter()
    timings = json.loads(_timings_path(out).read_text()) if _timings_path(out).exists() else {}
    try:
        if stage == "generate":
            _dump(cfg, out / "config.json")
            generate(cfg, out)
        elif stage == "train":
            train_stage(cfg, out)
        elif stage == "attribute":
            attribute_stage(cfg, out, **kw)
        else:
            evaluate_stage(cfg, out, timings)
    except Exception as exc:
        out.mkdir(parents=True, exist_ok=True)
        _dump({"stage": stage, "error": type(exc).__name__, "message": str(exc)}, out / "error.json")
        raise StageError(stage, exc) from exc
    timings[stage] = round(1000 * (time.perf_counter() - start), 3)
    _dump(timings, _timings_path(out))
    if stage == "evaluate":
        report = json.loads((out / "report.json").read_text())
        report["stage_timings_ms"] = timings
        _dump(report, out / "report.json")


def run(cfg: dict, out: Path, force: bool = False) -> Path:
    cfg = validate_config(cfg)
    prepare_output(out, force)
    for stage in STAGES:
        run_stage(stage, cfg, out)
    return out
