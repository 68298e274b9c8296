"""Command-line entry point.

    gcshift <command> [--config FILE] [--seed N] [--out DIR] [--key value ...]

Settings resolve as built-in defaults < the ``[command]`` section of the
INI config file < command-line flags.  Every command writes
``<command>.config.json`` next to its outputs recording the resolved
settings.  Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from gcshift.baselines import maity_ic, maity_pc, saerens_classifier, tune_bandwidth, tune_neighbors
from gcshift.classifier import PluginClassifier, argmax_label, excess_risk
from gcshift.data import (
    DataError,
    Dataset,
    apply_scaling,
    dataset_to_csv,
    fit_scaling,
    load_csv,
    write_csv,
)
from gcshift.diagnostics import gcs_report
from gcshift.network import MlpConfig, TrainingError, grid_search, train_source, SourceModel
from gcshift.proportions import TargetProportionEstimate, em_saerens, ratio_weights, solve_pmle
from gcshift.seeding import child_seed
from gcshift.simulation import (
    CLASSIFIERS,
    EXPERIMENT_GRID,
    MethodSettings,
    ScenarioSpec,
    generate,
    run_experiment,
    true_eta,
)

log = logging.getLogger("gcshift")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(ValueError):
    pass


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _str(v):
    return str(v)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v):
    return [int(s) for s in str(v).split(",") if s.strip()]


def _floats(v):
    return [float(s) for s in str(v).split(",") if s.strip()]


def _strs(v):
    return [s.strip() for s in str(v).split(",") if s.strip()]


_MLP_KEYS = {
    "depth": (_int, 2), "width": (_int, 32), "learning_rate": (_float, 1e-2),
    "batch_size": (_int, 32), "epochs": (_int, 300), "output_clip": (_float, 10.0),
}

COMMANDS: dict[str, dict[str, tuple]] = {
    "simulate": {
        "scenario": (_str, "I"), "pi_Q1": (_float, 0.5), "n_P": (_int, 100),
        "n_Q": (_int, 400), "n_test": (_int, 2500),
    },
    "fit-source": {
        "source": (_str, None), "label_column": (_str, "y"), **_MLP_KEYS,
        "grid": (_bool, False), "depths": (_ints, [1, 2, 3]), "widths": (_ints, [8, 16, 32, 64]),
        "learning_rates": (_floats, [1e-3, 1e-2]), "valid_fraction": (_float, 0.3),
        "model": (_str, "model.json"),
    },
    "estimate-pi": {
        "model": (_str, None), "target": (_str, None), "method": (_str, "pmle"),
        "output": (_str, "pi.json"),
    },
    "classify": {
        "method": (_str, "dnn-pc"), "model": (_str, None), "data": (_str, None),
        "pi": (_str, None), "target": (_str, None), "source": (_str, None),
        "target_labels": (_str, None), "label_column": (_str, "y"),
        "bandwidth": (_float, None), "neighbors": (_int, None),
        "output": (_str, "predictions.csv"),
    },
    "evaluate": {
        "test": (_str, None), "predictions": (_strs, None), "label_column": (_str, "y"),
        "output": (_str, "metrics.csv"),
    },
    "diagnose": {
        "source": (_str, None), "target": (_str, None), "target_labels": (_str, None),
        "label_column": (_str, "y"), "bins": (_int, 30),
        "output": (_str, "diagnostic"),
    },
    "experiment": {
        "scenario": (_str, "I"), "pi_Q1": (_float, 0.25), "n_P": (_int, 600),
        "n_Q": (_int, 400), "n_test": (_int, 2500), "replications": (_int, 200),
        "methods": (_strs, ["dnn-pc", "saerens", "maity-pc", "maity-ic", "bayes"]),
        "jobs": (_int, 1), "bandwidth": (_float, None), "neighbors": (_int, None),
        "dnn_grid": (_str, "default"), "valid_fraction": (_float, 0.3),
        "output": (_str, "report"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcshift", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="INI file with a [%s] section" % name)
        sp.add_argument("--seed", default=None, help="master seed (default 0)")
        sp.add_argument("--out", default=None, help="output directory (default .)")
        for key in keys:
            sp.add_argument(f"--{key}", dest=key, default=None)
    return p


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, the config-file section and explicit flags."""
    keys = COMMANDS[command]
    raw: dict = {}
    if ns.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(ns.config):
            raise ConfigError(f"cannot read config file {ns.config}")
        if cp.has_section(command):
            for k, v in cp.items(command):
                if k not in keys and k not in ("seed", "out"):
                    raise ConfigError(f"unknown key {k!r} in [{command}]")
                raw[k] = v
    for k in list(keys) + ["seed", "out"]:
        v = getattr(ns, k, None)
        if v is not None:
            raw[k] = v
    cfg = {}
    for k, (conv, default) in keys.items():
        try:
            cfg[k] = conv(raw[k]) if k in raw else default
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    try:
        cfg["seed"] = int(raw.get("seed", 0))
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {raw.get('seed')!r}") from None
    cfg["out"] = str(raw.get("out", "."))
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")


def _sidecar(cfg: dict, command: str, outputs: list[str]) -> None:
    doc = {"command": command, "config": cfg, "outputs": outputs}
    with open(Path(cfg["out"]) / f"{command}.config.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _spec(cfg) -> ScenarioSpec:
    try:
        return ScenarioSpec(cfg["scenario"], cfg["pi_Q1"], cfg["n_P"], cfg["n_Q"],
                            cfg["n_test"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> list[str]:
    spec = _spec(cfg)
    out = _outdir(cfg)
    sim = generate(spec, cfg["seed"])
    dataset_to_csv(out / "source.csv", sim.source)
    dataset_to_csv(out / "target.csv", sim.target)
    write_csv(out / "target_labels.csv", ["y"], ([int(v)] for v in sim.target_labels))
    eta = true_eta(spec, "target", sim.test_raw)
    cols = [f"x{j + 1}" for j in range(sim.test.d)] + ["y", "eta_q1", "eta_q2"]
    rows = [list(x) + [int(y)] + list(e)
            for x, y, e in zip(sim.test.features.tolist(), sim.test.labels, eta.tolist())]
    write_csv(out / "test.csv", cols, rows)
    return ["source.csv", "target.csv", "target_labels.csv", "test.csv"]


def _mlp_config(cfg: dict, k: int, seed: int) -> MlpConfig:
    return MlpConfig(depth=cfg["depth"], width=cfg["width"], output_dim=k - 1,
                     learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
                     epochs=cfg["epochs"], seed=seed, output_clip=cfg["output_clip"])


def cmd_fit_source(cfg: dict) -> list[str]:
    _require(cfg, "source")
    out = _outdir(cfg)
    data = load_csv(cfg["source"], label_column=cfg["label_column"])
    scaling = fit_scaling(data)
    scaled = apply_scaling(data, scaling)
    base = _mlp_config(cfg, data.k, child_seed(cfg["seed"], "fit-source"))
    base = replace(base, batch_size=min(base.batch_size, data.n))
    if cfg["grid"]:
        grid = [replace(base, depth=d, width=w, learning_rate=lr)
                for d in cfg["depths"] for w in cfg["widths"] for lr in cfg["learning_rates"]]
        base = grid_search(scaled, grid, cfg["valid_fraction"], child_seed(cfg["seed"], "grid-split"))
        log.info("grid search selected %s", base)
    model = train_source(scaled, base, scaling)
    model.to_json(out / cfg["model"])
    return [cfg["model"]]


def _load_features(path, model: SourceModel | None = None, label_column=None) -> Dataset:
    names = None if model is None or model.feature_names is None else list(model.feature_names)
    return load_csv(path, label_column=label_column, feature_columns=names)


def _estimate(model: SourceModel, target: Dataset, method: str) -> TargetProportionEstimate:
    x = model.transform(target.features)
    if method == "pmle":
        return solve_pmle(ratio_weights(model, x))
    if method == "em":
        return em_saerens(model, x)
    raise ConfigError(f"unknown estimation method {method!r}; valid: pmle, em")


def cmd_estimate_pi(cfg: dict) -> list[str]:
    _require(cfg, "model", "target")
    out = _outdir(cfg)
    model = SourceModel.from_json(cfg["model"])
    est = _estimate(model, _load_features(cfg["target"], model), cfg["method"])
    with open(out / cfg["output"], "w") as fh:
        fh.write(est.to_json(indent=1, sort_keys=True))
    return [cfg["output"]]


def _read_labels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise DataError(f"{path} has no label rows")
    try:
        return np.array([int(float(r[0])) for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: non-integer label ({exc})") from None


def cmd_classify(cfg: dict) -> list[str]:
    _require(cfg, "data")
    out = _outdir(cfg)
    method = cfg["method"]
    if method == "dnn-pc":
        _require(cfg, "model")
        model = SourceModel.from_json(cfg["model"])
        if cfg["pi"] is not None:
            with open(cfg["pi"]) as fh:
                pi_Q = np.asarray(json.load(fh)["pi_Q"], dtype=float)
        else:
            _require(cfg, "target")
            pi_Q = _estimate(model, _load_features(cfg["target"], model), "pmle").pi_Q
        x = model.transform(_load_features(cfg["data"], model).features)
        pred = PluginClassifier(model, pi_Q).predict(x)
    elif method in ("saerens", "maity-pc", "maity-ic"):
        _require(cfg, "source", "target")
        source = load_csv(cfg["source"], label_column=cfg["label_column"])
        names = list(source.columns)
        target = load_csv(cfg["target"], feature_columns=names, k=source.k)
        data = load_csv(cfg["data"], feature_columns=names, k=source.k)
        scaling = fit_scaling(source)
        source, target = apply_scaling(source, scaling), apply_scaling(target, scaling)
        x = scaling.transform(data.features)
        seed = cfg["seed"]
        if method == "saerens":
            kk = cfg["neighbors"] or tune_neighbors(source, seed=child_seed(seed, "knn-split"))
            pred = saerens_classifier(source, target, kk).predict(x)
        else:
            b = cfg["bandwidth"] or tune_bandwidth(source, seed=child_seed(seed, "kde-split"))
            if method == "maity-pc":
                pred = maity_pc(source, target, b).predict(x)
            else:
                _require(cfg, "target_labels")
                labeled = Dataset(target.features, _read_labels(cfg["target_labels"]), source.k)
                pred = maity_ic(source, labeled, b).predict(x)
    else:
        raise ConfigError(f"unknown method {method!r}; valid: dnn-pc, saerens, maity-pc, maity-ic")
    write_csv(out / cfg["output"], ["label"], ([int(v)] for v in pred))
    return [cfg["output"]]


def cmd_evaluate(cfg: dict) -> list[str]:
    _require(cfg, "test", "predictions")
    out = _outdir(cfg)
    with open(cfg["test"], newline="") as fh:
        header = next(r for r in csv.reader(fh) if r and not r[0].startswith("#"))
    eta_cols = sorted((c for c in header if c.startswith("eta_q")), key=lambda c: int(c[5:]))
    test = load_csv(cfg["test"], label_column=cfg["label_column"])
    y = test.labels
    bayes = None
    if eta_cols:
        idx = [list(test.columns).index(c) for c in eta_cols]
        bayes = argmax_label(test.features[:, idx])
    rows = []
    for item in cfg["predictions"]:
        name, _, path = item.rpartition("=")
        name = name or Path(path).stem
        pred = _read_labels(path)
        if pred.shape != y.shape:
            raise DataError(f"{path}: {pred.size} predictions for {y.size} test rows")
        row = [name, int(y.size), float(np.mean(pred != y))]
        if bayes is not None:
            row.append(excess_risk(pred, bayes, y))
        rows.append(row)
    cols = ["method", "n", "error_rate"] + (["excess_risk"] if bayes is not None else [])
    write_csv(out / cfg["output"], cols, rows)
    return [cfg["output"]]


def cmd_diagnose(cfg: dict) -> list[str]:
    _require(cfg, "source", "target")
    out = _outdir(cfg)
    source = load_csv(cfg["source"], label_column=cfg["label_column"])
    names = list(source.columns)
    if cfg["target_labels"] is not None:
        t = load_csv(cfg["target"], feature_columns=names, k=source.k)
        target = Dataset(t.features, _read_labels(cfg["target_labels"]), source.k, t.columns)
    else:
        target = load_csv(cfg["target"], label_column=cfg["label_column"],
                          feature_columns=names, k=source.k)
    diag = gcs_report(source, target, cfg["bins"], child_seed(cfg["seed"], "diagnose"))
    stem = cfg["output"]
    diag.write(out / f"{stem}.json", out / f"{stem}_hist.csv", config=cfg)
    return [f"{stem}.json", f"{stem}_hist.csv"]


def _experiment_grid(cfg: dict) -> tuple[MlpConfig, ...]:
    spec = cfg["dnn_grid"]
    if spec == "default":
        return EXPERIMENT_GRID
    if spec == "fixed":
        return (_mlp_config({k: d for k, (_, d) in _MLP_KEYS.items()}, 2, 0),)
    raise ConfigError(f"dnn_grid must be 'default' or 'fixed', got {spec!r}")


def cmd_experiment(cfg: dict) -> list[str]:
    spec = _spec(cfg)
    out = _outdir(cfg)
    bad = [m for m in cfg["methods"] if m not in CLASSIFIERS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; valid: {', '.join(CLASSIFIERS)}")
    settings = MethodSettings(dnn_grid=_experiment_grid(cfg), valid_fraction=cfg["valid_fraction"],
                              bandwidth=cfg["bandwidth"], neighbors=cfg["neighbors"])
    report = run_experiment(spec, cfg["replications"], cfg["methods"], settings=settings,
                            n_jobs=cfg["jobs"])
    stem = cfg["output"]
    resolved = {k: v for k, v in cfg.items() if k not in ("jobs", "out")}
    report.write(out / f"{stem}.csv", out / f"{stem}.json", config=resolved)
    return [f"{stem}.csv", f"{stem}.json"]


HANDLERS = {
    "simulate": cmd_simulate,
    "fit-source": cmd_fit_source,
    "estimate-pi": cmd_estimate_pi,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(ns.command, ns)
        outputs = HANDLERS[ns.command](cfg)
        _sidecar(cfg, ns.command, outputs)
    except ConfigError as exc:
        print(f"gcshift {ns.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"gcshift {ns.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, TrainingError) as exc:
        print(f"gcshift {ns.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gcshift {ns.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
