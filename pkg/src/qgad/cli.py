"""``qgad`` command line: generate data, train, threshold, detect, score, sweep.

Every command writes its outputs atomically under ``--out`` and exits
non-zero with a one-line diagnostic on failure. ``QG_LOG_LEVEL``
(``error``, ``info`` or ``debug``) sets the log verbosity.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import bundle as bundle_mod
from . import features, pipeline, synth
from .analyzer import (
    PROPERTIES,
    apply_rules,
    auto_thresholds,
    collect_candidates,
    compartmentalize,
    property_matrix,
)
from .config import read_config
from .errors import ConfigError, MissingArtifactsError, ParseError, QgadError
from .metrics import evaluate
from .quantizer import diagnostics
from .signal_io import _atomic_write, build_windows, load_csv, normalize, write_csv

log = logging.getLogger("qgad")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _json(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _sections(path):
    return read_config(path) if path else {}


def _setup_config(args):
    cfg = pipeline.SetupConfig.from_sections(_sections(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            preprocess=cfg.preprocess.replace(seed=args.seed),
            model=dataclasses.replace(cfg.model, seed=args.seed),
        )
    return cfg


def _named_inputs(paths):
    """``name=path`` or bare ``path`` (named after the file stem)."""
    out = {}
    for item in paths or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        if name in out:
            raise ConfigError(f"duplicate input name {name!r}")
        out[name] = load_csv(path, name=name)
    return out


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_intervals(path):
    """Intervals from a detection JSON, a ``start,end`` CSV, or a labelled data CSV."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactsError(f"{path} does not exist")
    if path.suffix == ".json":
        try:
            d = json.loads(path.read_text())
            return [tuple(iv) for iv in d["intervals"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: not a detection file ({exc})") from exc
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and [h.strip() for h in rows[0]] == ["start", "end"]:
        try:
            return [(int(r[0]), int(r[1])) for r in rows[1:]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad interval row ({exc})") from exc
    return list(load_csv(path).anomaly_intervals)


def _intervals_csv(intervals):
    return "start,end\n" + "".join(f"{s},{e}\n" for s, e in intervals)


def cmd_gen(args):
    spec = synth.SynthSpec.from_dict(_sections(args.config).get("synth", {}))
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    durations = [int(d) for d in args.durations.split(",") if d.strip()]
    train_len = args.train_length or spec.length
    test_len = args.test_length or spec.length
    train, tests = synth.make_corpus(spec, train_len, test_len, durations)
    out = _out_dir(args)
    write_csv(train, out / "train.csv")
    for name, series in tests.items():
        write_csv(series, out / f"{name}.csv")
    spec_text = "[synth]\n" + "".join(
        f"{k} = {v}\n" for k, v in dataclasses.asdict(spec).items()
    )
    _atomic_write(out / "synth.ini", spec_text)
    print(f"wrote {1 + len(tests)} series to {out}")
    return 0


def cmd_preprocess(args):
    cfg = _setup_config(args).preprocess
    trains = _named_inputs(args.train)
    tests = _named_inputs(args.test)
    if not trains:
        raise ConfigError("at least one --train input is required")
    bounds, in_grids, out_grid = pipeline.fit_quantization(
        list(trains.values()), list(tests.values()), cfg
    )
    out = _out_dir(args)
    summary = {
        "preprocess": cfg.to_dict(),
        "norm_bounds": bounds.tolist(),
        "grids": {"in": [g.to_dict() for g in in_grids], "out": out_grid.to_dict()},
        "datasets": {},
    }
    for role, inputs in (("train", trains), ("test", tests)):
        for name, series in inputs.items():
            ns = normalize(series, bounds)
            ds = build_windows(ns, (in_grids, out_grid), cfg)
            diag = diagnostics(out_grid, ns.channels[cfg.target_channel])
            summary["datasets"][name] = {
                "role": role,
                "examples": len(ds),
                "target_class_fractions": [float(f) for f in diag.fractions],
            }
            buf = io.BytesIO()
            np.savez(buf, inputs=ds.inputs, target_classes=ds.target_classes,
                     sample_index=ds.sample_index)
            tmp = out / f".windows_{name}.npz.tmp"
            tmp.write_bytes(buf.getvalue())
            os.replace(tmp, out / f"windows_{name}.npz")
    _atomic_write(out / "preprocess.json", _json(summary))
    print(f"preprocessed {len(summary['datasets'])} series into {out}")
    return 0


def cmd_train(args):
    cfg = _setup_config(args)
    trains = _named_inputs(args.train)
    tests = _named_inputs(args.test)
    if not trains:
        raise ConfigError("at least one --train input is required")
    init = bundle_mod.load(args.bundle) if args.bundle else None
    setup = pipeline.run_setup(list(trains.values()), tests, cfg, args.out, init=init)
    print(f"validation accuracy {setup.validation_accuracy:.4f}; rules {setup.rules.to_dict()}")
    for name, rep in sorted(setup.reports.items()):
        print(f"{name}: recall {rep.recall:.4f} precision {rep.precision:.4f} f1 {rep.f1:.4f}")
    return 0


def cmd_auto_thresholds(args):
    b = bundle_mod.load(args.bundle)
    sections = _sections(args.config)
    if "analyzer" in sections:
        acfg = pipeline.SetupConfig.from_sections(sections).analyzer
    else:
        acfg = pipeline.AnalyzerConfig(**b.meta.get("analyzer_config", {}))
    if "preprocess" in sections:
        b.check_config(pipeline.SetupConfig.from_sections(sections).preprocess)
    trains = _named_inputs(args.train)
    if not trains:
        raise ConfigError("at least one --train input is required")
    bounds = np.asarray(b.meta["norm_bounds"])
    candidates = []
    for series in trains.values():
        ds = build_windows(normalize(series, bounds), (b.in_grids, b.out_grid), b.config)
        pred = b.model.predict(ds.inputs)
        candidates += collect_candidates(pred, ds.target_classes, b.out_grid, acfg.policy,
                                         acfg.policy_param, int(ds.sample_index[0]))
    search = auto_thresholds(candidates, acfg.property_list)
    if apply_rules(candidates, search.rules).anomalies:
        raise QgadError("selected thresholds leave training candidates confirmed")
    out = _out_dir(args)
    meta = dict(b.meta)
    meta["analyzer_config"] = dataclasses.asdict(acfg)
    bundle_mod.save(out / "bundle.json", b.model, b.in_grids, b.out_grid, b.config,
                    search.rules, meta)
    _atomic_write(out / "thresholds.json", _json(search.to_dict()))
    _atomic_write(out / "rules.json", _json(search.rules.to_dict()))
    _atomic_write(out / "false_anomalies.csv",
                  pipeline._table(PROPERTIES, property_matrix(candidates, PROPERTIES)))
    print(f"rules {search.rules.to_dict()} saved area {search.saved_area:.4f}")
    return 0


def cmd_detect(args):
    b = bundle_mod.load(args.bundle)
    if b.rules is None:
        raise ConfigError("bundle has no rules; run auto-thresholds first")
    if args.config:
        b.check_config(_setup_config(args).preprocess)
    acfg = pipeline.AnalyzerConfig(**b.meta.get("analyzer_config", {}))
    bounds = np.asarray(b.meta["norm_bounds"])
    out = _out_dir(args)
    for name, series in _named_inputs(args.input).items():
        ns = normalize(series, bounds)
        ds = build_windows(ns, (b.in_grids, b.out_grid), b.config)
        b.check_dataset(ds)
        pred = b.model.predict(ds.inputs)
        cands = collect_candidates(pred, ds.target_classes, b.out_grid, acfg.policy,
                                   acfg.policy_param, int(ds.sample_index[0]))
        run = apply_rules(cands, b.rules)
        doc = run.to_dict()
        doc["intervals"] = [list(iv) for iv in run.intervals]
        doc["rules"] = b.rules.to_dict()
        _atomic_write(out / f"detection_{name}.json", _json(doc))
        _atomic_write(out / f"detected_{name}.csv", _intervals_csv(run.intervals))
        trace = pipeline.Trace(ds.sample_index, ds.target_classes, pred)
        _atomic_write(out / f"trace_{name}.csv", trace.to_csv(run.intervals))
        print(f"{name}: {len(run.anomalies)} anomalies from {len(cands)} candidates")
    return 0


def cmd_evaluate(args):
    detected = _read_intervals(args.detected)
    truth = _read_intervals(args.truth)
    rep = evaluate(detected, truth)
    out = _out_dir(args)
    _atomic_write(out / "metrics.csv", rep.to_csv())
    _atomic_write(out / "evaluation.json", _json(rep.to_dict()))
    print(f"tp {rep.tp} fp {rep.fp} fn {rep.fn} recall {rep.recall:.4f} "
          f"precision {rep.precision:.4f} f1 {rep.f1:.4f} f2 {rep.f2:.4f}")
    return 0


def cmd_sweep(args):
    sections = _sections(args.config)
    cfg = _setup_config(args)
    grid = pipeline.SweepGrid.from_section(sections.get("sweep", {}))
    trains = _named_inputs(args.train)
    tests = _named_inputs(args.test)
    if not trains:
        raise ConfigError("at least one --train input is required")
    ranked, scores = pipeline.sweep(list(trains.values()), tests, cfg, grid, args.criterion,
                                    out_dir=args.out, jobs=args.jobs)
    best = ranked[0]
    print(f"{len(ranked)} setups; best under {args.criterion}: "
          f"{best.config.preprocess.in_grid}/{best.config.preprocess.out_grid}/"
          f"{best.config.preprocess.look_back}/{best.config.model.cells} (score {scores[0]:g})")
    return 0


def cmd_features(args):
    out = _out_dir(args)
    opts = features.FeatureOptions(args.ctm_radius, args.sample_rate)
    for name, series in _named_inputs(args.input).items():
        mat = features.window_scan(series, args.window, args.hop, opts)
        _atomic_write(out / f"features_{name}_{args.window}.csv", mat.to_csv())
        print(f"{name}: {len(mat)} windows of {args.window} samples")
    return 0


def _histogram_rows(props):
    """Long-format 2-D histograms of false-anomaly properties, one block per pair."""
    rows = []
    edges = [compartmentalize(props[:, j]) for j in range(props.shape[1])]
    # a single edge means a constant property: widen it to one bin
    edges = [e if len(e) > 1 else np.array([e[0], e[0] + 1.0]) for e in edges]
    for a in range(len(PROPERTIES)):
        for b in range(a + 1, len(PROPERTIES)):
            counts, ex, ey = np.histogram2d(props[:, a], props[:, b], bins=[edges[a], edges[b]])
            for i in range(len(ex) - 1):
                for j in range(len(ey) - 1):
                    rows.append((PROPERTIES[a], ex[i], ex[i + 1], PROPERTIES[b], ey[j],
                                 ey[j + 1], int(counts[i, j])))
    return rows


def cmd_report(args):
    run = Path(args.run)
    if not run.is_dir():
        raise MissingArtifactsError(f"{run} is not a directory")
    out = Path(args.out) if args.out else run / "report"
    written = []
    runs = [run] + sorted(p for p in run.glob("setup_*") if p.is_dir())
    for d in runs:
        fa = d / "false_anomalies.csv"
        if not fa.exists():
            continue
        props = np.loadtxt(fa, delimiter=",", skiprows=1, ndmin=2).reshape(-1, len(PROPERTIES))
        if len(props) == 0:
            continue
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("x_property", "x_low", "x_high", "y_property", "y_low", "y_high", "count"))
        for r in _histogram_rows(props):
            w.writerow([r[0], repr(float(r[1])), repr(float(r[2])), r[3], repr(float(r[4])),
                        repr(float(r[5])), r[6]])
        tag = "" if d == run else f"_{d.name}"
        _atomic_write(out / f"false_anomaly_histogram{tag}.csv", buf.getvalue())
        written.append(f"false_anomaly_histogram{tag}.csv")
    sweep_csv = run / "sweep.csv"
    if sweep_csv.exists():
        with open(sweep_csv, newline="") as fh:
            table = list(csv.DictReader(fh))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("setup", "parameter", "value", "validation_accuracy", "train_accuracy"))
        for row in table:
            for key in ("in_grid", "out_grid", "look_back", "cells", "samples_percentage"):
                w.writerow((row["setup"], key, row[key], row["validation_accuracy"],
                            row["train_accuracy"]))
        _atomic_write(out / "accuracy_vs_parameters.csv", buf.getvalue())
        written.append("accuracy_vs_parameters.csv")
    for trace in sorted(run.glob("trace_*.csv")):
        (out).mkdir(parents=True, exist_ok=True)
        shutil.copyfile(trace, out / f".{trace.name}.tmp")
        os.replace(out / f".{trace.name}.tmp", out / trace.name)
        written.append(trace.name)
    if not written:
        raise MissingArtifactsError(f"no run artifacts found in {run}")
    print(f"wrote {len(written)} report files to {out}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "auto-thresholds": cmd_auto_thresholds,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "features": cmd_features,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="qgad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text, out_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    p = add("gen", "generate a synthetic training series and stepped test series")
    p.add_argument("--train-length", type=int)
    p.add_argument("--test-length", type=int)
    p.add_argument("--durations", default="100,50", help="step durations, one test set each")

    p = add("preprocess", "fit normalization and grids, write windowed datasets")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", nargs="*", default=[])

    p = add("train", "train a detector setup and score it on the test sets")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", nargs="*", default=[])
    p.add_argument("--bundle", help="continue from this bundle (same quantization required)")

    p = add("auto-thresholds", "select rules for a bundle from its training data")
    p.add_argument("--bundle", required=True)
    p.add_argument("--train", nargs="+", required=True)

    p = add("detect", "run a bundle on new series")
    p.add_argument("--bundle", required=True)
    p.add_argument("--input", nargs="+", required=True)

    p = add("evaluate", "score detected intervals against ground truth")
    p.add_argument("--detected", required=True)
    p.add_argument("--truth", required=True)

    p = add("sweep", "train one setup per point of the [sweep] grid and rank them")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", nargs="*", default=[])
    p.add_argument("--criterion", default="best_length", choices=pipeline.CRITERIA)
    p.add_argument("--jobs", type=int, default=1)

    p = add("features", "windowed feature matrices for one-class baselines")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--window", type=int, default=1024)
    p.add_argument("--hop", type=int)
    p.add_argument("--ctm-radius", type=float, default=0.1)
    p.add_argument("--sample-rate", type=float, default=1.0)

    p = add("report", "plot-ready CSVs from a train, detect or sweep directory",
            out_required=False)
    p.add_argument("--run", required=True)
    return parser


def main(argv=None):
    level = os.environ.get("QG_LOG_LEVEL", "error").lower()
    if level not in LOG_LEVELS:
        print(f"error: QG_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except QgadError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
