"""Detector setup life cycle, hyper-parameter sweeps and threshold tuning.

``run_setup`` performs the initial phase: normalize, quantize, window,
fit the model on a thinned subset, collect false anomalies on the full
training set, pick thresholds, then detect and score every test set.
``detector_setup`` adds the iterative phase: while quality requirements
are unmet it either raises a threshold (oversensitive detector) or
sweeps candidate setups and keeps the best one.
"""

import csv
import dataclasses
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bundle
from .analyzer import (
    PROPERTIES,
    RuleSet,
    apply_rules,
    auto_thresholds,
    collect_candidates,
    property_matrix,
    threshold_grid,
)
from .config import PreprocessConfig, from_mapping, read_config, split_list
from .errors import ConfigError, ConfigMismatchError, QgadError
from .gru import GruClassifier, TrainConfig, fit
from .metrics import CSV_FIELDS, classify_detections, evaluate
from .quantizer import build_grid
from .signal_io import (
    _atomic_write,
    build_windows,
    channel_bounds,
    concat_datasets,
    normalize,
    subsample,
    thin_examples,
)

log = logging.getLogger(__name__)

CRITERIA = ("best_length", "best_cum_amp", "best_max_amp", "best_accuracy", "balanced")


def parse_cells(text):
    """``"32"`` is one layer of 32 cells, ``"32/16"`` two stacked layers."""
    try:
        sizes = tuple(int(s) for s in str(text).split("/") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"cells: cannot parse {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise ConfigError(f"cells: need positive layer sizes, got {text!r}")
    return sizes


@dataclass(frozen=True)
class ModelConfig:
    cells: str = "32"
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.05
    validation_fraction: float = 0.1
    optimizer: str = "sgd"
    clip_norm: float = 0.0
    keep_best: bool = False
    seed: int = 0

    def validate(self):
        parse_cells(self.cells)
        self.train_config()
        return self

    @property
    def layer_sizes(self):
        return parse_cells(self.cells)

    def train_config(self):
        return TrainConfig(
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.validation_fraction,
            self.seed,
            self.optimizer,
            self.clip_norm,
            self.keep_best,
        ).validate()


@dataclass(frozen=True)
class AnalyzerConfig:
    policy: str = "first_match"
    policy_param: float = 1.0
    properties: str = "length,cum_amp,max_amp"

    def validate(self):
        from .kernels import POLICIES

        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {sorted(POLICIES)}")
        props = self.property_list
        if not props or any(p not in PROPERTIES for p in props) or len(set(props)) != len(props):
            raise ConfigError(f"properties must be distinct names from {PROPERTIES}")
        return self

    @property
    def property_list(self):
        return tuple(split_list(self.properties, str))


@dataclass(frozen=True)
class QualityConfig:
    """Application quality requirements, checked on every test set."""

    min_f1: float = 0.0
    min_f2: float = 0.0

    def validate(self):
        if not (0 <= self.min_f1 <= 1 and 0 <= self.min_f2 <= 1):
            raise ConfigError("quality requirements must lie in [0, 1]")
        return self


SECTIONS = {
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "analyzer": AnalyzerConfig,
    "quality": QualityConfig,
}


@dataclass(frozen=True)
class SetupConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    analyzer: AnalyzerConfig = field(default_factory=AnalyzerConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)

    @classmethod
    def from_sections(cls, sections):
        """Build from ``{section: {key: str}}``; sections not listed here are ignored."""
        parts = {
            name: from_mapping(typ, sections.get(name, {}), name) for name, typ in SECTIONS.items()
        }
        return cls(**parts)

    @classmethod
    def from_file(cls, path):
        return cls.from_sections(read_config(path))

    def to_text(self):
        out = []
        for name in SECTIONS:
            out.append(f"[{name}]\n")
            for k, v in dataclasses.asdict(getattr(self, name)).items():
                out.append(f"{k} = {v}\n")
            out.append("\n")
        return "".join(out)

    def with_overrides(self, overrides):
        """Route flat ``key: value`` overrides to the section owning the key."""
        changes = {name: {} for name in SECTIONS}
        for key, value in overrides.items():
            owners = [n for n, t in SECTIONS.items() if key in {f.name for f in dataclasses.fields(t)}]
            if not owners:
                raise ConfigError(f"unknown setting {key!r}")
            if len(owners) > 1 and key != "seed":
                raise ConfigError(f"ambiguous setting {key!r}")
            changes[owners[0]][key] = value
        parts = {}
        for name in SECTIONS:
            cur = getattr(self, name)
            parts[name] = dataclasses.replace(cur, **changes[name]).validate()
        return SetupConfig(**parts)


@dataclass
class Trace:
    """Per-sample real and predicted classes of one windowed series."""

    sample_index: np.ndarray
    real: np.ndarray
    predicted: np.ndarray

    def to_csv(self, intervals):
        in_anomaly = np.zeros(len(self.sample_index), dtype=np.int64)
        for s, e in intervals:
            in_anomaly[(self.sample_index >= s) & (self.sample_index < e)] = 1
        buf = io.StringIO()
        buf.write("t,real_class,predicted_class,in_anomaly\n")
        rows = np.stack([self.sample_index, self.real, self.predicted, in_anomaly], axis=1)
        np.savetxt(buf, rows, fmt="%d", delimiter=",")
        return buf.getvalue()


@dataclass
class DetectorSetup:
    config: SetupConfig
    model: GruClassifier
    in_grids: list
    out_grid: object
    norm_bounds: np.ndarray
    train_report: object
    search: object
    rules: RuleSet
    false_anomalies: np.ndarray
    runs: dict
    reports: dict
    traces: dict = field(default_factory=dict)

    @property
    def validation_accuracy(self):
        return self.train_report.final_val_accuracy

    @property
    def n_parameters(self):
        return self.model.n_parameters()

    @property
    def false_maxima(self):
        """Largest value of each property among the training-set candidates."""
        if len(self.false_anomalies) == 0:
            return {p: 0.0 for p in PROPERTIES}
        return {p: float(v) for p, v in zip(PROPERTIES, self.false_anomalies.max(axis=0))}

    def meets_quality(self):
        q = self.config.quality
        return all(r.f1 >= q.min_f1 and r.f2 >= q.min_f2 for r in self.reports.values())

    def with_rules(self, rules):
        """Same model, new rules: re-filter stored test candidates and re-score."""
        runs, reports = {}, {}
        for name, run in self.runs.items():
            runs[name] = apply_rules(run.candidates, rules)
            reports[name] = evaluate(runs[name].intervals, self.reports[name].truth)
        return dataclasses.replace(self, rules=rules, runs=runs, reports=reports)

    def summary_row(self):
        pre, mod = self.config.preprocess, self.config.model
        row = {
            "in_grid": pre.in_grid,
            "out_grid": pre.out_grid,
            "look_back": pre.look_back,
            "cells": mod.cells,
            "samples_percentage": pre.samples_percentage,
            "n_parameters": self.n_parameters,
            "train_accuracy": self.train_report.train_accuracy[-1],
            "validation_accuracy": self.validation_accuracy,
        }
        for p, v in self.false_maxima.items():
            row[f"max_{p}"] = v
        for p in PROPERTIES:
            row[f"threshold_{p}"] = self.rules.get(p)
        row["saved_area"] = self.search.saved_area
        for name, rep in sorted(self.reports.items()):
            for k in ("recall", "precision", "f1", "f2"):
                row[f"{name}.{k}"] = getattr(rep, k)
        return row

    def bundle_meta(self):
        return {
            "norm_bounds": self.norm_bounds.tolist(),
            "model_config": dataclasses.asdict(self.config.model),
            "analyzer_config": dataclasses.asdict(self.config.analyzer),
            "train_report": self.train_report.to_dict(),
        }

    def save(self, out_dir, write_traces=True):
        """Write bundle, thresholds, training report and per-test reports."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        bundle.save(
            out / "bundle.json",
            self.model,
            self.in_grids,
            self.out_grid,
            self.config.preprocess,
            self.rules,
            self.bundle_meta(),
        )
        _atomic_write(out / "config.ini", self.config.to_text())
        _atomic_write(out / "thresholds.json", _json(self.search.to_dict()))
        _atomic_write(out / "rules.json", _json(self.rules.to_dict()))
        _atomic_write(out / "train_report.json", _json(self.train_report.to_dict()))
        _atomic_write(out / "false_anomalies.csv", _table(PROPERTIES, self.false_anomalies))
        summary = io.StringIO()
        writer = csv.writer(summary, lineterminator="\n")
        writer.writerow(("set",) + CSV_FIELDS)
        for name in sorted(self.reports):
            rep = self.reports[name]
            writer.writerow((name,) + tuple(rep.row()[k] for k in CSV_FIELDS))
            _atomic_write(out / f"report_{name}.json", _json(rep.to_dict()))
            if write_traces and name in self.traces:
                _atomic_write(out / f"trace_{name}.csv", self.traces[name].to_csv(rep.detected))
        _atomic_write(out / "reports.csv", summary.getvalue())
        return out


def _json(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _table(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _as_list(data):
    if data is None:
        return []
    if isinstance(data, (list, tuple)):
        return list(data)
    return [data]


def fit_quantization(trains, tests, cfg):
    """Normalization bounds and grids: ``(bounds, in_grids, out_grid)``.

    Bounds cover the training series, plus the test series when
    ``norm_scope`` is ``all``. Grid edges always come from training data.
    """
    trains = _as_list(trains)
    scope = trains + (list(tests) if cfg.norm_scope == "all" else [])
    bounds = channel_bounds(*scope)
    joined = np.concatenate([normalize(s, bounds).channels for s in trains], axis=1)
    n_ch = joined.shape[0]
    if not 0 <= cfg.target_channel < n_ch:
        raise ConfigError(f"target_channel {cfg.target_channel} out of range")
    in_grids = [build_grid(cfg.in_algorithm, joined[c], cfg.in_grid) for c in range(n_ch)]
    out_grid = build_grid(cfg.out_algorithm, joined[cfg.target_channel], cfg.out_grid)
    return bounds, in_grids, out_grid


def run_setup(train, tests=None, config=None, out_dir=None, write_traces=True, init=None):
    """Initial phase of a detector setup.

    ``train`` is one anomaly-free raw series or a list of them; ``tests``
    maps a set name to a raw series with labelled anomalies. Returns a
    :class:`DetectorSetup`; with ``out_dir`` all artifacts are written
    there as well. ``init`` is an optional :class:`~qgad.bundle.Bundle`
    whose normalization, grids and weights are reused (the config must
    quantize the same way).
    """
    config = config or SetupConfig()
    cfg = config.preprocess
    if cfg.in_algorithm == "none" or cfg.out_algorithm == "none":
        raise ConfigError("the model needs class indices; quantization 'none' is not supported")
    trains = _as_list(train)
    if not trains:
        raise ConfigError("no training data")
    tests = dict(tests or {})
    for s in trains:
        if s.anomaly_intervals:
            raise QgadError(f"training series {s.name!r} contains labelled anomalies")

    mcfg = config.model
    if init is not None:
        init.check_config(cfg)
        if "norm_bounds" not in init.meta:
            raise ConfigError("bundle has no normalization bounds")
        bounds = np.asarray(init.meta["norm_bounds"], dtype=np.float64)
        ntrain = [normalize(s, bounds) for s in trains]
        n_ch = ntrain[0].n_channels
        if n_ch != init.model.n_channels:
            raise ConfigError(f"bundle expects {init.model.n_channels} channels, data has {n_ch}")
        in_grids, out_grid = list(init.in_grids), init.out_grid
        model = init.model.copy()
        if tuple(init.model.cells) != mcfg.layer_sizes:
            raise ConfigMismatchError(
                f"cells: bundle={init.model.cells!r} requested={mcfg.layer_sizes!r}"
            )
    else:
        bounds, in_grids, out_grid = fit_quantization(trains, list(tests.values()), cfg)
        ntrain = [normalize(s, bounds) for s in trains]
        n_ch = len(in_grids)
        model = GruClassifier.create(n_ch, mcfg.layer_sizes, cfg.out_grid, cfg.in_grid, mcfg.seed)
    grids = (in_grids, out_grid)

    train_sets = [build_windows(s, grids, cfg) for s in ntrain]
    fit_set = subsample(
        thin_examples(concat_datasets(train_sets), cfg.decimation), cfg.samples_percentage, cfg.seed
    )
    log.info("fitting %d examples, %d parameters", len(fit_set), model.n_parameters())
    train_report = fit(model, fit_set, mcfg.train_config())

    acfg = config.analyzer
    candidates = []
    for ds in train_sets:
        pred = model.predict(ds.inputs)
        candidates += collect_candidates(
            pred, ds.target_classes, out_grid, acfg.policy, acfg.policy_param,
            int(ds.sample_index[0]),
        )
    search = auto_thresholds(candidates, acfg.property_list)
    rules = search.rules
    residual = apply_rules(candidates, rules).anomalies
    if residual:
        raise QgadError(f"{len(residual)} training candidates survive the selected thresholds")
    log.info("thresholds %s, saved area %.4f", rules.to_dict(), search.saved_area)

    runs, reports, traces = {}, {}, {}
    for name in sorted(tests):
        nt = normalize(tests[name], bounds)
        ds = build_windows(nt, grids, cfg)
        pred = model.predict(ds.inputs)
        cands = collect_candidates(
            pred, ds.target_classes, out_grid, acfg.policy, acfg.policy_param,
            int(ds.sample_index[0]),
        )
        runs[name] = apply_rules(cands, rules)
        reports[name] = evaluate(runs[name].intervals, nt.anomaly_intervals)
        traces[name] = Trace(ds.sample_index, ds.target_classes, pred)
        log.info("%s: tp=%d fp=%d fn=%d f1=%.4f", name, reports[name].tp, reports[name].fp,
                 reports[name].fn, reports[name].f1)

    setup = DetectorSetup(
        config, model, in_grids, out_grid, bounds, train_report, search, rules,
        property_matrix(candidates, PROPERTIES), runs, reports, traces,
    )
    if out_dir is not None:
        setup.save(out_dir, write_traces)
    return setup


@dataclass(frozen=True)
class SweepGrid:
    """Candidate values per setting; the sweep visits their cartesian product."""

    axes: dict

    def __post_init__(self):
        axes = {k: list(v) for k, v in dict(self.axes).items()}
        if not axes:
            raise ConfigError("sweep grid has no axes")
        for k, v in axes.items():
            if not v:
                raise ConfigError(f"sweep axis {k!r} is empty")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_section(cls, section):
        """``{key: "v1, v2"}`` with each value typed like the setting it overrides."""
        types = {}
        for typ in SECTIONS.values():
            for f in dataclasses.fields(typ):
                types.setdefault(f.name, f.type)
        axes = {}
        for key, raw in section.items():
            if key not in types:
                raise ConfigError(f"[sweep] unknown setting {key!r}")
            typ = types[key]
            if isinstance(typ, str):
                typ = {"int": int, "float": float, "str": str}.get(typ, str)
            axes[key] = split_list(raw, typ)
        return cls(axes)

    def points(self):
        keys = list(self.axes)
        return [dict(zip(keys, vals)) for vals in itertools.product(*self.axes.values())]

    def __len__(self):
        return int(np.prod([len(v) for v in self.axes.values()]))


def criterion_value(setup, criterion):
    """Scalar to minimise for one single-objective criterion."""
    m = setup.false_maxima
    if criterion == "best_length":
        return m["length"]
    if criterion == "best_cum_amp":
        return m["cum_amp"]
    if criterion == "best_max_amp":
        return m["max_amp"]
    if criterion == "best_accuracy":
        return -setup.validation_accuracy
    raise ConfigError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")


def _min_ranks(values):
    """Competition ranks (1 = best, ties share the lowest rank)."""
    values = np.asarray(values, dtype=np.float64)
    return np.array([1 + int(np.sum(values < v)) for v in values])


def rank_setups(setups, criterion):
    """Order setups by ``criterion``, ties going to fewer model parameters.

    ``balanced`` sums each setup's ranks under the four single criteria.
    """
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    if criterion == "balanced":
        scores = sum(
            _min_ranks([criterion_value(s, c) for s in setups]) for c in CRITERIA[:-1]
        )
    else:
        scores = [criterion_value(s, criterion) for s in setups]
    order = sorted(range(len(setups)), key=lambda i: (scores[i], setups[i].n_parameters, i))
    return [setups[i] for i in order], [float(scores[i]) for i in order]


def _sweep_one(args):
    train, tests, config, out_dir, write_traces = args
    return run_setup(train, tests, config, out_dir, write_traces)


def sweep(train, tests, base_config, grid, criterion="best_length", out_dir=None, jobs=1,
          write_traces=False):
    """Train one setup per grid point and rank them.

    Returns ``(ranked_setups, scores)``. With ``out_dir`` every candidate
    is saved under ``setup_NNN`` and the comparison table goes to
    ``sweep.csv``. ``jobs > 1`` trains candidates in worker processes;
    the result does not depend on it.
    """
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    points = grid.points()
    configs = [base_config.with_overrides(p) for p in points]
    dirs = [None if out_dir is None else Path(out_dir) / f"setup_{i:03d}" for i in range(len(points))]
    tasks = [(train, tests, c, d, write_traces) for c, d in zip(configs, dirs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            setups = list(pool.map(_sweep_one, tasks))
    else:
        setups = [_sweep_one(t) for t in tasks]
    ranked, scores = rank_setups(setups, criterion)
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "sweep.csv", sweep_table(setups, points, criterion))
    return ranked, scores


def sweep_table(setups, points, criterion):
    """CSV comparison table, one row per candidate in grid order."""
    ranked, scores = rank_setups(setups, criterion)
    rank_of = {id(s): r + 1 for r, s in enumerate(ranked)}
    score_of = {id(s): sc for s, sc in zip(ranked, scores)}
    rows = []
    for i, (s, p) in enumerate(zip(setups, points)):
        row = {"setup": f"setup_{i:03d}", "rank": rank_of[id(s)], "score": score_of[id(s)]}
        row.update({f"param.{k}": v for k, v in p.items()})
        row.update(s.summary_row())
        rows.append(row)
    header = []
    for row in rows:
        header += [k for k in row if k not in header]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", restval="")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class Adjustment:
    """Outcome of an oversensitivity check.

    ``action`` is ``"unchanged"`` (no false positives), ``"raised"``
    (``rules`` has ``prop`` raised) or ``"escalate"`` (no property
    separates true from false detections).
    """

    action: str
    rules: RuleSet
    prop: str = None


def raise_threshold(rules, fp_props, tp_props, bins=None, properties=PROPERTIES):
    """Raise the first property that strictly separates true from false detections.

    ``fp_props``/``tp_props`` are property matrices (columns in
    ``properties`` order). The new threshold is the smallest value of
    that property's bin grid in ``[max false, min true)``, or the largest
    false value itself when no bin boundary falls there.
    """
    fp_props = np.asarray(fp_props, dtype=np.float64).reshape(-1, len(properties))
    tp_props = np.asarray(tp_props, dtype=np.float64).reshape(-1, len(properties))
    if len(fp_props) == 0:
        return Adjustment("unchanged", rules)
    bins = bins or {}
    for j, prop in enumerate(properties):
        hi_fp = fp_props[:, j].max()
        lo_tp = tp_props[:, j].min() if len(tp_props) else np.inf
        if not lo_tp > hi_fp:
            continue
        grid = np.asarray(bins.get(prop, []), dtype=np.float64)
        inside = grid[(grid >= hi_fp) & (grid < lo_tp)]
        value = float(inside.min()) if inside.size else float(hi_fp)
        if value <= rules.get(prop):
            continue
        return Adjustment("raised", rules.raised(prop, value), prop)
    return Adjustment("escalate", rules)


def handle_oversensitivity(setup):
    """Check every test set's detections and raise a threshold if possible."""
    fp_rows, tp_rows = [], []
    for name, run in setup.runs.items():
        if not run.anomalies:
            continue
        hit = classify_detections(run.intervals, setup.reports[name].truth)
        props = property_matrix(run.anomalies, PROPERTIES)
        fp_rows.append(props[~hit])
        tp_rows.append(props[hit])
    fp = np.concatenate(fp_rows) if fp_rows else np.zeros((0, len(PROPERTIES)))
    tp = np.concatenate(tp_rows) if tp_rows else np.zeros((0, len(PROPERTIES)))
    bins = {p: threshold_grid(setup.false_anomalies[:, j])
            for j, p in enumerate(PROPERTIES) if len(setup.false_anomalies)}
    return raise_threshold(setup.rules, fp, tp, bins)


def detector_setup(train, tests, config, grid=None, criterion="best_length", max_rounds=10,
                   out_dir=None, jobs=1):
    """Initial phase followed by the iterative improvement loop.

    Each round raises a threshold when the detector is oversensitive and
    a property separates real from false detections; otherwise it sweeps
    ``grid`` once and keeps the best candidate if it beats the current
    setup under ``criterion``. Returns ``(setup, history)``.
    """
    setup = run_setup(train, tests, config)
    history = ["initial"]
    swept = False
    for _ in range(max_rounds):
        if setup.meets_quality():
            break
        adj = handle_oversensitivity(setup)
        if adj.action == "raised":
            setup = setup.with_rules(adj.rules)
            history.append(f"raised {adj.prop} to {adj.rules.get(adj.prop)!r}")
            continue
        if grid is None or swept:
            history.append("stopped: no further adjustment available")
            break
        swept = True
        ranked, _ = sweep(train, tests, config, grid, criterion, jobs=jobs)
        best = ranked[0]
        key = "balanced" if criterion == "balanced" else criterion
        if key == "balanced" or criterion_value(best, key) < criterion_value(setup, key):
            setup = best
            history.append("replaced by sweep candidate")
        else:
            history.append("sweep found no better candidate")
    if out_dir is not None:
        setup.save(out_dir)
    return setup, history
