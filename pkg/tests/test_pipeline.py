import filecmp
from types import SimpleNamespace

import numpy as np
import pytest

from qgad.analyzer import RuleSet, apply_rules
from qgad.errors import ConfigError, QgadError
from qgad.pipeline import (
    ModelConfig,
    SetupConfig,
    SweepGrid,
    detector_setup,
    handle_oversensitivity,
    parse_cells,
    raise_threshold,
    rank_setups,
    run_setup,
    sweep,
)
from qgad.synth import SynthSpec, make_corpus

FAST = dict(cells="8", epochs=4, samples_percentage=0.3, look_back=8, keep_best=True)


@pytest.fixture(scope="module")
def corpus():
    return make_corpus(SynthSpec(anomaly_count=10), 12_000, 8_000, (100,))


@pytest.fixture(scope="module")
def setup(corpus):
    train, tests = corpus
    return run_setup(train, tests, SetupConfig().with_overrides(FAST))


class TestRunSetup:
    def test_train_residuals_zero(self, setup, corpus):
        train, _ = corpus
        cands = _train_candidates(setup, train)
        assert apply_rules(cands, setup.rules).anomalies == []
        assert len(cands) == len(setup.false_anomalies)

    def test_truth_conservation(self, setup):
        rep = setup.reports["steps100"]
        assert len(rep.truth) == 10
        found = sum(
            any(d[0] < t[1] and t[0] < d[1] for d in rep.detected) for t in rep.truth
        )
        assert found + rep.fn == 10

    def test_quantization_none_refused(self, corpus):
        train, tests = corpus
        with pytest.raises(ConfigError):
            run_setup(train, tests, SetupConfig().with_overrides({"in_algorithm": "none"}))

    def test_labelled_training_refused(self, corpus):
        _, tests = corpus
        with pytest.raises(QgadError):
            run_setup(tests["steps100"], None, SetupConfig().with_overrides(FAST))

    def test_deterministic_artifacts(self, corpus, tmp_path):
        train, tests = corpus
        cfg = SetupConfig().with_overrides(dict(FAST, epochs=2))
        run_setup(train, tests, cfg, tmp_path / "a")
        run_setup(train, tests, cfg, tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "bundle.json" in names and "report_steps100.json" in names
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names,
                                                   shallow=False)
        assert mismatch == [] and errors == []

    def test_warm_start_from_bundle(self, corpus, tmp_path):
        from qgad import bundle

        train, tests = corpus
        cfg = SetupConfig().with_overrides(dict(FAST, epochs=1))
        run_setup(train, tests, cfg, tmp_path)
        b = bundle.load(tmp_path / "bundle.json")
        again = run_setup(train, tests, cfg, init=b)
        assert again.model.cells == [8]
        from qgad.errors import ConfigMismatchError

        with pytest.raises(ConfigMismatchError):
            run_setup(train, tests, cfg.with_overrides({"look_back": 4}), init=b)


def _train_candidates(setup, train):
    from qgad.analyzer import collect_candidates
    from qgad.signal_io import build_windows, normalize

    cfg = setup.config.preprocess
    ds = build_windows(normalize(train, setup.norm_bounds), (setup.in_grids, setup.out_grid), cfg)
    pred = setup.model.predict(ds.inputs)
    return collect_candidates(pred, ds.target_classes, setup.out_grid, offset=int(ds.sample_index[0]))


class TestConfig:
    def test_cells(self):
        assert parse_cells("32/16") == (32, 16)
        assert parse_cells("64") == (64,)
        with pytest.raises(ConfigError):
            parse_cells("0")

    def test_overrides_route_to_sections(self):
        cfg = SetupConfig().with_overrides({"in_grid": 8, "cells": "4/4", "policy": "true_count"})
        assert cfg.preprocess.in_grid == 8
        assert cfg.model.layer_sizes == (4, 4)
        assert cfg.analyzer.policy == "true_count"
        with pytest.raises(ConfigError):
            SetupConfig().with_overrides({"bogus": 1})

    def test_text_round_trip(self, tmp_path):
        cfg = SetupConfig().with_overrides({"look_back": 12, "epochs": 7, "min_f1": 0.5})
        path = tmp_path / "c.ini"
        path.write_text(cfg.to_text())
        assert SetupConfig.from_file(path) == cfg

    def test_model_defaults(self):
        m = ModelConfig()
        assert (m.epochs, m.batch_size, m.learning_rate) == (50, 64, 0.05)


def fake(length, cum, amp, acc, n_params):
    return SimpleNamespace(
        false_maxima={"length": length, "cum_amp": cum, "max_amp": amp},
        validation_accuracy=acc,
        n_parameters=n_params,
    )


class TestRanking:
    def test_tie_goes_to_fewer_parameters(self):
        a, b, c = fake(5, 1, 1, .9, 500), fake(5, 1, 1, .9, 100), fake(7, 1, 1, .9, 10)
        ranked, scores = rank_setups([a, b, c], "best_length")
        assert ranked == [b, a, c] and scores == [5, 5, 7]

    def test_accuracy_is_maximised(self):
        a, b = fake(1, 1, 1, .8, 1), fake(1, 1, 1, .95, 1)
        assert rank_setups([a, b], "best_accuracy")[0][0] is b

    def test_balanced_rank_sum(self):
        a = fake(5, 2.0, 0.5, 0.90, 10)
        b = fake(6, 1.0, 0.4, 0.95, 10)
        c = fake(4, 3.0, 0.6, 0.80, 10)
        ranked, scores = rank_setups([a, b, c], "balanced")
        # ranks a: 2,2,2,2  b: 3,1,1,1  c: 1,3,3,3
        assert ranked == [b, a, c] and scores == [6, 8, 10]

    def test_unknown_criterion(self):
        with pytest.raises(ConfigError):
            rank_setups([fake(1, 1, 1, 1, 1)], "best_vibes")

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            SweepGrid({})
        with pytest.raises(ConfigError):
            SweepGrid({"in_grid": []})

    def test_grid_from_section(self):
        g = SweepGrid.from_section({"in_grid": "8,16", "cells": "8, 4/4"})
        assert len(g) == 4
        assert g.points()[1] == {"in_grid": 8, "cells": "4/4"}


def test_sweep_four_candidates(corpus, tmp_path):
    train, tests = corpus
    base = SetupConfig().with_overrides(dict(FAST, epochs=2, cells="4"))
    grid = SweepGrid({"in_grid": [8, 16], "out_grid": [8, 16]})
    ranked, scores = sweep(train, tests, base, grid, "best_accuracy", tmp_path)
    assert len(ranked) == 4
    accs = [s.validation_accuracy for s in ranked]
    assert accs[0] == max(accs) and scores == sorted(scores)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("setup,rank,score,param.in_grid")
    assert sorted(p.name for p in tmp_path.iterdir())[:4] == [f"setup_{i:03d}" for i in range(4)]


class TestOversensitivity:
    def test_separable(self):
        fp = [[l, 1.0, 0.1] for l in (1, 3, 5)]
        tp = [[l, 1.0, 0.1] for l in (50, 80)]
        adj = raise_threshold(RuleSet({"length": 2}), fp, tp, {"length": np.arange(0, 60, 4.0)})
        assert adj.action == "raised" and adj.prop == "length"
        t = adj.rules.get("length")
        assert 5 <= t < 50 and t == 8.0
        assert adj.rules.get("length") > 2

    def test_no_bin_boundary_uses_false_maximum(self):
        adj = raise_threshold(RuleSet(), [[5, 1, 1]], [[7, 1, 1]], {"length": [0, 1, 2]})
        assert adj.rules.get("length") == 5.0

    def test_interleaved(self):
        fp = [[10, 2.0, 0.5], [3, 0.5, 0.1]]
        tp = [[5, 1.0, 0.3], [20, 4.0, 0.9]]
        assert raise_threshold(RuleSet(), fp, tp).action == "escalate"

    def test_no_false_positives(self):
        rules = RuleSet({"length": 3})
        adj = raise_threshold(rules, np.zeros((0, 3)), [[50, 1, 1]])
        assert adj.action == "unchanged" and adj.rules is rules

    def test_second_property(self):
        fp = [[10, 0.5, 0.1]]
        tp = [[5, 2.0, 0.3]]
        adj = raise_threshold(RuleSet(), fp, tp)
        assert adj.prop == "cum_amp" and adj.rules.get("cum_amp") == 0.5

    def test_on_setup(self, setup):
        adj = handle_oversensitivity(setup)
        assert adj.action in ("unchanged", "raised", "escalate")
        if adj.action == "raised":
            after = setup.with_rules(adj.rules).reports["steps100"]
            assert after.fp < setup.reports["steps100"].fp

    def test_detector_setup_loop(self, corpus):
        train, tests = corpus
        cfg = SetupConfig().with_overrides(dict(FAST, epochs=1, min_f1=1.0))
        final, history = detector_setup(train, tests, cfg, max_rounds=3)
        assert history[0] == "initial"
        if final.meets_quality():
            assert all(h.startswith("raised") for h in history[1:])
        else:
            assert history[-1].startswith("stopped") or len(history) == 4
