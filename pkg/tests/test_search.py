"""Grid construction, per-point seeding and argmax selection."""

import json

import numpy as np
import pytest

from callqa.errors import CallQAError, DataError, InvalidInputError, TrainingDivergedError
from callqa.search import (GridSpec, PointRecord, SearchConfig, SearchReport, build_grid,
                           grid_search, logspace, select_best)


def blob_data(seed=0, n=300):
    r = np.random.default_rng(seed)
    y = (r.random(n) < 0.15).astype(int)
    x = r.normal(0, 1, (n, 3)) + 4.0 * y[:, None]
    return x, y


class TestGrid:
    def test_full_grid_size(self):
        grid = build_grid(GridSpec.full())
        assert len(grid) == 560
        assert len(set(grid)) == 560

    def test_logspace_values(self):
        rates = logspace(-3, 0, 20)
        assert rates[0] == 0.001 and rates[-1] == 1.0
        assert rates[4] == pytest.approx(10 ** (-3 + 12 / 19), rel=1e-12)
        assert round(rates[4], 6) == 0.004281
        assert np.all(np.diff(rates) > 0)

    def test_single_point(self):
        assert build_grid(GridSpec((5,), (0.1,), (8,))) == [(5, 0.1, 8)]

    def test_order(self):
        g = build_grid(GridSpec((1, 2), (0.1, 0.2), (8,)))
        assert g == [(1, 0.1, 8), (1, 0.2, 8), (2, 0.1, 8), (2, 0.2, 8)]

    @pytest.mark.parametrize("axes", [((), (0.1,), (8,)), ((2,), (), (8,)),
                                      ((2,), (0.1,), (0,))])
    def test_invalid_axes(self, axes):
        with pytest.raises(InvalidInputError):
            GridSpec(*axes)

    def test_logspace_count(self):
        with pytest.raises(InvalidInputError):
            logspace(0, 1, 0)
        assert logspace(-2, 0, 1) == [0.01]


def rec(i, score, failed=False):
    m = None if failed else {"recall": {"weighted": score}, "mce": score}
    return PointRecord(i, 2, 0.1, 8, 0, m, failed)


class TestSelection:
    def test_earliest_tie_wins(self):
        assert select_best([rec(0, 0.5), rec(1, 0.9), rec(2, 0.9)], "recall_weighted") == 1

    def test_failed_points_are_skipped(self):
        recs = [rec(0, None, failed=True), rec(1, 0.2)]
        assert select_best(recs, "recall_weighted") == 1

    def test_undefined_scores_are_skipped(self):
        assert select_best([rec(0, None), rec(1, 0.1)], "recall_weighted") == 1

    def test_mce_is_minimised(self):
        assert select_best([rec(0, 0.3), rec(1, 0.1), rec(2, 0.1)], "mce") == 1

    def test_all_failed(self):
        with pytest.raises(CallQAError):
            select_best([rec(0, None, failed=True)], "recall_weighted")


class TestGridSearch:
    spec = GridSpec((2, 20), (0.01, 0.1), (8,))
    cfg = SearchConfig(master_seed=3, epochs=3, n_init=2)

    def run(self, **kw):
        x, y = blob_data()
        cfg = SearchConfig(**{**self.cfg.__dict__, **kw})
        return grid_search(x[y == 0][:200], x[-80:], y[-80:], self.spec, cfg)

    def test_report_is_complete_and_argmax_consistent(self):
        rep = self.run()
        assert len(rep.records) == 4
        scores = [r.score(rep.selection_metric) for r in rep.records]
        assert scores[rep.best_index] == max(s for s in scores if s is not None)
        assert rep.best_head is not None
        # recomputing the argmax from the serialised report agrees
        back = SearchReport.from_dict(json.loads(rep.to_json()))
        assert select_best(back.records, back.selection_metric) == rep.best_index

    def test_reproducible(self):
        a, b = self.run(), self.run()
        assert [r.metrics for r in a.records] == [r.metrics for r in b.records]
        assert [r.rbm_seed for r in a.records] == [r.rbm_seed for r in b.records]
        assert len({r.rbm_seed for r in a.records}) == 4

    def test_seed_changes_point_seeds(self):
        a, b = self.run(), self.run(master_seed=4)
        assert [r.rbm_seed for r in a.records] != [r.rbm_seed for r in b.records]

    def test_workers_do_not_change_results(self):
        a, b = self.run(), self.run(workers=2)
        assert [r.metrics for r in a.records] == [r.metrics for r in b.records]
        assert a.best_index == b.best_index

    def test_divergence_is_recorded(self, monkeypatch):
        import callqa.model
        real = callqa.model.train_rbm

        def flaky(data, hyper, seed, init=None):
            if hyper.learning_rate > 1:
                raise TrainingDivergedError("RBM parameters became non-finite at epoch 2", 2)
            return real(data, hyper, seed, init)

        monkeypatch.setattr(callqa.model, "train_rbm", flaky)
        x, y = blob_data()
        spec = GridSpec((2,), (0.1, 5.0), (8,))
        rep = grid_search(x[:200], x[-80:], y[-80:], spec, self.cfg)
        assert rep.records[1].failed and rep.records[1].error
        assert rep.best_index == 0

    def test_one_class_validation(self):
        x, _ = blob_data()
        with pytest.raises(DataError):
            grid_search(x, x[:10], np.zeros(10, dtype=int), self.spec, self.cfg)

    def test_empty_validation(self):
        x, _ = blob_data()
        with pytest.raises(DataError):
            grid_search(x, x[:0], np.zeros(0, dtype=int), self.spec, self.cfg)

    def test_csv(self):
        rep = self.run()
        lines = rep.to_csv().decode().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("schema_version,index,n_hidden")

    def test_schema_version_check(self):
        doc = self.run().to_dict()
        doc["schema_version"] = 0
        with pytest.raises(InvalidInputError):
            SearchReport.from_dict(doc)
