"""Acceptance gate: one PASS/FAIL line per criterion, at the agreed tolerances.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines; they are also
shown in the terminal summary section under plain ``pytest``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats

from callqa.cluster import kmeans_fit, kmeans_predict
from callqa.metrics import (MODES, ConfusionMatrix, averaged_f1, averaged_precision,
                            averaged_recall, mce, recall)
from callqa.pipeline import (SynthSpec, comparison_csv, compare, default_compare_config,
                             dumps_report, strip_timing, synth_dataset)
from callqa.rbm import (RbmHyper, RbmModel, cd1_epoch, exact_gradient, exact_log_likelihood, rbm_init,
                        train_rbm)
from callqa.search import GridSpec, build_grid, logspace
from callqa.transform import box_cox, fit_yeo_johnson_lambda, yeo_johnson

LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str, limit_s: float | None = None, prior_s: float = 0.0):
    """Time the block, enforce the runtime limit and record a PASS/FAIL line.

    ``prior_s`` adds time already spent outside the block (in a fixture).
    """
    t0 = time.perf_counter()
    notes: list[str] = []
    status = "FAIL"
    try:
        yield notes
        elapsed = prior_s + time.perf_counter() - t0
        if limit_s is None:
            notes.append(f"{elapsed:.2f}s")
        else:
            notes.append(f"{elapsed:.2f}s (limit {limit_s:g}s)")
            assert elapsed < limit_s, f"took {elapsed:.1f}s, limit {limit_s}s"
        status = "PASS"
    finally:
        line = f"ACCEPTANCE {number} {status}: {title} -- {'; '.join(notes)}"
        LINES.append(line)
        print(line)



# -- 1 ---------------------------------------------------------------------------

def test_1_transform_correctness():
    with criterion(1, "closed forms, continuity, Box-Cox identity", 1.0) as notes:
        x = np.array([-4.0, -1.5, -0.3, 0.0, 0.2, 1.0, 9.0])
        pos, neg = x[x >= 0], x[x < 0]
        cases = [
            (yeo_johnson(x, 1.0), x),
            (yeo_johnson(pos, 0.0), np.log1p(pos)),
            (yeo_johnson(neg, 2.0), -np.log1p(-neg)),
            (yeo_johnson(pos, 2.0), ((pos + 1) ** 2 - 1) / 2),
            (yeo_johnson(neg, 0.0), -((1 - neg) ** 2 - 1) / 2),
            (box_cox(pos + 1, 1.0), pos),
            (box_cox(pos + 1, 0.0), np.log(pos + 1)),
        ]
        worst = max(float(np.max(np.abs(a - b))) for a, b in cases)
        notes.append(f"closed-form max err {worst:.1e}")
        assert worst <= 1e-9

        grid = np.linspace(-20, 20, 401)
        jump = max(float(np.max(np.abs(yeo_johnson(grid, lm + s * 1e-10)
                                       - yeo_johnson(grid, lm))))
                   for lm in (0.0, 2.0) for s in (1, -1))
        notes.append(f"continuity {jump:.1e}")
        assert jump <= 1e-6

        rng = np.random.default_rng(1)
        xs, lms = rng.exponential(2.0, 10_000), rng.uniform(-5, 5, 10_000)
        diff = max(abs(yeo_johnson(a, b) - box_cox(a + 1, b)) for a, b in zip(xs, lms))
        notes.append(f"YJ vs Box-Cox(x+1) max diff {diff:.1e} over 1e4 pairs")
        assert diff <= 1e-9


# -- 2 ---------------------------------------------------------------------------

def _grid_oracle(x):
    lms = np.round(np.arange(-5000, 5001) * 1e-3, 3)
    pos = x >= 0
    best, best_ll = None, -np.inf
    jac = np.sum(np.sign(x) * np.log(np.abs(x) + 1))
    for lm in lms:
        y = np.empty_like(x)
        y[pos] = np.log1p(x[pos]) if lm == 0 else ((x[pos] + 1) ** lm - 1) / lm
        y[~pos] = (-np.log1p(-x[~pos]) if lm == 2
                   else -((1 - x[~pos]) ** (2 - lm) - 1) / (2 - lm))
        ll = -0.5 * x.size * np.log(np.mean((y - y.mean()) ** 2)) + (lm - 1) * jac
        if ll > best_ll:
            best, best_ll = lm, ll
    return best


def test_2_lambda_estimation():
    with criterion(2, "MLE lambda on normal and skewed data, grid-scan agreement", 10.0) as notes:
        rng = np.random.default_rng(2)
        lm = fit_yeo_johnson_lambda(rng.standard_normal(10_000))
        notes.append(f"N(0,1) lambda={lm:.4f}")
        assert 0.9 <= lm <= 1.1

        x = np.exp(rng.standard_normal(10_000)) - 1
        skew = float(stats.skew(yeo_johnson(x, fit_yeo_johnson_lambda(x))))
        notes.append(f"exp(Z)-1 skew={skew:.4f}")
        assert abs(skew) < 0.2

        worst = 0.0
        for seed in range(20):
            r = np.random.default_rng(100 + seed)
            x = [r.normal(r.uniform(-2, 2), r.uniform(0.3, 3), 150),
                 r.exponential(r.uniform(0.2, 4), 150),
                 -r.gamma(r.uniform(0.5, 3), 1.0, 150),
                 r.standard_t(4, 150)][seed % 4]
            worst = max(worst, abs(fit_yeo_johnson_lambda(x) - _grid_oracle(x)))
        notes.append(f"max |lambda - grid oracle| {worst:.1e} over 20 datasets")
        assert worst <= 1e-3


# -- 3 ---------------------------------------------------------------------------

def test_3_rbm():
    with criterion(3, "RBM no-op, determinism, likelihood ascent, CD direction", 30.0) as notes:
        rng = np.random.default_rng(3)
        data = rng.random((30, 4))
        m = rbm_init(4, 3, 1, RbmHyper(0.0, 7, 3, 1))
        m2, _ = cd1_epoch(m, data, rng)
        assert (m2.W == m.W).all() and (m2.b == m.b).all() and (m2.c == m.c).all()
        notes.append("eps=0 exact no-op")

        hyper = RbmHyper(0.1, 8, 3, 5)
        a, _ = train_rbm(data, hyper, 9)
        b, _ = train_rbm(data, hyper, 9)
        assert a.W.tobytes() == b.W.tobytes() and a.b.tobytes() == b.b.tobytes()
        notes.append("bit-exact rerun")

        small = np.array([[1, 0, 1], [1, 0, 1], [0, 1, 0], [1, 1, 1]], dtype=float)
        init, _ = train_rbm(small, RbmHyper(0.1, 4, 2, 0), 5)
        final, _ = train_rbm(small, RbmHyper(0.1, 4, 2, 500), 5)
        ll0, ll1 = exact_log_likelihood(init, small), exact_log_likelihood(final, small)
        notes.append(f"3x2 LL {ll0:.3f} -> {ll1:.3f}")
        assert ll1 > ll0

        two = np.array([[1, 0], [0, 1], [1, 1], [1, 0]], dtype=float)
        r = np.random.default_rng(3)
        m = RbmModel(r.normal(0, 1, (2, 2)), r.normal(0, 0.5, 2), r.normal(0, 0.5, 2),
                     RbmHyper(1.0, 4, 2, 1))
        dW, _, _ = exact_gradient(m, two)
        g = np.random.default_rng(0)
        upd = np.mean([cd1_epoch(m, two, g)[0].W - m.W for _ in range(10_000)], axis=0)
        cos = float(np.sum(upd * dW) / (np.linalg.norm(upd) * np.linalg.norm(dW)))
        notes.append(f"CD-1 vs exact gradient cosine {cos:.3f}")
        assert cos > 0


# -- 4 ---------------------------------------------------------------------------

def _same_partition(a, b):
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def test_4_kmeans():
    with criterion(4, "inertia monotone, two blobs, permutation invariance", 10.0) as notes:
        for seed in range(100):
            r = np.random.default_rng(seed)
            x = r.normal(size=(int(r.integers(10, 120)), int(r.integers(1, 4))))
            h = np.diff(kmeans_fit(x, 2, seed=seed, n_init=2).inertia_history)
            assert np.all(h <= 1e-12), seed
        notes.append("monotone on 100 datasets")

        r = np.random.default_rng(4)
        x = np.vstack([r.normal(0, 1, (70, 2)), r.normal(9, 1, (30, 2))])
        y = np.repeat([0, 1], [70, 30])
        assert _same_partition(kmeans_predict(kmeans_fit(x, 2), x), y)
        notes.append("two-blob partition exact")

        perm = r.permutation(100)
        a = kmeans_predict(kmeans_fit(x, 2, seed=1), x)
        b = kmeans_predict(kmeans_fit(x[perm], 2, seed=1), x)
        assert _same_partition(a, b)
        notes.append("row-permutation invariant")


# -- 5 ---------------------------------------------------------------------------

def _recount(t, p, c, metric):
    tp = sum(a == c and b == c for a, b in zip(t, p))
    den = {"precision": sum(b == c for b in p), "recall": sum(a == c for a in t)}
    if metric != "f1":
        return tp / den[metric] if den[metric] else None
    pr, rc = _recount(t, p, c, "precision"), _recount(t, p, c, "recall")
    return None if pr is None or rc is None or pr + rc == 0 else 2 * pr * rc / (pr + rc)


def test_5_metrics():
    with criterion(5, "brute-force recount, MCE identity, reconstructed MCE") as notes:
        fns = {"precision": averaged_precision, "recall": averaged_recall, "f1": averaged_f1}
        for seed in range(100):
            r = np.random.default_rng(seed)
            t = (r.random(10_000) < r.uniform(0.01, 0.99)).astype(int).tolist()
            p = (r.random(10_000) < r.uniform(0.01, 0.99)).astype(int).tolist()
            sup = {c: t.count(c) for c in (0, 1)}
            for metric, fn in fns.items():
                per = {c: _recount(t, p, c, metric) for c in (0, 1)}
                want = {"pos": per[1], "neg": per[0],
                        "macro": (per[0] + per[1]) / 2,
                        "weighted": (sup[0] * per[0] + sup[1] * per[1]) / len(t)}
                for mode in MODES:
                    assert math.isclose(fn(t, p, mode), want[mode], abs_tol=1e-12)
        notes.append("100 label sets of n=1e4 agree")

        cm = ConfusionMatrix(tp=662, fp=0, fn=54, tn=0)
        assert mce(cm) == pytest.approx(1 - recall(cm), abs=1e-15)
        notes.append(f"MCE(662/54)={mce(cm):.4f}")
        assert abs(mce(cm) - 0.0754) <= 1e-4


# -- 6 ---------------------------------------------------------------------------

def test_6_grid():
    with criterion(6, "full grid size and learning-rate axis") as notes:
        n = len(build_grid(GridSpec.full()))
        rates = logspace(-3, 0, 20)
        notes.append(f"{n} points; rates[0]={rates[0]!r}, rates[-1]={rates[-1]!r}, "
                     f"rates[4]={rates[4]:.6f}")
        assert n == 560
        assert rates[0] == 0.001 and rates[-1] == 1.0
        assert abs(rates[4] - 0.004281) < 5e-7


# -- 7 and 8 --------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark_runs():
    ds = synth_dataset(SynthSpec())
    runs = []
    for _ in range(2):
        t0 = time.perf_counter()
        result = compare(default_compare_config(seed=1), ds)
        runs.append((result, time.perf_counter() - t0))
    return runs


def test_7_end_to_end_ordering(benchmark_runs):
    result, elapsed = benchmark_runs[0]
    with criterion(7, "MCE(PT_RBM) <= MCE(PT) <= MCE(k-means) on the benchmark, full compare",
                   300.0, prior_s=elapsed) as notes:
        m = {r["model"]: r["mce"] for r in result["rows"]}
        notes.append(", ".join(f"{k}={v:.4f}" for k, v in m.items()))
        assert m["PT_RBM_k-means"] <= m["PT_k-means"] <= m["k-means"]


def test_8_reproducibility(benchmark_runs):
    (a, _), (b, _) = benchmark_runs
    with criterion(8, "identical compare output for identical seeds") as notes:
        assert comparison_csv(a) == comparison_csv(b)
        assert dumps_report(strip_timing(a)) == dumps_report(strip_timing(b))
        notes.append("CSV and JSON (timing removed) byte-identical")
