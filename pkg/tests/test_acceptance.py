"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines.
"""

import time

import numpy as np
import pytest

from fgtt import autodiff as ad
from fgtt.autodiff import Tensor
from fgtt.data import Dataset, column_layout, impute_group_mean, stratified_split
from fgtt.hpo import (BRANIN_MIN, CONTINUOUS, Dim, SearchSpace, branin_space, negative_branin, optimize,
                      random_search)
from fgtt.metrics import compute_metrics, metrics_from_confusion
from fgtt.model import FGTTConfig, FGTTModel, partition_columns
from fgtt.pipeline import run_benchmark
from fgtt.reporting import emit_heatmap
from fgtt.schema import default_schema
from fgtt.synthetic import GeneratorConfig
from fgtt.training import FocalLossParams, focal_loss
from fgtt.trees import ForestConfig, train_random_forest

from oracles import brute_group_mean, brute_metrics, walk_tree

# FGTT row of the published comparison table
PUB_PRECISION = (0.867, 0.733, 0.645)
PUB_RECALL = (0.921, 0.772, 0.392)
PUB_F1 = (0.893, 0.752, 0.488)
PUB_WEIGHTED_F1 = 0.799

# [DERIVED] integer confusion on 392 test rows (227/114/51) whose recalls are
# the published ones; off-diagonals solved so precisions land on the row too.
C1_CONFUSION = np.array([[209, 13, 5], [20, 88, 6], [12, 19, 20]])

CLASS_MIX = (0.58, 0.29, 0.13)


def verdict(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    return ok


@pytest.fixture(scope="module")
def benchmark():
    start = time.perf_counter()
    result = run_benchmark(GeneratorConfig(n_rows=10_000, seed=0))
    return result, time.perf_counter() - start


def split_artifact(seed=0):
    labels = np.repeat([0, 1, 2], [3950, 1975, 885])
    split = stratified_split(labels, (0.885, 0.0575, 0.0575), seed)
    return split, labels


def hpo_artifacts(seeds=range(10)):
    space = SearchSpace((Dim("learning_rate", CONTINUOUS, 0.001, 0.1, log=True),))
    one_d = [optimize(lambda p: -(p["learning_rate"] - 0.017) ** 2, space, 30, seed=s) for s in seeds]
    paired = [(optimize(negative_branin, branin_space(), 40, seed=s),
               random_search(negative_branin, branin_space(), 40, seed=s)) for s in seeds]
    return one_d, paired


class TestCriterion1MetricArithmetic:
    def test_published_row(self):
        start = time.perf_counter()
        m = metrics_from_confusion(C1_CONFUSION)
        elapsed = time.perf_counter() - start
        support = C1_CONFUSION.sum(axis=1) / C1_CONFUSION.sum()
        ok = (np.allclose(m.precision, PUB_PRECISION, atol=0.005)
              and np.allclose(m.recall, PUB_RECALL, atol=0.005)
              and np.allclose(m.f1, PUB_F1, atol=0.005)
              and abs(m.weighted_f1 - PUB_WEIGHTED_F1) <= 0.002
              and np.allclose(support, CLASS_MIX, atol=0.005)
              and elapsed < 1.0)
        assert verdict(1, ok, f"P={np.round(m.precision, 3)} R={np.round(m.recall, 3)} "
                              f"F1={np.round(m.f1, 3)} wF1={m.weighted_f1:.4f} ({elapsed:.3f}s)")

    def test_label_vector_route_agrees(self):
        actual = np.repeat(np.arange(3), C1_CONFUSION.sum(axis=1))
        predicted = np.concatenate([np.repeat(np.arange(3), row) for row in C1_CONFUSION])
        m = compute_metrics(predicted, actual)
        assert (m.confusion == C1_CONFUSION).all()


class TestCriterion2Split:
    def test_sizes_and_mix(self):
        start = time.perf_counter()
        split, labels = split_artifact()
        elapsed = time.perf_counter() - start
        sizes = [len(split.train), len(split.validation), len(split.test)]
        worst = 0.0
        for part, ratio in zip((split.train, split.validation, split.test), (0.885, 0.0575, 0.0575)):
            counts = np.bincount(labels[part], minlength=3)
            expected = np.bincount(labels, minlength=3) * ratio
            worst = max(worst, float(np.abs(counts - expected).max()))
        disjoint = len(np.unique(np.concatenate([split.train, split.validation, split.test]))) == 6810
        ok = sizes == [6026, 392, 392] and worst <= 1.0 and disjoint and elapsed < 1.0
        assert verdict(2, ok, f"sizes {sizes}, max per-class deviation {worst:.3f} ({elapsed:.3f}s)")


def _op_cases(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 5))
    w3 = rng.standard_normal((2, 4, 3))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    gamma = Tensor(rng.standard_normal(4))
    beta = Tensor(rng.standard_normal(4))
    shifted = a + np.where(np.abs(a) < 0.05, 0.2, 0.0)  # keep relu kinks out of the stencil
    mask_rng = lambda: np.random.default_rng(7)  # noqa: E731
    return {
        "add": (lambda x: ad.add(x, Tensor(b)), a),
        "add_broadcast": (lambda x: ad.add(Tensor(b), x), a[0]),
        "neg": (ad.neg, a),
        "mul": (lambda x: ad.mul(x, Tensor(b)), a),
        "mul_self": (lambda x: ad.mul(x, x), a),
        "scale": (lambda x: ad.scale(x, -1.7), a),
        "matmul": (lambda x: ad.matmul(x, Tensor(w)), a),
        "matmul_right": (lambda x: ad.matmul(Tensor(a), x), w),
        "matmul_batched": (lambda x: ad.matmul(x, Tensor(w3)),
                           rng.standard_normal((2, 3, 4))),
        "relu": (ad.relu, shifted),
        "exp": (ad.exp, a),
        "log": (ad.log, pos),
        "power": (lambda x: ad.power(x, 2.5), pos),
        "clamp_min": (lambda x: ad.clamp_min(x, 0.0), shifted),
        "softmax": (lambda x: ad.softmax(x, axis=-1), a),
        "softmax_axis0": (lambda x: ad.softmax(x, axis=0), a),
        "softmax_rows": (ad.softmax_rows, a),
        "layer_norm": (lambda x: ad.layer_norm(x, gamma, beta, 1e-5), a),
        "dropout": (lambda x: ad.dropout(x, 0.3, True, mask_rng()), a),
        "sum": (lambda x: ad.tsum(x, axis=1), a),
        "sum_all": (ad.tsum, a),
        "mean": (lambda x: ad.mean(x, axis=0, keepdims=True), a),
        "reshape": (lambda x: ad.mul(ad.reshape(x, (4, 3)), Tensor(b.reshape(4, 3))), a),
        "transpose": (lambda x: ad.matmul(ad.transpose(x), Tensor(b)), a),
        "take": (lambda x: ad.take(x, (slice(None), [0, 2, 2])), a),
        "concat": (lambda x: ad.concat([x, ad.exp(x)], axis=1), a),
        "stack": (lambda x: ad.stack([x, ad.mul(x, x)], axis=0), a),
    }


class TestCriterion3Gradients:
    def test_ops_and_composite(self):
        start = time.perf_counter()
        rng = np.random.default_rng(0)
        op_errors = {name: ad.finite_diff_check(f, x) for name, (f, x) in _op_cases(rng).items()}

        schema = default_schema()
        cols = column_layout(schema)
        model = FGTTModel(FGTTConfig(seed=0), partition_columns(cols, schema))
        x = rng.standard_normal((4, len(cols)))
        y = np.array([0, 1, 2, 0])
        loss = FocalLossParams(2.0, (1.0, 1.5, 2.0))

        # eval mode: dropout masks would otherwise change between stencil points
        def loss_fn():
            return focal_loss(model.forward(x)[0], y, loss)

        # training mode with the dropout masks pinned by a fresh seeded generator per call
        def loss_fn_dropout():
            return focal_loss(model.forward(x, training=True, rng=np.random.default_rng(3))[0], y, loss)

        comp = ad.gradient_check(loss_fn, model.params, max_coords=4, seed=0)
        comp.update({f"{k} (dropout)": v for k, v in
                     ad.gradient_check(loss_fn_dropout, model.params, max_coords=2, seed=1).items()})
        # the input path too, through every projector
        inp = ad.finite_diff_check(lambda t: model.forward(t)[0], x)
        elapsed = time.perf_counter() - start
        worst_op = max(op_errors, key=op_errors.get)
        worst_comp = max(max(comp.values()), inp)
        ok = op_errors[worst_op] < 1e-4 and worst_comp < 1e-3 and elapsed < 30
        assert verdict(3, ok, f"{len(op_errors)} ops, worst {worst_op} {op_errors[worst_op]:.2e}; "
                              f"composite over {len(comp)} tensor checks + input {worst_comp:.2e} ({elapsed:.1f}s)")


class TestCriterion4Attention:
    def test_rows_and_permutation(self):
        start = time.perf_counter()
        rng = np.random.default_rng(4)
        schema = default_schema()
        cols = column_layout(schema)
        model = FGTTModel(FGTTConfig(seed=1), partition_columns(cols, schema))
        x = rng.standard_normal((100, len(cols)))
        probs, record = model.predict_proba(x)
        row_err = float(np.abs(record.last_layer.sum(axis=-1) - 1).max())
        # every layer, not just the last
        with ad.no_grad():
            tokens = model.project_tokens(x)
            layer_err = 0.0
            for layer in range(model.config.n_layers):
                tokens, w = model.encoder_layer(tokens, layer, False, None)
                layer_err = max(layer_err, float(np.abs(w.data.sum(axis=-1) - 1).max()))
            perm_err = 0.0
            for _ in range(5):
                order = rng.permutation(len(model.partition.names))
                permuted = model.forward(x, token_order=order)[0].data
                perm_err = max(perm_err, float(np.abs(permuted - probs).max()))
        elapsed = time.perf_counter() - start
        ok = max(row_err, layer_err) <= 1e-6 and perm_err <= 1e-9 and elapsed < 10
        assert verdict(4, ok, f"row-sum error {max(row_err, layer_err):.1e}, "
                              f"permutation error {perm_err:.1e} ({elapsed:.2f}s)")


class TestCriterion5Loss:
    def test_identities(self):
        start = time.perf_counter()
        rng = np.random.default_rng(5)
        plain = FocalLossParams(0.0, (1.0, 1.0, 1.0))
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 33))
            logits = rng.standard_normal((n, 3)) * 3
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            y = rng.integers(0, 3, n)
            ce = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-12)))
            worst = max(worst, abs(focal_loss(Tensor(p), y, plain).item() - ce))
        onehot = np.eye(3)[[0, 1, 2, 1]]
        zero = max(focal_loss(Tensor(onehot), [0, 1, 2, 1], FocalLossParams(g, (0.5, 1.0, 3.0))).item()
                   for g in (0.0, 0.5, 2.0, 5.0))
        elapsed = time.perf_counter() - start
        ok = worst <= 1e-12 and zero == 0.0 and elapsed < 5
        assert verdict(5, ok, f"max |focal - CE| {worst:.1e}, loss at p_true=1 {zero} ({elapsed:.2f}s)")


class TestCriterion6Benchmark:
    @pytest.mark.slow
    def test_models_beat_majority(self, benchmark):
        result, elapsed = benchmark
        majority = result.majority_rate
        acc = {name: m.accuracy for name, m in result.metrics.items()}
        gap = result.ceiling["weighted_f1"] - result.metrics["fgtt"].weighted_f1
        ok = (all(a >= 0.58 + 0.10 for a in acc.values()) and abs(gap) <= 0.10 and elapsed < 600)
        shown = ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
        assert verdict(6, ok, f"accuracy {shown} (test majority {majority:.3f}); FGTT wF1 "
                              f"{result.metrics['fgtt'].weighted_f1:.3f} vs Bayes ceiling "
                              f"{result.ceiling['weighted_f1']:.3f} ({elapsed:.0f}s)")


class TestCriterion7Interpretability:
    @pytest.mark.slow
    def test_signal_groups_attended(self, benchmark):
        result, _ = benchmark
        names = list(result.model.partition.names)
        carriers = [names.index("Event"), names.index("Traffic")]
        rest = [i for i in range(len(names)) if i not in carriers]
        lines, ok = [], True
        for c, agg in sorted(result.attention.items()):
            s = np.asarray(agg["cls_scores"])
            joint, others = s[carriers].sum(), s[rest].mean()
            ok &= bool(joint > others)
            lines.append(f"class {c}: E+T {joint:.3f} vs mean(rest) {others:.3f}")
        assert verdict(7, ok, "; ".join(lines))
        # stricter reading, reported only: mean of the two carriers vs mean of the rest
        for c, agg in sorted(result.attention.items()):
            s = np.asarray(agg["cls_scores"])
            print(f"  diagnostic class {c}: mean(E,T) {s[carriers].mean():.3f} vs mean(rest) {s[rest].mean():.3f}")


class TestCriterion8Oracles:
    def test_equivalences(self):
        start = time.perf_counter()
        rng = np.random.default_rng(8)
        metric_ok = True
        for _ in range(200):
            n = int(rng.integers(1, 80))
            pred, act = rng.integers(0, 3, n), rng.integers(0, 3, n)
            m = compute_metrics(pred, act)
            ref = brute_metrics(pred, act, 3)
            metric_ok &= all(np.allclose(getattr(m, k), v, atol=1e-12) for k, v in ref.items())

        schema = default_schema()
        data = _imputation_fixture(schema, rng)
        got = impute_group_mean(data, "Hourly_avg_speed", ("Num_lanes", "Day_of_week"))
        want = brute_group_mean(data.frame, "Hourly_avg_speed", ("Num_lanes", "Day_of_week"))
        impute_ok = np.allclose(got.frame["Hourly_avg_speed"].to_numpy(dtype=float), want, atol=1e-12)

        X = rng.standard_normal((300, 6))
        y = (X[:, 0] + X[:, 1] * X[:, 2] > 0).astype(int) + (X[:, 3] > 1)
        forest = train_random_forest(X, y, ForestConfig(n_estimators=1, seed=3), n_classes=3)
        Xt = rng.standard_normal((200, 6))
        tree_ok = (forest.predict(Xt) == walk_tree(forest.trees[0], Xt)).all()
        elapsed = time.perf_counter() - start
        ok = metric_ok and impute_ok and bool(tree_ok) and elapsed < 10
        assert verdict(8, ok, f"metrics {metric_ok}, imputation {impute_ok}, 1-tree forest {bool(tree_ok)} "
                              f"({elapsed:.2f}s)")


def _imputation_fixture(schema, rng, n=50):
    from fgtt.synthetic import generate

    data = generate(GeneratorConfig(n_rows=n, seed=11, missing_rate=0.0), schema)
    frame = data.frame.copy()
    holes = rng.choice(n, size=15, replace=False)
    frame.loc[holes, "Hourly_avg_speed"] = np.nan
    return Dataset(schema, frame, data.labels)


class TestCriterion9HPO:
    def test_convergence(self):
        start = time.perf_counter()
        one_d, paired = hpo_artifacts()
        hits = sum(abs(r.best.point["learning_rate"] - 0.017) <= 0.005 for r in one_d)
        wins = sum((-gp.best.objective - BRANIN_MIN) < (-rs.best.objective - BRANIN_MIN) for gp, rs in paired)
        elapsed = time.perf_counter() - start
        ok = hits >= 9 and wins >= 8 and elapsed < 120
        assert verdict(9, ok, f"1-D recovered in {hits}/10 seeds; beats random search on the 2-D function "
                              f"in {wins}/10 paired seeds ({elapsed:.1f}s)")


class TestCriterion10Determinism:
    @pytest.mark.slow
    def test_repeat_runs(self, benchmark, tmp_path):
        first, _ = benchmark
        split_a, _ = split_artifact()
        split_b, _ = split_artifact()
        split_ok = all((getattr(split_a, k) == getattr(split_b, k)).all() for k in ("train", "validation", "test"))
        split_a.save(tmp_path / "a.csv")
        split_b.save(tmp_path / "b.csv")
        split_ok &= (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

        second = run_benchmark(GeneratorConfig(n_rows=10_000, seed=0))
        art_a, art_b = first.artifacts(), second.artifacts()
        bench_ok = art_a == art_b
        groups = list(first.model.partition.names)
        files_a = emit_heatmap(first.attention, groups, tmp_path / "run_a")
        files_b = emit_heatmap(second.attention, groups, tmp_path / "run_b")
        render_ok = all(a.read_bytes() == b.read_bytes() for a, b in zip(files_a, files_b))

        texts = [("\n".join(r.to_text() for r in one_d) + "\n".join(g.to_text() + s.to_text() for g, s in pairs))
                 for one_d, pairs in (hpo_artifacts(), hpo_artifacts())]
        hpo_ok = texts[0] == texts[1]
        ok = split_ok and bench_ok and render_ok and hpo_ok
        assert verdict(10, ok, f"split {split_ok}, benchmark {len(art_a)} text artifacts {bench_ok}, "
                               f"{len(files_a)} heatmap files {render_ok}, HPO histories {hpo_ok}")
