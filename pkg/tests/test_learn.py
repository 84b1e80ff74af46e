import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microexp.learn import (ClassDistribution, FusionConfig, fuse,
                            fusion_sweep, kfold_eval, loso_eval, loso_split,
                            metrics, predict_proba, read_probabilities_csv,
                            stratified_kfold_indices, train,
                            write_probabilities_csv)


def _blobs(n_per=20, d=5, sep=6.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_per, d)) + sep / 2
    b = rng.standard_normal((n_per, d)) - sep / 2
    x = np.vstack([a, b])
    y = ["pos"] * n_per + ["neg"] * n_per
    return x, y


class TestClassDistribution:
    def test_valid_simplex(self):
        d = ClassDistribution(("a", "b"), np.array([0.3, 0.7]))
        assert d.argmax_label == "b"

    def test_sum_enforced(self):
        with pytest.raises(ValueError):
            ClassDistribution(("a", "b"), np.array([0.3, 0.6]))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ClassDistribution(("a", "b"), np.array([-0.1, 1.1]))


class TestTrainPredict:
    def test_separable_blobs_high_train_accuracy(self):
        x, y = _blobs()
        model = train(x, y, seed=0)
        preds = [predict_proba(model, row).argmax_label for row in x]
        acc = np.mean([p == t for p, t in zip(preds, y)])
        assert acc >= 0.95

    def test_duplicated_training_set_same_predictions(self):
        # the mean-loss objective is unchanged by duplicating every point, so
        # the fit agrees up to optimizer round-off and predictions match
        x, y = _blobs(n_per=15)
        m1 = train(x, y, seed=3)
        m2 = train(np.vstack([x, x]), y + y, seed=3)
        p1 = m1.predict_proba_matrix(x)
        p2 = m2.predict_proba_matrix(x)
        assert np.array_equal(np.argmax(p1, axis=1), np.argmax(p2, axis=1))
        assert np.allclose(p1, p2, atol=1e-6)

    def test_single_class_rejected(self):
        x = np.zeros((5, 3))
        with pytest.raises(ValueError, match="classes"):
            train(x, ["same"] * 5, seed=0)

    def test_inconsistent_lengths_rejected(self):
        with pytest.raises(ValueError, match="length"):
            train([np.zeros(3), np.zeros(4)], ["a", "b"], seed=0)

    def test_predict_sums_to_one(self):
        x, y = _blobs(n_per=10)
        model = train(x, y, seed=1)
        d = predict_proba(model, x[0])
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_deep_inside_blob_confident(self):
        x, y = _blobs(sep=8.0)
        model = train(x, y, seed=0)
        deep = np.full(5, 4.0)
        d = predict_proba(model, deep)
        assert d.probs[d.labels.index("pos")] >= 0.9

    def test_zero_vector_total(self):
        x, y = _blobs(n_per=10)
        model = train(x, y, seed=0)
        d = predict_proba(model, np.zeros(5))
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_feature_length_mismatch(self):
        x, y = _blobs(n_per=10)
        model = train(x, y, seed=0)
        with pytest.raises(ValueError, match="length"):
            predict_proba(model, np.zeros(7))

    def test_deterministic_given_seed(self):
        x, y = _blobs(n_per=12, seed=4)
        p1 = train(x, y, seed=9).predict_proba_matrix(x)
        p2 = train(x, y, seed=9).predict_proba_matrix(x)
        assert np.array_equal(p1, p2)


class TestFuse:
    def test_endpoints_exact(self):
        p1 = ClassDistribution(("a", "b"), np.array([0.6, 0.4]))
        p2 = ClassDistribution(("a", "b"), np.array([0.2, 0.8]))
        assert np.array_equal(fuse(p1, p2, 0.0).probs, p1.probs)
        assert np.array_equal(fuse(p1, p2, 1.0).probs, p2.probs)

    def test_mixture_value(self):
        p1 = ClassDistribution(("c1", "c2"), np.array([0.6, 0.4]))
        p2 = ClassDistribution(("c1", "c2"), np.array([0.2, 0.8]))
        fused = fuse(p1, p2, 0.4)
        assert np.allclose(fused.probs, [0.44, 0.56])
        assert fused.argmax_label == "c2"

    def test_label_mismatch_rejected(self):
        p1 = ClassDistribution(("a", "b"), np.array([0.5, 0.5]))
        p2 = ClassDistribution(("a", "c"), np.array([0.5, 0.5]))
        with pytest.raises(ValueError, match="label"):
            fuse(p1, p2, 0.5)

    def test_label_reordering_handled(self):
        p1 = ClassDistribution(("a", "b"), np.array([0.7, 0.3]))
        p2 = ClassDistribution(("b", "a"), np.array([0.9, 0.1]))
        fused = fuse(p1, p2, 0.5)
        assert np.allclose(fused.probs, [0.4, 0.6])

    def test_weight_out_of_range(self):
        p = ClassDistribution(("a", "b"), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            fuse(p, p, 1.5)
        with pytest.raises(ValueError):
            FusionConfig(a=-0.2)

    @given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=5),
           st.lists(st.floats(0.001, 1.0), min_size=2, max_size=5),
           st.sampled_from([0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0]))
    @settings(max_examples=100)
    def test_simplex_preserved(self, raw1, raw2, a):
        n = min(len(raw1), len(raw2))
        labels = tuple(f"c{i}" for i in range(n))
        v1 = np.array(raw1[:n]) / np.sum(raw1[:n])
        v2 = np.array(raw2[:n]) / np.sum(raw2[:n])
        fused = fuse(ClassDistribution(labels, v1), ClassDistribution(labels, v2), a)
        assert abs(fused.probs.sum() - 1.0) <= 1e-9
        assert np.all(fused.probs >= -1e-12)


class TestMetrics:
    def test_all_correct(self):
        r = metrics(["a", "b"], ["a", "b"])
        assert r.accuracy == 1.0 and r.f1 == 1.0

    def test_all_wrong_two_class(self):
        r = metrics(["b", "a"], ["a", "b"])
        assert r.accuracy == 0.0 and r.f1 == 0.0

    def test_hand_computed_example(self):
        r = metrics(["A", "B", "B", "B"], ["A", "A", "B", "B"])
        assert r.accuracy == pytest.approx(0.75)
        assert r.f1 == pytest.approx(0.7333, abs=1e-4)

    def test_confusion_consistency(self):
        truths = ["a", "a", "b", "c", "c", "c"]
        preds = ["a", "b", "b", "c", "a", "c"]
        r = metrics(preds, truths)
        assert np.trace(r.confusion) / len(truths) == r.accuracy
        for i, c in enumerate(r.classes):
            assert r.confusion[i].sum() == truths.count(c)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            metrics(["a"], ["a", "b"])


class TestLoso:
    def test_grouping_example(self):
        folds = loso_split(["A", "A", "B"])
        assert len(folds) == 2
        assert folds[0] == ([2], [0, 1])  # fold A: test = A's samples
        assert folds[1] == ([0, 1], [2])

    def test_subject_disjointness_and_partition(self):
        subjects = ["s1", "s2", "s1", "s3", "s2", "s3", "s3"]
        folds = loso_split(subjects)
        seen = []
        for train_idx, test_idx in folds:
            train_subjects = {subjects[i] for i in train_idx}
            test_subjects = {subjects[i] for i in test_idx}
            assert not train_subjects & test_subjects
            seen.extend(test_idx)
        assert sorted(seen) == list(range(len(subjects)))

    def test_single_subject_rejected(self):
        with pytest.raises(ValueError):
            loso_split(["only", "only"])

    def test_loso_eval_runs(self):
        x, y = _blobs(n_per=12, seed=2)
        subjects = [f"s{i % 4}" for i in range(len(y))]
        result = loso_eval(x, y, subjects, seed=0)
        assert len(result.per_fold) == 4
        assert 0.0 <= result.accuracy <= 1.0


class _PerfectModel:
    def __init__(self, features, labels):
        self.classes = tuple(sorted(set(labels)))
        self._known = {tuple(np.asarray(f).ravel()): l for f, l in zip(features, labels)}

    @property
    def n_features(self):
        return len(next(iter(self._known)))

    def predict_proba_matrix(self, x):
        out = np.zeros((x.shape[0], len(self.classes)))
        for i, row in enumerate(x):
            label = self._known.get(tuple(row))
            if label is None:
                out[i] = 1.0 / len(self.classes)
            else:
                out[i, self.classes.index(label)] = 1.0
        return out


def _perfect_train_fn(all_features, all_labels):
    lookup = _PerfectModel(all_features, all_labels)

    def fn(features, labels, seed=0):
        return lookup

    return fn


class TestKfold:
    def test_same_seed_bit_reproducible(self):
        x, y = _blobs(n_per=15, seed=6)
        r1 = kfold_eval(x, y, k=5, repeats=3, seed=11)
        r2 = kfold_eval(x, y, k=5, repeats=3, seed=11)
        assert r1.accuracy == r2.accuracy
        assert r1.f1 == r2.f1
        assert r1.per_fold == r2.per_fold
        assert np.array_equal(r1.confusion, r2.confusion)

    def test_fold_sizes_balanced(self):
        labels = ["a"] * 13 + ["b"] * 9
        rng = np.random.default_rng(0)
        folds = stratified_kfold_indices(labels, 5, rng)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        assert sorted(i for f in folds for i in f) == list(range(22))

    def test_perfect_stub_scores_one(self):
        x, y = _blobs(n_per=10, seed=1)
        result = kfold_eval(x, y, k=4, repeats=2, seed=0,
                            train_fn=_perfect_train_fn(x, y))
        assert result.accuracy == 1.0

    def test_k_exceeds_samples_rejected(self):
        x, y = _blobs(n_per=2)
        with pytest.raises(ValueError):
            kfold_eval(x, y, k=10, repeats=1, seed=0)


class TestFusionSweep:
    def test_identical_streams_tie_returns_smallest(self):
        p = [ClassDistribution(("a", "b"), np.array([0.7, 0.3])) for _ in range(4)]
        best_a, result = fusion_sweep(p, p, ["a"] * 4)
        assert best_a == 0.1
        assert result.accuracy == 1.0

    def test_perfect_second_stream_needs_half(self):
        # p1 puts 0.9 on the wrong class; the fused argmax flips only for
        # a/(1-a) > 0.8, i.e. a > 4/9, so 0.5 is the only winning grid point.
        p1 = [ClassDistribution(("a", "b"), np.array([0.1, 0.9])) for _ in range(6)]
        p2 = [ClassDistribution(("a", "b"), np.array([1.0, 0.0])) for _ in range(6)]
        best_a, result = fusion_sweep(p1, p2, ["a"] * 6)
        assert best_a == 0.5
        assert result.accuracy == 1.0

    def test_best_equals_max_over_grid(self):
        rng = np.random.default_rng(3)
        labels = ("a", "b", "c")
        truths = [labels[i % 3] for i in range(12)]
        def rand_dist():
            v = rng.uniform(0.05, 1.0, 3)
            return ClassDistribution(labels, v / v.sum())
        p1 = [rand_dist() for _ in truths]
        p2 = [rand_dist() for _ in truths]
        best_a, result = fusion_sweep(p1, p2, truths)
        per_a = []
        for a in (0.1, 0.2, 0.3, 0.4, 0.5):
            fused = [fuse(x, y, a) for x, y in zip(p1, p2)]
            per_a.append(metrics([f.argmax_label for f in fused], truths).accuracy)
        assert result.accuracy == max(per_a)

    def test_misaligned_inputs_rejected(self):
        p = [ClassDistribution(("a", "b"), np.array([0.5, 0.5]))]
        with pytest.raises(ValueError):
            fusion_sweep(p, p + p, ["a"])


class TestExternalProbabilities:
    def test_round_trip_exact(self, tmp_path, rng):
        labels = ("neg", "pos")
        ids = [f"s{i}" for i in range(5)]
        dists = []
        for _ in ids:
            v = rng.uniform(0.01, 1.0, 2)
            dists.append(ClassDistribution(labels, v / v.sum()))
        path = tmp_path / "proba.csv"
        write_probabilities_csv(path, ids, dists)
        back = read_probabilities_csv(path, labels)
        assert set(back) == set(ids)
        for sid, d in zip(ids, dists):
            assert np.array_equal(back[sid].probs, d.probs)

    def test_header_format(self, tmp_path):
        labels = ("a", "b", "c")
        path = tmp_path / "proba.csv"
        write_probabilities_csv(path, ["x"], [ClassDistribution(labels, np.ones(3) / 3)])
        assert path.read_text().splitlines()[0] == "sample_id,p_class0,p_class1,p_class2"

    def test_external_probabilities_feed_fusion(self, tmp_path):
        # the out-of-band route: probabilities from files, fused and scored
        labels = ("a", "b")
        truths = ["a", "b", "a"]
        ids = ["s0", "s1", "s2"]
        p_2d = [ClassDistribution(labels, np.array([0.4, 0.6])),
                ClassDistribution(labels, np.array([0.5, 0.5])),
                ClassDistribution(labels, np.array([0.45, 0.55]))]
        p_3d = [ClassDistribution(labels, np.array([0.95, 0.05])),
                ClassDistribution(labels, np.array([0.1, 0.9])),
                ClassDistribution(labels, np.array([0.9, 0.1]))]
        f1, f2 = tmp_path / "p2d.csv", tmp_path / "p3d.csv"
        write_probabilities_csv(f1, ids, p_2d)
        write_probabilities_csv(f2, ids, p_3d)
        r1 = read_probabilities_csv(f1, labels)
        r2 = read_probabilities_csv(f2, labels)
        best_a, result = fusion_sweep([r1[i] for i in ids], [r2[i] for i in ids], truths)
        assert result.accuracy == 1.0

    def test_column_count_checked(self, tmp_path):
        path = tmp_path / "proba.csv"
        write_probabilities_csv(path, ["x"], [ClassDistribution(("a", "b"),
                                                                np.array([0.5, 0.5]))])
        with pytest.raises(ValueError, match="columns"):
            read_probabilities_csv(path, ("a", "b", "c"))
