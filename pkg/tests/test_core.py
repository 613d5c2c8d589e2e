import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ondpp.core import (
    DetCounter,
    InvalidModelError,
    NdppModel,
    ShapeError,
    SingularCError,
    block_skew,
    det_columns,
    f_det,
    f_det_batch,
    load_model,
    logdet_normalizer,
    logdet_normalizer_factored,
    random_model,
    save_model,
    validate_model,
)

from conftest import explicit_logdet_normalizer, explicit_minor, make_model, rel_err


def skew(rng, d):
    A = rng.normal(size=(d, d))
    return A - A.T


class TestFDet:
    def test_singleton_is_squared_norm(self, rng):
        V = np.array([[1.0], [2.0]])
        B = rng.normal(size=(2, 1))
        model = NdppModel(V, B, skew(rng, 2))
        assert f_det(model, [0]) == pytest.approx(5.0, abs=1e-12)

    def test_rank_one_gram_is_zero(self):
        model = NdppModel([[1.0, 1.0]], [[1.0, -1.0]], [[0.0]])
        assert f_det(model, [0, 1]) == 0.0

    def test_nonsymmetric_p0_example(self):
        # V^T V = I and B^T C B = C gives L = [[1, 1], [-1, 1]].
        C = np.array([[0.0, 1.0], [-1.0, 0.0]])
        model = NdppModel(np.eye(2), np.eye(2), C)
        assert f_det(model, [0, 1]) == pytest.approx(2.0, rel=1e-14)

    def test_empty_set_is_one(self):
        model = make_model(3, 2, 0)
        assert f_det(model, []) == 1.0

    def test_counter_increments_once_per_call(self):
        model = make_model(5, 2, 1)
        counter = DetCounter()
        for S in ([0], [1, 2], [0, 3, 4], []):
            f_det(model, S, counter)
        assert counter.evaluations == 4

    def test_matches_explicit_kernel(self):
        model = make_model(8, 4, 2)
        for S in ([0, 1], [2, 5, 7], [0, 1, 2, 3]):
            assert f_det(model, S) == pytest.approx(explicit_minor(model, S), rel=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            det_columns(np.ones((2, 2)), np.ones((3, 2)), np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            det_columns(np.ones((2, 2)), np.ones((2, 2)), np.zeros((3, 3)))

    def test_invalid_index(self):
        with pytest.raises(IndexError):
            f_det(make_model(3, 2, 0), [0, 3])

    def test_batch_agrees(self):
        model = make_model(9, 4, 3)
        subsets = np.array([[0, 1, 2], [3, 5, 8], [1, 4, 6]])
        counter = DetCounter()
        vals = f_det_batch(model, subsets, counter)
        assert counter.evaluations == 3
        for S, v in zip(subsets, vals):
            assert v == pytest.approx(f_det(model, S), rel=1e-10)


class TestKernelProperties:
    @settings(max_examples=200, deadline=None)
    @given(
        b=arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
        a=arrays(np.float64, (6, 6), elements=st.floats(-1e3, 1e3)),
    )
    def test_skew_annihilation(self, b, a):
        C = a - a.T
        bound = 1e-12 * float(b @ b) * max(float(np.max(np.abs(C))), 1e-300)
        assert abs(float(b @ C @ b)) <= max(bound, 1e-300)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([2, 4, 6]))
    def test_nonnegative_minors(self, seed, d):
        rng = np.random.default_rng(seed)
        n = d + 2
        model = random_model(n, d, rng, scale=rng.uniform(0.1, 3.0))
        k = int(rng.integers(1, d + 1))
        S = sorted(rng.choice(n, size=k, replace=False).tolist())
        scale = 1.0 + float(np.prod(np.linalg.norm(model.V[:, S], axis=0) ** 2
                                    + np.linalg.norm(model.B[:, S], axis=0) ** 2))
        assert f_det(model, S) >= -1e-8 * scale


class TestNormalizer:
    def test_zero_embeddings(self):
        model = NdppModel(np.zeros((2, 4)), np.zeros((2, 4)), [[0, 1.0], [-1.0, 0]])
        assert logdet_normalizer(model) == pytest.approx(0.0, abs=1e-15)

    def test_matches_explicit_n_by_n(self):
        model = make_model(3, 2, 7)
        expected = explicit_logdet_normalizer(model.V, model.B, model.C)
        assert logdet_normalizer(model) == pytest.approx(expected, abs=1e-8)

    def test_single_item(self):
        model = NdppModel([[1.0], [0.0]], np.zeros((2, 1)), [[0, 0.7], [-0.7, 0]])
        assert logdet_normalizer(model) == pytest.approx(math.log(2.0), abs=1e-14)

    def test_singular_c(self):
        model = NdppModel(np.ones((2, 3)), np.ones((2, 3)), np.zeros((2, 2)))
        with pytest.raises(SingularCError):
            logdet_normalizer(model)
        with pytest.raises(SingularCError):
            logdet_normalizer_factored(np.ones((3, 2)), np.ones((3, 2)), skew(np.random.default_rng(0), 3))


class TestFactoredNormalizer:
    def test_c_terms_cancel_without_b(self, rng):
        V = rng.normal(size=(4, 3))
        expected = np.linalg.slogdet(np.eye(4) + V @ V.T)[1]
        got = logdet_normalizer_factored(V, np.zeros((4, 3)), block_skew(4, rng))
        assert got == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("d,s", [(2, 3), (4, 2)])
    def test_random_instance(self, rng, d, s):
        V, B, C = rng.normal(size=(d, s)), rng.normal(size=(d, s)), block_skew(d, rng)
        assert logdet_normalizer_factored(V, B, C) == pytest.approx(
            explicit_logdet_normalizer(V, B, C), abs=1e-8)

    def test_identity_on_many_instances(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            d = int(rng.choice([2, 4, 6]))
            s = int(rng.integers(1, 9))
            V, B = rng.normal(size=(d, s)), rng.normal(size=(d, s))
            C = skew(rng, d)
            expected = explicit_logdet_normalizer(V, B, C)
            assert rel_err(logdet_normalizer_factored(V, B, C), expected, floor=1.0) <= 1e-8


class TestValidation:
    def test_valid(self):
        assert validate_model(make_model(5, 4, 0)) == []

    def test_symmetric_c_reported(self):
        model = NdppModel(np.ones((2, 2)), np.ones((2, 2)), [[0, 1.0], [1.0, 0]])
        problems = validate_model(model)
        assert len(problems) == 1 and "skew" in problems[0]

    def test_non_finite_reported(self):
        V = np.ones((2, 3))
        V[1, 2] = np.inf
        problems = validate_model(NdppModel(V, np.ones((2, 3)), np.zeros((2, 2))))
        assert any("non-finite" in p for p in problems)

    def test_shape_errors_raise(self):
        with pytest.raises(ShapeError):
            NdppModel(np.ones((2, 3)), np.ones((2, 4)), np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            NdppModel(np.ones((2, 3)), np.ones((2, 3)), np.zeros((3, 3)))


class TestSerialization:
    def test_round_trip_is_exact(self, tmp_path):
        model = make_model(7, 4, 5)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        for name in "VBC":
            np.testing.assert_array_equal(getattr(back, name), getattr(model, name))

    def test_schema(self, tmp_path):
        import json

        save_model(make_model(3, 2, 0), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert set(doc) == {"d", "n", "V", "B", "C"}
        assert len(doc["V"]) == 6 and len(doc["C"]) == 4

    def test_reader_revalidates_skew(self, tmp_path):
        import json

        doc = make_model(3, 2, 0).to_dict()
        doc["C"] = [0.0, 1.0, 1.0, 0.0]
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(InvalidModelError):
            load_model(tmp_path / "bad.json")

    def test_block_skew_needs_even_d(self, rng):
        with pytest.raises(ValueError):
            block_skew(3, rng)
        C = block_skew(6, rng)
        np.testing.assert_array_equal(C, -C.T)
        assert abs(np.linalg.det(C)) > 0
