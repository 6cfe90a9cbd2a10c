import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alsel.dataset import Detection
from alsel.density import GmmModel, log_density, SizeFeature
from alsel.errors import DomainError
from alsel.scoring import (
    ImageScoreReport,
    Strategy,
    image_score_lc,
    image_score_wc,
    image_score_wcr,
    object_uncertainty,
    score_pool,
    write_score_csv,
)
from alsel.weights import CategoryWeightTable, weight_w1, weight_w2


def make_table(n=(4, 3, 5), p=(2, 1, 1)):
    x, x_sum, w2 = weight_w2(list(n), list(p), len(n))
    return CategoryWeightTable(
        categories=tuple(f"c{i}" for i in range(len(n))),
        n=tuple(n),
        p=tuple(p),
        x=tuple(x),
        w1=tuple(weight_w1(v) for v in n),
        w2=tuple(w2),
        x_sum=x_sum,
        cat_count=len(n),
    )


def make_model():
    return GmmModel(
        k=1,
        mix_weights=np.array([1.0]),
        means=np.array([[40.0, 20.0]]),
        covariances=np.array([[[25.0, 0.0], [0.0, 9.0]]]),
        reg_epsilon=0.0,
        seed=0,
        n_features=1,
    )


def det(category=0, score=0.5, w=40.0, h=20.0, image_id="a"):
    return Detection(image_id=image_id, category=category, score=score, cx=50, cy=50, w=w, h=h)


def u_r_for(w, h):
    return_density = log_density(make_model(), SizeFeature(max(w, h), min(w, h)))
    c = return_density.clipped
    return 0.05 * (c + 10) + 0.5 if c >= -10 else 0.5 * (c + 100) / 90


class TestObjectUncertainty:
    def test_hand_computed(self):
        table = make_table()
        # category 1: w1 = 1 (count 3 under floor), w2 = 13/4, P = 0.6
        score = object_uncertainty(det(category=1, score=0.6), table, make_model())
        assert score.u_c == pytest.approx(1.0 * (13 / 4) * 0.4, abs=1e-12)
        assert score.u_r == pytest.approx(u_r_for(40, 20), abs=1e-12)
        assert score.combined == pytest.approx(score.u_c * score.u_r, abs=1e-12)

    def test_certain_detection_scores_zero(self):
        score = object_uncertainty(det(score=1.0), make_table(), make_model())
        assert score.u_c == 0.0

    def test_category_out_of_table(self):
        with pytest.raises(DomainError):
            object_uncertainty(det(category=7), make_table(), make_model())

    @given(score=st.floats(0, 1), cat=st.integers(0, 2))
    def test_u_c_oracle(self, score, cat):
        table = make_table()
        got = object_uncertainty(det(category=cat, score=score), table, make_model())
        assert got.u_c == pytest.approx(
            table.w1[cat] * table.w2[cat] * (1 - score), abs=1e-12
        )


class TestImageScores:
    def test_lc_ignores_weights(self):
        report = image_score_lc("a", [det(score=0.2), det(score=0.7)])
        assert report.u_s == pytest.approx(0.8 + 0.3, abs=1e-12)
        assert report.strategy is Strategy.LC

    def test_wc_weights_each_object(self):
        table = make_table()
        dets = [det(category=0, score=0.5), det(category=2, score=0.1)]
        report = image_score_wc("a", dets, table)
        expected = table.w1[0] * table.w2[0] * 0.5 + table.w1[2] * table.w2[2] * 0.9
        assert report.u_s == pytest.approx(expected, abs=1e-12)

    def test_wcr_multiplies_in_u_r(self):
        table = make_table()
        dets = [det(category=0, score=0.5, w=40, h=20), det(category=1, score=0.3, w=400, h=10)]
        report = image_score_wcr("a", dets, table, make_model())
        expected = sum(
            table.w1[d.category] * table.w2[d.category] * (1 - d.score) * u_r_for(d.w, d.h)
            for d in dets
        )
        assert report.u_s == pytest.approx(expected, rel=1e-12)

    def test_empty_image_scores_zero(self):
        assert image_score_lc("a", []).u_s == 0.0
        assert image_score_wcr("a", [], make_table(), make_model()).u_s == 0.0

    @settings(max_examples=200)
    @given(
        scores=st.lists(st.floats(0, 1), min_size=2, max_size=12),
        seed=st.integers(0, 1000),
    )
    def test_sum_is_permutation_invariant_exactly(self, scores, seed):
        table = make_table()
        dets = [det(category=i % 3, score=s, w=20 + 7 * i, h=9 + i) for i, s in enumerate(scores)]
        base = image_score_wcr("a", dets, table, make_model()).u_s
        rng = np.random.default_rng(seed)
        shuffled = [dets[i] for i in rng.permutation(len(dets))]
        assert image_score_wcr("a", shuffled, table, make_model()).u_s == base


class TestScorePool:
    def test_min_score_filters(self):
        dets = {"a": [det(score=0.01), det(score=0.5)]}
        reports = score_pool(["a"], dets, None, None, Strategy.LC, min_score=0.05)
        assert reports[0].object_count == 1
        assert reports[0].u_s == pytest.approx(0.5, abs=1e-12)

    def test_random_rejected(self):
        with pytest.raises(DomainError):
            score_pool([], {}, None, None, Strategy.RANDOM)

    def test_missing_requirements(self):
        with pytest.raises(DomainError):
            score_pool([], {}, None, None, Strategy.WC)
        with pytest.raises(DomainError):
            score_pool([], {}, make_table(), None, Strategy.WCR)

    def test_output_sorted_by_image_id(self):
        reports = score_pool(["z", "a", "m"], {}, None, None, Strategy.LC)
        assert [r.image_id for r in reports] == ["a", "m", "z"]

    def test_image_without_detections_scores_zero(self):
        reports = score_pool(["a"], {}, make_table(), make_model(), Strategy.WCR)
        assert reports[0].u_s == 0.0
        assert reports[0].object_count == 0


def test_score_csv_rank_order_and_tie_break():
    reports = [
        ImageScoreReport("b", Strategy.LC, 1.5, 2),
        ImageScoreReport("a", Strategy.LC, 1.5, 1),
        ImageScoreReport("c", Strategy.LC, 9.0, 3),
    ]
    buf = io.StringIO()
    write_score_csv(reports, buf, "meta")
    lines = buf.getvalue().splitlines()
    assert lines[1] == "image_id,strategy,u_s,object_count,rank"
    ids = [line.split(",")[0] for line in lines[2:]]
    assert ids == ["c", "a", "b"]
    assert [line.split(",")[-1] for line in lines[2:]] == ["1", "2", "3"]
