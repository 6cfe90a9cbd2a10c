import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from alsel.dataset import DatasetIndex, GroundTruthObject, ImageRecord, LabelState
from alsel.weights import (
    build_weight_table,
    compute_category_stats,
    weight_w1,
    weight_w2,
    write_weight_table_csv,
)


def make_index(per_image_cats, n_cats=3, labeled=True):
    """per_image_cats: list of per-image category-id lists."""
    images = {}
    state = {}
    for i, cats in enumerate(per_image_cats):
        image_id = f"i{i:03d}"
        objects = tuple(GroundTruthObject(c, 10.0, 10.0, 4.0, 2.0) for c in cats)
        images[image_id] = ImageRecord(image_id, 100, 100, objects)
        state[image_id] = LabelState.LABELED if labeled else LabelState.POOL
    return DatasetIndex(
        categories=tuple(f"c{j}" for j in range(n_cats)), images=images, label_state=state
    )


class TestCategoryStats:
    def test_counts_and_presence(self):
        index = make_index([[0, 0, 1], [0, 2], []])
        n, p = compute_category_stats(index)
        assert n == [3, 1, 1]
        assert p == [2, 1, 1]

    def test_pool_images_excluded(self):
        index = make_index([[0], [0]], labeled=False)
        index.label_state["i000"] = LabelState.LABELED
        n, p = compute_category_stats(index)
        assert n == [1, 0, 0]
        assert p == [1, 0, 0]

    @given(
        data=st.lists(
            st.lists(st.integers(0, 2), max_size=6), min_size=1, max_size=10
        )
    )
    def test_oracle_equivalence(self, data):
        index = make_index(data)
        n, p = compute_category_stats(index)
        for cat in range(3):
            assert n[cat] == sum(cats.count(cat) for cats in data)
            assert p[cat] == sum(1 for cats in data if cat in cats)


class TestW1:
    def test_floor_applies_below_ten(self):
        for n in (0, 1, 9, 10):
            assert weight_w1(n) == 1.0

    def test_log10_above_floor(self):
        assert weight_w1(1000) == pytest.approx(3.0, abs=1e-12)
        assert weight_w1(500) == pytest.approx(math.log10(500), abs=1e-12)

    def test_raw_floor_one(self):
        assert weight_w1(0, floor=1.0) == 0.0
        assert weight_w1(5, floor=1.0) == pytest.approx(math.log10(5), abs=1e-12)

    def test_floor_below_one_rejected(self):
        with pytest.raises(ValueError):
            weight_w1(5, floor=0.5)

    @given(n=st.integers(0, 10**9), floor=st.floats(1.0, 100.0))
    def test_oracle(self, n, floor):
        assert weight_w1(n, floor) == math.log10(max(n, floor))


class TestW2:
    def test_worked_example(self):
        # three categories with x = [2, 3, 5]: sum=10, w2 = 13/(x+1)
        n = [4, 3, 5]
        p = [2, 1, 1]
        x, x_sum, w2 = weight_w2(n, p, 3)
        assert x == [2.0, 3.0, 5.0]
        assert x_sum == 10.0
        assert w2 == pytest.approx([13 / 3, 13 / 4, 13 / 6], abs=1e-12)

    def test_absent_category_gets_max_weight(self):
        x, x_sum, w2 = weight_w2([0, 4], [0, 2], 2)
        assert x[0] == 0.0
        assert w2[0] == max(w2)
        assert w2[0] == x_sum + 2  # (sum + C) / (0 + 1)

    @given(
        pairs=st.lists(
            st.tuples(st.integers(1, 50), st.integers(1, 10)).filter(lambda t: t[0] >= t[1]),
            min_size=1,
            max_size=8,
        )
    )
    def test_rarer_spread_scores_higher(self, pairs):
        n = [a for a, _ in pairs]
        p = [b for _, b in pairs]
        x, x_sum, w2 = weight_w2(n, p, len(pairs))
        order_x = sorted(range(len(x)), key=lambda i: x[i])
        # w2 strictly decreasing in x
        for a, b in zip(order_x, order_x[1:]):
            assert w2[a] >= w2[b]
        for i in range(len(x)):
            assert w2[i] == pytest.approx((x_sum + len(pairs)) / (x[i] + 1), abs=1e-12)


def test_build_weight_table_round_numbers():
    # engineered so x = [2, 3, 5] with C = 3
    index = make_index([[0, 0, 1, 1, 1], [0, 0], [2, 2, 2, 2, 2]])
    table = build_weight_table(index)
    assert table.n == (4, 3, 5)
    assert table.p == (2, 1, 1)
    assert table.x_sum == 10.0
    assert table.w2 == pytest.approx((13 / 3, 13 / 4, 13 / 6), abs=1e-12)
    assert table.w1 == (1.0, 1.0, 1.0)  # all counts under the floor of 10


def test_csv_has_header_sum_and_meta():
    index = make_index([[0, 1, 2]])
    table = build_weight_table(index)
    buf = io.StringIO()
    write_weight_table_csv(table, buf, "config=abc")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# config=abc"
    assert lines[1] == "category,n,p,x,w1,w2"
    assert len(lines) == 2 + 3 + 1
    assert lines[-1].startswith("# sum=")
