import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alsel.errors import DomainError
from alsel.simdet import (
    SkillModel,
    SynthSpec,
    category_skills,
    default_spec,
    simulate_detections,
    skill,
    synth_dataset,
)


class TestSynthSpec:
    def test_power_law_probs(self):
        spec = default_spec(categories=4)
        probs = spec.category_probs()
        ranks = np.arange(1, 5, dtype=float)
        expected = ranks**-1.5 / (ranks**-1.5).sum()
        assert probs == pytest.approx(expected, abs=1e-12)

    def test_size_means_span_small_to_large(self):
        means = default_spec(categories=10).resolved_size_means()
        assert means[0][0] == pytest.approx(16.0)
        assert means[-1][0] == pytest.approx(200.0)
        assert all(long >= short for long, short in means)

    def test_validation(self):
        with pytest.raises(DomainError):
            SynthSpec(categories=(), images=10)
        with pytest.raises(DomainError):
            SynthSpec(categories=("a",), images=10, outlier_fraction=1.5)
        with pytest.raises(DomainError):
            SynthSpec(categories=("a",), images=10, outlier_range=(10.0, 5.0))


class TestSynthDataset:
    def test_deterministic(self):
        spec = default_spec(categories=5, images=50)
        a = synth_dataset(spec, seed=1)
        b = synth_dataset(spec, seed=1)
        assert a.images == b.images
        c = synth_dataset(spec, seed=2)
        assert a.images != c.images

    def test_shape_and_bounds(self):
        spec = default_spec(categories=5, images=100)
        index = synth_dataset(spec, seed=0)
        assert len(index.images) == 100
        for rec in index.images.values():
            assert rec.width == 1024 and rec.height == 1024
            for o in rec.objects:
                assert 0 <= o.cx <= 1024 and 0 <= o.cy <= 1024
                assert o.w > 0 and o.h > 0
                assert 0 <= o.category < 5

    def test_imbalance_follows_power_law(self):
        spec = default_spec(categories=8, images=800)
        index = synth_dataset(spec, seed=3)
        counts = np.zeros(8)
        for rec in index.images.values():
            for o in rec.objects:
                counts[o.category] += 1
        assert counts[0] > counts[-1] * 3  # strongly imbalanced head vs tail
        total = counts.sum()
        probs = spec.category_probs()
        # empirical shares within a loose band of the target law
        assert counts[0] / total == pytest.approx(probs[0], rel=0.35)

    def test_outlier_fraction_present(self):
        spec = default_spec(categories=5, images=400)
        index = synth_dataset(spec, seed=5)
        longs = [max(o.w, o.h) for rec in index.images.values() for o in rec.objects]
        big = sum(1 for v in longs if v >= 320)
        assert 0.01 < big / len(longs) < 0.12

    def test_empty_images_exist(self):
        index = synth_dataset(default_spec(categories=5, images=200), seed=1)
        empty = sum(1 for rec in index.images.values() if not rec.objects)
        assert 0.4 < empty / 200 < 0.7


class TestSkill:
    def test_boundaries(self):
        model = SkillModel(half_saturation=8.0)
        assert skill(0, model) == 0.0
        assert skill(8, model) == 0.5
        assert skill(10**9, model) == pytest.approx(1.0, abs=1e-6)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            skill(-1, SkillModel())

    @given(n=st.integers(0, 10**6), h=st.floats(0.5, 100))
    def test_saturating_oracle(self, n, h):
        assert skill(n, SkillModel(half_saturation=h)) == n / (n + h)

    def test_category_skills_counts_labeled_only(self):
        index = synth_dataset(default_spec(categories=3, images=30), seed=0)
        model = SkillModel()
        none = category_skills(index, [], model)
        assert np.all(none == 0.0)
        some = category_skills(index, list(index.images), model)
        assert np.all(some >= none)


class TestSimulateDetections:
    def setup_method(self):
        self.index = synth_dataset(default_spec(categories=4, images=60), seed=2)
        self.model = SkillModel()
        self.ids = list(self.index.images)

    def test_deterministic_and_order_independent(self):
        labeled = self.ids[:10]
        a = simulate_detections(self.index, labeled, self.ids, self.model, seed=7)
        b = simulate_detections(self.index, labeled[::-1], self.ids[::-1], self.model, seed=7)
        assert a == b

    def test_skill_changes_output(self):
        a = simulate_detections(self.index, self.ids[:5], self.ids, self.model, seed=7)
        b = simulate_detections(self.index, self.ids[:40], self.ids, self.model, seed=7)
        assert a != b

    def test_more_skill_more_recall(self):
        model = SkillModel(fp_rate=0.0)  # count only object-driven detections

        def recall(labeled):
            dets = simulate_detections(self.index, labeled, self.ids, model, seed=7)
            found = sum(len(v) for v in dets.values())
            total = sum(len(r.objects) for r in self.index.images.values())
            return found / total

        assert recall(self.ids) > recall(self.ids[:3])

    def test_scores_in_range_and_sorted(self):
        dets = simulate_detections(self.index, self.ids[:10], self.ids, self.model, seed=7)
        for group in dets.values():
            scores = [d.score for d in group]
            assert all(0.0 <= s <= 1.0 for s in scores)
            assert scores == sorted(scores, reverse=True)

    def test_stream_tag_gives_common_random_numbers(self):
        # same tag, different labeled sets with equal skills: identical stream
        skills = np.full(4, 0.5)
        a = simulate_detections(
            self.index, self.ids[:5], self.ids, self.model, seed=7, skills=skills, stream_tag="x"
        )
        b = simulate_detections(
            self.index, self.ids[:30], self.ids, self.model, seed=7, skills=skills, stream_tag="x"
        )
        assert a == b

    def test_target_subset_consistency(self):
        # detections for one image do not depend on the other targets requested
        labeled = self.ids[:10]
        full = simulate_detections(self.index, labeled, self.ids, self.model, seed=7)
        one = simulate_detections(self.index, labeled, [self.ids[3]], self.model, seed=7)
        assert one[self.ids[3]] == full[self.ids[3]]
