"""Same-image box mixing: plan structure, label math, pixel pasting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ferkd.calibrate import CropRecord, CropStatus
from ferkd.errors import ParameterError, ShapeError
from ferkd.labels import QuantizedSoftLabel, SoftLabel
from ferkd.rng import Stream
from ferkd.sampler import BBox
from ferkd.selfmix import MixPlan, mix_labels, mix_pixels, plan_selfmix


def crops(n: int, image_id: str = "im", statuses=None) -> list[CropRecord]:
    statuses = statuses or [None] * n
    return [
        CropRecord(
            image_id=image_id,
            bbox=BBox(0.0, 0.0, 0.5, 0.5),
            hflip=False,
            soft_label=QuantizedSoftLabel(((0, 150),), num_classes=10, bits=8),
            gt_class=None,
            status=statuses[i],
        )
        for i in range(n)
    ]


class TestMixPlan:
    def test_valid(self):
        box = BBox(0.2, 0.2, 0.6, 0.6)
        plan = MixPlan("im", 0, 1, box, 1.0 - box.area)
        assert plan.lambda_eff == pytest.approx(0.64)

    def test_self_pair_rejected(self):
        with pytest.raises(ParameterError):
            MixPlan("im", 2, 2, BBox(0.0, 0.0, 0.5, 0.5), 0.75)

    def test_inconsistent_weight_rejected(self):
        with pytest.raises(ParameterError):
            MixPlan("im", 0, 1, BBox(0.0, 0.0, 0.5, 0.5), 0.5)


class TestPlanSelfmix:
    def test_pairs_are_disjoint_and_within_image(self):
        plans = plan_selfmix(crops(6), Stream(1))
        assert len(plans) == 3
        used = [i for p in plans for i in (p.index_a, p.index_b)]
        assert sorted(used) == list(range(6))
        assert all(p.image_id == "im" for p in plans)

    def test_odd_crop_left_out(self):
        plans = plan_selfmix(crops(5), Stream(2))
        used = {i for p in plans for i in (p.index_a, p.index_b)}
        assert len(plans) == 2 and len(used) == 4

    def test_discarded_crops_never_mix(self):
        statuses = [CropStatus.UR, CropStatus.IR, CropStatus.UR, CropStatus.IR,
                    CropStatus.HR, CropStatus.UR]
        plans = plan_selfmix(crops(6, statuses=statuses), Stream(3))
        used = {i for p in plans for i in (p.index_a, p.index_b)}
        assert used <= {1, 3, 4}
        assert len(plans) == 1

    @pytest.mark.parametrize("n_eligible", [0, 1])
    def test_too_few_eligible_is_empty(self, n_eligible):
        statuses = [CropStatus.IR] * n_eligible + [CropStatus.UR] * 3
        assert plan_selfmix(crops(3 + n_eligible, statuses=statuses), Stream(0)) == []

    def test_mixed_image_ids_rejected(self):
        bad = crops(2) + crops(2, image_id="other")
        with pytest.raises(ParameterError):
            plan_selfmix(bad, Stream(0))

    def test_nonpositive_alpha_rejected(self):
        with pytest.raises(ParameterError):
            plan_selfmix(crops(4), Stream(0), beta_alpha=0.0)

    def test_weight_tracks_clamped_area(self):
        for seed in range(200):
            for plan in plan_selfmix(crops(8), Stream(seed)):
                assert abs(plan.lambda_eff - (1.0 - plan.paste_box.area)) <= 1e-9
                b = plan.paste_box
                assert 0.0 <= b.x and b.x + b.w <= 1.0 + 1e-9
                assert 0.0 <= b.y and b.y + b.h <= 1.0 + 1e-9

    def test_draw_sequence_matches_reference(self):
        # shuffle of eligible indices, then per pair: weight, cx, cy
        seed = 424242
        plans = plan_selfmix(crops(4), Stream(seed))

        words = iter(oracles.sm64_sequence(seed, 12))
        order = [0, 1, 2, 3]
        for i in range(3, 0, -1):
            j = next(words) % (i + 1)
            order[i], order[j] = order[j], order[i]
        expect = []
        for a, b in zip(order[0::2], order[1::2]):
            lam = oracles.sm64_double(next(words))  # Beta(1,1) is one uniform
            side = math.sqrt(1.0 - lam)
            cx = oracles.sm64_double(next(words))
            cy = oracles.sm64_double(next(words))
            x0, y0 = max(0.0, cx - side / 2), max(0.0, cy - side / 2)
            x1, y1 = min(1.0, cx + side / 2), min(1.0, cy + side / 2)
            expect.append((a, b, x0, y0, x1 - x0, y1 - y0))
        got = [
            (p.index_a, p.index_b, p.paste_box.x, p.paste_box.y,
             p.paste_box.w, p.paste_box.h)
            for p in plans
        ]
        assert got == expect


class TestMixLabels:
    def test_quarter_blend_of_opposite_onehots(self):
        out = mix_labels(SoftLabel([1.0, 0.0]), SoftLabel([0.0, 1.0]), 0.25)
        assert out.probs.tolist() == [0.25, 0.75]

    def test_endpoints_exact(self):
        a, b = SoftLabel([0.6, 0.4]), SoftLabel([0.1, 0.9])
        assert mix_labels(a, b, 1.0) == a
        assert mix_labels(a, b, 0.0) == b

    @given(st.floats(0.0, 1.0, allow_nan=False), st.integers(0, 1000))
    @settings(max_examples=80, deadline=None)
    def test_self_mix_is_identity_for_every_weight(self, lam, seed):
        rng = np.random.default_rng(seed)
        y = SoftLabel(rng.dirichlet(np.full(6, 0.5)))
        assert mix_labels(y, y, lam) == y

    def test_matches_convex_combination(self, make_labels):
        a, b = make_labels(2, 12, seed=8)
        out = mix_labels(a, b, 0.3)
        manual = [0.3 * float(pa) + 0.7 * float(pb) for pa, pb in zip(a.probs, b.probs)]
        assert np.abs(out.probs - manual).max() < 1e-15
        assert abs(float(out.probs.sum()) - 1.0) < 1e-9

    def test_shape_mismatch_and_bad_weight(self):
        with pytest.raises(ShapeError):
            mix_labels(SoftLabel([1.0]), SoftLabel([0.5, 0.5]), 0.5)
        for lam in (-0.01, 1.01):
            with pytest.raises(ParameterError):
                mix_labels(SoftLabel([1.0]), SoftLabel([1.0]), lam)


class TestMixPixels:
    def tiles(self):
        a = np.zeros((8, 8, 3))
        b = np.ones((8, 8, 3))
        return a, b

    def test_zero_area_box_is_noop(self):
        a, b = self.tiles()
        out = mix_pixels(a, b, BBox(0.5, 0.5, 0.0, 0.0))
        assert np.array_equal(out, a)

    def test_full_box_returns_other_tile(self):
        a, b = self.tiles()
        out = mix_pixels(a, b, BBox(0.0, 0.0, 1.0, 1.0))
        assert np.array_equal(out, b)

    def test_inputs_not_modified(self):
        a, b = self.tiles()
        mix_pixels(a, b, BBox(0.25, 0.25, 0.5, 0.5))
        assert not a.any() and b.all()

    def test_pasted_region_matches_box_rounding(self):
        a, b = self.tiles()
        box = BBox(0.25, 0.5, 0.5, 0.25)
        out = mix_pixels(a, b, box)
        for py in range(8):
            for px in range(8):
                inside = 2 <= px < 6 and 4 <= py < 6
                assert out[py, px, 0] == (1.0 if inside else 0.0)

    def test_pasted_fraction_tracks_box_area(self):
        a, b = self.tiles()
        for seed in range(50):
            s = Stream(seed)
            w, h = s.next_double(), s.next_double()
            x = s.next_double() * (1.0 - w)
            y = s.next_double() * (1.0 - h)
            box = BBox(x, y, w, h)
            out = mix_pixels(a, b, box)
            frac = out[..., 0].sum() / 64.0
            # 8x8 tiles round each edge by up to half a pixel
            assert abs(frac - box.area) <= (8 * (w + h) + 1) / 64.0

    def test_shape_checks(self):
        a, b = self.tiles()
        with pytest.raises(ShapeError):
            mix_pixels(a, np.ones((4, 4, 3)), BBox(0.0, 0.0, 1.0, 1.0))
        with pytest.raises(ShapeError):
            mix_pixels(np.zeros(8), np.ones(8), BBox(0.0, 0.0, 1.0, 1.0))
