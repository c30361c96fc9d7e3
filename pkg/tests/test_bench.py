"""Synthetic task, oracle teacher, and the mini training harness."""

import math
from dataclasses import replace

import numpy as np
import pytest

from ferkd.bench import (
    CONFIDENCE_CAP,
    IMAGE_SIZE,
    TILE_SIZE,
    MLPModel,
    MODES,
    OracleTeacher,
    TrainConfig,
    build_store,
    class_color,
    downsample_tile,
    format_metrics,
    generate_task,
    min_max_filter_sweep,
    parse_metrics,
    reference_sampler,
    run_experiment,
    run_grid,
    write_metrics,
)
from ferkd.bench.train import _order_policy
from ferkd.calibrate import CropStatus
from ferkd.errors import (
    DataError,
    DivergenceError,
    EmptyInputError,
    ParameterError,
    ShapeError,
    StateError,
)
from ferkd.sampler import OrderMode, SamplerConfig
from ferkd.store import LabelStore


class TestTask:
    def test_deterministic_across_builds(self, tiny_task):
        again = generate_task(7, (12, 6))
        for a, b in zip(tiny_task.train, again.train):
            assert np.array_equal(a.pixels, b.pixels)
            assert np.array_equal(a.mask, b.mask)

    def test_seed_changes_pixels(self, tiny_task):
        other = generate_task(8, (12, 6))
        assert not np.array_equal(tiny_task.train[0].pixels, other.train[0].pixels)

    def test_classes_rotate_round_robin(self, tiny_task):
        assert [im.class_index for im in tiny_task.train] == [i % 10 for i in range(12)]
        assert [im.class_index for im in tiny_task.val] == [i % 10 for i in range(6)]

    def test_image_contents(self, tiny_task):
        im = tiny_task.train[0]
        assert im.pixels.shape == (IMAGE_SIZE, IMAGE_SIZE, 3)
        assert im.pixels.dtype == np.float32
        assert im.pixels.min() >= 0.0 and im.pixels.max() <= 1.0
        assert im.mask.shape == (IMAGE_SIZE, IMAGE_SIZE)
        assert im.mask.dtype == bool

    def test_object_occupies_documented_fraction(self, tiny_task):
        for im in tiny_task.train + tiny_task.val:
            assert 0.1 <= im.area_fraction <= 0.5

    def test_image_by_id(self, tiny_task):
        assert tiny_task.image_by_id("val_00003") is tiny_task.val[3]
        with pytest.raises(KeyError):
            tiny_task.image_by_id("nope")

    @pytest.mark.parametrize("sizes,classes", [((0, 5), 10), ((5, 0), 10), ((5, 5), 1)])
    def test_degenerate_parameters(self, sizes, classes):
        with pytest.raises(ParameterError):
            generate_task(0, sizes, num_classes=classes)

    def test_class_colors_distinct_and_bounded(self):
        colors = [class_color(c, 10) for c in range(10)]
        assert all(0.0 <= v <= 1.0 for col in colors for v in col)
        assert len({tuple(np.round(c, 6)) for c in colors}) == 10


class TestDownsampleTile:
    def test_constant_region_gives_constant_tile(self):
        pix = np.full((64, 64, 3), 0.375, dtype=np.float32)
        tile = downsample_tile(pix, (5, 9, 30, 40), False)
        assert tile.shape == (TILE_SIZE, TILE_SIZE, 3)
        assert np.allclose(tile, 0.375)

    def test_full_image_tile_preserves_mean(self):
        rng = np.random.default_rng(0)
        pix = rng.uniform(size=(64, 64, 3)).astype(np.float32)
        tile = downsample_tile(pix, (0, 0, 64, 64), False)
        # 64 rows split into 8 equal bins, so the tile mean is the image mean
        assert tile.mean() == pytest.approx(float(pix.astype(np.float64).mean()), abs=1e-12)

    def test_flip_mirrors_columns(self):
        rng = np.random.default_rng(1)
        pix = rng.uniform(size=(64, 64, 3)).astype(np.float32)
        plain = downsample_tile(pix, (3, 3, 35, 51), False)
        flipped = downsample_tile(pix, (3, 3, 35, 51), True)
        assert np.array_equal(flipped, plain[:, ::-1, :])

    def test_horizontal_gradient_survives_downsampling(self):
        pix = np.tile(np.linspace(0.0, 1.0, 64)[None, :, None], (64, 1, 3)).astype(np.float32)
        tile = downsample_tile(pix, (0, 0, 64, 64), False)
        row = tile[0, :, 0]
        assert np.all(np.diff(row) > 0)

    def test_crop_smaller_than_tile(self):
        pix = np.arange(64 * 64 * 3, dtype=np.float64).reshape(64, 64, 3) / (64 * 64 * 3)
        tile = downsample_tile(pix.astype(np.float32), (10, 10, 13, 12), False)
        assert tile.shape == (TILE_SIZE, TILE_SIZE, 3)
        assert np.isfinite(tile).all()

    @pytest.mark.parametrize("box", [(-1, 0, 8, 8), (0, 0, 0, 8), (0, 0, 65, 8), (5, 5, 5, 9)])
    def test_bad_boxes_rejected(self, box):
        pix = np.zeros((64, 64, 3), dtype=np.float32)
        with pytest.raises(ParameterError):
            downsample_tile(pix, box, False)


class TestOracleTeacher:
    def test_confidence_formula(self):
        t = OracleTeacher()
        lo = 1.0 / 10
        for cov in (0.0, 0.1, 0.25, 0.6, 1.0):
            sig = 1.0 / (1.0 + math.exp(-8.0 * (cov - 0.25)))
            assert t.confidence(cov, 10) == pytest.approx(lo + (CONFIDENCE_CAP - lo) * sig)

    def test_midpoint_and_saturation(self):
        t = OracleTeacher()
        lo = 1.0 / 10
        assert t.confidence(0.25, 10) == pytest.approx(lo + (CONFIDENCE_CAP - lo) * 0.5)
        assert t.confidence(1.0, 10) == pytest.approx(CONFIDENCE_CAP, abs=0.01)
        assert lo < t.confidence(0.0, 10) < CONFIDENCE_CAP

    def test_confidence_monotone_in_coverage(self):
        t = OracleTeacher()
        vals = [t.confidence(c, 10) for c in np.linspace(0, 1, 50)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_coverage_bounds_checked(self):
        with pytest.raises(ParameterError):
            OracleTeacher().confidence(1.2, 10)

    @pytest.mark.parametrize("kw", [{"k": 0.0}, {"c0": 1.5}, {"noise_scale": -1.0}])
    def test_constructor_validation(self, kw):
        with pytest.raises(ParameterError):
            OracleTeacher(**kw)

    def test_predictions_deterministic(self, tiny_task):
        t = OracleTeacher(seed=5)
        im = tiny_task.train[0]
        from ferkd.sampler import BBox

        box = BBox(0.125, 0.125, 0.5, 0.5)
        assert t.predict(im, box, 10) == t.predict(im, box, 10)

    def test_true_class_gets_the_coverage_confidence(self, tiny_task):
        from ferkd.sampler import BBox

        t = OracleTeacher(seed=2)
        im = tiny_task.train[4]
        lab = t.predict(im, BBox(0.0, 0.0, 1.0, 1.0), 10)
        assert lab.probs[im.class_index] == pytest.approx(
            t.confidence(im.area_fraction, 10)
        )
        assert abs(float(lab.probs.sum()) - 1.0) < 1e-9

    def test_zero_noise_spreads_tail_evenly(self, tiny_task):
        from ferkd.sampler import BBox

        t = OracleTeacher(noise_scale=0.0)
        im = tiny_task.train[1]
        lab = t.predict(im, BBox(0.0, 0.0, 1.0, 1.0), 10)
        tail = np.delete(lab.probs, im.class_index)
        assert np.allclose(tail, tail[0])

    def test_teacher_seed_moves_only_the_tail(self, tiny_task):
        from ferkd.sampler import BBox

        im = tiny_task.train[2]
        box = BBox(0.0, 0.0, 1.0, 1.0)
        a = OracleTeacher(seed=0).predict(im, box, 10)
        b = OracleTeacher(seed=9).predict(im, box, 10)
        assert a.probs[im.class_index] == b.probs[im.class_index]
        assert not np.array_equal(a.probs, b.probs)


class TestBuildStore:
    def test_shape_and_metadata(self, tiny_task, tiny_raw_store):
        assert tiny_raw_store.num_images == 12
        assert tiny_raw_store.num_crops == 36
        assert tiny_raw_store.num_classes == 10
        assert not tiny_raw_store.is_calibrated
        assert all(len(v) == 3 for v in tiny_raw_store.entries.values())

    def test_two_teachers_stay_crop_aligned(self, tiny_task):
        cfg = SamplerConfig(scale_min=0.2, scale_max=0.8)
        a = build_store(tiny_task, OracleTeacher(seed=1), crops_per_image=2, sampler_cfg=cfg)
        b = build_store(tiny_task, OracleTeacher(seed=2), crops_per_image=2, sampler_cfg=cfg)
        for ra, rb in zip(a.records(), b.records()):
            assert ra.key() == rb.key()
            assert ra.soft_label != rb.soft_label  # labels differ, geometry not

    def test_crop_count_validation(self, tiny_task):
        with pytest.raises(ParameterError):
            build_store(tiny_task, OracleTeacher(), crops_per_image=0)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"mode": "vanilla"},
            {"steps": -1},
            {"batch_size": 0},
            {"lr": 0.0},
            {"momentum": 1.0},
            {"beta_alpha": 0.0},
            {"min_prob": 0.5, "max_prob": 0.4},
            {"min_prob": -0.1},
            {"eval_every": 0},
            {"hidden": 0},
            {"alpha": 1.2},
        ],
    )
    def test_validation(self, kw):
        with pytest.raises(ParameterError):
            TrainConfig(**kw)

    def test_known_modes(self):
        assert set(MODES) == {
            "fkd_random", "ferkd_surgical", "curriculum_e2h", "curriculum_h2e", "vkd"
        }


class TestOrderPolicyChoice:
    def test_curriculum_chunks_cover_planned_epochs(self):
        cfg = TrainConfig(mode="curriculum_e2h", steps=100, batch_size=32)
        # 3200 visits over 500 crops = 7 planned epochs -> stages of 72
        pol = _order_policy(cfg, 500)
        assert pol.mode is OrderMode.EASY_TO_HARD
        assert pol.chunk == math.ceil(500 / 7)

    def test_random_modes_have_no_stages(self):
        pol = _order_policy(TrainConfig(mode="fkd_random"), 100)
        assert pol.mode is OrderMode.RANDOM and pol.chunk == 1


class TestRunExperiment:
    def quick(self, **kw):
        base = dict(steps=12, eval_every=6, batch_size=16)
        base.update(kw)
        return TrainConfig(**base)

    def test_zero_budget_keeps_initial_accuracy(self, tiny_task, tiny_store):
        res = run_experiment(self.quick(steps=0), tiny_task, tiny_store)
        assert res.eval_points == ((0, res.final_accuracy),)
        assert 0.0 <= res.final_accuracy <= 1.0

    def test_identical_config_identical_curve(self, tiny_task, tiny_store):
        a = run_experiment(self.quick(), tiny_task, tiny_store)
        b = run_experiment(self.quick(), tiny_task, tiny_store)
        assert a.eval_points == b.eval_points

    def test_seed_changes_curve(self, tiny_task, tiny_store):
        a = run_experiment(self.quick(seed=0), tiny_task, tiny_store)
        b = run_experiment(self.quick(seed=1), tiny_task, tiny_store)
        assert a.eval_points[0] != b.eval_points[0] or a.eval_points != b.eval_points

    def test_eval_grid_includes_final_step(self, tiny_task, tiny_store):
        res = run_experiment(self.quick(steps=13, eval_every=5), tiny_task, tiny_store)
        assert [s for s, _ in res.eval_points] == [0, 5, 10, 13]

    def test_surgical_needs_calibration(self, tiny_task, tiny_raw_store):
        with pytest.raises(StateError):
            run_experiment(self.quick(mode="ferkd_surgical"), tiny_task, tiny_raw_store)

    def test_surgical_trains_on_kept_crops_only(self, tiny_task, tiny_store):
        res = run_experiment(self.quick(mode="ferkd_surgical"), tiny_task, tiny_store)
        kept = sum(1 for r in tiny_store.records() if r.status is not CropStatus.UR)
        assert res.train_size == kept
        assert res.discard_fraction == pytest.approx(1.0 - kept / tiny_store.num_crops)

    def test_noop_filter_is_byte_identical(self, tiny_task, tiny_store):
        plain = run_experiment(self.quick(), tiny_task, tiny_store)
        filtered = run_experiment(
            self.quick(min_prob=0.0, max_prob=1.0), tiny_task, tiny_store
        )
        assert plain.eval_points == filtered.eval_points

    def test_filter_counts_match_brute_force(self, tiny_task, tiny_store):
        lo, hi = 0.3, 0.9
        res = run_experiment(self.quick(min_prob=lo, max_prob=hi), tiny_task, tiny_store)
        expect = sum(1 for r in tiny_store.records() if lo <= r.teacher_max_prob() <= hi)
        assert res.train_size == expect

    def test_empty_filter_rejected(self, tiny_task, tiny_store):
        with pytest.raises(EmptyInputError):
            run_experiment(self.quick(min_prob=0.999, max_prob=1.0), tiny_task, tiny_store)

    def test_selfmix_changes_training_but_stays_valid(self, tiny_task, tiny_store):
        plain = run_experiment(self.quick(steps=30), tiny_task, tiny_store)
        mixed = run_experiment(self.quick(steps=30, selfmix=True), tiny_task, tiny_store)
        assert mixed.eval_points[0] == plain.eval_points[0]  # same init
        assert all(0.0 <= a <= 1.0 for _, a in mixed.eval_points)

    def test_vkd_needs_ground_truth(self, tiny_task, tiny_store):
        stripped = replace(
            tiny_store,
            entries={
                img: tuple(replace(r, gt_class=None) for r in recs)
                for img, recs in tiny_store.entries.items()
            },
        )
        with pytest.raises(DataError):
            run_experiment(self.quick(mode="vkd"), tiny_task, stripped)

    def test_unknown_image_reference_rejected(self, tiny_task, tiny_store):
        other = generate_task(99, (3, 2))
        with pytest.raises(DataError):
            run_experiment(self.quick(), other, tiny_store)

    def test_divergence_reports_step(self, tiny_task, tiny_store, monkeypatch):
        original = MLPModel.apply

        def poison(self, grads, lr, momentum):
            original(self, grads, lr, momentum)
            self.w1[0, 0] = np.inf

        monkeypatch.setattr(MLPModel, "apply", poison)
        with pytest.raises(DivergenceError) as err:
            run_experiment(self.quick(), tiny_task, tiny_store)
        assert err.value.step == 1


class TestGridAndSweep:
    def test_grid_covers_modes_by_seeds(self, tiny_task, tiny_store):
        results = run_grid(
            tiny_task, tiny_store, TrainConfig(steps=4, eval_every=4),
            ("fkd_random", "ferkd_surgical"), (0, 1),
        )
        assert [(r.mode, r.seed) for r in results] == [
            ("fkd_random", 0), ("fkd_random", 1),
            ("ferkd_surgical", 0), ("ferkd_surgical", 1),
        ]

    def test_grid_rejects_empty_axes(self, tiny_task, tiny_store):
        with pytest.raises(EmptyInputError):
            run_grid(tiny_task, tiny_store, TrainConfig(), (), (0,))

    def test_sweep_reports_discard_per_threshold(self, tiny_task, tiny_store):
        maxp = [r.teacher_max_prob() for r in tiny_store.records()]
        thresholds = [(0.0, 1.0), (0.1, 1.0), (0.3, 1.0)]
        points = min_max_filter_sweep(
            tiny_task, tiny_store, TrainConfig(steps=4, eval_every=4), thresholds
        )
        for pt, (lo, hi) in zip(points, thresholds):
            kept = sum(1 for p in maxp if lo <= p <= hi)
            assert pt.discard_fraction == pytest.approx(1.0 - kept / len(maxp))

    def test_sweep_rejects_empty(self, tiny_task, tiny_store):
        with pytest.raises(EmptyInputError):
            min_max_filter_sweep(tiny_task, tiny_store, TrainConfig(), [])


class TestMetricsTable:
    def test_roundtrip(self, tiny_task, tiny_store, tmp_path):
        results = run_grid(
            tiny_task, tiny_store, TrainConfig(steps=4, eval_every=2),
            ("fkd_random",), (0, 1),
        )
        path = tmp_path / "metrics.txt"
        n = write_metrics(results, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert n == len(lines) - 1
        rows = parse_metrics(lines)
        expect = [
            (step, r.mode, r.seed, float(f"{acc:.6f}"))
            for r in results
            for step, acc in r.eval_points
        ]
        assert rows == expect

    def test_parse_skips_noise(self):
        rows = parse_metrics(["", "# comment", "3 fkd_random 0 0.5", "   "])
        assert rows == [(3, "fkd_random", 0, 0.5)]


def test_reference_sampler_is_pinned():
    cfg = reference_sampler()
    assert (cfg.scale_min, cfg.scale_max) == (0.03, 0.5)
    assert cfg.seed == 0
