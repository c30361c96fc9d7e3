"""Mini training harness: a one-hidden-layer classifier on crop tiles.

The point is not the model (a 192-64-C MLP trained with momentum SGD and a
cosine schedule) but the comparisons it enables: the same crops, tiles, and
budget under different label treatments and sampling orders.  Every source
of randomness is derived from the config seed, so a (config, task, store)
triple maps to exactly one accuracy curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from ..calibrate import CropStatus
from ..errors import (
    DataError,
    DivergenceError,
    EmptyInputError,
    NumericError,
    ParameterError,
    StateError,
)
from ..labels import SoftLabel
from ..losses import entropy, sce_batch
from ..rng import Stream, derive, spawn
from ..sampler import OrderMode, OrderPolicy, order_records, pixel_box
from ..selfmix import mix_labels, mix_pixels, plan_selfmix
from ..store import LabelStore
from .task import SynthTask, downsample_tile

MODES = ("fkd_random", "ferkd_surgical", "curriculum_e2h", "curriculum_h2e", "vkd")

_ORDER_FOR_MODE = {
    "fkd_random": OrderMode.RANDOM,
    "vkd": OrderMode.RANDOM,
    "ferkd_surgical": OrderMode.SURGICAL,
    "curriculum_e2h": OrderMode.EASY_TO_HARD,
    "curriculum_h2e": OrderMode.HARD_TO_EASY,
}


@dataclass(frozen=True)
class TrainConfig:
    """One experiment: label treatment, budget, optimizer, and filters.

    ``min_prob``/``max_prob`` restrict training to crops whose teacher
    max-probability lies in the closed interval, the retained-range
    ablation; (0, 1) keeps everything and is byte-for-byte the unfiltered
    run.
    """

    mode: str = "fkd_random"
    steps: int = 200
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    selfmix: bool = False
    beta_alpha: float = 1.0
    min_prob: float = 0.0
    max_prob: float = 1.0
    eval_every: int = 100
    hidden: int = 64
    alpha: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 0:
            raise ParameterError(f"step budget must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ParameterError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.lr > 0.0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.beta_alpha <= 0.0:
            raise ParameterError(f"beta_alpha must be positive, got {self.beta_alpha}")
        if not 0.0 <= self.min_prob <= self.max_prob <= 1.0:
            raise ParameterError(
                f"need 0 <= min_prob <= max_prob <= 1, got ({self.min_prob}, {self.max_prob})"
            )
        if self.eval_every < 1:
            raise ParameterError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.hidden < 1:
            raise ParameterError(f"hidden width must be >= 1, got {self.hidden}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")


class MLPModel:
    """x -> relu(x W1 + b1) W2 + b2, with analytic backprop and momentum."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int, stream: Stream):
        lim1 = math.sqrt(3.0 / in_dim)
        lim2 = math.sqrt(3.0 / hidden)
        self.w1 = (stream.doubles(in_dim * hidden).reshape(in_dim, hidden) * 2.0 - 1.0) * lim1
        self.b1 = np.zeros(hidden)
        self.w2 = (stream.doubles(hidden * num_classes).reshape(hidden, num_classes) * 2.0 - 1.0) * lim2
        self.b2 = np.zeros(num_classes)
        self._vel = [np.zeros_like(p) for p in (self.w1, self.b1, self.w2, self.b2)]

    def forward(self, x: np.ndarray):
        pre = x @ self.w1 + self.b1
        h = np.maximum(pre, 0.0)
        z = h @ self.w2 + self.b2
        return z, (x, pre, h)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dz: np.ndarray):
        x, pre, h = cache
        dw2 = h.T @ dz
        db2 = dz.sum(axis=0)
        dh = np.where(pre > 0.0, dz @ self.w2.T, 0.0)
        dw1 = x.T @ dh
        db1 = dh.sum(axis=0)
        return dw1, db1, dw2, db2

    def apply(self, grads, lr: float, momentum: float) -> None:
        for p, v, g in zip((self.w1, self.b1, self.w2, self.b2), self._vel, grads):
            v *= momentum
            v -= lr * g
            p += v


@dataclass(frozen=True)
class ExperimentResult:
    """Accuracy curve of one run plus what the run actually trained on."""

    mode: str
    seed: int
    steps: int
    eval_points: tuple[tuple[int, float], ...]
    discard_fraction: float
    train_size: int

    @property
    def final_accuracy(self) -> float:
        return self.eval_points[-1][1]


def _order_policy(cfg: TrainConfig, n_retained: int) -> OrderPolicy:
    mode = _ORDER_FOR_MODE[cfg.mode]
    if mode in (OrderMode.EASY_TO_HARD, OrderMode.HARD_TO_EASY):
        planned_epochs = max(1, math.ceil(cfg.steps * cfg.batch_size / n_retained))
        return OrderPolicy(mode=mode, chunk=max(1, math.ceil(n_retained / planned_epochs)))
    return OrderPolicy(mode=mode)


def _assert_gradient(z: np.ndarray, targets: np.ndarray, grad_rows: np.ndarray) -> None:
    """Central-difference check of the loss gradient on one batch."""
    h = 1e-5
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            zp = z.copy()
            zp[i, j] += h
            zm = z.copy()
            zm[i, j] -= h
            fd = (sce_batch(zp, targets)[0].sum() - sce_batch(zm, targets)[0].sum()) / (2.0 * h)
            if abs(fd - grad_rows[i, j]) > 1e-4 * max(1.0, abs(fd)):
                raise NumericError(
                    f"analytic gradient {grad_rows[i, j]:.8f} disagrees with "
                    f"finite differences {fd:.8f} at logit ({i}, {j})"
                )


def _apply_selfmix(tiles, T, retained, cfg: TrainConfig, epoch: int):
    """Per-epoch within-image tile/label mixing; returns fresh (X, T)."""
    mixed_tiles = list(tiles)
    new_t = T.copy()
    groups: dict[str, list[int]] = {}
    for pos, rec in enumerate(retained):
        groups.setdefault(rec.image_id, []).append(pos)
    for image_id in sorted(groups):
        positions = groups[image_id]
        stream = spawn(cfg.seed, "selfmix", epoch, image_id)
        for plan in plan_selfmix([retained[p] for p in positions], stream, cfg.beta_alpha):
            ga = positions[plan.index_a]
            gb = positions[plan.index_b]
            mixed_tiles[ga] = mix_pixels(tiles[ga], tiles[gb], plan.paste_box)
            new_t[ga] = mix_labels(
                SoftLabel(T[ga]), SoftLabel(T[gb]), plan.lambda_eff
            ).probs
    x = np.stack([t.reshape(-1) for t in mixed_tiles])
    return x, new_t


def run_experiment(cfg: TrainConfig, task: SynthTask, store: LabelStore) -> ExperimentResult:
    """Train one model under ``cfg`` and trace validation accuracy.

    The evaluation grid is step 0, every ``eval_every`` steps, and the
    final step.  Raises on a divergent (non-finite) loss with the step
    index attached.
    """
    if cfg.mode == "ferkd_surgical" and not store.is_calibrated:
        raise StateError("surgical training needs a calibrated store")
    records = list(store.records())
    if not records:
        raise EmptyInputError("store has no crops")
    maxp = np.array([r.teacher_max_prob() for r in records])
    if cfg.mode == "ferkd_surgical":
        kept = [i for i, r in enumerate(records) if r.status is not CropStatus.UR]
    else:
        kept = list(range(len(records)))
    kept = [i for i in kept if cfg.min_prob <= maxp[i] <= cfg.max_prob]
    if not kept:
        raise EmptyInputError("no training crops retained after filtering")
    discard_fraction = 1.0 - len(kept) / len(records)
    retained = [records[i] for i in kept]

    if cfg.mode == "ferkd_surgical":
        targets = [r.calibrated_label for r in retained]
    elif cfg.mode == "vkd":
        targets = []
        for r in retained:
            if r.gt_class is None:
                raise DataError(f"{r.image_id}: combined hard/soft loss needs ground truth")
            onehot = np.zeros(store.num_classes)
            onehot[r.gt_class.class_index] = 1.0
            targets.append(SoftLabel(cfg.alpha * onehot + (1.0 - cfg.alpha) * r.recovered().probs))
    else:
        targets = [r.recovered() for r in retained]

    images = {img.image_id: img for img in task.train + task.val}
    size = task.image_size
    tiles = []
    for r in retained:
        if r.image_id not in images:
            raise DataError(f"store references unknown image {r.image_id!r}")
        tiles.append(
            downsample_tile(images[r.image_id].pixels, pixel_box(r.bbox, size, size), r.hflip)
        )
    x_all = np.stack([t.reshape(-1) for t in tiles])
    t_all = np.stack([lab.probs for lab in targets])
    # the hard/soft blend shifts the loss by the soft-label entropy; keep it
    # so the reported loss matches the combined-loss definition
    ent = None
    if cfg.mode == "vkd":
        ent = np.array([entropy(r.recovered()) for r in retained])

    val_x = np.stack(
        [downsample_tile(v.pixels, (0, 0, size, size), False).reshape(-1) for v in task.val]
    )
    val_y = np.array([v.class_index for v in task.val])

    model = MLPModel(x_all.shape[1], cfg.hidden, store.num_classes, spawn(cfg.seed, "init"))
    policy = _order_policy(cfg, len(retained))

    def evaluate() -> float:
        return float(np.mean(np.argmax(model.predict(val_x), axis=1) == val_y))

    eval_points = [(0, evaluate())]
    t = 0
    epoch = 0
    checked = False
    while t < cfg.steps:
        order = order_records(retained, policy, derive(cfg.seed, "epoch", epoch))
        if cfg.selfmix:
            x_e, t_e = _apply_selfmix(tiles, t_all, retained, cfg, epoch)
        else:
            x_e, t_e = x_all, t_all
        for start in range(0, len(order), cfg.batch_size):
            if t >= cfg.steps:
                break
            batch = order[start : start + cfg.batch_size]
            xb = x_e[batch]
            tb = t_e[batch]
            z, cache = model.forward(xb)
            if not np.all(np.isfinite(z)):
                raise DivergenceError(f"non-finite activations at step {t}", step=t)
            loss_vec, grad_rows = sce_batch(z, tb)
            if not checked:
                _assert_gradient(z, tb, grad_rows)
                checked = True
            batch_loss = float(loss_vec.mean())
            if ent is not None:
                batch_loss -= (1.0 - cfg.alpha) * float(ent[batch].mean())
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at step {t}", step=t)
            lr_t = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t / cfg.steps))
            model.apply(model.backward(cache, grad_rows / len(batch)), lr_t, cfg.momentum)
            t += 1
            if t % cfg.eval_every == 0 or t == cfg.steps:
                eval_points.append((t, evaluate()))
        epoch += 1
    return ExperimentResult(
        mode=cfg.mode,
        seed=cfg.seed,
        steps=cfg.steps,
        eval_points=tuple(eval_points),
        discard_fraction=discard_fraction,
        train_size=len(retained),
    )


@dataclass(frozen=True)
class SweepPoint:
    """One retained-range setting and what it trained to."""

    min_prob: float
    max_prob: float
    final_accuracy: float
    discard_fraction: float


def min_max_filter_sweep(
    task: SynthTask,
    store: LabelStore,
    cfg: TrainConfig,
    thresholds: Sequence[tuple[float, float]],
) -> list[SweepPoint]:
    """Re-run the same experiment across retained max-probability ranges."""
    if not thresholds:
        raise EmptyInputError("sweep needs at least one (min, max) pair")
    points = []
    for lo, hi in thresholds:
        res = run_experiment(replace(cfg, min_prob=lo, max_prob=hi), task, store)
        points.append(
            SweepPoint(
                min_prob=lo,
                max_prob=hi,
                final_accuracy=res.final_accuracy,
                discard_fraction=res.discard_fraction,
            )
        )
    return points


def run_grid(
    task: SynthTask,
    store: LabelStore,
    cfg: TrainConfig,
    modes: Sequence[str],
    seeds: Sequence[int],
) -> list[ExperimentResult]:
    """Every (mode, seed) combination under an otherwise fixed config."""
    if not modes or not seeds:
        raise EmptyInputError("need at least one mode and one seed")
    return [
        run_experiment(replace(cfg, mode=m, seed=s), task, store)
        for m in modes
        for s in seeds
    ]


def format_metrics(results: Iterable[ExperimentResult]) -> list[str]:
    """One text row per evaluation point: step, mode, seed, accuracy."""
    lines = ["# step mode seed accuracy"]
    for res in results:
        for step, acc in res.eval_points:
            lines.append(f"{step} {res.mode} {res.seed} {acc:.6f}")
    return lines


def write_metrics(results: Iterable[ExperimentResult], path) -> int:
    """Write the metrics table; returns the number of data rows."""
    lines = format_metrics(results)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(lines) - 1


def parse_metrics(lines: Iterable[str]) -> list[tuple[int, str, int, float]]:
    """Inverse of format_metrics, for consumers of the emitted table."""
    rows = []
    for raw in lines:
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        step, mode, seed, acc = text.split()
        rows.append((int(step), mode, int(seed), float(acc)))
    return rows
