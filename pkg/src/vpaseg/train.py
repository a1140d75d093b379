"""Template-based training: augmented samples only, gradient accumulation, error logging."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .augment import AugmentConfig, AugmentStream
from .checkpoint import save_checkpoint
from .unet import AdamState, UNetConfig, UNetModel, adam_step
from .volume import ErrorSplit, mse_split

log = logging.getLogger(__name__)

PAPER_ROUNDS = ((0.001, 1000, 8), (0.0005, 2000, 16), (0.00025, 2000, 32))
CSV_HEADER = ("round", "epoch", "train_mse", "template_fg", "template_bg", "eval_fg", "eval_bg", "seconds")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    """Rounds of ``(learning_rate, epochs, samples_per_epoch)``."""

    rounds: tuple = PAPER_ROUNDS

    def __post_init__(self):
        rounds = tuple((float(lr), int(ep), int(n)) for lr, ep, n in self.rounds)
        if not rounds:
            raise ValueError("schedule needs at least one round")
        for lr, ep, n in rounds:
            if not lr > 0 or ep < 1 or n < 1:
                raise ValueError(f"invalid round (lr={lr}, epochs={ep}, samples={n})")
        object.__setattr__(self, "rounds", rounds)

    @property
    def total_epochs(self) -> int:
        return sum(ep for _, ep, _ in self.rounds)

    @property
    def total_samples(self) -> int:
        return sum(ep * n for _, ep, n in self.rounds)


# desk-scale stand-in for the three paper rounds
DESK_SCHEDULE = TrainSchedule(((0.001, 300, 2), (0.0005, 150, 4), (0.00025, 100, 4)))
ABLATION_SCHEDULE = TrainSchedule(((0.001, 200, 1),))


@dataclass
class EpochLog:
    epoch: int
    round: int
    training_error: float
    template_error: ErrorSplit
    evaluation_error: Optional[ErrorSplit] = None
    seconds: float = 0.0
    sample_seeds: tuple = field(default=(), repr=False)

    def csv_row(self) -> list:
        def g(x):
            return "" if x is None else f"{x:.9g}"

        ev = self.evaluation_error
        return [
            str(self.round),
            str(self.epoch),
            g(self.training_error),
            g(self.template_error.foreground_mse),
            g(self.template_error.background_mse),
            g(ev.foreground_mse if ev else None),
            g(ev.background_mse if ev else None),
            g(self.seconds),
        ]


def write_logs_csv(logs, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for entry in logs:
            w.writerow(entry.csv_row())


def read_logs_csv(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def compute_split_error(model: UNetModel, image: np.ndarray, label: np.ndarray) -> ErrorSplit:
    """Eval-mode forward (no state change) scored against the one-hot label."""
    image = np.asarray(image)
    label = np.asarray(label)
    if image.shape != label.shape:
        raise ValueError(f"image dims {image.shape} != label dims {label.shape}")
    return mse_split(model.forward(image, mode="eval"), label)


def train_step(model: UNetModel, adam: AdamState, samples, learning_rate: float) -> float:
    """Forward/backward each sample singly, accumulate, then one Adam step."""
    losses = [model.backward(image, label) for image, label in samples]
    adam_step(model, adam, learning_rate)
    return float(np.mean(losses))


def run_training(
    template: np.ndarray,
    label: np.ndarray,
    unet_config: UNetConfig,
    augment_config: AugmentConfig,
    schedule: TrainSchedule = TrainSchedule(),
    master_seed: int = 0,
    eval_pair=None,
    *,
    init_seed: Optional[int] = None,
    out_dir=None,
    threads: int = 1,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
    spacing=(1.0, 1.0, 1.0),
):
    """Train a fresh U-Net from one template; returns ``(model, logs)``.

    Sample ``i`` of the run (counted across all rounds) is augmented with the
    seed derived from ``(master_seed, i)``, so no augmented image repeats.
    With ``out_dir`` a CSV log is streamed and a checkpoint written at each
    round boundary. ``spacing`` is the template's voxel size, stored in the
    checkpoint so inference can resample new images onto the training grid.
    """
    template = np.asarray(template, dtype=np.float32)
    label = np.asarray(label, dtype=np.uint8)
    if template.shape != label.shape:
        raise ValueError(f"template dims {template.shape} != label dims {label.shape}")
    if eval_pair is not None:
        ev_img, ev_lab = (np.asarray(a) for a in eval_pair)
        if ev_img.shape != template.shape or ev_lab.shape != template.shape:
            raise ValueError("evaluation pair must be resampled to the template dims")
    model = UNetModel(unet_config, seed=master_seed if init_seed is None else init_seed)
    model._prepare(template)  # validates divisibility before any work
    adam = AdamState.for_model(model)
    logs: list[EpochLog] = []

    csv_file = writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_file = open(os.path.join(out_dir, "training_log.csv"), "w", newline="")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(CSV_HEADER)

    stream = AugmentStream(template, label, augment_config, master_seed, threads)
    plan = []
    for r, (lr, epochs, n) in enumerate(schedule.rounds):
        plan.extend((r, lr, n, e == epochs - 1) for e in range(epochs))
    try:
        counter = 0
        pending = stream.submit_batch(0, plan[0][2])
        for epoch, (r, lr, n, last_of_round) in enumerate(plan, start=1):
            t0 = time.perf_counter()
            samples = pending()
            seeds = tuple(stream.seed_for(i) for i in range(counter, counter + n))
            counter += n
            if epoch < len(plan):
                pending = stream.submit_batch(counter, plan[epoch][2])
            try:
                train_err = train_step(model, adam, samples, lr)
            except FloatingPointError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (sample seeds {', '.join(map(str, seeds))})"
                ) from exc
            tmpl = compute_split_error(model, template, label)
            ev = compute_split_error(model, *eval_pair) if eval_pair is not None else None
            entry = EpochLog(epoch, r, train_err, tmpl, ev, time.perf_counter() - t0, seeds)
            logs.append(entry)
            if writer is not None:
                writer.writerow(entry.csv_row())
                csv_file.flush()
            if on_epoch is not None:
                on_epoch(entry)
            if epoch % 50 == 0 or epoch == 1:
                log.info("epoch %d round %d train %.5f template fg %.5f", epoch, r, train_err,
                         tmpl.foreground_mse or 0.0)
            if out_dir is not None and last_of_round:
                path = os.path.join(out_dir, f"checkpoint_round{r + 1}_epoch{epoch}.vpau")
                save_checkpoint(with_template_meta(model, template, spacing), path, adam, epoch)
    finally:
        stream.close()
        if csv_file is not None:
            csv_file.close()
    with_template_meta(model, template, spacing)
    if out_dir is not None:
        save_checkpoint(model, os.path.join(out_dir, "final.vpau"), adam, len(plan))
    return model, logs


def with_template_meta(model: UNetModel, template: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> UNetModel:
    """Record the training grid so inference can resample onto it."""
    if "meta.template_dims" not in model.meta:
        model.meta["meta.template_dims"] = np.asarray(template.shape, dtype=np.float32)
        model.meta["meta.template_spacing"] = np.asarray(spacing, dtype=np.float32)
    return model


DEFAULT_ARMS = {
    "rigid": AugmentConfig.only("rigid"),
    "rigid_camera": AugmentConfig.only("rigid", "camera"),
    "rigid_reduction": AugmentConfig.only("rigid", "reduction"),
    "rigid_cropping": AugmentConfig.only("rigid", "cropping"),
    "rigid_lighting": AugmentConfig.only("rigid", "lighting"),
    "rigid_textures": AugmentConfig.only("rigid", "textures"),
    "all_minus_cropping": AugmentConfig.preset("standard"),
    "all": AugmentConfig.preset("tumor"),
}


def run_ablation(
    template,
    label,
    eval_pair,
    arms=None,
    short_schedule: TrainSchedule = ABLATION_SCHEDULE,
    master_seed: int = 0,
    unet_config: UNetConfig = UNetConfig(levels=3, base_features=4),
    *,
    init_seed: int = 0,
    threads: int = 1,
    on_arm: Optional[Callable[[str, list], None]] = None,
) -> dict:
    """One training run per augmentation arm, all from the same initial weights.

    ``arms`` maps names to configs (a plain list gets names ``arm0``...).
    Returns ``{name: logs}``.
    """
    if arms is None:
        arms = DEFAULT_ARMS
    if not isinstance(arms, dict):
        arms = {f"arm{i}": cfg for i, cfg in enumerate(arms)}
    if not arms:
        raise ValueError("ablation needs at least one arm")
    results = {}
    for name, cfg in arms.items():
        log.info("ablation arm %s", name)
        _, logs = run_training(
            template, label, unet_config, cfg, short_schedule, master_seed, eval_pair,
            init_seed=init_seed, threads=threads,
        )
        results[name] = logs
        if on_arm is not None:
            on_arm(name, logs)
    return results
