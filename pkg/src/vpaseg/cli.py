"""Train template-based brain segmentation models and apply them from the command line."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augment import AugmentConfig, AugmentStream
from .checkpoint import CheckpointError, load_checkpoint
from .nifti import NiftiError, read_nifti, write_nifti
from .phantom import PhantomSpec, make_evaluation_subject, make_phantom
from .postprocess import NoBrainFoundError, finalize
from .train import ABLATION_SCHEDULE, DEFAULT_ARMS, DESK_SCHEDULE, TrainSchedule, run_ablation, run_training, write_logs_csv
from .unet import ShapeError, UNetConfig
from .volume import DegenerateVolumeError, LabelVolume, Volume, dice, dice_per_class, mse_split, normalize_max_one, resample

log = logging.getLogger("vpaseg")


class ConfigError(ValueError):
    pass


# -- run configuration ----------------------------------------------------------


def _pair(section, name, base_dir) -> Optional[dict]:
    if section is None:
        return None
    if not isinstance(section, dict):
        raise ConfigError(f"{name}: expected an object with 'image' and 'label'")
    unknown = set(section) - {"image", "label"}
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    missing = {"image", "label"} - set(section)
    if missing:
        raise ConfigError(f"{name}: missing {sorted(missing)}")
    return {k: os.path.abspath(os.path.join(base_dir, section[k])) for k in ("image", "label")}


def _dataclass_from(cls, section, name, **extra):
    section = dict(section or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    section.update(extra)
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _schedule(value, name) -> TrainSchedule:
    if isinstance(value, dict):
        if set(value) != {"rounds"}:
            raise ConfigError(f"{name}: expected {{'rounds': [...]}}")
        value = value["rounds"]
    try:
        return TrainSchedule(tuple(tuple(r) for r in value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass
class RunConfig:
    """Resolved contents of a JSON run configuration.

    Top-level keys: ``template`` ({image, label}), ``unet`` (UNetConfig
    fields), ``augment`` (``mode`` preset plus AugmentConfig fields),
    ``schedule`` (list of [lr, epochs, samples] rounds), ``seed``,
    ``output_dir``, ``eval`` (optional {image, label}) and ``ablation``
    (optional {schedule, arms}). Relative paths resolve against the
    config file's directory.
    """

    template: dict
    unet: UNetConfig = field(default_factory=UNetConfig)
    augment_mode: str = "standard"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    seed: int = 0
    output_dir: str = "run"
    eval: Optional[dict] = None
    ablation_schedule: TrainSchedule = ABLATION_SCHEDULE
    ablation_arms: tuple = tuple(DEFAULT_ARMS)

    KEYS = ("template", "unet", "augment", "schedule", "seed", "output_dir", "eval", "ablation")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "template" not in doc:
            raise ConfigError("config needs a 'template' section")
        aug = dict(doc.get("augment") or {})
        mode = aug.pop("mode", "standard")
        if mode not in ("standard", "tumor"):
            raise ConfigError(f"augment.mode must be 'standard' or 'tumor', got {mode!r}")
        if mode == "tumor":
            aug.setdefault("enable_cropping", True)
        augment = _dataclass_from(AugmentConfig, aug, "augment")
        abl = dict(doc.get("ablation") or {})
        unknown = set(abl) - {"schedule", "arms"}
        if unknown:
            raise ConfigError(f"ablation: unknown keys {sorted(unknown)}")
        arms = tuple(abl.get("arms", DEFAULT_ARMS))
        bad = [a for a in arms if a not in DEFAULT_ARMS]
        if bad:
            raise ConfigError(f"ablation.arms: unknown arms {bad} (known: {', '.join(DEFAULT_ARMS)})")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cls(
            template=_pair(doc["template"], "template", base_dir),
            unet=_dataclass_from(UNetConfig, doc.get("unet"), "unet"),
            augment_mode=mode,
            augment=augment,
            schedule=_schedule(doc["schedule"], "schedule") if "schedule" in doc else TrainSchedule(),
            seed=seed,
            output_dir=os.path.abspath(os.path.join(base_dir, doc.get("output_dir", "run"))),
            eval=_pair(doc.get("eval"), "eval", base_dir),
            ablation_schedule=_schedule(abl["schedule"], "ablation.schedule") if "schedule" in abl else ABLATION_SCHEDULE,
            ablation_arms=arms,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        aug = {"mode": self.augment_mode, **self.augment.to_dict()}
        return {
            "template": dict(self.template),
            "unet": self.unet.to_dict(),
            "augment": aug,
            "schedule": [list(r) for r in self.schedule.rounds],
            "seed": self.seed,
            "output_dir": self.output_dir,
            "eval": dict(self.eval) if self.eval else None,
            "ablation": {
                "schedule": [list(r) for r in self.ablation_schedule.rounds],
                "arms": list(self.ablation_arms),
            },
        }

    def write_resolved(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "config.resolved.json")
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


# -- helpers --------------------------------------------------------------------


def _read_image(path) -> Volume:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    vol, _ = read_nifti(path, kind="image")
    return normalize_max_one(vol)


def _read_label(path) -> LabelVolume:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    lab, _ = read_nifti(path, kind="label")
    return lab


def _load_pair(pair: dict):
    image = _read_image(pair["image"])
    label = _read_label(pair["label"])
    if image.dims != label.dims:
        raise ValueError(f"{pair['image']} dims {image.dims} != {pair['label']} dims {label.dims}")
    return image, label


def _to_grid(image: Volume, label: Optional[LabelVolume], dims, spacing):
    if image.dims != tuple(dims):
        image = resample(image, dims, spacing)
        image = normalize_max_one(Volume(np.maximum(image.data, 0.0), image.spacing))
        if label is not None:
            label = resample(label, dims, spacing, method="nearest")
    return image, label


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("VPA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"VPA_THREADS must be an integer, got {env!r}")
    return 1


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=os.path.abspath(args.out))
    return cfg


class Inference:
    """Moves an image onto a model's training grid and back."""

    def __init__(self, model, image: Volume):
        self.model = model
        self.input = image
        meta = model.meta
        if "meta.template_spacing" in meta:
            spacing = tuple(float(s) for s in meta["meta.template_spacing"])
            dims = tuple(
                max(1, int(round(image.dims[a] * image.spacing[a] / spacing[a]))) for a in range(3)
            )
        else:
            spacing, dims = image.spacing, image.dims
        self.dims, self.spacing = dims, spacing
        self.grid, _ = _to_grid(image, None, dims, spacing)
        div = model.config.divisor
        self.padded = tuple(-(-d // div) * div for d in dims)

    def on_grid(self, label: LabelVolume) -> LabelVolume:
        return resample(label, self.dims, self.spacing, method="nearest") if label.dims != self.dims else label

    def forward(self) -> np.ndarray:
        x = np.zeros(self.padded, np.float32)
        nx, ny, nz = self.dims
        x[:nx, :ny, :nz] = self.grid.data
        return self.model.forward(x, mode="eval")[:nx, :ny, :nz]

    def back(self, arr: np.ndarray, method: str) -> np.ndarray:
        if self.dims == self.input.dims:
            return arr
        if method == "nearest":
            src = LabelVolume(arr, self.spacing, max(1, int(arr.max())))
        else:
            src = Volume(arr.astype(np.float32), self.spacing)
        out = resample(src, self.input.dims, self.input.spacing, method)
        return out.data if isinstance(out, Volume) else out.labels


# -- commands -------------------------------------------------------------------


def cmd_phantom(args) -> int:
    out = args.out or "phantom"
    os.makedirs(out, exist_ok=True)
    spec = PhantomSpec(
        dims=tuple(args.dims),
        seed=args.seed if args.seed is not None else 0,
        axis_scale=tuple(args.axis_scale),
    )
    image, label = make_phantom(spec)
    subj_image, subj_label = make_evaluation_subject(spec, perturb_seed=args.perturb_seed)
    names = {
        "template_image.nii.gz": (Volume(image), "float32"),
        "template_label.nii.gz": (LabelVolume(label), "uint8"),
        "subject_image.nii.gz": (Volume(subj_image), "float32"),
        "subject_label.nii.gz": (LabelVolume(subj_label), "uint8"),
    }
    for name, (vol, dtype) in names.items():
        write_nifti(vol, os.path.join(out, name), dtype)
    config = {
        "template": {"image": "template_image.nii.gz", "label": "template_label.nii.gz"},
        "eval": {"image": "subject_image.nii.gz", "label": "subject_label.nii.gz"},
        "unet": {"levels": 3, "base_features": 8},
        "schedule": [list(r) for r in DESK_SCHEDULE.rounds],
        "seed": 0,
        "output_dir": "run",
    }
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")
    print(f"wrote phantom pair and evaluation subject to {out}")
    return 0


def cmd_augment(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir if args.out is None else args.out
    os.makedirs(out, exist_ok=True)
    image, label = _load_pair(cfg.template)
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    pairs = []
    with AugmentStream(image.data, label.labels, cfg.augment, cfg.seed, _threads(args)) as stream:
        for i, (img, lab) in enumerate(stream.batch(0, args.count)):
            write_nifti(Volume(img, image.spacing), os.path.join(out, f"aug_{i:04d}_image.nii.gz"))
            write_nifti(LabelVolume(lab, label.spacing, label.num_classes), os.path.join(out, f"aug_{i:04d}_label.nii.gz"), "uint8")
            pairs.append((img, lab))
    if pairs:
        from .plotting import montage

        montage(pairs, os.path.join(out, "montage.png"))
    print(f"wrote {len(pairs)} augmented pairs to {out}")
    return 0


def _eval_pair(cfg: RunConfig, template: Volume):
    if cfg.eval is None:
        return None
    image, label = _load_pair(cfg.eval)
    if image.dims != template.dims:
        log.warning("resampling evaluation pair %s onto the template grid %s", image.dims, template.dims)
        image, label = _to_grid(image, label, template.dims, template.spacing)
    return image.data, label.labels


def cmd_train(args) -> int:
    cfg = _config(args)
    image, label = _load_pair(cfg.template)
    if int(label.labels.max()) > cfg.unet.out_channels:
        raise ConfigError(
            f"label value {int(label.labels.max())} exceeds unet.out_channels = {cfg.unet.out_channels}"
        )
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write_resolved(cfg.output_dir)
    run_training(
        image.data, label.labels, cfg.unet, cfg.augment, cfg.schedule, cfg.seed, _eval_pair(cfg, image),
        out_dir=cfg.output_dir, threads=_threads(args), spacing=image.spacing,
    )
    print(f"training finished; checkpoints and training_log.csv in {cfg.output_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    image, label = _load_pair(cfg.template)
    names = tuple(args.arms.split(",")) if args.arms else cfg.ablation_arms
    bad = [n for n in names if n not in DEFAULT_ARMS]
    if bad:
        raise ConfigError(f"unknown arms {bad} (known: {', '.join(DEFAULT_ARMS)})")
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write_resolved(cfg.output_dir)
    # stage switches come from the arm, sampling ranges from the config
    arms = {n: dataclasses.replace(cfg.augment, **_switches(DEFAULT_ARMS[n])) for n in names}

    def on_arm(name, logs):
        write_logs_csv(logs, os.path.join(cfg.output_dir, f"ablation_{name}.csv"))
        last = logs[-1]
        ev = last.evaluation_error.foreground_mse if last.evaluation_error else float("nan")
        print(f"{name}: template fg {last.template_error.foreground_mse:.5f} eval fg {ev:.5f}")

    results = run_ablation(
        image.data, label.labels, _eval_pair(cfg, image), arms, cfg.ablation_schedule, cfg.seed, cfg.unet,
        threads=_threads(args), on_arm=on_arm,
    )
    from .plotting import error_curves

    error_curves(results, os.path.join(cfg.output_dir, "ablation_curves.png"))
    return 0


def _switches(cfg: AugmentConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name.startswith("enable_")}


def cmd_segment(args) -> int:
    model = load_checkpoint(args.checkpoint)
    image = _read_image(args.image)
    inf = Inference(model, image)
    result = finalize(inf.grid.data, inf.forward())
    label = inf.back(result.label, "nearest").astype(np.uint8)
    mask = label > 0
    stripped = np.where(mask, image.data, 0.0).astype(np.float32)
    out = args.out or "segmentation"
    os.makedirs(out, exist_ok=True)
    write_nifti(Volume(stripped, image.spacing), os.path.join(out, "skull_stripped.nii.gz"))
    write_nifti(LabelVolume(label, image.spacing, max(5, model.config.out_channels)), os.path.join(out, "label.nii.gz"), "uint8")
    for k in range(result.prob_maps.shape[-1]):
        prob = np.clip(inf.back(result.prob_maps[..., k], "cubic_spline"), 0.0, 1.0)
        prob = np.where(mask, prob, 0.0).astype(np.float32)
        write_nifti(Volume(prob, image.spacing), os.path.join(out, f"prob_class{k + 1}.nii.gz"))
    print(f"brain mask: {int(mask.sum())} voxels; outputs in {out}")
    if args.truth:
        truth = _read_label(args.truth)
        if truth.dims != image.dims:
            raise ValueError(f"truth dims {truth.dims} != image dims {image.dims}")
        scores = dice_per_class(label, truth.labels, model.config.out_channels)
        for k, d in scores.items():
            print(f"dice class {k}: {d:.4f}")
        print(f"dice mask: {dice(mask, truth.labels > 0):.4f}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    image = _read_image(args.image)
    label = _read_label(args.label)
    if label.dims != image.dims:
        log.warning("label dims %s differ from image dims %s; resampling label (nearest)", label.dims, image.dims)
        label = resample(label, image.dims, image.spacing, method="nearest")
    inf = Inference(model, image)
    truth = inf.on_grid(label).labels
    output = inf.forward()
    split = mse_split(output, truth)
    try:
        result = finalize(inf.grid.data, output)
        pred, mask = result.label, result.brain_mask
    except NoBrainFoundError:
        log.warning("no brain found; Dice scores are zero")
        pred = np.zeros(truth.shape, np.uint8)
        mask = pred > 0
    record = {
        "foreground_mse": split.foreground_mse,
        "background_mse": split.background_mse,
        "total_mse": split.total_mse,
        "foreground_count": split.foreground_count,
        "background_count": split.background_count,
        "dice": {str(k): v for k, v in dice_per_class(pred, truth, model.config.out_channels).items()},
        "dice_mask": dice(mask, truth > 0),
    }
    print(json.dumps(record, sort_keys=True))
    return 0


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpaseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--threads", type=int, help="augmentation workers (default $VPA_THREADS or 1)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("phantom", help="write a synthetic template pair and evaluation subject")
    common(p, False)
    p.add_argument("--dims", type=int, nargs=3, default=(32, 32, 32))
    p.add_argument("--axis-scale", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.add_argument("--perturb-seed", type=int, default=1)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("augment", help="write augmented image/label pairs and a montage")
    common(p, True)
    p.add_argument("--count", type=int, default=64)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a model from one template")
    common(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="one short training run per augmentation arm")
    common(p, True)
    p.add_argument("--arms", help=f"comma-separated subset of: {', '.join(DEFAULT_ARMS)}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("segment", help="segment an image with a trained checkpoint")
    common(p, False)
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--truth", help="ground-truth label; prints Dice scores")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="error split and Dice as one JSON line")
    common(p, False)
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("label")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (
        ConfigError,
        CheckpointError,
        NiftiError,
        ShapeError,
        DegenerateVolumeError,
        NoBrainFoundError,
        FileNotFoundError,
        ValueError,
        RuntimeError,
    ) as exc:
        print(f"vpaseg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
