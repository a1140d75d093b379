import csv

import numpy as np
import pytest

from vpaseg.augment import AugmentConfig
from vpaseg.checkpoint import load_checkpoint
from vpaseg.rng import derive_seed
from vpaseg.train import (
    ABLATION_SCHEDULE,
    CSV_HEADER,
    TrainingError,
    TrainSchedule,
    compute_split_error,
    read_logs_csv,
    run_ablation,
    run_training,
    write_logs_csv,
)
from vpaseg.unet import AdamState, UNetConfig, UNetModel, adam_step
from vpaseg.volume import one_hot

SMALL = UNetConfig(levels=2, base_features=2)


def _small_pair(phantom):
    img, lab = phantom
    return img[8:24, 8:24, 8:24].copy(), lab[8:24, 8:24, 8:24].copy()


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(())
    with pytest.raises(ValueError):
        TrainSchedule(((0.0, 1, 1),))
    with pytest.raises(ValueError):
        TrainSchedule(((0.001, 0, 1),))
    with pytest.raises(ValueError):
        TrainSchedule(((0.001, 1, 0),))
    s = TrainSchedule(((0.001, 3, 2), (0.0005, 2, 4)))
    assert s.total_epochs == 5
    assert s.total_samples == 14


def test_single_step_reduces_template_loss(phantom):
    img, lab = phantom
    cfg = UNetConfig(levels=3, base_features=4)
    before = UNetModel(cfg, seed=0)
    # train-mode loss is what the step descends; eval-mode would mix in running-stat drift
    target = one_hot(lab, cfg.out_channels)
    loss0 = float(np.mean((before.copy().forward(img, "train", False) - target) ** 2))
    model, logs = run_training(img, lab, cfg, AugmentConfig.all_off(), TrainSchedule(((0.001, 1, 1),)), 0)
    loss1 = float(np.mean((model.copy().forward(img, "train", False) - target) ** 2))
    assert len(logs) == 1
    assert loss1 < loss0


def test_untrained_foreground_error_is_one_over_k(phantom):
    img, lab = phantom
    model = UNetModel(UNetConfig(levels=3, base_features=4), seed=0)
    split = compute_split_error(model, img, lab)
    out = model.forward(img)
    assert np.abs(out).max() < 0.2
    assert split.foreground_mse == pytest.approx(1 / 5, abs=0.02)
    assert split.background_mse < 0.01


def test_split_error_of_perfect_output_is_zero(phantom, monkeypatch):
    img, lab = phantom
    model = UNetModel(UNetConfig(levels=3, base_features=4), seed=0)
    monkeypatch.setattr(model, "forward", lambda x, mode="eval": one_hot(lab, 5))
    split = compute_split_error(model, img, lab)
    assert split.foreground_mse == 0.0
    assert split.background_mse == 0.0
    assert split.total_mse == 0.0


def test_split_error_recombines(phantom):
    img, lab = phantom
    split = compute_split_error(UNetModel(UNetConfig(levels=3, base_features=4), seed=3), img, lab)
    nf = int((lab > 0).sum())
    nb = lab.size - nf
    assert split.total_mse == pytest.approx((nf * split.foreground_mse + nb * split.background_mse) / lab.size, rel=1e-9)


def test_split_error_dim_mismatch(phantom):
    img, lab = phantom
    with pytest.raises(ValueError):
        compute_split_error(UNetModel(SMALL), img, lab[:16])


def test_template_error_leaves_state_untouched(phantom):
    img, lab = _small_pair(phantom)
    model = UNetModel(SMALL, seed=1)
    adam = AdamState.for_model(model)
    model.backward(img, lab)
    adam_step(model, adam, 0.001)
    model.backward(img, lab)  # leave a live gradient buffer
    before = model.state_checksum(extra=(adam.m, adam.v))
    compute_split_error(model, img, lab)
    assert model.state_checksum(extra=(adam.m, adam.v)) == before
    assert adam.step == 1


def test_each_seed_used_once(phantom):
    img, lab = _small_pair(phantom)
    schedule = TrainSchedule(((0.001, 3, 2), (0.0005, 2, 3)))
    _, logs = run_training(img, lab, SMALL, AugmentConfig.preset("standard"), schedule, 42)
    seeds = [s for e in logs for s in e.sample_seeds]
    assert len(seeds) == schedule.total_samples
    assert len(set(seeds)) == len(seeds)
    assert seeds == [derive_seed(42, i) for i in range(len(seeds))]
    assert [e.round for e in logs] == [0, 0, 0, 1, 1]
    assert [e.epoch for e in logs] == [1, 2, 3, 4, 5]


def test_runs_are_bitwise_reproducible(phantom, tmp_path):
    img, lab = _small_pair(phantom)
    schedule = TrainSchedule(((0.001, 2, 2),))
    for d in ("a", "b"):
        run_training(img, lab, SMALL, AugmentConfig.preset("standard"), schedule, 5, out_dir=tmp_path / d, threads=2)
    a = (tmp_path / "a" / "final.vpau").read_bytes()
    b = (tmp_path / "b" / "final.vpau").read_bytes()
    assert a == b


def test_thread_count_does_not_change_result(phantom):
    img, lab = _small_pair(phantom)
    schedule = TrainSchedule(((0.001, 2, 3),))
    m1, _ = run_training(img, lab, SMALL, AugmentConfig.preset("tumor"), schedule, 9, threads=1)
    m3, _ = run_training(img, lab, SMALL, AugmentConfig.preset("tumor"), schedule, 9, threads=3)
    assert m1.state_checksum() == m3.state_checksum()


def test_output_files(phantom, subject, tmp_path):
    img, lab = _small_pair(phantom)
    ev = tuple(a[8:24, 8:24, 8:24].copy() for a in subject)
    schedule = TrainSchedule(((0.001, 2, 1), (0.0005, 1, 2)))
    model, logs = run_training(
        img, lab, SMALL, AugmentConfig.all_off(), schedule, 0, ev, out_dir=tmp_path, spacing=(0.5, 0.5, 0.5)
    )
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["checkpoint_round1_epoch2.vpau", "checkpoint_round2_epoch3.vpau", "final.vpau", "training_log.csv"]
    with open(tmp_path / "training_log.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 4
    for row, entry in zip(rows[1:], logs):
        assert row[0] == str(entry.round) and row[1] == str(entry.epoch)
        assert float(row[3]) == pytest.approx(entry.template_error.foreground_mse, rel=1e-8)
        assert float(row[5]) == pytest.approx(entry.evaluation_error.foreground_mse, rel=1e-8)
        assert all(len(v.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 9 for v in row[2:])
    final = load_checkpoint(tmp_path / "final.vpau")
    assert final.state_checksum() == model.state_checksum()
    np.testing.assert_array_equal(final.meta["meta.template_spacing"], [0.5, 0.5, 0.5])


def test_csv_helpers_round_trip(phantom, tmp_path):
    img, lab = _small_pair(phantom)
    _, logs = run_training(img, lab, SMALL, AugmentConfig.all_off(), TrainSchedule(((0.001, 2, 1),)), 0)
    write_logs_csv(logs, tmp_path / "log.csv")
    rows = read_logs_csv(tmp_path / "log.csv")
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert rows[0]["eval_fg"] == ""


def test_eval_pair_must_match_dims(phantom, subject):
    img, lab = _small_pair(phantom)
    with pytest.raises(ValueError, match="evaluation pair"):
        run_training(img, lab, SMALL, AugmentConfig.all_off(), TrainSchedule(((0.001, 1, 1),)), 0, subject)


def test_nan_loss_aborts_with_epoch_and_seed(phantom, monkeypatch):
    img, lab = _small_pair(phantom)
    calls = {"n": 0}
    real = UNetModel.backward

    def flaky(self, x, label, update_stats=True):
        calls["n"] += 1
        if calls["n"] == 3:
            raise FloatingPointError("non-finite loss")
        return real(self, x, label, update_stats)

    monkeypatch.setattr(UNetModel, "backward", flaky)
    with pytest.raises(TrainingError) as info:
        run_training(img, lab, SMALL, AugmentConfig.all_off(), TrainSchedule(((0.001, 5, 1),)), 7)
    msg = str(info.value)
    assert "epoch 3" in msg
    assert str(derive_seed(7, 2)) in msg


def test_degenerate_ablation_matches_plain_run(phantom, subject):
    img, lab = _small_pair(phantom)
    ev = tuple(a[8:24, 8:24, 8:24].copy() for a in subject)
    schedule = TrainSchedule(((0.001, 3, 1),))
    res = run_ablation(img, lab, ev, [AugmentConfig.all_off()], schedule, 4, SMALL, init_seed=0)
    _, plain = run_training(img, lab, SMALL, AugmentConfig.all_off(), schedule, 4, ev, init_seed=0)
    got = res["arm0"]
    assert len(got) == len(plain) == 3
    for a, b in zip(got, plain):
        assert a.training_error == b.training_error
        assert a.template_error == b.template_error
        assert a.evaluation_error == b.evaluation_error


def test_ablation_arms_share_initialization_and_length(phantom, subject):
    img, lab = _small_pair(phantom)
    ev = tuple(a[8:24, 8:24, 8:24].copy() for a in subject)
    schedule = TrainSchedule(((0.001, 4, 1),))
    arms = {"rigid": AugmentConfig.only("rigid"), "off": AugmentConfig.all_off()}
    res = run_ablation(img, lab, ev, arms, schedule, 0, SMALL)
    assert set(res) == {"rigid", "off"}
    assert all(len(v) == schedule.total_epochs for v in res.values())
    with pytest.raises(ValueError):
        run_ablation(img, lab, ev, {}, schedule, 0, SMALL)


def test_default_ablation_schedule():
    assert ABLATION_SCHEDULE.rounds == ((0.001, 200, 1),)


@pytest.mark.slow
def test_desk_scale_template_error_drops_tenfold(phantom):
    img, lab = phantom
    cfg = UNetConfig(levels=3, base_features=4)
    _, logs = run_training(img, lab, cfg, AugmentConfig.all_off(), ABLATION_SCHEDULE, 0)
    first = logs[0].template_error.foreground_mse
    last = logs[-1].template_error.foreground_mse
    assert first / last >= 10.0, f"foreground MSE {first:.4f} -> {last:.4f} ({first / last:.2f}x)"
