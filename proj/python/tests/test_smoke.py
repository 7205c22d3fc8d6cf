import math
import os

import numpy as np
import pytest

import mmpkd


def test_soft_label_and_loss():
    assert mmpkd.soft_label(2.0, 2.0) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)
    assert mmpkd.soft_label(-3.0, 1.0) < 0.5
    p = [0.9, 0.2, 0.6]
    hard = [1.0, 0.0, 1.0]
    bce = -sum(math.log(x) if y else math.log(1 - x) for x, y in zip(p, hard)) / 3
    assert mmpkd.distill_loss(hard, [0.5] * 3, p, 0.0) == pytest.approx(bce, abs=1e-12)


def test_mann_whitney_worked_case():
    u, p, exact = mmpkd.mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert (u, p, exact) == (0.0, 0.1, True)


def test_box_metrics():
    assert mmpkd.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    mask = np.zeros((8, 8))
    mask[2:5, 1:4] = 1
    assert mmpkd.pixel_auroc(mask, mask) == 1.0
    assert mmpkd.extract_boxes(mask, 0.9, 1) == [(1, 2, 4, 5)]
    assert mmpkd.pixel_auroc(np.zeros((4, 4)), np.zeros((4, 4))) is None


def test_dataset_and_student():
    ds = mmpkd.generate_dataset({"n_train": 8, "n_val": 4, "n_test": 4, "seed": 3})
    assert [len(ds[s]) for s in ("train", "val", "test")] == [8, 4, 4]
    sample = ds["test"][0]
    assert sample["image"].shape == (32, 32)
    assert sample["roi_mask"].sum() > 0

    vit = mmpkd.StudentViT({"dim": 16, "depth": 1, "heads": 2, "mlp_hidden": 32}, seed=1)
    logit, attn = vit.infer(sample["image"])
    assert logit == 0.0  # zero-initialized head
    assert attn.shape == (32, 32)
    assert attn.min() >= 0.0 and attn.max() <= 1.0


def test_cli_exit_codes(tmp_path):
    out = tmp_path / "out"
    code, _, err = mmpkd.cli(["-o", str(out), "train-student", "--mode", "mmpkd"])
    assert code == 2
    assert "teacher_required" in err
    assert not out.exists()
    assert mmpkd.cli(["--help"])[0] == 0
    assert mmpkd.cli(["no-such-command"])[0] == 1


def test_tiny_experiment(tmp_path):
    cfg = {
        "generator": {"n_train": 24, "n_val": 12, "n_test": 12},
        "student": {"dim": 16, "depth": 1, "heads": 2, "mlp_hidden": 32},
        "training": {"epochs": 2, "batch_size": 8},
        "seeds": [1, 2],
        "evaluation": {"overlays_per_mode": 2},
    }
    ex = mmpkd.Experiment(cfg, str(tmp_path))
    ex.run_pipeline()
    reports = tmp_path / "reports"
    text = (reports / "comparison_last_cls.txt").read_text()
    assert "predictive_auroc" in text and ex.config_digest in text
    assert len(os.listdir(reports / "overlays")) == 4
    assert (tmp_path / "runs" / "mmpkd" / "2" / "student.ckpt").exists()

    before = (reports / "comparison_rollout.csv").read_bytes()
    ex.write_reports()
    assert (reports / "comparison_rollout.csv").read_bytes() == before
