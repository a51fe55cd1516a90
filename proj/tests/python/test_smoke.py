import json
import math

import numpy as np
import pytest

import maskpose


def test_pose_and_metrics():
    catalog = {m.object_id: m for m in maskpose.builtin_catalog()}
    model = catalog[1]
    gt = maskpose.Pose([1, 0, 0, 0], [0.0, 0.0, 0.8])
    shifted = maskpose.Pose([1, 0, 0, 0], [0.01, 0.0, 0.8])
    assert maskpose.add(model.points, gt, gt) == 0.0
    assert maskpose.add(model.points, gt, shifted) == pytest.approx(0.01, abs=1e-12)
    assert maskpose.add_s(model.points, gt, shifted) <= maskpose.add(model.points, gt, shifted)
    assert maskpose.auc([0.05], 0.10) == pytest.approx(50.0, abs=1e-9)
    assert maskpose.pct_below([0.01, 0.03]) == pytest.approx(50.0)

    half = math.sqrt(0.5)
    turn = maskpose.Pose([half, 0, 0, half], [0.1, 0.2, 0.3])
    both = turn @ turn.inverse()
    assert np.allclose(both.matrix, np.eye(3), atol=1e-12)
    assert np.allclose(turn.apply(np.array([[1.0, 0.0, 0.0]])), [[0.1, 1.2, 0.3]], atol=1e-12)
    assert maskpose.rotation_angle_between(turn, gt) == pytest.approx(math.pi / 2)


def test_synthetic_frame_round_trip(tmp_path):
    frame = maskpose.generate_scene(4, {"seed": 2})
    assert frame.color.shape == (64, 64, 3)
    assert frame.depth.shape == (64, 64)
    assert frame.annotations
    for a in frame.annotations:
        assert a.mask.sum() > 0
        assert np.all(frame.labels[a.mask == 1] == a.object_id)
    maskpose.write_frame(frame, tmp_path / "f")
    back = maskpose.load_frame(tmp_path / "f")
    assert np.array_equal(back.color, frame.color)
    assert np.abs(back.depth - frame.depth).max() <= 0.0005


def test_errors_map_to_exceptions(tmp_path):
    with pytest.raises(maskpose.ParseError):
        maskpose.load_frame(tmp_path / "absent")
    with pytest.raises(maskpose.MissingPrerequisite):
        maskpose.Project({"dataset_root": str(tmp_path / "none")}).train("seg")
    with pytest.raises(maskpose.InvalidArgument):
        maskpose.Project({"train_fraction": 2.0})
    with pytest.raises(maskpose.Error):
        maskpose.Pose([0, 0, 0, 0], [0, 0, 0])


def test_project_flow(tmp_path):
    config = {
        "dataset_root": str(tmp_path / "data"),
        "checkpoint_dir": str(tmp_path / "ckpt"),
        "output_dir": str(tmp_path / "out"),
        "train_fraction": 0.75,
        "segmentation": {"widths": [4, 4], "epochs": 1, "min_pixels": 0},
        "fusion": {"n_points": 16, "d_color": 4, "d_geom": 4, "d_mask": 4, "d_fused": 8,
                   "extractor_widths": [4], "head_widths": [8], "loss_points": 30, "epochs": 1},
        "refiner": {"hidden": 8, "epochs": 1, "start_threshold": 100.0},
        "use_gt_masks": True,
        "deterministic": True,
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    project = maskpose.Project(tmp_path / "config.json", seed=4)
    assert project.config["seed"] == 4
    project.generate(8)
    for stage in ("seg", "pose", "refine"):
        project.train(stage)
    predictions = project.infer("test")
    assert predictions.exists()
    report = project.evaluate(predictions)
    assert 0.0 <= report["average"]["auc"] <= 100.0

    estimator = maskpose.Estimator(tmp_path / "ckpt" / "pose.ckpt", tmp_path / "ckpt" / "seg.ckpt",
                                   tmp_path / "ckpt" / "refiner.ckpt")
    frame = maskpose.load_frame(tmp_path / "data" / "frames" / "000000")
    results = estimator.estimate(frame, use_gt_masks=True)
    assert [r.prediction.object_id for r in results] == sorted(a.object_id for a in frame.annotations)
    assert all(r.prediction.refined for r in results)
    again = estimator.estimate(frame, use_gt_masks=True)
    assert np.array_equal(results[0].prediction.pose.translation, again[0].prediction.pose.translation)
