"""Mask-based 6D object pose estimation for RGB-D frames."""

import json
from pathlib import Path

from ._core import (
    Annotation,
    CameraIntrinsics,
    DataMismatch,
    Error,
    Estimator,
    FramePrediction,
    InvalidArgument,
    MissingPrerequisite,
    ObjectModel,
    ParseError,
    Pose,
    PosePrediction,
    RgbdFrame,
    add,
    add_s,
    auc,
    builtin_catalog,
    load_frame,
    pct_below,
    rotation_angle_between,
    write_frame,
)
from . import _core

__all__ = [
    "Annotation", "CameraIntrinsics", "DataMismatch", "Error", "Estimator", "FramePrediction",
    "InvalidArgument", "MissingPrerequisite", "ObjectModel", "ParseError", "Pose", "PosePrediction",
    "RgbdFrame", "Project", "add", "add_s", "auc", "builtin_catalog", "generate_scene", "load_frame",
    "pct_below", "rotation_angle_between", "write_frame",
]


def generate_scene(index, config=None):
    """Renders one synthetic frame; `config` holds scene settings as a dict."""
    return _core._generate_scene(json.dumps(config or {}), index)


class Project:
    """Runs the command stages against one run configuration.

    `config` is a dict or a path to a JSON file; `seed` overrides its global seed.
    """

    def __init__(self, config=None, seed=None):
        if isinstance(config, (str, Path)):
            config = json.loads(Path(config).read_text())
        self._json = json.dumps(config or {})
        self._seed = seed
        self.config = json.loads(_core._run_config(self._json, seed))

    def generate(self, count=0):
        return _core._generate(self._json, self._seed, count)

    def train(self, stage):
        return _core._train(self._json, self._seed, stage)

    def infer(self, split="test"):
        path, _ = _core._infer(self._json, self._seed, split)
        return Path(path)

    def evaluate(self, predictions, split="test", out_dir=None):
        out = Path(out_dir) if out_dir else Path(self.config["output_dir"]) / "eval"
        return json.loads(_core._evaluate(self._json, self._seed, str(predictions), split, str(out)))
