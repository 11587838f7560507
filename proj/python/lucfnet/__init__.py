"""Python bindings for the LUCF-Net segmentation library."""

import json as _json

from . import _core
from ._core import (
    CheckpointError,
    TrainingDiverged,
    UsageError,
    dsc,
    hausdorff,
    iou,
    lovasz_softmax,
    lr_schedule,
    ohem_loss,
)

__all__ = [
    "CheckpointError",
    "Model",
    "TrainingDiverged",
    "UsageError",
    "default_config",
    "dsc",
    "dump_features",
    "evaluate",
    "evaluate_labels",
    "gradcheck",
    "hausdorff",
    "iou",
    "lovasz_softmax",
    "lr_schedule",
    "ohem_loss",
    "preset",
    "summary",
    "synth",
    "train",
]


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else _json.dumps(config)


def default_config():
    """Full run configuration with every default filled in."""
    return _json.loads(_core.default_config())


def normalize_config(config):
    """Validates a (partial) run configuration and fills in defaults."""
    return _json.loads(_core.normalize_config(_dump(config)))


def preset(name="desk"):
    return _json.loads(_core.preset(name))


def summary(model=None, height=224, width=224, measure=False):
    return _json.loads(_core.summary(_dump(model or preset()), height, width, measure))


def gradcheck(seed=0, inject_fault=""):
    """Returns (passed, report)."""
    passed, report = _core.gradcheck(seed, inject_fault)
    return passed, _json.loads(report)


def synth(out, config=None, format="png", force=False):
    return _json.loads(_core.synth(_dump(config), str(out), format, force))


def train(data, out, config=None, grid=(), resume="", stop_at=-1, log_every=0):
    """Trains into `out`; returns the progress log as text."""
    return _core.train(_dump(config), str(data), str(out), list(grid), str(resume), stop_at, log_every)


def evaluate(checkpoint, data, out, config=None):
    return _json.loads(_core.evaluate(_dump(config), str(checkpoint), str(data), str(out)))


def evaluate_labels(pred, gt, num_classes, percentile=100.0):
    return _json.loads(_core.evaluate_labels(pred, gt, num_classes, percentile))


def dump_features(checkpoint, image, out, config=None):
    return _core.dump_features(_dump(config), str(checkpoint), str(image), str(out))


class Model:
    """Inference wrapper; inputs are float arrays of shape [B, C, H, W]."""

    def __init__(self, model=None, seed=0, _core_model=None):
        self._m = _core_model or _core.Model(_dump(model or preset()), seed)

    @classmethod
    def load(cls, checkpoint):
        return cls(_core_model=_core.Model.load(str(checkpoint)))

    @property
    def config(self):
        return _json.loads(self._m.config)

    @property
    def num_parameters(self):
        return self._m.num_parameters

    def forward(self, x):
        """Returns (fused logits, list of per-head logits)."""
        return self._m.forward(x)

    def predict(self, x):
        return self._m.predict(x)

    def features(self, x, stage):
        return self._m.features(x, stage)

    def save(self, path):
        self._m.save(str(path))
