"""
Checkpoint document
-------------------
{
    "format_version": 1,
    "variant": "pam",
    "num_classes": 12,
    "streams": ["joint", "bone"],
    "loss_weights": {"lambda_body": 1.0, "lambda_hand": 1.0, "lambda_cpl": 1.0},
    "config": {run configuration fields},
    "history": [{"stream": "joint", "phase": "joint", "epoch": 0, "loss": ..., "accuracy": ...}, ...],
    "parameters": {"joint.body.blocks.0.spatial.weight": {"shape": [3, 3, 16], "values": [... row-major ...]}, ...}
}

Parameters include normalization running statistics and frozen random features.
"""
from collections import OrderedDict
import logging

import torch

from .errors import ValidationError, UnsupportedVersionError
from .models import build_model
from .run_config import run_config_from_dict, loss_weights
from .snippets.ojson import load, dump


logger = logging.getLogger(__name__)


FORMAT_VERSION = 1


class CheckpointError(ValidationError):
    pass


def _tensor_to_dict(tensor):
    tensor = tensor.detach().cpu()
    values = tensor.reshape(-1).tolist() if not tensor.is_floating_point() else \
        tensor.to(torch.float64).reshape(-1).tolist()
    return OrderedDict([("shape", list(tensor.shape)), ("values", values)])


def _tensor_from_dict(path, d):
    try:
        shape = [int(s) for s in d["shape"]]
        return torch.tensor(d["values"], dtype=torch.float64).reshape(shape)
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise CheckpointError("parameters.%s: malformed tensor (%s)" % (path, e)) from None


class Checkpoint:
    def __init__(self, config, num_classes, models, history=None):
        """
        Parameters
        ----------
        config: run configuration the models were built from
        num_classes: classifier width
        models: {modality stream (joint, bone): model}
        history: loss history records
        """
        self.config = config
        self.num_classes = num_classes
        self.models = OrderedDict(models)
        self.history = [] if history is None else list(history)
        missing = [s for s in config.streams if s not in self.models]
        if len(missing) > 0:
            raise CheckpointError("no model for configured streams %s" % missing)

    @property
    def variant(self):
        return self.config.variant

    @property
    def streams(self):
        return list(self.models)

    @property
    def loss_weights(self):
        return loss_weights(self.config)

    def parameters_dict(self):
        d = OrderedDict()
        for stream, model in self.models.items():
            for path, tensor in model.state_dict().items():
                d["%s.%s" % (stream, path)] = _tensor_to_dict(tensor)
        return d

    def to_dict(self):
        return OrderedDict([
            ("format_version", FORMAT_VERSION),
            ("variant", self.variant),
            ("num_classes", self.num_classes),
            ("streams", self.streams),
            ("loss_weights", self.loss_weights.to_dict()),
            ("config", self.config.to_dict()),
            ("history", self.history),
            ("parameters", self.parameters_dict()),
        ])

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise CheckpointError("checkpoint document must be a json object")
        for key in ("format_version", "variant", "num_classes", "streams", "config", "parameters"):
            if key not in d:
                raise CheckpointError("missing field '%s'" % key)
        if d["format_version"] != FORMAT_VERSION:
            raise UnsupportedVersionError(d["format_version"])
        config = run_config_from_dict(d["config"])
        if config.variant != d["variant"]:
            raise CheckpointError("variant '%s' does not match its configuration ('%s')" % (
                d["variant"], config.variant))

        parameters = d["parameters"]
        models = OrderedDict()
        for stream in d["streams"]:
            model = build_model(config, d["num_classes"])
            prefix = stream + "."
            state = OrderedDict(
                (path[len(prefix):], _tensor_from_dict(path, td))
                for path, td in parameters.items() if path.startswith(prefix))
            expected = model.state_dict()
            unknown = sorted(set(state) - set(expected))
            missing = sorted(set(expected) - set(state))
            if len(unknown) + len(missing) > 0:
                raise CheckpointError("stream %s: unknown parameters %s, missing parameters %s" % (
                    stream, unknown, missing))
            for path, tensor in state.items():
                if tuple(tensor.shape) != tuple(expected[path].shape):
                    raise CheckpointError("parameters.%s%s: shape %s, expected %s" % (
                        prefix, path, list(tensor.shape), list(expected[path].shape)))
            model.load_state_dict(state)
            models[stream] = model
        return cls(config, d["num_classes"], models, d.get("history", []))

    def save(self, path):
        dump(self.to_dict(), path)
        logger.info("checkpoint saved", extra=dict(path=path, variant=self.variant, streams=self.streams))
        return path

    @classmethod
    def load(cls, path):
        try:
            d = load(path)
        except ValueError as e:
            raise CheckpointError("%s does not parse: %s" % (path, e)) from None
        checkpoint = cls.from_dict(d)
        logger.info("checkpoint loaded", extra=dict(path=path, variant=checkpoint.variant))
        return checkpoint
