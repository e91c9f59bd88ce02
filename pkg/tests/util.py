import os

import numpy as np
import torch

from obodyhand import ConfigurationManager, ConfField
from obodyhand.run_config import run_config
from obodyhand.skeleton import PersonTrack, SkeletonSample, Dataset, SynthSpec, TRAIN


RESOURCES_DIR_PATH = os.path.join(os.path.dirname(__file__), "resources")
DATASET_PATH = os.path.join(RESOURCES_DIR_PATH, "dataset.json")

SLOW = os.environ.get("OBODYHAND_SLOW") == "1"


class _SimpleConfManager(ConfigurationManager):
    int = ConfField(value=1)
    str = ConfField(value="str")
    positive = ConfField(value=2, check=lambda v: v > 0)


simple_conf_manager = _SimpleConfManager(var_name="simple_conf")
simple_conf = simple_conf_manager.to_conf()


def random_person(rng, frames=6, scale=1.):
    return PersonTrack(
        rng.normal(0, scale, (frames, 25, 3)),
        rng.normal(0, scale, (frames, 21, 3)),
        rng.normal(0, scale, (frames, 21, 3)))


def random_dataset(seed=0, num_classes=3, per_class=2, frames=6, persons=1, split=TRAIN):
    rng = np.random.default_rng(seed)
    samples = [
        SkeletonSample(c, [random_person(rng, frames) for _ in range(persons)], split)
        for _ in range(per_class) for c in range(num_classes)]
    return Dataset(num_classes, samples)


def tiny_synth_spec(num_classes=3, per_class_train=4, per_class_test=2, frames=12, **kwargs):
    return SynthSpec(num_classes, per_class_train, per_class_test, frames, **kwargs)


def tiny_run_config(**overrides):
    d = dict(
        synth=tiny_synth_spec().to_dict(),
        channels=[4, 8],
        strides=[1, 2],
        temporal_kernel=3,
        frames=8,
        epochs=2,
        batch_size=4,
        attention_features=8,
        dtype="float64",
    )
    d.update(overrides)
    return run_config(**d)


def tiny_stream_inputs(seed=0, batch=2, frames=8, dtype=torch.float64):
    generator = torch.Generator().manual_seed(seed)
    x_body = torch.randn(batch, 3, frames, 2, 25, generator=generator, dtype=dtype)
    x_hand = torch.randn(batch, 3, frames, 2, 25, generator=generator, dtype=dtype)
    x_hand[..., 21:] = 0.
    return x_body, x_hand
