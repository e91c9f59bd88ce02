from .configuration_management import ConfigurationManager, ConfField
from .errors import ConfigurationError
from .models import VARIANTS, DTYPES, LossWeights
from .topology import PARTITIONS


JOINT = "joint"
BONE = "bone"
MODALITIES = (JOINT, BONE)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_positive_int(v):
    return _is_int(v) and v >= 1


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_streams(v):
    return (
        isinstance(v, (list, tuple)) and
        (len(v) > 0) and
        (len(set(v)) == len(v)) and
        all(s in MODALITIES for s in v))


class RunConfigManager(ConfigurationManager):
    # model
    variant = ConfField(value="pam", check=lambda v: v in VARIANTS)
    channels = ConfField(
        value=[16, 32, 32, 64],
        check=lambda v: isinstance(v, (list, tuple)) and len(v) > 0 and all(_is_positive_int(c) for c in v))
    strides = ConfField(value=[1, 2, 1, 2], check=lambda v: isinstance(v, (list, tuple)) and all(s in (1, 2) for s in v))
    temporal_kernel = ConfField(value=5, check=lambda v: _is_positive_int(v) and v % 2 == 1)
    partition = ConfField(value="distance", check=lambda v: v in PARTITIONS)
    attention_dim = ConfField(check=lambda v: v is None or _is_positive_int(v))  # None: last channel width
    attention_features = ConfField(value=64, check=_is_positive_int)
    expert_only = ConfField(value=False, check=lambda v: isinstance(v, bool))
    dtype = ConfField(value="float32", check=lambda v: v in DTYPES)

    # data
    data = ConfField()  # dataset path, synthetic data is generated when None
    synth = ConfField(value={}, check=lambda v: isinstance(v, dict))
    synth_seed = ConfField(value=7, check=lambda v: _is_int(v) and v >= 0)
    frames = ConfField(value=32, check=lambda v: _is_int(v) and v >= 2)
    streams = ConfField(value=["joint"], check=_check_streams)

    # optimization
    seed = ConfField(value=7, check=lambda v: _is_int(v) and v >= 0)
    epochs = ConfField(value=30, check=_is_positive_int)
    pretrain_epochs = ConfField(value=0, check=lambda v: _is_int(v) and v >= 0)  # 0: cold start
    batch_size = ConfField(value=16, check=_is_positive_int)
    learning_rate = ConfField(value=0.05, check=lambda v: _is_number(v) and v > 0)
    momentum = ConfField(value=0.9, check=lambda v: _is_number(v) and 0 <= v < 1)
    weight_decay = ConfField(value=1e-4, check=lambda v: _is_number(v) and v >= 0)
    lambda_body = ConfField(value=1., check=lambda v: _is_number(v) and v >= 0)
    lambda_hand = ConfField(value=1., check=lambda v: _is_number(v) and v >= 0)
    lambda_cpl = ConfField(value=1., check=lambda v: _is_number(v) and v >= 0)


RUN_CONFIG_MANAGER = RunConfigManager("RUN_CONFIG")


def check_run_config(config):
    if len(config.channels) != len(config.strides):
        raise ConfigurationError("channels and strides must have the same length (%d != %d)" % (
            len(config.channels), len(config.strides)))
    return config


def run_config(**overrides):
    return check_run_config(RUN_CONFIG_MANAGER.to_conf(**overrides))


def run_config_from_dict(d):
    return check_run_config(RUN_CONFIG_MANAGER.conf_from_dict(d))


def load_run_config(path):
    return check_run_config(RUN_CONFIG_MANAGER.conf_from_file(path))


def loss_weights(config):
    return LossWeights(config.lambda_body, config.lambda_hand, config.lambda_cpl)
