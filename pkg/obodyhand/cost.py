"""
Analytic FLOP and parameter counts, computed from the architecture without running it.

Conventions: one multiply-add is 2 FLOPs; pooling, normalization, softmax and rectifier FLOPs are ignored;
parameters count weights, biases and normalization scale/shift, not running statistics or frozen random features.
Counts are per sample.
"""
from collections import OrderedDict
import logging

from .attention import AXES, FAST, EXACT
from .backbone import output_frames
from .models import SCORE_FUSION, STANDARD_XATTN, FAST_XATTN, PAM, EXPERTIZED, ModelError
from .skeleton import INSTANCES, SynthSpec, load_dataset
from .topology import STREAM_NODES, UNIFORM


logger = logging.getLogger(__name__)


class CostReport:
    def __init__(self):
        self.breakdown = OrderedDict()  # component name -> (flops, params)

    def add(self, name, flops, params=0):
        if name in self.breakdown:
            raise ModelError("cost component '%s' counted twice" % name)
        self.breakdown[name] = (int(flops), int(params))
        return self

    def merge(self, prefix, other):
        for name, (flops, params) in other.breakdown.items():
            self.add("%s.%s" % (prefix, name), flops, params)
        return self

    @property
    def flops(self):
        return sum(f for f, _ in self.breakdown.values())

    @property
    def params(self):
        return sum(p for _, p in self.breakdown.values())

    def to_dict(self):
        return OrderedDict([
            ("flops", self.flops),
            ("params", self.params),
            ("breakdown", OrderedDict(
                (name, OrderedDict([("flops", f), ("params", p)])) for name, (f, p) in self.breakdown.items()))
        ])

    def __str__(self):
        lines = ["%s flops=%d params=%d" % (name, f, p) for name, (f, p) in self.breakdown.items()]
        lines.append("total flops=%d params=%d" % (self.flops, self.params))
        return "\n".join(lines)


def fc_cost(in_features, out_features, tokens=1, bias=True):
    """
    Returns
    -------
    flops, params
    """
    return 2 * in_features * out_features * tokens, in_features * out_features + (out_features if bias else 0)


def backbone_cost(channels, strides, temporal_kernel, frames, instances=INSTANCES, nodes=STREAM_NODES, subsets=3,
                  in_channels=3):
    report = CostReport()
    widths = (in_channels,) + tuple(channels)
    for b, (c_in, c_out, stride) in enumerate(zip(widths[:-1], widths[1:], strides)):
        positions = frames * instances * nodes
        report.add("block%d.aggregation" % b, 2 * subsets * c_in * nodes * nodes * frames * instances)
        report.add("block%d.spatial" % b, 2 * subsets * c_in * c_out * positions, subsets * c_in * c_out)
        report.add("block%d.spatial_norm" % b, 0, 2 * c_out)
        frames = output_frames(frames, (stride,))
        report.add(
            "block%d.temporal" % b,
            2 * c_out * c_out * temporal_kernel * frames * instances * nodes,
            c_out * c_out * temporal_kernel)
        report.add("block%d.temporal_norm" % b, 0, 2 * c_out)
    return report


def attention_cost(query_tokens, context_tokens, channels, dim, kind=FAST, features=64):
    """
    one direction: queries from one stream, keys and values from the other
    """
    report = CostReport()
    report.add("query", 2 * channels * dim * query_tokens, channels * dim)
    report.add("key", 2 * channels * dim * context_tokens, channels * dim)
    report.add("value", 2 * channels * dim * context_tokens, channels * dim)
    if kind == EXACT:
        mix = 4 * query_tokens * context_tokens * dim + 2 * query_tokens * context_tokens * dim
    else:
        tokens = query_tokens + context_tokens
        mix = 2 * features * tokens * (dim + dim) + 2 * tokens * features * dim
    report.add("mix", mix)
    report.add("output", 2 * dim * channels * query_tokens, dim * channels)
    return report


def cross_attention_cost(body_tokens, hand_tokens, channels, dim, kind=FAST, features=64):
    report = CostReport()
    report.merge("body", attention_cost(body_tokens, hand_tokens, channels, dim, kind, features))
    report.merge("hand", attention_cost(hand_tokens, body_tokens, channels, dim, kind, features))
    return report


def _classifier(report, name, channels, num_classes):
    report.add(name, *fc_cost(channels, num_classes))


def model_cost(config, num_classes, nodes=STREAM_NODES, instances=INSTANCES):
    """
    cost of one modality stream model (body and hand backbones plus the variant's interaction and classifiers)
    """
    channels = config.channels[-1]
    dim = channels if config.attention_dim is None else config.attention_dim
    subsets = 1 if config.partition == UNIFORM else 3
    frames = output_frames(config.frames, config.strides)
    tokens = frames * instances * nodes
    features = config.attention_features

    report = CostReport()
    for stream in ("body", "hand"):
        report.merge(stream, backbone_cost(
            config.channels, config.strides, config.temporal_kernel, config.frames, instances, nodes, subsets))

    variant = config.variant
    if variant == SCORE_FUSION:
        _classifier(report, "body_classifier", channels, num_classes)
        _classifier(report, "hand_classifier", channels, num_classes)
    elif variant in (STANDARD_XATTN, FAST_XATTN):
        kind = EXACT if variant == STANDARD_XATTN else FAST
        report.merge("interaction", cross_attention_cost(tokens, tokens, channels, dim, kind, features))
        _classifier(report, "body_classifier", channels, num_classes)
        _classifier(report, "hand_classifier", channels, num_classes)
    elif variant == PAM:
        lengths = dict(T=frames, V=nodes, I=instances)
        for axis in AXES:
            report.merge("pooling.%s" % axis, cross_attention_cost(
                lengths[axis], lengths[axis], channels, dim, FAST, features))
        _classifier(report, "pooling.body_classifier", channels, num_classes)
        _classifier(report, "pooling.hand_classifier", channels, num_classes)
    elif variant == EXPERTIZED:
        _classifier(report, "expert_body", channels, num_classes)
        _classifier(report, "expert_hand", channels, num_classes)
        if not config.expert_only:
            report.merge("interaction", cross_attention_cost(tokens, tokens, channels, dim, FAST, features))
            _classifier(report, "interactive_body", channels, num_classes)
            _classifier(report, "interactive_hand", channels, num_classes)
    else:
        raise ModelError("unknown variant '%s'" % variant)
    return report


def count_cost(config, num_classes=None, nodes=STREAM_NODES, instances=INSTANCES):
    """
    Parameters
    ----------
    config: run configuration
    num_classes: defaults to the class count of the configured dataset file, or of the synthetic spec
    nodes, instances: graph size, overridable for scaling studies

    Returns
    -------
    CostReport over every configured modality stream (joint, bone), components prefixed by the stream
    """
    if num_classes is None:
        num_classes = (
            SynthSpec.from_dict(config.synth).num_classes if config.data is None else
            load_dataset(config.data).num_classes)
    report = CostReport()
    for stream in config.streams:
        report.merge(stream, model_cost(config, num_classes, nodes, instances))
    logger.debug("cost counted", extra=dict(variant=config.variant, flops=report.flops, params=report.params))
    return report
