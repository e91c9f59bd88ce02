"""
Central finite-difference gradient checks on seeded tiny instances, in 64-bit precision.

Every target builds an objective (a scalar function of its inputs and parameters). The report holds, per input or
parameter group, max |analytic - numeric| / max(max |analytic|, max |numeric|). Probes whose +/- step flips the
on/off pattern of any rectifier are excluded and logged as warnings.
"""
from collections import OrderedDict
import logging

import torch
from torch import nn

from . import CONF
from .attention import (
    softmax_attention, fast_attention, draw_features, CrossAttention, PoolingAttention, pooled_axis_views, FAST)
from .backbone import Backbone, spatial_graph_conv, temporal_conv
from .errors import ValidationError
from .models import (
    cross_entropy, fuse_logits_avg, dual_stream_loss, expertized_loss, BranchOutputs, LossWeights, MODEL_CLASSES,
    SCORE_FUSION, EXPERTIZED)
from .topology import GraphTopology, normalize_adjacency


logger = logging.getLogger(__name__)


class GradCheckError(ValidationError):
    pass


# tiny instance sizes
TINY_CHANNELS = 4
TINY_FRAMES = 4
TINY_NODES = 5
TINY_CLASSES = 3
TINY_BATCH = 3
TINY_FEATURES = 8
TINY_BODY_PARENTS = (0, 0, 1, 2, 1)
TINY_HAND_PARENTS = (0, 0, 1, 2, 4)  # node 4 is a dummy

_DENOMINATOR_FLOOR = 1e-8


class GradCheckReport:
    def __init__(self, target, seed, tolerance):
        self.target = target
        self.seed = seed
        self.tolerance = tolerance
        self.errors = OrderedDict()  # group -> max relative error
        self.excluded = OrderedDict()  # group -> excluded probe count

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.)

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def to_dict(self):
        return OrderedDict([
            ("target", self.target),
            ("seed", self.seed),
            ("tolerance", self.tolerance),
            ("max_error", self.max_error),
            ("passed", self.passed),
            ("errors", self.errors),
            ("excluded", self.excluded),
        ])

    def __str__(self):
        lines = ["%s: max relative error %.3e (excluded probes: %d)" % (
            group, error, self.excluded.get(group, 0)) for group, error in self.errors.items()]
        lines.append("%s %s: max relative error %.3e, tolerance %.1e" % (
            self.target, "passed" if self.passed else "FAILED", self.max_error, self.tolerance))
        return "\n".join(lines)


class _RectifierProbe:
    """
    records the on/off pattern of every nn.ReLU of a module on each forward
    """
    def __init__(self, modules):
        self._patterns = []
        self._handles = []
        for module in modules:
            for sub in module.modules():
                if isinstance(sub, nn.ReLU):
                    self._handles.append(sub.register_forward_hook(self._record))

    def _record(self, module, inputs, output):
        self._patterns.append(inputs[0].detach() > 0)

    def take(self):
        patterns, self._patterns = self._patterns, []
        return patterns

    def close(self):
        for handle in self._handles:
            handle.remove()


def _same_patterns(a, b):
    return (len(a) == len(b)) and all(torch.equal(x, y) for x, y in zip(a, b))


class Instance:
    """
    Parameters
    ----------
    objective: callable () -> scalar tensor
    inputs: {name: leaf tensor}, checked along with every parameter of modules
    modules: modules whose parameters are checked and whose rectifiers are probed
    """
    def __init__(self, objective, inputs, modules=()):
        self.objective = objective
        self.inputs = OrderedDict(inputs)
        self.modules = list(modules)

    def groups(self):
        groups = OrderedDict(("input:%s" % k, v) for k, v in self.inputs.items())
        for k, module in enumerate(self.modules):
            prefix = "param:" if len(self.modules) == 1 else "param%d:" % k
            for name, parameter in module.named_parameters():
                groups[prefix + name] = parameter
        return groups


TARGETS = OrderedDict()


def register_target(name):
    def decorator(builder):
        TARGETS[name] = builder
        return builder
    return decorator


def _generator(seed):
    return torch.Generator().manual_seed(int(seed))


def _rand(generator, *shape, low=-1., high=1.):
    return (low + (high - low) * torch.rand(*shape, generator=generator, dtype=torch.float64)).requires_grad_()


def _weighted_sum(generator, out):
    # fixed random projection of a tensor output to a scalar
    weights = torch.randn(*out.shape, generator=generator, dtype=torch.float64)
    return lambda y: (y * weights).sum()


def _tiny_adjacencies():
    return (
        normalize_adjacency(GraphTopology(TINY_BODY_PARENTS)),
        normalize_adjacency(GraphTopology(TINY_HAND_PARENTS, dummy_nodes=(4,)))
    )


def _tiny_streams(generator):
    shape = (TINY_BATCH, 3, TINY_FRAMES, 2, TINY_NODES)
    x_hand = _rand(generator, *shape)
    with torch.no_grad():
        x_hand[..., 4] = 0.
    return _rand(generator, *shape), x_hand


def _labels(generator, count=TINY_BATCH):
    return torch.randint(0, TINY_CLASSES, (count,), generator=generator)


def _seeded_module(module_builder, seed):
    torch.manual_seed(seed)
    return module_builder().to(torch.float64)


def _projected(generator, fn):
    with torch.no_grad():
        weighting = _weighted_sum(generator, fn())
    return lambda: weighting(fn())


# ---------------------------------------------- TARGETS --------------------------------------------------------------
@register_target("square")
def _square(seed):
    x = torch.tensor([3.], dtype=torch.float64, requires_grad=True)
    return Instance(lambda: (x ** 2).sum(), dict(x=x))


@register_target("relu")
def _relu(seed):
    g = _generator(seed)
    x = _rand(g, 6)
    with torch.no_grad():
        x[0] = 0.
    relu = nn.ReLU()
    return Instance(_projected(g, lambda: relu(x)), dict(x=x), [relu])


@register_target("spatial_graph_conv")
def _spatial_graph_conv(seed):
    g = _generator(seed)
    adjacency = torch.as_tensor(_tiny_adjacencies()[0].subsets)
    x = _rand(g, 2, 3, TINY_FRAMES, 2, TINY_NODES)
    w = _rand(g, adjacency.shape[0], 3, TINY_CHANNELS)
    return Instance(_projected(g, lambda: spatial_graph_conv(x, adjacency, w)), dict(x=x, weight=w))


@register_target("temporal_conv")
def _temporal_conv(seed):
    g = _generator(seed)
    x = _rand(g, 2, 3, 6, 2, TINY_NODES)
    kernel = _rand(g, TINY_CHANNELS, 3, 3)
    return Instance(_projected(g, lambda: temporal_conv(x, kernel, 2)), dict(x=x, kernel=kernel))


@register_target("backbone_forward")
def _backbone_forward(seed):
    g = _generator(seed)
    backbone = _seeded_module(lambda: Backbone(
        _tiny_adjacencies()[0], (TINY_CHANNELS, TINY_CHANNELS), (1, 2), 3), seed)
    x, _ = _tiny_streams(g)
    return Instance(_projected(g, lambda: backbone(x)), dict(x=x), [backbone])


@register_target("softmax_attention")
def _softmax_attention(seed):
    g = _generator(seed)
    q, k, v = _rand(g, 5, 4), _rand(g, 6, 4), _rand(g, 6, 3)
    return Instance(_projected(g, lambda: softmax_attention(q, k, v)), dict(q=q, k=k, v=v))


@register_target("fast_attention")
def _fast_attention(seed):
    g = _generator(seed)
    q, k, v = _rand(g, 5, 4), _rand(g, 6, 4), _rand(g, 6, 3)
    features = draw_features(16, 4, seed)
    return Instance(_projected(g, lambda: fast_attention(q, k, v, features=features)), dict(q=q, k=k, v=v))


@register_target("cross_attend")
def _cross_attend(seed):
    g = _generator(seed)
    attention = _seeded_module(lambda: CrossAttention(TINY_CHANNELS, TINY_CHANNELS, FAST, TINY_FEATURES, seed), seed)
    body, hand = _rand(g, 2, 5, TINY_CHANNELS), _rand(g, 2, 3, TINY_CHANNELS)
    return Instance(
        _projected(g, lambda: torch.cat(attention(body, hand), dim=1)), dict(body=body, hand=hand), [attention])


@register_target("pooled_axis_views")
def _pooled_axis_views(seed):
    g = _generator(seed)
    x = _rand(g, 2, TINY_CHANNELS, TINY_FRAMES, 2, TINY_NODES)
    return Instance(
        _projected(g, lambda: torch.cat(list(pooled_axis_views(x).values()), dim=1)), dict(feature_map=x))


@register_target("pam_forward")
def _pam_forward(seed):
    g = _generator(seed)
    pooling = _seeded_module(lambda: PoolingAttention(
        TINY_CHANNELS, TINY_CLASSES, TINY_CHANNELS, FAST, TINY_FEATURES, seed), seed)
    body = _rand(g, 2, TINY_CHANNELS, 2, 2, TINY_NODES)
    hand = _rand(g, 2, TINY_CHANNELS, 2, 2, TINY_NODES)
    return Instance(
        _projected(g, lambda: torch.cat(pooling(body, hand), dim=1)), dict(body=body, hand=hand), [pooling])


@register_target("cross_entropy")
def _cross_entropy(seed):
    g = _generator(seed)
    logits = _rand(g, 4, TINY_CLASSES, low=-3., high=3.)
    labels = _labels(g, 4)
    return Instance(lambda: cross_entropy(logits, labels), dict(logits=logits))


@register_target("fuse_logits_avg")
def _fuse_logits_avg(seed):
    g = _generator(seed)
    a, b = _rand(g, 4, TINY_CLASSES), _rand(g, 4, TINY_CLASSES)
    return Instance(_projected(g, lambda: fuse_logits_avg([a, b])), dict(a=a, b=b))


@register_target("dual_stream_loss")
def _dual_stream_loss(seed):
    g = _generator(seed)
    body, hand = _rand(g, 4, TINY_CLASSES, low=-3., high=3.), _rand(g, 4, TINY_CLASSES, low=-3., high=3.)
    labels = _labels(g, 4)
    weights = LossWeights(1., .5, 2.)
    return Instance(lambda: dual_stream_loss(body, hand, labels, weights), dict(body=body, hand=hand))


@register_target("expertized_loss")
def _expertized_loss(seed):
    g = _generator(seed)
    ys = [_rand(g, 4, TINY_CLASSES, low=-3., high=3.) for _ in range(4)]
    labels = _labels(g, 4)
    weights = LossWeights(1., .5, 2.)
    return Instance(
        lambda: expertized_loss(BranchOutputs(*ys), labels, weights),
        OrderedDict(("y%d" % (k + 1), y) for k, y in enumerate(ys)))


def build_tiny_model(variant, seed):
    body_adjacency, hand_adjacency = _tiny_adjacencies()
    kwargs = dict(channels=(TINY_CHANNELS, TINY_CHANNELS), strides=(1, 2), temporal_kernel=3)
    if variant != SCORE_FUSION:
        kwargs.update(attention_dim=TINY_CHANNELS, attention_features=TINY_FEATURES, seed=seed)
    return _seeded_module(
        lambda: MODEL_CLASSES[variant](body_adjacency, hand_adjacency, TINY_CLASSES, **kwargs), seed)


def _variant_builder(variant):
    def builder(seed):
        g = _generator(seed)
        model = build_tiny_model(variant, seed)
        x_body, x_hand = _tiny_streams(g)
        labels = _labels(g)
        weights = LossWeights()
        return Instance(
            lambda: model.loss(model(x_body, x_hand), labels, weights), dict(body=x_body, hand=x_hand), [model])
    return builder


for _variant in MODEL_CLASSES:
    register_target(_variant)(_variant_builder(_variant))


# ---------------------------------------------- CHECKER --------------------------------------------------------------
def _numeric_gradient(instance, tensor, probe, base_patterns, step):
    """
    Returns
    -------
    numeric gradient, mask of kept probes
    """
    numeric = torch.zeros_like(tensor, dtype=torch.float64)
    kept = torch.ones_like(tensor, dtype=torch.bool)
    flat_values = tensor.data.view(-1)
    flat_numeric = numeric.view(-1)
    flat_kept = kept.view(-1)
    with torch.no_grad():
        for j in range(flat_values.numel()):
            original = flat_values[j].item()
            flat_values[j] = original + step
            plus = instance.objective().item()
            plus_patterns = probe.take()
            flat_values[j] = original - step
            minus = instance.objective().item()
            minus_patterns = probe.take()
            flat_values[j] = original
            if not (_same_patterns(plus_patterns, base_patterns) and _same_patterns(minus_patterns, base_patterns)):
                flat_kept[j] = False
                continue
            flat_numeric[j] = (plus - minus) / (2 * step)
    return numeric, kept


def grad_check(target, seed=0, tolerance=None, step=None):
    """
    Parameters
    ----------
    target: registered target name, see TARGETS
    seed: instance seed
    tolerance: defaults to CONF.grad_tolerance
    step: finite-difference step, defaults to CONF.fd_step

    Returns
    -------
    GradCheckReport
    """
    if target not in TARGETS:
        raise GradCheckError("unknown gradient check target '%s', expected one of %s" % (target, list(TARGETS)))
    tolerance = CONF.grad_tolerance if tolerance is None else tolerance
    step = CONF.fd_step if step is None else step

    instance = TARGETS[target](seed)
    groups = instance.groups()
    report = GradCheckReport(target, seed, tolerance)
    # training mode: normalization uses batch statistics, running averages drift but don't enter the objective
    probe = _RectifierProbe(instance.modules)
    try:
        objective = instance.objective()
        base_patterns = probe.take()
        analytic = torch.autograd.grad(objective, list(groups.values()), allow_unused=True)
        for (name, tensor), gradient in zip(groups.items(), analytic):
            gradient = torch.zeros_like(tensor) if gradient is None else gradient.detach()
            numeric, kept = _numeric_gradient(instance, tensor, probe, base_patterns, step)
            excluded = int((~kept).sum())
            if excluded > 0:
                logger.warning(
                    "rectifier kink probes excluded",
                    extra=dict(target=target, group=name, excluded=excluded)
                )
            a, n = gradient[kept], numeric[kept]
            if a.numel() == 0:
                error = 0.
            else:
                scale = max(a.abs().max().item(), n.abs().max().item(), _DENOMINATOR_FLOOR)
                error = (a - n).abs().max().item() / scale
            report.errors[name] = error
            report.excluded[name] = excluded
    finally:
        probe.close()

    logger.info(
        "gradient check finished",
        extra=dict(target=target, seed=seed, max_error=report.max_error, passed=report.passed)
    )
    return report
