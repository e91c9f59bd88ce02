"""
Dual-stream (body, hand) action classifiers and their losses.

Variants
--------
score_fusion: two independent streams, logits averaged
standard_xattn: exact cross-attention over flattened T*I*V tokens
fast_xattn: fast cross-attention over flattened T*I*V tokens
pam: fast cross-attention over T, V and I pooled views
expertized: four branches, two untouched expert ones and two cross-attended interactive ones, logits summed
"""
from collections import OrderedDict
import logging

from einops import rearrange
import torch
from torch import nn

from .attention import CrossAttention, PoolingAttention, FAST, EXACT, DEFAULT_FEATURES
from .backbone import Backbone, DEFAULT_CHANNELS, DEFAULT_STRIDES, DEFAULT_TEMPORAL_KERNEL
from .errors import ValidationError
from .topology import build_topology, normalize_adjacency, BODY25, HAND21_PADDED25, DISTANCE


logger = logging.getLogger(__name__)


class ModelError(ValidationError):
    pass


SCORE_FUSION = "score_fusion"
STANDARD_XATTN = "standard_xattn"
FAST_XATTN = "fast_xattn"
PAM = "pam"
EXPERTIZED = "expertized"
VARIANTS = (SCORE_FUSION, STANDARD_XATTN, FAST_XATTN, PAM, EXPERTIZED)

DTYPES = OrderedDict([("float32", torch.float32), ("float64", torch.float64)])


# ---------------------------------------------- LOSSES AND FUSION ----------------------------------------------------
class LossWeights:
    def __init__(self, body=1., hand=1., cpl=1.):
        for name, value in (("lambda_body", body), ("lambda_hand", hand), ("lambda_cpl", cpl)):
            if not value >= 0:
                raise ModelError("%s must be >= 0, got %r" % (name, value))
        self.body = float(body)
        self.hand = float(hand)
        self.cpl = float(cpl)

    def to_dict(self):
        return OrderedDict([("lambda_body", self.body), ("lambda_hand", self.hand), ("lambda_cpl", self.cpl)])

    def __eq__(self, other):
        return isinstance(other, LossWeights) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return "<LossWeights body=%r hand=%r cpl=%r>" % (self.body, self.hand, self.cpl)


def cross_entropy(logits, labels):
    """
    mean over the batch of -log softmax(logits)[label]
    """
    if logits.dim() != 2:
        raise ModelError("logits must be (N, K), got %s" % (tuple(logits.shape),))
    labels = torch.as_tensor(labels, dtype=torch.int64)
    if labels.shape != logits.shape[:1]:
        raise ModelError("%d labels for %d logit rows" % (labels.numel(), logits.shape[0]))
    k = logits.shape[1]
    if bool(((labels < 0) | (labels >= k)).any()):
        raise ModelError("labels must be in [0, %d), got %s" % (k, sorted(set(labels.tolist()))))
    shifted = logits - logits.max(dim=1, keepdim=True).values.detach()
    log_norm = torch.log(torch.exp(shifted).sum(dim=1))
    picked = shifted.gather(1, labels[:, None]).squeeze(1)
    return (log_norm - picked).mean()


def fuse_logits_avg(logits_list):
    logits_list = list(logits_list)
    if len(logits_list) == 0:
        raise ModelError("can't fuse an empty list of logits")
    shape = logits_list[0].shape
    for k, logits in enumerate(logits_list):
        if logits.shape != shape:
            raise ModelError("logits[%d] has shape %s, expected %s" % (k, tuple(logits.shape), tuple(shape)))
    return torch.stack(logits_list).mean(dim=0)


def predict(logits):
    """
    argmax, lowest class index on ties
    """
    return torch.argmax(logits, dim=1)


def dual_stream_loss(body_logits, hand_logits, labels, weights):
    return (
        weights.body * cross_entropy(body_logits, labels) +
        weights.hand * cross_entropy(hand_logits, labels) +
        weights.cpl * cross_entropy(fuse_logits_avg([body_logits, hand_logits]), labels)
    )


class DualLogits:
    def __init__(self, body, hand):
        self.body = body
        self.hand = hand

    @property
    def fused(self):
        return fuse_logits_avg([self.body, self.hand])

    def named(self):
        return OrderedDict([("body", self.body), ("hand", self.hand)])


class BranchOutputs:
    """
    y1 expert body, y2 expert hand, y3 interactive body, y4 interactive hand
    """
    def __init__(self, y1, y2, y3, y4):
        self.y1 = y1
        self.y2 = y2
        self.y3 = y3
        self.y4 = y4
        self.fused = y1 + y2 + y3 + y4

    def named(self):
        return OrderedDict([
            ("expert_body", self.y1),
            ("expert_hand", self.y2),
            ("interactive_body", self.y3),
            ("interactive_hand", self.y4),
            ("expert_only", expert_only_predict(self)),
        ])


def expertized_loss(out, labels, weights):
    # individual terms only on the interactive branches
    return (
        weights.body * cross_entropy(out.y3, labels) +
        weights.hand * cross_entropy(out.y4, labels) +
        weights.cpl * cross_entropy(out.fused, labels)
    )


def expert_only_predict(out):
    return out.y1 + out.y2


def global_average(feature_map):
    return feature_map.mean(dim=(2, 3, 4))


def flatten_tokens(feature_map):
    return rearrange(feature_map, "n c t i v -> n (t i v) c")


# ---------------------------------------------- MODELS ---------------------------------------------------------------
class StreamExpert(nn.Module):
    """
    One stream alone: backbone, global average, classifier. Trained first, then loaded into a dual model.
    """
    def __init__(self, adjacency, num_classes, channels=DEFAULT_CHANNELS, strides=DEFAULT_STRIDES,
                 temporal_kernel=DEFAULT_TEMPORAL_KERNEL):
        super().__init__()
        self.backbone = Backbone(adjacency, channels, strides, temporal_kernel)
        self.classifier = nn.Linear(self.backbone.out_channels, num_classes)

    def forward(self, x):
        return self.classifier(global_average(self.backbone(x)))


class DualStreamModel(nn.Module):
    variant = None

    def __init__(self, body_adjacency, hand_adjacency, num_classes, channels=DEFAULT_CHANNELS,
                 strides=DEFAULT_STRIDES, temporal_kernel=DEFAULT_TEMPORAL_KERNEL, attention_dim=None,
                 attention_features=DEFAULT_FEATURES, seed=0):
        super().__init__()
        if num_classes < 2:
            raise ModelError("num_classes must be >= 2, got %r" % (num_classes,))
        self.num_classes = num_classes
        self.body = Backbone(body_adjacency, channels, strides, temporal_kernel)
        self.hand = Backbone(hand_adjacency, channels, strides, temporal_kernel)

    @property
    def channels(self):
        return self.body.out_channels

    def features(self, x_body, x_hand):
        if x_body.shape[0] != x_hand.shape[0]:
            raise ModelError("batch mismatch: %d body vs %d hand samples" % (x_body.shape[0], x_hand.shape[0]))
        return self.body(x_body), self.hand(x_hand)

    def loss(self, out, labels, weights):
        return dual_stream_loss(out.body, out.hand, labels, weights)

    def fuse(self, out):
        return out.fused

    def classifiers(self):
        """
        Returns
        -------
        (body classifier, hand classifier) fed by plain stream features, None when the variant has none
        """
        return None

    def load_experts(self, body_expert, hand_expert):
        self.body.load_state_dict(body_expert.backbone.state_dict())
        self.hand.load_state_dict(hand_expert.backbone.state_dict())
        classifiers = self.classifiers()
        if classifiers is not None:
            classifiers[0].load_state_dict(body_expert.classifier.state_dict())
            classifiers[1].load_state_dict(hand_expert.classifier.state_dict())
        logger.debug("experts loaded", extra=dict(variant=self.variant, classifiers=classifiers is not None))


class ScoreFusionModel(DualStreamModel):
    variant = SCORE_FUSION

    def __init__(self, body_adjacency, hand_adjacency, num_classes, **kwargs):
        super().__init__(body_adjacency, hand_adjacency, num_classes, **kwargs)
        self.body_classifier = nn.Linear(self.channels, num_classes)
        self.hand_classifier = nn.Linear(self.channels, num_classes)

    def classifiers(self):
        return self.body_classifier, self.hand_classifier

    def forward(self, x_body, x_hand):
        f_body, f_hand = self.features(x_body, x_hand)
        return DualLogits(self.body_classifier(global_average(f_body)), self.hand_classifier(global_average(f_hand)))


class CrossAttentionModel(DualStreamModel):
    """
    cross-attention over every (t, i, v) position of both streams, then global average and one classifier per stream
    """
    kind = None

    def __init__(self, body_adjacency, hand_adjacency, num_classes, attention_dim=None,
                 attention_features=DEFAULT_FEATURES, seed=0, **kwargs):
        super().__init__(body_adjacency, hand_adjacency, num_classes, **kwargs)
        self.interaction = CrossAttention(self.channels, attention_dim, self.kind, attention_features, seed)
        self.body_classifier = nn.Linear(self.channels, num_classes)
        self.hand_classifier = nn.Linear(self.channels, num_classes)

    def forward(self, x_body, x_hand):
        f_body, f_hand = self.features(x_body, x_hand)
        a_body, a_hand = self.interaction(flatten_tokens(f_body), flatten_tokens(f_hand))
        return DualLogits(self.body_classifier(a_body.mean(dim=1)), self.hand_classifier(a_hand.mean(dim=1)))


class StandardCrossAttentionModel(CrossAttentionModel):
    variant = STANDARD_XATTN
    kind = EXACT


class FastCrossAttentionModel(CrossAttentionModel):
    variant = FAST_XATTN
    kind = FAST


class PoolingAttentionModel(DualStreamModel):
    variant = PAM

    def __init__(self, body_adjacency, hand_adjacency, num_classes, attention_dim=None,
                 attention_features=DEFAULT_FEATURES, seed=0, **kwargs):
        super().__init__(body_adjacency, hand_adjacency, num_classes, **kwargs)
        self.pooling = PoolingAttention(
            self.channels, num_classes, attention_dim, FAST, attention_features, seed)

    def forward(self, x_body, x_hand):
        f_body, f_hand = self.features(x_body, x_hand)
        return DualLogits(*self.pooling(f_body, f_hand))


class ExpertizedBranchModel(DualStreamModel):
    variant = EXPERTIZED

    def __init__(self, body_adjacency, hand_adjacency, num_classes, attention_dim=None,
                 attention_features=DEFAULT_FEATURES, seed=0, expert_only=False, **kwargs):
        super().__init__(body_adjacency, hand_adjacency, num_classes, **kwargs)
        self.expert_only = expert_only
        self.interaction = CrossAttention(self.channels, attention_dim, FAST, attention_features, seed)
        self.expert_body = nn.Linear(self.channels, num_classes)
        self.expert_hand = nn.Linear(self.channels, num_classes)
        self.interactive_body = nn.Linear(self.channels, num_classes)
        self.interactive_hand = nn.Linear(self.channels, num_classes)

    def classifiers(self):
        return self.expert_body, self.expert_hand

    def forward(self, x_body, x_hand):
        f_body, f_hand = self.features(x_body, x_hand)
        a_body, a_hand = self.interaction(flatten_tokens(f_body), flatten_tokens(f_hand))
        return BranchOutputs(
            self.expert_body(global_average(f_body)),
            self.expert_hand(global_average(f_hand)),
            self.interactive_body(a_body.mean(dim=1)),
            self.interactive_hand(a_hand.mean(dim=1))
        )

    def expert_forward(self, x_body, x_hand):
        """
        expert-only inference, skips the interactive branches
        """
        f_body, f_hand = self.features(x_body, x_hand)
        return self.expert_body(global_average(f_body)) + self.expert_hand(global_average(f_hand))

    def loss(self, out, labels, weights):
        return expertized_loss(out, labels, weights)

    def fuse(self, out):
        return expert_only_predict(out) if self.expert_only else out.fused


MODEL_CLASSES = OrderedDict([
    (SCORE_FUSION, ScoreFusionModel),
    (STANDARD_XATTN, StandardCrossAttentionModel),
    (FAST_XATTN, FastCrossAttentionModel),
    (PAM, PoolingAttentionModel),
    (EXPERTIZED, ExpertizedBranchModel),
])


def stream_adjacencies(partition=DISTANCE):
    return (
        normalize_adjacency(build_topology(BODY25), partition),
        normalize_adjacency(build_topology(HAND21_PADDED25), partition)
    )


def build_model(config, num_classes, body_adjacency=None, hand_adjacency=None):
    """
    Parameters
    ----------
    config: run configuration (variant, channels, strides, temporal_kernel, partition, attention_dim,
        attention_features, seed, expert_only, dtype)
    num_classes: classifier width
    body_adjacency, hand_adjacency: default to the body25 and padded hand21 layouts
    """
    if config.variant not in MODEL_CLASSES:
        raise ModelError("unknown variant '%s', expected one of %s" % (config.variant, VARIANTS))
    if (body_adjacency is None) or (hand_adjacency is None):
        default_body, default_hand = stream_adjacencies(config.partition)
        body_adjacency = default_body if body_adjacency is None else body_adjacency
        hand_adjacency = default_hand if hand_adjacency is None else hand_adjacency
    kwargs = dict(
        channels=config.channels,
        strides=config.strides,
        temporal_kernel=config.temporal_kernel,
    )
    if config.variant != SCORE_FUSION:
        kwargs.update(attention_dim=config.attention_dim, attention_features=config.attention_features,
                      seed=config.seed)
    if config.variant == EXPERTIZED:
        kwargs.update(expert_only=config.expert_only)
    model = MODEL_CLASSES[config.variant](body_adjacency, hand_adjacency, num_classes, **kwargs)
    return model.to(DTYPES[config.dtype])


def build_experts(config, num_classes, body_adjacency=None, hand_adjacency=None):
    if (body_adjacency is None) or (hand_adjacency is None):
        body_adjacency, hand_adjacency = stream_adjacencies(config.partition)
    dtype = DTYPES[config.dtype]
    return tuple(
        StreamExpert(adjacency, num_classes, config.channels, config.strides, config.temporal_kernel).to(dtype)
        for adjacency in (body_adjacency, hand_adjacency)
    )
