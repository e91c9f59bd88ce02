"""
Body <-> hand cross-attention.

Exact softmax attention is the reference; fast attention approximates its kernel with positive random features and
costs linear time in the sequence lengths.
"""
from collections import OrderedDict
import logging
import math

from einops import reduce
import torch
from torch import nn

from .errors import ValidationError, NumericError


logger = logging.getLogger(__name__)


class AttentionError(ValidationError):
    pass


FAST = "fast"
EXACT = "exact"
ATTENTION_KINDS = (FAST, EXACT)

AXIS_T = "T"
AXIS_V = "V"
AXIS_I = "I"
AXES = (AXIS_T, AXIS_V, AXIS_I)

DEFAULT_FEATURES = 64

_AXIS_PATTERNS = {
    AXIS_T: "n c t i v -> n t c",
    AXIS_V: "n c t i v -> n v c",
    AXIS_I: "n c t i v -> n i c",
}


def _check_qkv(q, k, v):
    if (q.dim() < 2) or (k.dim() != q.dim()) or (v.dim() != q.dim()):
        raise AttentionError("queries, keys and values must have the same rank >= 2, got %s, %s, %s" % (
            tuple(q.shape), tuple(k.shape), tuple(v.shape)))
    if q.shape[-1] != k.shape[-1]:
        raise AttentionError("query width %d != key width %d" % (q.shape[-1], k.shape[-1]))
    if k.shape[-2] != v.shape[-2]:
        raise AttentionError("%d keys for %d values" % (k.shape[-2], v.shape[-2]))
    if k.shape[-2] == 0:
        raise AttentionError("attention needs at least one key")


def attention_weights(q, k):
    _check_qkv(q, k, k)
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1)


def softmax_attention(q, k, v):
    """
    Parameters
    ----------
    q: (..., L_q, d)
    k: (..., L_k, d)
    v: (..., L_k, d_v)

    Returns
    -------
    (..., L_q, d_v)
    """
    _check_qkv(q, k, v)
    return attention_weights(q, k) @ v


def draw_features(count, dim, seed, dtype=torch.float64):
    if count < 1:
        raise AttentionError("random feature count must be >= 1, got %r" % (count,))
    if dim < 1:
        raise AttentionError("feature width must be >= 1, got %r" % (dim,))
    generator = torch.Generator().manual_seed(int(seed))
    return torch.randn(count, dim, generator=generator, dtype=dtype)


def _positive_features(x, features, per_row):
    """
    exp(w.x' - |x'|^2 / 2) / sqrt(m), x' = x * d^-1/4

    The subtracted stabilizer is constant per query row (per_row) or over all keys, so it cancels in the
    attention ratio.
    """
    x = x * x.shape[-1] ** -0.25
    exponent = x @ features.transpose(0, 1).to(x.dtype) - (x ** 2).sum(dim=-1, keepdim=True) / 2
    if per_row:
        stabilizer = exponent.amax(dim=-1, keepdim=True)
    else:
        stabilizer = exponent.amax(dim=(-2, -1), keepdim=True)
    return torch.exp(exponent - stabilizer.detach()) / math.sqrt(features.shape[0])


def fast_attention(q, k, v, m=None, seed=None, features=None):
    """
    Parameters
    ----------
    q, k, v: as softmax_attention
    m, seed: random feature count and draw seed, ignored when features is given
    features: (m, d) frozen gaussian draws

    Returns
    -------
    (..., L_q, d_v)
    """
    _check_qkv(q, k, v)
    if features is None:
        if (m is None) or (seed is None):
            raise AttentionError("fast attention needs either features or both m and seed")
        features = draw_features(m, q.shape[-1], seed, dtype=q.dtype)
    if features.shape[-1] != q.shape[-1]:
        raise AttentionError("random features of width %d for queries of width %d" % (
            features.shape[-1], q.shape[-1]))

    phi_q = _positive_features(q, features, per_row=True)
    phi_k = _positive_features(k, features, per_row=False)
    normalizer = phi_q @ phi_k.sum(dim=-2).unsqueeze(-1)
    degenerate = ~(normalizer > 0) | ~torch.isfinite(normalizer)
    if bool(degenerate.any()):
        row = tuple(degenerate.squeeze(-1).nonzero()[0].tolist())
        raise NumericError("fast attention normalizer underflows at query row %s" % (row,))
    return (phi_q @ (phi_k.transpose(-1, -2) @ v)) / normalizer


class ProjectionSet(nn.Module):
    """
    queries from one stream, keys and values from the other
    """
    def __init__(self, channels, dim):
        super().__init__()
        self.query = nn.Linear(channels, dim, bias=False)
        self.key = nn.Linear(channels, dim, bias=False)
        self.value = nn.Linear(channels, dim, bias=False)
        self.output = nn.Linear(dim, channels, bias=False)


class CrossAttention(nn.Module):
    def __init__(self, channels, dim=None, kind=FAST, features=DEFAULT_FEATURES, seed=0):
        super().__init__()
        if kind not in ATTENTION_KINDS:
            raise AttentionError("unknown attention kind '%s', expected one of %s" % (kind, ATTENTION_KINDS))
        dim = channels if dim is None else dim
        self.kind = kind
        self.channels = channels
        self.dim = dim
        self.body = ProjectionSet(channels, dim)
        self.hand = ProjectionSet(channels, dim)
        if kind == FAST:
            self.register_buffer("features", draw_features(features, dim, seed))
        else:
            self.features = None

    @property
    def feature_count(self):
        return 0 if self.features is None else self.features.shape[0]

    def attend(self, projections, queries, context):
        q = projections.query(queries)
        k = projections.key(context)
        v = projections.value(context)
        if self.kind == FAST:
            mixed = fast_attention(q, k, v, features=self.features)
        else:
            mixed = softmax_attention(q, k, v)
        return projections.output(mixed)

    def forward(self, body_tokens, hand_tokens):
        """
        Parameters
        ----------
        body_tokens: (N, L_B, C)
        hand_tokens: (N, L_H, C)

        Returns
        -------
        attended body tokens (N, L_B, C), attended hand tokens (N, L_H, C)
        """
        for name, tokens in (("body", body_tokens), ("hand", hand_tokens)):
            if (tokens.dim() != 3) or (tokens.shape[-1] != self.channels):
                raise AttentionError("%s tokens must be (N, L, %d), got %s" % (name, self.channels, tuple(tokens.shape)))
        if body_tokens.shape[0] != hand_tokens.shape[0]:
            raise AttentionError("batch mismatch: %d body vs %d hand" % (body_tokens.shape[0], hand_tokens.shape[0]))
        return (
            self.attend(self.body, body_tokens, hand_tokens),
            self.attend(self.hand, hand_tokens, body_tokens)
        )


def cross_attend(body_tokens, hand_tokens, attention):
    return attention(body_tokens, hand_tokens)


def pooled_axis_views(feature_map):
    """
    Returns
    -------
    {axis: (N, L_axis, C) tokens averaged over the two other non-channel axes} for axes T, V, I
    """
    if feature_map.dim() != 5:
        raise AttentionError("feature map must have 5 axes (N, C, T, I, V), got shape %s" % (
            tuple(feature_map.shape),))
    return OrderedDict((axis, reduce(feature_map, _AXIS_PATTERNS[axis], "mean")) for axis in AXES)


class PoolingAttention(nn.Module):
    """
    Cross-attends the T, V and I pooled views of both streams, pools each attended view over its own axis, sums the
    three vectors per stream and classifies each stream.
    """
    def __init__(self, channels, num_classes, dim=None, kind=FAST, features=DEFAULT_FEATURES, seed=0):
        super().__init__()
        self.attention = nn.ModuleDict([
            (axis, CrossAttention(channels, dim, kind, features, seed + k)) for k, axis in enumerate(AXES)
        ])
        self.body_classifier = nn.Linear(channels, num_classes)
        self.hand_classifier = nn.Linear(channels, num_classes)

    def pool(self, body_map, hand_map):
        body_views = pooled_axis_views(body_map)
        hand_views = pooled_axis_views(hand_map)
        body_pooled, hand_pooled = 0, 0
        for axis in AXES:
            attended_body, attended_hand = self.attention[axis](body_views[axis], hand_views[axis])
            body_pooled = body_pooled + attended_body.mean(dim=1)
            hand_pooled = hand_pooled + attended_hand.mean(dim=1)
        return body_pooled, hand_pooled

    def forward(self, body_map, hand_map):
        if body_map.shape[1] != hand_map.shape[1]:
            raise AttentionError("channel mismatch: %d body vs %d hand" % (body_map.shape[1], hand_map.shape[1]))
        body_pooled, hand_pooled = self.pool(body_map, hand_map)
        return self.body_classifier(body_pooled), self.hand_classifier(hand_pooled)
