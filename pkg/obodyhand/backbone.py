"""
Spatio-temporal graph convolution stream (ST-GCN style).

Feature maps are 5-axis tensors (N, C, T, I, V): batch, channel, time, instance (person or hand), node.
"""
import logging
import math

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ValidationError


logger = logging.getLogger(__name__)


class BackboneError(ValidationError):
    pass


DEFAULT_CHANNELS = (16, 32, 32, 64)
DEFAULT_STRIDES = (1, 2, 1, 2)
DEFAULT_TEMPORAL_KERNEL = 5


def spatial_graph_conv(x, adjacency, weight):
    """
    Parameters
    ----------
    x: (N, C_in, T, I, V)
    adjacency: (S, V, V), out[w] aggregates x[v] * adjacency[s, v, w]
    weight: (S, C_in, C_out)

    Returns
    -------
    (N, C_out, T, I, V)
    """
    if x.dim() != 5:
        raise BackboneError("feature map must have 5 axes (N, C, T, I, V), got shape %s" % (tuple(x.shape),))
    if (adjacency.dim() != 3) or (adjacency.shape[1] != adjacency.shape[2]) or (adjacency.shape[1] != x.shape[4]):
        raise BackboneError("adjacency of shape %s does not match %d nodes" % (tuple(adjacency.shape), x.shape[4]))
    if (weight.dim() != 3) or (weight.shape[0] != adjacency.shape[0]) or (weight.shape[1] != x.shape[1]):
        raise BackboneError("weight of shape %s does not match %d subsets and %d input channels" % (
            tuple(weight.shape), adjacency.shape[0], x.shape[1]))
    aggregated = torch.einsum("nctiv,svw->nsctiw", x, adjacency)
    return torch.einsum("nsctiw,scd->ndtiw", aggregated, weight)


def temporal_conv(x, kernel, stride=1):
    """
    Parameters
    ----------
    x: (N, C_in, T, I, V)
    kernel: (C_out, C_in, k_t), k_t odd, zero padded by (k_t - 1) / 2 on both sides
    stride: 1 or 2, output has ceil(T / stride) frames
    """
    if x.dim() != 5:
        raise BackboneError("feature map must have 5 axes (N, C, T, I, V), got shape %s" % (tuple(x.shape),))
    if (kernel.dim() != 3) or (kernel.shape[1] != x.shape[1]):
        raise BackboneError("kernel of shape %s does not match %d input channels" % (tuple(kernel.shape), x.shape[1]))
    k_t = kernel.shape[2]
    if k_t % 2 == 0:
        raise BackboneError("temporal kernel size must be odd, got %d" % k_t)
    if stride not in (1, 2):
        raise BackboneError("temporal stride must be 1 or 2, got %r" % (stride,))
    n, c, t, i, v = x.shape
    y = F.conv2d(x.reshape(n, c, t, i * v), kernel.unsqueeze(-1), stride=(stride, 1), padding=((k_t - 1) // 2, 0))
    return y.reshape(n, kernel.shape[0], y.shape[2], i, v)


def output_frames(frames, strides):
    for stride in strides:
        frames = math.ceil(frames / stride)
    return frames


class SpatialGraphConv(nn.Module):
    def __init__(self, adjacency, in_channels, out_channels):
        super().__init__()
        self.register_buffer("adjacency", torch.as_tensor(adjacency.subsets), persistent=False)
        self.weight = nn.Parameter(torch.empty(adjacency.subset_count, in_channels, out_channels))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1. / math.sqrt(self.weight.shape[0] * self.weight.shape[1])
        nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, x):
        return spatial_graph_conv(x, self.adjacency, self.weight)


class TemporalConv(nn.Module):
    def __init__(self, channels, kernel_size=DEFAULT_TEMPORAL_KERNEL, stride=1):
        super().__init__()
        if kernel_size % 2 == 0:
            raise BackboneError("temporal kernel size must be odd, got %d" % kernel_size)
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1. / math.sqrt(self.weight.shape[1] * self.weight.shape[2])
        nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, x):
        return temporal_conv(x, self.weight, self.stride)


class GraphBlock(nn.Module):
    """
    spatial conv -> norm -> relu -> temporal conv -> norm -> relu
    """
    def __init__(self, adjacency, in_channels, out_channels, kernel_size=DEFAULT_TEMPORAL_KERNEL, stride=1):
        super().__init__()
        self.spatial = SpatialGraphConv(adjacency, in_channels, out_channels)
        self.spatial_norm = nn.BatchNorm3d(out_channels)
        self.spatial_relu = nn.ReLU()
        self.temporal = TemporalConv(out_channels, kernel_size, stride)
        self.temporal_norm = nn.BatchNorm3d(out_channels)
        self.temporal_relu = nn.ReLU()

    def forward(self, x):
        x = self.spatial_relu(self.spatial_norm(self.spatial(x)))
        return self.temporal_relu(self.temporal_norm(self.temporal(x)))


class Backbone(nn.Module):
    def __init__(self, adjacency, channels=DEFAULT_CHANNELS, strides=DEFAULT_STRIDES,
                 temporal_kernel=DEFAULT_TEMPORAL_KERNEL, in_channels=3):
        super().__init__()
        if len(channels) != len(strides):
            raise BackboneError("%d block widths for %d strides" % (len(channels), len(strides)))
        if len(channels) == 0:
            raise BackboneError("backbone needs at least one block")
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.strides = tuple(strides)
        widths = (in_channels,) + self.channels
        self.blocks = nn.ModuleList([
            GraphBlock(adjacency, c_in, c_out, temporal_kernel, stride)
            for c_in, c_out, stride in zip(widths[:-1], widths[1:], self.strides)
        ])

    @property
    def out_channels(self):
        return self.channels[-1]

    def output_frames(self, frames):
        return output_frames(frames, self.strides)

    def forward(self, x):
        if (x.dim() != 5) or (x.shape[1] != self.in_channels):
            raise BackboneError("stream input must be (N, %d, T, I, V), got %s" % (self.in_channels, tuple(x.shape)))
        for block in self.blocks:
            x = block(x)
        return x
