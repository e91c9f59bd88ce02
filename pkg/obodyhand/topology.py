"""
Fixed skeleton layouts and the normalized adjacency stacks consumed by graph convolution.

Body layout (25 nodes, pelvis root):
    0 pelvis, 1 spine_mid, 2 chest, 3 neck, 4 head,
    5-10 left arm (shoulder, elbow, wrist, hand, hand_tip, thumb),
    11-16 right arm (same order),
    17-20 left leg (hip, knee, ankle, foot), 21-24 right leg (same order).

Hand layout (21 nodes, wrist root) padded to 25:
    0 wrist, then 4 nodes per finger from base to tip: thumb 1-4, index 5-8, middle 9-12, ring 13-16,
    pinky 17-20. Nodes 21-24 are dummies: self-parented, without edges.
"""
import logging

import numpy as np

from .errors import ValidationError


logger = logging.getLogger(__name__)


class TopologyError(ValidationError):
    pass


BODY25 = "body25"
HAND21_PADDED25 = "hand21_padded25"
TOPOLOGY_KINDS = (BODY25, HAND21_PADDED25)

UNIFORM = "uniform"
DISTANCE = "distance"
PARTITIONS = (UNIFORM, DISTANCE)

BODY25_NAMES = (
    "pelvis", "spine_mid", "chest", "neck", "head",
    "shoulder_l", "elbow_l", "wrist_l", "hand_l", "hand_tip_l", "thumb_l",
    "shoulder_r", "elbow_r", "wrist_r", "hand_r", "hand_tip_r", "thumb_r",
    "hip_l", "knee_l", "ankle_l", "foot_l",
    "hip_r", "knee_r", "ankle_r", "foot_r",
)
BODY25_PARENTS = (
    0, 0, 1, 2, 3,
    2, 5, 6, 7, 8, 8,
    2, 11, 12, 13, 14, 14,
    0, 17, 18, 19,
    0, 21, 22, 23,
)

HAND_FINGERS = ("thumb", "index", "middle", "ring", "pinky")
HAND21_NAMES = ("wrist",) + tuple("%s_%d" % (f, k) for f in HAND_FINGERS for k in range(1, 5))
HAND21_PARENTS = (0,) + tuple(
    0 if k == 0 else 1 + 4 * f + k - 1 for f in range(len(HAND_FINGERS)) for k in range(4))
HAND_DUMMY_NODES = (21, 22, 23, 24)
STREAM_NODES = 25


class GraphTopology:
    def __init__(self, parents, names=None, dummy_nodes=()):
        """
        Parameters
        ----------
        parents: node -> parent node, a root is its own parent
        names: optional node names
        dummy_nodes: padding nodes, must be self-parented and are left without edges
        """
        self._parents = tuple(int(p) for p in parents)
        self._names = None if names is None else tuple(names)
        self._dummy_nodes = frozenset(int(d) for d in dummy_nodes)
        self._check()
        self._edges = tuple(sorted((p, v) for v, p in enumerate(self._parents) if p != v))

    def _check(self):
        n = len(self._parents)
        if n == 0:
            raise TopologyError("topology must have at least one node")
        if (self._names is not None) and (len(self._names) != n):
            raise TopologyError("%d names given for %d nodes" % (len(self._names), n))
        for v, p in enumerate(self._parents):
            if not 0 <= p < n:
                raise TopologyError("parent[%d]=%d is out of range [0, %d)" % (v, p, n))
        for d in self._dummy_nodes:
            if not 0 <= d < n:
                raise TopologyError("dummy node %d is out of range [0, %d)" % (d, n))
            if self._parents[d] != d:
                raise TopologyError("dummy node %d must be its own parent" % d)
            children = [v for v, p in enumerate(self._parents) if (p == d) and (v != d)]
            if len(children) > 0:
                raise TopologyError("dummy node %d can't have children: %s" % (d, children))

        # every chain must end on a root (no cycle)
        for v in range(n):
            seen = set()
            node = v
            while self._parents[node] != node:
                if node in seen:
                    raise TopologyError("parent cycle through node %d" % v)
                seen.add(node)
                node = self._parents[node]

    @property
    def node_count(self):
        return len(self._parents)

    @property
    def parents(self):
        return self._parents

    @property
    def names(self):
        return self._names

    @property
    def edges(self):
        return self._edges

    @property
    def roots(self):
        return tuple(v for v, p in enumerate(self._parents) if (p == v) and (v not in self._dummy_nodes))

    @property
    def dummy_mask(self):
        mask = np.zeros(self.node_count, dtype=bool)
        mask[list(self._dummy_nodes)] = True
        return mask

    def parent(self, v):
        return self._parents[v]

    def degree(self, v):
        return sum(1 for e in self._edges if v in e)

    def hops_to_root(self, v):
        hops = 0
        while self._parents[v] != v:
            v = self._parents[v]
            hops += 1
        return hops

    def adjacency(self):
        a = np.zeros((self.node_count, self.node_count))
        for i, j in self._edges:
            a[i, j] = a[j, i] = 1.
        return a

    def parent_matrix(self):
        """
        p[v, parent(v)] = 1 for every non-root node
        """
        p = np.zeros((self.node_count, self.node_count))
        for v, u in enumerate(self._parents):
            if u != v:
                p[v, u] = 1.
        return p

    def __eq__(self, other):
        return (
            isinstance(other, GraphTopology) and
            (self._parents == other._parents) and
            (self._dummy_nodes == other._dummy_nodes))

    def __repr__(self):
        return "<GraphTopology nodes=%d edges=%d dummies=%d>" % (
            self.node_count, len(self._edges), len(self._dummy_nodes))


def build_topology(kind):
    if kind == BODY25:
        return GraphTopology(BODY25_PARENTS, names=BODY25_NAMES)
    if kind == HAND21_PADDED25:
        return GraphTopology(
            HAND21_PARENTS + HAND_DUMMY_NODES,
            names=HAND21_NAMES + tuple("dummy_%d" % d for d in HAND_DUMMY_NODES),
            dummy_nodes=HAND_DUMMY_NODES
        )
    raise TopologyError("unknown topology kind '%s', expected one of %s" % (kind, TOPOLOGY_KINDS))


class AdjacencyStack:
    def __init__(self, subsets, partition):
        self.subsets = np.asarray(subsets, dtype=np.float64)
        self.partition = partition

    @property
    def subset_count(self):
        return self.subsets.shape[0]

    @property
    def node_count(self):
        return self.subsets.shape[1]

    def __len__(self):
        return self.subset_count


def normalize_adjacency(topology, partition=DISTANCE):
    """
    All subsets share the degree of A + I over real nodes, so a distance stack sums to the uniform matrix.
    Zero-degree (dummy) nodes keep zero rows and columns.
    """
    if partition not in PARTITIONS:
        raise TopologyError("unknown partition '%s', expected one of %s" % (partition, PARTITIONS))

    real = (~topology.dummy_mask).astype(np.float64)
    self_loops = np.diag(real)
    a = topology.adjacency()
    degree = (a + self_loops).sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    inv_sqrt[degree > 0] = degree[degree > 0] ** -0.5

    if partition == UNIFORM:
        raw = [a + self_loops]
    else:
        p = topology.parent_matrix()
        raw = [self_loops, p, p.T]

    subsets = [inv_sqrt[:, None] * s * inv_sqrt[None, :] for s in raw]
    return AdjacencyStack(np.stack(subsets), partition)
