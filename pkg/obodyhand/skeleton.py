import logging
import math

import numpy as np

from .errors import ValidationError, UnsupportedVersionError
from .pools import get_thread_pool
from .snippets.ojson import load, dump
from .topology import BODY25_PARENTS, HAND21_PARENTS, HAND_DUMMY_NODES, STREAM_NODES


logger = logging.getLogger(__name__)


class SkeletonDataError(ValidationError):
    pass


FORMAT_VERSION = 1
BODY_NODES = 25
HAND_NODES = 21
MAX_PERSONS = 2
INSTANCES = 2

TRAIN = "train"
TEST = "test"
SPLITS = (TRAIN, TEST)

BODY_JOINT = "body-joint"
BODY_BONE = "body-bone"
HAND_JOINT = "hand-joint"
HAND_BONE = "hand-bone"
STREAM_KINDS = (BODY_JOINT, BODY_BONE, HAND_JOINT, HAND_BONE)

BODY_DOMINANT = "body-dominant"
HAND_DOMINANT = "hand-dominant"
MIXED = "mixed"
PROFILES = (BODY_DOMINANT, HAND_DOMINANT, MIXED)


def _is_count(value):
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool) and value >= 0


def _as_track(value, nodes, path):
    try:
        track = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise SkeletonDataError("%s: not a numeric array (%s)" % (path, e)) from None
    if (track.ndim != 3) or (track.shape[1:] != (nodes, 3)) or (track.shape[0] < 1):
        raise SkeletonDataError("%s: expected shape (T, %d, 3), got %s" % (path, nodes, track.shape))
    if not np.isfinite(track).all():
        raise SkeletonDataError("%s: non finite coordinate" % path)
    track.setflags(write=False)
    return track


class PersonTrack:
    def __init__(self, body, left_hand, right_hand):
        self.body = _as_track(body, BODY_NODES, "body")
        self.left_hand = _as_track(left_hand, HAND_NODES, "left_hand")
        self.right_hand = _as_track(right_hand, HAND_NODES, "right_hand")
        frames = {self.body.shape[0], self.left_hand.shape[0], self.right_hand.shape[0]}
        if len(frames) != 1:
            raise SkeletonDataError("frame counts of body and hands differ: %s" % sorted(frames))

    @property
    def frame_count(self):
        return self.body.shape[0]

    def to_dict(self):
        return dict(body=self.body, left_hand=self.left_hand, right_hand=self.right_hand)

    def __eq__(self, other):
        return (
            isinstance(other, PersonTrack) and
            np.array_equal(self.body, other.body) and
            np.array_equal(self.left_hand, other.left_hand) and
            np.array_equal(self.right_hand, other.right_hand))


class SkeletonSample:
    def __init__(self, label, persons, split=TRAIN):
        if not _is_count(label):
            raise SkeletonDataError("label: expected a non negative integer, got %r" % (label,))
        if split not in SPLITS:
            raise SkeletonDataError("split: expected one of %s, got %r" % (SPLITS, split))
        self.label = int(label)
        self.split = split
        self.persons = []
        for i, person in enumerate(persons):
            if not isinstance(person, PersonTrack):
                try:
                    person = PersonTrack(**person)
                except SkeletonDataError as e:
                    raise SkeletonDataError("persons[%d].%s" % (i, e)) from None
                except TypeError as e:
                    raise SkeletonDataError("persons[%d]: %s" % (i, e)) from None
            self.persons.append(person)
        self.persons = tuple(self.persons)
        frames = sorted(set(p.frame_count for p in self.persons))
        if len(frames) > 1:
            raise SkeletonDataError("persons: frame counts differ %s" % frames)

    @property
    def frame_count(self):
        return self.persons[0].frame_count if len(self.persons) > 0 else 0

    def to_dict(self):
        return dict(label=self.label, split=self.split, persons=[p.to_dict() for p in self.persons])

    def __eq__(self, other):
        return (
            isinstance(other, SkeletonSample) and
            (self.label == other.label) and
            (self.split == other.split) and
            (self.persons == other.persons))


class Dataset:
    def __init__(self, num_classes, samples, format_version=FORMAT_VERSION):
        if format_version != FORMAT_VERSION:
            raise UnsupportedVersionError(format_version)
        if not _is_count(num_classes) or num_classes < 2:
            raise SkeletonDataError("num_classes: expected an integer >= 2, got %r" % (num_classes,))
        self.num_classes = int(num_classes)
        self.format_version = format_version
        self.samples = tuple(samples)
        for k, sample in enumerate(self.samples):
            if sample.label >= self.num_classes:
                raise SkeletonDataError("samples[%d].label: %d is not < num_classes=%d" % (
                    k, sample.label, self.num_classes))
            if not 1 <= len(sample.persons) <= MAX_PERSONS:
                raise SkeletonDataError("samples[%d].persons: expected 1 to %d persons, got %d" % (
                    k, MAX_PERSONS, len(sample.persons)))

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        return (
            isinstance(other, Dataset) and
            (self.num_classes == other.num_classes) and
            (self.format_version == other.format_version) and
            (self.samples == other.samples))

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, split):
        if split not in SPLITS:
            raise SkeletonDataError("unknown split '%s'" % split)
        return Dataset(self.num_classes, [s for s in self.samples if s.split == split], self.format_version)

    def class_histogram(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def to_dict(self):
        return dict(
            format_version=self.format_version,
            num_classes=self.num_classes,
            samples=[s.to_dict() for s in self.samples]
        )

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise SkeletonDataError("dataset document must be a json object")
        for key in ("format_version", "num_classes", "samples"):
            if key not in d:
                raise SkeletonDataError("missing field '%s'" % key)
        if d["format_version"] != FORMAT_VERSION:
            raise UnsupportedVersionError(d["format_version"])
        samples = []
        for k, sd in enumerate(d["samples"]):
            try:
                samples.append(SkeletonSample(sd["label"], sd["persons"], sd.get("split", TRAIN)))
            except SkeletonDataError as e:
                raise SkeletonDataError("samples[%d].%s" % (k, e)) from None
            except (KeyError, TypeError, AttributeError) as e:
                raise SkeletonDataError("samples[%d]: malformed sample (%s)" % (k, e)) from None
        return cls(d["num_classes"], samples, d["format_version"])


def save_dataset(dataset, path):
    dump(dataset.to_dict(), path)
    logger.info("dataset saved", extra=dict(path=path, samples=len(dataset)))


def load_dataset(path):
    try:
        d = load(path)
    except ValueError as e:
        raise SkeletonDataError("%s does not parse: %s" % (path, e)) from None
    dataset = Dataset.from_dict(d)
    logger.info("dataset loaded", extra=dict(path=path, samples=len(dataset), num_classes=dataset.num_classes))
    return dataset


# ---------------------------------------------- TRANSFORMS -----------------------------------------------------------
def resample_temporal(track, frames):
    track = np.asarray(track, dtype=np.float64)
    t_in = track.shape[0]
    if (t_in < 1) or (frames < 1):
        raise SkeletonDataError("resampling needs at least one input and one output frame (%d -> %d)" % (
            t_in, frames))
    if t_in == 1:
        return np.repeat(track, frames, axis=0)
    if frames == 1:
        return track[:1].copy()

    position = np.arange(frames) * (t_in - 1) / (frames - 1)
    lo = np.floor(position).astype(np.int64)
    hi = np.minimum(lo + 1, t_in - 1)
    frac = (position - lo)[:, None, None]
    return track[lo] * (1. - frac) + track[hi] * frac


def derive_bone(track, topology):
    track = np.asarray(track, dtype=np.float64)
    if track.shape[1] != topology.node_count:
        raise SkeletonDataError("track has %d nodes, topology has %d" % (track.shape[1], topology.node_count))
    return track - track[:, list(topology.parents)]


def motion_energy(body):
    body = np.asarray(body, dtype=np.float64)
    return float(np.sum((body[1:] - body[:-1]) ** 2))


def select_active_hands(sample):
    """
    Returns
    -------
    left hand, right hand, index of the person with the largest body motion energy (lowest index on ties)
    """
    if len(sample.persons) == 0:
        raise SkeletonDataError("persons: sample has no person to select hands from")
    energies = [motion_energy(p.body) for p in sample.persons]
    index = int(np.argmax(energies))
    person = sample.persons[index]
    return person.left_hand, person.right_hand, index


def pad_hand_layout(hand):
    hand = np.asarray(hand, dtype=np.float64)
    if (hand.ndim != 3) or (hand.shape[1] != HAND_NODES):
        raise SkeletonDataError("hand: expected shape (T, %d, 3), got %s" % (HAND_NODES, hand.shape))
    padded = np.zeros((hand.shape[0], STREAM_NODES, hand.shape[2]))
    padded[:, :HAND_NODES] = hand
    mask = np.zeros(STREAM_NODES, dtype=bool)
    mask[list(HAND_DUMMY_NODES)] = True
    return padded, mask


def normalize_center(track, root_index):
    track = np.asarray(track, dtype=np.float64)
    if not 0 <= root_index < track.shape[1]:
        raise SkeletonDataError("root index %d is out of range [0, %d)" % (root_index, track.shape[1]))
    return track - track[:, root_index:root_index + 1]


class StreamTensor:
    def __init__(self, data, stream_kind, dummy_mask):
        data = np.asarray(data)
        if stream_kind not in STREAM_KINDS:
            raise SkeletonDataError("unknown stream kind '%s', expected one of %s" % (stream_kind, STREAM_KINDS))
        if (data.ndim != 5) or (data.shape[1] != 3) or (data.shape[3:] != (INSTANCES, STREAM_NODES)):
            raise SkeletonDataError("stream data: expected shape (N, 3, T, %d, %d), got %s" % (
                INSTANCES, STREAM_NODES, data.shape))
        dummy_mask = np.asarray(dummy_mask, dtype=bool)
        expected = len(HAND_DUMMY_NODES) if stream_kind.startswith("hand") else 0
        if (dummy_mask.shape != (STREAM_NODES,)) or (int(dummy_mask.sum()) != expected):
            raise SkeletonDataError("dummy_mask: %s stream needs %d dummy nodes" % (stream_kind, expected))
        self.data = data
        self.stream_kind = stream_kind
        self.dummy_mask = dummy_mask

    @property
    def is_hand(self):
        return self.stream_kind.startswith("hand")

    @property
    def is_bone(self):
        return self.stream_kind.endswith("bone")

    def __len__(self):
        return self.data.shape[0]


def _check_stream_topology(kind, topology):
    if topology.node_count != STREAM_NODES:
        raise SkeletonDataError("%s stream needs a %d node topology, got %d" % (kind, STREAM_NODES, topology.node_count))
    dummies = int(topology.dummy_mask.sum())
    if kind.startswith("hand") and not np.array_equal(np.flatnonzero(topology.dummy_mask), HAND_DUMMY_NODES):
        raise SkeletonDataError("%s stream needs dummy nodes %s in its topology" % (kind, HAND_DUMMY_NODES))
    if kind.startswith("body") and dummies != 0:
        raise SkeletonDataError("%s stream topology can't have dummy nodes" % kind)


def _body_instance(body, frames, bone, topology):
    x = normalize_center(resample_temporal(body, frames), 0)
    return derive_bone(x, topology) if bone else x


def _hand_instance(hand, frames, bone, topology):
    x, _ = pad_hand_layout(normalize_center(resample_temporal(hand, frames), 0))
    return derive_bone(x, topology) if bone else x


def sample_stream(sample, kind, frames, topology):
    """
    Returns
    -------
    (3, frames, 2, 25) array of one sample
    """
    bone = kind.endswith("bone")
    instances = np.zeros((INSTANCES, frames, STREAM_NODES, 3))
    if kind.startswith("hand"):
        left, right, _ = select_active_hands(sample)
        instances[0] = _hand_instance(left, frames, bone, topology)
        instances[1] = _hand_instance(right, frames, bone, topology)
    else:
        # missing second person stays zero
        for i, person in enumerate(sample.persons[:INSTANCES]):
            instances[i] = _body_instance(person.body, frames, bone, topology)
    return instances.transpose(3, 1, 0, 2)


def to_stream_tensor(dataset, kind, frames, topology):
    if kind not in STREAM_KINDS:
        raise SkeletonDataError("unknown stream kind '%s', expected one of %s" % (kind, STREAM_KINDS))
    if frames < 2:
        raise SkeletonDataError("stream tensors need at least 2 frames, got %d" % frames)
    _check_stream_topology(kind, topology)

    def _one(k_sample):
        k, sample = k_sample
        try:
            return sample_stream(sample, kind, frames, topology)
        except SkeletonDataError as e:
            raise SkeletonDataError("samples[%d].%s" % (k, e)) from None

    # map keeps sample order
    arrays = list(get_thread_pool().map(_one, enumerate(dataset.samples)))
    data = np.stack(arrays) if len(arrays) > 0 else np.zeros((0, 3, frames, INSTANCES, STREAM_NODES))
    mask = np.zeros(STREAM_NODES, dtype=bool)
    if kind.startswith("hand"):
        mask[list(HAND_DUMMY_NODES)] = True
    logger.debug("stream tensor built", extra=dict(kind=kind, shape=data.shape))
    return StreamTensor(data, kind, mask), dataset.labels


# ---------------------------------------------- SYNTHETIC DATA -------------------------------------------------------
# rest offsets of every node from its parent, in meters
_BODY25_OFFSETS = (
    (0., 0., 0.), (0., .25, 0.), (0., .25, 0.), (0., .15, 0.), (0., .15, 0.),
    (-.2, 0., 0.), (-.05, -.28, 0.), (0., -.25, 0.), (0., -.08, 0.), (0., -.06, 0.), (.03, -.03, .02),
    (.2, 0., 0.), (.05, -.28, 0.), (0., -.25, 0.), (0., -.08, 0.), (0., -.06, 0.), (-.03, -.03, .02),
    (-.1, -.05, 0.), (0., -.42, 0.), (0., -.4, 0.), (0., -.03, .1),
    (.1, -.05, 0.), (0., -.42, 0.), (0., -.4, 0.), (0., -.03, .1),
)
_BODY_CHAINS = (
    (1, 2, 3, 4),  # torso and head
    (5, 6, 7, 8, 9, 10),
    (11, 12, 13, 14, 15, 16),
    (17, 18, 19, 20),
    (21, 22, 23, 24),
)
_ARM_CHAINS = (1, 2)
_FINGER_SPREAD = (-.035, -.015, 0., .015, .03)
_FINGER_LENGTHS = (.035, .04, .045, .04, .03)
_DISTRACTOR_OFFSET = np.array([1.2, 0., .4])


def _rest_pose(parents, offsets):
    pose = np.zeros((len(parents), 3))
    for v, p in enumerate(parents):  # parents always precede children
        pose[v] = pose[p] + np.asarray(offsets[v]) if p != v else np.asarray(offsets[v])
    return pose


def _right_hand_offsets():
    offsets = [(0., 0., 0.)]
    for spread, length in zip(_FINGER_SPREAD, _FINGER_LENGTHS):
        offsets.append((spread, .04, 0.))
        offsets.extend([(spread * .2, length / 3, 0.)] * 3)
    return offsets


BODY_REST = _rest_pose(BODY25_PARENTS, _BODY25_OFFSETS)
RIGHT_HAND_REST = _rest_pose(HAND21_PARENTS, _right_hand_offsets())
LEFT_HAND_REST = RIGHT_HAND_REST * np.array([-1., 1., 1.])


class SynthSpec:
    def __init__(self, num_classes=12, per_class_train=50, per_class_test=25, frames=48, noise_sigma=0.01,
                 class_profile=None):
        """
        class_profile: list (or {class index: profile} map) assigning every class to body-dominant,
            hand-dominant or mixed. Default cycles through the three profiles.
        """
        self.num_classes = num_classes
        self.per_class_train = per_class_train
        self.per_class_test = per_class_test
        self.frames = frames
        self.noise_sigma = noise_sigma
        if class_profile is None:
            class_profile = [PROFILES[c % len(PROFILES)] for c in range(num_classes)]
        elif isinstance(class_profile, dict):
            keys = sorted(int(k) for k in class_profile)
            if keys != list(range(num_classes)):
                raise SkeletonDataError("class_profile: must cover classes 0..%d exactly once, got %s" % (
                    num_classes - 1, keys))
            class_profile = [class_profile.get(c, class_profile.get(str(c))) for c in range(num_classes)]
        self.class_profile = list(class_profile)
        self.validate()

    def validate(self):
        if isinstance(self.num_classes, bool) or not isinstance(self.num_classes, int) or self.num_classes < 2:
            raise SkeletonDataError("num_classes: expected an integer >= 2, got %r" % (self.num_classes,))
        for name in ("per_class_train", "per_class_test"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise SkeletonDataError("%s: expected a non negative integer, got %r" % (name, v))
        if not isinstance(self.frames, int) or self.frames < 1:
            raise SkeletonDataError("frames: expected a positive integer, got %r" % (self.frames,))
        if not (self.noise_sigma >= 0):
            raise SkeletonDataError("noise_sigma: must be >= 0, got %r" % (self.noise_sigma,))
        if len(self.class_profile) != self.num_classes:
            raise SkeletonDataError("class_profile: %d entries for %d classes" % (
                len(self.class_profile), self.num_classes))
        for c, profile in enumerate(self.class_profile):
            if profile not in PROFILES:
                raise SkeletonDataError("class_profile[%d]: unknown profile %r, expected one of %s" % (
                    c, profile, PROFILES))

    def classes_of(self, profile):
        return [c for c, p in enumerate(self.class_profile) if p == profile]

    def to_dict(self):
        return dict(
            num_classes=self.num_classes,
            per_class_train=self.per_class_train,
            per_class_test=self.per_class_test,
            frames=self.frames,
            noise_sigma=self.noise_sigma,
            class_profile=list(self.class_profile)
        )

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise SkeletonDataError("synthetic spec: %s" % e) from None


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _chain_motion(rng, chains, count, amplitude):
    """
    Returns
    -------
    list of (chain nodes, amplitude, cycles, phase, direction)
    """
    picked = rng.choice(len(chains), size=count, replace=False)
    return [
        (chains[i], rng.uniform(*amplitude), float(rng.choice([.5, 1., 1.5, 2.])), rng.uniform(0, 2 * math.pi),
         _unit(rng))
        for i in sorted(picked)
    ]


def _apply_motion(pose, motions, frames, scale=1., phase_jitter=0.):
    tau = np.linspace(0., 1., frames) if frames > 1 else np.zeros(1)
    track = np.repeat(pose[None], frames, axis=0)
    for nodes, amplitude, cycles, phase, direction in motions:
        wave = amplitude * scale * np.sin(2 * math.pi * cycles * tau + phase + phase_jitter)
        for depth, v in enumerate(nodes, start=1):
            track[:, v] += (depth / len(nodes)) * wave[:, None] * direction[None, :]
    return track


class _ClassModel:
    def __init__(self, profile, seed, c):
        rng = np.random.default_rng([seed, 1, c])
        self.profile = profile
        self.body = []
        self.hands = ([], [])
        if profile in (BODY_DOMINANT, MIXED):
            self.body = _chain_motion(rng, _BODY_CHAINS, 2, (.3, .6))
        if profile in (HAND_DOMINANT, MIXED):
            fingers = tuple(tuple(range(1 + 4 * f, 5 + 4 * f)) for f in range(len(_FINGER_SPREAD)))
            self.hands = tuple(_chain_motion(rng, fingers, 3, (.04, .08)) for _ in range(2))


def _idle_motion(seed):
    # class independent sway of both arms
    rng = np.random.default_rng([seed, 3])
    return [(_BODY_CHAINS[i], .2, 3., rng.uniform(0, 2 * math.pi), _unit(rng)) for i in _ARM_CHAINS]


def _synth_sample(spec, seed, c, model, idle, split, j):
    rng = np.random.default_rng([seed, 2, c, SPLITS.index(split), j])
    frames, sigma = spec.frames, spec.noise_sigma
    scale = rng.uniform(.8, 1.2)
    jitter = rng.normal(0., .2)

    def noise(shape):
        return rng.normal(0., sigma, size=shape)

    body = _apply_motion(BODY_REST, model.body + idle, frames, scale, jitter)
    hands = [
        _apply_motion(rest, motions, frames, scale, jitter) + BODY_REST[wrist]
        for rest, motions, wrist in ((LEFT_HAND_REST, model.hands[0], 7), (RIGHT_HAND_REST, model.hands[1], 13))
    ]
    primary = PersonTrack(
        body + noise(body.shape), hands[0] + noise(hands[0].shape), hands[1] + noise(hands[1].shape))

    quiet = [(nodes, amplitude * .15, cycles, phase, direction) for nodes, amplitude, cycles, phase, direction in idle]
    d_body = _apply_motion(BODY_REST, quiet, frames) + _DISTRACTOR_OFFSET
    d_hands = [np.repeat((rest + BODY_REST[wrist] + _DISTRACTOR_OFFSET)[None], frames, axis=0)
               for rest, wrist in ((LEFT_HAND_REST, 7), (RIGHT_HAND_REST, 13))]
    distractor = PersonTrack(
        d_body + noise(d_body.shape), d_hands[0] + noise(d_hands[0].shape), d_hands[1] + noise(d_hands[1].shape))

    persons = [primary, distractor] if rng.integers(2) == 0 else [distractor, primary]
    return SkeletonSample(c, persons, split)


def synth_generate(spec, seed):
    """
    Body-dominant classes differ by body trajectories only, hand-dominant classes by finger trajectories only,
    mixed classes by both. Every sample holds the acting person and a low-motion distractor, in random order.
    """
    spec.validate()
    idle = _idle_motion(seed)
    models = [_ClassModel(profile, seed, c) for c, profile in enumerate(spec.class_profile)]
    samples = []
    for split, count in ((TRAIN, spec.per_class_train), (TEST, spec.per_class_test)):
        for j in range(count):
            for c in range(spec.num_classes):
                samples.append(_synth_sample(spec, seed, c, models[c], idle, split, j))
    logger.info(
        "synthetic dataset generated",
        extra=dict(seed=seed, samples=len(samples), num_classes=spec.num_classes)
    )
    return Dataset(spec.num_classes, samples)
