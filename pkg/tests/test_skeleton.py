import unittest
import os
import tempfile

import numpy as np

from obodyhand import UnsupportedVersionError
from obodyhand.skeleton import (
    PersonTrack, SkeletonSample, Dataset, SkeletonDataError, StreamTensor, SynthSpec, save_dataset, load_dataset,
    resample_temporal, derive_bone, motion_energy, select_active_hands, pad_hand_layout, normalize_center,
    sample_stream, to_stream_tensor, synth_generate, BODY_JOINT, BODY_BONE, HAND_JOINT, HAND_BONE, TRAIN, TEST,
    BODY_DOMINANT, HAND_DOMINANT, MIXED)
from obodyhand.snippets.ojson import dump, load
from obodyhand.topology import build_topology, BODY25, HAND21_PADDED25
from tests.util import DATASET_PATH, random_dataset, random_person


class DatasetTest(unittest.TestCase):
    def test_load_fixture(self):
        dataset = load_dataset(DATASET_PATH)
        self.assertEqual(3, len(dataset))
        self.assertEqual(2, dataset.num_classes)
        self.assertEqual([0, 1, 1], dataset.labels.tolist())
        self.assertEqual([1, 2], dataset.class_histogram().tolist())
        # split defaults to train
        self.assertEqual(3, len(dataset.subset(TRAIN)))
        self.assertEqual(0, len(dataset.subset(TEST)))
        self.assertEqual(2, len(dataset.samples[0].persons))
        self.assertEqual(3, dataset.samples[0].frame_count)

    def test_round_trip_is_bit_exact(self):
        dataset = random_dataset(seed=3, persons=2)
        with tempfile.TemporaryDirectory() as dir_path:
            path = os.path.join(dir_path, "dataset.json")
            save_dataset(dataset, path)
            loaded = load_dataset(path)
        self.assertEqual(dataset, loaded)
        for a, b in zip(dataset.samples, loaded.samples):
            for pa, pb in zip(a.persons, b.persons):
                self.assertEqual(pa.body.tobytes(), pb.body.tobytes())

    def test_unsupported_version(self):
        d = load(DATASET_PATH)
        d["format_version"] = 2
        with self.assertRaises(UnsupportedVersionError) as cm:
            Dataset.from_dict(d)
        self.assertEqual("unsupported version 2", str(cm.exception))

    def test_wrong_hand_shape_names_the_field(self):
        d = load(DATASET_PATH)
        d["samples"][2]["persons"][0]["left_hand"] = [[[0., 0., 0.]] * 20] * 3
        with self.assertRaises(SkeletonDataError) as cm:
            Dataset.from_dict(d)
        self.assertIn("samples[2].persons[0].left_hand", str(cm.exception))

    def test_invalid_documents(self):
        d = load(DATASET_PATH)
        d["samples"][1]["label"] = 2
        with self.assertRaises(SkeletonDataError):
            Dataset.from_dict(d)

        d = load(DATASET_PATH)
        d["samples"][0]["persons"] = []
        with self.assertRaises(SkeletonDataError):
            Dataset.from_dict(d)

        d = load(DATASET_PATH)
        d["samples"][0]["persons"][0]["body"][0][0][0] = None
        with self.assertRaises(SkeletonDataError):
            Dataset.from_dict(d)

        d = load(DATASET_PATH)
        del d["num_classes"]
        with self.assertRaises(SkeletonDataError):
            Dataset.from_dict(d)

    def test_unparsable_file(self):
        with tempfile.TemporaryDirectory() as dir_path:
            path = os.path.join(dir_path, "dataset.json")
            with open(path, "w") as f:
                f.write("{\"format_version\": 1,")
            with self.assertRaises(SkeletonDataError):
                load_dataset(path)

    def test_frame_count_mismatch(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(SkeletonDataError):
            SkeletonSample(0, [random_person(rng, 4), random_person(rng, 5)])
        with self.assertRaises(SkeletonDataError):
            PersonTrack(np.zeros((4, 25, 3)), np.zeros((4, 21, 3)), np.zeros((5, 21, 3)))


class TransformTest(unittest.TestCase):
    def test_resample_identity_and_constant(self):
        rng = np.random.default_rng(1)
        track = rng.normal(size=(7, 25, 3))
        np.testing.assert_array_equal(track, resample_temporal(track, 7))
        np.testing.assert_array_equal(np.repeat(track[:1], 4, axis=0), resample_temporal(track[:1], 4))

    def test_resample_interpolates(self):
        track = np.zeros((3, 1, 3))
        track[:, 0, 0] = (0., 2., 4.)
        out = resample_temporal(track, 5)
        np.testing.assert_allclose([0., 1., 2., 3., 4.], out[:, 0, 0])

    def test_bone_translation_invariance(self):
        rng = np.random.default_rng(2)
        topology = build_topology(BODY25)
        track = rng.normal(size=(5, 25, 3))
        shift = np.array([1.5, -2., .3])
        bone = derive_bone(track, topology)
        np.testing.assert_allclose(bone, derive_bone(track + shift, topology), atol=1e-12)
        # root bone is zero
        self.assertEqual(0., np.abs(bone[:, 0]).sum())

    def test_bone_of_padded_hand_keeps_dummies_zero(self):
        rng = np.random.default_rng(3)
        padded, mask = pad_hand_layout(rng.normal(size=(4, 21, 3)))
        bone = derive_bone(padded, build_topology(HAND21_PADDED25))
        self.assertEqual(0., np.abs(bone[:, mask]).sum())
        self.assertEqual([21, 22, 23, 24], np.flatnonzero(mask).tolist())

    def test_normalize_center(self):
        rng = np.random.default_rng(4)
        out = normalize_center(rng.normal(size=(3, 25, 3)), 0)
        self.assertEqual(0., np.abs(out[:, 0]).sum())
        with self.assertRaises(SkeletonDataError):
            normalize_center(np.zeros((3, 25, 3)), 25)

    def test_select_active_hands_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            persons = [random_person(rng, 6, scale=rng.uniform(.1, 2.)) for _ in range(2)]
            sample = SkeletonSample(0, persons)
            energies = [np.sum(np.diff(p.body, axis=0) ** 2) for p in persons]
            expected = 0 if energies[0] >= energies[1] else 1
            left, right, index = select_active_hands(sample)
            self.assertEqual(expected, index)
            self.assertIs(persons[expected].left_hand, left)
            self.assertIs(persons[expected].right_hand, right)

    def test_select_active_hands_fixture_and_ties(self):
        dataset = load_dataset(DATASET_PATH)
        self.assertEqual(1, select_active_hands(dataset.samples[0])[2])
        still = PersonTrack(np.zeros((3, 25, 3)), np.zeros((3, 21, 3)), np.zeros((3, 21, 3)))
        self.assertEqual(0, select_active_hands(SkeletonSample(0, [still, still]))[2])
        self.assertEqual(0., motion_energy(still.body))


class StreamTensorTest(unittest.TestCase):
    def test_shapes_and_masks(self):
        dataset = load_dataset(DATASET_PATH)
        for kind, topology_kind in (
                (BODY_JOINT, BODY25), (BODY_BONE, BODY25), (HAND_JOINT, HAND21_PADDED25),
                (HAND_BONE, HAND21_PADDED25)):
            with self.subTest(kind=kind):
                tensor, labels = to_stream_tensor(dataset, kind, 8, build_topology(topology_kind))
                self.assertEqual((3, 3, 8, 2, 25), tensor.data.shape)
                self.assertEqual([0, 1, 1], labels.tolist())
                self.assertEqual(4 if tensor.is_hand else 0, int(tensor.dummy_mask.sum()))
                if tensor.is_hand:
                    self.assertEqual(0., np.abs(tensor.data[..., 21:]).sum())

    def test_missing_second_person_is_zero(self):
        dataset = load_dataset(DATASET_PATH)
        x = sample_stream(dataset.samples[1], BODY_JOINT, 8, build_topology(BODY25))
        self.assertEqual(0., np.abs(x[:, :, 1]).sum())
        self.assertGreater(np.abs(x[:, :, 0]).sum(), 0.)

    def test_body_stream_is_root_centered(self):
        dataset = load_dataset(DATASET_PATH)
        x = sample_stream(dataset.samples[0], BODY_JOINT, 8, build_topology(BODY25))
        self.assertEqual(0., np.abs(x[:, :, :, 0]).sum())

    def test_order_is_kept(self):
        dataset = random_dataset(seed=6, num_classes=4, per_class=3)
        tensor, _ = to_stream_tensor(dataset, HAND_JOINT, 6, build_topology(HAND21_PADDED25))
        for k, sample in enumerate(dataset.samples):
            np.testing.assert_array_equal(
                sample_stream(sample, HAND_JOINT, 6, build_topology(HAND21_PADDED25)), tensor.data[k])

    def test_topology_mismatch(self):
        dataset = load_dataset(DATASET_PATH)
        with self.assertRaises(SkeletonDataError):
            to_stream_tensor(dataset, HAND_JOINT, 8, build_topology(BODY25))
        with self.assertRaises(SkeletonDataError):
            to_stream_tensor(dataset, BODY_JOINT, 8, build_topology(HAND21_PADDED25))

    def test_invalid_stream_tensor(self):
        with self.assertRaises(SkeletonDataError):
            StreamTensor(np.zeros((1, 3, 4, 2, 24)), BODY_JOINT, np.zeros(25, dtype=bool))
        with self.assertRaises(SkeletonDataError):
            StreamTensor(np.zeros((1, 3, 4, 2, 25)), HAND_JOINT, np.zeros(25, dtype=bool))


def _class_displacement(dataset, a, b):
    """
    mean over frames of max over nodes of the distance between class mean primary body tracks
    """
    def class_mean(c):
        tracks = []
        for sample in dataset.samples:
            if sample.label == c:
                _, _, index = select_active_hands(sample)
                body = sample.persons[index].body
                tracks.append(body - body[:, :1])
        return np.mean(tracks, axis=0)
    return float(np.mean(np.max(np.linalg.norm(class_mean(a) - class_mean(b), axis=-1), axis=1)))


def _hand_displacement(dataset, a, b):
    def class_mean(c):
        tracks = []
        for sample in dataset.samples:
            if sample.label == c:
                left, right, _ = select_active_hands(sample)
                tracks.append(np.concatenate([left - left[:, :1], right - right[:, :1]], axis=1))
        return np.mean(tracks, axis=0)
    return float(np.mean(np.max(np.linalg.norm(class_mean(a) - class_mean(b), axis=-1), axis=1)))


class SynthTest(unittest.TestCase):
    def test_counts_and_splits(self):
        spec = SynthSpec(num_classes=4, per_class_train=3, per_class_test=2, frames=10)
        dataset = synth_generate(spec, 7)
        self.assertEqual(20, len(dataset))
        self.assertEqual([5] * 4, dataset.class_histogram().tolist())
        self.assertEqual([3] * 4, dataset.subset(TRAIN).class_histogram().tolist())
        self.assertEqual([2] * 4, dataset.subset(TEST).class_histogram().tolist())
        for sample in dataset.samples:
            self.assertEqual(2, len(sample.persons))
            self.assertEqual(10, sample.frame_count)

    def test_deterministic(self):
        spec = SynthSpec(num_classes=3, per_class_train=2, per_class_test=1, frames=8)
        self.assertEqual(synth_generate(spec, 11), synth_generate(spec, 11))
        self.assertNotEqual(synth_generate(spec, 11), synth_generate(spec, 12))

    def test_default_profiles_cycle(self):
        spec = SynthSpec()
        self.assertEqual(12, spec.num_classes)
        self.assertEqual([BODY_DOMINANT, HAND_DOMINANT, MIXED] * 4, spec.class_profile)
        self.assertEqual([1, 4, 7, 10], spec.classes_of(HAND_DOMINANT))

    def test_spec_validation(self):
        with self.assertRaises(SkeletonDataError):
            SynthSpec(num_classes=1)
        with self.assertRaises(SkeletonDataError):
            SynthSpec(num_classes=2, class_profile=[BODY_DOMINANT, "legs"])
        with self.assertRaises(SkeletonDataError):
            SynthSpec(num_classes=3, class_profile={0: MIXED, 1: MIXED})
        with self.assertRaises(SkeletonDataError):
            SynthSpec.from_dict(dict(classes=3))
        spec = SynthSpec(num_classes=2, class_profile={"0": MIXED, "1": BODY_DOMINANT})
        self.assertEqual([MIXED, BODY_DOMINANT], spec.class_profile)
        self.assertEqual(spec.to_dict(), SynthSpec.from_dict(spec.to_dict()).to_dict())

    def test_profiles_separate_the_right_parts(self):
        spec = SynthSpec(
            num_classes=4, per_class_train=20, per_class_test=0, frames=16,
            class_profile=[BODY_DOMINANT, BODY_DOMINANT, HAND_DOMINANT, HAND_DOMINANT])
        sigma = spec.noise_sigma
        dataset = synth_generate(spec, 7)

        # body-dominant pair: hands don't tell the classes apart, bodies do
        self.assertLess(_hand_displacement(dataset, 0, 1), 3 * sigma)
        self.assertGreater(_class_displacement(dataset, 0, 1), 10 * sigma)

        # hand-dominant pair: the other way round
        self.assertLess(_class_displacement(dataset, 2, 3), _class_displacement(dataset, 0, 1) / 3)
        self.assertGreater(_hand_displacement(dataset, 2, 3), 2 * _hand_displacement(dataset, 0, 1))

    def test_primary_person_moves_more(self):
        spec = SynthSpec(num_classes=3, per_class_train=4, per_class_test=0, frames=16)
        dataset = synth_generate(spec, 7)
        for sample in dataset.samples:
            energies = sorted(motion_energy(p.body) for p in sample.persons)
            self.assertGreater(energies[1], 2 * energies[0])

    def test_dataset_document_has_split(self):
        spec = SynthSpec(num_classes=2, per_class_train=1, per_class_test=1, frames=4)
        dataset = synth_generate(spec, 7)
        with tempfile.TemporaryDirectory() as dir_path:
            path = os.path.join(dir_path, "synth.json")
            dump(dataset.to_dict(), path)
            d = load(path)
        self.assertEqual([TRAIN, TRAIN, TEST, TEST], [s["split"] for s in d["samples"]])
