import unittest
from unittest import mock
import math
import os
import tempfile

import numpy as np
import torch

from obodyhand import NumericError
from obodyhand.checkpoint import Checkpoint, CheckpointError
from obodyhand.models import ScoreFusionModel, build_model
from obodyhand.run_config import loss_weights
from obodyhand.skeleton import (
    PersonTrack, SkeletonSample, Dataset, synth_generate, BODY_REST, LEFT_HAND_REST, RIGHT_HAND_REST, TRAIN, TEST)
from obodyhand.snippets.ojson import load, dump
from obodyhand.training import (
    confusion_matrix, per_class_accuracy, Metrics, ensemble_streams, metrics_from_logits, evaluate, train,
    split_dataset, prepare_streams, lr_milestones, EvaluationError)
from tests.util import tiny_run_config, tiny_synth_spec, random_dataset


def _mirrored_dataset(per_class=8, frames=6, seed=0):
    """
    two classes, the second one upside down
    """
    rng = np.random.default_rng(seed)
    flip = np.array([1., -1., 1.])
    samples = []
    for _ in range(per_class):
        for c in range(2):
            f = flip if c == 1 else np.ones(3)
            body, left, right = (
                np.repeat((rest * f)[None], frames, axis=0) + rng.normal(0, .005, (frames, len(rest), 3))
                for rest in (BODY_REST, LEFT_HAND_REST, RIGHT_HAND_REST))
            samples.append(SkeletonSample(c, [PersonTrack(body, left, right)], TRAIN))
    return Dataset(2, samples)


class MetricsTest(unittest.TestCase):
    def test_confusion(self):
        self.assertEqual([[1, 1], [0, 1]], confusion_matrix([0, 1, 1], [0, 1, 0], 2).tolist())
        self.assertEqual([[0, 0, 0]] * 3, confusion_matrix([], [], 3).tolist())
        with self.assertRaises(EvaluationError):
            confusion_matrix([0, 2], [0, 1], 2)
        with self.assertRaises(EvaluationError):
            confusion_matrix([0], [0, 1], 2)

    def test_accuracy_is_trace_over_total(self):
        rng = np.random.default_rng(0)
        labels, predictions = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
        metrics = Metrics(4, labels, predictions)
        self.assertEqual(50, metrics.confusion.sum())
        self.assertAlmostEqual(np.trace(metrics.confusion) / 50, metrics.accuracy)
        self.assertAlmostEqual(float(np.mean(labels == predictions)), metrics.accuracy)

    def test_per_class_accuracy_without_support(self):
        confusion = confusion_matrix([0, 0, 1], [0, 1, 1], 3)
        self.assertEqual([1., .5, None], per_class_accuracy(confusion))
        metrics = Metrics(3, [0, 1, 1], [0, 0, 1])
        self.assertEqual(1., metrics.classes_accuracy([0, 2]))
        self.assertIsNone(metrics.classes_accuracy([2]))

    def test_ensemble(self):
        fused = ensemble_streams([torch.tensor([[2., 0.]]), torch.tensor([[0., 1.]])])
        self.assertEqual([[1., .5]], fused.tolist())
        metrics = metrics_from_logits({}, fused, [0], 2)
        self.assertEqual([0], metrics.predictions.tolist())

    def test_perfect_and_constant_predictors(self):
        labels = [0, 1, 2, 2, 1]
        perfect = torch.nn.functional.one_hot(torch.tensor(labels), 3).double()
        constant = torch.zeros(5, 3, dtype=torch.float64)
        metrics = metrics_from_logits(dict(perfect=perfect, constant=constant), perfect, labels, 3)
        self.assertEqual(1., metrics.accuracy)
        self.assertEqual(1., metrics.stream_accuracy["perfect"])
        # ties go to class 0
        self.assertEqual(.2, metrics.stream_accuracy["constant"])
        self.assertEqual([1., 0., 0.], metrics.stream_per_class_accuracy["constant"])


class DataTest(unittest.TestCase):
    def test_split_falls_back_to_train(self):
        dataset = random_dataset()
        train_set, eval_set = split_dataset(dataset)
        self.assertEqual(len(dataset), len(train_set))
        self.assertIs(train_set, eval_set)
        with self.assertRaises(EvaluationError):
            split_dataset(random_dataset(split=TEST))

    def test_prepare_streams(self):
        config = tiny_run_config()
        x_body, x_hand, labels = prepare_streams(random_dataset(frames=5), config, "bone")
        self.assertEqual((6, 3, 8, 2, 25), tuple(x_body.shape))
        self.assertEqual(torch.float64, x_hand.dtype)
        self.assertEqual(0., x_hand[..., 21:].abs().sum().item())
        self.assertEqual([0, 1, 2, 0, 1, 2], labels.tolist())
        with self.assertRaises(EvaluationError):
            prepare_streams(random_dataset(), config, "velocity")

    def test_lr_milestones(self):
        self.assertEqual([18, 24], lr_milestones(30))
        self.assertEqual([1, 1], lr_milestones(2))


class TrainTest(unittest.TestCase):
    def test_deterministic_histories(self):
        config = tiny_run_config(variant="expertized", pretrain_epochs=1)
        dataset = synth_generate(tiny_synth_spec(), 1)
        histories = [train(config, dataset)[1].loss_history for _ in range(2)]
        self.assertEqual(histories[0], histories[1])
        self.assertEqual(
            ["body_expert", "hand_expert", "joint", "joint"], [r["phase"] for r in histories[0]])
        self.assertTrue(all(math.isfinite(r["loss"]) for r in histories[0]))

    def test_checkpoint_round_trip(self):
        config = tiny_run_config(variant="pam", streams=["joint", "bone"], lambda_cpl=0., epochs=1)
        dataset = synth_generate(tiny_synth_spec(), 2)
        checkpoint, metrics = train(config, dataset)
        self.assertIn("joint", metrics.stream_accuracy)
        self.assertIn("joint.body", metrics.stream_accuracy)
        self.assertIn("bone.hand", metrics.stream_accuracy)
        with tempfile.TemporaryDirectory() as dir_path:
            path = checkpoint.save(os.path.join(dir_path, "checkpoint.json"))
            document = load(path)
            self.assertEqual(0., document["loss_weights"]["lambda_cpl"])
            self.assertEqual(1., document["loss_weights"]["lambda_body"])
            self.assertEqual(["joint", "bone"], document["streams"])
            loaded = Checkpoint.load(path)

            # corrupted parameter shape
            name = next(iter(document["parameters"]))
            document["parameters"][name]["shape"] = [1]
            document["parameters"][name]["values"] = [0.]
            dump(document, path)
            with self.assertRaises(CheckpointError):
                Checkpoint.load(path)

        self.assertEqual(checkpoint.history, loaded.history)
        test_set = dataset.subset(TEST)
        reloaded = evaluate(loaded, test_set)
        original = evaluate(checkpoint, test_set)
        self.assertEqual(original.predictions.tolist(), reloaded.predictions.tolist())
        self.assertEqual(original.accuracy, reloaded.accuracy)

        only_joint = evaluate(checkpoint, test_set, streams=["joint"])
        self.assertEqual(original.stream_accuracy["joint"], only_joint.accuracy)
        with self.assertRaises(EvaluationError):
            evaluate(checkpoint, test_set, streams=["velocity"])

    def test_expert_only_evaluation(self):
        config = tiny_run_config(variant="expertized", epochs=1)
        dataset = synth_generate(tiny_synth_spec(), 3)
        checkpoint, _ = train(config, dataset)
        test_set = dataset.subset(TEST)
        metrics = evaluate(checkpoint, test_set, expert_only=True)
        self.assertEqual(metrics.stream_accuracy["joint.expert_only"], metrics.accuracy)
        # evaluation does not change the stored mode
        self.assertFalse(checkpoint.models["joint"].expert_only)

    def test_stream_not_in_checkpoint(self):
        config = tiny_run_config(variant="score_fusion", epochs=1)
        dataset = synth_generate(tiny_synth_spec(), 4)
        checkpoint, _ = train(config, dataset)
        with self.assertRaises(EvaluationError):
            evaluate(checkpoint, dataset, streams=["bone"])
        with self.assertRaises(EvaluationError):
            evaluate(checkpoint, random_dataset(num_classes=4))

    def test_non_finite_loss(self):
        config = tiny_run_config(variant="score_fusion", epochs=1)

        def nan_loss(self, out, labels, weights):
            return out.body.sum() * float("nan")

        with mock.patch.object(ScoreFusionModel, "loss", nan_loss):
            with self.assertRaises(NumericError) as cm:
                train(config, random_dataset())
        self.assertIn("epoch 0, batch 0", str(cm.exception))

    def test_separable_loss_drops(self):
        # 16 samples, batch 4, 50 epochs: 200 steps
        config = tiny_run_config(
            variant="score_fusion", epochs=50, batch_size=4, learning_rate=.1, frames=6, seed=0)
        dataset = _mirrored_dataset()
        torch.manual_seed(config.seed)
        model = build_model(config, 2)
        x_body, x_hand, labels = prepare_streams(dataset, config, "joint")
        with torch.no_grad():
            initial = model.loss(model(x_body, x_hand), labels, loss_weights(config)).item()

        _, metrics = train(config, dataset)
        history = metrics.loss_history
        self.assertEqual(50, len(history))
        self.assertLess(history[-1]["loss"], initial / 10)
        self.assertEqual(1., metrics.accuracy)
