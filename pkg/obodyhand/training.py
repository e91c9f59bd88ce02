"""
Training loop, evaluation, stream ensembling and metrics.

Each modality stream (joint, bone) gets its own dual model. Training is cold start, or two-phase when
pretrain_epochs > 0: body and hand experts are first trained alone, then loaded into the dual model which is
fine-tuned end to end.
"""
from collections import OrderedDict
import logging

import numpy as np
import psutil
from sklearn.metrics import confusion_matrix as _sk_confusion_matrix
import torch

from .checkpoint import Checkpoint
from .errors import ValidationError, NumericError
from .models import (
    build_model, build_experts, stream_adjacencies, cross_entropy, fuse_logits_avg, predict, ExpertizedBranchModel,
    DTYPES)
from .pools import configure_torch
from .run_config import loss_weights
from .skeleton import (
    load_dataset, synth_generate, to_stream_tensor, SynthSpec, TRAIN, TEST, BODY_JOINT, BODY_BONE, HAND_JOINT,
    HAND_BONE)
from .topology import build_topology, BODY25, HAND21_PADDED25


logger = logging.getLogger(__name__)


class EvaluationError(ValidationError):
    pass


_STREAM_KINDS = {
    # modality -> body kind, hand kind
    "joint": (BODY_JOINT, HAND_JOINT),
    "bone": (BODY_BONE, HAND_BONE),
}

BODY_EXPERT = "body_expert"
HAND_EXPERT = "hand_expert"
JOINT_PHASE = "joint"


# ---------------------------------------------- METRICS --------------------------------------------------------------
def confusion_matrix(predictions, labels, num_classes):
    """
    Returns
    -------
    (K, K) int64 counts, entry [true][predicted]
    """
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if predictions.shape != labels.shape:
        raise EvaluationError("%d predictions for %d labels" % (len(predictions), len(labels)))
    for name, values in (("predictions", predictions), ("labels", labels)):
        out_of_range = values[(values < 0) | (values >= num_classes)]
        if len(out_of_range) > 0:
            raise EvaluationError("%s must be in [0, %d), got %s" % (name, num_classes, sorted(set(out_of_range))))
    if len(labels) == 0:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    return _sk_confusion_matrix(labels, predictions, labels=list(range(num_classes))).astype(np.int64)


def per_class_accuracy(confusion):
    """
    None for classes without support
    """
    support = confusion.sum(axis=1)
    return [None if support[c] == 0 else float(confusion[c, c] / support[c]) for c in range(len(support))]


def mean_class_accuracy(per_class, classes):
    values = [per_class[c] for c in classes if per_class[c] is not None]
    return None if len(values) == 0 else float(np.mean(values))


def overall_accuracy(confusion):
    total = confusion.sum()
    return 0. if total == 0 else float(np.trace(confusion) / total)


class Metrics:
    def __init__(self, num_classes, labels, predictions, stream_predictions=None, loss_history=None):
        """
        Parameters
        ----------
        num_classes: K
        labels, predictions: (N,) class indices of the ensembled prediction
        stream_predictions: {name: (N,) predictions} of every stream and model output
        loss_history: training records
        """
        self.num_classes = num_classes
        self.labels = np.asarray(labels, dtype=np.int64)
        self.predictions = np.asarray(predictions, dtype=np.int64)
        self.confusion = confusion_matrix(self.predictions, self.labels, num_classes)
        self.accuracy = overall_accuracy(self.confusion)
        self.per_class_accuracy = per_class_accuracy(self.confusion)
        self.stream_accuracy = OrderedDict()
        self.stream_per_class_accuracy = OrderedDict()
        for name, stream_predictions in (stream_predictions or {}).items():
            confusion = confusion_matrix(stream_predictions, self.labels, num_classes)
            self.stream_accuracy[name] = overall_accuracy(confusion)
            self.stream_per_class_accuracy[name] = per_class_accuracy(confusion)
        self.loss_history = [] if loss_history is None else list(loss_history)

    def classes_accuracy(self, classes, name=None):
        """
        mean per-class accuracy over classes (supported ones only), of the ensemble or of a named stream output
        """
        per_class = self.per_class_accuracy if name is None else self.stream_per_class_accuracy[name]
        return mean_class_accuracy(per_class, classes)

    def to_dict(self):
        return OrderedDict([
            ("num_classes", self.num_classes),
            ("samples", int(len(self.labels))),
            ("accuracy", self.accuracy),
            ("per_class_accuracy", self.per_class_accuracy),
            ("stream_accuracy", self.stream_accuracy),
            ("stream_per_class_accuracy", self.stream_per_class_accuracy),
            ("confusion", self.confusion),
            ("loss_history", self.loss_history),
        ])


def ensemble_streams(logits_list):
    return fuse_logits_avg(logits_list)


def metrics_from_logits(named_logits, fused_logits, labels, num_classes):
    return Metrics(
        num_classes,
        labels,
        predict(fused_logits).numpy(),
        OrderedDict((name, predict(logits).numpy()) for name, logits in named_logits.items())
    )


# ---------------------------------------------- DATA -----------------------------------------------------------------
def load_training_dataset(config):
    if config.data is not None:
        return load_dataset(config.data)
    return synth_generate(SynthSpec.from_dict(config.synth), config.synth_seed)


def split_dataset(dataset):
    """
    Returns
    -------
    train set, evaluation set (the train set when there is no test sample)
    """
    train_set, test_set = dataset.subset(TRAIN), dataset.subset(TEST)
    if len(train_set) == 0:
        raise EvaluationError("dataset has no training sample")
    if len(test_set) == 0:
        logger.warning("dataset has no test sample, evaluating on the training samples")
        test_set = train_set
    return train_set, test_set


def prepare_streams(dataset, config, modality):
    """
    Returns
    -------
    body input (N, 3, T, 2, 25), hand input (N, 3, T, 2, 25), labels (N,)
    """
    if modality not in _STREAM_KINDS:
        raise EvaluationError("unknown stream '%s', expected one of %s" % (modality, list(_STREAM_KINDS)))
    dtype = DTYPES[config.dtype]
    body_kind, hand_kind = _STREAM_KINDS[modality]
    body, labels = to_stream_tensor(dataset, body_kind, config.frames, build_topology(BODY25))
    hand, _ = to_stream_tensor(dataset, hand_kind, config.frames, build_topology(HAND21_PADDED25))
    return (
        torch.as_tensor(body.data, dtype=dtype),
        torch.as_tensor(hand.data, dtype=dtype),
        torch.as_tensor(labels, dtype=torch.int64)
    )


# ---------------------------------------------- EVALUATION -----------------------------------------------------------
def stream_logits(model, x_body, x_hand, batch_size):
    """
    Returns
    -------
    {output name: logits}, fused logits
    """
    model.eval()
    outputs = OrderedDict()
    fused = []
    with torch.no_grad():
        for start in range(0, len(x_body), batch_size):
            out = model(x_body[start:start + batch_size], x_hand[start:start + batch_size])
            for name, logits in out.named().items():
                outputs.setdefault(name, []).append(logits)
            fused.append(model.fuse(out))
    return OrderedDict((name, torch.cat(v)) for name, v in outputs.items()), torch.cat(fused)


def evaluate(checkpoint, dataset, streams=None, expert_only=None):
    """
    Parameters
    ----------
    checkpoint: trained Checkpoint
    dataset: evaluated samples
    streams: modality streams to ensemble, default every checkpoint stream
    expert_only: overrides the expertized models inference mode

    Returns
    -------
    Metrics, stream accuracies keyed by stream ('joint') and by stream output ('joint.body', ...)
    """
    streams = checkpoint.streams if streams is None else list(streams)
    if len(streams) == 0:
        raise EvaluationError("no stream to evaluate")
    for stream in streams:
        if stream not in checkpoint.models:
            raise EvaluationError("stream '%s' is not in checkpoint (%s)" % (stream, ", ".join(checkpoint.streams)))
    if len(dataset) == 0:
        raise EvaluationError("can't evaluate an empty dataset")
    if dataset.num_classes != checkpoint.num_classes:
        raise EvaluationError("dataset has %d classes, checkpoint %d" % (dataset.num_classes, checkpoint.num_classes))

    named = OrderedDict()
    fused_list = []
    for stream in streams:
        model = checkpoint.models[stream]
        x_body, x_hand, _ = prepare_streams(dataset, checkpoint.config, stream)
        initial_mode = getattr(model, "expert_only", None)
        if (expert_only is not None) and isinstance(model, ExpertizedBranchModel):
            model.expert_only = expert_only
        try:
            outputs, fused = stream_logits(model, x_body, x_hand, checkpoint.config.batch_size)
        finally:
            if initial_mode is not None:
                model.expert_only = initial_mode
        named[stream] = fused
        for name, logits in outputs.items():
            named["%s.%s" % (stream, name)] = logits
        fused_list.append(fused)

    metrics = metrics_from_logits(named, ensemble_streams(fused_list), dataset.labels, dataset.num_classes)
    logger.info("evaluated", extra=dict(streams=streams, samples=len(dataset), accuracy=metrics.accuracy))
    return metrics


# ---------------------------------------------- TRAINING -------------------------------------------------------------
def lr_milestones(epochs):
    return [int(.6 * epochs), int(.8 * epochs)]


def _accuracy(model, fuse, x_body, x_hand, labels, batch_size):
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(labels), batch_size):
            logits = fuse(model, x_body[start:start + batch_size], x_hand[start:start + batch_size])
            correct += int((predict(logits) == labels[start:start + batch_size]).sum())
    return correct / len(labels)


def _fit(model, batch_loss, evaluate_accuracy, sample_count, epochs, config, seed_key, history, stream, phase):
    """
    Parameters
    ----------
    batch_loss: indices -> scalar loss
    evaluate_accuracy: () -> accuracy on the evaluation samples
    seed_key: keeps shuffling streams apart, epochs are permuted with default_rng([seed, *seed_key, epoch])
    """
    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.learning_rate, momentum=config.momentum, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=lr_milestones(epochs), gamma=.1)
    process = psutil.Process()
    for epoch in range(epochs):
        model.train()
        permutation = np.random.default_rng([config.seed] + list(seed_key) + [epoch]).permutation(sample_count)
        total = 0.
        for batch, start in enumerate(range(0, sample_count, config.batch_size)):
            indices = torch.as_tensor(permutation[start:start + config.batch_size])
            loss = batch_loss(indices)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError("non-finite loss at stream %s, phase %s, epoch %d, batch %d: %r" % (
                    stream, phase, epoch, batch, value))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += value * len(indices)
        learning_rate = optimizer.param_groups[0]["lr"]
        scheduler.step()
        record = OrderedDict([
            ("stream", stream),
            ("phase", phase),
            ("epoch", epoch),
            ("loss", total / sample_count),
            ("accuracy", evaluate_accuracy()),
            ("learning_rate", learning_rate),
        ])
        history.append(record)
        logger.info("epoch finished", extra=dict(record, rss=process.memory_info().rss))


def _train_stream(config, stream_index, num_classes, train_inputs, eval_inputs, history, stream):
    x_body, x_hand, labels = train_inputs
    e_body, e_hand, e_labels = eval_inputs
    batch_size = config.batch_size
    weights = loss_weights(config)
    body_adjacency, hand_adjacency = stream_adjacencies(config.partition)

    model = build_model(config, num_classes, body_adjacency, hand_adjacency)

    if config.pretrain_epochs > 0:
        experts = build_experts(config, num_classes, body_adjacency, hand_adjacency)
        for k, (phase, expert, x, e_x) in enumerate((
                (BODY_EXPERT, experts[0], x_body, e_body),
                (HAND_EXPERT, experts[1], x_hand, e_hand))):
            _fit(
                expert,
                lambda indices, expert=expert, x=x: cross_entropy(expert(x[indices]), labels[indices]),
                lambda expert=expert, e_x=e_x: _accuracy(
                    expert, lambda m, xb, xh: m(xb), e_x, e_x, e_labels, batch_size),
                len(labels), config.pretrain_epochs, config, (stream_index, k), history, stream, phase
            )
        model.load_experts(*experts)

    def batch_loss(indices):
        return model.loss(model(x_body[indices], x_hand[indices]), labels[indices], weights)

    _fit(
        model,
        batch_loss,
        lambda: _accuracy(model, lambda m, xb, xh: m.fuse(m(xb, xh)), e_body, e_hand, e_labels, batch_size),
        len(labels), config.epochs, config, (stream_index, 2), history, stream, JOINT_PHASE
    )
    return model


def train(config, dataset=None):
    """
    Parameters
    ----------
    config: run configuration
    dataset: defaults to the configured dataset file or synthetic data

    Returns
    -------
    Checkpoint, Metrics on the evaluation samples (with the loss history)
    """
    configure_torch()
    if dataset is None:
        dataset = load_training_dataset(config)
    train_set, eval_set = split_dataset(dataset)
    logger.info(
        "training started",
        extra=dict(variant=config.variant, streams=config.streams, train_samples=len(train_set),
                   eval_samples=len(eval_set), seed=config.seed)
    )

    torch.manual_seed(config.seed)
    history = []
    models = OrderedDict()
    for k, stream in enumerate(config.streams):
        models[stream] = _train_stream(
            config, k, dataset.num_classes, prepare_streams(train_set, config, stream),
            prepare_streams(eval_set, config, stream), history, stream)

    checkpoint = Checkpoint(config, dataset.num_classes, models, history)
    metrics = evaluate(checkpoint, eval_set)
    metrics.loss_history = history
    return checkpoint, metrics
