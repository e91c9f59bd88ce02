"""
Interaction and complementary-loss ablations on one shared dataset.
"""
from collections import OrderedDict
import logging

import numpy as np

from .cost import count_cost
from .models import VARIANTS
from .skeleton import SynthSpec, PROFILES
from .training import train, load_training_dataset


logger = logging.getLogger(__name__)


ENSEMBLE = "ensemble"


def profile_accuracy(metrics, class_profile):
    """
    Returns
    -------
    {ensemble or stream output name: {profile: mean per-class accuracy}}
    """
    profile_classes = OrderedDict(
        (profile, [c for c, p in enumerate(class_profile) if p == profile]) for profile in PROFILES)
    names = [None] + list(metrics.stream_accuracy)
    return OrderedDict(
        (ENSEMBLE if name is None else name, OrderedDict(
            (profile, metrics.classes_accuracy(classes, name)) for profile, classes in profile_classes.items()))
        for name in names
    )


def run_ablation(base_config, variants=VARIANTS, lambda_cpl_values=(0., 1.), seeds=None, dataset=None):
    """
    Parameters
    ----------
    base_config: run configuration shared by every run
    variants: trained model variants
    lambda_cpl_values: complementary loss weights
    seeds: training seeds, default the configured one (data is shared across seeds)
    dataset: defaults to the configured dataset

    Returns
    -------
    list of row dicts, one per (seed, variant, lambda_cpl)
    """
    seeds = [base_config.seed] if seeds is None else list(seeds)
    if dataset is None:
        dataset = load_training_dataset(base_config)
    class_profile = SynthSpec.from_dict(base_config.synth).class_profile if base_config.data is None else None
    if (class_profile is not None) and (len(class_profile) != dataset.num_classes):
        class_profile = None

    rows = []
    for seed in seeds:
        for variant in variants:
            for lambda_cpl in lambda_cpl_values:
                config = base_config.copy(variant=variant, lambda_cpl=lambda_cpl, seed=seed)
                _, metrics = train(config, dataset)
                cost = count_cost(config, dataset.num_classes)
                row = OrderedDict([
                    ("variant", variant),
                    ("lambda_cpl", lambda_cpl),
                    ("seed", seed),
                    ("accuracy", metrics.accuracy),
                    ("stream_accuracy", metrics.stream_accuracy),
                    ("profiles", None if class_profile is None else profile_accuracy(metrics, class_profile)),
                    ("flops", cost.flops),
                    ("params", cost.params),
                ])
                rows.append(row)
                logger.info(
                    "ablation run finished",
                    extra=dict(variant=variant, lambda_cpl=lambda_cpl, seed=seed, accuracy=metrics.accuracy)
                )
    return rows


def summarize(rows):
    """
    mean accuracy over seeds, per (variant, lambda_cpl)
    """
    groups = OrderedDict()
    for row in rows:
        groups.setdefault((row["variant"], row["lambda_cpl"]), []).append(row)
    return [
        OrderedDict([
            ("variant", variant),
            ("lambda_cpl", lambda_cpl),
            ("runs", len(group)),
            ("accuracy", float(np.mean([r["accuracy"] for r in group]))),
            ("flops", group[0]["flops"]),
            ("params", group[0]["params"]),
        ])
        for (variant, lambda_cpl), group in groups.items()
    ]


def _percent(value):
    return "-" if value is None else "%.1f" % (100 * value)


def format_table(rows):
    header = "%-15s %6s %5s %8s %8s %8s %8s %14s %10s" % (
        "variant", "l_cpl", "seed", "acc", "body-d", "hand-d", "mixed", "flops", "params")
    lines = [header]
    for row in rows:
        profiles = (row["profiles"] or {}).get(ENSEMBLE, {})
        lines.append("%-15s %6g %5d %8s %8s %8s %8s %14d %10d" % (
            row["variant"], row["lambda_cpl"], row["seed"], _percent(row["accuracy"]),
            *(_percent(profiles.get(p)) for p in PROFILES), row["flops"], row["params"]))
    return "\n".join(lines)
