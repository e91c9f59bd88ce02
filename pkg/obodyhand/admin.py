import argparse
import inspect
import logging
import os
import sys

from . import CONF
from .checkpoint import Checkpoint
from .cost import count_cost
from .errors import ObodyhandError, ValidationError, GradCheckFailure
from .experiments import run_ablation, summarize, format_table
from .gradcheck import grad_check, TARGETS
from .models import VARIANTS
from .run_config import load_run_config, run_config, RUN_CONFIG_MANAGER
from .skeleton import SynthSpec, synth_generate, save_dataset, load_dataset
from .snippets.mkdir import mkdir
from .snippets.ojson import load, dump
from .training import train, evaluate


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class AdminError(ValidationError):
    pass


class CommandArg:
    def __init__(self, *args, **kwargs):
        self.args = args
        self.kwargs = kwargs


class Command:
    command = "command"
    Arg = CommandArg

    def __init__(self, *arguments, help=None):
        self.arguments = arguments
        self.help = help

    def __call__(self, method):
        setattr(method, self.command, self)
        return method


def _csv(value):
    return [v.strip() for v in value.split(",") if v.strip() != ""]


def _int_csv(value):
    try:
        return [int(v) for v in _csv(value)]
    except ValueError:
        raise AdminError("expected comma separated integers, got '%s'" % value) from None


def _one_line(message):
    return " ".join(str(message).split())


def _load_json(path):
    try:
        return load(path)
    except ValueError as e:
        raise AdminError("%s does not parse: %s" % (path, e)) from None


def _config(parsed_args):
    return run_config() if parsed_args.config is None else load_run_config(parsed_args.config)


class Administrator:
    """
    To create a new command: create a method named cmd_{cmd_name} with signature (self, parsed_args), declare its
    arguments with the Command decorator and CommandArg. Commands write line-oriented text on stdout.
    """
    def __init__(self, name="obodyhand", stdout=None):
        self._stdout = sys.stdout if stdout is None else stdout
        self._parser = argparse.ArgumentParser(name)
        self._parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        self._load_commands()

    def _load_commands(self):
        _sub_parser = self._parser.add_subparsers(dest="sub_command")
        _sub_parser.required = True

        for k in dir(self):
            # only use commands
            if k[:4] != "cmd_":
                continue

            # skip variables
            v = getattr(self, k)
            if not inspect.ismethod(v):
                continue

            command = getattr(v, Command.command, Command())
            parser = _sub_parser.add_parser(v.__name__[4:], help=command.help)
            for argument in command.arguments:
                parser.add_argument(*argument.args, **argument.kwargs)
            parser.set_defaults(func=v)

    def write(self, line=""):
        self._stdout.write(line + "\n")

    def __call__(self, *cmd_args):
        """
        Returns
        -------
        exit status: 0 on success, 2 on error (one 'error:<category>: <message>' line on stderr)
        """
        args = self._parser.parse_args(args=cmd_args)
        logging.basicConfig(level=logging.DEBUG if args.verbose else CONF.log_level, format=LOG_FORMAT)
        try:
            args.func(args)
        except ObodyhandError as e:
            sys.stderr.write("error:%s: %s\n" % (e.category, _one_line(e)))
            return 2
        except OSError as e:
            sys.stderr.write("error:io: %s\n" % _one_line(e))
            return 2
        return 0

    @Command(
        CommandArg("--spec", help="synthetic spec json file (default: 12 classes, 50 train / 25 test per class)"),
        CommandArg("--seed", type=int, default=7, help="generation seed (default: 7)"),
        CommandArg("--out", required=True, help="dataset file path"),
        help="synth: generate a synthetic body/hand skeleton dataset"
    )
    def cmd_synth(self, parsed_args):
        spec = SynthSpec() if parsed_args.spec is None else SynthSpec.from_dict(_load_json(parsed_args.spec))
        dataset = synth_generate(spec, parsed_args.seed)
        save_dataset(dataset, parsed_args.out)
        self.write("samples %d" % len(dataset))
        self.write("classes %d" % dataset.num_classes)
        self.write("histogram %s" % " ".join(str(int(c)) for c in dataset.class_histogram()))

    @Command(
        CommandArg("--config", help="run configuration json file (default configuration if not given)"),
        CommandArg("--out-dir", required=True, help="directory for checkpoint.json and report.json"),
        help="train: train the configured variant and evaluate it on the test samples"
    )
    def cmd_train(self, parsed_args):
        config = _config(parsed_args)
        checkpoint, metrics = train(config)
        out_dir = mkdir(parsed_args.out_dir)
        checkpoint.save(os.path.join(out_dir, "checkpoint.json"))
        dump(metrics.to_dict(), os.path.join(out_dir, "report.json"), indent=4)
        for record in metrics.loss_history:
            self.write("epoch %s %s %d loss %.6f accuracy %.4f" % (
                record["stream"], record["phase"], record["epoch"], record["loss"], record["accuracy"]))
        self._write_metrics(metrics)

    @Command(
        CommandArg("--checkpoint", required=True, help="checkpoint json file"),
        CommandArg("--data", required=True, help="dataset json file"),
        CommandArg("--streams", type=_csv, help="comma separated streams to ensemble (default: all of checkpoint)"),
        CommandArg("--expert-only", action="store_true", help="expertized models predict from expert branches"),
        CommandArg("--report", help="metrics json report path"),
        help="eval: evaluate a checkpoint on a dataset"
    )
    def cmd_eval(self, parsed_args):
        checkpoint = Checkpoint.load(parsed_args.checkpoint)
        dataset = load_dataset(parsed_args.data)
        metrics = evaluate(checkpoint, dataset, parsed_args.streams, expert_only=parsed_args.expert_only or None)
        if parsed_args.report is not None:
            dump(metrics.to_dict(), parsed_args.report, indent=4)
        self._write_metrics(metrics)

    def _write_metrics(self, metrics):
        self.write("accuracy %.4f" % metrics.accuracy)
        for name, accuracy in metrics.stream_accuracy.items():
            self.write("stream %s accuracy %.4f" % (name, accuracy))
        for c, accuracy in enumerate(metrics.per_class_accuracy):
            self.write("class %d accuracy %s" % (c, "-" if accuracy is None else "%.4f" % accuracy))

    @Command(
        CommandArg("--config", help="run configuration json file (default configuration if not given)"),
        CommandArg("--num-classes", type=int, help="classifier width (default: configured synthetic class count)"),
        CommandArg("--report", help="cost json report path"),
        help="cost: analytic flops and parameter counts of the configured model"
    )
    def cmd_cost(self, parsed_args):
        report = count_cost(_config(parsed_args), parsed_args.num_classes)
        if parsed_args.report is not None:
            dump(report.to_dict(), parsed_args.report, indent=4)
        self.write(str(report))

    @Command(
        CommandArg("--target", required=True, choices=list(TARGETS), help="operation or full variant"),
        CommandArg("--tol", type=float, help="tolerance (default: CONF.grad_tolerance)"),
        CommandArg("--seed", type=int, default=0, help="instance seed (default: 0)"),
        help="gradcheck: compare analytic gradients with central finite differences"
    )
    def cmd_gradcheck(self, parsed_args):
        report = grad_check(parsed_args.target, parsed_args.seed, parsed_args.tol)
        self.write(str(report))
        if not report.passed:
            raise GradCheckFailure("%s max relative error %.3e is not below %.1e" % (
                report.target, report.max_error, report.tolerance))

    @Command(
        CommandArg("--checkpoint", required=True, help="checkpoint json file"),
        CommandArg("--data", required=True, help="dataset json file"),
        CommandArg("--classes", type=_int_csv, help="comma separated class indices to show (default: all)"),
        help="confmat: confusion matrix of a checkpoint on a dataset, rows are true classes"
    )
    def cmd_confmat(self, parsed_args):
        checkpoint = Checkpoint.load(parsed_args.checkpoint)
        dataset = load_dataset(parsed_args.data)
        metrics = evaluate(checkpoint, dataset)
        classes = list(range(dataset.num_classes)) if parsed_args.classes is None else parsed_args.classes
        for c in classes:
            if not 0 <= c < dataset.num_classes:
                raise AdminError("class %d is out of range [0, %d)" % (c, dataset.num_classes))
        confusion = metrics.confusion
        self.write("true\\pred " + " ".join("%5d" % c for c in classes))
        for c in classes:
            self.write("%9d " % c + " ".join("%5d" % confusion[c, p] for p in classes))

    @Command(
        CommandArg("--config", help="base run configuration json file (default configuration if not given)"),
        CommandArg("--variants", type=_csv, default=list(VARIANTS), help="comma separated variants (default: all)"),
        CommandArg("--seeds", type=_int_csv, help="comma separated training seeds (default: configured seed)"),
        CommandArg("--report", help="ablation json report path"),
        help="ablation: train variants with and without the complementary loss"
    )
    def cmd_ablation(self, parsed_args):
        config = _config(parsed_args)
        unknown = [v for v in parsed_args.variants if v not in VARIANTS]
        if len(unknown) > 0:
            raise AdminError("unknown variants %s, expected some of %s" % (unknown, list(VARIANTS)))
        rows = run_ablation(config, parsed_args.variants, seeds=parsed_args.seeds)
        if parsed_args.report is not None:
            dump(dict(config=RUN_CONFIG_MANAGER.to_dict(config), runs=rows, summary=summarize(rows)),
                 parsed_args.report, indent=4)
        self.write(format_table(rows))


ADMIN = Administrator()


def main():
    sys.exit(ADMIN(*sys.argv[1:]))
