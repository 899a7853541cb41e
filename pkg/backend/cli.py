#!/usr/bin/env python3
"""
CPC-SNN Command Line
Subcommands for data checks, encoder training, encoding, CPC runs, Table 1 and gradient checks
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from backend import experiment_runner as runner
from backend.gradcheck_suite import format_report, gradcheck_all
from backend.previews import save_previews
from config.settings import Settings, get_logger, load_settings
from services import nn_core
from services.cpc_core import TrainSchedule, evaluate, load_cpc, validation_pairs
from services.data_pipeline import MNIST_FILES, load_mnist, verify_mnist_files
from services.encodings import dump_encodings, similarity_report
from services.lif_autoencoder import save_autoencoder
from services.stdp_encoder import save_network
from utils.exceptions import CPCSNNException, MissingArtifactError

logger = get_logger(__name__)

COMMANDS = ("fetch-data", "train-stdp", "train-autoencoder", "encode", "train-cpc",
            "evaluate", "reproduce-table1", "gradcheck")

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Flat section.key = value config file")
    common.add_argument("--seed", type=int, help="Run a single seed instead of experiment.seeds")
    common.add_argument("--dataset", choices=sorted(runner.DATASET_FLAGS), help="Subset size per run")
    common.add_argument("--encoding", choices=list(runner.ENCODING_FLAGS), help="Encoding method")
    common.add_argument("--out", type=Path, help="Output directory (paths.out_dir)")
    common.add_argument("--train-encoders", action="store_true",
                        help="Train missing encoder checkpoints instead of failing")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config key (repeatable)")
    common.add_argument("--verbose", "-v", action="store_true", help="Verbose logging")

    parser = argparse.ArgumentParser(prog="cpcsnn", description="CPC on spiking encoders of MNIST digits")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fetch-data": "Verify the local MNIST files against their checksums",
        "train-stdp": "Train the STDP classifier encoder and save its checkpoint",
        "train-autoencoder": "Train the convolutional LIF autoencoder and save its checkpoint",
        "encode": "Encode the subset, dump encodings, report class similarity and write previews",
        "train-cpc": "Run every seed of one configuration (metrics, summary, curves)",
        "evaluate": "Score a saved CPC head on its validation pairs",
        "reproduce-table1": "Run the Table 1 rows and check bands and ordering",
        "gradcheck": "Finite-difference check of every backward pass",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser

def parse_overrides(items: Sequence[str]) -> Dict[str, Dict[str, str]]:
    """`section.key=value` strings grouped by section"""
    grouped: Dict[str, Dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise argparse.ArgumentTypeError(f"Override must look like section.key=value: {item!r}")
        section, name = key.strip().split(".", 1)
        grouped.setdefault(section, {})[name] = value.strip()
    return grouped

def settings_from_args(args: argparse.Namespace) -> Settings:
    overrides = parse_overrides(args.set)
    experiment = overrides.setdefault("experiment", {})
    # Table 1 treats --dataset/--encoding as row filters, not run settings
    if args.command != "reproduce-table1":
        if args.dataset:
            experiment["dataset"] = runner.DATASET_FLAGS[args.dataset]
        if args.encoding:
            experiment["encoding"] = runner.ENCODING_FLAGS[args.encoding]
    if args.seed is not None:
        experiment["seeds"] = str(args.seed)
    if args.train_encoders:
        experiment["train_encoders"] = "true"
    if args.out is not None:
        overrides.setdefault("paths", {})["out_dir"] = str(args.out)
    if args.verbose:
        overrides.setdefault("logging", {})["level"] = "DEBUG"
    return load_settings(args.config, overrides)

# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fetch_data(settings: Settings, args: argparse.Namespace) -> int:
    data = settings.data
    pinned = {
        MNIST_FILES["train"][0]: data.expected_sha256_train_images,
        MNIST_FILES["train"][1]: data.expected_sha256_train_labels,
        MNIST_FILES["test"][0]: data.expected_sha256_test_images,
        MNIST_FILES["test"][1]: data.expected_sha256_test_labels,
    }
    checks = verify_mnist_files(data.mnist_dir, pinned, strict=True)
    for check in checks:
        print(f"{check.name:<26} {check.status:<8} {check.sha256 or '-'} {check.message}".rstrip())
    missing = [c.name for c in checks if c.status == "missing"]
    if missing:
        print(f"❌ Missing from {data.mnist_dir}: {', '.join(missing)}")
        return 1
    return 0

def _train_encoder(settings: Settings, encoding: str) -> int:
    images = load_mnist(settings.data.mnist_dir, "train")
    settings.paths.ensure()
    dataset = settings.experiment.dataset
    for seed in settings.experiment.seeds:
        subset, _, _ = runner.prepare_subset(images, settings, seed)
        path = runner.encoder_checkpoint(settings, encoding, dataset, seed)
        meta = {"seed": seed, "dataset": dataset}
        if encoding == "snn_classifier":
            save_network(runner.train_stdp_encoder(subset, settings, seed), path, meta)
        else:
            params, history = runner.train_autoencoder(subset, settings, seed)
            save_autoencoder(params, path, dict(meta, epoch_losses=history.epoch_losses))
            smoothed = history.moving_average()
            if smoothed:
                print(f"seed {seed}: final loss {history.epoch_losses[-1]:.6f} "
                      f"(5-epoch average {smoothed[-1]:.6f})")
        print(f"✅ {path}")
    return 0

def cmd_train_stdp(settings: Settings, args: argparse.Namespace) -> int:
    return _train_encoder(settings, "snn_classifier")

def cmd_train_autoencoder(settings: Settings, args: argparse.Namespace) -> int:
    return _train_encoder(settings, "snn_autoencoder")

def cmd_encode(settings: Settings, args: argparse.Namespace) -> int:
    exp = settings.experiment
    images = load_mnist(settings.data.mnist_dir, "train")
    out = settings.paths.out_dir / "encodings"
    for seed in exp.seeds:
        subset, _, _ = runner.prepare_subset(images, settings, seed)
        encoder = runner.obtain_encoder(exp.encoding, subset, settings, seed)
        table = runner.encode_subset(exp.encoding, encoder, subset, settings, seed)
        dump_encodings(table, out / f"{exp.encoding}_{exp.dataset}_seed{seed}.txt")
        report = similarity_report(table)
        print(f"seed {seed}: {len(table)} vectors of dim {table.dim}, within {report.within:.4f}, "
              f"between {report.between:.4f}, gap {report.gap:.4f}, zero vectors {report.n_zero}")
        # One preview per digit
        firsts = [subset.bucket(digit)[0] for digit in range(10)]
        save_previews(firsts, table.lookup([image.index for image in firsts]),
                      out / "previews", prefix=f"{exp.encoding}_seed{seed}")
    return 0

def cmd_train_cpc(settings: Settings, args: argparse.Namespace) -> int:
    summary = runner.run_experiment(settings)
    print(f"{summary.dataset} / {runner.ENCODING_TITLES[summary.encoding]}: "
          f"max val acc {summary.mean_accuracy:.4f} ± {summary.std_accuracy:.4f}, "
          f"epoch {summary.mean_epoch:.2f} ± {summary.std_epoch:.2f}")
    return 0

def cmd_evaluate(settings: Settings, args: argparse.Namespace) -> int:
    exp, data = settings.experiment, settings.data
    nn_core.set_precision(exp.precision, exp.debug_finite)
    images = load_mnist(data.mnist_dir, "train")
    schedule = TrainSchedule.from_config(settings.cpc, data, exp.seeds)
    for seed in exp.seeds:
        path = runner.run_dir(settings) / f"seed{seed}_cpc.ckpt"
        if not path.exists():
            raise MissingArtifactError(f"Missing CPC checkpoint: {path}", artifact_path=str(path),
                                       hint="run `train-cpc` with the same --dataset/--encoding/--seed",
                                       error_code="missing_checkpoint")
        model = load_cpc(path)
        subset, _, val_split = runner.prepare_subset(images, settings, seed)
        encoder = runner.obtain_encoder(exp.encoding, subset, settings, seed)
        table = runner.encode_subset(exp.encoding, encoder, subset, settings, seed)
        pairs = validation_pairs(val_split, schedule, seed, data.context_length, data.prediction_length, data.wrap)
        accuracy, loss = evaluate(model, table, pairs)
        print(f"seed {seed}: accuracy {accuracy:.4f}, loss {loss:.6f} on {len(pairs)} validation pairs")
    return 0

def cmd_reproduce_table1(settings: Settings, args: argparse.Namespace) -> int:
    dataset = runner.DATASET_FLAGS[args.dataset] if args.dataset else None
    encoding = runner.ENCODING_FLAGS[args.encoding] if args.encoding else None
    report = runner.reproduce_table1(settings, dataset, encoding)
    print(report.text, end="")
    return 0 if report.passed else 1

def cmd_gradcheck(settings: Settings, args: argparse.Namespace) -> int:
    seed = settings.experiment.seeds[0]
    reports = gradcheck_all(seed=seed)
    print(format_report(reports), end="")
    return 0 if all(r.passed for r in reports) else 1

HANDLERS = {
    "fetch-data": cmd_fetch_data,
    "train-stdp": cmd_train_stdp,
    "train-autoencoder": cmd_train_autoencoder,
    "encode": cmd_encode,
    "train-cpc": cmd_train_cpc,
    "evaluate": cmd_evaluate,
    "reproduce-table1": cmd_reproduce_table1,
    "gradcheck": cmd_gradcheck,
}

def main(argv: Optional[List[str]] = None) -> int:
    """Main function"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = settings_from_args(args)
        return HANDLERS[args.command](settings, args)
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    except CPCSNNException as e:
        logger.error(f"❌ {args.command} failed: {e.message}")
        print(f"❌ {e.message}")
        hint = e.details.get("hint")
        if hint:
            print(f"   hint: {hint}")
        return 1

if __name__ == "__main__":
    sys.exit(main())
