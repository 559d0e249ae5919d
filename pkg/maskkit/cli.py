"""
Command-line interface for the maskkit pipeline.
"""

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .bench import run_bench
from .config import ConfigurationError, create_template_config, load_config
from .corpus import generate_corpus
from .evaluation import evaluate_corpus, write_report
from .gradcheck import run_gradcheck
from .models import Command, Compression, RunConfig, ToyModelConfig
from .network import ToyMaskFace
from .pilot import run_pilot
from .storage import SceneStore, StorageError, load_checkpoint, save_checkpoint, write_table, write_trace
from .trainer import TrainingDivergedError, train_toy

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-8s | %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5
EXIT_INTERRUPTED = 130


def create_parser() -> argparse.ArgumentParser:
    """Create argument parser for the maskkit command."""
    parser = argparse.ArgumentParser(
        prog="maskkit",
        description="Synthetic face detection with keypoint masks: data, training, evaluation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s gen --scenes 512 --seed 0          Render train and holdout corpora
  %(prog)s train --steps 2000 --lambda-kp 0.25 Train the toy model
  %(prog)s eval --multi-scale --flip          Evaluate with test-time fusion
  %(prog)s gradcheck                          Finite-difference gradient suite
  %(prog)s bench                              Operator and keypoint-head timings
  %(prog)s pilot --steps 2000                 Check the regression bounds
  %(prog)s --write-template maskkit.yaml      Write a commented configuration
""",
    )

    parser.add_argument(
        "command",
        nargs="?",
        choices=[c.value for c in Command],
        help="Pipeline step to run",
    )
    parser.add_argument(
        "-c", "--config",
        metavar="FILE",
        help="Path to a YAML run configuration (defaults are used otherwise)",
    )
    parser.add_argument("--write-template", metavar="FILE", help="Write a configuration template and exit")
    parser.add_argument("--out-dir", metavar="DIR", help="Artifact directory (default: ./maskkit_out)")
    parser.add_argument("--data-dir", metavar="DIR", help="Scene corpus directory (default: OUT_DIR/scenes)")
    parser.add_argument("--model", metavar="FILE", help="Checkpoint path (default: OUT_DIR/model.mkfc)")
    parser.add_argument("--seed", type=int, metavar="N", help="Seed for data, initialization and augmentation")
    parser.add_argument("--scenes", type=int, metavar="N", help="Number of training scenes")
    parser.add_argument("--image-size", type=int, metavar="PX", help="Scene and model input side")
    parser.add_argument("--steps", type=int, metavar="N", help="Training steps")
    parser.add_argument("--lambda-kp", type=float, metavar="W", help="Keypoint loss weight")
    parser.add_argument("--k0", type=int, metavar="K", help="Pyramid level of a 224 x 224 RoI")
    parser.add_argument("--multi-scale", action="store_true", help="Fuse detections over the image pyramid")
    parser.add_argument("--flip", action="store_true", help="Fuse detections over horizontal flips")
    parser.add_argument("--no-context", action="store_true", help="Disable context modules (ablation)")
    parser.add_argument(
        "--compression",
        choices=[c.value for c in Compression],
        metavar="ALGO",
        help="Corpus index compression: zstd (default), snappy, gzip, lz4, or none",
    )
    parser.add_argument(
        "-w", "--threads",
        type=int,
        metavar="N",
        help="Scene generation workers (default: $MASKKIT_THREADS or 1)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose (debug) logging")

    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    """Load the YAML configuration (if any) and apply command-line overrides."""
    config = load_config(args.config) if args.config else RunConfig()
    try:
        top = {"command": Command.from_string(args.command)}
        if args.out_dir:
            top["out_dir"] = args.out_dir
        if args.data_dir:
            top["data_dir"] = args.data_dir
        if args.model:
            top["model_path"] = args.model
        if args.scenes is not None:
            top["scenes"] = args.scenes
        if args.threads is not None:
            top["threads"] = args.threads
        if args.compression:
            top["compression"] = Compression.from_string(args.compression)

        model, train, loss, ev = config.model, config.train, config.loss, config.eval
        if args.seed is not None:
            top["seed"] = args.seed
            train = replace(train, init_seed=args.seed, augment_seed=args.seed)
        if args.image_size is not None:
            top["image_size"] = args.image_size
            model = replace(model, input_size=args.image_size)
        if args.no_context:
            model = replace(model, use_context=False)
        if args.steps is not None:
            train = replace(train, steps=args.steps)
        if args.k0 is not None:
            train = replace(train, k0=args.k0)
            ev = replace(ev, k0=args.k0)
        if args.lambda_kp is not None:
            loss = replace(loss, lambda_kp=args.lambda_kp)
        if args.multi_scale or args.flip:
            ev = replace(ev, multi_scale=ev.multi_scale or args.multi_scale, flip=ev.flip or args.flip)
        return replace(config, model=model, train=train, loss=loss, eval=ev, **top)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e


def run_gen(config: RunConfig) -> int:
    stats = generate_corpus(config)
    return EXIT_OK if all(s.errors == 0 for s in stats.values()) else EXIT_IO


def run_train(config: RunConfig) -> int:
    scenes = SceneStore(config.train_dir, config.compression).load_all()
    trace_path = Path(config.out_dir) / "loss_trace.csv"
    try:
        model, stats = train_toy(scenes, config)
    except TrainingDivergedError as e:
        write_trace(trace_path, e.trace)
        logger.error("Training diverged: %s (trace: %s)", e, trace_path)
        return EXIT_DIVERGED
    write_trace(trace_path, stats.trace)
    save_checkpoint(config.checkpoint_path, {"model": asdict(model.cfg)}, model.state_dict())
    logger.info("Model saved to %s", config.checkpoint_path)
    return EXIT_OK


def load_model(path: Path) -> ToyMaskFace:
    if not Path(path).exists():
        raise ConfigurationError(f"No trained model at {path}; run 'train' first or pass --model")
    saved, tensors = load_checkpoint(path)
    try:
        model = ToyMaskFace(ToyModelConfig(**saved["model"]))
    except (KeyError, TypeError, ValueError) as e:
        raise StorageError(f"Checkpoint {path} has an invalid model configuration: {e}") from e
    model.load_state_dict(tensors)
    return model


def run_eval(config: RunConfig) -> int:
    model = load_model(config.checkpoint_path)
    scenes = SceneStore(config.holdout_dir, config.compression).load_all()
    report = evaluate_corpus(model, scenes, config)
    paths = write_report(report, Path(config.out_dir) / "eval")

    print("\nEvaluation Summary")
    print("=" * 40)
    for key, value in report.summary().items():
        print(f"  {key:<18} {value}")
    print(f"\nFiles written to {paths['summary'].parent}")
    return EXIT_OK


def run_bench_command(config: RunConfig) -> int:
    report = run_bench(config.model, config.seed)
    write_table(Path(config.out_dir) / "bench.csv", report.rows())

    print("\nOperator Timings")
    print("=" * 50)
    for row in report.rows():
        print(f"  {row['name']:<28} {row['seconds'] * 1e3:10.3f} ms")
    print(f"\nKeypoint head MACs / proposal: {report.keypoint_macs:,}")
    print(f"Detection MACs:                {report.detection_macs:,}")
    print(f"MAC ratio:  {100 * report.mac_ratio:.2f}%")
    print(f"Time ratio: {100 * report.time_ratio:.2f}% per proposal (consistent: {report.consistent})")
    return EXIT_OK


def run_gradcheck_command(config: RunConfig) -> int:
    results = run_gradcheck(config.seed)
    write_table(
        Path(config.out_dir) / "gradcheck.csv",
        [{"name": r.name, "instances": r.instances, "max_rel_error": r.max_rel_error, "passed": r.passed}
         for r in results],
    )

    print("\nGradient Check")
    print("=" * 50)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"  {r.name:<20} {r.max_rel_error:10.2e}  (tol {r.tolerance:.0e})  {status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


def run_pilot_command(config: RunConfig) -> int:
    train = SceneStore(config.train_dir, config.compression).load_all()
    holdout = SceneStore(config.holdout_dir, config.compression).load_all()
    try:
        report = run_pilot(train, holdout, config)
    except TrainingDivergedError as e:
        logger.error("Pilot training diverged: %s", e)
        return EXIT_DIVERGED
    out = Path(config.out_dir)
    write_table(out / "pilot.csv", report.rows())
    write_table(out / "pilot_sweep.csv", report.sweep)

    print("\nPilot Regression Bounds")
    print("=" * 50)
    for row in report.rows():
        status = "ok" if row["passed"] else "FAIL"
        print(f"  {row['name']:<22} {row['value']:8.4f}  (bound {row['bound']:.4f})  {status}")
    print("\nlambda_kp sweep (single-scale)")
    for row in report.sweep:
        print(f"  {row['lambda_kp']:<6g} AP {row['ap']:.4f}  mean NME {row['mean_nme']:.4f}")
    print(f"\nNME falls with lambda_kp: {report.nme_trend}")
    return EXIT_OK


_COMMANDS = {
    Command.GEN: run_gen,
    Command.TRAIN: run_train,
    Command.EVAL: run_eval,
    Command.BENCH: run_bench_command,
    Command.GRADCHECK: run_gradcheck_command,
    Command.PILOT: run_pilot_command,
}


def run_pipeline(config: RunConfig, verbose: bool = False) -> int:
    """Run one subcommand and map failures onto exit codes."""
    try:
        return _COMMANDS[config.command](config)
    except KeyboardInterrupt:
        logger.info("\nInterrupted by user")
        return EXIT_INTERRUPTED
    except ConfigurationError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except (StorageError, OSError) as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except Exception as e:
        logger.error("Unexpected error: %s", e)
        if verbose:
            raise
        return EXIT_UNEXPECTED


def run(args: argparse.Namespace) -> int:
    """Run the command described by parsed arguments."""
    if args.write_template:
        create_template_config(args.write_template)
        logger.info("Template written to %s", args.write_template)
        return EXIT_OK
    if not args.command:
        logger.error("No command given; choose one of: %s", ", ".join(c.value for c in Command))
        return EXIT_CONFIG
    try:
        config = build_config(args)
    except ConfigurationError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    return run_pipeline(config, args.verbose)


def main() -> None:
    """Entry point for the maskkit CLI."""
    parser = create_parser()
    args = parser.parse_args()

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    sys.exit(run(args))
