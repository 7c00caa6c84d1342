import sys
import argparse
import logging
import os

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from diffcore.errors import NumericalError, ShapeError
from motion.errors import DataError
from pipeline import commands
from pipeline.run_config import UsageError, load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

VARIANTS = list(commands.ABLATIONS) + list(commands.ABLATION_GROUPS)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; usage errors here are exit code 1."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help="YAML config file (a config.snapshot works too)")
    common.add_argument('--seed', type=int, help="Master seed")
    common.add_argument('--out', type=str, help="Output directory")
    common.add_argument('--epochs', type=int, help="Epochs for this command's training stage(s)")
    common.add_argument('--set', dest='assignments', action='append', default=[], metavar='KEY=VALUE',
                        help="Override a dotted config key, e.g. quantizer.k_class=32")
    common.add_argument('--verbose', action='store_true', help="Debug logging")

    parser = _Parser(description="Unsupervised pre-training for skeleton action localization")
    subparsers = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    subparsers.add_parser('gen-data', parents=[common], help="Generate the synthetic skeleton dataset")

    pretrain_parser = subparsers.add_parser('pretrain', parents=[common], help="Unsupervised pre-training")
    pretrain_parser.add_argument('--manifest', type=str, help="Dataset manifest (default <out>/data/manifest.txt)")

    finetune_parser = subparsers.add_parser('finetune', parents=[common], help="Train the frame classifier")
    finetune_parser.add_argument('--manifest', type=str)
    finetune_parser.add_argument('--checkpoint', type=str, help="Pre-trained checkpoint")
    finetune_parser.add_argument('--label-fraction', type=float, help="Fraction of train sequences treated as labeled")
    finetune_parser.add_argument('--scratch', action='store_true', help="Start from a random encoder")

    eval_parser = subparsers.add_parser('eval', parents=[common], help="Detection mAP and purity on the test split")
    eval_parser.add_argument('--manifest', type=str)
    eval_parser.add_argument('--checkpoint', type=str, help="Fine-tuned checkpoint")
    eval_parser.add_argument('--oracle', action='store_true', help="Score the ground truth as predictions")

    inspect_parser = subparsers.add_parser('inspect', parents=[common], help="Export a segmentation timeline")
    inspect_parser.add_argument('sequence', type=str, help="Sequence file to inspect")
    inspect_parser.add_argument('--checkpoint', type=str)
    inspect_parser.add_argument('--plot', action='store_true', help="Also write an SVG timeline")

    ablate_parser = subparsers.add_parser('ablate', parents=[common], help="Pre-train, fine-tune and evaluate variants")
    ablate_parser.add_argument('--manifest', type=str)
    ablate_parser.add_argument('--variant', type=str, default='all', help=f"One of {', '.join(VARIANTS)}")
    return parser


def _flags(args) -> dict:
    flags = {'seed': args.seed, 'output.dir': args.out}
    if args.epochs is not None:
        if args.command in ('pretrain', 'ablate'):
            flags['train.epochs'] = args.epochs
        if args.command in ('finetune', 'ablate'):
            flags['train.finetune_epochs'] = args.epochs
    if getattr(args, 'label_fraction', None) is not None:
        flags['data.label_fraction'] = args.label_fraction
    return flags


def run(args) -> None:
    run_config = load_run_config(args.config, args.assignments, flags=_flags(args))
    snapshot = run_config.write_snapshot()
    logger.info(f"CLI: '{args.command}' with configuration snapshot {snapshot}")

    if args.command == 'gen-data':
        commands.cmd_gen_data(run_config)
    elif args.command == 'pretrain':
        commands.cmd_pretrain(run_config, args.manifest)
    elif args.command == 'finetune':
        commands.cmd_finetune(run_config, args.checkpoint, args.manifest, args.label_fraction, args.scratch)
    elif args.command == 'eval':
        commands.cmd_eval(run_config, args.checkpoint, args.manifest, args.oracle)
    elif args.command == 'inspect':
        commands.cmd_inspect(run_config, args.checkpoint, args.sequence, args.plot)
    elif args.command == 'ablate':
        commands.cmd_ablate(run_config, args.manifest, args.variant)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - [%(name)s] - %(levelname)s - %(message)s'
    )
    try:
        run(args)
    except UsageError as e:
        logger.error(f"CLI: {e}")
        return EXIT_USAGE
    except NumericalError as e:
        logger.error(f"CLI: numerical failure: {e}")
        return EXIT_NUMERICAL
    except (DataError, ShapeError, OSError) as e:
        logger.error(f"CLI: {type(e).__name__}: {e}")
        return EXIT_DATA
    except ValueError as e:
        # invalid values caught by the typed config views
        logger.error(f"CLI: invalid configuration: {e}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.info("CLI: Shutdown signal received.")
        return EXIT_USAGE
    logger.info("CLI: Done.")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
