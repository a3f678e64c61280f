import argparse
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '.')))

from src.config import Config
from src.harness.evaluator import evaluate
from src.harness.experiment import load_experiment
from src.harness.report import account_experiment, report
from src.harness.trainer import train, train_all
from src.utils.exceptions import BaseAPNetException, ConfigurationException
from src.utils.logger import get_logger

logger = get_logger(__name__)


def _train(args: argparse.Namespace) -> None:
    cfg = load_experiment(args.config)
    if args.seed is None:
        if args.resume:
            raise ConfigurationException("--resume needs the --seed of the run being resumed")
        results = train_all(cfg, args.out)
    else:
        results = [train(cfg, args.seed, args.out, resume=args.resume)]
    for result in results:
        print(f"{result.out_dir}: top-1 {result.summary.top1:.2f}%, top-5 {result.summary.top5:.2f}%")


def _eval(args: argparse.Namespace) -> None:
    top1, top5 = evaluate(args.checkpoint, args.data)
    print(f"top-1 {top1:.2f}%  top-5 {top5:.2f}%")


def _report(args: argparse.Namespace) -> None:
    print(report(args.runs, csv_path=args.csv))


def _account(args: argparse.Namespace) -> None:
    print(account_experiment(load_experiment(args.config), args.num_classes).format())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apnet", description=f"{Config.APP_NAME} {Config.APP_VERSION}: "
                                     "augmentation pathway networks, training and accounting")
    commands = parser.add_subparsers(dest="command", required=True)

    train_cmd = commands.add_parser("train", help="train one seed (or every configured seed)")
    train_cmd.add_argument("--config", required=True, type=Path)
    train_cmd.add_argument("--seed", type=int, default=None)
    train_cmd.add_argument("--out", required=True, type=Path)
    train_cmd.add_argument("--resume", type=Path, default=None, help="APNETv1 checkpoint of an earlier epoch")
    train_cmd.set_defaults(handler=_train)

    eval_cmd = commands.add_parser("eval", help="top-1/top-5 of a checkpoint on its validation split")
    eval_cmd.add_argument("--checkpoint", required=True, type=Path)
    eval_cmd.add_argument("--data", default=None, help="dataset location overriding the recorded one")
    eval_cmd.set_defaults(handler=_eval)

    report_cmd = commands.add_parser("report", help="params / MACs / accuracy table over finished runs")
    report_cmd.add_argument("--runs", required=True, nargs="+", type=Path)
    report_cmd.add_argument("--csv", type=Path, default=None)
    report_cmd.set_defaults(handler=_report)

    account_cmd = commands.add_parser("account", help="params and MACs of a config, no training")
    account_cmd.add_argument("--config", required=True, type=Path)
    account_cmd.add_argument("--num-classes", type=int, default=None)
    account_cmd.set_defaults(handler=_account)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
    except BaseAPNetException as e:
        logger.critical(f"{args.command} failed: {e}")
        return 1
    except KeyboardInterrupt:
        logger.warning("Interrupted; the last completed epoch checkpoint is intact")
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
