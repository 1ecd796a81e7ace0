"""``causaltransfer`` command line.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 failed
acceptance checks in ``experiment`` mode.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from ..affinity import cita, save_report
from ..datagen import Family, GeneratorConfig, generate, load_dataset, save_dataset
from ..errors import AcceptanceError, CausalTransferError, ConfigError, StageError
from ..log import configure_logging
from ..tarnet import LossKind, TrainConfig, load_model, save_model, train
from .acceptance import evaluate
from .config import CONFIG_SCHEMA, Experiment, ExperimentConfig, config_from_dict, load_config
from .results import save_curves, save_table
from .runners import RUNNERS
from .store import Workspace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3


def _json_arg(text: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return value


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="Experiment config JSON")
    p.add_argument("--seed", type=int, help="Run this seed only")
    p.add_argument("--out", help="Results directory (overrides paths.out)")
    p.add_argument("--workers", type=int, help="Concurrent seed jobs (overrides workers)")
    p.add_argument("--no-acceptance", action="store_true", help="Skip acceptance checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causaltransfer", description="Task-aware causal effect transfer")
    parser.add_argument("--log-level", help="Level or logger=level list (default $CAUSALTRANSFER_LOG)")
    parser.add_argument("--log-format", choices=("text", "json"), help="Log format (default text)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Generate one synthetic task")
    p.add_argument("--family", required=True, choices=[f.value for f in Family])
    p.add_argument("--params", type=_json_arg, default={}, help="Generator parameters as JSON")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Dataset CSV path")

    p = sub.add_parser("train", help="Train a model on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss-kind", choices=[k.value for k in LossKind], default=LossKind.SQUARED_ERROR.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Model JSON path")

    p = sub.add_parser("affinity", help="Symmetrized task distance from a source to a target")
    p.add_argument("--model", required=True, help="Source model JSON")
    p.add_argument("--source", required=True, help="Source dataset CSV")
    p.add_argument("--target", required=True, help="Target dataset CSV")
    p.add_argument("--gate", type=float, help="Reject sources whose factual loss exceeds this")
    p.add_argument("--out", help="Report JSON path (stdout if omitted)")

    _add_run_flags(sub.add_parser("transfer", help="Select, fine-tune and compare with scratch"))
    _add_run_flags(sub.add_parser("verify-bounds", help="Evaluate the bound checks over a task family"))

    p = sub.add_parser("experiment", help="Run a named experiment and its acceptance checks")
    p.add_argument("name", choices=[e.value for e in Experiment])
    _add_run_flags(p)

    sub.add_parser("schema", help="Print the experiment config JSON schema")
    return parser


def _cmd_generate(args: argparse.Namespace) -> int:
    ds = generate(GeneratorConfig(Family(args.family), args.params, args.n, args.seed))
    path = save_dataset(ds, args.out)
    print(json.dumps({"dataset_id": ds.dataset_id, "n": ds.n, "d": ds.d, "path": str(path)}))
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    ds = load_dataset(args.data)
    config = TrainConfig(alpha=args.alpha, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         seed=args.seed, loss_kind=LossKind(args.loss_kind))
    model, trace = train(ds, config=config)
    path = save_model(model, args.out)
    print(json.dumps({"model_id": model.model_id, "final_factual": trace.final_factual, "path": str(path)}))
    return EXIT_OK


def _cmd_affinity(args: argparse.Namespace) -> int:
    report = cita(load_model(args.model), load_dataset(args.source), load_dataset(args.target), gate=args.gate)
    if args.out:
        save_report(report, args.out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _run_config(args: argparse.Namespace, experiment: Experiment) -> ExperimentConfig:
    config = load_config(args.config)
    if config.experiment is not experiment:
        config = config_from_dict({**config.to_dict(), "experiment": experiment.value})
    return config.with_overrides(seed=args.seed, out=args.out, workers=args.workers)


def _cmd_run(args: argparse.Namespace, experiment: Experiment, acceptance: bool) -> int:
    config = _run_config(args, experiment)
    workspace = Workspace.create(config.workdir)
    table = RUNNERS[experiment](config, workspace)
    out = Path(config.out)
    name = f"{experiment.value}-{config.family.value}"
    save_table(table, out / f"{name}.csv")
    workspace.put_table(table, name)
    if table.curves:
        save_curves(table.curves, out / f"{name}-curves.csv")
    logger.info("wrote %d rows to %s", len(table), out / f"{name}.csv")
    if acceptance and not args.no_acceptance:
        checks = evaluate(experiment, table, strict=False)
        print(json.dumps([c.to_dict() for c in checks]))
        failed = [c for c in checks if not c.passed]
        if failed:
            raise AcceptanceError(failed)
    return EXIT_OK


def _caused_by_config(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, ConfigError):
            return True
        exc = exc.__cause__
    return False


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level, args.log_format)
        if args.command == "schema":
            print(json.dumps(CONFIG_SCHEMA, indent=2))
            return EXIT_OK
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "affinity":
            return _cmd_affinity(args)
        if args.command == "experiment":
            return _cmd_run(args, Experiment(args.name), acceptance=True)
        return _cmd_run(args, Experiment(args.command), acceptance=False)
    except AcceptanceError as exc:
        logger.error("%s", exc)
        print(f"causaltransfer: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except (ConfigError, StageError) as exc:
        print(f"causaltransfer: {exc}", file=sys.stderr)
        return EXIT_CONFIG if _caused_by_config(exc) else EXIT_FAILURE
    except CausalTransferError as exc:
        print(f"causaltransfer: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
