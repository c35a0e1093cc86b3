"""Command-line pipeline: generate, prepare, train, evaluate, search.

One binary, five subcommands, shared JSON config schema. Every command
is deterministic given its inputs and --seed; re-running a command
overwrites its outputs byte for byte. Exit codes: 1 usage, 2
validation, 3 I/O, 4 numeric (including failed EQ model selection).

Config files are JSON objects. Unknown keys are rejected, and any
path-valued key is resolved relative to the config file's directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

from .dataset import prepare_dataset, read_dataset, write_dataset
from .errors import (
    ContractError,
    FairriskError,
    NumericError,
    SelectionFailedError,
    UndefinedMetricError,
    ValidationError,
)
from .generator import (
    SyntheticCohortConfig,
    iter_cohort_with_plan,
    table1_config,
)
from .neural import load_checkpoint, predict_proba, save_checkpoint
from .records import (
    AGE_BIN_LABELS,
    GENDERS,
    RACES,
    read_records,
    record_to_dict,
)
from .report import fairness_report, report_to_text, write_report_files
from .trainer import (
    SearchGrid,
    TrainConfig,
    random_search,
    train_adversarial,
    train_standard,
    write_run_manifest,
    write_trials_csv,
)

EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the documented mapping wants 1
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path: Path | str) -> tuple[dict, Path]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"config: {p}: invalid JSON ({e})")
    if not isinstance(doc, dict):
        raise ValidationError(f"config: {p}: top level must be an object")
    return doc, p.parent


def _reject_unknown(doc: dict, allowed, where: str):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ValidationError(f"{where}: unknown keys {', '.join(unknown)}")


_TUPLE_GENERATE_KEYS = (
    "race_proportions", "gender_proportions", "age_proportions",
    "race_multipliers", "gender_multipliers", "age_multipliers",
    "race_shift", "gender_shift", "age_shift",
)


def _generate_config(doc: dict, seed_override: Optional[int]) -> SyntheticCohortConfig:
    allowed = [f.name for f in dataclasses.fields(SyntheticCohortConfig)]
    _reject_unknown(doc, allowed, "generate config")
    kwargs = dict(doc)
    for key in _TUPLE_GENERATE_KEYS:
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    config = dataclasses.replace(table1_config(), **kwargs)
    if seed_override is not None:
        config = dataclasses.replace(config, seed=seed_override)
    config.validate()
    return config


def _train_config_from_dict(doc: dict, where: str) -> dict:
    allowed = [f.name for f in dataclasses.fields(TrainConfig)]
    _reject_unknown(doc, allowed, where)
    kwargs = dict(doc)
    for key in ("classifier_hidden", "discriminator_hidden"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if kwargs.get("sensitive_attribute") == "none":
        kwargs["sensitive_attribute"] = None
    return kwargs


def _fmt_cell(value: Optional[float], digits: int) -> str:
    return "NA" if value is None else f"{value:.{digits}f}"


def cmd_generate(args) -> int:
    doc, _ = _load_config(args.config)
    config = _generate_config(doc, args.seed)

    n = {"race": [0] * 6, "gender": [0] * 2, "age": [0] * 4}
    pos = {"race": [0] * 6, "gender": [0] * 2, "age": [0] * 4}
    fu = {"race": [0.0] * 6, "gender": [0.0] * 2, "age": [0.0] * 4}

    with open(args.out, "w", encoding="utf-8") as fh:
        for rec, row in iter_cohort_with_plan(config):
            fh.write(json.dumps(record_to_dict(rec), separators=(",", ":")))
            fh.write("\n")
            for attr, g in (
                ("race", row.race_group),
                ("gender", row.gender_group),
                ("age", row.age_group),
            ):
                n[attr][g] += 1
                pos[attr][g] += row.outcome
                fu[attr][g] += row.followup_years

    rows = []
    for attr, labels in (("race", RACES), ("gender", GENDERS), ("age", AGE_BIN_LABELS)):
        for g, label in enumerate(labels):
            rows.append((label, n[attr][g], pos[attr][g], fu[attr][g]))
    total = config.n_patients
    rows.append((
        "All", total, sum(pos["race"]), sum(fu["race"]),
    ))

    print(f"{'group':<10}{'count':>10}{'incidence':>12}{'followup_y':>12}")
    for label, count, positives, fu_sum in rows:
        inc = positives / count if count else None
        mfu = fu_sum / count if count else None
        print(
            f"{label:<10}{count:>10}"
            f"{_fmt_cell(inc, 4):>12}{_fmt_cell(mfu, 2):>12}"
        )
    return 0


def cmd_prepare(args) -> int:
    records = read_records(args.records)
    ds, funnel = prepare_dataset(
        records, seed=args.seed, code_list_dir=args.code_lists
    )
    write_dataset(args.out_dir, ds, funnel, args.seed)

    print(f"records read         {funnel.records_read}")
    print(f"with eligible index  {funnel.with_eligible_index}")
    print(f"after exclusions     {funnel.after_exclusions}")
    print(f"positives            {funnel.positives}")
    sizes = {s: len(r) for s, r in ds.split_rows.items()}
    print(
        f"splits               train={sizes['train']} "
        f"val={sizes['val']} test={sizes['test']}"
    )
    if funnel.after_exclusions == 0:
        print("warning: cohort is empty after exclusions", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    kwargs: dict = {}
    if args.config is not None:
        doc, _ = _load_config(args.config)
        kwargs = _train_config_from_dict(doc, "train config")
    if args.sensitive_attr is not None:
        kwargs["sensitive_attribute"] = (
            None if args.sensitive_attr == "none" else args.sensitive_attr
        )
    if args.adversary_weight is not None:
        kwargs["adversary_weight"] = args.adversary_weight
    if args.seed is not None:
        kwargs["seed"] = args.seed
    config = TrainConfig(**kwargs)

    if config.sensitive_attribute is not None and config.adversary_weight <= 0:
        raise ValidationError(
            "--lambda: the adversary weight must be a positive scalar"
        )

    ds = read_dataset(args.prepared_dir)
    if config.sensitive_attribute is None:
        model = train_standard(ds, config)
        arm = "standard"
    else:
        model = train_adversarial(ds, config)
        arm = f"eq_{config.sensitive_attribute}"

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", model.params)
    write_run_manifest(out / "manifest.json", model)
    if model.val_report is not None:
        write_report_files(out / "val_report", model.val_report)

    stats = model.trace[model.selected_epoch - 1] if model.trace else None
    print(f"arm                  {arm}")
    print(f"selected epoch       {model.selected_epoch}")
    print(f"validation auc       {_fmt_cell(stats.val_auc if stats else None, 4)}")
    print(
        "validation alignment "
        f"{_fmt_cell(stats.val_alignment if stats else None, 6)}"
    )
    return 0


def cmd_evaluate(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.prepared_dir)
    if params.spec.n_inputs != ds.X.shape[1]:
        raise ValidationError(
            f"checkpoint expects {params.spec.n_inputs} features but the "
            f"prepared dataset has {ds.X.shape[1]}"
        )
    rows = ds.rows_for(args.split)
    if rows.size == 0:
        raise ValidationError(f"split {args.split!r} is empty")
    X, y, groups = ds.subset(args.split)
    scores = predict_proba(params, X)
    report = fairness_report(scores, y, groups, args.threshold)
    write_report_files(args.out_dir, report)
    print(report_to_text(report), end="")
    return 0


def cmd_search(args) -> int:
    doc, config_dir = _load_config(args.grid_config)
    _reject_unknown(doc, ("grid", "train", "train_config"), "search config")
    if "train" in doc and "train_config" in doc:
        raise ValidationError(
            "search config: give either train or train_config, not both"
        )

    grid_doc = doc.get("grid", {})
    allowed = [f.name for f in dataclasses.fields(SearchGrid)]
    _reject_unknown(grid_doc, allowed, "search config: grid")
    grid_kwargs = {
        k: (v if isinstance(v, (int, bool)) else tuple(v))
        for k, v in grid_doc.items()
    }
    # n_trials is a plain int; every other field is a candidate tuple
    grid = SearchGrid(**grid_kwargs)

    if "train_config" in doc:
        train_doc, _ = _load_config(config_dir / doc["train_config"])
    else:
        train_doc = doc.get("train", {})
    base = TrainConfig(**_train_config_from_dict(train_doc, "search config: train"))
    if args.seed is not None:
        base = dataclasses.replace(base, seed=args.seed)

    ds = read_dataset(args.prepared_dir)
    results = random_search(
        grid, ds, base, n_trials=args.trials, seed=args.seed or 0
    )

    out = Path(args.out_dir)
    trials_dir = out / "trials"
    trials_dir.mkdir(parents=True, exist_ok=True)
    write_trials_csv(out / "ranking.csv", results)
    for r in sorted(results, key=lambda r: r.trial):
        doc_out = {
            "trial": r.trial,
            "config": r.config.to_dict(),
            "status": r.status,
            "val_auc": r.val_auc,
            "val_alignment": r.val_alignment,
            "selected_epoch": r.selected_epoch,
            "error": r.error,
            "trace": [
                {
                    "epoch": s.epoch,
                    "classifier_loss": s.classifier_loss,
                    "discriminator_loss": s.discriminator_loss,
                    "val_auc": s.val_auc,
                    "val_alignment": s.val_alignment,
                }
                for s in r.trace
            ],
        }
        with open(trials_dir / f"trial_{r.trial:03d}.json", "w", encoding="utf-8") as fh:
            json.dump(doc_out, fh, indent=2, sort_keys=True)
            fh.write("\n")

    for rank, r in enumerate(results):
        print(
            f"rank={rank} trial={r.trial} status={r.status} "
            f"val_auc={'NA' if r.val_auc is None else f'{r.val_auc:.4f}'} "
            f"val_alignment="
            f"{'NA' if r.val_alignment is None else f'{r.val_alignment:.6f}'}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairrisk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic patient record file")
    p.add_argument("config", help="JSON cohort config")
    p.add_argument("out", help="output records path (JSON lines)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="records -> features/labels/groups/splits")
    p.add_argument("records", help="patient records path (JSON lines)")
    p.add_argument("out_dir", help="prepared dataset directory")
    p.add_argument("--code-lists", default=None, help="code list directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one arm on a prepared dataset")
    p.add_argument("prepared_dir")
    p.add_argument("out_dir")
    p.add_argument(
        "--sensitive-attr",
        choices=("none", "race", "gender", "age"),
        default=None,
    )
    p.add_argument("--lambda", dest="adversary_weight", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON training config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="fairness report for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("prepared_dir")
    p.add_argument("out_dir")
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.075)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("prepared_dir")
    p.add_argument("grid_config", help="JSON with grid / train sections")
    p.add_argument("out_dir")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_search)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SelectionFailedError as e:
        best = "none" if e.best_auc is None else f"{e.best_auc:.4f}"
        print(
            f"fairrisk: model selection failed: {e} (best validation AUC {best})",
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    except NumericError as e:
        print(f"fairrisk: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ContractError, UndefinedMetricError) as e:
        print(f"fairrisk: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FairriskError as e:
        print(f"fairrisk: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"fairrisk: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
