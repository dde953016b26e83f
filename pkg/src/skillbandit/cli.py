"""Command-line entry point wiring preprocess, simulate, tune, evaluate,
report, and the full experiment pipeline.

Every run of ``run`` writes a manifest (config hash, derived seeds, library
versions) sufficient to reproduce its outputs byte-identically from the same
root seed. Stage failures abort with the stage name and cause; outputs
written before the failure are retained for debugging.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .policies import POLICY_KINDS, make_policy
from .preprocess import (
    DEFAULT_FRACTIONS,
    DEFAULT_MIN_INTERACTIONS,
    ExperimentData,
    fit_context_encoder,
    load_data_dir,
    run_pipeline,
    write_data_dir,
)
from .replay import (
    DEFAULT_WINDOW,
    ReplayConfig,
    emit_metrics,
    pretrain,
    replay,
    trace_summary,
)
from .seeding import child_seed
from .synthetic import SyntheticSpec, generate
from .tuning import (
    DEFAULT_GRIDS,
    DEFAULT_TUNE_SEEDS,
    TUNABLE_KINDS,
    final_run,
    grid_search,
)
from .types import read_interaction_rows, read_profiles_csv


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _write_json(path: Path, payload: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def data_digest(data_dir: Path) -> str:
    """Digest of the split files, used to detect mismatched provenance."""
    digest = hashlib.sha256()
    for name in ("train.csv", "val.csv", "test.csv"):
        digest.update((data_dir / name).read_bytes())
    return digest.hexdigest()


def percentage_improvement(value: float, baseline: float) -> float | None:
    """Relative improvement of ``value`` over ``baseline`` in percent."""
    if baseline == 0.0:
        return None
    return 100.0 * (value - baseline) / baseline


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------


def stage_preprocess(
    interactions_path: str | Path,
    profiles_path: str | Path,
    output_dir: str | Path,
    min_interactions: int = DEFAULT_MIN_INTERACTIONS,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> ExperimentData:
    rows = read_interaction_rows(interactions_path)
    profiles = read_profiles_csv(profiles_path)
    split, report = run_pipeline(rows, min_interactions, fractions)
    encoder = fit_context_encoder(profiles, split.train)
    kept = {u: p for u, p in profiles.items() if u in split.users("train")}
    write_data_dir(output_dir, split, encoder, report, kept)
    return ExperimentData(split=split, profiles=kept, encoder=encoder)


def stage_evaluate(
    policy_kind: str,
    params: Mapping[str, float],
    data: ExperimentData,
    data_dir: Path,
    out_dir: Path,
    seed: int,
    split_name: str = "test",
    freeze: bool | None = None,
    warm_start_rounds: int = 1000,
    eval_warm_start_rounds: int = 0,
    window: int = DEFAULT_WINDOW,
) -> dict:
    """Pretrain on the splits before ``split_name``, then replay it.

    The test split defaults to a frozen replay, the validation split to a
    learning one; ``freeze`` overrides either.
    """
    contexts = data.contexts()
    policy = make_policy(policy_kind, params, dim=data.encoder.dim)
    history = {
        "validation": [data.split.train],
        "test": [data.split.train, data.split.validation],
    }[split_name]
    pretrain(
        policy,
        history,
        contexts,
        ReplayConfig(
            seed=child_seed(seed, "evaluate", policy_kind, "pretrain"),
            warm_start_rounds=warm_start_rounds,
        ),
    )
    if freeze is None:
        freeze = split_name == "test"
    trace = replay(
        policy,
        data.split.part(split_name),
        contexts,
        ReplayConfig(
            seed=child_seed(seed, "evaluate", policy_kind, split_name),
            warm_start_rounds=eval_warm_start_rounds,
            freeze=freeze,
        ),
    )
    emit_metrics(trace, out_dir, window=window)
    summary = {
        "policy": policy_kind,
        "params": dict(params),
        "seed": seed,
        "split": split_name,
        "freeze": freeze,
        "data_digest": data_digest(data_dir),
        **trace_summary(trace),
    }
    _write_json(Path(out_dir) / "summary.json", summary)
    return summary


def build_report(run_dirs: Sequence[Path], out_dir: Path) -> dict[str, Path]:
    """Merge per-policy evaluation outputs into one comparison CSV and one
    frequency-comparison JSON, both directly plottable."""
    summaries = []
    for run_dir in run_dirs:
        summary_path = Path(run_dir) / "summary.json"
        if not summary_path.exists():
            raise FileNotFoundError(f"missing evaluation summary: {summary_path}")
        with open(summary_path, encoding="utf-8") as handle:
            summaries.append((Path(run_dir), json.load(handle)))
    digests = {s["data_digest"] for _, s in summaries}
    if len(digests) > 1:
        raise ValueError("traces come from different preprocessed datasets")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    columns: dict[str, list[str]] = {}
    for run_dir, summary in summaries:
        with open(run_dir / "trace.csv", newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            columns[summary["policy"]] = [row["cum_avg"] for row in reader]
    policies = [s["policy"] for _, s in summaries]
    length = max((len(c) for c in columns.values()), default=0)
    comparison = out / "comparison.csv"
    with open(comparison, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["round"] + policies)
        for i in range(length):
            writer.writerow(
                [i + 1]
                + [columns[p][i] if i < len(columns[p]) else "" for p in policies]
            )

    frequencies = {}
    for run_dir, summary in summaries:
        with open(run_dir / "action_freq.json", encoding="utf-8") as handle:
            frequencies[summary["policy"]] = json.load(handle)
    frequency_path = out / "frequencies.json"
    _write_json(frequency_path, frequencies)
    return {"comparison": comparison, "frequencies": frequency_path}


DEFAULT_RUN_CONFIG = {
    "root_seed": 0,
    "preprocess": {
        "min_interactions": DEFAULT_MIN_INTERACTIONS,
        "fractions": list(DEFAULT_FRACTIONS),
    },
    "tune": {
        "policies": ["ts", "lints"],
        "seeds": list(DEFAULT_TUNE_SEEDS),
        "grids": {},
        "warm_start_rounds": 1000,
    },
    "evaluate": {
        "policies": ["lints", "ts", "usercf", "itemcf"],
        "params": {},
        "warm_start_rounds": 1000,
        "test_warm_start_rounds": 0,
        "freeze": True,
    },
    "report": {"window": DEFAULT_WINDOW},
}


def _merged_config(config: Mapping) -> dict:
    merged = json.loads(json.dumps(DEFAULT_RUN_CONFIG))
    for key, value in config.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def run_experiment(config: Mapping, out_dir: str | Path) -> dict:
    """Execute the configured stages in order and write summary.json."""
    merged = _merged_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root_seed = int(merged["root_seed"])
    canonical = json.dumps(merged, sort_keys=True)
    _write_json(
        out / "manifest.json",
        {
            "config": merged,
            "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
            "root_seed": root_seed,
            "versions": {
                "skillbandit": __version__,
                "numpy": np.__version__,
                "python": ".".join(map(str, sys.version_info[:3])),
            },
        },
    )

    if "synthetic" in merged:
        try:
            spec_payload = dict(merged["synthetic"])
            spec_payload.setdefault("seed", child_seed(root_seed, "simulate"))
            dataset = generate(SyntheticSpec.from_dict(spec_payload))
            paths = dataset.write(out / "data")
            interactions_path, profiles_path = paths["interactions"], paths["profiles"]
        except Exception as exc:
            raise StageError("simulate", exc) from exc
    else:
        try:
            interactions_path = Path(merged["data"]["interactions"])
            profiles_path = Path(merged["data"]["profiles"])
        except KeyError as exc:
            raise StageError("configuration", exc) from exc

    try:
        pre = merged["preprocess"]
        data_dir = out / "preprocessed"
        data = stage_preprocess(
            interactions_path,
            profiles_path,
            data_dir,
            min_interactions=int(pre["min_interactions"]),
            fractions=tuple(pre["fractions"]),  # type: ignore[arg-type]
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("preprocess", exc) from exc

    tuned_params: dict[str, dict] = {}
    try:
        tune_cfg = merged["tune"]
        for kind in tune_cfg["policies"]:
            if kind not in TUNABLE_KINDS:
                continue
            grid = tune_cfg["grids"].get(kind, DEFAULT_GRIDS[kind])
            result = grid_search(
                kind,
                grid,
                data,
                seeds=[child_seed(root_seed, "tune", kind, s) for s in tune_cfg["seeds"]],
                warm_start_rounds=int(tune_cfg["warm_start_rounds"]),
            )
            _write_json(out / "tune" / f"{kind}.json", result.to_dict())
            tuned_params[kind] = result.best_params
    except Exception as exc:
        raise StageError("tune", exc) from exc

    eval_cfg = merged["evaluate"]
    summaries: dict[str, dict] = {}
    try:
        for kind in eval_cfg["policies"]:
            params = tuned_params.get(kind, eval_cfg["params"].get(kind, {}))
            policy, trace = final_run(
                kind,
                params,
                data,
                seed=child_seed(root_seed, "evaluate", kind),
                warm_start_rounds=int(eval_cfg["warm_start_rounds"]),
                test_warm_start_rounds=int(eval_cfg["test_warm_start_rounds"]),
                freeze=bool(eval_cfg["freeze"]),
            )
            eval_dir = out / "eval" / kind
            emit_metrics(trace, eval_dir, window=int(merged["report"]["window"]))
            summary = {
                "policy": kind,
                "params": dict(params),
                "data_digest": data_digest(data_dir),
                **trace_summary(trace),
            }
            _write_json(eval_dir / "summary.json", summary)
            summaries[kind] = summary
    except Exception as exc:
        raise StageError("evaluate", exc) from exc

    try:
        build_report(
            [out / "eval" / kind for kind in eval_cfg["policies"]], out / "report"
        )
    except Exception as exc:
        raise StageError("report", exc) from exc

    improvements = {}
    for kind_a, summary_a in summaries.items():
        for kind_b, summary_b in summaries.items():
            if kind_a == kind_b:
                continue
            improvements[f"{kind_a}_vs_{kind_b}"] = percentage_improvement(
                summary_a["final_cumulative_average_reward"],
                summary_b["final_cumulative_average_reward"],
            )
    top = {
        "policies": {
            kind: {
                "final_cumulative_average_reward": s["final_cumulative_average_reward"],
                "rounds": s["rounds"],
                "skipped_rounds": s["skipped_rounds"],
                "params": s["params"],
            }
            for kind, s in summaries.items()
        },
        "improvements_percent": improvements,
    }
    _write_json(out / "summary.json", top)
    return top


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = tuple(float(p) for p in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("fractions must be three comma-separated numbers")
    return parts  # type: ignore[return-value]


def _parse_seeds(text: str) -> list[int]:
    return [int(p) for p in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillbandit",
        description="Exercise recommendation policies with offline replay evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="run the ingestion pipeline")
    p.add_argument("--input", required=True, help="canonical interaction CSV")
    p.add_argument("--profiles", required=True, help="learner profile CSV")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--min-interactions", type=int, default=DEFAULT_MIN_INTERACTIONS)
    p.add_argument("--fractions", type=_parse_fractions, default=DEFAULT_FRACTIONS)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="synthetic spec JSON")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("tune", help="grid search on the validation split")
    p.add_argument("--policy", required=True, choices=TUNABLE_KINDS)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--seeds", type=_parse_seeds, default=list(DEFAULT_TUNE_SEEDS))
    p.add_argument("--grid", help="JSON file overriding the default grid")
    p.add_argument("--warm-start-rounds", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="pretrain and replay one policy")
    p.add_argument("--policy", required=True, choices=POLICY_KINDS)
    p.add_argument("--params", help="policy parameter JSON file")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("validation", "test"), default="test")
    p.add_argument("--freeze", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--warm-start-rounds", type=int, default=1000)
    p.add_argument("--eval-warm-start-rounds", type=int, default=0)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="merge evaluation outputs")
    p.add_argument("--runs", nargs="+", required=True, help="evaluate output dirs")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config out_dir)")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "preprocess":
            stage_preprocess(
                args.input,
                args.profiles,
                args.output_dir,
                min_interactions=args.min_interactions,
                fractions=args.fractions,
            )
        elif args.command == "simulate":
            generate(SyntheticSpec.load(args.spec)).write(args.out_dir)
        elif args.command == "tune":
            data = load_data_dir(args.data_dir)
            if args.grid:
                with open(args.grid, encoding="utf-8") as handle:
                    grid = json.load(handle)
            else:
                grid = DEFAULT_GRIDS[args.policy]
            result = grid_search(
                args.policy,
                grid,
                data,
                seeds=args.seeds,
                warm_start_rounds=args.warm_start_rounds,
            )
            _write_json(Path(args.out), result.to_dict())
        elif args.command == "evaluate":
            data = load_data_dir(args.data_dir)
            params = {}
            if args.params:
                with open(args.params, encoding="utf-8") as handle:
                    params = json.load(handle)
            stage_evaluate(
                args.policy,
                params,
                data,
                Path(args.data_dir),
                Path(args.out),
                seed=args.seed,
                split_name=args.split,
                freeze=args.freeze,
                warm_start_rounds=args.warm_start_rounds,
                eval_warm_start_rounds=args.eval_warm_start_rounds,
                window=args.window,
            )
        elif args.command == "report":
            build_report([Path(r) for r in args.runs], Path(args.out))
        elif args.command == "run":
            with open(args.config, encoding="utf-8") as handle:
                config = json.load(handle)
            out_dir = args.out or config.get("out_dir")
            if not out_dir:
                raise StageError(
                    "configuration", ValueError("no output directory configured")
                )
            run_experiment(config, out_dir)
    except StageError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # stage-tagged by subcommand name
        print(f"error in stage '{args.command}': {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
