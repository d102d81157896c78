"""Batch CLI: simulate | fit | attribute | report.

Each subcommand reads a JSON run config, consumes the previous stage's
artifacts from the output directory, and writes its own. Runs are fully
reproducible: identical config + seed produce byte-identical artifacts, and
every manifest embeds the SHA-256 of the effective config.

    mta simulate --config run.json
    mta fit --config run.json
    mta attribute --config run.json
    mta report --config run.json --format table

Global flags: --config PATH (required), --seed N (overrides the config
seed), --out DIR (overrides the output directory), --format {json,csv,table}
(stdout summary format). Log level comes from MTA_LOG_LEVEL
(error|warn|info|debug).

Exit codes: 0 success; 2 invalid config; 3 insufficient calibration data;
4 missing input artifact; 1 other pipeline errors. Failures print a single
``ErrorClass: message`` line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import IO, Sequence

from . import pipeline
from .attribution import DecayConfig, MdaHyperparams, MdaModel, MODEL_NAMES, load_mda, save_mda
from .calibration import (
    CalibrationOptions,
    feature_rows_to_csv,
    load_calibration,
    save_calibration,
)
from .credits import (
    DIMENSIONS,
    AttributionShareReport,
    MtaCredit,
    aggregate_shares,
    render_share_table,
    shares_from_totals,
)
from .errors import (
    ConfigError,
    InsufficientDataError,
    MissingArtifactError,
    MtaError,
)
from .events import (
    LookbackWindow,
    build_journeys,
    conversion_to_record,
    parse_event_log,
    touchpoint_to_record,
)
from .rct import CampaignSpec, RctResult, SimConfig, estimate_all, lift_from_counts, simulate

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_INSUFFICIENT_DATA = 3
EXIT_MISSING_ARTIFACT = 4

ARTIFACTS = {
    "touchpoints": "touchpoints.jsonl",
    "conversions": "conversions.jsonl",
    "ground_truth": "ground_truth.csv",
    "rct_results": "rct_results.csv",
    "calibration_model": "calibration_model.json",
    "mda_model": "mda_model.json",
    "campaign_features": "campaign_features.csv",
    "mta_credits": "mta_credits.csv",
    "model_credits": "model_credits.csv",
    "attribution_summary": "attribution_summary.json",
    "shares_json": "attribution_shares.json",
    "shares_table": "attribution_shares.txt",
}

RCT_RESULT_COLUMNS = (
    "campaign_id",
    "n_treatment",
    "n_holdout",
    "conv_treatment",
    "conv_holdout",
    "incremental_conversions",
    "std_error",
    "ci_low",
    "ci_high",
)

MTA_CREDIT_COLUMNS = (
    "conversion_id",
    "touchpoint_id",
    "campaign_id",
    "channel",
    "ad_product",
    "credit",
)


@dataclass
class RunConfig:
    """Validated run configuration (see README for the JSON schema)."""

    seed: int
    out_dir: Path
    lookback: LookbackWindow
    decay: DecayConfig
    mda_hyper: MdaHyperparams
    mda_max_negatives: int | None
    calibration: CalibrationOptions
    cv_folds: int
    cv_seed: int
    report_dimension: str
    sim: SimConfig | None
    paths: dict[str, Path] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def artifact(self, name: str) -> Path:
        if name in self.paths:
            return self.paths[name]
        return self.out_dir / ARTIFACTS[name]

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _campaign_from_dict(index: int, data: dict) -> CampaignSpec:
    try:
        return CampaignSpec(
            campaign_id=str(data["campaign_id"]),
            channel=str(data["channel"]),
            ad_product=str(data.get("ad_product", "default")),
            exposure_rate=float(data["exposure_rate"]),
            click_rate=float(data.get("click_rate", 0.0)),
            true_lift=float(data["true_lift"]),
            holdout_fraction=float(data.get("holdout_fraction", 0.1)),
            is_rct=bool(data.get("is_rct", True)),
            view_window=tuple(data.get("view_window", (0.0, 0.7))),
        )
    except KeyError as exc:
        raise ConfigError(f"simulation.campaigns[{index}] is missing field {exc.args[0]!r}") from None


def load_run_config(path: Path, seed_override: int | None, out_override: Path | None) -> RunConfig:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None

    seed = int(seed_override if seed_override is not None else raw.get("seed", 0))
    out_dir = Path(out_override if out_override is not None else raw.get("out_dir", "out"))

    lookback_days = float(raw.get("lookback_days", 7.0))
    _require(lookback_days > 0, f"lookback_days must be positive, got {lookback_days}")
    half_life_days = float(raw.get("decay_half_life_days", 3.0))
    _require(half_life_days > 0, f"decay_half_life_days must be positive, got {half_life_days}")

    mda_raw = raw.get("mda", {})
    mda_hyper = MdaHyperparams(
        learning_rate=float(mda_raw.get("learning_rate", 0.5)),
        iterations=int(mda_raw.get("iterations", 400)),
        seed=int(mda_raw.get("seed", 0)),
    )
    _require(mda_hyper.learning_rate > 0, "mda.learning_rate must be positive")
    _require(mda_hyper.iterations >= 1, "mda.iterations must be >= 1")
    max_negatives = mda_raw.get("max_negatives")
    max_negatives = int(max_negatives) if max_negatives is not None else None

    cal_raw = raw.get("calibration", {})
    features = cal_raw.get("features", ["lta", "mda"])
    _require(
        isinstance(features, list) and features,
        "calibration.features must be a non-empty list",
    )
    for name in features:
        _require(name in MODEL_NAMES, f"calibration.features: unknown model {name!r}")
    calibration = CalibrationOptions(
        feature_models=tuple(features),
        pooling=str(cal_raw.get("pooling", "global")),
        intercept=bool(cal_raw.get("intercept", False)),
        inverse_variance_weighting=bool(cal_raw.get("inverse_variance_weighting", False)),
    )
    cv_folds = int(cal_raw.get("cv_folds", 5))
    cv_seed = int(cal_raw.get("cv_seed", 0))

    dimension = str(raw.get("report_dimension", "channel"))
    _require(dimension in DIMENSIONS, f"report_dimension must be one of {DIMENSIONS}, got {dimension!r}")

    sim = None
    if "simulation" in raw:
        sim_raw = raw["simulation"]
        campaigns = tuple(
            _campaign_from_dict(i, c) for i, c in enumerate(sim_raw.get("campaigns", []))
        )
        sim = SimConfig(
            n_customers=int(sim_raw.get("n_customers", 0)),
            campaigns=campaigns,
            baseline_conversion_rate=float(sim_raw.get("baseline_conversion_rate", 0.02)),
            seed=seed,
            horizon=timedelta(days=float(sim_raw.get("horizon_days", 14.0))),
        )

    paths = {
        name: Path(value) for name, value in raw.get("paths", {}).items() if name in ARTIFACTS
    }

    effective = dict(raw)
    effective["seed"] = seed
    effective["out_dir"] = str(out_dir)
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        lookback=LookbackWindow(timedelta(days=lookback_days)),
        decay=DecayConfig(timedelta(days=half_life_days)),
        mda_hyper=mda_hyper,
        mda_max_negatives=max_negatives,
        calibration=calibration,
        cv_folds=cv_folds,
        cv_seed=cv_seed,
        report_dimension=dimension,
        sim=sim,
        paths=paths,
        raw=effective,
    )


def _write_manifest(cfg: RunConfig, command: str, outputs: Sequence[str]) -> Path:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.config_hash(),
        "outputs": {name: str(cfg.artifact(name)) for name in outputs},
    }
    path = cfg.out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _open_input(path: Path) -> IO[str]:
    if not path.exists():
        raise MissingArtifactError(f"required input {path} does not exist; run the earlier stage first")
    return path.open()


def _load_events(cfg: RunConfig):
    with _open_input(cfg.artifact("touchpoints")) as fh:
        touchpoints = parse_event_log(fh, "jsonl").touchpoints
    with _open_input(cfg.artifact("conversions")) as fh:
        conversions = parse_event_log(fh, "jsonl").conversions
    return touchpoints, conversions


def _write_rct_results(results: dict[str, RctResult], path: Path) -> None:
    with path.open("w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RCT_RESULT_COLUMNS)
        for campaign_id in sorted(results):
            r = results[campaign_id]
            writer.writerow(
                [
                    r.campaign_id,
                    r.n_treatment,
                    r.n_holdout,
                    repr(r.conv_treatment),
                    repr(r.conv_holdout),
                    repr(r.incremental_conversions),
                    repr(r.std_error),
                    repr(r.ci_low),
                    repr(r.ci_high),
                ]
            )


def _read_rct_results(path: Path) -> dict[str, RctResult]:
    results: dict[str, RctResult] = {}
    with _open_input(path) as fh:
        reader = csv.DictReader(fh)
        for record in reader:
            results[record["campaign_id"]] = lift_from_counts(
                record["campaign_id"],
                n_treatment=int(record["n_treatment"]),
                n_holdout=int(record["n_holdout"]),
                conv_treatment=float(record["conv_treatment"]),
                conv_holdout=float(record["conv_holdout"]),
            )
    return results


def _emit(args, payload: dict, table: str, csv_text: str | None = None) -> None:
    if args.format == "json":
        print(json.dumps(payload, sort_keys=True))
    elif args.format == "csv":
        if csv_text is None:
            lines = ["key,value"]
            for key, value in payload.items():
                lines.append(f"{key},{json.dumps(value) if isinstance(value, dict) else value}")
            csv_text = "\n".join(lines)
        print(csv_text)
    else:
        print(table)


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.sim is None:
        raise ConfigError("config has no 'simulation' section")
    touchpoints, conversions, ground_truth = simulate(cfg.sim)

    with cfg.artifact("touchpoints").open("w") as fh:
        for tp in touchpoints:
            fh.write(json.dumps(touchpoint_to_record(tp)) + "\n")
    with cfg.artifact("conversions").open("w") as fh:
        for conv in conversions:
            fh.write(json.dumps(conversion_to_record(conv)) + "\n")
    with cfg.artifact("ground_truth").open("w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["campaign_id", "true_incremental", "n_treatment", "n_holdout"])
        for row in ground_truth:
            writer.writerow(
                [row.campaign_id, repr(row.true_incremental), row.n_treatment, row.n_holdout]
            )
    results = estimate_all(cfg.sim, conversions)
    _write_rct_results(results, cfg.artifact("rct_results"))
    _write_manifest(
        cfg, "simulate", ["touchpoints", "conversions", "ground_truth", "rct_results"]
    )

    payload = {
        "touchpoints": len(touchpoints),
        "conversions": len(conversions),
        "campaigns": len(cfg.sim.campaigns),
        "rct_campaigns": len(results),
    }
    table = "\n".join(f"{k}: {v}" for k, v in payload.items())
    _emit(args, payload, table)
    return 0


def _journeys_and_credits(cfg: RunConfig, mda: MdaModel | None):
    touchpoints, conversions = _load_events(cfg)
    journeys = build_journeys(touchpoints, conversions, cfg.lookback)
    attributable, unattributed = pipeline.split_attributable(journeys)
    credits_by_model = pipeline.ensemble_credits(attributable, MODEL_NAMES, cfg.decay, mda)
    return journeys, attributable, unattributed, credits_by_model


def cmd_fit(cfg: RunConfig, args) -> int:
    if cfg.sim is None:
        raise ConfigError("config has no 'simulation' section (campaign list is required to fit)")
    rct_results = _read_rct_results(cfg.artifact("rct_results"))
    touchpoints, conversions = _load_events(cfg)
    journeys = build_journeys(touchpoints, conversions, cfg.lookback)
    attributable, unattributed = pipeline.split_attributable(journeys)

    mda = pipeline.train_attributor(journeys, cfg.mda_hyper, cfg.mda_max_negatives)
    credits_by_model = pipeline.ensemble_credits(attributable, MODEL_NAMES, cfg.decay, mda)
    rows = pipeline.calibration_rows(
        journeys,
        credits_by_model,
        cfg.sim.campaigns,
        rct_results,
        cfg.calibration.feature_models,
    )
    model = pipeline.fit_with_cv(rows, cfg.calibration, cfg.cv_folds, cfg.cv_seed)

    with cfg.artifact("calibration_model").open("w") as fh:
        save_calibration(model, fh)
    if mda is not None:
        with cfg.artifact("mda_model").open("w") as fh:
            save_mda(mda, fh)
    with cfg.artifact("campaign_features").open("w") as fh:
        feature_rows_to_csv(rows, fh)
    outputs = ["calibration_model", "campaign_features"]
    if mda is not None:
        outputs.append("mda_model")
    _write_manifest(cfg, "fit", outputs)

    payload = {
        "weights": {g: dict(zip(model.feature_names, w)) for g, w in model.weights_by_group.items()},
        "diagnostics": model.fit_diagnostics,
        "cv_metrics": model.cv_metrics,
        "unattributed_conversions": unattributed,
    }
    lines = ["group  model  weight"]
    for group in sorted(model.weights_by_group):
        for name, weight in zip(model.feature_names, model.weights_by_group[group]):
            lines.append(f"{group}  {name}  {weight:.6f}")
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_attribute(cfg: RunConfig, args) -> int:
    model_path = cfg.artifact("calibration_model")
    with _open_input(model_path) as fh:
        model = load_calibration(fh)
    mda: MdaModel | None = None
    mda_path = cfg.artifact("mda_model")
    if mda_path.exists():
        with mda_path.open() as fh:
            mda = load_mda(fh)

    journeys, attributable, unattributed, credits_by_model = _journeys_and_credits(cfg, mda)
    mta_credits = pipeline.score_all(model, attributable, credits_by_model)
    records = pipeline.model_credit_records(attributable, credits_by_model)

    with cfg.artifact("mta_credits").open("w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MTA_CREDIT_COLUMNS)
        for credit in mta_credits:
            writer.writerow(
                [
                    credit.conversion_id,
                    credit.touchpoint_id,
                    credit.campaign_id,
                    credit.channel,
                    credit.ad_product,
                    repr(credit.credit),
                ]
            )
    with cfg.artifact("model_credits").open("w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", *MTA_CREDIT_COLUMNS])
        for record in records:
            writer.writerow(
                [
                    record.model,
                    record.conversion_id,
                    record.touchpoint_id,
                    record.campaign_id,
                    record.channel,
                    record.ad_product,
                    repr(record.credit),
                ]
            )
    summary = {
        "conversions": sum(1 for j in journeys if j.converted),
        "attributed_conversions": len(attributable),
        "unattributed_conversions": unattributed,
        "mta_credit_rows": len(mta_credits),
    }
    cfg.artifact("attribution_summary").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_manifest(cfg, "attribute", ["mta_credits", "model_credits", "attribution_summary"])
    _emit(args, summary, "\n".join(f"{k}: {v}" for k, v in summary.items()))
    return 0


def _read_mta_credits(path: Path) -> list[MtaCredit]:
    credits = []
    with _open_input(path) as fh:
        for record in csv.DictReader(fh):
            credits.append(
                MtaCredit(
                    conversion_id=record["conversion_id"],
                    touchpoint_id=record["touchpoint_id"],
                    campaign_id=record["campaign_id"],
                    channel=record["channel"],
                    ad_product=record["ad_product"],
                    credit=float(record["credit"]),
                )
            )
    return credits


def _report_to_dict(report: AttributionShareReport) -> dict:
    return {
        "dimension": report.dimension,
        "rows": [
            {"value": r.value, "total_credit": r.total_credit, "share": r.share}
            for r in report.rows
        ],
        "unattributed_conversions": report.unattributed_conversions,
        "zero_total": report.zero_total,
    }


def cmd_report(cfg: RunConfig, args) -> int:
    credits = _read_mta_credits(cfg.artifact("mta_credits"))
    unattributed = 0
    summary_path = cfg.artifact("attribution_summary")
    if summary_path.exists():
        unattributed = int(json.loads(summary_path.read_text())["unattributed_conversions"])
    report = aggregate_shares(credits, cfg.report_dimension, unattributed)

    comparisons: dict[str, AttributionShareReport] = {}
    model_credits_path = cfg.artifact("model_credits")
    if model_credits_path.exists():
        totals: dict[str, dict[str, float]] = {}
        with model_credits_path.open() as fh:
            for record in csv.DictReader(fh):
                model_name = record["model"]
                if model_name not in ("lta", "mda"):
                    continue
                key = record[
                    "campaign_id" if cfg.report_dimension == "campaign" else cfg.report_dimension
                ]
                bucket = totals.setdefault(model_name, {})
                bucket[key] = bucket.get(key, 0.0) + float(record["credit"])
        for model_name in ("lta", "mda"):
            if model_name in totals:
                comparisons[model_name] = shares_from_totals(
                    totals[model_name], cfg.report_dimension, unattributed
                )

    doc = _report_to_dict(report)
    doc["comparisons"] = {name: _report_to_dict(rep) for name, rep in comparisons.items()}
    cfg.artifact("shares_json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    table = render_share_table(report, comparisons)
    cfg.artifact("shares_table").write_text(table + "\n")
    _write_manifest(cfg, "report", ["shares_json", "shares_table"])
    csv_lines = [f"{cfg.report_dimension},total_credit,share"]
    csv_lines += [f"{r.value},{r.total_credit!r},{r.share!r}" for r in report.rows]
    _emit(args, doc, table, "\n".join(csv_lines))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "attribute": cmd_attribute,
    "report": cmd_report,
}

_LOG_LEVELS = {"error": "ERROR", "warn": "WARNING", "info": "INFO", "debug": "DEBUG"}


def _configure_logging() -> None:
    level = os.environ.get("MTA_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=getattr(logging, _LOG_LEVELS.get(level, "WARNING")))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="run config JSON")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=None, help="override the output directory")
    common.add_argument(
        "--format", choices=("json", "csv", "table"), default="table", help="stdout summary format"
    )
    parser = argparse.ArgumentParser(
        prog="mta", description="RCT-calibrated multi-touch attribution pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.seed, args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientDataError as exc:
        print(f"InsufficientDataError: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT_DATA
    except MissingArtifactError as exc:
        print(f"MissingArtifactError: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except MtaError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
