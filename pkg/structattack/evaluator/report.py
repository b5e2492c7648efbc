# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import io
import json
import math
import pandas as pd
from typing import Dict, List, Optional
from loguru import logger
from rich.console import Console
from rich.table import Table

from structattack.evaluator.metrics import MetricReport, PredictionRecord
from structattack.shared.errors import DataError

RECORD_COLUMNS = ["id", "y", "clean", "adv"]


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    if isinstance(value, float):
        return f"{100 * value:.2f}"
    return str(value)


def render_table(table: pd.DataFrame, title: Optional[str] = None) -> str:
    """Aligned text rendering of a victim table (rates shown in percent)."""
    rich_table = Table(show_header=True, header_style="bold magenta", title=title)
    rich_table.add_column("Victim", style="dim")
    for column in table.columns:
        rich_table.add_column(str(column), justify="right")
    for victim, row in table.iterrows():
        rich_table.add_row(str(victim), *[_fmt(v) for v in row.tolist()])

    console = Console(file=io.StringIO(), width=200, color_system=None)
    console.print(rich_table)
    return console.file.getvalue()


def write_records(records: List[PredictionRecord], path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame = pd.DataFrame(
        [(r.id, r.label, r.clean, r.adv) for r in records], columns=RECORD_COLUMNS
    )
    frame.to_csv(path, index=False)
    return path


def read_records(path: str) -> List[PredictionRecord]:
    if not os.path.isfile(path):
        raise DataError(f"Record dump does not exist: {path}")
    frame = pd.read_csv(path)
    missing = set(RECORD_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path} lacks columns {sorted(missing)}")
    return [
        PredictionRecord(int(row.id), int(row.y), int(row.clean), int(row.adv))
        for row in frame.itertuples(index=False)
    ]


def finite_or_none(value: Optional[float]) -> Optional[float]:
    """JSON has no infinity; an unperturbed image set (infinite PSNR) is written as null."""
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def victim_document(victim: str, report: MetricReport, psnr: Optional[float] = None, **context) -> dict:
    return {"victim": victim, **context, "metrics": report.to_dict(), "psnr": finite_or_none(psnr)}


def write_reports(result, out_dir: str, config: Optional[dict] = None) -> Dict[str, str]:
    """
    Write one JSON document per victim, `summary.json`, `table.txt` and,
    when records were kept, `records/<victim>.csv`. Returns written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    context = {"epsilon": result.epsilon, "defenses": list(result.defenses)}
    paths = {}

    for victim, report in result.reports:
        path = os.path.join(out_dir, f"{victim}.json")
        with open(path, "w") as f:
            document = victim_document(victim, report, result.psnr.get(victim), **context)
            json.dump(document, f, indent=2, allow_nan=False)
        paths[victim] = path

    for victim, records in result.records.items():
        paths[f"records/{victim}"] = write_records(
            records, os.path.join(out_dir, "records", f"{victim}.csv")
        )

    table = result.table()
    summary = {
        **context,
        "config": config or {},
        "victims": {victim: report.to_dict() for victim, report in result.reports},
        "mean": {k: (None if pd.isna(v) else float(v)) for k, v in table.loc["mean"].items()}
        if len(result.reports)
        else {},
        "psnr": {victim: finite_or_none(value) for victim, value in result.psnr.items()},
        "errors": dict(result.errors),
    }
    paths["summary"] = os.path.join(out_dir, "summary.json")
    with open(paths["summary"], "w") as f:
        json.dump(summary, f, indent=2, allow_nan=False)

    paths["table"] = os.path.join(out_dir, "table.txt")
    with open(paths["table"], "w") as f:
        f.write(render_table(table, title=f"eps={result.epsilon:g}"))
        for victim, error in result.errors.items():
            f.write(f"skipped {victim}: {error}\n")

    logger.success(f"Wrote reports for {len(result.reports)} victims to {out_dir}")
    return paths


def write_sweep(sweep, out_dir: str, config: Optional[dict] = None) -> Dict[str, str]:
    """Per-budget report folders `eps_<e>/` plus the accuracy sweep table."""
    paths = {}
    for eps, result in sorted(sweep.results.items()):
        written = write_reports(result, os.path.join(out_dir, f"eps_{eps:g}"), config)
        paths.update({f"eps_{eps:g}/{k}": v for k, v in written.items()})
    table = sweep.table
    paths["sweep"] = os.path.join(out_dir, "sweep.json")
    with open(paths["sweep"], "w") as f:
        json.dump(
            {
                "epsilons": [float(e) for e in table.columns],
                "accuracy": {
                    str(victim): [None if pd.isna(v) else float(v) for v in row.tolist()]
                    for victim, row in table.iterrows()
                },
            },
            f,
            indent=2,
        )
    paths["sweep_table"] = os.path.join(out_dir, "sweep.txt")
    with open(paths["sweep_table"], "w") as f:
        f.write(render_table(table, title="attacked accuracy by epsilon"))
    logger.success(f"Wrote epsilon sweep to {out_dir}")
    return paths


def load_report(path: str) -> MetricReport:
    with open(path, "r") as f:
        document = json.load(f)
    return MetricReport.from_dict(document.get("metrics", document))


def write_seed_trials(trials, out_dir: str, config: Optional[dict] = None) -> Dict[str, str]:
    """Per-seed report folders `seed_<s>/` plus the mean/std table over seeds."""
    paths = {}
    for seed, result in sorted(trials.results.items()):
        written = write_reports(result, os.path.join(out_dir, f"seed_{seed}"), config)
        paths.update({f"seed_{seed}/{k}": v for k, v in written.items()})
    table = trials.table
    paths["seeds"] = os.path.join(out_dir, "seeds.json")
    with open(paths["seeds"], "w") as f:
        json.dump(
            {
                "seeds": sorted(int(s) for s in trials.results),
                "table": {
                    str(victim): {k: finite_or_none(v) for k, v in row.items()}
                    for victim, row in table.iterrows()
                },
            },
            f,
            indent=2,
            allow_nan=False,
        )
    paths["seeds_table"] = os.path.join(out_dir, "seeds.txt")
    with open(paths["seeds_table"], "w") as f:
        f.write(render_table(table, title=f"mean and std over {len(trials.results)} seeds"))
    logger.success(f"Wrote seed trials to {out_dir}")
    return paths
