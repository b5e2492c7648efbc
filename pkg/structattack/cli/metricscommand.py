# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import glob
import json
import argparse
from munch import Munch
from loguru import logger
from rich.console import Console

from structattack.evaluator.metrics import aggregate, compute_metrics
from structattack.evaluator.report import read_records, render_table
from structattack.shared.config import require
from structattack.shared.errors import DataError


def collect_record_files(paths) -> list:
    files = []
    for path in paths:
        path = os.path.expanduser(path)
        if os.path.isdir(path):
            files.extend(sorted(glob.glob(os.path.join(path, "*.csv"))))
        else:
            files.append(path)
    if not files:
        raise DataError(f"No record dumps found in {paths}")
    return files


class MetricsCommand:
    """
    Recompute metric reports from per-record dumps, without any model.

    Example usage:
    >>> structattack metrics --records out/records/ --out recomputed.json
    """

    @staticmethod
    def run(cli):
        config = cli.config
        reports = []
        for path in collect_record_files(config.metrics.records):
            victim = os.path.splitext(os.path.basename(path))[0]
            reports.append((victim, compute_metrics(read_records(path))))

        Console().print(render_table(aggregate(reports), title="recomputed metrics"))

        if config.metrics.out:
            out = os.path.expanduser(config.metrics.out)
            os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
            with open(out, "w") as f:
                json.dump({victim: report.to_dict() for victim, report in reports}, f, indent=2)
            logger.success(f"Wrote recomputed metrics to {out}")

    @staticmethod
    def check_config(config: Munch):
        require(config, "metrics.records")
        if isinstance(config.metrics.records, str):
            config.metrics.records = [config.metrics.records]

    @staticmethod
    def add_args(parser: argparse._SubParsersAction):
        metrics_parser = parser.add_parser(
            "metrics", aliases=["m"], help="""Recompute metrics from per-record CSV dumps."""
        )
        metrics_parser.add_argument("--config", type=str, default=None, help="YAML config file.")
        metrics_parser.add_argument(
            "--records", "--metrics.records", dest="metrics.records", nargs="+", default=None,
            help="Record CSV files or directories of them (columns id, y, clean, adv).",
        )
        metrics_parser.add_argument(
            "--out", "--metrics.out", dest="metrics.out", type=str, default=None,
            help="Optional JSON file for the recomputed reports.",
        )
