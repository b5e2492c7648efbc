# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import math
import torch
import pandas as pd
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from structattack.shared.errors import ShapeError, UndefinedMetricError

RATES = ("accuracy", "asr", "fr", "acr")


@dataclass(frozen=True)
class PredictionRecord:
    id: int  # Sample index within the evaluated dataset
    label: int  # Ground truth y
    clean: int  # Victim prediction on the benign image
    adv: int  # Victim prediction on the attacked (and defended) image


@dataclass
class MetricReport:
    n_total: int
    n_clean_correct: int
    n_clean_wrong: int
    n_adv_correct: int
    n_success: int  # initially correct, now wrong
    n_flipped: int  # prediction changed
    n_corrected: int  # initially wrong, now correct
    n_wrong_to_wrong: int  # initially wrong, now a different wrong class
    accuracy: float
    clean_accuracy: float
    fr: float
    asr: Optional[float] = None
    acr: Optional[float] = None
    undefined: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        known = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in known})


def _rate(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def compute_metrics(records: Sequence[PredictionRecord]) -> MetricReport:
    """
    Accuracy, ASR, FR and ACR over `records`.

    Accuracy is the attacked accuracy. ASR is taken over initially correct
    samples and ACR over initially wrong ones; an empty subset leaves the
    rate as None and names it in `undefined`.
    """
    records = list(records)
    if not records:
        raise UndefinedMetricError("Cannot compute metrics over an empty record list")

    n_total = len(records)
    correct = [r for r in records if r.clean == r.label]
    wrong = [r for r in records if r.clean != r.label]

    n_success = sum(r.adv != r.label for r in correct)
    n_corrected = sum(r.adv == r.label for r in wrong)
    n_wrong_to_wrong = sum(r.adv != r.label and r.adv != r.clean for r in wrong)
    n_flipped = sum(r.adv != r.clean for r in records)
    n_adv_correct = sum(r.adv == r.label for r in records)

    asr = _rate(n_success, len(correct))
    acr = _rate(n_corrected, len(wrong))
    undefined = [name for name, value in (("asr", asr), ("acr", acr)) if value is None]

    return MetricReport(
        n_total=n_total,
        n_clean_correct=len(correct),
        n_clean_wrong=len(wrong),
        n_adv_correct=n_adv_correct,
        n_success=n_success,
        n_flipped=n_flipped,
        n_corrected=n_corrected,
        n_wrong_to_wrong=n_wrong_to_wrong,
        accuracy=n_adv_correct / n_total,
        clean_accuracy=len(correct) / n_total,
        fr=n_flipped / n_total,
        asr=asr,
        acr=acr,
        undefined=undefined,
    )


def make_records(
    ids: Iterable[int], labels: Iterable[int], clean: Iterable[int], adv: Iterable[int]
) -> List[PredictionRecord]:
    return [
        PredictionRecord(int(i), int(y), int(c), int(a))
        for i, y, c, a in zip(ids, labels, clean, adv)
    ]


def aggregate(reports: Sequence[Tuple[str, MetricReport]]) -> pd.DataFrame:
    """
    One row per victim plus a `mean` row. The mean of each rate skips
    victims where that rate is undefined, and is NaN if none define it.
    """
    columns = list(RATES) + ["clean_accuracy"]
    table = pd.DataFrame(
        [[getattr(report, name) for name in columns] for _, report in reports],
        index=[victim for victim, _ in reports],
        columns=columns,
        dtype=float,
    )
    table.loc["mean"] = table.mean(axis=0, skipna=True)
    return table


@torch.no_grad()
def psnr(x: torch.Tensor, x_adv: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB of [0, 1] images, averaged over the batch."""
    if x.shape != x_adv.shape:
        raise ShapeError(f"psnr over mismatched shapes {tuple(x.shape)} vs {tuple(x_adv.shape)}")
    mse = (x.float() - x_adv.float()).pow(2).flatten(1).mean(dim=1)
    values = [math.inf if m == 0 else -10.0 * math.log10(m) for m in mse.tolist()]
    return sum(values) / len(values)
