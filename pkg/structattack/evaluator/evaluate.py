# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import time
import torch
import pandas as pd
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union
from loguru import logger

from structattack.attack.projector import PerturbationBudget, project
from structattack.data.dataset import DatasetHandle, make_loader
from structattack.evaluator.config import EvalConfig
from structattack.evaluator.defenses import DefenseSpec, defend_all
from structattack.evaluator.metrics import (
    MetricReport,
    PredictionRecord,
    aggregate,
    compute_metrics,
    make_records,
    psnr,
)
from structattack.models.generator import PerturbationGenerator
from structattack.models.registry import ModelEntry, configure_cache, load_registry
from structattack.models.surrogate import Classifier, load_classifier
from structattack.shared.errors import ConfigurationError, DataError, StructAttackError
from structattack.shared.utils import resolve_device
from structattack.trainer.state import load_generator


@dataclass
class EvaluationResult:
    """Per-victim reports at one test budget, plus victims that failed to run."""

    epsilon: float
    reports: List[Tuple[str, MetricReport]] = field(default_factory=list)
    records: Dict[str, List[PredictionRecord]] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)
    defenses: List[str] = field(default_factory=list)
    psnr: Dict[str, float] = field(default_factory=dict)  # mean dB per victim, inf when unperturbed

    def __iter__(self) -> Iterator[Tuple[str, MetricReport]]:
        return iter(self.reports)

    def __len__(self):
        return len(self.reports)

    def report(self, victim: str) -> MetricReport:
        return dict(self.reports)[victim]

    def table(self) -> pd.DataFrame:
        return aggregate(self.reports)


@dataclass
class SweepResult:
    results: Dict[float, EvaluationResult]
    table: pd.DataFrame  # attacked accuracy, victim x epsilon, with a mean row


@torch.no_grad()
def attack_batch(
    generator: PerturbationGenerator,
    x: torch.Tensor,
    eps_test: Union[PerturbationBudget, float],
) -> torch.Tensor:
    """Single generator pass, projected onto the test budget."""
    x_adv, _ = generator(x)
    return project(x, x_adv, eps_test)


def adversarial_input(
    generator: PerturbationGenerator,
    x: torch.Tensor,
    eps_test: Union[PerturbationBudget, float],
    defenses: Sequence[DefenseSpec] = (),
    rng: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    What the victim sees: the projected adversarial image with `defenses`
    applied in order. Returns (projected, defended); the victim normalizes
    the defended image itself.
    """
    projected = attack_batch(generator, x, eps_test)
    return projected, defend_all(projected, list(defenses), generator=rng)


def victim_class_count(
    victim_ids: Sequence[str], registry: Optional[Dict[str, ModelEntry]] = None
) -> Optional[int]:
    """Smallest class space among the registered victims; unregistered ids fail later, at load."""
    registry = registry if registry is not None else load_registry()
    counts = [registry[v].num_classes for v in victim_ids if v in registry]
    return min(counts) if counts else None


def _defense_rng(seed: int, batch_index: int) -> torch.Generator:
    rng = torch.Generator()
    rng.manual_seed(seed * 1_000_003 + batch_index)
    return rng


def evaluate_victim(
    victim: Classifier,
    generator: PerturbationGenerator,
    loader,
    epsilons: Sequence[float],
    defenses: Sequence[DefenseSpec] = (),
    seed: int = 0,
    device: Union[str, torch.device] = "cpu",
) -> Dict[float, Tuple[List[PredictionRecord], float]]:
    """
    Clean predictions once, then attacked predictions at every budget.
    Returns {epsilon: (records, psnr)}. Randomized defenses draw from a
    generator seeded by (seed, batch index), so every victim and budget sees
    the same randomness.
    """
    ids, labels, clean = [], [], []
    adv = {eps: [] for eps in epsilons}
    psnr_sums = {eps: 0.0 for eps in epsilons}

    for batch_index, (x, y, index) in enumerate(loader):
        x = x.to(device)
        ids.extend(index.tolist())
        labels.extend(y.tolist())
        clean.extend(victim.predict(x).tolist())
        for eps in epsilons:
            projected, defended = adversarial_input(
                generator, x, eps, defenses, rng=_defense_rng(seed, batch_index)
            )
            adv[eps].extend(victim.predict(defended).tolist())
            psnr_sums[eps] += psnr(x, projected) * x.shape[0]

    return {
        eps: (make_records(ids, labels, clean, adv[eps]), psnr_sums[eps] / max(len(ids), 1))
        for eps in epsilons
    }


def _load_inputs(cfg: EvalConfig, data: DatasetHandle, generator):
    if not data.labeled:
        raise DataError(f"Evaluation needs labeled images; {data.root} has no class folders or label map")
    device = resolve_device(cfg.device)
    if generator is None:
        generator = load_generator(cfg.checkpoint, branch=cfg.branch, device=device)
    generator = generator.to(device).eval()
    loader = make_loader(
        data,
        batch_size=cfg.batch_size,
        shuffle=False,
        num_workers=cfg.num_workers,
        limit=cfg.subset_size,
    )
    return device, generator, loader


def run_victims(
    cfg: EvalConfig,
    data: DatasetHandle,
    generator: Optional[PerturbationGenerator] = None,
    victims: Optional[Dict[str, Classifier]] = None,
) -> Dict[float, EvaluationResult]:
    """
    Evaluate every victim at every budget in `cfg.epsilon_test`. Victims
    that fail to load or run are logged, recorded in `errors` and skipped.
    `victims` supplies already-built classifiers by id.
    """
    cfg.validate()
    device, generator, loader = _load_inputs(cfg, data, generator)
    configure_cache()
    registry = load_registry(cfg.registry)
    defenses = [str(d) for d in cfg.defenses]
    results = {eps: EvaluationResult(eps, defenses=defenses) for eps in cfg.epsilon_test}

    for victim_id in cfg.victims:
        start = time.time()
        try:
            if victims is not None and victim_id in victims:
                victim = victims[victim_id].to(device)
            else:
                victim = load_classifier(victim_id, registry, device=device, pretrained=cfg.pretrained)
            outcome = evaluate_victim(
                victim, generator, loader, cfg.epsilon_test, cfg.defenses, cfg.seed, device
            )
        except (StructAttackError, RuntimeError, OSError) as e:
            logger.warning(f"Skipping victim '{victim_id}': {e}")
            for result in results.values():
                result.errors[victim_id] = str(e)
            continue

        for eps, (records, mean_psnr) in outcome.items():
            report = compute_metrics(records)
            results[eps].reports.append((victim_id, report))
            results[eps].psnr[victim_id] = mean_psnr
            if cfg.dump_records:
                results[eps].records[victim_id] = records
            logger.info(
                f"{victim_id} eps={eps:g}: acc={report.accuracy:.4f} asr={report.asr} "
                f"fr={report.fr:.4f} acr={report.acr}"
            )
        logger.debug(f"{victim_id} evaluated in {time.time() - start:.1f}s")
        del victim
        if device.type == "cuda":
            torch.cuda.empty_cache()

    return results


def evaluate(
    cfg: EvalConfig,
    data: DatasetHandle,
    generator: Optional[PerturbationGenerator] = None,
    victims: Optional[Dict[str, Classifier]] = None,
) -> EvaluationResult:
    """Evaluate at the first (usually only) budget of `cfg.epsilon_test`."""
    if cfg.is_sweep:
        logger.warning(
            f"evaluate() uses only eps={cfg.epsilon_test[0]:g}; use epsilon_sweep for {cfg.epsilon_test}"
        )
        cfg = replace(cfg, epsilon_test=cfg.epsilon_test[:1])
    return run_victims(cfg, data, generator, victims)[cfg.epsilon_test[0]]


def sweep_table(results: Dict[float, EvaluationResult]) -> pd.DataFrame:
    columns = {}
    for eps, result in sorted(results.items()):
        columns[eps] = {victim: report.accuracy for victim, report in result.reports}
    table = pd.DataFrame(columns, dtype=float)
    table.columns.name = "epsilon"
    table.loc["mean"] = table.mean(axis=0, skipna=True)
    return table


def epsilon_sweep(
    cfg: EvalConfig,
    data: DatasetHandle,
    eps_list: Optional[Sequence[float]] = None,
    generator: Optional[PerturbationGenerator] = None,
    victims: Optional[Dict[str, Classifier]] = None,
) -> SweepResult:
    """Attacked accuracy of every victim at every budget in `eps_list`."""
    if eps_list is not None:
        cfg = replace(cfg, epsilon_test=tuple(float(e) for e in eps_list))
    results = run_victims(cfg, data, generator, victims)
    return SweepResult(results=results, table=sweep_table(results))


@dataclass
class SeedTrials:
    results: Dict[int, EvaluationResult]
    table: pd.DataFrame  # rows: victims and mean; columns: <rate>_mean, <rate>_std over seeds


def seed_table(results: Dict[int, EvaluationResult]) -> pd.DataFrame:
    """Mean and sample std over seeds of every per-victim rate of `aggregate`."""
    stacked = pd.concat(
        {seed: result.table() for seed, result in sorted(results.items())}, names=["seed", "victim"]
    )
    grouped = stacked.groupby(level="victim", sort=False)
    means, stds = grouped.mean(), grouped.std(ddof=1)
    columns = {}
    for rate in means.columns:
        columns[f"{rate}_mean"] = means[rate]
        columns[f"{rate}_std"] = stds[rate]
    return pd.DataFrame(columns)


def seed_trials(
    cfg: EvalConfig,
    data: DatasetHandle,
    seeds: Sequence[int],
    generator: Optional[PerturbationGenerator] = None,
    victims: Optional[Dict[str, Classifier]] = None,
) -> SeedTrials:
    """
    Repeat the single-budget evaluation once per seed of the randomized
    defenses and summarize each rate as mean and std over the trials.
    """
    if not seeds:
        raise ConfigurationError("No seeds given for the seed trials")
    if cfg.is_sweep:
        raise ConfigurationError("Seed trials need a single test budget, not an epsilon sweep")
    results = {}
    for seed in seeds:
        logger.info(f"Seed trial {seed}")
        results[int(seed)] = evaluate(replace(cfg, seed=int(seed)), data, generator, victims)
    return SeedTrials(results=results, table=seed_table(results))
