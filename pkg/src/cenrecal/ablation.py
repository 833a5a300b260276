"""
Модуль абляции стратегий слияния.

Каждый вариант обучается на k сидах (base, base+1, ..., base+k-1) на
одних и тех же данных, выбранная модель оценивается на test_i и test_ii.
Итоговая таблица содержит среднее и выборочное стандартное отклонение
каждой метрики и падение точности test_i -> test_ii.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .config import RunConfig
from .data import SyntheticSplits
from .errors import ConfigError
from .model import MergeStrategy
from .report import DROP_FIELD, execute_run, write_json

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "precision_macro", "recall_macro", "f1_macro", "kappa_quadratic")
TEST_SPLITS = ("test_i", "test_ii")


def parse_variants(text: str) -> List[MergeStrategy]:
    """
    Разбирает список вариантов через запятую.

    Raises:
        ConfigError: Если вариант неизвестен или список пуст.
    """
    names = [name.strip() for name in text.split(",") if name.strip()]
    if not names:
        raise ConfigError("список вариантов пуст", field="variants")
    variants = []
    for name in names:
        try:
            variant = MergeStrategy(name)
        except ValueError as exc:
            known = ", ".join(strategy.value for strategy in MergeStrategy)
            raise ConfigError(
                f"неизвестный вариант {name!r}, допустимы: {known}", field="variants"
            ) from exc
        if variant not in variants:
            variants.append(variant)
    return variants


@dataclass(frozen=True)
class AblationJob:
    """Один запуск: вариант и сид."""

    variant: MergeStrategy
    seed: int
    config: RunConfig
    document: Dict[str, Any]
    splits: SyntheticSplits
    out_dir: Path


def _run_job(job: AblationJob) -> Tuple[str, int, Dict[str, Dict[str, Any]]]:
    model_config = job.config.seeded_model(job.seed).model_copy(update={"merge": job.variant})
    report = execute_run(
        job.document,
        model_config,
        job.config.schedule,
        job.config.train_config(job.seed),
        job.splits,
        job.out_dir / job.variant.value / f"seed-{job.seed}",
    )
    return job.variant.value, job.seed, {split: report.metrics[split] for split in TEST_SPLITS}


def _mean_sd(values: Sequence[float]) -> Dict[str, float]:
    array = np.asarray(values, dtype=np.float64)
    sd = float(np.std(array, ddof=1)) if array.size > 1 else 0.0
    return {"mean": float(np.mean(array)), "sd": sd}


def summarize(
    results: Dict[Tuple[str, int], Dict[str, Dict[str, Any]]],
    variants: Sequence[MergeStrategy],
    seeds: Sequence[int],
) -> List[Dict[str, Any]]:
    """
    Сводит результаты запусков в строки таблицы (по одной на вариант).

    Args:
        results: Метрики test_i/test_ii по ключу (вариант, сид).
        variants: Варианты в порядке строк.
        seeds: Сиды.

    Returns:
        List[Dict[str, Any]]: Строки с mean/sd каждой метрики и падением точности.
    """
    rows = []
    for variant in variants:
        runs = [results[(variant.value, seed)] for seed in seeds]
        row: Dict[str, Any] = {"variant": variant.value, "seeds": list(seeds)}
        for split in TEST_SPLITS:
            row[split] = {
                metric: _mean_sd([run[split][metric] for run in runs]) for metric in METRICS
            }
        row[DROP_FIELD] = _mean_sd(
            [run["test_i"]["accuracy"] - run["test_ii"]["accuracy"] for run in runs]
        )
        rows.append(row)
    return rows


def render_table(rows: Sequence[Dict[str, Any]]) -> str:
    """Текстовая таблица mean ± sd по вариантам (точность и падение в процентах)."""
    labels = [("accuracy", "Acc (%)"), ("precision_macro", "Precision"),
              ("recall_macro", "Recall"), ("f1_macro", "F1"), ("kappa_quadratic", "κ_w")]
    header = ["variant"]
    for split in TEST_SPLITS:
        header.extend(f"{split} {title}" for _, title in labels)
    header.append("drop (%)")

    def cell(stats: Dict[str, float], percent: bool) -> str:
        factor = 100.0 if percent else 1.0
        digits = 2 if percent else 4
        return f"{factor * stats['mean']:.{digits}f} ± {factor * stats['sd']:.{digits}f}"

    table = [header]
    for row in rows:
        cells = [row["variant"]]
        for split in TEST_SPLITS:
            cells.extend(cell(row[split][metric], metric == "accuracy") for metric, _ in labels)
        cells.append(cell(row[DROP_FIELD], True))
        table.append(cells)

    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    lines = [" | ".join(text.ljust(width) for text, width in zip(line, widths)) for line in table]
    lines.insert(1, "-+-".join("-" * width for width in widths))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def run_ablation(
    config: RunConfig,
    document: Dict[str, Any],
    splits: SyntheticSplits,
    variants: Sequence[MergeStrategy],
    n_seeds: int,
    out_dir: Union[str, Path],
    workers: int = 1,
) -> Dict[str, Any]:
    """
    Обучает все варианты на всех сидах и пишет ablation.json и ablation.txt.

    Запуски независимы и детерминированы, поэтому при workers > 1 они
    выполняются в пуле процессов, а результаты собираются по ключу
    (вариант, сид).

    Args:
        config: Конфигурация запуска (сид - базовый).
        document: Исходный документ конфигурации.
        splits: Данные, общие для всех запусков.
        variants: Стратегии слияния.
        n_seeds: Число сидов k >= 1.
        out_dir: Каталог результатов.
        workers: Число процессов.

    Returns:
        Dict[str, Any]: Документ таблицы абляции.

    Raises:
        ConfigError: Если k < 1 или список вариантов пуст.
    """
    if n_seeds < 1:
        raise ConfigError("число сидов должно быть >= 1", field="seeds")
    if not variants:
        raise ConfigError("список вариантов пуст", field="variants")
    target = Path(out_dir)
    seeds = [config.seed + index for index in range(n_seeds)]
    jobs = [
        AblationJob(variant, seed, config, document, splits, target)
        for variant in variants
        for seed in seeds
    ]
    logger.info(
        "Абляция: %d вариантов × %d сидов, процессов: %d", len(variants), n_seeds, workers
    )

    results: Dict[Tuple[str, int], Dict[str, Dict[str, Any]]] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for variant, seed, metrics in pool.map(_run_job, jobs):
                results[(variant, seed)] = metrics
    else:
        for job in jobs:
            variant, seed, metrics = _run_job(job)
            results[(variant, seed)] = metrics

    rows = summarize(results, variants, seeds)
    smallest = min(rows, key=lambda row: row[DROP_FIELD]["mean"])
    document_out = {
        "format_version": 1,
        "version": __version__,
        "config": document,
        "variants": [variant.value for variant in variants],
        "seeds": seeds,
        "rows": rows,
        "smallest_mean_drop": smallest["variant"],
    }
    write_json(document_out, target / "ablation.json")
    (target / "ablation.txt").write_text(render_table(rows), encoding="utf-8")
    logger.info(
        "Таблица абляции записана в %s; наименьшее падение: %s",
        target,
        smallest["variant"],
    )
    return document_out
