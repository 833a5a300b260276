"""
Модуль отчета о запуске.

Отчет фиксирует все, что нужно для воспроизведения числа в нем:
конфигурацию (как она записана в файле), сид, версию пакета, историю
обучения и метрики выбранной модели на val, test_i и test_ii.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from . import __version__
from .data import SyntheticSplits
from .errors import EmptyInputError
from .model import ModelConfig, count_flops, count_params
from .optim import ScheduleConfig
from .trainer import TrainConfig, TrainRecord, evaluate_timed, fit

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
DROP_FIELD = "drop_testI_to_testII"


def write_json(document: Mapping[str, Any], path: Union[str, Path]) -> Path:
    """Записывает документ JSON с фиксированным форматированием."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(document, indent=2, ensure_ascii=False) + "\n"
    target.write_text(text, encoding="utf-8")
    return target


@dataclass(frozen=True)
class RunReport:
    """Отчет об одном запуске обучения с оценкой выбранной модели."""

    config: Dict[str, Any]
    seed: int
    merge: str
    record: TrainRecord
    metrics: Dict[str, Dict[str, Any]]
    params: int
    flops_per_sample: int
    timings: Optional[Dict[str, float]] = None

    @property
    def drop(self) -> float:
        """Падение точности test_i -> test_ii."""
        return float(self.metrics["test_i"]["accuracy"] - self.metrics["test_ii"]["accuracy"])

    def to_dict(self) -> Dict[str, Any]:
        """Документ отчета."""
        document: Dict[str, Any] = {
            "format_version": REPORT_FORMAT_VERSION,
            "version": __version__,
            "seed": self.seed,
            "merge": self.merge,
            "config": self.config,
            "model": {"params": self.params, "flops_per_sample": self.flops_per_sample},
            "train": self.record.to_dict(),
            "metrics": self.metrics,
            DROP_FIELD: self.drop,
        }
        if self.timings is not None:
            document["timings"] = self.timings
        return document


def execute_run(
    config_document: Dict[str, Any],
    model_config: ModelConfig,
    schedule: ScheduleConfig,
    train_config: TrainConfig,
    splits: SyntheticSplits,
    out_dir: Union[str, Path],
    record_timings: bool = False,
) -> RunReport:
    """
    Обучает модель, оценивает выбранную эпоху и пишет report.json.

    Args:
        config_document: Конфигурация в том виде, в каком она прочитана.
        model_config: Конфигурация модели (с сидом запуска).
        schedule: Расписание.
        train_config: Параметры цикла обучения.
        splits: Данные.
        out_dir: Каталог запуска.
        record_timings: Включать ли в отчет замеры времени.

    Returns:
        RunReport: Отчет запуска.
    """
    target = Path(out_dir)
    record = fit(model_config, schedule, train_config, splits.train, splits.val, out_dir=target)
    best = record.best
    if best is None:
        raise EmptyInputError("Обучение не выбрало ни одной эпохи")
    metrics: Dict[str, Dict[str, Any]] = {"val": record.selected.val.to_dict()}
    inference_ms = []
    for split in ("test_i", "test_ii"):
        result = evaluate_timed(best, getattr(splits, split), train_config.batch_size)
        metrics[split] = result.report.to_dict()
        inference_ms.append(result.ms_per_batch)

    timings = None
    if record_timings:
        timings = {
            "train_ms_per_batch": record.train_ms_per_batch,
            "inference_ms_per_batch": sum(inference_ms) / len(inference_ms),
        }
    report = RunReport(
        config=config_document,
        seed=train_config.seed,
        merge=model_config.merge.value,
        record=record,
        metrics=metrics,
        params=count_params(model_config),
        flops_per_sample=count_flops(model_config),
        timings=timings,
    )
    write_json(report.to_dict(), target / "report.json")
    logger.info(
        "Отчет записан: %s (test_i acc=%.4f, test_ii acc=%.4f)",
        target / "report.json",
        metrics["test_i"]["accuracy"],
        metrics["test_ii"]["accuracy"],
    )
    return report
