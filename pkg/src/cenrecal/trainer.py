"""
Модуль обучения и оценки.

Цикл эпохи связывает сеть и таблицу центроидов: все батчи эпохи читают
таблицу, зафиксированную в конце предыдущей эпохи, а отсоединенные
эмбеддинги накапливаются и становятся новыми центроидами только после
успешного завершения всех батчей. Модель выбирается по метрике на
валидации, оценка выполняется на замороженной копии таблицы.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .centroids import CentroidTable
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Batch, Dataset, batches
from .diffcore import Graph, backward
from .errors import EmptyInputError, FreezeViolationError, LabelError, ShapeError
from .metrics import ConfusionMatrix, MetricsReport, build_report, confusion
from .model import (
    EmbeddingBatch,
    ModelConfig,
    ModelParams,
    bind_params,
    init_params,
    model_forward,
    predict,
    predict_logits,
)
from .optim import AdamState, ScheduleConfig, adam_step, lr_at

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 256


class SelectionMetric(str, Enum):
    """Метрика валидации, по которой выбирается лучшая эпоха."""

    ACCURACY = "accuracy"
    F1_MACRO = "f1_macro"
    KAPPA_QUADRATIC = "kappa_quadratic"


class TrainConfig(BaseModel):
    """Параметры цикла обучения."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_size: int = Field(default=32, ge=1)
    selection_metric: SelectionMetric = SelectionMetric.ACCURACY
    seed: int = Field(default=0, ge=0)


def epoch_seed(seed: int, epoch: int) -> int:
    """Сид перемешивания эпохи, выведенный из сида запуска и номера эпохи."""
    sequence = np.random.SeedSequence(seed, spawn_key=(epoch,))
    return int(sequence.generate_state(1)[0])


@dataclass(frozen=True)
class EpochResult:
    """Итог одной эпохи обучения."""

    params: ModelParams
    optimizer: AdamState
    mean_loss: float
    batch_stamps: List[int]
    ms_per_batch: float


def _train_step(
    config: ModelConfig,
    params: ModelParams,
    optimizer: AdamState,
    centroids: np.ndarray,
    batch: Batch,
    lr: float,
) -> Tuple[ModelParams, AdamState, float, EmbeddingBatch]:
    graph = Graph()
    nodes = bind_params(graph, params)
    x = graph.constant(batch.features)
    centroid_node = graph.constant(centroids) if config.uses_cafe else None
    logits, embeddings = model_forward(graph, x, nodes, config, centroid_node)
    loss = graph.cross_entropy(logits, batch.labels)
    leaf_grads = backward(graph, loss)
    grads = {name: leaf_grads[node] for name, node in nodes.items()}
    new_params, new_optimizer = adam_step(params, grads, optimizer, lr)
    detached = EmbeddingBatch(graph.value(embeddings), tuple(batch.labels.tolist()))
    return new_params, new_optimizer, float(graph.value(loss)), detached


def run_epoch(
    config: ModelConfig,
    params: ModelParams,
    optimizer: AdamState,
    table: CentroidTable,
    train_batches: Sequence[Batch],
    lr: float,
) -> EpochResult:
    """
    Одна эпоха обучения.

    Для каждого батча: прямой проход с центроидами до эпохи как константой,
    перекрестная энтропия, обратный проход, шаг Adam, накопление
    отсоединенных эмбеддингов. После последнего батча таблица
    финализируется. Если батч падает, накопленное отбрасывается и
    центроиды не меняются.

    Args:
        config: Конфигурация модели.
        params: Параметры до эпохи.
        optimizer: Состояние Adam до эпохи.
        table: Таблица центроидов (изменяется на месте).
        train_batches: Батчи эпохи в порядке обработки.
        lr: Скорость обучения эпохи.

    Returns:
        EpochResult: Новые параметры, состояние оптимизатора и средние потери
            (взвешенные по размеру батча).

    Raises:
        FreezeViolationError: Если таблица заморожена.
        EmptyInputError: Если батчей нет.
    """
    if table.is_frozen():
        raise FreezeViolationError("Нельзя обучать с замороженной таблицей центроидов")
    if not train_batches:
        raise EmptyInputError("Нет обучающих батчей")

    total_loss = 0.0
    n_samples = 0
    stamps: List[int] = []
    started = time.perf_counter()
    try:
        for batch in train_batches:
            stamps.append(table.epoch_stamp)
            params, optimizer, loss, detached = _train_step(
                config, params, optimizer, table.centroids, batch, lr
            )
            table.accumulate(detached.embeddings, detached.labels)
            total_loss += loss * len(batch.labels)
            n_samples += len(batch.labels)
    except Exception:
        table.discard_epoch()
        raise
    elapsed_ms = 1000.0 * (time.perf_counter() - started)
    table.finalize_epoch()
    return EpochResult(
        params=params,
        optimizer=optimizer,
        mean_loss=total_loss / n_samples,
        batch_stamps=stamps,
        ms_per_batch=elapsed_ms / len(train_batches),
    )


@dataclass(frozen=True)
class EpochRecord:
    """Сводка эпохи для отчета."""

    epoch: int
    train_loss: float
    lr: float
    centroid_epoch_stamp: int
    val: MetricsReport

    def to_dict(self) -> Dict[str, Any]:
        """Документ эпохи."""
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "lr": self.lr,
            "centroid_epoch_stamp": self.centroid_epoch_stamp,
            "val": self.val.to_dict(),
        }


@dataclass
class TrainRecord:
    """История обучения, выбранная эпоха и сохраненные контрольные точки."""

    selection_metric: SelectionMetric
    epochs: List[EpochRecord] = field(default_factory=list)
    selected_epoch: int = -1
    checkpoints: List[str] = field(default_factory=list)
    train_ms_per_batch: float = 0.0
    best: Optional[Checkpoint] = field(default=None, repr=False)
    final: Optional[Checkpoint] = field(default=None, repr=False)

    @property
    def selected(self) -> EpochRecord:
        """Запись выбранной эпохи."""
        for record in self.epochs:
            if record.epoch == self.selected_epoch:
                return record
        raise EmptyInputError("Ни одна эпоха не была выбрана")

    def to_dict(self) -> Dict[str, Any]:
        """Документ истории обучения (без замеров времени)."""
        return {
            "selection_metric": self.selection_metric.value,
            "selected_epoch": self.selected_epoch,
            "selected_val_metric": self.selected.val.metric(self.selection_metric.value),
            "checkpoints": list(self.checkpoints),
            "epochs": [record.to_dict() for record in self.epochs],
        }


def _checkpoint_name(epoch: int) -> str:
    return f"epoch-{epoch:03d}.json"


def fit(
    model_config: ModelConfig,
    schedule: ScheduleConfig,
    train_config: TrainConfig,
    train: Dataset,
    val: Dataset,
    out_dir: Optional[Union[str, Path]] = None,
    resume: Optional[Checkpoint] = None,
) -> TrainRecord:
    """
    Обучает модель schedule.epochs эпох и выбирает лучшую по валидации.

    После каждой эпохи модель оценивается на валидации с замороженной
    копией только что обновленной таблицы. Эпоха выбирается при строгом
    улучшении метрики, поэтому при равенстве остается более ранняя.
    Если задан out_dir, в <out_dir>/checkpoints пишутся epoch-XXX.json
    при каждом улучшении, final.json и best.json (с замороженной таблицей).

    Args:
        model_config: Конфигурация модели.
        schedule: Расписание скорости обучения.
        train_config: Параметры цикла обучения.
        train: Обучающий сплит.
        val: Валидационный сплит.
        out_dir: Каталог для контрольных точек (None - не сохранять).
        resume: Состояние, с которого продолжить обучение.

    Returns:
        TrainRecord: История обучения.

    Raises:
        EmptyInputError: Если train или val пусты.
        ShapeError: Если размерность данных не равна d_in.
    """
    for dataset, name in ((train, "train"), (val, "val")):
        if len(dataset) == 0:
            raise EmptyInputError(f"Сплит {name} пуст")
        _check_dataset(model_config, dataset)

    if resume is None:
        params = init_params(model_config)
        optimizer = AdamState.zeros(params)
        table = CentroidTable(model_config.num_classes, model_config.embed_dim)
        start_epoch = 0
        seed = train_config.seed
    else:
        if resume.centroids.is_frozen():
            raise FreezeViolationError("Нельзя продолжить обучение с замороженной таблицей")
        params = resume.params
        optimizer = resume.optimizer
        table = resume.centroids.copy()
        start_epoch = resume.epoch
        seed = resume.rng_state.get("seed", train_config.seed)

    checkpoint_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    record = TrainRecord(selection_metric=train_config.selection_metric)
    metric_name = train_config.selection_metric.value
    best_score = -np.inf
    ms_total = 0.0
    n_epochs = 0

    for epoch in range(start_epoch, schedule.epochs):
        lr = lr_at(schedule, epoch)
        epoch_batches = batches(train, train_config.batch_size, seed=epoch_seed(seed, epoch))
        result = run_epoch(model_config, params, optimizer, table, epoch_batches, lr)
        params, optimizer = result.params, result.optimizer
        ms_total += result.ms_per_batch
        n_epochs += 1

        state = Checkpoint(
            config=model_config,
            params=params,
            centroids=table.copy(),
            optimizer=optimizer,
            schedule=schedule,
            epoch=epoch + 1,
            rng_state={"seed": seed, "next_epoch": epoch + 1},
        )
        val_report = evaluate(state, val, train_config.batch_size)
        record.epochs.append(
            EpochRecord(epoch, result.mean_loss, lr, table.epoch_stamp, val_report)
        )
        logger.info(
            "Эпоха %d/%d: loss=%.6f lr=%.3g val %s=%.4f",
            epoch + 1,
            schedule.epochs,
            result.mean_loss,
            lr,
            metric_name,
            val_report.metric(metric_name),
        )

        score = val_report.metric(metric_name)
        if score > best_score:
            best_score = score
            record.selected_epoch = epoch
            record.best = state.frozen()
            if checkpoint_dir is not None:
                save_checkpoint(state, checkpoint_dir / _checkpoint_name(epoch))
                record.checkpoints.append(f"checkpoints/{_checkpoint_name(epoch)}")
        record.final = state

    if record.final is None or record.best is None:
        raise EmptyInputError("Нет эпох для обучения: расписание уже завершено")
    if checkpoint_dir is not None:
        save_checkpoint(record.final, checkpoint_dir / "final.json")
        save_checkpoint(record.best, checkpoint_dir / "best.json")
        record.checkpoints.extend(["checkpoints/final.json", "checkpoints/best.json"])
        logger.info("Контрольные точки сохранены в %s", checkpoint_dir)
    record.train_ms_per_batch = ms_total / n_epochs
    logger.info(
        "Выбрана эпоха %d (%s=%.4f)", record.selected_epoch + 1, metric_name, best_score
    )
    return record


def _check_dataset(config: ModelConfig, dataset: Dataset) -> None:
    if dataset.d_in != config.d_in:
        raise ShapeError(
            f"Размерность данных {dataset.d_in} не равна d_in модели {config.d_in}"
        )
    if len(dataset) and int(dataset.labels.max()) >= config.num_classes:
        raise LabelError(
            f"Метка {int(dataset.labels.max())} вне диапазона [0, {config.num_classes})"
        )


class Evaluation(NamedTuple):
    """Отчет оценки и среднее время инференса на батч."""

    report: MetricsReport
    ms_per_batch: float


def _confusion_of(
    checkpoint: Checkpoint, chunk: Sequence[Batch], centroids: np.ndarray
) -> ConfusionMatrix:
    config = checkpoint.config
    matrix = ConfusionMatrix(np.zeros((config.num_classes, config.num_classes), dtype=np.int64))
    for batch in chunk:
        logits, _ = predict_logits(checkpoint.params, config, centroids, batch.features)
        matrix = matrix + confusion(predict(logits), batch.labels, config.num_classes)
    return matrix


def evaluate_timed(
    checkpoint: Union[Checkpoint, str, Path],
    dataset: Dataset,
    batch_size: int = EVAL_BATCH_SIZE,
    workers: int = 1,
) -> Evaluation:
    """
    Оценивает контрольную точку на наборе и замеряет время на батч.

    Таблица центроидов замораживается (в копии) на все время оценки,
    исходное состояние не меняется. Батчи можно обрабатывать в пуле
    потоков: матрицы ошибок складываются как целые числа, поэтому
    результат не зависит от числа потоков.

    Args:
        checkpoint: Контрольная точка или путь к ней.
        dataset: Оцениваемый набор.
        batch_size: Размер батча инференса.
        workers: Число потоков.

    Returns:
        Evaluation: Отчет и среднее время на батч в миллисекундах.

    Raises:
        ShapeError: Если размерность данных не равна d_in (до вычислений).
        EmptyInputError: Если набор пуст.
    """
    state = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    _check_dataset(state.config, dataset)
    if len(dataset) == 0:
        raise EmptyInputError("Нельзя оценить пустой набор")

    table = state.centroids.frozen_copy()
    centroids = table.centroids
    eval_batches = batches(dataset, batch_size, shuffle=False)
    n_workers = max(1, min(workers, len(eval_batches)))

    started = time.perf_counter()
    if n_workers == 1:
        matrix = _confusion_of(state, eval_batches, centroids)
    else:
        chunks = [eval_batches[i::n_workers] for i in range(n_workers)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            partial = list(pool.map(lambda chunk: _confusion_of(state, chunk, centroids), chunks))
        matrix = partial[0]
        for other in partial[1:]:
            matrix = matrix + other
    elapsed_ms = 1000.0 * (time.perf_counter() - started)
    return Evaluation(build_report(matrix), elapsed_ms / len(eval_batches))


def evaluate(
    checkpoint: Union[Checkpoint, str, Path],
    dataset: Dataset,
    batch_size: int = EVAL_BATCH_SIZE,
    workers: int = 1,
) -> MetricsReport:
    """
    Оценивает контрольную точку на наборе.

    Raises:
        ShapeError: Если размерность данных не равна d_in (до вычислений).
        EmptyInputError: Если набор пуст.
    """
    return evaluate_timed(checkpoint, dataset, batch_size, workers).report
