"""
Модуль контрольных точек.

Контрольная точка - один самоописывающий JSON-документ: версия формата,
конфигурация модели, именованные массивы параметров с формами, таблица
центроидов, моменты Adam, расписание и состояние генератора. Числа
записываются кратчайшей точной десятичной записью, поэтому сохранение
и загрузка восстанавливают каждый скаляр бит в бит.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .centroids import CentroidTable
from .diffcore import Tensor, as_tensor
from .errors import (
    CenrecalError,
    CheckpointError,
    CheckpointNotFoundError,
    CheckpointShapeError,
    CheckpointVersionError,
)
from .model import ModelConfig, ModelParams, param_shapes
from .optim import AdamState, ScheduleConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    """
    Полное состояние обучения после завершенной эпохи.

    epoch - число завершенных эпох; rng_state - сид запуска и номер
    следующей эпохи, из которых выводится порядок перемешивания.
    """

    config: ModelConfig
    params: ModelParams
    centroids: CentroidTable
    optimizer: AdamState
    schedule: ScheduleConfig
    epoch: int
    rng_state: Dict[str, int]

    def frozen(self) -> "Checkpoint":
        """Копия с замороженной таблицей центроидов."""
        return replace(self, centroids=self.centroids.frozen_copy())


def _encode_array(array: Tensor) -> Dict[str, Any]:
    return {"shape": list(array.shape), "data": array.tolist()}


def _decode_array(
    document: Any, name: str, expected: Optional[Tuple[int, ...]] = None
) -> Tensor:
    if not isinstance(document, dict) or set(document) != {"shape", "data"}:
        raise CheckpointError(f"Массив {name} записан некорректно")
    shape = tuple(document["shape"])
    if expected is not None and shape != expected:
        raise CheckpointShapeError(
            f"{name}: форма {shape} не соответствует конфигурации {expected}"
        )
    try:
        array = np.array(document["data"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CheckpointShapeError(f"{name}: данные не образуют матрицу") from exc
    if array.shape != shape:
        raise CheckpointShapeError(
            f"{name}: заявлена форма {shape}, в данных {array.shape}"
        )
    try:
        return as_tensor(array)
    except CenrecalError as exc:
        raise CheckpointError(f"{name}: нечисловые значения") from exc


def checkpoint_to_dict(checkpoint: Checkpoint) -> Dict[str, Any]:
    """Документ контрольной точки с фиксированным набором полей."""
    table = checkpoint.centroids
    optimizer = checkpoint.optimizer
    return {
        "format_version": FORMAT_VERSION,
        "config": checkpoint.config.model_dump(mode="json"),
        "params": {
            name: _encode_array(checkpoint.params[name]) for name in checkpoint.params
        },
        "centroids": {
            "centroids": _encode_array(table.centroids),
            "accum": _encode_array(table.accum),
            "counts": table.counts.tolist(),
            "last_counts": table.last_counts.tolist(),
            "frozen": table.is_frozen(),
            "epoch_stamp": table.epoch_stamp,
        },
        "optimizer": {
            "t": optimizer.t,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "m": {name: _encode_array(optimizer.m[name]) for name in checkpoint.params},
            "v": {name: _encode_array(optimizer.v[name]) for name in checkpoint.params},
        },
        "schedule": checkpoint.schedule.model_dump(mode="json"),
        "epoch": checkpoint.epoch,
        "rng_state": dict(checkpoint.rng_state),
    }


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """
    Записывает контрольную точку атомарно (через временный файл).

    Args:
        checkpoint: Сохраняемое состояние.
        path: Путь к файлу.

    Returns:
        Path: Путь к записанному файлу.

    Raises:
        CheckpointError: Если файл не удалось записать.
    """
    target = Path(path)
    text = json.dumps(checkpoint_to_dict(checkpoint), indent=1) + "\n"
    temporary = target.with_name(target.name + ".tmp")
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        temporary.write_text(text, encoding="utf-8")
        os.replace(temporary, target)
    except OSError as exc:
        raise CheckpointError(
            f"Не удалось записать контрольную точку {target}", technical_details=str(exc)
        ) from exc
    logger.debug("Контрольная точка сохранена: %s", target)
    return target


def _parse_params(document: Mapping[str, Any], config: ModelConfig, section: str) -> Dict[str, Tensor]:
    expected = param_shapes(config)
    if not isinstance(document, dict):
        raise CheckpointError(f"Раздел {section} записан некорректно")
    missing = [name for name in expected if name not in document]
    extra = [name for name in document if name not in expected]
    if missing or extra:
        raise CheckpointShapeError(
            f"Набор массивов {section} не соответствует конфигурации",
            technical_details=f"отсутствуют: {missing}; лишние: {extra}",
        )
    return {
        name: _decode_array(document[name], f"{section}.{name}", shape)
        for name, shape in expected.items()
    }


def _strict_int(value: Any, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CheckpointError(f"{field}: ожидалось целое число, получено {value!r}")
    return value


def _strict_float(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CheckpointError(f"{field}: ожидалось число, получено {value!r}")
    return float(value)


def _strict_bool(value: Any, field: str) -> bool:
    if not isinstance(value, bool):
        raise CheckpointError(f"{field}: ожидалось true или false, получено {value!r}")
    return value


def checkpoint_from_dict(document: Any) -> Checkpoint:
    """
    Восстанавливает контрольную точку из документа.

    Документ проверяется целиком до создания объектов состояния.

    Raises:
        CheckpointVersionError: Если версия формата не поддерживается.
        CheckpointShapeError: Если формы массивов не соответствуют конфигурации.
        CheckpointError: Если документ поврежден.
    """
    if not isinstance(document, dict):
        raise CheckpointError("Контрольная точка должна быть JSON-объектом")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Неподдерживаемая версия формата {version!r}, ожидалась {FORMAT_VERSION}"
        )
    try:
        config = ModelConfig.model_validate(document["config"])
        schedule = ScheduleConfig.model_validate(document["schedule"])
        params = _parse_params(document["params"], config, "params")

        table_doc = document["centroids"]
        table_shape = (config.num_classes, config.embed_dim)
        centroids = _decode_array(table_doc["centroids"], "centroids", table_shape)
        accum = _decode_array(table_doc["accum"], "accum", table_shape)
        counts = [_strict_int(c, "centroids.counts") for c in table_doc["counts"]]
        last_counts = [
            _strict_int(c, "centroids.last_counts") for c in table_doc["last_counts"]
        ]
        if len(counts) != config.num_classes or len(last_counts) != config.num_classes:
            raise CheckpointShapeError(f"Ожидалось {config.num_classes} счетчиков центроидов")

        optimizer_doc = document["optimizer"]
        moments_m = _parse_params(optimizer_doc["m"], config, "optimizer.m")
        moments_v = _parse_params(optimizer_doc["v"], config, "optimizer.v")
        optimizer = AdamState(
            m={name: np.array(value) for name, value in moments_m.items()},
            v={name: np.array(value) for name, value in moments_v.items()},
            t=_strict_int(optimizer_doc["t"], "optimizer.t"),
            beta1=_strict_float(optimizer_doc["beta1"], "optimizer.beta1"),
            beta2=_strict_float(optimizer_doc["beta2"], "optimizer.beta2"),
            eps=_strict_float(optimizer_doc["eps"], "optimizer.eps"),
        )
        epoch = _strict_int(document["epoch"], "epoch")
        rng_state = {
            str(k): _strict_int(v, f"rng_state.{k}") for k, v in document["rng_state"].items()
        }
        table = CentroidTable.from_state(
            centroids,
            accum,
            counts,
            _strict_bool(table_doc["frozen"], "centroids.frozen"),
            _strict_int(table_doc["epoch_stamp"], "centroids.epoch_stamp"),
            last_counts,
        )
    except CheckpointError:
        raise
    except ValidationError as exc:
        raise CheckpointError(
            "Некорректная конфигурация в контрольной точке", technical_details=str(exc)
        ) from exc
    except CenrecalError as exc:
        raise CheckpointShapeError(exc.message, technical_details=exc.technical_details) from exc
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CheckpointError(
            "Поврежденный документ контрольной точки", technical_details=repr(exc)
        ) from exc
    if epoch < 0 or optimizer.t < 0:
        raise CheckpointError("Отрицательный номер эпохи или шага оптимизатора")

    return Checkpoint(
        config=config,
        params=ModelParams(params),
        centroids=table,
        optimizer=optimizer,
        schedule=schedule,
        epoch=epoch,
        rng_state=rng_state,
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Загружает контрольную точку из файла.

    Raises:
        CheckpointNotFoundError: Если файла нет.
        CheckpointVersionError: Если версия формата не поддерживается.
        CheckpointShapeError: Если формы массивов не соответствуют конфигурации.
        CheckpointError: Если файл не читается или поврежден.
    """
    source = Path(path)
    if not source.is_file():
        raise CheckpointNotFoundError(str(source))
    try:
        document = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(
            f"Не удалось прочитать контрольную точку {source}", technical_details=str(exc)
        ) from exc
    return checkpoint_from_dict(document)


def state_checksum(checkpoint: Checkpoint) -> str:
    """
    SHA-256 по параметрам и таблице центроидов.

    В хэш входят имена, формы и байты float64 каждого массива, счетчики,
    номер эпохи таблицы и флаг заморозки.
    """
    digest = hashlib.sha256()

    def feed(name: str, array: np.ndarray) -> None:
        contiguous = np.ascontiguousarray(array)
        digest.update(name.encode("utf-8"))
        digest.update(repr(contiguous.shape).encode("ascii"))
        digest.update(contiguous.tobytes())

    for name in checkpoint.params:
        feed(name, checkpoint.params[name])
    table = checkpoint.centroids
    feed("centroids", table.centroids)
    feed("accum", table.accum)
    feed("counts", table.counts)
    feed("last_counts", table.last_counts)
    digest.update(f"{table.epoch_stamp}:{table.is_frozen()}".encode("ascii"))
    return digest.hexdigest()
