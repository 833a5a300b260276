"""
Модуль центроидов классов (Cup).

Накапливает отсоединенные от графа эмбеддинги по классам в течение эпохи,
в конце эпохи заменяет центроиды средними и поддерживает заморозку
таблицы на время инференса.
"""

import logging
import threading
from typing import Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .diffcore import Tensor
from .errors import FreezeViolationError, LabelError, ShapeError

logger = logging.getLogger(__name__)


class CentroidTable:
    """
    Таблица центроидов E^c размера M×D с состоянием накопления.

    До первой эпохи центроиды нулевые. В течение эпохи центроиды
    не меняются: accumulate() пишет только в суммы и счетчики,
    а finalize_epoch() заменяет центроиды средними.

    Потокобезопасна: все изменения выполняются под блокировкой.
    """

    def __init__(self, num_classes: int, embed_dim: int):
        """
        Инициализирует таблицу нулевыми центроидами.

        Args:
            num_classes: Количество классов M.
            embed_dim: Размерность эмбеддинга D.
        """
        if num_classes < 1 or embed_dim < 1:
            raise ShapeError(
                f"Некорректный размер таблицы центроидов {num_classes}×{embed_dim}"
            )
        self._num_classes = num_classes
        self._embed_dim = embed_dim
        self._centroids = np.zeros((num_classes, embed_dim))
        self._accum = np.zeros((num_classes, embed_dim))
        self._counts = np.zeros(num_classes, dtype=np.int64)
        self._last_counts = np.zeros(num_classes, dtype=np.int64)
        self._frozen = False
        self._epoch_stamp = 0
        self._lock = threading.Lock()  # Блокировка для потокобезопасности

    @classmethod
    def from_state(
        cls,
        centroids: npt.ArrayLike,
        accum: npt.ArrayLike,
        counts: Sequence[int],
        frozen: bool,
        epoch_stamp: int,
        last_counts: Optional[Sequence[int]] = None,
    ) -> "CentroidTable":
        """
        Восстанавливает таблицу из сохраненного состояния.

        Raises:
            ShapeError: Если формы массивов не согласованы.
        """
        centroid_array = np.array(centroids, dtype=np.float64)
        if centroid_array.ndim != 2:
            raise ShapeError(f"Центроиды должны быть матрицей, форма {centroid_array.shape}")
        table = cls(*centroid_array.shape)
        accum_array = np.array(accum, dtype=np.float64)
        count_array = np.array(counts, dtype=np.int64)
        if accum_array.shape != centroid_array.shape:
            raise ShapeError(
                f"Форма сумм {accum_array.shape} не совпадает с {centroid_array.shape}"
            )
        if count_array.shape != (centroid_array.shape[0],):
            raise ShapeError(f"Ожидалось {centroid_array.shape[0]} счетчиков")
        last_array = (
            np.zeros_like(count_array)
            if last_counts is None
            else np.array(last_counts, dtype=np.int64)
        )
        if last_array.shape != count_array.shape:
            raise ShapeError(f"Ожидалось {centroid_array.shape[0]} счетчиков прошлой эпохи")
        if np.any(count_array < 0) or np.any(last_array < 0) or epoch_stamp < 0:
            raise ShapeError("Счетчики и номер эпохи должны быть неотрицательными")
        table._centroids = centroid_array
        table._accum = accum_array
        table._counts = count_array
        table._last_counts = last_array
        table._frozen = bool(frozen)
        table._epoch_stamp = int(epoch_stamp)
        return table

    @property
    def num_classes(self) -> int:
        """Количество классов M."""
        return self._num_classes

    @property
    def embed_dim(self) -> int:
        """Размерность эмбеддинга D."""
        return self._embed_dim

    @property
    def centroids(self) -> Tensor:
        """Текущие центроиды E^c (копия только для чтения)."""
        with self._lock:
            return _read_only(self._centroids)

    @property
    def accum(self) -> Tensor:
        """Суммы эмбеддингов текущей эпохи (копия только для чтения)."""
        with self._lock:
            return _read_only(self._accum)

    @property
    def counts(self) -> npt.NDArray[np.int64]:
        """Количество накопленных образцов S_j по классам (копия)."""
        with self._lock:
            counts = self._counts.copy()
        counts.flags.writeable = False
        return counts

    @property
    def last_counts(self) -> npt.NDArray[np.int64]:
        """Счетчики S_j эпохи, по которой посчитаны текущие центроиды (копия)."""
        with self._lock:
            counts = self._last_counts.copy()
        counts.flags.writeable = False
        return counts

    @property
    def epoch_stamp(self) -> int:
        """Число завершенных эпох (увеличивается в finalize_epoch)."""
        return self._epoch_stamp

    def is_frozen(self) -> bool:
        """Заморожена ли таблица."""
        return self._frozen

    def freeze(self) -> None:
        """Замораживает таблицу: дальнейшие изменения становятся ошибкой."""
        with self._lock:
            self._frozen = True

    def accumulate(self, embeddings: npt.ArrayLike, labels: Iterable[int]) -> None:
        """
        Добавляет эмбеддинги батча к суммам их классов.

        Суммирование идет в порядке батча; центроиды не меняются.

        Args:
            embeddings: Отсоединенные эмбеддинги N_b×D.
            labels: Метки классов длины N_b.

        Raises:
            FreezeViolationError: Если таблица заморожена.
            LabelError: Если метка вне [0, M).
            ShapeError: Если ширина эмбеддингов не равна D.
        """
        self._check_not_frozen()
        values = np.array(embeddings, dtype=np.float64)
        targets = np.array(list(labels), dtype=np.int64)
        if values.size == 0 and targets.size == 0:
            return
        if values.ndim != 2 or values.shape[1] != self._embed_dim:
            raise ShapeError(
                f"Ожидались эмбеддинги ширины {self._embed_dim}, форма {values.shape}"
            )
        if targets.shape != (values.shape[0],):
            raise ShapeError(
                f"Число меток {targets.size} не равно числу эмбеддингов {values.shape[0]}"
            )
        if targets.min() < 0 or targets.max() >= self._num_classes:
            raise LabelError(f"Метка вне диапазона [0, {self._num_classes})")

        with self._lock:
            self._check_not_frozen()
            for row, label in zip(values, targets):
                self._accum[label] += row
                self._counts[label] += 1

    def finalize_epoch(self) -> None:
        """
        Заменяет центроиды средними за эпоху и сбрасывает накопление.

        Класс, не встретившийся за эпоху (S_j = 0), сохраняет прежний центроид.

        Raises:
            FreezeViolationError: Если таблица заморожена.
        """
        with self._lock:
            self._check_not_frozen()
            seen = self._counts > 0
            for j in np.flatnonzero(seen):
                self._centroids[j] = self._accum[j] / self._counts[j]
            missing = np.flatnonzero(~seen).tolist()
            self._last_counts = self._counts.copy()
            self._reset_unlocked()
            self._epoch_stamp += 1
        if missing:
            logger.debug("Классы без образцов за эпоху сохранили центроиды: %s", missing)

    def discard_epoch(self) -> None:
        """
        Отбрасывает накопленное за эпоху без обновления центроидов.

        Используется при прерывании эпохи из-за ошибки.
        """
        with self._lock:
            self._check_not_frozen()
            self._reset_unlocked()

    def frozen_copy(self) -> "CentroidTable":
        """Возвращает замороженную копию таблицы."""
        with self._lock:
            table = CentroidTable.from_state(
                self._centroids,
                self._accum,
                self._counts.tolist(),
                True,
                self._epoch_stamp,
                self._last_counts.tolist(),
            )
        return table

    def copy(self) -> "CentroidTable":
        """Возвращает независимую копию с тем же флагом заморозки."""
        with self._lock:
            return CentroidTable.from_state(
                self._centroids,
                self._accum,
                self._counts.tolist(),
                self._frozen,
                self._epoch_stamp,
                self._last_counts.tolist(),
            )

    def to_text(self, precision: Optional[int] = None) -> str:
        """
        Форматирует центроиды как текстовую таблицу (строка на класс).

        Args:
            precision: Число знаков после запятой; None - кратчайшая точная запись.

        Returns:
            str: Таблица с заголовком class, count (S_j последней эпохи), epoch_stamp, e0..e{D-1}.
        """
        header = ["class", "count", "epoch_stamp"] + [
            f"e{k}" for k in range(self._embed_dim)
        ]
        lines = ["\t".join(header)]
        with self._lock:
            for j in range(self._num_classes):
                if precision is None:
                    cells = [repr(float(v)) for v in self._centroids[j]]
                else:
                    cells = [f"{v:.{precision}f}" for v in self._centroids[j]]
                lines.append(
                    "\t".join(
                        [str(j), str(int(self._last_counts[j])), str(self._epoch_stamp)] + cells
                    )
                )
        return "\n".join(lines) + "\n"

    def _check_not_frozen(self) -> None:
        if self._frozen:
            raise FreezeViolationError("Таблица центроидов заморожена")

    def _reset_unlocked(self) -> None:
        """
        Обнуляет суммы и счетчики без блокировки.
        Должен вызываться только внутри методов, уже удерживающих _lock.
        """
        self._accum = np.zeros((self._num_classes, self._embed_dim))
        self._counts = np.zeros(self._num_classes, dtype=np.int64)


def _read_only(array: npt.NDArray[np.float64]) -> Tensor:
    result = array.copy()
    result.flags.writeable = False
    return result
