"""
Модуль метрик классификации.

Матрица ошибок и производные от нее метрики: точность, макро-усредненные
precision/recall/F1 и квадратично взвешенная каппа. Все функции чистые.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
import numpy.typing as npt

from .errors import EmptyInputError, LabelError, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Матрица ошибок O: O[t][p] - число образцов класса t, предсказанных как p."""

    counts: npt.NDArray[np.int64]

    @property
    def num_classes(self) -> int:
        """Количество классов M."""
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        """Общее число образцов."""
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ShapeError("Матрицы ошибок разного размера")
        return ConfusionMatrix(self.counts + other.counts)

    def to_list(self) -> List[List[int]]:
        """Матрица как вложенный список."""
        return self.counts.tolist()


def confusion(
    preds: Sequence[int], labels: Sequence[int], num_classes: int
) -> ConfusionMatrix:
    """
    Строит матрицу ошибок.

    Args:
        preds: Предсказанные классы.
        labels: Истинные классы.
        num_classes: Количество классов M.

    Returns:
        ConfusionMatrix: Матрица M×M.

    Raises:
        ShapeError: Если длины различаются.
        LabelError: Если класс вне [0, M).
    """
    predicted = np.asarray(preds, dtype=np.int64).reshape(-1)
    actual = np.asarray(labels, dtype=np.int64).reshape(-1)
    if predicted.shape != actual.shape:
        raise ShapeError(
            f"Длины предсказаний ({predicted.size}) и меток ({actual.size}) различаются"
        )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    if actual.size:
        low = min(predicted.min(), actual.min())
        high = max(predicted.max(), actual.max())
        if low < 0 or high >= num_classes:
            raise LabelError(f"Класс вне диапазона [0, {num_classes})")
        np.add.at(counts, (actual, predicted), 1)
    return ConfusionMatrix(counts)


def _safe_ratio(num: npt.NDArray[np.float64], den: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    # 0/0 (и x/0) считается равным 0
    result = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=result, where=den > 0)
    return result


def _require_samples(matrix: ConfusionMatrix) -> None:
    if matrix.total <= 0:
        raise EmptyInputError("Пустая матрица ошибок: нет оцененных образцов")


@dataclass(frozen=True)
class BasicMetrics:
    """Точность и precision/recall/F1 по классам и в макро-среднем."""

    accuracy: float
    precision: List[float]
    recall: List[float]
    f1: List[float]

    @property
    def precision_macro(self) -> float:
        """Невзвешенное среднее precision по классам."""
        return float(np.mean(self.precision))

    @property
    def recall_macro(self) -> float:
        """Невзвешенное среднее recall по классам."""
        return float(np.mean(self.recall))

    @property
    def f1_macro(self) -> float:
        """Невзвешенное среднее F1 по классам."""
        return float(np.mean(self.f1))


def basic_metrics(matrix: ConfusionMatrix) -> BasicMetrics:
    """
    Вычисляет точность и precision/recall/F1.

    precision_j = O[j][j] / сумма столбца j, recall_j = O[j][j] / сумма строки j,
    F1_j - гармоническое среднее; любое отношение 0/0 равно 0.

    Raises:
        EmptyInputError: Если матрица пуста.
    """
    _require_samples(matrix)
    counts = matrix.counts.astype(np.float64)
    diagonal = np.diag(counts)
    precision = _safe_ratio(diagonal, counts.sum(axis=0))
    recall = _safe_ratio(diagonal, counts.sum(axis=1))
    f1 = _safe_ratio(2.0 * precision * recall, precision + recall)
    return BasicMetrics(
        accuracy=float(diagonal.sum() / counts.sum()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
    )


def kappa_quadratic(matrix: ConfusionMatrix) -> float:
    """
    Квадратично взвешенная каппа Коэна.

    w[i][j] = (i - j)² / (M - 1)², Ex[i][j] = строка_i · столбец_j / Σ,
    κ_w = 1 - Σ(w⊙O) / Σ(w⊙Ex). Если Σ(w⊙Ex) = 0, κ_w = 1.

    Raises:
        EmptyInputError: Если матрица пуста.
        ShapeError: Если M < 2.
    """
    _require_samples(matrix)
    n_classes = matrix.num_classes
    if n_classes < 2:
        raise ShapeError("Каппа определена только для M >= 2")
    observed = matrix.counts.astype(np.float64)
    index = np.arange(n_classes)
    weights = (index[:, None] - index[None, :]) ** 2 / (n_classes - 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / observed.sum()
    denominator = float(np.sum(weights * expected))
    if denominator == 0.0:
        return 1.0
    return float(1.0 - np.sum(weights * observed) / denominator)


@dataclass(frozen=True)
class MetricsReport:
    """Полный отчет об одной оценке."""

    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    kappa_quadratic: float
    per_class: List[Dict[str, float]]
    n_samples: int
    confusion: List[List[int]]

    @property
    def accuracy_percent(self) -> float:
        """Точность в процентах."""
        return 100.0 * self.accuracy

    def metric(self, name: str) -> float:
        """Значение метрики по имени поля отчета."""
        return float(getattr(self, name))

    def to_dict(self) -> Dict[str, Any]:
        """Документ отчета с фиксированными именами полей."""
        return {
            "accuracy": self.accuracy,
            "accuracy_percent": self.accuracy_percent,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
            "kappa_quadratic": self.kappa_quadratic,
            "n_samples": self.n_samples,
            "per_class": self.per_class,
            "confusion": self.confusion,
        }


def build_report(matrix: ConfusionMatrix) -> MetricsReport:
    """
    Собирает MetricsReport из матрицы ошибок.

    Raises:
        EmptyInputError: Если матрица пуста.
    """
    basic = basic_metrics(matrix)
    per_class = [
        {"class": j, "precision": p, "recall": r, "f1": f}
        for j, (p, r, f) in enumerate(zip(basic.precision, basic.recall, basic.f1))
    ]
    return MetricsReport(
        accuracy=basic.accuracy,
        precision_macro=basic.precision_macro,
        recall_macro=basic.recall_macro,
        f1_macro=basic.f1_macro,
        kappa_quadratic=kappa_quadratic(matrix),
        per_class=per_class,
        n_samples=matrix.total,
        confusion=matrix.to_list(),
    )
