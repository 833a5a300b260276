"""
Модуль данных: синтетические выборки со сдвигом распределения и CSV.

Классы - изотропные гауссианы вокруг средних μ_j с разбросом σ_j.
Сплит test_ii генерируется со сдвигом: среднее μ_j + δ, разброс γ·σ_j.
Каждый сплит использует собственный поток генератора Philox, поэтому
изменение размера одного сплита не меняет содержимое остальных.
"""

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .diffcore import Tensor, as_tensor
from .errors import ConfigError, DataParseError, LabelError, ShapeError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test_i", "test_ii")

_LABEL_PATTERN = re.compile(r"-?[0-9]+")

# Номера потоков генератора для сплитов и направления сдвига
_STREAMS = {"train": 0, "val": 1, "test_i": 2, "test_ii": 3, "shift": 4}

# Доли классов BN:WD:MD:PD по сплитам исходных колоректальных данных
COLORECTAL_RATIOS = {
    "train": (773, 1866, 2997, 1391),
    "val": (374, 264, 370, 234),
    "test_i": (453, 192, 738, 205),
    "test_ii": (27896, 8394, 61985, 11895),
}

CountSpec = Union[int, List[int]]


class SplitCounts(BaseModel):
    """Размеры сплитов: общее число (int) или явные числа по классам (list)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    train: CountSpec
    val: CountSpec
    test_i: CountSpec
    test_ii: CountSpec

    @field_validator("train", "val", "test_i", "test_ii")
    @classmethod
    def _non_negative(cls, value: CountSpec) -> CountSpec:
        values = value if isinstance(value, list) else [value]
        if any(count < 0 for count in values):
            raise ValueError("количество образцов не может быть отрицательным")
        return value


class DatasetSpec(BaseModel):
    """Рецепт генерации синтетических данных."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    format_version: Literal[1] = 1
    d_in: int = Field(ge=1)
    num_classes: int = Field(ge=1)
    means: Optional[List[List[float]]] = None
    separation: float = Field(default=4.0, gt=0)
    spreads: Union[float, List[float]] = 1.0
    counts: SplitCounts
    imbalance: Literal["balanced", "colorectal"] = "balanced"
    shift_offset: Optional[List[float]] = None
    shift_magnitude: float = Field(default=0.0, ge=0)
    shift_scale: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0)

    @field_validator("spreads")
    @classmethod
    def _positive_spreads(cls, value: Union[float, List[float]]) -> Union[float, List[float]]:
        values = value if isinstance(value, list) else [value]
        if any(spread <= 0 for spread in values):
            raise ValueError("разброс класса должен быть > 0")
        return value

    @model_validator(mode="after")
    def _consistent_shapes(self) -> "DatasetSpec":
        if self.means is not None:
            if len(self.means) != self.num_classes or any(
                len(mean) != self.d_in for mean in self.means
            ):
                raise ValueError(f"means: ожидалась матрица {self.num_classes}×{self.d_in}")
        elif self.num_classes > self.d_in:
            raise ValueError("means: при num_classes > d_in средние нужно задать явно")
        if isinstance(self.spreads, list) and len(self.spreads) != self.num_classes:
            raise ValueError(f"spreads: ожидалось {self.num_classes} значений")
        if self.shift_offset is not None and len(self.shift_offset) != self.d_in:
            raise ValueError(f"shift_offset: ожидалось {self.d_in} значений")
        if self.imbalance == "colorectal" and self.num_classes != 4:
            raise ValueError("imbalance: пресет colorectal определен только для 4 классов")
        for split in SPLITS:
            value = getattr(self.counts, split)
            if isinstance(value, list) and len(value) != self.num_classes:
                raise ValueError(f"counts.{split}: ожидалось {self.num_classes} значений")
        return self

    def class_means(self) -> npt.NDArray[np.float64]:
        """Средние классов M×d_in (по умолчанию separation·e_j)."""
        if self.means is not None:
            return np.array(self.means, dtype=np.float64)
        means = np.zeros((self.num_classes, self.d_in))
        means[np.arange(self.num_classes), np.arange(self.num_classes)] = self.separation
        return means

    def class_spreads(self) -> npt.NDArray[np.float64]:
        """Разбросы σ_j по классам."""
        if isinstance(self.spreads, list):
            return np.array(self.spreads, dtype=np.float64)
        return np.full(self.num_classes, float(self.spreads))

    def split_counts(self, split: str) -> List[int]:
        """
        Количество образцов каждого класса в сплите.

        Общее число распределяется поровну (остаток - младшим классам)
        или по долям пресета colorectal методом наибольшего остатка.
        """
        value = getattr(self.counts, split)
        if isinstance(value, list):
            return list(value)
        if self.imbalance == "colorectal":
            return _largest_remainder(value, COLORECTAL_RATIOS[split])
        base, extra = divmod(value, self.num_classes)
        return [base + (1 if j < extra else 0) for j in range(self.num_classes)]

    def shift_vector(self) -> npt.NDArray[np.float64]:
        """Сдвиг среднего δ для test_ii (явный или случайное единичное направление)."""
        if self.shift_offset is not None:
            return np.array(self.shift_offset, dtype=np.float64)
        if self.shift_magnitude == 0.0:
            return np.zeros(self.d_in)
        direction = _stream(self.seed, "shift").standard_normal(self.d_in)
        return self.shift_magnitude * direction / np.linalg.norm(direction)


def _largest_remainder(total: int, ratios: Sequence[int]) -> List[int]:
    weight = sum(ratios)
    exact = [total * r / weight for r in ratios]
    counts = [int(np.floor(x)) for x in exact]
    order = sorted(range(len(ratios)), key=lambda j: (-(exact[j] - counts[j]), j))
    for j in order[: total - sum(counts)]:
        counts[j] += 1
    return counts


def _stream(seed: int, name: str) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class Dataset:
    """Размеченные векторы одного сплита."""

    features: Tensor
    labels: npt.NDArray[np.int64]
    split: str = ""

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ShapeError(f"Признаки должны быть матрицей, форма {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"Число меток {self.labels.size} не равно числу строк {self.features.shape[0]}"
            )
        if self.labels.size and self.labels.min() < 0:
            raise LabelError("Отрицательная метка класса")

    @classmethod
    def create(
        cls, features: npt.ArrayLike, labels: npt.ArrayLike, split: str = ""
    ) -> "Dataset":
        """Создает набор с копиями массивов только для чтения."""
        label_array = np.array(labels, dtype=np.int64).reshape(-1)
        label_array.flags.writeable = False
        return cls(as_tensor(features), label_array, split)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def d_in(self) -> int:
        """Размерность признаков."""
        return int(self.features.shape[1])

    def histogram(self, num_classes: int) -> List[int]:
        """Количество образцов каждого класса."""
        return np.bincount(self.labels, minlength=num_classes).tolist()

    def permuted(self, order: Sequence[int]) -> "Dataset":
        """Набор с переставленными строками."""
        index = np.asarray(order, dtype=np.int64)
        return Dataset.create(self.features[index], self.labels[index], self.split)


class SyntheticSplits(NamedTuple):
    """Четыре сплита синтетических данных."""

    train: Dataset
    val: Dataset
    test_i: Dataset
    test_ii: Dataset


def _draw_split(spec: DatasetSpec, split: str) -> Dataset:
    rng = _stream(spec.seed, split)
    means = spec.class_means()
    spreads = spec.class_spreads()
    offset = np.zeros(spec.d_in)
    scale = 1.0
    if split == "test_ii":
        offset = spec.shift_vector()
        scale = spec.shift_scale
    blocks = []
    labels = []
    for j, count in enumerate(spec.split_counts(split)):
        noise = rng.standard_normal((count, spec.d_in))
        blocks.append((means[j] + offset) + scale * spreads[j] * noise)
        labels.extend([j] * count)
    features = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, spec.d_in))
    return Dataset.create(features.reshape(-1, spec.d_in), labels, split)


def gen_synthetic(spec: DatasetSpec) -> SyntheticSplits:
    """
    Генерирует train/val/test_i/test_ii по спецификации.

    train, val и test_i: x ~ μ_j + σ_j·N(0, I);
    test_ii: x ~ (μ_j + δ) + γ·σ_j·N(0, I). Результат полностью определен seed.

    Args:
        spec: Спецификация данных.

    Returns:
        SyntheticSplits: Четыре сплита.
    """
    splits = SyntheticSplits(*(_draw_split(spec, split) for split in SPLITS))
    logger.debug(
        "Сгенерированы данные: %s",
        {split: len(getattr(splits, split)) for split in SPLITS},
    )
    return splits


def save_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    """
    Сохраняет набор в CSV с заголовком f0,...,f{d-1},label.

    Числа записываются в кратчайшем точном представлении (repr),
    поэтому load_csv(save_csv(d)) восстанавливает значения побитово.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"f{k}" for k in range(dataset.d_in)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [str(int(label))])


def _parse_label(cell: str, line_number: int) -> int:
    text = cell.strip()
    if _LABEL_PATTERN.fullmatch(text) is None:
        raise DataParseError(f"метка должна быть целым числом, получено {cell!r}", line_number)
    label = int(text)
    if label < 0:
        raise DataParseError(f"отрицательная метка {label}", line_number)
    return label


def _parse_value(cell: str, line_number: int) -> float:
    try:
        value = float(cell)
    except ValueError as exc:
        raise DataParseError(f"не число: {cell!r}", line_number) from exc
    if not np.isfinite(value):
        raise DataParseError(f"нечисловое значение {cell!r}", line_number)
    return value


def load_csv(path: Union[str, Path], split: str = "") -> Dataset:
    """
    Загружает набор из CSV.

    Args:
        path: Путь к файлу.
        split: Метка сплита (по умолчанию имя файла без расширения).

    Returns:
        Dataset: Загруженный набор.

    Raises:
        DataParseError: При отсутствии файла, неверном заголовке, строке
            другой длины, нечисловом значении или нецелой метке.
    """
    source = Path(path)
    if not source.is_file():
        raise DataParseError(f"Файл данных не найден: {source}")
    with source.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataParseError("пустой файл без заголовка", 1)
        expected = [f"f{k}" for k in range(len(header) - 1)] + ["label"]
        if [cell.strip() for cell in header] != expected:
            raise DataParseError(
                "заголовок должен иметь вид f0,...,f{d-1},label", 1,
                technical_details=f"получено: {header}",
            )
        d_in = len(header) - 1
        rows: List[List[float]] = []
        labels: List[int] = []
        for line_number, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != d_in + 1:
                raise DataParseError(
                    f"ожидалось {d_in + 1} значений, получено {len(record)}", line_number
                )
            rows.append([_parse_value(cell, line_number) for cell in record[:-1]])
            labels.append(_parse_label(record[-1], line_number))
    features = np.array(rows, dtype=np.float64).reshape(len(rows), d_in)
    logger.debug("Загружено %d строк из %s", len(labels), source)
    return Dataset.create(features, labels, split or source.stem)


class Batch(NamedTuple):
    """Один батч: признаки и метки."""

    features: Tensor
    labels: npt.NDArray[np.int64]


def batches(
    dataset: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True
) -> List[Batch]:
    """
    Разбивает набор на батчи.

    При shuffle порядок - перестановка Philox(seed); последний неполный
    батч сохраняется. Одинаковый seed дает одинаковую последовательность.

    Raises:
        ConfigError: Если batch_size < 1.
    """
    if batch_size < 1:
        raise ConfigError("размер батча должен быть >= 1", field="batch_size")
    n_samples = len(dataset)
    if shuffle:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        order = rng.permutation(n_samples)
    else:
        order = np.arange(n_samples)
    result = []
    for start in range(0, n_samples, batch_size):
        index = order[start:start + batch_size]
        features = dataset.features[index]
        features.flags.writeable = False
        labels = dataset.labels[index]
        labels.flags.writeable = False
        result.append(Batch(features, labels))
    return result
