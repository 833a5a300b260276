"""
Модуль сети с перекалибровкой признаков по центроидам классов.

Backbone (MLP) отображает вход в эмбеддинги E, модуль CaFe строит
перекалиброванные эмбеддинги E_R = softmax(Q·Kᵀ)·V по центроидам
классов, стратегия слияния объединяет E и E_R, линейный классификатор
выдает логиты.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .diffcore import Graph, NodeId, Tensor, as_tensor
from .errors import LabelError, ShapeError


class MergeStrategy(str, Enum):
    """Способ объединения E и E_R перед классификатором."""

    CONCAT = "concat"
    ADD = "add"
    RECAL_ONLY = "recal_only"
    BACKBONE_ONLY = "backbone_only"


class ModelConfig(BaseModel):
    """Гиперпараметры архитектуры."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    d_in: int = Field(ge=1)
    hidden: List[int] = Field(default_factory=list)
    embed_dim: int = Field(ge=1)
    num_classes: int = Field(ge=2)
    merge: MergeStrategy = MergeStrategy.CONCAT
    seed: int = Field(default=0, ge=0)
    attention_scale: bool = False

    @field_validator("hidden")
    @classmethod
    def _hidden_positive(cls, value: List[int]) -> List[int]:
        if any(width < 1 for width in value):
            raise ValueError("ширина скрытого слоя должна быть >= 1")
        return value

    @property
    def uses_cafe(self) -> bool:
        """Участвует ли модуль CaFe в прямом проходе."""
        return self.merge != MergeStrategy.BACKBONE_ONLY

    @property
    def classifier_in(self) -> int:
        """Ширина входа классификатора: 2D для concat, иначе D."""
        if self.merge == MergeStrategy.CONCAT:
            return 2 * self.embed_dim
        return self.embed_dim

    @property
    def widths(self) -> List[int]:
        """Ширины слоев backbone от входа до эмбеддинга."""
        return [self.d_in, *self.hidden, self.embed_dim]


CAFE_NAMES = ("cafe.w_q", "cafe.b_q", "cafe.w_k", "cafe.b_k", "cafe.w_v", "cafe.b_v")


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, int]]:
    """
    Возвращает имена и формы всех обучаемых массивов в порядке хранения.

    Args:
        config: Конфигурация модели.

    Returns:
        Dict[str, Tuple[int, int]]: Имя массива -> форма.
    """
    shapes: Dict[str, Tuple[int, int]] = {}
    widths = config.widths
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        shapes[f"backbone.{layer}.weight"] = (fan_in, fan_out)
        shapes[f"backbone.{layer}.bias"] = (1, fan_out)
    if config.uses_cafe:
        dim = config.embed_dim
        for name in CAFE_NAMES:
            shapes[name] = (dim, dim) if ".w_" in name else (1, dim)
    shapes["classifier.weight"] = (config.classifier_in, config.num_classes)
    shapes["classifier.bias"] = (1, config.num_classes)
    return shapes


@dataclass(frozen=True)
class ModelParams:
    """Все обучаемые массивы модели по именам."""

    arrays: Dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def names(self) -> List[str]:
        """Имена массивов в порядке хранения."""
        return list(self.arrays)

    def size(self) -> int:
        """Общее количество скалярных параметров."""
        return int(sum(array.size for array in self.arrays.values()))

    def replace(self, updates: Mapping[str, npt.ArrayLike]) -> "ModelParams":
        """Возвращает новый набор с замененными массивами."""
        arrays = dict(self.arrays)
        for name, value in updates.items():
            arrays[name] = as_tensor(value)
        return ModelParams(arrays)

    def validate(self, config: ModelConfig) -> None:
        """
        Проверяет, что имена и формы массивов соответствуют конфигурации.

        Raises:
            ShapeError: При отсутствующем, лишнем массиве или неверной форме.
        """
        expected = param_shapes(config)
        missing = [name for name in expected if name not in self.arrays]
        extra = [name for name in self.arrays if name not in expected]
        if missing or extra:
            raise ShapeError(
                "Набор параметров не соответствует конфигурации",
                technical_details=f"отсутствуют: {missing}; лишние: {extra}",
            )
        for name, shape in expected.items():
            actual = tuple(self.arrays[name].shape)
            if actual != shape:
                raise ShapeError(f"{name}: ожидалась форма {shape}, получена {actual}")


def init_params(config: ModelConfig) -> ModelParams:
    """
    Инициализирует параметры равномерно в [-√(1/fan_in), √(1/fan_in)].

    Смещение слоя использует тот же fan_in, что и его веса. Генератор -
    Philox, засеянный config.seed, массивы заполняются в порядке param_shapes.

    Args:
        config: Конфигурация модели.

    Returns:
        ModelParams: Новый набор параметров.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    shapes = param_shapes(config)
    arrays: Dict[str, Tensor] = {}
    fan_in = 1
    for name, shape in shapes.items():
        if name.endswith("weight") or ".w_" in name:
            fan_in = shape[0]
        bound = math.sqrt(1.0 / fan_in)
        arrays[name] = as_tensor(rng.uniform(-bound, bound, size=shape))
    return ModelParams(arrays)


def count_params(config: ModelConfig) -> int:
    """
    Количество обучаемых скаляров по замкнутой формуле.

    backbone: Σ(w_{l-1}·w_l + w_l); CaFe (кроме backbone_only): 3·(D² + D);
    классификатор: classifier_in·M + M.
    """
    widths = config.widths
    total = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    dim = config.embed_dim
    if config.uses_cafe:
        total += 3 * (dim * dim + dim)
    total += config.classifier_in * config.num_classes + config.num_classes
    return total


def count_flops(config: ModelConfig, batch_size: int = 1) -> int:
    """
    Количество операций с плавающей точкой за один прямой проход батча.

    Аффинный слой: 2·in·out + out на строку; relu: 1 на элемент;
    softmax: 3·M на строку; проекции ключей и значений считаются
    один раз на батч.

    Args:
        config: Конфигурация модели.
        batch_size: Размер батча.

    Returns:
        int: Число операций.
    """

    def affine(rows: int, fan_in: int, fan_out: int) -> int:
        return rows * (2 * fan_in * fan_out + fan_out)

    widths = config.widths
    flops = 0
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        flops += affine(batch_size, fan_in, fan_out)
        if layer < len(widths) - 2:
            flops += batch_size * fan_out
    dim, classes = config.embed_dim, config.num_classes
    if config.uses_cafe:
        flops += affine(batch_size, dim, dim)
        flops += 2 * affine(classes, dim, dim)
        flops += batch_size * (2 * dim * classes + 3 * classes + 2 * classes * dim)
        if config.attention_scale:
            flops += batch_size * classes
        if config.merge == MergeStrategy.ADD:
            flops += batch_size * dim
    flops += affine(batch_size, config.classifier_in, classes)
    return flops


@dataclass(frozen=True)
class EmbeddingBatch:
    """Эмбеддинги батча, отсоединенные от графа, вместе с метками."""

    embeddings: Tensor
    labels: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ShapeError(f"Пустой или некорректный батч эмбеддингов {self.embeddings.shape}")
        if len(self.labels) != self.embeddings.shape[0]:
            raise ShapeError("Число меток не равно числу эмбеддингов")
        if min(self.labels) < 0:
            raise LabelError("Отрицательная метка класса")


def bind_params(graph: Graph, params: ModelParams) -> Dict[str, NodeId]:
    """Добавляет параметры в граф как дифференцируемые листья."""
    return {name: graph.leaf(value, name) for name, value in params.arrays.items()}


def constant_params(graph: Graph, params: ModelParams) -> Dict[str, NodeId]:
    """Добавляет параметры в граф как константы (инференс)."""
    return {name: graph.constant(value) for name, value in params.arrays.items()}


def backbone_forward(
    graph: Graph, x: NodeId, nodes: Mapping[str, NodeId], config: ModelConfig
) -> NodeId:
    """
    Прямой проход backbone: чередование linear и relu, последний linear без активации.

    Args:
        graph: Граф прямого прохода.
        x: Вход N_b×d_in.
        nodes: Узлы параметров.
        config: Конфигурация модели.

    Returns:
        NodeId: Эмбеддинги N_b×D.

    Raises:
        ShapeError: Если число столбцов входа не равно d_in.
    """
    shape = graph.shape(x)
    if len(shape) != 2 or shape[1] != config.d_in:
        raise ShapeError(f"Ожидался вход ширины {config.d_in}, получена форма {shape}")
    hidden = x
    n_layers = len(config.widths) - 1
    for layer in range(n_layers):
        hidden = graph.linear(
            hidden, nodes[f"backbone.{layer}.weight"], nodes[f"backbone.{layer}.bias"]
        )
        if layer < n_layers - 1:
            hidden = graph.relu(hidden)
    return hidden


def cafe_forward(
    graph: Graph,
    embeddings: NodeId,
    centroids: NodeId,
    nodes: Mapping[str, NodeId],
    attention_scale: bool = False,
) -> Tuple[NodeId, NodeId]:
    """
    Перекалибровка эмбеддингов вниманием по центроидам.

    Q = linear(E), K = linear(E^c), V = linear(E^c),
    attn = softmax(Q·Kᵀ), E_R = attn·V. Масштаб 1/√D применяется
    только при attention_scale. Центроиды должны быть константой графа.

    Args:
        graph: Граф прямого прохода.
        embeddings: Эмбеддинги N_b×D.
        centroids: Центроиды M×D.
        nodes: Узлы параметров (нужны cafe.*).
        attention_scale: Делить ли оценки на √D.

    Returns:
        Tuple[NodeId, NodeId]: (E_R N_b×D, attn N_b×M).

    Raises:
        ShapeError: Если ширина центроидов не равна ширине эмбеддингов.
    """
    e_shape, c_shape = graph.shape(embeddings), graph.shape(centroids)
    if len(c_shape) != 2 or c_shape[1] != e_shape[1]:
        raise ShapeError(
            f"Ширина центроидов {c_shape} не совпадает с эмбеддингами {e_shape}"
        )
    queries = graph.linear(embeddings, nodes["cafe.w_q"], nodes["cafe.b_q"])
    keys = graph.linear(centroids, nodes["cafe.w_k"], nodes["cafe.b_k"])
    values = graph.linear(centroids, nodes["cafe.w_v"], nodes["cafe.b_v"])
    scores = graph.matmul(queries, graph.transpose(keys))
    if attention_scale:
        scores = graph.scale(scores, 1.0 / math.sqrt(e_shape[1]))
    attn = graph.softmax_rows(scores)
    return graph.matmul(attn, values), attn


def merge(
    graph: Graph,
    embeddings: NodeId,
    recalibrated: Optional[NodeId],
    strategy: MergeStrategy,
) -> NodeId:
    """
    Объединяет E и E_R согласно стратегии.

    concat - [E, E_R] по столбцам; add - E + E_R; recal_only - E_R;
    backbone_only - E (E_R не используется и может быть None).
    """
    if strategy == MergeStrategy.BACKBONE_ONLY:
        return embeddings
    if recalibrated is None:
        raise ShapeError(f"Стратегия {strategy.value} требует E_R")
    if strategy == MergeStrategy.CONCAT:
        return graph.concat_cols(embeddings, recalibrated)
    if strategy == MergeStrategy.ADD:
        return graph.add(embeddings, recalibrated)
    return recalibrated


def model_forward(
    graph: Graph,
    x: NodeId,
    nodes: Mapping[str, NodeId],
    config: ModelConfig,
    centroids: Optional[NodeId],
) -> Tuple[NodeId, NodeId]:
    """
    Полный прямой проход: backbone -> CaFe -> слияние -> классификатор.

    Args:
        graph: Граф прямого прохода.
        x: Вход N_b×d_in.
        nodes: Узлы параметров.
        config: Конфигурация модели.
        centroids: Константный узел центроидов M×D (не нужен для backbone_only).

    Returns:
        Tuple[NodeId, NodeId]: (логиты N_b×M, эмбеддинги E N_b×D).
    """
    embeddings = backbone_forward(graph, x, nodes, config)
    recalibrated: Optional[NodeId] = None
    if config.uses_cafe:
        if centroids is None:
            raise ShapeError("Для CaFe нужна таблица центроидов")
        expected = (config.num_classes, config.embed_dim)
        if graph.shape(centroids) != expected:
            raise ShapeError(
                f"Ожидались центроиды формы {expected}, получена {graph.shape(centroids)}"
            )
        recalibrated, _ = cafe_forward(
            graph, embeddings, centroids, nodes, config.attention_scale
        )
    merged = merge(graph, embeddings, recalibrated, config.merge)
    logits = graph.linear(merged, nodes["classifier.weight"], nodes["classifier.bias"])
    return logits, embeddings


def predict_logits(
    params: ModelParams,
    config: ModelConfig,
    centroids: npt.ArrayLike,
    features: npt.ArrayLike,
) -> Tuple[Tensor, Tensor]:
    """
    Вычисляет логиты и эмбеддинги без построения градиентов.

    Returns:
        Tuple[Tensor, Tensor]: (логиты N×M, эмбеддинги N×D).
    """
    graph = Graph()
    nodes = constant_params(graph, params)
    x = graph.constant(features)
    centroid_node = graph.constant(centroids) if config.uses_cafe else None
    logits, embeddings = model_forward(graph, x, nodes, config, centroid_node)
    return graph.value(logits), graph.value(embeddings)


def predict(logits: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """Argmax по строкам; при равенстве выбирается наименьший индекс класса."""
    return np.argmax(np.asarray(logits), axis=1).astype(np.int64)
