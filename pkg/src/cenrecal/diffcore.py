"""
Численное ядро с обратным автоматическим дифференцированием.

Тензор - это массив numpy с dtype float64, доступный только для чтения.
Каждый прямой проход строит новый граф (define-by-run): узлы записываются
в топологическом порядке, поэтому входы узла k всегда имеют номера < k.
Обратный проход обходит узлы в обратном порядке и накапливает градиенты
по правилам из реестра _VJP_RULES.

Граф и его тензоры принадлежат одному потоку на время пары
прямой/обратный проход; разные графы можно строить параллельно.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .errors import LabelError, NumericError, ShapeError

Tensor = npt.NDArray[np.float64]
NodeId = int

_LEAF = "leaf"
_CONST = "const"

# Знаменатель относительной ошибки не опускается ниже этого значения
_REL_ERROR_FLOOR = 1e-12


def as_tensor(data: npt.ArrayLike) -> Tensor:
    """
    Создает неизменяемый тензор float64 из произвольных данных.

    Args:
        data: Число, вложенный список или массив.

    Returns:
        Tensor: Копия данных только для чтения.

    Raises:
        NumericError: Если среди значений есть NaN или Inf.
    """
    array = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise NumericError("Тензор содержит нечисловые значения (NaN/Inf)")
    array.flags.writeable = False
    return array


def _freeze(array: npt.ArrayLike) -> Tensor:
    result = np.array(array, dtype=np.float64)
    result.flags.writeable = False
    return result


def _require_2d(value: Tensor, op: str) -> None:
    if value.ndim != 2:
        raise ShapeError(f"{op}: ожидалась матрица, получена форма {value.shape}")


def stable_softmax(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """
    Построчный softmax с вычитанием максимума строки.

    Args:
        x: Матрица N×M.

    Returns:
        Матрица N×M, каждая строка неотрицательна и в сумме дает 1.
    """
    shifted = x - np.max(x, axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=1, keepdims=True)


@dataclass(frozen=True)
class Node:
    """Запись об одной выполненной примитивной операции."""

    op: str
    inputs: Tuple[NodeId, ...]
    value: Tensor
    requires_grad: bool
    aux: Any = None


class Graph:
    """
    Запись выполненных операций одного прямого прохода.

    Узлы создаются методами графа и идентифицируются целыми номерами.
    Листья (leaf) получают градиенты в backward(), константы (constant)
    участвуют в вычислениях, но градиентов не получают.
    """

    def __init__(self) -> None:
        self._nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, node_id: NodeId) -> Node:
        """Возвращает запись узла по номеру."""
        return self._nodes[node_id]

    def value(self, node_id: NodeId) -> Tensor:
        """Возвращает значение узла, вычисленное в прямом проходе."""
        return self._nodes[node_id].value

    def shape(self, node_id: NodeId) -> Tuple[int, ...]:
        """Возвращает форму значения узла."""
        return tuple(self._nodes[node_id].value.shape)

    def leaves(self) -> List[NodeId]:
        """Возвращает номера всех листьев графа в порядке создания."""
        return [i for i, node in enumerate(self._nodes) if node.op == _LEAF]

    def _record(
        self,
        op: str,
        inputs: Sequence[NodeId],
        value: npt.ArrayLike,
        aux: Any = None,
    ) -> NodeId:
        requires_grad = any(self._nodes[i].requires_grad for i in inputs)
        self._nodes.append(Node(op, tuple(inputs), _freeze(value), requires_grad, aux))
        return len(self._nodes) - 1

    # --- входы ---------------------------------------------------------

    def leaf(self, value: npt.ArrayLike, name: Optional[str] = None) -> NodeId:
        """
        Добавляет дифференцируемый вход (параметр или данные).

        Args:
            value: Значение входа.
            name: Имя для диагностики (опционально).

        Returns:
            NodeId: Номер нового узла.
        """
        tensor = as_tensor(value)
        self._nodes.append(Node(_LEAF, (), tensor, True, name))
        return len(self._nodes) - 1

    def constant(self, value: npt.ArrayLike) -> NodeId:
        """Добавляет вход, по которому градиент не вычисляется."""
        tensor = as_tensor(value)
        self._nodes.append(Node(_CONST, (), tensor, False))
        return len(self._nodes) - 1

    # --- примитивы -----------------------------------------------------

    def matmul(self, a: NodeId, b: NodeId) -> NodeId:
        """
        Матричное произведение a[N×K] · b[K×P].

        Raises:
            ShapeError: Если внутренние размерности не совпадают.
        """
        va, vb = self.value(a), self.value(b)
        _require_2d(va, "matmul")
        _require_2d(vb, "matmul")
        if va.shape[1] != vb.shape[0]:
            raise ShapeError(
                f"matmul: внутренние размерности не совпадают "
                f"({va.shape[0]}×{va.shape[1]} · {vb.shape[0]}×{vb.shape[1]})"
            )
        return self._record("matmul", (a, b), va @ vb)

    def transpose(self, a: NodeId) -> NodeId:
        """Транспонирует матрицу."""
        va = self.value(a)
        _require_2d(va, "transpose")
        return self._record("transpose", (a,), va.T.copy())

    def add(self, a: NodeId, b: NodeId) -> NodeId:
        """Поэлементная сумма тензоров одинаковой формы."""
        va, vb = self.value(a), self.value(b)
        if va.shape != vb.shape:
            raise ShapeError(f"add: формы {va.shape} и {vb.shape} не совпадают")
        return self._record("add", (a, b), va + vb)

    def add_row(self, a: NodeId, row: NodeId) -> NodeId:
        """Прибавляет строку row[1×P] к каждой строке a[N×P]."""
        va, vr = self.value(a), self.value(row)
        _require_2d(va, "add_row")
        if vr.shape != (1, va.shape[1]):
            raise ShapeError(
                f"add_row: ожидалась строка 1×{va.shape[1]}, получена форма {vr.shape}"
            )
        return self._record("add_row", (a, row), va + vr)

    def mul(self, a: NodeId, b: NodeId) -> NodeId:
        """Поэлементное произведение тензоров одинаковой формы."""
        va, vb = self.value(a), self.value(b)
        if va.shape != vb.shape:
            raise ShapeError(f"mul: формы {va.shape} и {vb.shape} не совпадают")
        return self._record("mul", (a, b), va * vb)

    def scale(self, a: NodeId, factor: float) -> NodeId:
        """Умножает тензор на число."""
        return self._record("scale", (a,), self.value(a) * factor, aux=float(factor))

    def relu(self, a: NodeId) -> NodeId:
        """Поэлементный max(0, x); субградиент в нуле равен 0."""
        return self._record("relu", (a,), np.maximum(self.value(a), 0.0))

    def softmax_rows(self, a: NodeId) -> NodeId:
        """Построчный softmax со стабилизацией вычитанием максимума."""
        va = self.value(a)
        _require_2d(va, "softmax_rows")
        return self._record("softmax_rows", (a,), stable_softmax(va))

    def concat_cols(self, a: NodeId, b: NodeId) -> NodeId:
        """
        Конкатенация по столбцам: строка i = строка i из a, затем строка i из b.

        Raises:
            ShapeError: Если число строк различается.
        """
        va, vb = self.value(a), self.value(b)
        _require_2d(va, "concat_cols")
        _require_2d(vb, "concat_cols")
        if va.shape[0] != vb.shape[0]:
            raise ShapeError(
                f"concat_cols: число строк различается ({va.shape[0]} и {vb.shape[0]})"
            )
        return self._record(
            "concat_cols", (a, b), np.concatenate([va, vb], axis=1), aux=va.shape[1]
        )

    def sum(self, a: NodeId) -> NodeId:
        """Сумма всех элементов (скаляр)."""
        return self._record("sum", (a,), np.sum(self.value(a)))

    def linear(self, x: NodeId, w: NodeId, b: NodeId) -> NodeId:
        """
        Аффинное отображение x·w + b (b прибавляется к каждой строке).

        Args:
            x: Вход N×D_in.
            w: Веса D_in×D_out.
            b: Смещение 1×D_out.

        Returns:
            NodeId: Узел N×D_out.
        """
        return self.add_row(self.matmul(x, w), b)

    def cross_entropy(self, logits: NodeId, labels: Sequence[int]) -> NodeId:
        """
        Средняя по батчу перекрестная энтропия softmax(logits) с метками.

        Args:
            logits: Логиты N×M.
            labels: Индексы классов длины N.

        Returns:
            NodeId: Скалярный узел потерь.

        Raises:
            ShapeError: Если длина меток не равна N.
            LabelError: Если метка вне [0, M).
        """
        values = self.value(logits)
        _require_2d(values, "cross_entropy")
        n_rows, n_classes = values.shape
        if n_rows == 0:
            raise ShapeError("cross_entropy: пустой батч")
        targets = np.asarray(labels, dtype=np.int64)
        if targets.shape != (n_rows,):
            raise ShapeError(
                f"cross_entropy: ожидалось {n_rows} меток, получено {targets.size}"
            )
        if n_rows and (targets.min() < 0 or targets.max() >= n_classes):
            raise LabelError(f"cross_entropy: метка вне диапазона [0, {n_classes})")
        row_max = np.max(values, axis=1)
        log_norm = row_max + np.log(
            np.sum(np.exp(values - row_max[:, None]), axis=1)
        )
        loss = np.mean(log_norm - values[np.arange(n_rows), targets])
        return self._record("cross_entropy", (logits,), loss, aux=targets)


# --- правила обратного прохода ------------------------------------------

VjpRule = Callable[[Graph, Node, Tensor], Tuple[Optional[Tensor], ...]]


def _vjp_matmul(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor, Tensor]:
    a, b = (graph.value(i) for i in node.inputs)
    return grad @ b.T, a.T @ grad


def _vjp_transpose(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor]:
    return (grad.T,)


def _vjp_add(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor, Tensor]:
    return grad, grad


def _vjp_add_row(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor, Tensor]:
    return grad, np.sum(grad, axis=0, keepdims=True)


def _vjp_mul(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor, Tensor]:
    a, b = (graph.value(i) for i in node.inputs)
    return grad * b, grad * a


def _vjp_scale(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor]:
    return (grad * node.aux,)


def _vjp_relu(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor]:
    return (grad * (graph.value(node.inputs[0]) > 0.0),)


def _vjp_softmax_rows(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor]:
    probs = node.value
    return (probs * (grad - np.sum(grad * probs, axis=1, keepdims=True)),)


def _vjp_concat_cols(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor, Tensor]:
    split = node.aux
    return grad[:, :split], grad[:, split:]


def _vjp_sum(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor]:
    shape = graph.value(node.inputs[0]).shape
    return (np.full(shape, float(grad)),)


def _vjp_cross_entropy(graph: Graph, node: Node, grad: Tensor) -> Tuple[Tensor]:
    logits = graph.value(node.inputs[0])
    targets = node.aux
    n_rows = logits.shape[0]
    delta = stable_softmax(logits)
    delta[np.arange(n_rows), targets] -= 1.0
    return (delta * (float(grad) / n_rows),)


_VJP_RULES: Dict[str, VjpRule] = {
    "matmul": _vjp_matmul,
    "transpose": _vjp_transpose,
    "add": _vjp_add,
    "add_row": _vjp_add_row,
    "mul": _vjp_mul,
    "scale": _vjp_scale,
    "relu": _vjp_relu,
    "softmax_rows": _vjp_softmax_rows,
    "concat_cols": _vjp_concat_cols,
    "sum": _vjp_sum,
    "cross_entropy": _vjp_cross_entropy,
}


def backward(graph: Graph, loss: NodeId) -> Dict[NodeId, Tensor]:
    """
    Вычисляет dLoss/dLeaf для всех листьев графа.

    Узлы обходятся в порядке убывания номеров, поэтому результат
    детерминирован: одинаковый граф дает побитово одинаковые градиенты.
    Константы и узлы, зависящие только от констант, градиентов не получают.

    Args:
        graph: Граф прямого прохода.
        loss: Скалярный узел потерь.

    Returns:
        Dict[NodeId, Tensor]: Градиент для каждого листа (нули для неиспользованных).

    Raises:
        ShapeError: Если loss не скаляр.
    """
    loss_value = graph.value(loss)
    if loss_value.size != 1:
        raise ShapeError(f"backward: потери должны быть скаляром, форма {loss_value.shape}")

    grads: List[Optional[npt.NDArray[np.float64]]] = [None] * len(graph)
    grads[loss] = np.ones_like(loss_value)

    for node_id in range(loss, -1, -1):
        grad = grads[node_id]
        node = graph.node(node_id)
        if grad is None or not node.inputs or not node.requires_grad:
            continue
        input_grads = _VJP_RULES[node.op](graph, node, grad)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_grad is None or not graph.node(input_id).requires_grad:
                continue
            current = grads[input_id]
            grads[input_id] = input_grad if current is None else current + input_grad

    result: Dict[NodeId, Tensor] = {}
    for leaf_id in graph.leaves():
        leaf_grad = grads[leaf_id]
        if leaf_grad is None:
            leaf_grad = np.zeros_like(graph.value(leaf_id))
        result[leaf_id] = np.asarray(leaf_grad, dtype=np.float64).reshape(
            graph.shape(leaf_id)
        )
    return result


# --- проверка градиентов конечными разностями -----------------------------

LossBuilder = Callable[[Graph, Mapping[str, NodeId]], NodeId]


@dataclass(frozen=True)
class GradCheckReport:
    """Результат сравнения аналитических и численных градиентов."""

    max_rel_errors: Dict[str, float]
    step: float
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "passed", self.max_error <= self.tolerance)

    @property
    def max_error(self) -> float:
        """Максимальная относительная ошибка по всем параметрам."""
        return max(self.max_rel_errors.values(), default=0.0)


def _loss_value(builder: LossBuilder, params: Mapping[str, Tensor]) -> float:
    graph = Graph()
    nodes = {name: graph.leaf(value, name) for name, value in params.items()}
    value = float(graph.value(builder(graph, nodes)))
    if not np.isfinite(value):
        raise NumericError("grad_check: функция вернула нечисловое значение")
    return value


def grad_check(
    builder: LossBuilder,
    params: Mapping[str, npt.ArrayLike],
    step: float = 1e-4,
    tol: float = 1e-5,
) -> GradCheckReport:
    """
    Сравнивает градиенты backward() с центральными конечными разностями.

    Относительная ошибка каждого скаляра считается как
    |a - n| / max(|a|, |n|, 1e-12).

    Args:
        builder: Строит скалярные потери на графе по узлам параметров.
        params: Значения параметров по именам.
        step: Шаг конечных разностей.
        tol: Допустимая относительная ошибка.

    Returns:
        GradCheckReport: Максимальная ошибка по каждому параметру и флаг прохождения.

    Raises:
        NumericError: Если функция дает нечисловое значение.
    """
    base = {name: as_tensor(value) for name, value in params.items()}

    graph = Graph()
    nodes = {name: graph.leaf(value, name) for name, value in base.items()}
    loss = builder(graph, nodes)
    if not np.isfinite(float(graph.value(loss))):
        raise NumericError("grad_check: функция вернула нечисловое значение")
    analytic = backward(graph, loss)

    errors: Dict[str, float] = {}
    for name, value in base.items():
        numeric = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            plus = value.copy()
            minus = value.copy()
            plus[index] += step
            minus[index] -= step
            f_plus = _loss_value(builder, {**base, name: plus})
            f_minus = _loss_value(builder, {**base, name: minus})
            numeric[index] = (f_plus - f_minus) / (plus[index] - minus[index])
        exact = analytic[nodes[name]]
        denominator = np.maximum(
            np.maximum(np.abs(exact), np.abs(numeric)), _REL_ERROR_FLOOR
        )
        rel = np.abs(exact - numeric) / denominator
        errors[name] = float(np.max(rel)) if rel.size else 0.0

    return GradCheckReport(max_rel_errors=errors, step=step, tolerance=tol)
