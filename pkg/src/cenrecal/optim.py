"""
Оптимизатор Adam и косинусное расписание скорости обучения с теплыми перезапусками.
"""

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError, NumericError, ShapeError
from .model import ModelParams

Array = npt.NDArray[np.float64]


@dataclass
class AdamState:
    """Моменты Adam по параметрам, счетчик шагов и гиперпараметры."""

    m: Dict[str, Array]
    v: Dict[str, Array]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        """Нулевые моменты под формы параметров."""
        return cls(
            m={name: np.zeros_like(params[name]) for name in params},
            v={name: np.zeros_like(params[name]) for name in params},
        )


def adam_step(
    params: ModelParams,
    grads: Mapping[str, Array],
    state: AdamState,
    lr: float,
) -> Tuple[ModelParams, AdamState]:
    """
    Один шаг Adam с коррекцией смещения моментов.

    t += 1; m ← β1·m + (1-β1)·g; v ← β2·v + (1-β2)·g²;
    θ ← θ - lr·m̂/(√v̂ + ε). При lr = 0 параметры не меняются,
    но моменты и счетчик продвигаются.

    Args:
        params: Текущие параметры.
        grads: Градиенты по именам параметров.
        state: Состояние оптимизатора (не изменяется).
        lr: Скорость обучения (>= 0).

    Returns:
        Tuple[ModelParams, AdamState]: Новые параметры и новое состояние.

    Raises:
        ShapeError: Если форма градиента не совпадает с параметром.
        NumericError: Если градиент содержит NaN/Inf (с именем параметра).
        ConfigError: Если lr < 0.
    """
    if lr < 0 or not math.isfinite(lr):
        raise ConfigError(f"скорость обучения должна быть >= 0, получено {lr}", field="lr")
    for name in params:
        grad = grads[name]
        if grad.shape != params[name].shape:
            raise ShapeError(
                f"{name}: форма градиента {grad.shape} не совпадает с {params[name].shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Нечисловой градиент параметра {name}")

    t = state.t + 1
    beta1, beta2, eps = state.beta1, state.beta2, state.eps
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    new_m: Dict[str, Array] = {}
    new_v: Dict[str, Array] = {}
    updates: Dict[str, Array] = {}
    for name in params:
        grad = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        updates[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(new_m, new_v, t, beta1, beta2, eps)
    return params.replace(updates), new_state


class ScheduleConfig(BaseModel):
    """Параметры косинусного расписания с теплыми перезапусками (по эпохам)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_lr: float = Field(default=1.0e-3, gt=0)
    eta_min: float = Field(default=1.0e-3, ge=0)
    t_0: int = Field(default=20, ge=1)
    t_mult: int = Field(default=1, ge=1)
    epochs: int = Field(default=50, ge=1)

    @model_validator(mode="after")
    def _eta_min_not_above_base(self) -> "ScheduleConfig":
        if self.eta_min > self.base_lr:
            raise ValueError("eta_min: должно быть <= base_lr")
        return self


def lr_at(schedule: ScheduleConfig, epoch: int) -> float:
    """
    Скорость обучения на эпохе epoch.

    lr = η_min + ½(base_lr - η_min)(1 + cos(π·t_cur/T_i)), где t_cur
    отсчитывается от последнего перезапуска, а длина цикла T_i растет
    в t_mult раз после каждого перезапуска.

    Raises:
        ConfigError: Если epoch вне [0, epochs).
    """
    if not 0 <= epoch < schedule.epochs:
        raise ConfigError(
            f"эпоха {epoch} вне диапазона [0, {schedule.epochs})", field="epoch"
        )
    t_cur = epoch
    period = schedule.t_0
    while t_cur >= period:
        t_cur -= period
        period *= schedule.t_mult
    amplitude = schedule.base_lr - schedule.eta_min
    return schedule.eta_min + 0.5 * amplitude * (1.0 + math.cos(math.pi * t_cur / period))
