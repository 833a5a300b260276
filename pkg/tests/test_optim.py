"""Тесты для оптимизатора Adam и расписания скорости обучения."""

import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal
from pydantic import ValidationError

from src.cenrecal.errors import ConfigError, NumericError, ShapeError
from src.cenrecal.model import ModelParams
from src.cenrecal.optim import AdamState, ScheduleConfig, adam_step, lr_at


def _scalar_params(value):
    return ModelParams({"theta": np.array([[value]])})


def test_first_step_magnitude():
    """Тест: первый шаг Adam с g=1 сдвигает параметр на lr/(1+ε)."""
    params = _scalar_params(0.0)
    state = AdamState.zeros(params)

    updated, new_state = adam_step(params, {"theta": np.array([[1.0]])}, state, 1e-3)

    assert float(updated["theta"][0, 0]) == pytest.approx(-9.99999990e-4, abs=1e-15)
    assert new_state.t == 1
    assert state.t == 0


def test_zero_gradient_keeps_params():
    """Тест: нулевой градиент не меняет параметры."""
    params = _scalar_params(0.7)
    state = AdamState.zeros(params)

    updated, _ = adam_step(params, {"theta": np.zeros((1, 1))}, state, 1e-3)

    assert_array_equal(updated["theta"], [[0.7]])


def test_zero_lr_advances_moments_only():
    """Тест: при lr=0 параметры неизменны, а моменты и счетчик продвигаются."""
    params = _scalar_params(0.7)
    state = AdamState.zeros(params)

    updated, new_state = adam_step(params, {"theta": np.array([[2.0]])}, state, 0.0)

    assert_array_equal(updated["theta"], [[0.7]])
    assert new_state.t == 1
    assert float(new_state.m["theta"][0, 0]) == pytest.approx(0.2)
    assert float(new_state.v["theta"][0, 0]) == pytest.approx(0.004)


def test_ten_steps_on_quadratic_match_reference():
    """Тест: 10 шагов на θ² от θ=1 совпадают со скалярной формулой."""
    lr, beta1, beta2, eps = 0.1, 0.9, 0.999, 1e-8
    theta, m, v = 1.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2.0 * theta
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta -= lr * (m / (1 - beta1**t)) / (math.sqrt(v / (1 - beta2**t)) + eps)

    params = _scalar_params(1.0)
    state = AdamState.zeros(params)
    for _ in range(10):
        grads = {"theta": 2.0 * params["theta"]}
        params, state = adam_step(params, grads, state, lr)

    assert float(params["theta"][0, 0]) == pytest.approx(theta, rel=1e-12)
    assert state.t == 10
    assert abs(theta) < 1.0


def test_adam_rejects_bad_input():
    """Тест проверок шага: форма, NaN в градиенте, отрицательный lr."""
    params = _scalar_params(1.0)
    state = AdamState.zeros(params)

    with pytest.raises(ShapeError):
        adam_step(params, {"theta": np.zeros((2, 1))}, state, 1e-3)
    with pytest.raises(NumericError) as exc_info:
        adam_step(params, {"theta": np.array([[math.nan]])}, state, 1e-3)
    assert "theta" in str(exc_info.value)
    with pytest.raises(ConfigError):
        adam_step(params, {"theta": np.zeros((1, 1))}, state, -1.0)


def test_default_schedule_is_constant():
    """Тест: при eta_min = base_lr скорость постоянна 1e-3 на всех 50 эпохах."""
    schedule = ScheduleConfig()

    assert [lr_at(schedule, epoch) for epoch in range(50)] == [1e-3] * 50


def test_half_period_is_half_lr():
    """Тест: при eta_min=0 середина цикла дает ровно половину base_lr."""
    schedule = ScheduleConfig(eta_min=0.0)

    assert lr_at(schedule, 0) == 1e-3
    assert lr_at(schedule, 10) == 5e-4
    assert lr_at(schedule, 19) < lr_at(schedule, 18)


def test_warm_restarts():
    """Тест: на эпохах 20 и 40 скорость возвращается к base_lr."""
    schedule = ScheduleConfig(eta_min=0.0)

    assert lr_at(schedule, 20) == 1e-3
    assert lr_at(schedule, 40) == 1e-3
    assert lr_at(schedule, 21) == lr_at(schedule, 1)


def test_restart_period_grows_with_t_mult():
    """Тест: с t_mult=2 циклы имеют длины 2, 4, 8."""
    schedule = ScheduleConfig(eta_min=0.0, t_0=2, t_mult=2, epochs=14)

    restarts = [epoch for epoch in range(14) if lr_at(schedule, epoch) == 1e-3]

    assert restarts == [0, 2, 6]


@pytest.mark.parametrize("epoch", [-1, 50])
def test_epoch_out_of_range(epoch):
    """Тест: эпоха вне [0, epochs) - ошибка конфигурации."""
    with pytest.raises(ConfigError):
        lr_at(ScheduleConfig(), epoch)


def test_schedule_validation():
    """Тест: eta_min выше base_lr отклоняется."""
    with pytest.raises(ValidationError):
        ScheduleConfig(base_lr=1e-4, eta_min=1e-3)
    with pytest.raises(ValidationError):
        ScheduleConfig(t_0=0)
