"""
Утилиты для окружения тестов.

Главная задача файла - не дать pytest упасть, если pytest-cov не установлен,
но в pytest.ini присутствуют покрывающие опции (--cov и др.). Мы регистрируем
заглушки, чтобы тесты могли запускаться «из коробки», даже без дополнений.
Здесь же - общие фикстуры: маленькие модели и синтетические данные.
"""

import importlib.util
import warnings
from pathlib import Path

import numpy as np
import pytest

from src.cenrecal.data import DatasetSpec, gen_synthetic
from src.cenrecal.model import ModelConfig


def _cov_plugin_available() -> bool:
    """Есть ли установленный pytest-cov (независимо от автозагрузки)."""
    return importlib.util.find_spec("pytest_cov") is not None


def pytest_addoption(parser) -> None:
    """
    Регистрирует заглушки для опций покрытия, если pytest-cov недоступен.

    Это позволяет запускать тесты даже в окружениях без dev-зависимостей.
    """
    if _cov_plugin_available():
        return

    cov_group = parser.getgroup(
        "cov",
        "coverage reporting (no-op без pytest-cov)"
    )
    cov_group.addoption("--cov", action="append", default=[])
    cov_group.addoption("--cov-report", action="append", default=[])
    cov_group.addoption("--cov-fail-under", action="store", type=float, default=None)


def pytest_configure(config) -> None:
    """Выводим предупреждение, если pytest-cov не найден."""
    if config.pluginmanager.hasplugin("cov") or _cov_plugin_available():
        return
    warnings.warn(
        "pytest-cov не установлен: опции покрытия из pytest.ini будут пропущены",
        RuntimeWarning,
    )


# --- общие фикстуры ------------------------------------------------------

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def golden_csv() -> Path:
    """10 строк с известными предсказаниями эталонной контрольной точки."""
    return DATA_DIR / "golden.csv"


@pytest.fixture
def golden_checkpoint() -> Path:
    """
    Эталонная контрольная точка: d_in=2, D=2, M=2, concat.

    Backbone - единичная матрица, веса CaFe нулевые, классификатор берет
    только E, поэтому логиты равны входу.
    """
    return DATA_DIR / "golden_checkpoint.json"


@pytest.fixture
def rng() -> np.random.Generator:
    """Генератор с фиксированным сидом для тестовых данных."""
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Маленькая модель со скрытым слоем и слиянием concat."""
    return ModelConfig(d_in=4, hidden=[5], embed_dim=3, num_classes=3, seed=7)


@pytest.fixture
def small_spec() -> DatasetSpec:
    """Небольшая спецификация: 3 класса, сдвиг в test_ii."""
    return DatasetSpec(
        d_in=4,
        num_classes=3,
        counts={"train": 60, "val": 30, "test_i": 30, "test_ii": 30},
        shift_magnitude=1.5,
        shift_scale=1.5,
        seed=11,
    )


@pytest.fixture
def small_splits(small_spec):
    """Сплиты, сгенерированные по small_spec."""
    return gen_synthetic(small_spec)
