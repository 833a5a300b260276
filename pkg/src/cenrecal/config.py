"""
Модуль конфигурации запусков.

Все документы (спецификация данных, конфигурация запуска) - JSON,
проверяемый моделями pydantic с запретом неизвестных ключей. Ошибки
проверки превращаются в ConfigError с именем поля.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal, NamedTuple, Optional, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import SPLITS, DatasetSpec, SyntheticSplits, gen_synthetic, load_csv
from .errors import ConfigError
from .model import ModelConfig
from .optim import ScheduleConfig
from .trainer import SelectionMetric, TrainConfig

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


class RunConfig(BaseModel):
    """
    Конфигурация запуска обучения.

    Источник данных задается ровно одним из полей: spec (встроенная
    спецификация), spec_path (путь к файлу спецификации) или csv_dir
    (каталог с train.csv, val.csv, test_i.csv, test_ii.csv).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    format_version: Literal[1] = 1
    model: ModelConfig
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    spec: Optional[DatasetSpec] = None
    spec_path: Optional[Path] = None
    csv_dir: Optional[Path] = None
    batch_size: int = Field(default=32, ge=1)
    selection_metric: SelectionMetric = SelectionMetric.ACCURACY
    seed: int = Field(default=0, ge=0)
    output_dir: Optional[Path] = None

    @model_validator(mode="after")
    def _single_data_source(self) -> "RunConfig":
        sources = [self.spec, self.spec_path, self.csv_dir]
        if sum(source is not None for source in sources) != 1:
            raise ValueError("data: нужно задать ровно одно из spec, spec_path, csv_dir")
        return self

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        """Параметры цикла обучения; seed переопределяет сид запуска."""
        return TrainConfig(
            batch_size=self.batch_size,
            selection_metric=self.selection_metric,
            seed=self.seed if seed is None else seed,
        )

    def seeded_model(self, seed: Optional[int] = None) -> ModelConfig:
        """Конфигурация модели с сидом инициализации, равным сиду запуска."""
        return self.model.model_copy(update={"seed": self.seed if seed is None else seed})


class LoadedConfig(NamedTuple):
    """Проверенная конфигурация вместе с исходным документом."""

    config: RunConfig
    document: Dict[str, Any]
    base_dir: Path


def _field_of(error: ValidationError) -> Optional[str]:
    details = error.errors()
    if not details:
        return None
    location = ".".join(str(part) for part in details[0]["loc"])
    return location or None


def validate_document(model: Type[ModelT], document: Any, what: str) -> ModelT:
    """
    Проверяет документ моделью pydantic.

    Raises:
        ConfigError: С именем первого некорректного поля.
    """
    try:
        return model.model_validate(document)
    except ValidationError as exc:
        first = exc.errors()[0] if exc.errors() else {}
        raise ConfigError(
            f"некорректный документ {what}: {first.get('msg', 'ошибка проверки')}",
            field=_field_of(exc),
            technical_details=str(exc),
        ) from exc


def read_json(path: Union[str, Path], what: str) -> Any:
    """
    Читает JSON-документ.

    Raises:
        ConfigError: Если файла нет или он не является корректным JSON.
    """
    source = Path(path)
    if not source.is_file():
        raise ConfigError(f"файл {what} не найден: {source}", field="path")
    try:
        return json.loads(source.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(
            f"не удалось прочитать {what} {source}", technical_details=str(exc)
        ) from exc


def load_dataset_spec(path: Union[str, Path]) -> DatasetSpec:
    """Загружает и проверяет спецификацию данных."""
    return validate_document(DatasetSpec, read_json(path, "спецификации"), "спецификации")


def _resolve(base_dir: Path, path: Optional[Path]) -> Optional[Path]:
    if path is None or path.is_absolute():
        return path
    return base_dir / path


def load_run_config(path: Union[str, Path]) -> LoadedConfig:
    """
    Загружает конфигурацию запуска.

    Относительные пути разрешаются от каталога файла конфигурации;
    все пути к данным проверяются сразу.

    Raises:
        ConfigError: При неизвестных ключах, нарушенных ограничениях
            или отсутствующих путях.
    """
    source = Path(path)
    document = read_json(source, "конфигурации")
    config = validate_document(RunConfig, document, "конфигурации")
    base_dir = source.resolve().parent
    updates: Dict[str, Any] = {
        "spec_path": _resolve(base_dir, config.spec_path),
        "csv_dir": _resolve(base_dir, config.csv_dir),
        "output_dir": _resolve(base_dir, config.output_dir),
    }
    config = config.model_copy(update=updates)
    if config.spec_path is not None and not config.spec_path.is_file():
        raise ConfigError(f"файл спецификации не найден: {config.spec_path}", field="spec_path")
    if config.csv_dir is not None:
        missing = [
            str(config.csv_dir / f"{split}.csv")
            for split in SPLITS
            if not (config.csv_dir / f"{split}.csv").is_file()
        ]
        if missing:
            raise ConfigError(
                f"нет файлов данных: {', '.join(missing)}", field="csv_dir"
            )
    logger.debug("Загружена конфигурация %s", source)
    return LoadedConfig(config, document, base_dir)


def _require_samples(splits: SyntheticSplits, from_csv: bool) -> SyntheticSplits:
    """Обучение и отчет требуют хотя бы один образец в каждом сплите."""
    for split in SPLITS:
        if len(getattr(splits, split)) == 0:
            if from_csv:
                raise ConfigError(f"файл {split}.csv не содержит строк", field="csv_dir")
            raise ConfigError("сплит не может быть пустым", field=f"counts.{split}")
    return splits


def resolve_data(config: RunConfig) -> SyntheticSplits:
    """
    Возвращает четыре сплита согласно источнику данных конфигурации.

    Raises:
        ConfigError: Если спецификация некорректна или какой-либо сплит пуст.
        DataParseError: Если CSV не читается.
    """
    if config.csv_dir is not None:
        loaded = SyntheticSplits(
            *(load_csv(config.csv_dir / f"{split}.csv", split) for split in SPLITS)
        )
        return _require_samples(loaded, from_csv=True)
    spec = config.spec
    if spec is None and config.spec_path is not None:
        spec = load_dataset_spec(config.spec_path)
    if spec is None:
        raise ConfigError("не задан источник данных", field="data")
    return _require_samples(gen_synthetic(spec), from_csv=False)
