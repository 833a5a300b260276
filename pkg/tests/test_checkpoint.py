"""Тесты для сохранения и загрузки контрольных точек."""

import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.cenrecal.centroids import CentroidTable
from src.cenrecal.checkpoint import (
    Checkpoint,
    checkpoint_from_dict,
    checkpoint_to_dict,
    load_checkpoint,
    save_checkpoint,
    state_checksum,
)
from src.cenrecal.errors import (
    CheckpointError,
    CheckpointNotFoundError,
    CheckpointShapeError,
    CheckpointVersionError,
)
from src.cenrecal.model import init_params, predict_logits
from src.cenrecal.optim import AdamState, ScheduleConfig, adam_step


@pytest.fixture
def checkpoint(tiny_config, rng):
    """Состояние после одного шага Adam и одной эпохи накопления."""
    params = init_params(tiny_config)
    grads = {name: rng.standard_normal(params[name].shape) for name in params}
    params, optimizer = adam_step(params, grads, AdamState.zeros(params), 1e-3)
    table = CentroidTable(3, 3)
    table.accumulate(rng.standard_normal((6, 3)) / 3.0, [0, 1, 2, 0, 1, 1])
    table.finalize_epoch()
    table.accumulate(rng.standard_normal((2, 3)), [2, 2])
    return Checkpoint(
        config=tiny_config,
        params=params,
        centroids=table,
        optimizer=optimizer,
        schedule=ScheduleConfig(epochs=5),
        epoch=1,
        rng_state={"seed": 0, "next_epoch": 1},
    )


def test_round_trip_is_bit_exact(checkpoint, tmp_path, rng):
    """Тест: сохранение и загрузка восстанавливают состояние и логиты побитово."""
    path = save_checkpoint(checkpoint, tmp_path / "state.json")

    loaded = load_checkpoint(path)

    for name in checkpoint.params:
        assert_array_equal(loaded.params[name], checkpoint.params[name])
        assert_array_equal(loaded.optimizer.m[name], checkpoint.optimizer.m[name])
        assert_array_equal(loaded.optimizer.v[name], checkpoint.optimizer.v[name])
    assert_array_equal(loaded.centroids.centroids, checkpoint.centroids.centroids)
    assert_array_equal(loaded.centroids.accum, checkpoint.centroids.accum)
    assert loaded.centroids.counts.tolist() == [0, 0, 2]
    assert loaded.centroids.last_counts.tolist() == [2, 3, 1]
    assert loaded.centroids.epoch_stamp == 1
    assert loaded.optimizer.t == 1
    assert loaded.config == checkpoint.config
    assert loaded.schedule == checkpoint.schedule
    assert loaded.epoch == 1
    assert loaded.rng_state == {"seed": 0, "next_epoch": 1}

    x = rng.standard_normal((5, 4))
    before, _ = predict_logits(
        checkpoint.params, checkpoint.config, checkpoint.centroids.centroids, x
    )
    after, _ = predict_logits(loaded.params, loaded.config, loaded.centroids.centroids, x)
    assert_array_equal(before, after)
    assert state_checksum(loaded) == state_checksum(checkpoint)


def test_save_leaves_no_temporary_file(checkpoint, tmp_path):
    """Тест: после записи временного файла не остается."""
    save_checkpoint(checkpoint, tmp_path / "nested" / "state.json")

    assert [p.name for p in (tmp_path / "nested").iterdir()] == ["state.json"]


def test_frozen_flag_survives(checkpoint, tmp_path):
    """Тест: флаг заморозки таблицы сохраняется."""
    path = save_checkpoint(checkpoint.frozen(), tmp_path / "best.json")

    assert load_checkpoint(path).centroids.is_frozen()
    assert not checkpoint.centroids.is_frozen()


def test_checksum_changes_with_state(checkpoint):
    """Тест: контрольная сумма зависит от параметров и флага заморозки."""
    original = state_checksum(checkpoint)
    name = checkpoint.params.names()[0]
    changed = Checkpoint(
        **{
            **checkpoint.__dict__,
            "params": checkpoint.params.replace({name: checkpoint.params[name] + 1e-12}),
        }
    )

    assert state_checksum(changed) != original
    assert state_checksum(checkpoint.frozen()) != original


def test_missing_file(tmp_path):
    """Тест: отсутствующий файл - CheckpointNotFoundError с путем."""
    with pytest.raises(CheckpointNotFoundError) as exc_info:
        load_checkpoint(tmp_path / "absent.json")

    assert "absent.json" in exc_info.value.get_user_message()


def test_corrupted_json(tmp_path):
    """Тест: поврежденный JSON - CheckpointError."""
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")

    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unsupported_version(checkpoint):
    """Тест: неизвестная версия формата отклоняется."""
    document = checkpoint_to_dict(checkpoint)
    document["format_version"] = 2

    with pytest.raises(CheckpointVersionError):
        checkpoint_from_dict(document)


def test_tampered_shape(checkpoint):
    """Тест: форма массива, не совпадающая с конфигурацией, отклоняется."""
    document = checkpoint_to_dict(checkpoint)
    document["params"]["classifier.bias"] = {"shape": [1, 4], "data": [[0.0] * 4]}

    with pytest.raises(CheckpointShapeError) as exc_info:
        checkpoint_from_dict(document)

    assert "classifier.bias" in str(exc_info.value)


def test_data_disagrees_with_declared_shape(checkpoint):
    """Тест: данные, не совпадающие с заявленной формой, отклоняются."""
    document = checkpoint_to_dict(checkpoint)
    document["params"]["classifier.bias"]["data"] = [[0.0, 0.0]]

    with pytest.raises(CheckpointShapeError):
        checkpoint_from_dict(document)


def test_missing_parameter(checkpoint):
    """Тест: отсутствующий массив параметров отклоняется."""
    document = checkpoint_to_dict(checkpoint)
    del document["params"]["cafe.w_q"]

    with pytest.raises(CheckpointShapeError):
        checkpoint_from_dict(document)


def test_wrong_centroid_table_size(checkpoint):
    """Тест: таблица центроидов не того размера отклоняется."""
    document = checkpoint_to_dict(checkpoint)
    document["centroids"]["counts"] = [0, 0]

    with pytest.raises(CheckpointShapeError):
        checkpoint_from_dict(document)


def test_missing_section(checkpoint):
    """Тест: отсутствующий раздел документа - CheckpointError."""
    document = checkpoint_to_dict(checkpoint)
    del document["optimizer"]

    with pytest.raises(CheckpointError):
        checkpoint_from_dict(document)


def test_golden_checkpoint_loads(golden_checkpoint):
    """Тест: эталонная контрольная точка загружается с известными значениями."""
    loaded = load_checkpoint(golden_checkpoint)

    assert loaded.config.merge.value == "concat"
    assert loaded.centroids.is_frozen()
    assert loaded.centroids.epoch_stamp == 3
    assert_array_equal(loaded.params["backbone.0.weight"], np.eye(2))
    logits, _ = predict_logits(
        loaded.params, loaded.config, loaded.centroids.centroids, [[0.5, -2.0]]
    )
    assert_array_equal(logits, [[0.5, -2.0]])


def test_saved_document_is_plain_json(checkpoint, tmp_path):
    """Тест: файл контрольной точки - читаемый JSON с версией формата."""
    path = save_checkpoint(checkpoint, tmp_path / "state.json")

    document = json.loads(path.read_text(encoding="utf-8"))

    assert document["format_version"] == 1
    assert document["config"]["merge"] == "concat"
    assert document["params"]["backbone.0.weight"]["shape"] == [4, 5]


@pytest.mark.parametrize(
    "section, key, value",
    [
        ("centroids", "frozen", "false"),
        ("centroids", "frozen", 1),
        ("centroids", "counts", [0, 0, 2.7]),
        ("centroids", "last_counts", [2, True, 1]),
        ("centroids", "epoch_stamp", "1"),
        ("optimizer", "t", 1.0),
        ("optimizer", "beta1", "0.9"),
        (None, "epoch", 0.5),
    ],
)
def test_field_types_checked_strictly(checkpoint, section, key, value):
    """Тест: значения неверного типа не приводятся молча, а отклоняются."""
    document = checkpoint_to_dict(checkpoint)
    target = document if section is None else document[section]
    target[key] = value

    with pytest.raises(CheckpointError) as exc_info:
        checkpoint_from_dict(document)

    assert key in str(exc_info.value)
