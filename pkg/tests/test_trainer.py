"""Тесты для цикла обучения, выбора модели и оценки."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.cenrecal.centroids import CentroidTable
from src.cenrecal.checkpoint import load_checkpoint, state_checksum
from src.cenrecal.data import Batch, Dataset, DatasetSpec, batches, gen_synthetic, load_csv
from src.cenrecal.errors import (
    EmptyInputError,
    FreezeViolationError,
    LabelError,
    ShapeError,
)
from src.cenrecal.model import ModelConfig, init_params, predict_logits
from src.cenrecal.optim import AdamState, ScheduleConfig
from src.cenrecal.trainer import (
    SelectionMetric,
    TrainConfig,
    epoch_seed,
    evaluate,
    evaluate_timed,
    fit,
    run_epoch,
)


def _fit(config, splits, epochs=2, out_dir=None, **train_options):
    return fit(
        config,
        ScheduleConfig(epochs=epochs),
        TrainConfig(batch_size=16, **train_options),
        splits.train,
        splits.val,
        out_dir=out_dir,
    )


def test_epoch_seed_is_deterministic():
    """Тест: сид эпохи зависит от сида запуска и номера эпохи."""
    assert epoch_seed(3, 5) == epoch_seed(3, 5)
    assert epoch_seed(3, 5) != epoch_seed(3, 6)
    assert epoch_seed(3, 5) != epoch_seed(4, 5)


def test_batches_see_pre_epoch_centroids(tiny_config, small_splits):
    """Тест: все батчи эпохи читают таблицу, зафиксированную до эпохи."""
    params = init_params(tiny_config)
    table = CentroidTable(3, 3)
    train_batches = batches(small_splits.train, 16, seed=1)

    first = run_epoch(
        tiny_config, params, AdamState.zeros(params), table, train_batches, 1e-3
    )
    second = run_epoch(
        tiny_config, first.params, first.optimizer, table, train_batches, 1e-3
    )

    assert first.batch_stamps == [0] * len(train_batches)
    assert second.batch_stamps == [1] * len(train_batches)
    assert table.epoch_stamp == 2


def test_centroids_are_class_means_of_epoch_embeddings(tiny_config, small_splits):
    """Тест: после эпохи центроид равен среднему эмбеддингов класса за эпоху."""
    params = init_params(tiny_config)
    table = CentroidTable(3, 3)
    train = small_splits.train

    # При lr=0 параметры постоянны, и эмбеддинги эпохи можно пересчитать целиком
    result = run_epoch(
        tiny_config, params, AdamState.zeros(params), table, batches(train, 7, seed=2), 0.0
    )
    _, embeddings = predict_logits(params, tiny_config, np.zeros((3, 3)), train.features)

    for j in range(3):
        expected = embeddings[train.labels == j].mean(axis=0)
        assert_allclose(table.centroids[j], expected, rtol=0, atol=1e-12)
    assert table.last_counts.tolist() == train.histogram(3)
    for name in params:
        assert_array_equal(result.params[name], params[name])


def test_failed_epoch_leaves_centroids(tiny_config, small_splits):
    """Тест: ошибка в середине эпохи не меняет таблицу центроидов."""
    params = init_params(tiny_config)
    table = CentroidTable(3, 3)
    good = batches(small_splits.train, 16, seed=1)
    run_epoch(tiny_config, params, AdamState.zeros(params), table, good, 1e-3)
    before = table.centroids
    bad = Batch(np.zeros((1, 4)), np.array([5]))

    with pytest.raises(LabelError):
        run_epoch(
            tiny_config, params, AdamState.zeros(params), table, [good[0], bad], 1e-3
        )

    assert_array_equal(table.centroids, before)
    assert table.counts.tolist() == [0, 0, 0]
    assert table.epoch_stamp == 1


def test_run_epoch_rejects_frozen_table_and_empty_input(tiny_config, small_splits):
    """Тест: замороженная таблица и пустой список батчей отклоняются."""
    params = init_params(tiny_config)
    frozen = CentroidTable(3, 3)
    frozen.freeze()
    train_batches = batches(small_splits.train, 16)

    with pytest.raises(FreezeViolationError):
        run_epoch(tiny_config, params, AdamState.zeros(params), frozen, train_batches, 1e-3)
    with pytest.raises(EmptyInputError):
        run_epoch(tiny_config, params, AdamState.zeros(params), CentroidTable(3, 3), [], 1e-3)


def test_mean_loss_weighted_by_batch_size(tiny_config):
    """Тест: средние потери эпохи взвешены по размеру батча."""
    params = init_params(tiny_config)
    # При нулевых логитах потери каждого образца равны log(3)
    zeroed = params.replace(
        {
            "classifier.weight": np.zeros_like(params["classifier.weight"]),
            "classifier.bias": np.zeros_like(params["classifier.bias"]),
        }
    )
    train_batches = [
        Batch(np.ones((3, 4)), np.array([0, 1, 2])),
        Batch(np.ones((1, 4)), np.array([1])),
    ]

    result = run_epoch(
        tiny_config, zeroed, AdamState.zeros(zeroed), CentroidTable(3, 3), train_batches, 0.0
    )

    assert result.mean_loss == pytest.approx(np.log(3.0), abs=1e-12)


def test_fit_is_deterministic(tiny_config, small_splits):
    """Тест: одинаковые сиды дают побитово одинаковые параметры и историю."""
    first = _fit(tiny_config, small_splits)
    second = _fit(tiny_config, small_splits)

    for name in first.final.params:
        assert_array_equal(first.final.params[name], second.final.params[name])
    assert state_checksum(first.best) == state_checksum(second.best)
    assert first.to_dict() == second.to_dict()


def test_fit_single_epoch_selects_it(tiny_config, small_splits, tmp_path):
    """Тест: при одной эпохе выбирается эпоха 0 и пишутся все контрольные точки."""
    record = _fit(tiny_config, small_splits, epochs=1, out_dir=tmp_path)

    assert record.selected_epoch == 0
    assert record.checkpoints == [
        "checkpoints/epoch-000.json",
        "checkpoints/final.json",
        "checkpoints/best.json",
    ]
    for relative in record.checkpoints:
        assert (tmp_path / relative).is_file()
    assert load_checkpoint(tmp_path / "checkpoints/best.json").centroids.is_frozen()
    assert not load_checkpoint(tmp_path / "checkpoints/final.json").centroids.is_frozen()
    assert record.epochs[0].centroid_epoch_stamp == 1
    assert record.best.epoch == 1


def test_fit_records_every_epoch(tiny_config, small_splits):
    """Тест: история содержит запись на каждую эпоху и выбранную метрику."""
    record = _fit(tiny_config, small_splits, epochs=3, selection_metric=SelectionMetric.F1_MACRO)
    document = record.to_dict()

    assert [entry["epoch"] for entry in document["epochs"]] == [0, 1, 2]
    assert document["selection_metric"] == "f1_macro"
    best_f1 = max(entry.val.f1_macro for entry in record.epochs)
    assert document["selected_val_metric"] == best_f1
    assert record.epochs[record.selected_epoch].val.f1_macro == best_f1


def test_ties_keep_earliest_epoch(small_splits):
    """Тест: при равных метриках выбирается самая ранняя эпоха."""
    config = ModelConfig(d_in=4, hidden=[5], embed_dim=3, num_classes=3, merge="backbone_only")
    # Шаг ниже машинной точности весов: метрика валидации не меняется
    schedule = ScheduleConfig(base_lr=1e-20, eta_min=1e-20, epochs=3)

    record = fit(config, schedule, TrainConfig(), small_splits.train, small_splits.val)

    accuracies = {entry.val.accuracy for entry in record.epochs}
    assert len(accuracies) == 1
    assert record.selected_epoch == 0


def test_fit_rejects_bad_splits(tiny_config, small_splits):
    """Тест: пустой сплит и несовпадающая размерность отклоняются."""
    empty = Dataset.create(np.zeros((0, 4)), [])
    wide = Dataset.create(np.zeros((2, 5)), [0, 1])

    with pytest.raises(EmptyInputError):
        fit(tiny_config, ScheduleConfig(epochs=1), TrainConfig(), small_splits.train, empty)
    with pytest.raises(ShapeError):
        fit(tiny_config, ScheduleConfig(epochs=1), TrainConfig(), wide, small_splits.val)


def test_resume_matches_uninterrupted_run(tiny_config, small_splits):
    """Тест: продолжение с контрольной точки совпадает с непрерывным обучением."""
    train_config = TrainConfig(batch_size=16)
    full = fit(
        tiny_config, ScheduleConfig(epochs=3), train_config, small_splits.train, small_splits.val
    )
    head = fit(
        tiny_config, ScheduleConfig(epochs=1), train_config, small_splits.train, small_splits.val
    )

    resumed = fit(
        tiny_config,
        ScheduleConfig(epochs=3),
        train_config,
        small_splits.train,
        small_splits.val,
        resume=head.final,
    )

    assert [entry.epoch for entry in resumed.epochs] == [1, 2]
    assert state_checksum(resumed.final) == state_checksum(full.final)


def test_resume_from_frozen_state_rejected(tiny_config, small_splits):
    """Тест: нельзя продолжить обучение с замороженной таблицей."""
    head = _fit(tiny_config, small_splits, epochs=1)

    with pytest.raises(FreezeViolationError):
        fit(
            tiny_config,
            ScheduleConfig(epochs=2),
            TrainConfig(),
            small_splits.train,
            small_splits.val,
            resume=head.best,
        )


def test_evaluate_does_not_change_state(tiny_config, small_splits):
    """Тест: оценка не меняет контрольную точку и повторяется побитово."""
    record = _fit(tiny_config, small_splits, epochs=1)
    state = record.final
    checksum = state_checksum(state)

    first = evaluate(state, small_splits.test_i)
    second = evaluate(state, small_splits.test_i)

    assert first == second
    assert state_checksum(state) == checksum
    assert not state.centroids.is_frozen()


def test_evaluate_rejects_wrong_width_before_compute(tiny_config, small_splits):
    """Тест: несовпадающая размерность данных отклоняется до вычислений."""
    state = _fit(tiny_config, small_splits, epochs=1).best
    wide = Dataset.create(np.zeros((3, 6)), [0, 1, 2])

    with pytest.raises(ShapeError):
        evaluate(state, wide)
    with pytest.raises(EmptyInputError):
        evaluate(state, Dataset.create(np.zeros((0, 4)), []))


def test_evaluate_ignores_row_order(tiny_config, small_splits, rng):
    """Тест: перестановка строк набора не меняет отчет."""
    state = _fit(tiny_config, small_splits, epochs=1).best
    dataset = small_splits.test_ii

    original = evaluate(state, dataset)
    shuffled = evaluate(state, dataset.permuted(rng.permutation(len(dataset))))

    assert original.confusion == shuffled.confusion
    assert original.to_dict() == shuffled.to_dict()


def test_evaluate_workers_give_same_report(tiny_config, small_splits):
    """Тест: число потоков не влияет на отчет."""
    state = _fit(tiny_config, small_splits, epochs=1).best

    single = evaluate(state, small_splits.test_i, batch_size=4)
    parallel = evaluate(state, small_splits.test_i, batch_size=4, workers=3)
    evaluation = evaluate_timed(state, small_splits.test_i, batch_size=4, workers=3)

    assert single == parallel
    assert evaluation.report == single
    assert evaluation.ms_per_batch >= 0.0


def test_golden_checkpoint_report(golden_checkpoint, golden_csv):
    """Тест: эталонная контрольная точка на эталонных данных дает известный отчет."""
    report = evaluate(golden_checkpoint, load_csv(golden_csv))

    assert report.confusion == [[4, 1], [1, 4]]
    assert report.n_samples == 10
    assert report.accuracy == pytest.approx(0.8, abs=1e-15)
    assert report.precision_macro == pytest.approx(0.8, abs=1e-15)
    assert report.recall_macro == pytest.approx(0.8, abs=1e-15)
    assert report.f1_macro == pytest.approx(0.8, abs=1e-15)
    assert report.kappa_quadratic == pytest.approx(0.6, abs=1e-15)


@pytest.mark.slow
def test_toy_run_learns_separable_classes():
    """Тест: на хорошо разделимых данных модель достигает высокой точности."""
    spec = DatasetSpec(
        d_in=16,
        num_classes=4,
        counts={"train": 2000, "val": 400, "test_i": 400, "test_ii": 400},
        separation=4.0,
        seed=1,
    )
    splits = gen_synthetic(spec)
    config = ModelConfig(d_in=16, hidden=[32], embed_dim=8, num_classes=4, seed=1)

    record = fit(config, ScheduleConfig(), TrainConfig(), splits.train, splits.val)

    val_accuracy = record.selected.val.accuracy
    assert val_accuracy >= 0.95
    assert evaluate(record.best, splits.test_i).accuracy >= 0.93
    assert evaluate(record.best, splits.train).accuracy >= val_accuracy - 0.05
