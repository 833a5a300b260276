"""
Интерфейс командной строки cenrecal.

Команды: gen-data, train, eval, ablate, dump-centroids, count-params.
Ошибки библиотеки выводятся в stderr цепочкой причин; код возврата 0 -
все выходные документы записаны, 1 - ошибка предметной области,
2 - ошибка аргументов.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .ablation import parse_variants, run_ablation
from .checkpoint import load_checkpoint, state_checksum
from .config import load_dataset_spec, load_run_config, read_json, resolve_data
from .data import SPLITS, gen_synthetic, load_csv, save_csv
from .errors import CenrecalError, ConfigError
from .model import MergeStrategy, count_flops, count_params
from .report import execute_run, write_json
from .trainer import evaluate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def _describe_error(error: BaseException) -> List[str]:
    """Цепочка сообщений: ошибка, технические детали, причины."""
    lines = []
    current: Optional[BaseException] = error
    prefix = "Ошибка"
    while current is not None:
        if isinstance(current, CenrecalError):
            lines.append(f"{prefix}: {current.get_user_message()}")
            if current.technical_details:
                lines.append(f"  детали: {current.technical_details}")
        else:
            lines.append(f"{prefix}: {type(current).__name__}: {current}")
        current = current.__cause__
        prefix = "Причина"
    return lines


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ожидалось целое число, получено {text!r}") from exc
    if value < 1:
        raise argparse.ArgumentTypeError(f"ожидалось число >= 1, получено {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ожидалось целое число, получено {text!r}") from exc
    if value < 0:
        raise argparse.ArgumentTypeError(f"ожидалось число >= 0, получено {value}")
    return value


def _variants(text: str) -> List[MergeStrategy]:
    try:
        return parse_variants(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(exc.message) from exc


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Генерирует четыре CSV-сплита и manifest.json."""
    spec = load_dataset_spec(args.spec)
    splits = gen_synthetic(spec)
    out_dir = Path(args.out)
    files: Dict[str, Dict[str, object]] = {}
    for split in SPLITS:
        dataset = getattr(splits, split)
        save_csv(dataset, out_dir / f"{split}.csv")
        files[split] = {
            "file": f"{split}.csv",
            "n_samples": len(dataset),
            "histogram": dataset.histogram(spec.num_classes),
        }
    manifest = {
        "format_version": 1,
        "version": __version__,
        "seed": spec.seed,
        "spec": read_json(args.spec, "спецификации"),
        "splits": files,
    }
    write_json(manifest, out_dir / "manifest.json")
    logger.info("Данные записаны в %s", out_dir)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Обучает модель и пишет контрольные точки и report.json."""
    loaded = load_run_config(args.config)
    config = loaded.config
    out_dir = Path(args.out) if args.out is not None else config.output_dir
    if out_dir is None:
        raise ConfigError("не задан каталог результатов (--out или output_dir)", field="output_dir")
    splits = resolve_data(config)
    seed = config.seed if args.seed is None else args.seed
    execute_run(
        loaded.document,
        config.seeded_model(seed),
        config.schedule,
        config.train_config(seed),
        splits,
        out_dir,
        record_timings=args.record_timings,
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Оценивает контрольную точку на CSV и пишет отчет с метриками."""
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    logger.debug("Контрольная сумма состояния: %s", state_checksum(checkpoint))
    report = evaluate(checkpoint, dataset, workers=args.workers)
    document = {"format_version": 1, **report.to_dict()}
    write_json(document, args.report)
    logger.info("Отчет записан: %s (accuracy=%.4f)", args.report, report.accuracy)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    """Запускает абляцию стратегий слияния."""
    loaded = load_run_config(args.config)
    splits = resolve_data(loaded.config)
    run_ablation(
        loaded.config,
        loaded.document,
        splits,
        args.variants,
        args.seeds,
        args.out,
        workers=args.workers,
    )
    return EXIT_OK


def cmd_dump_centroids(args: argparse.Namespace) -> int:
    """Выводит таблицу центроидов контрольной точки."""
    checkpoint = load_checkpoint(args.checkpoint)
    text = checkpoint.centroids.to_text()
    if args.out is None:
        sys.stdout.write(text)
    else:
        target = Path(args.out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        logger.info("Центроиды записаны: %s", target)
    return EXIT_OK


def cmd_count_params(args: argparse.Namespace) -> int:
    """Печатает число параметров и операций прямого прохода на образец."""
    model = load_run_config(args.config).config.model
    sys.stdout.write(f"params: {count_params(model)}\n")
    sys.stdout.write(f"flops_per_sample: {count_flops(model)}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Создает парсер аргументов со всеми подкомандами."""
    parser = argparse.ArgumentParser(
        prog="cenrecal",
        description="Перекалибровка признаков по центроидам классов",
    )
    parser.add_argument("--verbose", action="store_true", help="Подробный журнал (DEBUG)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="Сгенерировать синтетические сплиты")
    gen.add_argument("--spec", type=Path, required=True, help="Спецификация данных (JSON)")
    gen.add_argument("--out", type=Path, required=True, help="Каталог для CSV и manifest.json")
    gen.set_defaults(handler=cmd_gen_data)

    train = commands.add_parser("train", help="Обучить модель")
    train.add_argument("--config", type=Path, required=True, help="Конфигурация запуска (JSON)")
    train.add_argument("--out", type=Path, default=None, help="Каталог результатов")
    train.add_argument("--seed", type=_non_negative_int, default=None, help="Сид запуска")
    train.add_argument(
        "--record-timings",
        action="store_true",
        help="Добавить в отчет время на батч (отчет перестает быть побайтно воспроизводимым)",
    )
    train.set_defaults(handler=cmd_train)

    evaluation = commands.add_parser("eval", help="Оценить контрольную точку")
    evaluation.add_argument("--checkpoint", type=Path, required=True, help="Контрольная точка")
    evaluation.add_argument("--data", type=Path, required=True, help="CSV с данными")
    evaluation.add_argument("--report", type=Path, required=True, help="Куда записать отчет")
    evaluation.add_argument("--workers", type=_positive_int, default=1, help="Число потоков")
    evaluation.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="Абляция стратегий слияния")
    ablate.add_argument("--config", type=Path, required=True, help="Конфигурация запуска (JSON)")
    ablate.add_argument(
        "--variants",
        type=_variants,
        default=list(MergeStrategy),
        help="Варианты через запятую: concat,add,recal_only,backbone_only",
    )
    ablate.add_argument("--seeds", type=_positive_int, default=1, help="Число сидов k")
    ablate.add_argument("--out", type=Path, required=True, help="Каталог результатов")
    ablate.add_argument("--workers", type=_positive_int, default=1, help="Число процессов")
    ablate.set_defaults(handler=cmd_ablate)

    dump = commands.add_parser("dump-centroids", help="Вывести таблицу центроидов")
    dump.add_argument("--checkpoint", type=Path, required=True, help="Контрольная точка")
    dump.add_argument("--out", type=Path, default=None, help="Файл (по умолчанию stdout)")
    dump.set_defaults(handler=cmd_dump_centroids)

    count = commands.add_parser("count-params", help="Сложность модели")
    count.add_argument("--config", type=Path, required=True, help="Конфигурация запуска (JSON)")
    count.set_defaults(handler=cmd_count_params)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Разбирает аргументы и выполняет команду.

    Returns:
        int: Код возврата.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    _configure_logging(args.verbose)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except CenrecalError as exc:
        for line in _describe_error(exc):
            sys.stderr.write(line + "\n")
        logger.debug("Трассировка ошибки", exc_info=True)
        return EXIT_ERROR
    except OSError as exc:
        sys.stderr.write(f"Ошибка ввода-вывода: {exc}\n")
        return EXIT_ERROR
