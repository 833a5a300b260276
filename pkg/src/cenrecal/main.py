"""
Cenrecal - перекалибровка признаков по центроидам классов.

Главный модуль приложения - точка входа.
"""

import sys
from pathlib import Path

# Добавляем корневую директорию проекта в путь для поддержки прямого запуска
if __name__ == "__main__":
    project_root = Path(__file__).parent.parent.parent
    if str(project_root) not in sys.path:
        sys.path.insert(0, str(project_root))

# Используем абсолютный импорт для поддержки прямого запуска
try:
    from .cli import main as cli_main
except ImportError:
    from src.cenrecal.cli import main as cli_main


def main() -> None:
    """
    Главная функция запуска приложения.

    Выполняет команду из аргументов и завершает процесс с ее кодом возврата.
    """
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
