#!/usr/bin/env python
"""
Простой скрипт для запуска cenrecal.

Использование:
    poetry run python run.py train --config run.json --out runs/toy
    или
    python run.py --help
"""

if __name__ == "__main__":
    from src.cenrecal.main import main
    main()
