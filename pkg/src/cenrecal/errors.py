"""
Иерархия исключений cenrecal.

Все ошибки библиотеки наследуются от CenrecalError и несут короткое
сообщение для пользователя CLI и (опционально) технические детали.
"""

from typing import Optional


class CenrecalError(Exception):
    """Базовое исключение для ошибок cenrecal."""

    def __init__(self, message: str, technical_details: Optional[str] = None):
        """
        Инициализирует исключение.

        Args:
            message: Сообщение об ошибке.
            technical_details: Дополнительные технические детали (опционально).
        """
        self.message = message
        self.technical_details = technical_details
        super().__init__(self.message)

    def get_user_message(self) -> str:
        """
        Возвращает понятное сообщение для пользователя.

        Returns:
            str: Понятное сообщение об ошибке.
        """
        return self.message


class ShapeError(CenrecalError):
    """Несовпадение размерностей тензоров."""

    def get_user_message(self) -> str:
        """Возвращает понятное сообщение для пользователя."""
        return f"Несовпадение размерностей: {self.message}"


class NumericError(CenrecalError):
    """Нечисловое (NaN/Inf) значение там, где требуется конечное."""


class LabelError(CenrecalError):
    """Метка класса вне диапазона [0, M)."""


class FreezeViolationError(CenrecalError):
    """Попытка изменить замороженную таблицу центроидов."""

    def get_user_message(self) -> str:
        """Возвращает понятное сообщение для пользователя."""
        return "Таблица центроидов заморожена и не может быть изменена."


class CheckpointError(CenrecalError):
    """Базовая ошибка чтения/записи контрольной точки."""


class CheckpointNotFoundError(CheckpointError):
    """Файл контрольной точки не найден."""

    def get_user_message(self) -> str:
        """Возвращает понятное сообщение для пользователя."""
        return f"Контрольная точка не найдена: {self.message}"


class CheckpointVersionError(CheckpointError):
    """Неподдерживаемая версия формата контрольной точки."""


class CheckpointShapeError(CheckpointError):
    """Форма массива в контрольной точке не согласуется с конфигурацией."""


class DataParseError(CenrecalError):
    """Ошибка разбора CSV-файла с данными."""

    def __init__(
        self,
        message: str,
        line_number: Optional[int] = None,
        technical_details: Optional[str] = None,
    ):
        """
        Инициализирует исключение.

        Args:
            message: Сообщение об ошибке.
            line_number: Номер строки файла (с 1, включая заголовок).
            technical_details: Дополнительные технические детали (опционально).
        """
        self.line_number = line_number
        if line_number is not None:
            message = f"строка {line_number}: {message}"
        super().__init__(message, technical_details)


class ConfigError(CenrecalError):
    """Некорректный документ конфигурации или спецификации данных."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        technical_details: Optional[str] = None,
    ):
        """
        Инициализирует исключение.

        Args:
            message: Сообщение об ошибке.
            field: Имя поля, вызвавшего ошибку (если известно).
            technical_details: Дополнительные технические детали (опционально).
        """
        self.field = field
        if field is not None and field not in message:
            message = f"{field}: {message}"
        super().__init__(message, technical_details)


class EmptyInputError(CenrecalError):
    """Пустой вход там, где требуется хотя бы один образец."""
