"""
Базовые исключения для приложения
"""


class NavRobustException(Exception):
    """Базовое исключение; exit_code используется командной строкой"""

    exit_code = 1
    default_detail = "Ошибка выполнения"

    def __init__(self, detail: str = ""):
        self.detail = detail or self.default_detail
        super().__init__(self.detail)


class ConfigException(NavRobustException):
    """Исключение для ошибок конфигурации"""

    exit_code = 2
    default_detail = "Ошибка конфигурации"


class DatasetException(NavRobustException):
    """Исключение для ошибок набора данных и файлов"""

    exit_code = 3
    default_detail = "Ошибка набора данных"


class ValidationException(DatasetException):
    """Исключение для валидации данных"""

    default_detail = "Ошибка валидации данных"


# Имя из описания формата сценариев
ValidationError = ValidationException


class NumericException(NavRobustException):
    """Исключение для численных ошибок и нарушенных предусловий"""

    exit_code = 4
    default_detail = "Численная ошибка"


class NonFiniteError(NumericException):
    default_detail = "Обнаружено нечисловое значение (NaN/inf)"


# Геометрия
class HorizonExceedsData(NumericException):
    default_detail = "Горизонт превышает длительность траектории"


class TrajectoryTooShort(NumericException):
    default_detail = "Слишком короткая траектория"


# Сценарии
class GenerationFailed(DatasetException):
    default_detail = "Исчерпан лимит попыток генерации сценария"


class InvalidFraction(ConfigException):
    default_detail = "Доля должна лежать в интервале (0, 1)"


class ScenarioIOError(DatasetException):
    default_detail = "Ошибка чтения или записи файла"


class SchemaVersionMismatch(DatasetException):
    default_detail = "Неподдерживаемая версия схемы"


class MissingDataset(DatasetException):
    default_detail = "Набор данных не найден"


# Симуляция
class NonPositiveGap(NumericException):
    default_detail = "Дистанция до лидера должна быть положительной"


class HorizonMismatch(NumericException):
    default_detail = "Горизонт плана превышает горизонт эксперта"


# Метрики
class ZeroWeightSum(NumericException):
    default_detail = "Сумма весов равна нулю"


class ZeroOrigin(NumericException):
    default_detail = "EPDMS на исходном стиле должен быть положительным"


# Нейросетевое ядро и планировщики
class DimMismatch(NumericException):
    default_detail = "Несогласованные размерности"


class StepOutOfRange(NumericException):
    default_detail = "Шаг диффузии вне допустимого диапазона"


class EmptyAnchors(NumericException):
    default_detail = "Пустой набор якорных траекторий"


class TooFewStyles(ConfigException):
    default_detail = "Нужно как минимум два стиля"


class TooFewSamples(NumericException):
    default_detail = "Недостаточно траекторий для кластеризации"


class CheckpointIOError(DatasetException):
    default_detail = "Ошибка чтения или записи контрольной точки"
