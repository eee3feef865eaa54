"""
Базовый middleware для централизованной обработки ошибок команд
"""
import logging
import traceback
from typing import Any, Callable

from navrobust.core import settings
from navrobust.core.exceptions import NavRobustException, NonFiniteError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1


class ErrorHandlingMiddleware:
    """Оборачивает обработчик команды и переводит исключения в коды возврата"""

    def __init__(self, get_response: Callable[..., Any]):
        self.get_response = get_response

    def __call__(self, *args: Any, **kwargs: Any) -> int:
        try:
            self.get_response(*args, **kwargs)
        except Exception as exception:
            return self.process_exception(exception)
        return EXIT_OK

    def process_exception(self, exception: Exception) -> int:
        """Обработка исключений и логирование"""
        if isinstance(exception, FloatingPointError):
            exception = NonFiniteError(str(exception))

        if isinstance(exception, NavRobustException):
            logger.error(f"{type(exception).__name__}: {exception.detail}")
            code = exception.exit_code
        else:
            logger.error(f"Внутренняя ошибка: {exception}")
            code = EXIT_FAILURE

        if settings.DEBUG:
            logger.error(traceback.format_exc())
        return code
