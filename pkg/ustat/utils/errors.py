from fastapi import Request, status
from fastapi.responses import JSONResponse
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from typing import Optional
import logging

logger = logging.getLogger("ustat-errors")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DOMAIN = 3


class ConfigError(ValueError):
    """Bad configuration file, flags or names."""


class DataParseError(ConfigError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None, path: Optional[str] = None):
        self.row = row
        self.column = column
        self.path = path
        location = []
        if path:
            location.append(f"file {path}")
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class DomainError(ValueError):
    """Numeric or domain violation in an operation's inputs."""


class EmptyProblemError(DomainError):
    pass


class InvalidDegreesError(DomainError):
    pass


class RankOutOfRangeError(DomainError):
    pass


class EnumerationCapError(DomainError):
    pass


class EmptyTermSetError(DomainError):
    pass


class SchemeMismatchError(DomainError):
    pass


class BoundInputError(DomainError):
    pass


class PermutationError(DomainError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DomainError):
        return EXIT_DOMAIN
    return EXIT_UNEXPECTED


async def domain_exception_handler(request: Request, exc: DomainError):
    logger.warning("Domain error on path %s: %s", request.url.path, exc)
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={
            "error": type(exc).__name__,
            "detail": "The request is outside the domain of the operation.",
            "message": str(exc)
        }
    )

async def config_exception_handler(request: Request, exc: ConfigError):
    logger.warning("Configuration error on path %s: %s", request.url.path, exc)
    return JSONResponse(
        status_code=status.HTTP_400_BAD_REQUEST,
        content={
            "error": type(exc).__name__,
            "detail": "The request names an unknown option or carries malformed data.",
            "message": str(exc)
        }
    )

async def validation_exception_handler(request: Request, exc: RequestValidationError):
    logger.warning("Validation error on path %s", request.url.path)
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={
            "error": "ValidationError",
            "detail": "Request body or query parameter validation failed.",
            "issues": jsonable_encoder(exc.errors())
        }
    )

async def global_exception_handler(request: Request, exc: Exception):
    logger.exception("Unhandled exception occurred")
    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={
            "error": "InternalServerError",
            "detail": "An unexpected error occurred on the server.",
            "message": str(exc)
        }
    )
