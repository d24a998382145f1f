"""Exception taxonomy shared across ragforge modules.

Every error carries a stable ``code`` string; the HTTP layer surfaces these
codes verbatim in error bodies, so the set below is a closed contract.
"""

from __future__ import annotations

from typing import Any


class RagforgeError(Exception):
    """Base class for all ragforge errors."""

    code = "Internal"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details


class NoDocuments(RagforgeError):
    code = "NoDocuments"


class IoError(RagforgeError):
    code = "IoError"

    def __init__(self, message: str, path: str | None = None, **details: Any) -> None:
        super().__init__(message, path=path, **details)
        self.path = path


class EmptyText(RagforgeError):
    code = "EmptyText"

    def __init__(self, message: str, index: int | None = None, **details: Any) -> None:
        super().__init__(message, index=index, **details)
        self.index = index


class ProviderUnavailable(RagforgeError):
    code = "ProviderUnavailable"

    def __init__(self, message: str, attempts: int = 1, **details: Any) -> None:
        super().__init__(message, attempts=attempts, **details)
        self.attempts = attempts


class DimensionMismatch(RagforgeError):
    code = "DimensionMismatch"


class PromptTooLarge(RagforgeError):
    code = "PromptTooLarge"


class JsonNotFound(RagforgeError):
    code = "JsonNotFound"


class KeyMissing(RagforgeError):
    code = "KeyMissing"

    def __init__(self, key: str, **details: Any) -> None:
        super().__init__(f"key {key!r} not present in JSON object", key=key, **details)
        self.key = key


class NotAStringArray(RagforgeError):
    code = "NotAStringArray"


class IndexMissing(RagforgeError):
    code = "IndexMissing"

    def __init__(self, message: str, key: Any = None, **details: Any) -> None:
        super().__init__(message, **details)
        self.key = key


class EmptyQuery(RagforgeError):
    code = "EmptyQuery"


class TemplateError(RagforgeError):
    code = "TemplateError"

    def __init__(self, step_name: str, placeholder: str, message: str | None = None) -> None:
        super().__init__(
            message or f"step {step_name!r}: unresolved placeholder {{{placeholder}}}",
            step_name=step_name,
            placeholder=placeholder,
        )
        self.step_name = step_name
        self.placeholder = placeholder


class StepFailure(RagforgeError):
    code = "StepFailure"

    def __init__(self, index: int, cause: BaseException, step_name: str = "") -> None:
        super().__init__(
            f"step {index} ({step_name or 'unknown'}) failed: {cause}",
            index=index,
            step_name=step_name,
        )
        self.index = index
        self.step_name = step_name
        self.cause = cause


class IncompatibleOverride(RagforgeError):
    code = "IncompatibleOverride"


class ReplayDivergence(RagforgeError):
    code = "ReplayDivergence"

    def __init__(self, index: int, message: str) -> None:
        super().__init__(message, index=index)
        self.index = index


class RunInProgress(RagforgeError):
    code = "RunInProgress"
