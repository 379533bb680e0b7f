"""Error taxonomy shared by every module.

Each error carries a machine-readable ``code`` (the class name) plus an
optional ``details`` record so the HTTP layer and the CLI can serialize
failures uniformly.
"""

from __future__ import annotations

from typing import Any


class AianoError(Exception):
    """Base class; ``code`` doubles as the wire-level error identifier."""

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.details = details

    @property
    def code(self) -> str:
        return self.__class__.__name__

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.details:
            out["details"] = self.details
        return out


class ValidationError(AianoError):
    """Input failed structural validation (HTTP 422 family)."""


class NotFoundError(AianoError):
    """Referenced resource does not exist (HTTP 404 family)."""


class ConflictError(AianoError):
    """Concurrent-edit or state conflict (HTTP 409 family)."""


class ProviderFailure(AianoError):
    """Upstream LLM provider failure (HTTP 502 family)."""


# --- project configuration ---

class SchemaInvalid(ValidationError):
    pass


class BlockGraphInvalid(ValidationError):
    pass


class BlockInvalid(ValidationError):
    pass


class DuplicateLevelLabel(ValidationError):
    pass


class LevelInvalid(ValidationError):
    pass


class ProjectNotFound(NotFoundError):
    pass


# --- corpus ---

class PayloadNotArray(ValidationError):
    pass


class DocumentNotFound(NotFoundError):
    pass


class EmptyQuery(ValidationError):
    pass


# --- block engine ---

class MissingDependency(ValidationError):
    pass


class UnknownField(ValidationError):
    pass


class UnknownLevel(ValidationError):
    pass


class PlainModeHasNoPrompt(ValidationError):
    pass


# --- llm gateway ---

class ProviderError(ProviderFailure):
    pass


class AuthError(ProviderFailure):
    pass


class RateLimited(ProviderFailure):
    pass


class Timeout(ProviderFailure):
    pass


class MalformedResponse(ProviderFailure):
    pass


# --- annotation store ---

class EntryNotFound(NotFoundError):
    pass


class EntryInvalid(ValidationError):
    pass


class VersionConflict(ConflictError):
    def __init__(self, message: str = "", stored_version: int | None = None, **details: Any):
        if stored_version is not None:
            details["stored_version"] = stored_version
        super().__init__(message, **details)


class SpanOutOfBounds(ValidationError):
    pass


class SnapshotMismatch(ConflictError):
    pass


# --- evaluation ---

class EmptyGold(ValidationError):
    pass


class EmptyList(ValidationError):
    pass


class ZeroBaseline(ValidationError):
    pass


# --- export / import ---

class UnknownBlock(ValidationError):
    pass


class NoEntries(ValidationError):
    pass


class UnsupportedVersion(ValidationError):
    pass


class ValidationFailed(ValidationError):
    pass


# --- service ---

class BindFailed(AianoError):
    pass


class StoreUnavailable(AianoError):
    pass
