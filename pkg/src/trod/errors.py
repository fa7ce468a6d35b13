"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class TrodError(Exception):
    """Base class for all engine errors."""


# --- store ---------------------------------------------------------------

class DuplicateTable(TrodError):
    pass


class UnknownTable(TrodError):
    pass


class UnknownColumn(TrodError):
    pass


class ConstraintViolation(TrodError):
    """Schema type mismatch, missing required column, or duplicate primary key."""


class AbortRequested(TrodError):
    """Raised by a transaction body to abort: no state change, no commit seq consumed."""


class StaleBeforeImage(TrodError):
    """An applied write's before-image does not match current row state."""


class CheckpointCorrupt(TrodError):
    pass


# --- runtime -------------------------------------------------------------

class DuplicateApp(TrodError):
    pass


class UnknownApp(TrodError):
    pass


class UnknownHandler(TrodError):
    pass


class ScheduleInvalid(TrodError):
    pass


class MissingCodeVersion(TrodError):
    pass


# --- provenance ----------------------------------------------------------

class CorruptTrace(TrodError):
    pass


# --- querylang -----------------------------------------------------------

class QuerySyntaxError(TrodError):
    """Parse failure. Carries the character position and what was expected."""

    def __init__(self, position: int, expected: str, found: str = ""):
        self.position = position
        self.expected = expected
        self.found = found
        detail = f"expected {expected}" + (f", found {found!r}" if found else "")
        super().__init__(f"syntax error at position {position}: {detail}")


class TypeMismatch(TrodError):
    pass


# --- replay / retro ------------------------------------------------------

class UnknownReqId(TrodError):
    pass


class ReplayError(TrodError):
    pass
