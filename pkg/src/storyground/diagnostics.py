"""Diagnostics shared by the scene-table and story parsers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


class ParseMode(Enum):
    """Strict fails on any error; lenient downgrades recoverable errors and drops
    the offending content instead."""

    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class ParseDiagnostic:
    """One parser finding, anchored to a 1-based (line, column) in the input."""

    severity: Severity
    line: int
    column: int
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity.value}: [{self.code}] {self.message}"


class DiagnosticSink:
    """Collects diagnostics and tracks whether any error was recorded."""

    def __init__(self, mode: ParseMode) -> None:
        self.mode = mode
        self.items: list[ParseDiagnostic] = []

    def error(self, line: int, column: int, code: str, message: str) -> None:
        """Record an error; downgraded to a warning in lenient mode."""
        severity = Severity.ERROR if self.mode is ParseMode.STRICT else Severity.WARNING
        self.items.append(ParseDiagnostic(severity, line, column, code, message))

    def hard_error(self, line: int, column: int, code: str, message: str) -> None:
        """Record an error that stays an error in both modes."""
        self.items.append(ParseDiagnostic(Severity.ERROR, line, column, code, message))

    def warning(self, line: int, column: int, code: str, message: str) -> None:
        self.items.append(ParseDiagnostic(Severity.WARNING, line, column, code, message))

    @property
    def failed(self) -> bool:
        return any(d.severity is Severity.ERROR for d in self.items)
