"""Exception hierarchy shared by every module.

Each exception carries a short machine-readable ``code`` that the CLI prints
on stderr, and a ``numeric`` flag that selects exit status 3 instead of 2.
"""

from __future__ import annotations


class ScalePlanError(Exception):
    code = "error"
    numeric = False


class InvalidParams(ScalePlanError, ValueError):
    code = "invalid-params"


class NumericFailure(ScalePlanError, ArithmeticError):
    code = "numeric-failure"
    numeric = True


class UnreachableTarget(ScalePlanError, ValueError):
    code = "unreachable-target"

    def __init__(self, message: str, max_improvement_pct: float | None = None):
        super().__init__(message)
        self.max_improvement_pct = max_improvement_pct


class DegenerateTarget(ScalePlanError, ValueError):
    code = "degenerate-target"


class InsufficientData(ScalePlanError, ValueError):
    code = "insufficient-data"


class InsufficientHeldout(ScalePlanError, ValueError):
    code = "insufficient-heldout"


class FitFailure(ScalePlanError, RuntimeError):
    code = "fit-failure"
    numeric = True


class NoEquivalence(ScalePlanError, ValueError):
    code = "no-equivalence"


class ShapeError(ScalePlanError, ValueError):
    code = "shape-error"


class EmptyInput(ScalePlanError, ValueError):
    code = "empty-input"


class DuplicateInput(ScalePlanError, ValueError):
    code = "duplicate-input"


class UnknownLanelet(ScalePlanError, KeyError):
    code = "unknown-lanelet"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else self.code


class DegenerateInput(ScalePlanError, ValueError):
    code = "degenerate-input"


class InvalidLabel(ScalePlanError, ValueError):
    code = "invalid-label"


class InvalidExponent(ScalePlanError, ValueError):
    code = "invalid-exponent"


class OutOfRange(ScalePlanError, ValueError):
    code = "out-of-range"


class DataError(ScalePlanError, ValueError):
    """Malformed input file or record."""

    code = "data-error"
