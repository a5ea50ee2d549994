"""Exception types shared across the package.

Hard contract violations raise; recoverable conditions (CG hitting its
iteration cap, an infeasible projection) are reported as flags on results
instead, so long-running attack loops are never killed mid-run.
"""


class PoisonbenchError(Exception):
    """Base class for all package errors."""


class DimMismatch(PoisonbenchError):
    """Operand dimensions are incompatible."""


class NonFiniteIterate(PoisonbenchError):
    """NaN/Inf appeared inside an iterative solver."""


class NonFiniteGradient(PoisonbenchError):
    """A gradient evaluation produced NaN/Inf."""


class IndexOutOfRange(PoisonbenchError):
    """A row index does not address the dataset."""


class BadMagic(PoisonbenchError):
    """IDX file magic number is wrong."""


class CountMismatch(PoisonbenchError):
    """IDX image and label counts disagree."""


class TruncatedFile(PoisonbenchError):
    """IDX file ended before the advertised payload."""


class EmptyClass(PoisonbenchError):
    """A requested class has no rows."""


class BadFractions(PoisonbenchError):
    """Split fractions do not sum to one."""


class BudgetViolation(PoisonbenchError):
    """A poison set does not match its budget."""


class NotBinary(PoisonbenchError):
    """Attack requires a two-class dataset."""


class NotSvm(PoisonbenchError):
    """Attack requires an SVM victim."""


class ProvenanceMismatch(PoisonbenchError):
    """Poisoned rows were not produced by the given generator."""


class ConfigError(PoisonbenchError):
    """Experiment configuration is invalid (unknown keys, bad values, knowledge gating)."""


class IoError(PoisonbenchError):
    """Report files could not be written."""
