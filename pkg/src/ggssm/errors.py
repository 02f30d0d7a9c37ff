"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class GGSSMError(Exception):
    """Base class for all library errors."""


class ContractViolation(GGSSMError, ValueError):
    """A caller broke a documented precondition (shape, index range, ...)."""


class InvalidInput(GGSSMError, ValueError):
    """Input data is malformed, e.g. contains NaN or infinity."""


class InvalidConfig(GGSSMError, ValueError):
    """A configuration value is out of its legal range."""


class GraphDisconnected(GGSSMError):
    """The candidate graph does not span all nodes.

    ``components`` holds one representative node from each of two
    components that cannot reach each other.
    """

    def __init__(self, message: str, components: tuple[int, int]):
        super().__init__(message)
        self.components = components


class OracleSizeError(GGSSMError, ValueError):
    """A brute-force oracle was asked for an instance larger than it supports."""


class EmptyStructure(GGSSMError, IndexError):
    """Extraction from an empty container."""


class TrainingDiverged(GGSSMError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class InvariantViolation(GGSSMError):
    """A checked invariant failed; harness and selftest report these as failures."""
