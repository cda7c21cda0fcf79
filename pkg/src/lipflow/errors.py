"""Exception types shared across the package."""


class LipflowError(Exception):
    """Base class for all errors raised by lipflow."""


class ParseError(LipflowError):
    """Syntax or semantic error in expression source text."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(LipflowError):
    """Domain error during expression evaluation (sqrt of negative, division by zero)."""


class RegionError(LipflowError):
    """Invalid box, point outside the box, or bad sub-box."""


class GridMismatchError(LipflowError):
    """Two sampled functions do not share region and resolution."""


class SupportError(LipflowError):
    """A test-function support ball violates a containment requirement."""


class EscapeError(LipflowError):
    """A trajectory left the region where the operation requires it to stay."""


class IntegrationError(LipflowError):
    """Flow integration failed (step budget exceeded, bad configuration)."""


class LipschitzDeclarationError(LipflowError):
    """A declared Lipschitz constant is contradicted by sampled quotients."""


class ScenarioError(LipflowError):
    """Scenario file is malformed or references undefined names."""
