"""Exception types raised across the package."""


class TransportsensError(Exception):
    """Base class for all package errors."""


class SchemaError(TransportsensError):
    """A column-role configuration does not match the data file."""


class ValidationError(TransportsensError):
    """Input data violates a structural requirement."""


class PositivityError(ValidationError):
    """A study has an empty treatment or control arm."""


class SeparationError(TransportsensError):
    """A logistic fit is (quasi-)separated; weights would be degenerate."""


class ConvergenceError(TransportsensError):
    """An iterative solver did not converge and no override was given."""


class AlignmentError(TransportsensError):
    """A weight vector does not line up with the dataset it claims to weight."""


class DegenerateArmError(TransportsensError):
    """A treatment arm carries zero inverse-propensity mass."""


class InsufficientDataError(TransportsensError):
    """Too few observations for the requested computation."""


class InconsistencyError(TransportsensError):
    """Inputs contradict a bound or identity that must hold by construction."""


class OverlapError(TransportsensError):
    """A study lacks covariate overlap with the target sample."""


class ReliabilityError(TransportsensError):
    """Too many bootstrap replicates failed for the result to be trusted."""


class SingularityError(TransportsensError):
    """A required linear system is singular or numerically unstable."""
