"""Exception hierarchy shared by every module.

ValidationError subclasses map to CLI exit code 1, PropertyViolation to 2.
"""


class LabError(Exception):
    "Base class for all errors raised by the laboratory."
    exit_code = 1


class ValidationError(LabError, ValueError):
    "Raised when an input violates a documented precondition."
    exit_code = 1


class PropertyViolation(LabError):
    "Raised when a computed result contradicts a proven inequality."
    exit_code = 2


class NonMonotone(ValidationError):
    "Knot coordinates are not strictly increasing."


class BadEndpoints(ValidationError):
    "Knots do not start at (0, 0) and end at (1, 1)."


class TooFewKnots(ValidationError):
    "A distribution needs at least two knots."


class OutOfSupport(ValidationError):
    "Value lies outside [0, 1]."


class OutOfRange(ValidationError):
    "Probability lies outside [0, 1]."


class BadRange(ValidationError):
    "Integration range is reversed or leaves [0, 1]."


class DegenerateTruncation(ValidationError):
    "Truncating at the top of the support leaves no mass."


class DegenerateSupport(ValidationError):
    "Support endpoints coincide."


class BadLambda(ValidationError):
    "Quantile parameter must lie strictly inside (0, 1)."


class DegenerateStart(ValidationError):
    "A ladder cannot start at the top of the support."


class DegenerateCost(ValidationError):
    "Cost outside the unit support."


class BadAlpha(ValidationError):
    "Mixture weight must lie in [0, 1]."


class BadCount(ValidationError):
    "A count argument is below its minimum."


class UnknownMechanism(ValidationError):
    "Mechanism identifier is not recognised."


class InstanceFormatError(ValidationError):
    "Instance or distribution JSON does not match the file contract."


class NumericalInstability(LabError):
    "Simplex pivot magnitudes left the guarded range; rescale the instance."
    exit_code = 2
