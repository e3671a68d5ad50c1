#!/usr/bin/env python3
"""
Exception hierarchy for the metastability toolkit
Validation problems are also ValueErrors, numerical breakdowns ArithmeticErrors
"""


class MetastabilityError(Exception):
    """Root of every error raised by this package"""


class ValidationError(MetastabilityError, ValueError):
    """Input violates a documented precondition"""


class NumericalError(MetastabilityError, ArithmeticError):
    """A solver or integrator could not deliver the requested accuracy"""


# chain-core
class DuplicateLabel(ValidationError):
    pass


class NonPositiveRate(ValidationError):
    pass


class NotIrreducible(ValidationError):
    def __init__(self, message, unreachable=()):
        super().__init__(message)
        self.unreachable = list(unreachable)


class DimensionMismatch(ValidationError):
    pass


class NotReversible(ValidationError):
    def __init__(self, message, worst_pair=None, violation=None):
        super().__init__(message)
        self.worst_pair = worst_pair
        self.violation = violation


class SolverFailure(NumericalError):
    pass


class DirichletMismatch(NumericalError):
    """The two expressions of the Dirichlet form disagree"""


# trace
class StateNotFound(ValidationError, KeyError):
    def __str__(self):
        # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class TooSmall(ValidationError):
    pass


class EmptySubset(ValidationError):
    pass


class SubsetTooLarge(ValidationError):
    pass


class StartOutsideSubset(ValidationError):
    pass


# potential
class OverlappingSets(ValidationError):
    pass


class StateInTargetSet(ValidationError):
    pass


class NotMeanZero(ValidationError):
    pass


class ODEStepFailure(NumericalError):
    pass


class NotBirthDeath(ValidationError):
    pass


# meta-analysis
class PartitionInvalid(ValidationError):
    pass


class GridTooSmall(ValidationError):
    pass


class MissingGateState(ValidationError):
    pass


class NegativeRate(ValidationError):
    pass


# models
class StateSpaceTooLarge(ValidationError):
    pass


class SpecInvalid(ValidationError):
    pass


class OverlappingNeighborhoods(SpecInvalid):
    pass


class HVanishesOffZeros(SpecInvalid):
    pass


class QuadratureFailure(NumericalError):
    pass


class KappaNotTwo(ValidationError):
    pass


# montecarlo
class InvalidHorizon(ValidationError):
    pass


class StartOutsideWells(ValidationError):
    pass


class InsufficientData(MetastabilityError):
    """A well was never visited; reported by callers rather than fatal"""

    def __init__(self, message, wells=()):
        super().__init__(message)
        self.wells = list(wells)


# cli
class ConfigInvalid(ValidationError):
    pass


class ResourceLimit(MetastabilityError):
    pass
