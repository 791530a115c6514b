"""Exception hierarchy shared by every module of the package."""


class CmdpError(Exception):
    """Base class for all errors raised by cmdpbounds."""


class ValidationError(CmdpError, ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NotStochastic(ValidationError):
    pass


class BadDiscount(ValidationError):
    pass


class BadDistribution(ValidationError):
    pass


class SingularSystem(CmdpError):
    pass


class SolverError(CmdpError):
    """Raised when an LP solve does not end in an optimal basis."""


class Infeasible(SolverError):
    pass


class Unbounded(SolverError):
    pass


class NumericalFailure(SolverError):
    pass


class InfeasibleInstance(Infeasible):
    """A CMDP (possibly with relaxed thresholds) has no feasible occupation measure."""


class NotOptimal(CmdpError):
    """A bound was requested from a nominal solve whose status is not optimal."""


class DegenerateBasis(CmdpError):
    pass


class SingularR(CmdpError):
    pass


class InfeasibleVertex(CmdpError):
    pass


class AuxiliaryInfeasible(CmdpError):
    pass


class ZeroTrueValue(CmdpError, ZeroDivisionError):
    pass


class EmptyBin(CmdpError, ValueError):
    pass


class WrongEnvironment(CmdpError, TypeError):
    pass
