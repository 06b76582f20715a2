class HullFacetsError(Exception):
    exit_code: int = 2


class DomainError(HullFacetsError, ValueError):
    exit_code = 1


class InvalidParameter(HullFacetsError, ValueError):
    exit_code = 1


class InvalidArgs(HullFacetsError, ValueError):
    exit_code = 1


class QuadratureFailure(HullFacetsError):
    pass


class ConvergenceFailure(HullFacetsError):
    pass


class NonMonotoneSurvival(HullFacetsError):
    pass


class ZeroVector(HullFacetsError):
    pass


class DegenerateInput(HullFacetsError):
    pass


class NonPositiveEpsilon(HullFacetsError):
    pass


class NoSolutionInRange(HullFacetsError):
    pass


class Disagreement(HullFacetsError):
    exit_code = 3
