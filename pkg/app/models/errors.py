"""
Error hierarchy shared by the services, the CLI and the HTTP layer.

Every error carries a human readable ``detail`` and the process ``exit_code``
the CLI returns for it. Routers translate the exit code to an HTTP status.
"""


class FrailtyError(Exception):
    exit_code = 1

    def __init__(self, detail: str, exit_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self):
        return self.detail


# ------------------------
# Usage / configuration (exit 2)
# ------------------------
class ConfigError(FrailtyError):
    exit_code = 2


class Unsupported(FrailtyError):
    exit_code = 2


class DomainError(FrailtyError):
    exit_code = 2


# ------------------------
# Numerical failures (exit 1)
# ------------------------
class NoSignChange(FrailtyError):
    pass


class MaxIterations(FrailtyError):
    pass


class NonFiniteValue(FrailtyError):
    pass


class NumericalUnderflow(FrailtyError):
    pass


class BracketExpansionFailure(FrailtyError):
    pass


class NoSolution(FrailtyError):
    pass


# ------------------------
# Estimation (exit 3) and variance (exit 4)
# ------------------------
class NonConvergence(FrailtyError):
    exit_code = 3


class SingularJacobian(FrailtyError):
    exit_code = 4


class TooFewConverged(FrailtyError):
    exit_code = 4


def http_status_for(error: FrailtyError) -> int:
    if error.exit_code == 2:
        return 400
    if error.exit_code == 4:
        return 500
    return 422
