"""Exception types raised across the package."""


class EdgeDtnError(Exception):
    """Base class for all package errors."""


class DomainError(EdgeDtnError, ValueError):
    """Argument outside the domain of a special function."""


class CoefficientPoleError(EdgeDtnError, ArithmeticError):
    """A DtN coefficient is singular at the requested wavenumber.

    ``factor`` is ``"h"`` when h_n(kappa R) vanishes (c_V blows up) and
    ``"z"`` when z_n(kappa R) vanishes (c_U blows up).
    """

    def __init__(self, n, factor, kappa=None):
        self.n = n
        self.factor = factor
        self.kappa = kappa
        what = "h_n" if factor == "h" else "z_n"
        msg = f"{what}(kappa R) vanishes for n={n}"
        if kappa is not None:
            msg += f" at kappa={kappa!r}"
        super().__init__(msg)


class MeshError(EdgeDtnError, ValueError):
    """Invalid or non-conforming mesh, or a malformed mesh file."""

    def __init__(self, msg, line=None):
        self.line = line
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)


class AssemblyError(EdgeDtnError, ValueError):
    """Finite element assembly failed, e.g. on a degenerate element."""


class SingularFactorError(EdgeDtnError, ArithmeticError):
    """Direct factorization met an exactly singular pivot."""


class ProbeSaturatedError(EdgeDtnError):
    """Rank probe returned as many directions as probe vectors."""

    def __init__(self, rank):
        self.rank = rank
        super().__init__(f"rank probe saturated at {rank}; increase the number of probes")


class ConfigError(EdgeDtnError, ValueError):
    """Invalid run configuration."""
