"""Exception hierarchy shared by the library and the command line.

The CLI maps :class:`InputError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""


class TreejogError(Exception):
    pass


class InputError(TreejogError, ValueError):
    """Malformed or inconsistent input data."""


class NexusParseError(InputError):
    pass


class TopologyMismatchError(InputError):
    pass


class MissingStateError(InputError):
    """An operation needing complete node states met a missing entry."""


class EmptySimulationError(TreejogError):
    """No simulated trait survived to any leaf."""


class NumericalError(TreejogError, ArithmeticError):
    pass


class DegenerateModelError(NumericalError):
    pass


class ZeroLikelihoodError(NumericalError):
    pass
