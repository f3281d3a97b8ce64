"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to distinct
process exit statuses.
"""


class AoiPriceError(Exception):
    exit_code = 1


class NonStochasticRow(AoiPriceError, ValueError):
    exit_code = 10


class Reducible(AoiPriceError, ValueError):
    exit_code = 11


class EmptyTrace(AoiPriceError, ValueError):
    exit_code = 12


class SingleLocationTrace(AoiPriceError, ValueError):
    exit_code = 13


class TabooCoversAll(AoiPriceError, ValueError):
    exit_code = 14


class InvalidInstance(AoiPriceError, ValueError):
    exit_code = 15


class NoConvergence(AoiPriceError, RuntimeError):
    exit_code = 20

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StructureViolation(AoiPriceError):
    """Greedy policy is not of threshold form; ``pairs`` lists offending (x, l)."""

    exit_code = 21

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = list(pairs)


class Uncalibratable(AoiPriceError):
    exit_code = 22

    def __init__(self, message, prices=None, achieved=None, ok=None):
        super().__init__(message)
        self.prices = prices
        self.achieved = achieved
        self.ok = ok


class InfeasibleStart(AoiPriceError):
    exit_code = 30


NoFeasibleStart = InfeasibleStart


class SearchSpaceTooLarge(AoiPriceError):
    exit_code = 31


class MemoryGuard(AoiPriceError):
    exit_code = 32


class ConfigError(AoiPriceError):
    exit_code = 40
