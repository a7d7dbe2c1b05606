"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class RootoptError(Exception):
    exit_code = 1


class ParseError(RootoptError):
    exit_code = 3


class SchemaError(RootoptError):
    exit_code = 4


class EmptyData(RootoptError):
    exit_code = 4


class EmptyArm(RootoptError):
    exit_code = 5


class TooFewKept(RootoptError):
    exit_code = 6


class IoError(RootoptError):
    exit_code = 7


class UnknownDgp(RootoptError):
    exit_code = 8


class SeparationError(RootoptError):
    exit_code = 9


class NonFinite(RootoptError):
    exit_code = 9


class BudgetExceeded(RootoptError):
    exit_code = 10
