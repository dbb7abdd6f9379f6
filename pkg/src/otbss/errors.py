"""Exception and warning types.

Every error carries an ``exit_code`` used by the command-line front end:
1 for numerical failures, 2 for I/O, format and configuration problems.
"""


class OTBSSError(Exception):
    exit_code = 1


class NumericalError(OTBSSError):
    exit_code = 1


class InputError(OTBSSError, ValueError):
    exit_code = 2


class MassMismatch(NumericalError, ValueError):
    """Histograms with different total mass have no transport plan."""


class DimensionMismatch(InputError):
    pass


class NumericalUnderflow(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass


class InvalidRank(InputError):
    pass


class InvalidSpec(InputError):
    pass


class FundamentalOutOfRange(InputError):
    pass


class GridMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class NoTrainingFrames(InputError):
    pass


class IoError(OTBSSError, OSError):
    exit_code = 2


class UnsupportedFormat(IoError):
    pass


class SignalTooShort(InputError):
    pass


class InconsistentMetadata(InputError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    """An iterative solver hit its iteration cap; the best iterate was kept."""


class ClippingWarning(UserWarning):
    pass
