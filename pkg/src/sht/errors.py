"""Exception types raised by the toolkit."""


class ShtError(Exception):
    """Base class for all toolkit errors."""


class AsymmetricMatrix(ShtError):
    """Distance matrix is not symmetric."""


class NegativeDistance(ShtError):
    """Distance matrix contains a negative entry."""


class ZeroOffDiagonal(ShtError):
    """Two distinct points are at distance zero."""


class DeltaTooLarge(ShtError):
    """Grid construction failed: the scale ratio delta is too large for this space."""


class LambdaNonpositive(ShtError):
    """Stopping level must be strictly positive."""


class MixedGrids(ShtError):
    """Cubes handed to a sparse family do not all belong to one grid."""


class PInvalid(ShtError):
    """Exponent p is outside the admissible range."""


class RInvalid(ShtError):
    """Exponent r is outside the admissible range."""


class KNegative(ShtError):
    """Commutator order must be a nonnegative integer."""


class ExponentOrder(ShtError):
    """(p, p0) violate the hypothesis of the requested factorization case."""


class CaseMismatch(ShtError):
    """Extrapolation requires p != p0."""


class NormEstimateFailed(ShtError):
    """An operator-norm estimate was too weak to certify the requested inequalities."""


class ZeroFunction(ShtError):
    """Input function is identically zero."""


class DecayUnbounded(ShtError):
    """No finite decay constant exists for this kernel (degenerate ball measure)."""


class AtomNotMeanZero(ShtError):
    """Atom handed to an off-support check does not integrate to zero."""


class FileFormatError(ShtError):
    """A structured-text input file does not match its declared schema."""
