"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ShapeError(ValueError):
    """Dimensions, fiber ranks or bandwidths of the inputs do not match."""


class SecularZeroModeError(ValueError):
    """A zero-momentum mode was passed to a formula that excludes it."""


class CertificationError(RuntimeError):
    """A requested accuracy could not be certified."""


class DivergentMomentError(DomainError):
    """A moment integral of a cutoff function does not converge."""


class InsufficientCutoffError(CertificationError):
    """The lattice cutoff is too small for the requested accuracy."""

    def __init__(self, message: str, required_q: int):
        super().__init__(message)
        self.required_q = required_q
