"""Exception hierarchy shared by all modules."""


class ShopsimError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(ShopsimError, ValueError):
    """A distribution or model parameter is outside its admissible range."""


class DegenerateSupportError(ParameterError):
    """A truncation region carries (numerically) no probability mass."""


class UnsupportedFamilyError(ShopsimError, ValueError):
    """The requested operation has no implementation for this family."""


class EmptyChoiceSetError(ShopsimError, ValueError):
    pass


class InfeasibleCatalogError(ShopsimError, ValueError):
    pass


class InvalidPriceError(ShopsimError, ValueError):
    pass


class NonErgodicError(ShopsimError, ValueError):
    pass


class DomainError(ShopsimError, ValueError):
    """An input lies outside the mathematical domain of a formula."""


class ConfigError(ShopsimError, ValueError):
    """Configuration is malformed; ``path`` locates the offending entry."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(ShopsimError, ValueError):
    pass
