"""Exception hierarchy shared by all modules."""


class RmdimError(Exception):
    """Base class for every error raised by the package."""


class InputError(RmdimError, ValueError):
    """An argument does not satisfy an operation's precondition."""


class ConfigError(RmdimError):
    """An experiment configuration is invalid.

    ``path`` names the offending config key, e.g. ``environment.law``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class SizeError(RmdimError):
    """An exact computation would exceed its configured cap."""


class ContinuityError(InputError):
    """A map between finite posets is not order-preserving."""


class UnsupportedCarrierError(InputError):
    """The operation needs a metric carrier (or a poset carrier) and got the other."""
