"""Mean dimension, metric mean dimension and orbit capacity for bundle random
dynamical systems on finite carriers."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContinuityError, InputError, RmdimError, SizeError,  # noqa: E402
                     UnsupportedCarrierError)

__all__ = ["__version__", "ConfigError", "ContinuityError", "InputError", "RmdimError", "SizeError",
           "UnsupportedCarrierError"]
