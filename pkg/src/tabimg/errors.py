"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class TabimgError(Exception):
    pass


class ConfigError(TabimgError):
    """Invalid run configuration (unknown key, bad value, inconsistent setup)."""


class DataError(TabimgError):
    """Dataset loading or validation failure (missing image, bad value, ...)."""


class NumericalError(TabimgError):
    """Non-finite loss or other numerical breakdown during training."""
