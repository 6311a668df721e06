"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class DegenerateOffsetError(ValueError):
    """Offsetting a path would make it fold over itself."""


class NumericError(RuntimeError):
    pass


class CalibrationError(ValueError):
    pass


class SplitError(ValueError):
    pass


class ChecksumError(ValueError):
    pass


class UnsupportedVersionError(ValueError):
    pass


class ConfigError(ValueError):
    pass
