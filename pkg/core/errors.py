class SdmError(Exception):
    pass


class InvalidArgumentError(SdmError, ValueError):
    pass


class DataError(SdmError):
    pass


class ConfigError(SdmError):
    pass
