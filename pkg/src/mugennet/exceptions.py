"""Error types mapped to CLI exit codes (config -> 2, data -> 3, numeric -> 4)."""


class ConfigError(ValueError):
    pass


class DataError(IOError):
    pass
