class TraceError(Exception):
    """Base class for every domain error raised by the app package."""


class ConfigError(TraceError):
    pass
