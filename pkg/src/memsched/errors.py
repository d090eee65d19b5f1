"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration or workload parameters.

    ``field`` names the offending key (dotted path) when known.
    """

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class TraceParseError(ValueError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{reason} at line {line_no}")


class CalibrationError(ValueError):
    pass


class LivelockError(RuntimeError):
    """The simulation stopped making progress before draining.

    ``diagnostics`` carries a dict describing blocked cores and banks.
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
