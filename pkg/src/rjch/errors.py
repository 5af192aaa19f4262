"""Exception types shared by every module and both ring backends."""


class ConfigurationError(ValueError):
    """Invalid parameters (address bits, epsilon, capacity, config files)."""


class InfeasibleConfig(ConfigurationError):
    """Valid parameters that admit no run, e.g. more objects than total capacity."""


class RingSaturated(InfeasibleConfig):
    """More bin slots requested than the address space holds."""


class RingOverflow(RuntimeError):
    """Every alive bin is at capacity; the object cannot be placed."""

    def __init__(self, message, placed=None, bins=None):
        super().__init__(message)
        self.placed = placed
        self.bins = bins


class NoAliveBin(RuntimeError):
    """The ring has no alive bin at all."""


class InstanceTooLarge(ValueError):
    """An exact-enumeration oracle was asked for an intractable instance."""


class TraceFormatError(ValueError):
    """Malformed trace input; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
