"""Exception types raised across the package.

Everything derives from :class:`VQProsodyError` so the CLI can map library
failures to the data-error exit code in one place.
"""


class VQProsodyError(Exception):
    pass


class ShapeError(VQProsodyError, ValueError):
    def __init__(self, detail=""):
        super().__init__(f"shape error: {detail}" if detail else "shape error")


class InputTooShortError(VQProsodyError, ValueError):
    def __init__(self, detail=""):
        super().__init__(f"input too short: {detail}" if detail else "input too short")


class ConfigError(VQProsodyError, ValueError):
    """Invalid argument values (bad mel range, bad dimension, ...)."""


class MetricError(VQProsodyError, ValueError):
    """A metric is undefined for the given inputs."""


class EmptyCounterError(VQProsodyError, ValueError):
    def __init__(self):
        super().__init__("empty counter: no update steps recorded")


class NoRecordedComputationError(VQProsodyError, RuntimeError):
    def __init__(self):
        super().__init__("no recorded computation: call forward before backward")


class DivergenceError(VQProsodyError, RuntimeError):
    def __init__(self, step, detail=""):
        self.step = step
        msg = f"divergence at step {step}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class InsufficientDataError(VQProsodyError, ValueError):
    pass


class CorruptContainerError(VQProsodyError, OSError):
    pass
