import functools

from .log import Log


class ParseError(ValueError):
    """Malformed dataset input; carries the file and the 1-based line number."""

    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class KernelError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, iterate, value):
        self.iterate = iterate
        self.value = value
        super().__init__(f"objective became non-finite ({value}) at iterate {iterate}")


def synchronized(func):
    """Run a method while holding `self._lock`."""
    @functools.wraps(func)
    def wrapper(self, *args, **kwargs):
        with self._lock:
            return func(self, *args, **kwargs)
    return wrapper
