from . import CRITICAL, DEBUG, ERROR, INFO, WARNING, _log


class Logger:
    """
    Leveled logger with printf-style arguments. Keyword arguments are structured context and are appended to the
    line as sorted `key=value` pairs.
    """
    def __init__(self, name):
        self.name = name

    def critical(self, fmt, *args, **fields):
        _log(self.name, "CRITICAL", CRITICAL, fmt, args, fields)

    def error(self, fmt, *args, **fields):
        _log(self.name, "ERROR", ERROR, fmt, args, fields)

    def warning(self, fmt, *args, **fields):
        _log(self.name, "WARNING", WARNING, fmt, args, fields)

    def info(self, fmt, *args, **fields):
        _log(self.name, "INFO", INFO, fmt, args, fields)

    def debug(self, fmt, *args, **fields):
        _log(self.name, "DEBUG", DEBUG, fmt, args, fields)
