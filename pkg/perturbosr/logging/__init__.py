#
# License: See LICENSE.md file
#

import sys

DEBUG, INFO, WARNING, ERROR, CRITICAL, = range(5)

_log_level = WARNING
_log_stream = None


def get_log_level():
    return _log_level


def _format_fields(fields):
    if not fields:
        return ""
    return "".join(f" {k}={v}" for k, v in sorted(fields.items()))


def _log(name, pre_msg, level, fmt, args, fields):
    if get_log_level() > level:
        return
    if args:
        msg = fmt % tuple(args)
    else:
        msg = fmt
    stream = _log_stream if _log_stream is not None else sys.stderr
    print(name.ljust(30) + " " + pre_msg.ljust(8) + " " + msg + _format_fields(fields), file=stream)


from ._logging import Logger


def log_level(level):
    global _log_level
    if level == "DEBUG":
        level = DEBUG
    elif level == "INFO":
        level = INFO
    elif level == "WARNING":
        level = WARNING
    elif level == "ERROR":
        level = ERROR
    elif level == "CRITICAL":
        level = CRITICAL
    elif level == "DISABLE":
        level = CRITICAL + 1
    elif isinstance(level, int):
        pass
    else:
        raise ValueError(f"Invalid log level: {level}")

    _log_level = level


def log_stream(stream):
    """Redirect log lines to `stream`. `None` restores standard error."""
    global _log_stream
    _log_stream = stream


def get_logger(name):
    return Logger(name)
