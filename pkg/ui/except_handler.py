"""
Exception handler for the Lindblad Learner commands.
Turns library and I/O failures into an error message and a process exit code.
"""
import json
import logging
from functools import wraps

from core import print_status
from core.errors import FitAbortedError, LindbladError

logger = logging.getLogger('cli')

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

def handle_command_exception(func):
    """
    Decorator for cmd_* functions.

    Returns the command's own exit code (0 when it returns None), or 1 with a
    message on stderr for LindbladError and file errors.
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            code = func(*args, **kwargs)
            return EXIT_OK if code is None else int(code)
        except FitAbortedError as e:
            logger.error(f"{func.__name__}: {e}")
            print_status(f"Fit aborted: {e}", "error")
            if e.params is not None:
                print_status(f"Offending parameters: {e.params.flatten().tolist()}", "error")
            return EXIT_FAILURE
        except LindbladError as e:
            logger.error(f"{func.__name__}: {type(e).__name__}: {e}")
            print_status(f"{type(e).__name__}: {e}", "error")
            return EXIT_FAILURE
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"{func.__name__}: {e}")
            print_status(f"File error: {e}", "error")
            return EXIT_FAILURE
    return wrapper
