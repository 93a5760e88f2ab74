"""
Configuration settings for the Lindblad Learner.
"""
import os
import pathlib
from dotenv import load_dotenv

# Get the absolute path to the .env file
base_dir = pathlib.Path(__file__).parent.parent.absolute()
env_path = os.path.join(base_dir, '.env')

# Values already exported in the shell win over the .env file
load_dotenv(dotenv_path=env_path, override=False)


def _env_float(name, default):
    """Read a float from the environment, falling back to the default"""
    value = os.environ.get(name, "")
    return float(value) if value.strip() else default


def _env_int(name, default):
    """Read an integer from the environment, falling back to the default"""
    value = os.environ.get(name, "")
    return int(value) if value.strip() else default


# Application Version
APP_NAME = "Lindblad Learner"
APP_VERSION = "1.0.0"

# Logging
LOG_FILE = os.environ.get("LINDBLAD_LOG_FILE", "lindblad_learner.log")
LOG_LEVEL = os.environ.get("LINDBLAD_LOG_LEVEL", "INFO").upper()

# Solver defaults (time in µs, rates in 1/µs)
DEFAULT_RTOL = _env_float("LINDBLAD_RTOL", 1e-6)
DEFAULT_ATOL = _env_float("LINDBLAD_ATOL", 1e-6)
DEFAULT_MAX_SOLVER_STEPS = _env_int("LINDBLAD_MAX_SOLVER_STEPS", 100000)
TRACE_TOLERANCE = 1e-8
POSITIVITY_TOLERANCE = 1e-7

# Model space
MAX_BLOCK_LOCALITY = _env_int("LINDBLAD_MAX_BLOCK_LOCALITY", 4)
LEVELS = ("none", "local", "nn", "a2a", "3local")

# Likelihood
PROB_FLOOR = _env_float("LINDBLAD_PROB_FLOOR", 1e-12)

# Optimizer defaults
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_MAX_STEPS = 5000
DEFAULT_PLATEAU_REL_TOL = 1e-6
DEFAULT_PLATEAU_WINDOW = 100
DEFAULT_SIGMA0 = 0.1
RESTART_LR_FACTOR = 0.3

# Model selection
XI_THRESHOLD = _env_float("LINDBLAD_XI_THRESHOLD", 1.65)

# Parallelism (0 = machine parallelism)
DEFAULT_THREADS = _env_int("LINDBLAD_THREADS", 0)

# File formats
SCHEMA_VERSION = 1
BASIS_CONVENTION = "x: Ry(-pi/2), y: Rx(+pi/2), z: I; R_a(phi) = exp(-i phi sigma_a / 2); qubit 0 is the most significant bit"

# ANSI Color Codes
class Colors:
    CYAN = "\033[0;36m"
    BRIGHT_BLACK = "\033[0;90m"
    BRIGHT_YELLOW = "\033[0;93m"
    BRIGHT_WHITE = "\033[0;97m"
    BOLD_RED = "\033[1;31m"
    BOLD_GREEN = "\033[1;32m"
    BOLD_YELLOW = "\033[1;33m"
    BOLD_BLUE = "\033[1;34m"
    BOLD_CYAN = "\033[1;36m"
    BOLD_WHITE = "\033[1;37m"
    RESET = "\033[0m"

# UI Component Colors
class UI:
    HEADER = Colors.BOLD_BLUE
    TITLE = Colors.BOLD_CYAN
    SUBTITLE = Colors.CYAN
    SUCCESS = Colors.BOLD_GREEN
    ERROR = Colors.BOLD_RED
    WARNING = Colors.BOLD_YELLOW
    INFO = Colors.BOLD_WHITE
    SEPARATOR = Colors.BRIGHT_BLACK
    DATA_LABEL = Colors.BRIGHT_YELLOW
    DATA_VALUE = Colors.BRIGHT_WHITE
    ACCEPTED = Colors.BOLD_GREEN
    REJECTED = Colors.BOLD_RED

    # Status Icons
    ICON_OK = "✓"
    ICON_ERROR = "✗"
    ICON_WARNING = "⚠"
    ICON_INFO = "ℹ"
    ICON_ARROW = "→"
