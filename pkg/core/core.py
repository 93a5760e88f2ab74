"""
Terminal presentation helpers for the Lindblad Learner.
Headers, status lines and label/value rows shared by the command views.
"""
import sys
import shutil
from config.settings import Colors, UI

MAX_WIDTH = 100
LABEL_WIDTH = 28

# === UI UTILITIES ===

def get_terminal_size():
    """Terminal width capped for readable tables (80 columns when not a terminal)"""
    columns, _ = shutil.get_terminal_size(fallback=(80, 24))
    return min(max(columns, 80), MAX_WIDTH)

def _centered(text, width, color):
    left = (width - len(text) - 2) // 2
    right = width - len(text) - left - 2
    return f"{UI.HEADER}│{' ' * left}{color}{text}{Colors.RESET}{UI.HEADER}{' ' * right}│{Colors.RESET}"

def print_header(title, subtitle=None):
    """Print a header box; long subtitles such as output paths are shortened from the left"""
    width = get_terminal_size()
    print(f"\n{UI.HEADER}╭{'─' * (width - 2)}╮{Colors.RESET}")
    print(_centered(title, width, UI.TITLE))
    if subtitle:
        subtitle = str(subtitle)
        if len(subtitle) > width - 4:
            subtitle = "..." + subtitle[-(width - 7):]
        print(_centered(subtitle, width, UI.SUBTITLE))
    print(f"{UI.HEADER}╰{'─' * (width - 2)}╯{Colors.RESET}")

def print_status(text, status_type="info"):
    """Print a status message with appropriate icon and color"""
    if status_type == "success":
        print(f"{UI.SUCCESS}{UI.ICON_OK} {text}{Colors.RESET}")
    elif status_type == "error":
        # errors go to the error stream so stdout stays parseable
        print(f"{UI.ERROR}{UI.ICON_ERROR} {text}{Colors.RESET}", file=sys.stderr)
    elif status_type == "warning":
        print(f"{UI.WARNING}{UI.ICON_WARNING} {text}{Colors.RESET}")
    else:
        print(f"{UI.INFO}{UI.ICON_INFO} {text}{Colors.RESET}")

def print_data_row(label, value, width=LABEL_WIDTH):
    """Print a label/value row with labels padded to a common column"""
    print(f"{UI.DATA_LABEL}{label + ':':<{width}}{Colors.RESET} {UI.DATA_VALUE}{value}{Colors.RESET}")

def print_separator(char="─", color=UI.SEPARATOR):
    print(f"{color}{char * get_terminal_size()}{Colors.RESET}")
