"""Core functionality for the Lindblad Learner."""

from core.core import (
    print_header, print_status, print_data_row, print_separator
)
