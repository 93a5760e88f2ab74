"""User interface for the Lindblad Learner."""

from ui.commands import (
    cmd_make_spec, cmd_simulate, cmd_fit, cmd_select, cmd_dof, cmd_gradcheck, cmd_report
)
