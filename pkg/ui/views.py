"""
Visual components for the Lindblad Learner.
Tables of degrees of freedom, fits, selection paths and reports.
"""
import math

from tabulate import tabulate

from config.settings import Colors, UI
from core import print_data_row, print_header, print_separator, print_status

# === MODEL DISPLAY ===

def display_dof(dof, title="DEGREES OF FREEDOM"):
    """Print the h/d/state/gauge/total breakdown of a DofCount"""
    print_header(title)
    rows = [
        ["h (Hamiltonian)", dof.h_dof],
        ["d (dissipator)", dof.d_dof],
        ["state", dof.state_dof],
        ["gauge", dof.gauge_adjustment],
        ["total (generator)", dof.generator_dof],
    ]
    print(tabulate(rows, headers=["Component", "DoF"], tablefmt="fancy_grid"))
    print(f"h={dof.h_dof} d={dof.d_dof} state={dof.state_dof} gauge={dof.gauge_adjustment} total={dof.generator_dof}")

def display_fit_summary(result, path=None):
    print_header("FIT RESULT", path)
    print_data_row("Log-likelihood (full data)", f"{result.ll_full:.6f}")
    print_data_row("Generator DoF", result.generator_dof)
    print_data_row("Steps", len(result.trace))
    print_data_row("Stop reason", result.stop_reason)
    if not result.diagnostics.get("monotonic", True):
        print_status("LL below the nested baseline after restart", "warning")
    elif result.diagnostics.get("restarted"):
        print_status("Restarted once with a reduced learning rate", "info")

def display_uncertainty(labels, values, standard_errors, uncertainty):
    """Hamiltonian coefficients with standard errors from the information matrix"""
    print_header("HAMILTONIAN", f"{uncertainty.method} information")
    rows = [[label, f"{v:.6g}", f"{se:.3g}"] for label, v, se in zip(labels, values, standard_errors)]
    print(tabulate(rows, headers=["Term", "Value (rad/µs)", "Std. error"], tablefmt="fancy_grid"))
    if uncertainty.n_flagged:
        print_status(f"{uncertainty.n_flagged} near-null direction(s) flagged", "warning")
    if uncertainty.indefinite:
        print_status("Information matrix is indefinite; the fit may not be at a maximum", "warning")

def display_dissipator_rates(blocks, n_rates=3):
    """Largest jump rates of every dissipator block"""
    rows = []
    for block in blocks:
        rates = block.jump_form().rates
        rows.append(["-".join(str(q) for q in block.connection)] + [f"{r:.4g}" for r in rates[:n_rates]])
    if rows:
        headers = ["Block"] + [f"Rate {i + 1} (1/µs)" for i in range(len(rows[0]) - 1)]
        print(tabulate(rows, headers=headers, tablefmt="fancy_grid"))

# === SELECTION DISPLAY ===

def _xi(value):
    return f"{value:.4g}" if math.isfinite(value) else str(value)

def display_selection_path(path):
    """Print accepted moves and the rejected frontier"""
    print_header("MODEL SELECTION", f"{path.direction} path, threshold Xi = {_xi(path.threshold)}")
    if path.moves:
        rows = [
            [i + 1, f"{m.source[0]}/{m.source[1]}", UI.ICON_ARROW, f"{m.target[0]}/{m.target[1]}",
             m.axis, f"{m.two_delta_ll:.6g}", m.delta_d, _xi(m.xi)]
            for i, m in enumerate(path.moves)
        ]
        print(tabulate(rows, headers=["#", "From (H/D)", "", "To (H/D)", "Axis", "2ΔLL", "Δd", "Ξ"],
                       tablefmt="fancy_grid"))
    else:
        print_status("No move accepted", "info")
    for m in path.frontier:
        print(f"{UI.REJECTED}{UI.ICON_ERROR} {m.axis}: {m.target[0]}/{m.target[1]} Ξ = {_xi(m.xi)}{Colors.RESET}")
    for tie in path.ties:
        print_status(f"Tie at {tie[0]}/{tie[1]} resolved toward the Hamiltonian axis", "warning")
    print_separator()
    print(f"{UI.ACCEPTED}Final node: H={path.stop[0]}, D={path.stop[1]}{Colors.RESET}")

def display_ranking(rows):
    table = [[r["ham_level"], r["diss_level"], f"{r['nll']:.6g}", r["dof"], f"{r['aic']:.6g}", f"{r['bic']:.6g}"]
             for r in rows]
    print(tabulate(table, headers=["H", "D", "NLL", "d", "AIC", "BIC"], tablefmt="fancy_grid"))

# === VERIFICATION AND REPORTS ===

def display_gradcheck(max_error, n_checked, tolerance):
    print_header("GRADIENT CHECK")
    print_data_row("Components checked", n_checked)
    print_data_row("Max relative error", f"{max_error:.3e}")
    status = "success" if max_error <= tolerance else "error"
    print_status(f"Tolerance {tolerance:.0e}: {'passed' if status == 'success' else 'failed'}", status)

def display_report_summary(summary):
    print_header("REPORT")
    rows = [[key, value] for key, value in summary.items()]
    print(tabulate(rows, headers=["Quantity", "Value"], tablefmt="fancy_grid"))
