from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text
from rich import box

console = Console()

def set_quiet(quiet=True):
    """Silences everything except errors."""
    console.quiet = quiet

def print_success(message):
    """Prints a success message in green."""
    console.print(f"[bold green]✔ {message}[/bold green]")

def print_error(message):
    """Prints an error message in red."""
    was_quiet = console.quiet
    console.quiet = False
    console.print(f"[bold red]✖ {message}[/bold red]")
    console.quiet = was_quiet

def print_warning(message):
    """Prints a warning message in yellow."""
    console.print(f"[bold yellow]⚠ {message}[/bold yellow]")

def print_info(message):
    """Prints an info message in blue."""
    console.print(f"[bold blue]ℹ {message}[/bold blue]")

def print_header(text):
    """Prints a styled header."""
    console.print(Panel(Text(text, justify="center", style="bold white"), border_style="blue", expand=False))

def _cell(value):
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)

def print_table(title, columns, rows):
    """Prints rows (sequences of values) under the given column names."""
    table = Table(title=f"[bold blue]{title}[/bold blue]", box=box.ROUNDED, show_header=True, header_style="bold cyan")
    for i, name in enumerate(columns):
        table.add_column(name, style="green" if i == 0 else "white", justify="left" if i == 0 else "right")
    for row in rows:
        table.add_row(*[_cell(v) for v in row])
    console.print(table)

def display_eval_report(report):
    """Overall and per-level metrics of an EvalReport."""
    metrics = ["mpjpe", "mpjpe_g", "mpjpe_pa", "contact_accuracy", "accel_mag", "plane_cos"]
    rows = [["all", report.overall["count"], *[report.overall[m] for m in metrics]]]
    for label, agg in report.buckets.items():
        if agg.get("count"):
            rows.append([label, agg["count"], *[agg[m] for m in metrics]])
    print_table("Evaluation", ["level", "n", "MPJPE", "MPJPE-G", "MPJPE-PA", "Contact", "Accel", "Cos"], rows)
    if report.hardest:
        print_info(f"Hardest {report.hardest['count']}: cos {report.hardest['plane_cos']:.5f}, "
                   f"MPJPE-G {report.hardest['mpjpe_g']:.2f} mm")

def display_fit_report(name, report):
    """One row per stage with its final loss terms."""
    terms = ["prior", "pconsist", "data", "reg_smooth", "reg_contact", "total"]
    rows = [[s.name, s.iterations, "yes" if s.converged else "no", *[s.final.get(t, 0.0) for t in terms]]
            for s in report.stages]
    print_table(f"Fit: {name}", ["stage", "iters", "conv", *terms], rows)
