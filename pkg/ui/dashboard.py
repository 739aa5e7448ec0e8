"""
Rich-based terminal dashboard for training, evaluation and checks.

Scores and records come from ``saliency`` -- this module only does
presentation via the ``rich`` library.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table

from saliency.ablation import AblationRow, format_delta
from saliency.config import ExperimentConfig
from saliency.gradcheck import CheckResult
from saliency.metrics import MetricReport
from saliency.training import TrainResult

console = Console()

_BARS = "▁▂▃▄▅▆▇█"

_METRIC_LABELS = [
    ("s_measure", "S-measure"),
    ("f_max", "max F"),
    ("f_mean", "mean F"),
    ("f_adp", "adp F"),
    ("e_max", "max E"),
    ("e_mean", "mean E"),
    ("e_adp", "adp E"),
    ("mae", "MAE"),
]


def sparkline(values: Sequence[float], width: int = 60) -> str:
    """Single-line Unicode sparkline, bucket-averaged down to *width* characters."""
    values = list(values)
    if not values:
        return ""
    if len(values) > width:
        step = len(values) / width
        values = [
            sum(values[int(i * step):int((i + 1) * step)]) / max(int((i + 1) * step) - int(i * step), 1)
            for i in range(width)
        ]
    lo, hi = min(values), max(values)
    span = hi - lo if hi > lo else 1.0
    return "".join(_BARS[min(int((v - lo) / span * (len(_BARS) - 1)), len(_BARS) - 1)] for v in values)


# ---------------------------------------------------------------------------
# Print helpers
# ---------------------------------------------------------------------------

def print_header(subtitle: str) -> None:
    console.print()
    console.print(
        Panel.fit(
            "[bold cyan]GeleNet[/bold cyan]\n"
            f"[dim]{subtitle}[/dim]",
            border_style="cyan",
        )
    )
    console.print()


def print_config(cfg: ExperimentConfig) -> None:
    table = Table(show_header=False, box=None, padding=(0, 1))
    table.add_column(style="dim")
    table.add_column(style="bold")
    table.add_row("Input:", f"{cfg.input_size}x{cfg.input_size}")
    table.add_row("Modules:", f"L1 {cfg.level1_attention} | KTM {cfg.ktm_mode if cfg.ktm else 'off'} | "
                              f"L4 {cfg.level4_attention} | {cfg.attention_variant}")
    table.add_row("Schedule:", f"{cfg.epochs} epochs, batch {cfg.batch_size}, lr {cfg.lr:g}")
    table.add_row("Data:", cfg.manifest or f"synthetic x{cfg.synth_count} (seed {cfg.seed})")
    console.print(Panel(table, title="[bold]Experiment[/bold]", border_style="blue"))


def print_metric_report(report: MetricReport, title: str = "Metrics") -> None:
    table = Table(title=f"{title} ({report.count} image{'s' if report.count != 1 else ''})", box=box.ROUNDED)
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    for key, label in _METRIC_LABELS:
        value = getattr(report, key)
        color = "yellow" if key == "mae" else "green"
        table.add_row(label, f"[{color}]{value:.4f}[/{color}]")
    console.print(table)
    console.print(
        Panel(
            f"[cyan]{sparkline(list(report.f_curve), width=64)}[/cyan]\n"
            f"[dim]threshold 0 .. 255   F min {min(report.f_curve):.3f}  max {max(report.f_curve):.3f}[/dim]",
            title="F-measure Curve",
        )
    )


def print_training_summary(result: TrainResult) -> None:
    if not result.losses:
        console.print("[dim]No iterations run; checkpoint holds the initial parameters.[/dim]")
        return
    lines = [
        f"[bold white]   Iterations:[/bold white]  {result.iterations}",
        f"[bold white]   Loss:[/bold white]  [bold yellow]{result.losses[0]:.4f}[/bold yellow] -> "
        f"[bold green]{result.losses[-1]:.4f}[/bold green]",
        f"[bold white]   Time:[/bold white]  {result.seconds:.1f} s",
        f"\n[cyan]{sparkline(result.losses)}[/cyan]",
    ]
    console.print(Panel.fit("\n".join(lines), title="[bold]Training[/bold]", border_style="cyan"))


def print_gradcheck(results: Sequence[CheckResult]) -> None:
    table = Table(title="Gradient Check", box=box.ROUNDED)
    table.add_column("Module", style="bold")
    table.add_column("Probes", justify="right", style="dim")
    table.add_column("Max rel. error", justify="right")
    table.add_column("Worst tensor")
    table.add_column("Result", justify="center")
    for r in results:
        status = "[green]PASS[/green]" if r.passed else "[bold red]FAIL[/bold red]"
        table.add_row(r.module, str(r.samples), f"{r.max_rel_error:.2e}", r.worst[:40], status)
    console.print(table)


def print_ablation(rows: Sequence[AblationRow]) -> None:
    """One row per variant; deltas against the baseline when it was run."""
    table = Table(title="Ablation (training set)", box=box.ROUNDED)
    table.add_column("#", style="dim", width=3)
    table.add_column("Variant", style="bold")
    for _, label in _METRIC_LABELS:
        table.add_column(label, justify="right")
    table.add_column("Loss", justify="right", style="dim")

    for i, row in enumerate(rows, start=1):
        cells = []
        for key, _ in _METRIC_LABELS:
            cell = f"{getattr(row.report, key):.4f}"
            if row.delta is not None:
                cell += f"\n{format_delta(row.delta[key], lower_is_better=key == 'mae')}"
            cells.append(cell)
        table.add_row(str(i), row.variant, *cells, f"{row.final_loss:.4f}")
    console.print(table)


def print_unmatched(kind: str, names: List[str]) -> None:
    if names:
        console.print(f"[yellow]Unmatched {kind} ({len(names)}):[/yellow] {', '.join(sorted(names))}")


def print_saved(paths: Dict[str, str]) -> None:
    for label, path in paths.items():
        console.print(f"[green]{label}:[/green] {path}")


# ---------------------------------------------------------------------------
# Progress display
# ---------------------------------------------------------------------------

class ProgressDisplay:
    """Manages a ``rich`` progress bar over training iterations."""

    def __init__(self) -> None:
        self.progress = Progress(
            SpinnerColumn(),
            TextColumn("[bold]{task.description}"),
            BarColumn(bar_width=40),
            MofNCompleteColumn(),
            TextColumn("[bold cyan]{task.fields[loss]}[/bold cyan]"),
            TimeElapsedColumn(),
            console=console,
        )
        self._task_id = None

    def start(self, description: str, total: int) -> None:
        self.progress.start()
        self._task_id = self.progress.add_task(description, total=max(total, 1), loss="")

    def update(self, completed: int, total: int, loss: Optional[float] = None) -> None:
        if self._task_id is None:
            return
        self.progress.update(
            self._task_id, completed=completed, total=max(total, 1),
            loss=f"loss {loss:.4f}" if loss is not None else "",
        )

    def describe(self, description: str) -> None:
        if self._task_id is not None:
            self.progress.update(self._task_id, description=description, completed=0)

    def stop(self) -> None:
        self.progress.stop()
