"""UI layer -- Rich dashboard and output formatters."""

from .dashboard import (
    ProgressDisplay,
    console,
    print_ablation,
    print_config,
    print_gradcheck,
    print_header,
    print_metric_report,
    print_saved,
    print_training_summary,
    print_unmatched,
    sparkline,
)
from .output import (
    format_curves_csv,
    format_loss_trace,
    format_text_report,
    save_json,
    write_loss_trace,
    write_report_bundle,
)

__all__ = [
    "ProgressDisplay",
    "console",
    "format_curves_csv",
    "format_loss_trace",
    "format_text_report",
    "print_ablation",
    "print_config",
    "print_gradcheck",
    "print_header",
    "print_metric_report",
    "print_saved",
    "print_training_summary",
    "print_unmatched",
    "save_json",
    "sparkline",
    "write_loss_trace",
    "write_report_bundle",
]
