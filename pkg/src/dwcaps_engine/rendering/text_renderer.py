import pandas as pd


def render_cost_table(report, title=None):
    """Per-layer parameters and MACs followed by totals and build notes."""
    frame = report.to_frame()
    s = (title + "\n") if title else ""
    s += frame.to_string(index=False) + "\n"
    s += f"Total parameters: {report.total_params}\n"
    s += f"Total MACs: {report.total_macs}\n"
    if report.separable_over_standard_macs is not None:
        s += (f"Separable / standard cost of substituted convs: "
              f"{report.separable_over_standard_macs:.4f} (MACs), "
              f"{report.separable_over_standard_params:.4f} (params)\n")
    for note in report.notes:
        s += f"Note: {note}\n"
    return s


def render_comparison(comparison):
    return (
        f"DW {comparison.dw}: {comparison.dw_params} parameters\n"
        f"SC {comparison.sc}: {comparison.sc_params} parameters\n"
        f"Reduction: {comparison.reduction_pct:.1f}%\n"
    )


def render_frame(frame):
    return frame.to_string(index=False) + "\n"


def render_confusion(result):
    frame = pd.DataFrame(result.confusion, index=result.class_names, columns=result.class_names)
    s = f"Accuracy: {result.accuracy:.4f}\n"
    s += "Confusion (rows: true class, columns: predicted class)\n"
    s += frame.to_string() + "\n"
    return s
