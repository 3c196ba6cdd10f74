from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from dwcaps_engine.core.config.naming import parse_variant  # noqa: E402
from dwcaps_engine.core.utils.errors import ContractError, FormatError  # noqa: E402

REQUIRED = ("epoch", "train_acc", "test_acc")
TWIN_REQUIRED = ("kernel", "conv_type", "epoch", "test_acc")
TWIN_STYLES = (("v1", "-", "o", "DW"), ("v2", "--", "s", "SC"))


def _read_csv(csv_path, required):
    try:
        frame = pd.read_csv(csv_path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise FormatError(f"Cannot read run file {csv_path}: {err}")
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise FormatError(f"Run file {csv_path} lacks columns {missing}.")
    return frame


def read_run(csv_path):
    return _read_csv(csv_path, REQUIRED)


def read_twin_runs(csv_path):
    return _read_csv(csv_path, TWIN_REQUIRED)


def _save(fig, out_path):
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_run(csv_path, out_path, title=None):
    """Accuracy-vs-epoch chart of a run CSV, written as SVG."""
    frame = read_run(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["epoch"], frame["train_acc"], marker="o", label="train accuracy")
    ax.plot(frame["epoch"], frame["test_acc"], marker="s", label="test accuracy")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title or Path(csv_path).parent.name)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    return _save(fig, out_path)


def plot_twin_runs(runs, out_path, title=None):
    """
    Test accuracy per epoch of DW and SC twins across kernel sizes, in one
    SVG: one colour per kernel, DW solid and SC dashed.

    ``runs`` is a frame with ``TWIN_REQUIRED`` columns or the path of a CSV
    holding one.
    """
    if not isinstance(runs, pd.DataFrame):
        runs = read_twin_runs(runs)
    missing = [c for c in TWIN_REQUIRED if c not in runs.columns]
    if missing:
        raise FormatError(f"Twin runs lack columns {missing}.")
    if runs.empty:
        raise ContractError("No twin runs to chart.")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, k in enumerate(sorted(runs["kernel"].unique(), reverse=True)):
        for conv_type, style, marker, label in TWIN_STYLES:
            rows = runs[(runs["kernel"] == k) & (runs["conv_type"] == conv_type)].sort_values("epoch")
            if rows.empty:
                continue
            ax.plot(rows["epoch"], rows["test_acc"], linestyle=style, marker=marker, color=f"C{i}",
                    label=f"{label} {k}x{k}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title or "DW vs SC capsules across kernel sizes")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", ncol=2, fontsize="small")
    return _save(fig, out_path)


def _twin_totals(sweep):
    """(group label, DW total, SC total) per row of a sweep frame, in row order."""
    groups = {}
    for row in sweep.itertuples(index=False):
        if row.error or pd.isna(row.params):
            continue
        v = parse_variant(row.variant)
        label = f"{v.input_size}-{v.num_convs}-{v.pool_flag}-k{v.kernel_size}"
        own, twin = int(row.params), int(row.twin_params)
        groups[label] = (own, twin) if v.conv_type == "v1" else (twin, own)
    return [(label, dw, sc) for label, (dw, sc) in groups.items()]


def plot_parameter_bars(sweep, out_path, title=None):
    """
    Total parameters of DW and SC twins side by side, one group per
    geometry and kernel size. ``sweep`` is one or more concatenated
    :func:`~dwcaps_engine.analysis.sweep_frame` frames; rows that failed to
    build are left out.
    """
    totals = _twin_totals(sweep)
    if not totals:
        raise ContractError("No parameter counts to chart.")
    labels = [t[0] for t in totals]
    x = np.arange(len(totals))
    width = 0.4
    fig, ax = plt.subplots(figsize=(max(6.0, 0.7 * len(totals) + 2.0), 4.5))
    ax.bar(x - width / 2, [t[1] / 1e6 for t in totals], width, label="DW (v1)")
    ax.bar(x + width / 2, [t[2] / 1e6 for t in totals], width, label="SC (v2)")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("total parameters (millions)")
    ax.set_title(title or "Total parameters per variant")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    return _save(fig, out_path)
