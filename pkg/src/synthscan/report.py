"""Figure rendering and delimited-table emission for command-line reports.

Figures go through the file-only Agg backend with pinned size, dpi, and PNG
metadata so that rerunning a command reproduces every output byte. Tables
are comma-separated text with a header row; floats are written with repr so
they parse back to the identical double.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")  # file-only backend; must precede pyplot import

import matplotlib.pyplot as plt  # noqa: E402

from .errors import ParameterError  # noqa: E402

_SAVEFIG = {"dpi": 100, "metadata": {"Software": "synthscan"}}


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path, header, rows) -> None:
    """Comma-separated table: `a, b, c` header then one line per row."""
    header = list(header)
    lines = [", ".join(header)]
    for row in rows:
        row = tuple(row)
        if len(row) != len(header):
            raise ParameterError(f"row width {len(row)} != header width {len(header)}")
        lines.append(", ".join(format_cell(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path) -> tuple:
    """(header, rows) with every cell kept as a string."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ParameterError(f"{path}: empty table")
    split = [[cell.strip() for cell in ln.split(",")] for ln in lines]
    return split[0], split[1:]


def _finish(fig, path):
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_heatmap_figure(grid, path, title) -> None:
    """2D scalar field as an image plot with a colorbar."""
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    im = ax.imshow(grid, cmap="magma", origin="upper", aspect="equal")
    ax.set_title(title)
    ax.set_xlabel("frequency column")
    ax.set_ylabel("frequency row")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    _finish(fig, path)


def save_histogram_figure(edges, counts, path, title) -> None:
    """Pre-binned counts as a bar plot over the bin edges."""
    edges = list(edges)
    counts = list(counts)
    if len(edges) != len(counts) + 1:
        raise ParameterError(f"{len(edges)} edges do not bound {len(counts)} bins")
    widths = [hi - lo for lo, hi in zip(edges[:-1], edges[1:])]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.bar(edges[:-1], counts, width=widths, align="edge", color="#4878cf", edgecolor="none")
    ax.set_title(title)
    ax.set_xlabel("log10 power")
    ax.set_ylabel("bins")
    fig.tight_layout()
    _finish(fig, path)


def save_variance_figure(rows, path) -> None:
    """One line per image through its (timestep, variance) points.

    rows: iterable of (image_id, t, variance) in plotting order.
    """
    series = {}
    for image_id, t, var in rows:
        series.setdefault(image_id, ([], []))
        series[image_id][0].append(t)
        series[image_id][1].append(var)
    if not series:
        raise ParameterError("no variance rows to plot")
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    for image_id in sorted(series):
        ts, vs = series[image_id]
        ax.plot(ts, vs, marker="o", markersize=3, linewidth=1.0, label=str(image_id))
    ax.set_xlabel("timestep")
    ax.set_ylabel("inter-pixel variance")
    ax.set_title("variance vs noising timestep")
    if len(series) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _finish(fig, path)


def save_training_figure(logs, path) -> None:
    """Loss and weighted-error curves, one pair of panels, one line per member.

    logs: {timestep: sequence of records with .epoch/.loss/.weighted_error}.
    """
    if not logs:
        raise ParameterError("no training logs to plot")
    fig, (ax_loss, ax_err) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    for k in sorted(logs):
        epochs = [r.epoch for r in logs[k]]
        ax_loss.plot(epochs, [r.loss for r in logs[k]], linewidth=1.0, label=f"t={k}")
        ax_err.plot(
            epochs, [r.weighted_error for r in logs[k]], linewidth=1.0, label=f"t={k}"
        )
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean batch loss")
    ax_err.set_xlabel("epoch")
    ax_err.set_ylabel("weighted error")
    ax_err.axhline(0.5, color="gray", linewidth=0.8, linestyle="--")
    if len(logs) <= 12:
        ax_err.legend(fontsize=7)
    fig.tight_layout()
    _finish(fig, path)


def save_metrics_figure(rows, path) -> None:
    """Accuracy bar chart; rows are (tag, n, correct, accuracy)."""
    rows = list(rows)
    if not rows:
        raise ParameterError("no metric rows to plot")
    tags = [str(r[0]) for r in rows]
    accs = [float(r[3]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(3.0, 1.2 * len(rows)), 3.2))
    ax.bar(range(len(rows)), accs, color="#4878cf")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(tags, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("accuracy")
    for i, a in enumerate(accs):
        ax.text(i, a + 0.01, f"{a:.3f}", ha="center", fontsize=7)
    fig.tight_layout()
    _finish(fig, path)
