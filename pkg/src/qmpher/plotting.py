"""Success-rate-vs-policy-updates plots and a merged comparison table.

Output is deterministic: the Agg backend, fixed figure metadata and a
fixed SVG hash salt mean identical CSVs give identical bytes.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402
from .harness import learning_curve_area, read_metrics, updates_to_threshold  # noqa: E402

TABLE_COLUMNS = ("run", "epochs", "final_success", "best_success", "updates_to_80", "auc")


def run_label(path):
    """Legend label for a metrics CSV: the file stem, or the run directory for ``metrics.csv``."""
    path = Path(path)
    return path.parent.name if path.stem == "metrics" and path.parent.name else path.stem


def comparison_table(paths, threshold=0.8):
    rows = []
    for p in paths:
        m = read_metrics(p)
        s = m["eval_success_rate"]
        rows.append({
            "run": run_label(p),
            "epochs": len(s),
            "final_success": float(s[-1]) if len(s) else float("nan"),
            "best_success": float(s.max()) if len(s) else float("nan"),
            "updates_to_80": updates_to_threshold(m, threshold),
            "auc": learning_curve_area(m) if len(s) else float("nan"),
        })
    return rows


def format_table(rows):
    lines = [",".join(TABLE_COLUMNS)]
    for r in rows:
        lines.append(",".join(str(r[c]) if isinstance(r[c], (int, str)) else f"{r[c]:.6g}"
                              for c in TABLE_COLUMNS))
    return "\n".join(lines) + "\n"


def plot(paths, out, title=None):
    """One curve per CSV (x = policy_updates, y = eval_success_rate).

    The format follows ``out``'s suffix (png, svg or pdf). A comparison table
    is written next to it as ``<out stem>.table.csv``. Returns both paths.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ConfigError("plot needs at least one metrics CSV")
    out = Path(out)
    fmt = out.suffix.lstrip(".").lower() or "png"
    if fmt not in ("png", "svg", "pdf"):
        raise ConfigError(f"unsupported plot format {fmt!r}")
    with plt.rc_context({"svg.hashsalt": "qmpher", "path.simplify": False}):
        fig = build_figure(paths, title)
        out.parent.mkdir(parents=True, exist_ok=True)
        meta = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None},
                "pdf": {"CreationDate": None, "Producer": None, "Creator": None}}[fmt]
        fig.savefig(out, format=fmt, metadata=meta)
        plt.close(fig)

    table = out.with_name(out.stem + ".table.csv")
    table.write_text(format_table(comparison_table(paths)))
    return out, table


def build_figure(paths, title=None):
    """The curve figure alone; callers own closing it."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=100)
    for p in paths:
        m = read_metrics(p)
        ax.plot(m["policy_updates"], m["eval_success_rate"], marker=".", label=run_label(p))
    ax.set_xlabel("policy updates")
    ax.set_ylabel("eval success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    return fig
