"""SVG line plots rendered from the sweep CSVs.

The CSVs are the contract; plots are derived from them and need the
optional matplotlib dependency.
"""

from __future__ import annotations

import csv
from pathlib import Path

YLABELS = {
    "pte_vs_per": "p95 tracking error (m)",
    "pte_vs_rate": "p95 tracking error (m)",
    "fcw_vs_per": "FCW accuracy",
    "fcw_vs_rate": "FCW accuracy",
}


def read_table(path) -> tuple[list[float], dict[str, list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    cols = [float(c) for c in rows[0][1:]]
    return cols, {r[0]: [float(v) for v in r[1:]] for r in rows[1:]}


def plot_table(csv_path, svg_path=None) -> Path:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("plots need matplotlib: pip install 'artifact[plots]'") from exc
    csv_path = Path(csv_path)
    svg_path = Path(svg_path) if svg_path else csv_path.with_suffix(".svg")
    cols, series = read_table(csv_path)
    x = [100.0 * c for c in cols] if csv_path.stem.endswith("per") else cols
    # fixed metadata keeps the SVG byte-identical across runs
    matplotlib.rcParams["svg.hashsalt"] = "hgptrack"
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    for name, ys in series.items():
        ax.plot(x, ys, marker="o", label=name)
    ax.set_xlabel("PER (%)" if csv_path.stem.endswith("per") else "BSM rate (Hz)")
    ax.set_ylabel(YLABELS.get(csv_path.stem, csv_path.stem))
    if csv_path.stem.startswith("pte"):
        ax.set_yscale("symlog", linthresh=0.1)
    if csv_path.stem.endswith("rate"):
        ax.invert_xaxis()
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path


def plot_sweep(out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [plot_table(out_dir / f"{stem}.csv") for stem in YLABELS if (out_dir / f"{stem}.csv").exists()]
