"""Figure regeneration: columnar plot data plus rendered vector graphics.

Each plot spec turns one or more record CSVs into a gnuplot-style .dat
file (whitespace columns, one indexed block per series) and a matplotlib
SVG rendered alongside it.  Column names are validated up front; a
missing column or an empty CSV aborts before any file is written.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import read_csv_columns

__all__ = ["emit_plot_data", "PLOT_KINDS"]

PLOT_KINDS = ("convergence", "sweep", "floor")


def _series_label(path: Path, spec: dict) -> str:
    labels = spec.get("labels", {})
    return labels.get(path.stem, path.stem)


def _load_series(csv_paths, x_col: str, y_col: str):
    loaded = []
    for path in csv_paths:
        path = Path(path)
        cols = read_csv_columns(path)
        for need in (x_col, y_col):
            if need not in cols:
                raise ValueError(f"{path}: missing column {need!r}")
        x, y = cols[x_col], cols[y_col]
        keep = ~np.isnan(y)
        if not keep.any():
            raise ValueError(f"{path}: column {y_col!r} has no values")
        loaded.append((path, x[keep], y[keep]))
    return loaded


def _write_dat(out_path: Path, blocks, x_col: str, y_col: str) -> None:
    with open(out_path, "w") as f:
        f.write(f"# columns: {x_col} {y_col}\n")
        for label, x, y in blocks:
            f.write(f"# series: {label}\n")
            for xi, yi in zip(x, y):
                f.write(f"{xi!r} {yi!r}\n")
            f.write("\n\n")  # gnuplot index separator


def emit_plot_data(csv_paths, spec: dict, out_dir) -> dict:
    """Render one figure from record CSVs.

    spec keys: kind (convergence | sweep | floor), name, x, y, optional
    logx/logy (default on for convergence and floor), labels
    {file-stem: legend label}, hlines {label: value} for reference levels.
    Returns the paths written.
    """
    kind = spec.get("kind")
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if not csv_paths:
        raise ValueError("no input CSVs")
    name = spec.get("name", kind)
    x_col = spec.get("x", "t" if kind == "convergence" else "value")
    y_col = spec.get("y", "dist_sq" if kind != "sweep" else "train_err")
    logx = spec.get("logx", kind != "sweep")
    logy = spec.get("logy", kind != "sweep")

    loaded = _load_series(csv_paths, x_col, y_col)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    blocks = [(_series_label(p, spec), x, y) for p, x, y in loaded]
    dat_path = out_dir / f"{name}.dat"
    _write_dat(dat_path, blocks, x_col, y_col)

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, x, y in blocks:
        ax.plot(x, y, lw=1.2, label=label)
    for label, value in spec.get("hlines", {}).items():
        ax.axhline(float(value), color="gray", ls="--", lw=1.0, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(spec.get("xlabel", x_col))
    ax.set_ylabel(spec.get("ylabel", y_col))
    if spec.get("title"):
        ax.set_title(spec["title"])
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    svg_path = out_dir / f"{name}.svg"
    fig.savefig(svg_path)
    plt.close(fig)
    return {"dat": str(dat_path), "svg": str(svg_path)}
