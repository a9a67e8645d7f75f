"""Static charts drawn from the scenario CSVs (first column on the x axis)."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .io import read_table


def plot_tables(paths: Iterable[Path]) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for path in paths:
        path = Path(path)
        if path.suffix != ".csv" or path.name.startswith("work_distribution"):
            continue
        cols, meta = read_table(path)
        names = list(cols)
        if len(cols[names[0]]) < 2:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in names[1:]:
            ax.plot(cols[names[0]], cols[name], label=name)
        ax.set_xlabel(names[0])
        ax.set_title(meta.get("figure", path.stem), fontsize=8)
        if len(names) <= 9:
            ax.legend(fontsize=7)
        fig.tight_layout()
        png = path.with_suffix(".png")
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written
