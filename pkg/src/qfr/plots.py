"""Static SVG line charts of coefficient bands, SimBaS curves and predicted densities."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so reruns give identical files
plt.rcParams["svg.hashsalt"] = "qfr"
_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_band(path, grid, name, band) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(grid, band.lower, band.upper, color="0.85", label="joint band")
    ax.plot(grid, band.pointwise_lower, color="0.5", lw=0.8, ls="--", label="pointwise band")
    ax.plot(grid, band.pointwise_upper, color="0.5", lw=0.8, ls="--")
    ax.plot(grid, band.mean, color="k", lw=1.2, label="posterior mean")
    ax.axhline(0.0, color="0.3", lw=0.5)
    ax.set_xlabel("p")
    ax.set_ylabel(name)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_simbas(path, grid, curves: dict) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, c in curves.items():
        ax.plot(grid, c, lw=1.0, label=name)
    ax.axhline(0.05, color="0.3", lw=0.5, ls=":")
    ax.set_yscale("log")
    ax.set_xlabel("p")
    ax.set_ylabel("SimBaS")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_densities(path, tables: dict) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, t in tables.items():
        if not t.degenerate:
            ax.plot(t.x, t.density, lw=1.0, label=name)
    ax.set_xlabel("x")
    ax.set_ylabel("predicted density")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, Path(path))


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in str(name))


def write_all(out, grid, bands: dict, curves: dict, pdfs: dict) -> list[Path]:
    out = Path(out) / "plots"
    out.mkdir(parents=True, exist_ok=True)
    paths = [plot_band(out / f"band_{_slug(n)}.svg", grid, n, b) for n, b in bands.items()]
    paths.append(plot_simbas(out / "simbas.svg", grid, curves))
    paths.append(plot_densities(out / "densities.svg", pdfs))
    return paths
