"""Report figures rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 4.5
colors = ["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.family": "sans-serif",
    "font.sans-serif": ["DejaVu Sans"],
    "font.size": 8,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 150,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
}

# no timestamps or version strings so repeated renders match
_PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_curves(report, path) -> Path:
    with plt.rc_context(params):
        fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(fig_width * 1.6, fig_width * golden_mean))
        for s in report.seeds:
            ep = np.arange(1, len(s.loss_curve) + 1)
            ax_l.plot(ep, s.loss_curve, label=f"seed {s.seed}")
            ax_a.plot(ep, s.accuracy_curve)
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("training loss")
        ax_a.set_xlabel("epoch")
        ax_a.set_ylabel("training accuracy")
        ax_a.set_ylim(-0.02, 1.02)
        if report.seeds:
            ax_l.legend()
        fig.suptitle(f"{report.method} {report.architecture}")
        return _save(fig, Path(path))


def plot_fgsm(report, path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for s in report.seeds:
            if s.fgsm:
                ax.plot([r["epsilon"] for r in s.fgsm], [r["accuracy"] for r in s.fgsm], color="0.75", lw=0.8)
        agg = report.aggregate["fgsm"]
        if agg:
            ax.plot([r["epsilon"] for r in agg], [r["accuracy"] for r in agg], "o-", label="seed mean")
            ax.legend()
        ax.set_xlabel(r"$\epsilon$")
        ax.set_ylabel("accuracy under FGSM")
        ax.set_ylim(-0.02, 1.02)
        return _save(fig, Path(path))


def plot_backdoor(report, path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        agg = report.aggregate["backdoor"]
        if agg:
            rates = [r["rate"] for r in agg]
            ax.plot(rates, [r["asr"] for r in agg], "o-", label="ASR")
            ax.plot(rates, [r["accuracy"] for r in agg], "s--", label="clean accuracy")
            ax.legend()
        ax.set_xlabel("poison rate")
        ax.set_ylim(-0.02, 1.02)
        return _save(fig, Path(path))


def plot_cka(matrix, path, title: str = "") -> Path:
    mat = np.array([[np.nan if v is None else v for v in row] for row in matrix], dtype=float)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(fig_width * 0.8, fig_width * 0.7))
        im = ax.imshow(mat, vmin=0.0, vmax=1.0, cmap="viridis", origin="lower")
        ax.set_xlabel("layer")
        ax.set_ylabel("layer")
        ax.set_xticks(range(mat.shape[1]))
        ax.set_yticks(range(mat.shape[0]))
        fig.colorbar(im, ax=ax, label="CKA")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))


def plot_fisher(values: dict, path, title: str = "") -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        names = list(values)
        ax.bar(range(len(names)), [values[n] for n in names], color=[colors[0] if n.endswith(".w") else colors[3] for n in names])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names)
        ax.set_ylabel("normalized Fisher trace")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))


def plot_scaling(tables, path) -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for table in tables:
            t, mem = table.memory_vs_t()
            slope = table.slopes.get("memory_vs_T", float("nan"))
            ax.loglog(t, mem, "o-", label=f"{table.method} (slope {slope:.2f})")
        ax.set_xlabel("T")
        ax.set_ylabel("learning-state elements")
        ax.legend()
        return _save(fig, Path(path))


def render_report(report, out_dir, stem: str) -> list[Path]:
    out = Path(out_dir)
    paths = [plot_curves(report, out / f"{stem}_curves.png")]
    if report.aggregate["fgsm"]:
        paths.append(plot_fgsm(report, out / f"{stem}_fgsm.png"))
    if report.aggregate["backdoor"]:
        paths.append(plot_backdoor(report, out / f"{stem}_backdoor.png"))
    for s in report.seeds:
        if s.cka is not None:
            paths.append(plot_cka(s.cka, out / f"{stem}_{s.seed}_cka.png", f"seed {s.seed}"))
        if s.fisher:
            paths.append(plot_fisher(s.fisher, out / f"{stem}_{s.seed}_fisher.png", f"seed {s.seed}"))
    return paths
