"""Static figures for a campaign suite, each backed by a data sidecar.

``emit_figures`` writes the sidecar tables first and then draws every figure
from those files only, so ``render_all`` on a copied sidecar directory
reproduces the images without the run directories.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import SuiteBundle, stage_counts  # noqa: E402

CURVE_FIELDS = ("label", "group", "seed", "cost", "rel_l2")
STAGE_FIELDS = ("group", "stage", "resolution", "count")


def _check(bundle: SuiteBundle) -> None:
    if not bundle.histories:
        raise ValueError("bundle holds no finished campaign")


# ------------------------------------------------------------------- sidecars

def write_sidecars(bundle: SuiteBundle, out_dir) -> dict:
    """Curve points, stage counts and pointwise errors as CSV / NPZ / JSON."""
    _check(bundle)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = bundle.task
    paths = {}

    p = out / f"error_vs_cost_{task}.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for label, h in bundle.histories.items():
            g = bundle.groups[label]
            for c, e in zip(*h.curve()):
                w.writerow([label, g["group"], g["seed"], repr(float(c)), repr(float(e))])
    paths["curves"] = p

    p = out / f"resolution_counts_{task}.csv"
    totals: dict = {}
    for label, h in bundle.histories.items():
        g = bundle.groups[label]["group"]
        totals[g] = totals.get(g, 0) + stage_counts(h, bundle.R)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STAGE_FIELDS)
        for g, counts in totals.items():
            for q in range(counts.shape[0]):
                for r in range(counts.shape[1]):
                    w.writerow([g, q + 1, r + 1, int(counts[q, r])])
    paths["stages"] = p

    # pointwise maps: the lowest seed of each group
    chosen = {}
    for label in sorted(bundle.pointwise, key=lambda lab: bundle.groups[lab]["seed"]):
        chosen.setdefault(bundle.groups[label]["group"], label)
    if chosen:
        groups = list(chosen)
        errs = np.stack([bundle.pointwise[chosen[g]]["error"] for g in groups])
        p = out / f"pointwise_error_{task}.npz"
        np.savez(p, error=errs, indices=np.stack([bundle.pointwise[chosen[g]]["indices"]
                                                  for g in groups]))
        (out / f"pointwise_error_{task}.json").write_text(json.dumps(
            {"groups": groups, "labels": [chosen[g] for g in groups],
             "grid": bundle.pointwise[chosen[groups[0]]]["grid"]}, indent=2))
        paths["pointwise"] = p
    (out / "figures.json").write_text(json.dumps(
        {"task": task, "R": bundle.R, "missing": bundle.missing,
         "sidecars": {k: v.name for k, v in paths.items()}}, indent=2, sort_keys=True))
    return paths


# ------------------------------------------------------------------ rendering

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def median_curve(runs: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise median of right-continuous step curves over their common cost span."""
    lo = max(c[0] for c, _ in runs)
    hi = min(c[-1] for c, _ in runs)
    grid = np.unique(np.concatenate([c for c, _ in runs]))
    grid = grid[(grid >= lo - 1e-12) & (grid <= hi + 1e-12)]
    vals = [e[np.searchsorted(c, grid + 1e-12, side="right") - 1] for c, e in runs]
    return grid, np.median(np.stack(vals), axis=0)


def render_curves(csv_path, png_path, task: str) -> Path:
    rows = _read_csv(csv_path)
    runs: dict = {}
    for row in rows:
        runs.setdefault(row["group"], {}).setdefault(row["label"], []).append(
            (float(row["cost"]), float(row["rel_l2"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for group, by_label in runs.items():
        curves = [(np.array([c for c, _ in pts]), np.array([e for _, e in pts]))
                  for pts in by_label.values()]
        x, y = median_curve(curves)
        ax.step(x, y, where="post", label=f"{group} (n={len(curves)})")
    ax.set_xlabel("accumulated data cost")
    ax.set_ylabel("test relative L2 (median over seeds)")
    ax.set_title(task)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render_stages(csv_path, png_path, task: str) -> Path:
    rows = _read_csv(csv_path)
    groups = list(dict.fromkeys(r["group"] for r in rows))
    n_stage = max(int(r["stage"]) for r in rows)
    R = max(int(r["resolution"]) for r in rows)
    counts = np.zeros((len(groups), n_stage, R))
    for r in rows:
        counts[groups.index(r["group"]), int(r["stage"]) - 1, int(r["resolution"]) - 1] = int(r["count"])
    fig, axes = plt.subplots(1, len(groups), figsize=(2.6 * len(groups), 3), squeeze=False)
    x = np.arange(1, n_stage + 1)
    for ax, g, c in zip(axes[0], groups, counts):
        bottom = np.zeros(n_stage)
        for r in range(R):
            ax.bar(x, c[:, r], bottom=bottom, label=f"r={r + 1}")
            bottom += c[:, r]
        ax.set_title(g, fontsize=8)
        ax.set_xticks(x)
        ax.set_xlabel("stage (step quartile)")
    axes[0, 0].set_ylabel("queries")
    axes[0, 0].legend(fontsize=7)
    fig.suptitle(task)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render_pointwise(npz_path, png_path, task: str) -> Path:
    meta = json.loads(Path(npz_path).with_suffix(".json").read_text())
    with np.load(npz_path) as z:
        err = z["error"]
    groups = meta["groups"]
    n_cases = err.shape[1]
    fig, axes = plt.subplots(len(groups), n_cases, figsize=(1.8 * n_cases, 1.6 * len(groups)),
                             squeeze=False)
    vmax = float(err.max()) or 1.0
    for i, g in enumerate(groups):
        for j in range(n_cases):
            field_ = err[i, j, ..., -1]
            img = field_[None, :] if field_.ndim == 1 else field_
            ax = axes[i, j]
            im = ax.imshow(img, aspect="auto", cmap="viridis", vmin=0.0, vmax=vmax, origin="lower")
            ax.set_xticks([])
            ax.set_yticks([])
            if j == 0:
                ax.set_ylabel(g, fontsize=7)
    fig.colorbar(im, ax=axes, shrink=0.8)
    fig.suptitle(f"{task}: pointwise |error|")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render_all(sidecar_dir) -> list[Path]:
    """Redraw every figure from the sidecars in ``sidecar_dir``."""
    d = Path(sidecar_dir)
    meta = json.loads((d / "figures.json").read_text())
    task, names = meta["task"], meta["sidecars"]
    out = [render_curves(d / names["curves"], d / f"error_vs_cost_{task}.png", task),
           render_stages(d / names["stages"], d / f"resolution_counts_{task}.png", task)]
    if "pointwise" in names:
        out.append(render_pointwise(d / names["pointwise"], d / f"pointwise_error_{task}.png", task))
    return out


def emit_figures(bundle: SuiteBundle, out_dir) -> list[Path]:
    write_sidecars(bundle, out_dir)
    return render_all(out_dir)
