"""CSV/JSON result emission and matplotlib figure rendering for the CLI."""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_heatmap_csv(heatmap, path: str):
    """Long-format rows (z, state, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "state", "value"])
        for j, z in enumerate(heatmap.z_values):
            for i, s in enumerate(heatmap.states):
                writer.writerow([format(z, ".17g"), f"s{s + 1}", format(heatmap.values[i, j], ".17g")])


def render_heatmap_figure(heatmaps: dict, path: str, title: str = ""):
    """One panel per estimator, states on the y axis, z on the x axis."""
    n = len(heatmaps)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 2.8), squeeze=False)
    vmax = max(float(hm.values.max()) for hm in heatmaps.values()) or 1.0
    for ax, (name, hm) in zip(axes[0], heatmaps.items()):
        im = ax.pcolormesh(hm.z_values, hm.states + 1, hm.values, vmin=0.0, vmax=vmax, shading="nearest")
        ax.set_xlabel("z")
        ax.set_ylabel("state")
        ax.set_title(name, fontsize=9)
        fig.colorbar(im, ax=ax)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_rejection_csv(rows: list[dict], path: str):
    """Long-format rows (method, size, seed, return)."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "size", "seed", "return"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_rejection_summary(summaries: dict, path: str):
    """Table-shaped JSON: method -> {mean, interval90, per_seed}."""
    doc = {
        method: {
            "mean": s.mean,
            "interval90": list(s.interval),
            "per_seed": [float(v) for v in s.values],
        }
        for method, s in summaries.items()
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_rejection_figure(summaries: dict, path: str, title: str = ""):
    fig, ax = plt.subplots(figsize=(4.2, 2.8))
    names = list(summaries)
    means = [summaries[n].mean for n in names]
    errs = [summaries[n].half_width for n in names]
    ax.bar(names, means, yerr=errs, capsize=4, color="#4878d0")
    ax.set_ylabel("average return")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_metrics_csv(metrics: list[tuple], path: str):
    """(step, loss, residual norm) training metrics stream."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "residual_norm"])
        for row in metrics:
            step, loss = row[0], row[1]
            resid = row[2] if len(row) > 2 else ""
            writer.writerow([step, format(loss, ".17g"), format(resid, ".17g") if resid != "" else ""])


def render_metrics_figure(metrics: list[tuple], path: str, title: str = ""):
    if not metrics:
        return
    steps = [row[0] for row in metrics]
    losses = [row[1] for row in metrics]
    fig, ax = plt.subplots(figsize=(4.2, 2.8))
    ax.plot(steps, losses)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _point_set_hash(xs: np.ndarray) -> str:
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(np.asarray(xs, dtype=np.float64)).tobytes()).hexdigest()[:16]


def export_matrix_csv(matrix: np.ndarray, path: str):
    matrix = np.atleast_2d(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([format(v, ".17g") for v in row])


def export_kernel_results(path_base: str, *, gamma, point_sets: dict, spec_doc: dict, matrices: dict):
    """Kernel matrices / converged-Gaussian blocks as CSV plus a manifest.

    ``matrices`` maps names to arrays (one CSV each); the manifest records
    the discount, a hash per named point set, and the generating network
    description.
    """
    written = {}
    for name, mat in matrices.items():
        out = f"{path_base}.{name}.csv"
        export_matrix_csv(np.asarray(mat), out)
        written[name] = os.path.basename(out)
    manifest = {
        "gamma": np.asarray(gamma).tolist(),
        "point_set_hashes": {name: _point_set_hash(xs) for name, xs in point_sets.items()},
        "spec": spec_doc,
        "files": written,
    }
    with open(path_base + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def save_checkpoint(params: np.ndarray, manifest: dict, path_base: str):
    """Flat binary parameter vector plus a JSON manifest."""
    np.save(path_base + ".npy", np.asarray(params))
    with open(path_base + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path_base: str):
    params = np.load(path_base + ".npy")
    with open(path_base + ".json") as fh:
        manifest = json.load(fh)
    return params, manifest


def ensure_dir(path: str):
    os.makedirs(path, exist_ok=True)
    return path
