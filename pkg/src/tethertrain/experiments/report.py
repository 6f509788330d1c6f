"""Report generation: aggregate run CSVs into summary tables and figures.

This is the only module that touches matplotlib; it renders to files
(Agg) next to the delimited summaries so the core stays headless.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np


def _load_csv(path: Path):
    """Rows of a metrics CSV, skipping '#' provenance lines."""
    rows = []
    with open(path) as fh:
        reader = None
        for line in fh:
            if line.startswith("#"):
                continue
            if reader is None:
                header = line.strip().split(",")
                reader = True
                continue
            rows.append(dict(zip(header, line.strip().split(","))))
    return rows


def _f(row, key, default=np.nan):
    try:
        return float(row[key])
    except (KeyError, ValueError):
        return default


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _curve_figure(plt, series: dict, title: str, ylabel: str, out_png: Path):
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for name, runs in sorted(series.items()):
        length = min(len(r) for r in runs)
        if length == 0:
            continue
        arr = np.array([r[:length] for r in runs])
        x = np.arange(length)
        mean = arr.mean(axis=0)
        std = arr.std(axis=0)
        ax.plot(x, mean, label=name)
        ax.fill_between(x, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("update")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)


def report(run_dir, echo=print) -> Path:
    """Aggregate whatever families live under ``run_dir``.

    Writes report_summary.csv plus one PNG per recognized artifact
    family into ``run_dir``/report/.
    """
    run_dir = Path(run_dir)
    out = run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    plt = _pyplot()
    summary_rows = []

    # walking ablation / swing ablation summaries
    for name in ("walk_summary.csv", "swing_summary.csv", "sweep_summary.csv"):
        for path in sorted(run_dir.rglob(name)):
            rows = _load_csv(path)
            if not rows:
                continue
            key = "variant" if "variant" in rows[0] else "ratio"
            value_field = next(
                f for f in ("final_eval", "final_reward", "gap") if f in rows[0]
            )
            grouped = defaultdict(list)
            for row in rows:
                grouped[row[key]].append(_f(row, value_field))
            for group, vals in sorted(grouped.items()):
                summary_rows.append({
                    "source": path.name, "group": group, "metric": value_field,
                    "mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals),
                })
            fig, ax = plt.subplots(figsize=(7, 4.2))
            names = sorted(grouped)
            means = [np.mean(grouped[g]) for g in names]
            stds = [np.std(grouped[g]) for g in names]
            ax.bar(range(len(names)), means, yerr=stds, capsize=4)
            ax.set_xticks(range(len(names)))
            ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
            ax.set_ylabel(value_field)
            ax.set_title(path.name)
            fig.tight_layout()
            fig.savefig(out / f"{path.stem}.png", dpi=130)
            plt.close(fig)

    # reward curves by variant (walk ablation / stage runs / swing runs)
    curve_series = defaultdict(list)
    for path in sorted(run_dir.rglob("curves_*.csv")):
        rows = [r for r in _load_csv(path) if r.get("phase") == "eval"]
        curve_series[path.stem.replace("curves_", "")].append(
            [_f(r, "mean_step_reward") for r in rows]
        )
    if curve_series:
        _curve_figure(plt, curve_series, "rig evaluation reward", "mean step reward",
                      out / "rig_eval_curves.png")
    swing_series = defaultdict(list)
    for path in sorted(run_dir.rglob("swing_*.csv")):
        if path.name == "swing_summary.csv":
            continue
        rows = _load_csv(path)
        swing_series[path.stem.replace("swing_", "")].append(
            [_f(r, "mean_step_reward") for r in rows]
        )
    if swing_series:
        _curve_figure(plt, swing_series, "swing-up training reward", "mean step reward",
                      out / "swing_curves.png")
    stage1_series = defaultdict(list)
    for path in sorted(run_dir.rglob("stage1*_metrics.csv")):
        rows = _load_csv(path)
        stage1_series[path.stem].append([_f(r, "mean_step_reward") for r in rows])
    if stage1_series:
        _curve_figure(plt, stage1_series, "pretraining reward", "mean step reward",
                      out / "pretrain_curves.png")

    # the comparison grid passes through verbatim when present
    for path in sorted(run_dir.rglob("grid.csv")):
        (out / "grid.csv").write_text(path.read_text())

    with open(out / "report_summary.csv", "w") as fh:
        writer = csv.DictWriter(fh, fieldnames=["source", "group", "metric", "mean", "std", "n"])
        writer.writeheader()
        for row in summary_rows:
            writer.writerow(row)
    echo(f"[tethertrain] report written to {out}")
    return out


def verify(run_dir, echo=print) -> bool:
    """Re-hash outputs against the run manifest and config-hash headers."""
    import hashlib

    run_dir = Path(run_dir)
    manifest_path = run_dir / "run_manifest.json"
    if not manifest_path.exists():
        echo(f"[tethertrain] no run_manifest.json under {run_dir}")
        return False
    doc = json.loads(manifest_path.read_text())
    ok = True
    for rel, want in doc["files"].items():
        p = run_dir / rel
        if not p.exists():
            echo(f"  MISSING {rel}")
            ok = False
            continue
        got = hashlib.sha256(p.read_bytes()).hexdigest()
        if got != want:
            echo(f"  HASH MISMATCH {rel}")
            ok = False
    config_hash = doc.get("config_hash")
    for path in sorted(run_dir.rglob("*.csv")):
        if path.parent.name == "report":
            continue
        with open(path) as fh:
            first = fh.readline()
        if first.startswith("# config_hash="):
            embedded = first.strip().split("=", 1)[1]
            if embedded != config_hash:
                echo(f"  CONFIG HASH MISMATCH in {path.relative_to(run_dir)}")
                ok = False
    echo(f"[tethertrain] verify {'OK' if ok else 'FAILED'} for {run_dir}")
    return ok
