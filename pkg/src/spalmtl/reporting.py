"""Metrics emission: run.json plus self-describing CSV artifacts.

run.json is byte-identical across invocations of the same (config, seed);
nothing time-dependent is written here.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import SimilarityMatrix
from .engine import RunRecord
from .errors import SpalMtlError


def _fmt(x: float) -> str:
    if np.isnan(x):
        return "nan"
    return repr(float(x))


def write_run_json(record: RunRecord, outdir: Path) -> Path:
    path = outdir / "run.json"
    path.write_text(json.dumps(record.to_dict(), sort_keys=True, indent=1) + "\n")
    return path


def write_repgen_csv(curves: list[tuple[int, int, float]], outdir: Path) -> Path:
    """Rows of (step, layer, G)."""
    path = outdir / "repgen.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "layer", "G"])
        for step, layer, g in curves:
            w.writerow([step, layer, _fmt(g)])
    return path


def write_matrix_csv(sim: SimilarityMatrix, path: Path) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task"] + sim.labels)
        for i, label in enumerate(sim.labels):
            w.writerow([label] + [_fmt(v) for v in sim.matrix[i]])
    return path


def read_matrix_csv(path) -> SimilarityMatrix:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "task":
        raise SpalMtlError(f"{path}: not a similarity-matrix CSV")
    labels = rows[0][1:]
    mat = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return SimilarityMatrix(labels=labels, matrix=mat, missing=[])


def write_gradsim_csvs(matrices: dict[int, SimilarityMatrix], outdir: Path) -> list[Path]:
    return [write_matrix_csv(m, outdir / f"gradsim_step{step}.csv")
            for step, m in sorted(matrices.items())]


def write_probe_csv(weights: list[float], outdir: Path) -> Path:
    path = outdir / "probe.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "w"])
        for i, wv in enumerate(weights, start=1):
            w.writerow([i, _fmt(wv)])
    return path


def write_embeddings_csv(task_sim: SimilarityMatrix | None,
                         text_sim: SimilarityMatrix | None, outdir: Path) -> Path:
    """Long-form cosine similarities for task and text embeddings."""
    path = outdir / "embeddings.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "task_a", "task_b", "cosine"])
        for kind, sim in (("task", task_sim), ("text", text_sim)):
            if sim is None:
                continue
            for i, a in enumerate(sim.labels):
                for j, b in enumerate(sim.labels):
                    w.writerow([kind, a, b, _fmt(sim.matrix[i, j])])
    return path


def write_aggregate_json(aggregate, outdir: Path) -> Path:
    path = outdir / "aggregate.json"
    path.write_text(json.dumps(aggregate.to_dict(), sort_keys=True, indent=1) + "\n")
    return path


def emit_metrics(record: RunRecord, outdir,
                 repgen: list[tuple[int, int, float]] | None = None,
                 gradsim: dict[int, SimilarityMatrix] | None = None,
                 probe: list[float] | None = None,
                 task_sim: SimilarityMatrix | None = None,
                 text_sim: SimilarityMatrix | None = None) -> None:
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SpalMtlError(f"cannot create output directory {outdir}: {e}") from e
    write_run_json(record, outdir)
    if repgen is not None:
        write_repgen_csv(repgen, outdir)
    if gradsim is not None:
        write_gradsim_csvs(gradsim, outdir)
    if probe is not None:
        write_probe_csv(probe, outdir)
    if task_sim is not None or text_sim is not None:
        write_embeddings_csv(task_sim, text_sim, outdir)
