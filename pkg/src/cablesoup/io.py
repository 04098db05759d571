"""Plain-text writers and readers: path CSVs, field dumps, JSON reports.

Floats are written with 17 significant digits so files round-trip exactly
and identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .stoch_core import DyadicPath

__all__ = [
    "fmt",
    "to_jsonable",
    "write_json",
    "write_rows",
    "write_path_csv",
    "read_path_csv",
    "write_field",
    "write_soup",
]


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_rows(path, header, rows, comments=()) -> Path:
    """CSV with optional leading ``# key=value`` comment lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_path_csv(path, p: DyadicPath, seed=None, stream: str | None = None) -> Path:
    """Path values with an interval/J/kind/seed/stream header; seed and stream default to the path's own."""
    seed = p.meta.get("seed") if seed is None else seed
    stream = p.meta.get("stream", "") if stream is None else stream
    comments = [
        f"interval={fmt(p.start)},{fmt(p.start + p.length)}",
        f"J={p.level}",
        f"kind={p.kind}",
        f"seed={'' if seed is None else seed}",
        f"stream={stream}",
    ]
    return write_rows(path, ["position", "value"], zip(p.positions, p.values), comments)


def read_path_csv(path) -> DyadicPath:
    meta = {}
    pos, vals = [], []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            if line.startswith("position"):
                continue
            x, v = line.split(",")
            pos.append(float(x))
            vals.append(float(v))
    if "interval" in meta:
        a, b = (float(t) for t in meta["interval"].split(","))
    else:
        a, b = pos[0], pos[-1]
    J = int(meta["J"]) if "J" in meta else int(round(math.log2(len(vals) - 1)))
    return DyadicPath(a, b - a, J, np.array(vals), meta.get("kind", "free"))


def write_field(directory, field, seed=None, stream: str = "") -> list[Path]:
    """One CSV per edge, a vertex CSV and a JSON manifest."""
    d = Path(directory)
    g = field.graph
    files = []
    edges_meta = []
    for k, (e, prof) in enumerate(zip(g.edges, field.edges)):
        name = f"edge_{k:03d}.csv"
        files.append(write_path_csv(d / name, prof))
        edges_meta.append({"index": k, "u": str(e.u), "v": str(e.v), "length": e.length, "file": name})
    rows = [(str(x), fmt(v)) for x, v in zip(g.interior, field.vertex.values)]
    files.append(write_rows(d / "vertices.csv", ["vertex", "value"], rows))
    manifest = {
        "c": field.c,
        "J": field.J,
        "seed": seed,
        "stream": stream,
        "graph_sha256": g.digest,
        "boundary": sorted(str(b) for b in g.boundary),
        "edges": edges_meta,
    }
    files.append(write_json(d / "manifest.json", manifest))
    return files


def write_soup(path, soup) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(soup.to_jsonl(), encoding="utf-8")
    return path
