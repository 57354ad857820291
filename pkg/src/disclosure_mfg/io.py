"""CSV/JSON artifacts.  Every file starts with the hash of the config that made it."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .grid import Grid1D
from .model import ModelSpec
from .solver import MFGSolution, build_fields
from .tree import RevelationTree

HASH_PREFIX = "# config_sha256: "


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v) + 0.0, ".17g")  # no negative zeros
    return str(v)


def write_csv(path: Path, header: list[str], rows, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(HASH_PREFIX + config_hash + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[str, list[str], np.ndarray]:
    """Return (config hash, header, float array)."""
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith(HASH_PREFIX):
            raise ValueError(f"{path}: missing config hash line")
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return first[len(HASH_PREFIX):].strip(), header, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj: dict, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"config_sha256": config_hash, **_jsonable(obj)}
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def file_config_hash(path: Path) -> str | None:
    """Config hash recorded in a CSV or JSON artifact, if any."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8")).get("config_sha256")
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    return first[len(HASH_PREFIX):].strip() if first.startswith(HASH_PREFIX) else None


# ---------------------------------------------------------------------------
# Solutions


def save_solution(sol: MFGSolution, out_dir: Path, config_hash: str) -> list[Path]:
    """One CSV per node with columns t, x, phi, m, drift, plus a JSON summary."""
    out_dir = Path(out_dir)
    g = sol.grid
    files = []
    for nid, nf in sorted(sol.nodes.items()):
        drift = sol.drift(nid)
        t = g.t[nf.start:nf.stop + 1]

        def rows(nf=nf, drift=drift, t=t):
            for r in range(nf.rows):
                for i in range(g.n_x):
                    yield t[r], g.x[i], nf.phi[r, i], nf.m[r, i], drift[r, i]

        files.append(write_csv(out_dir / f"node_{nid:03d}.csv", ["t", "x", "phi", "m", "drift"], rows(), config_hash))
    summary = {
        "grid": g.to_dict(),
        "tree": json.loads(sol.tree.to_json()),
        "converged": sol.converged,
        "iterations": sol.iterations,
        "residuals": sol.residuals,
        "exploitability": sol.exploitability,
        "mass_drift": sol.mass_drift,
        "jump_residual_max": {str(k): float(np.max(np.abs(v))) for k, v in sorted(sol.jump_residuals.items())},
        "nodes": {
            str(nid): {"start": nf.start, "stop": nf.stop, "belief": nf.belief, "file": f"node_{nid:03d}.csv"}
            for nid, nf in sorted(sol.nodes.items())
        },
    }
    files.append(write_json(out_dir / "solution.json", summary, config_hash))
    return files


def load_solution(out_dir: Path, model: ModelSpec, grid: Grid1D, expect_hash: str | None = None) -> MFGSolution:
    """Rebuild a solution written by :func:`save_solution` (values round-trip exactly)."""
    out_dir = Path(out_dir)
    summary = json.loads((out_dir / "solution.json").read_text(encoding="utf-8"))
    if expect_hash is not None and summary["config_sha256"] != expect_hash:
        raise ValueError(f"{out_dir} was produced by config {summary['config_sha256']}, not {expect_hash}")
    tree = RevelationTree.from_json(json.dumps(summary["tree"]))
    nodes = build_fields(tree, grid)
    for nid, nf in nodes.items():
        _, header, data = read_csv(out_dir / summary["nodes"][str(nid)]["file"])
        cols = {h: data[:, k].reshape(nf.rows, grid.n_x) for k, h in enumerate(header)}
        nf.phi, nf.m = cols["phi"], cols["m"]
    return MFGSolution(
        model, grid, tree, nodes,
        residuals=summary["residuals"],
        exploitability=summary["exploitability"],
        converged=summary["converged"],
        mass_drift=summary["mass_drift"],
    )
