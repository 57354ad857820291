"""Run configuration: one TOML file shared by every subcommand."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from .grid import Grid1D, GridError
from .model import Belief, ConfigError, ModelSpec, config_hash, load_config, model_from_config
from .solver import SolverConfig
from .tree import RevelationTree, TreeError, add_split, full_reveal, no_reveal

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridConfig:
    x_max: float = 8.0
    n_x: int = 201
    n_t: int = 400
    c_cfl: float = 1.0

    def build(self, horizon: float) -> Grid1D:
        try:
            return Grid1D(self.x_max, self.n_x, horizon, self.n_t, self.c_cfl)
        except GridError as exc:
            raise ConfigError("grid", str(exc)) from None


@dataclass(frozen=True)
class OptimizerConfig:
    times: tuple[float, ...] = (0.0,)
    branching: int = 2
    starts: int = 4
    max_evals: int = 400
    tol_opt: float = 1e-4
    w_min: float = 1e-3


@dataclass(frozen=True)
class EncoderConfig:
    n: tuple[int, ...] = (4, 6, 8)


@dataclass(frozen=True)
class SimSettings:
    n_list: tuple[int, ...] = (8, 32, 128, 512)
    n_mc: int = 200
    substeps: int = 1
    track_players: tuple[int, ...] = (0,)
    shifts: tuple[float, ...] = (-0.2, -0.1, 0.1, 0.2)
    scales: tuple[float, ...] = (0.9, 1.1)
    n_verify: int = 20_000
    encode_n: int = 6


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    model: ModelSpec
    grid: Grid1D
    solver: SolverConfig
    tree_spec: dict
    optimizer: OptimizerConfig
    encoder: EncoderConfig
    sim: SimSettings
    seed: int = 0
    source: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def tree(self, base_dir: Path | None = None) -> RevelationTree:
        return build_tree(self.tree_spec, self.model, base_dir)


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected a table")
    return sec


def _fill(klass, sec: dict, where: str, **conv):
    known = set(klass.__dataclass_fields__)
    kwargs = {}
    for key, value in sec.items():
        if key not in known:
            raise ConfigError(f"{where}.{key}", "unknown field")
        try:
            kwargs[key] = conv[key](value) if key in conv else value
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{key}", f"invalid value {value!r}") from None
    return klass(**kwargs)


def _floats(v):
    return tuple(float(x) for x in v)


def _ints(v):
    return tuple(int(x) for x in v)


def run_config_from_dict(raw: dict, source: str = "") -> RunConfig:
    for name in raw:
        if name not in {"model", "grid", "tree", "optimizer", "encoder", "sim", "seed"}:
            raise ConfigError(name, "unknown section")
    model = model_from_config(raw)
    gsec = _section(raw, "grid")
    grid_keys = {"x_max": float, "n_x": int, "n_t": int, "c_cfl": float}
    grid_cfg = _fill(GridConfig, {k: v for k, v in gsec.items() if k in grid_keys}, "grid", **grid_keys)
    solver_keys = {"tol_fp": float, "k_max": int, "phi_ceiling": float, "grad_ceiling": float, "init": str}
    extra = set(gsec) - set(grid_keys) - set(solver_keys)
    if extra:
        raise ConfigError(f"grid.{sorted(extra)[0]}", "unknown field")
    solver = _fill(SolverConfig, {k: v for k, v in gsec.items() if k in solver_keys}, "grid", **solver_keys)
    if solver.init not in ("heat", "frozen"):
        raise ConfigError("grid.init", "must be 'heat' or 'frozen'")
    opt = _fill(OptimizerConfig, _section(raw, "optimizer"), "optimizer", times=_floats, branching=int,
                starts=int, max_evals=int, tol_opt=float, w_min=float)
    enc = _fill(EncoderConfig, _section(raw, "encoder"), "encoder", n=_ints)
    sim = _fill(SimSettings, _section(raw, "sim"), "sim", n_list=_ints, n_mc=int, substeps=int,
                track_players=_ints, shifts=_floats, scales=_floats, n_verify=int, encode_n=int)
    if any(n < 2 for n in sim.n_list):
        raise ConfigError("sim.n_list", "player counts must be at least 2")
    if sim.substeps < 1:
        raise ConfigError("sim.substeps", "must be at least 1")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    tree_spec = _section(raw, "tree") or {"kind": "no_reveal"}
    cfg = RunConfig(raw, model, grid_cfg.build(model.horizon), solver, tree_spec, opt, enc, sim, seed, source)
    for problem in model.check_assumptions(cfg.grid.x):
        if "hamiltonian" in problem:
            raise ConfigError("model.type.hamiltonian", problem)
        log.warning("model assumption not met: %s", problem)
    cfg.tree(Path(source).parent if source else None)  # fail fast on a bad tree
    return cfg


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(load_config(path), str(path))


def build_tree(spec: dict, model: ModelSpec, base_dir: Path | None = None) -> RevelationTree:
    kind = spec.get("kind")
    T, p0 = model.horizon, model.prior
    try:
        if kind == "no_reveal":
            return no_reveal(p0, _floats(spec.get("times", ())), T)
        if kind == "full_reveal":
            return full_reveal(p0, float(spec.get("time", 0.0)), T)
        if kind == "split":
            tree = no_reveal(p0, _floats(spec["times"]), T)
            for j, s in enumerate(spec.get("split", [])):
                node = _node_at(tree, [int(c) for c in s.get("at", [])], f"tree.split[{j}].at")
                tree = add_split(tree, node, [Belief.of(p) for p in s["posteriors"]], s.get("weights"))
            return tree
        if kind == "file":
            path = Path(spec["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return RevelationTree.from_json(path.read_text())
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"tree.{exc.args[0]}", "required field missing") from None
    except (TreeError, ValueError, OSError) as exc:
        raise ConfigError("tree", str(exc)) from None
    raise ConfigError("tree.kind", f"unknown tree kind {kind!r} (no_reveal, full_reveal, split, file)")


def _node_at(tree: RevelationTree, child_positions: list[int], where: str) -> int:
    """Node reached by following child positions from the root."""
    nid = 0
    for c in child_positions:
        kids = tree.nodes[nid].children
        if not 0 <= c < len(kids):
            raise ConfigError(where, f"node {nid} has no child #{c}")
        nid = kids[c]
    return nid


def describe(cfg: RunConfig) -> dict:
    """JSON-ready summary for manifests."""
    return {
        "grid": cfg.grid.to_dict(),
        "solver": asdict(cfg.solver),
        "optimizer": asdict(cfg.optimizer),
        "encoder": asdict(cfg.encoder),
        "sim": asdict(cfg.sim),
        "seed": cfg.seed,
        "tree": json.loads(json.dumps(cfg.tree_spec)),
    }
