"""File emission: CSV exports with full decimal precision and deterministic
JSON reports (sorted keys, no timestamps) so identical runs are byte-identical."""

from __future__ import annotations

import json
import os

import numpy as np

from . import __version__

SPEC_VERSION = 1


def _fmt(v):
    return format(float(v), ".17g")


def write_value_csv(path, fld):
    grid = fld.grid
    pts = grid.coords()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{k+1}" for k in range(grid.n)) + ",regime,value\n")
        for node in range(grid.num_nodes):
            coord = ",".join(_fmt(c) for c in pts[node])
            for alpha in range(fld.m):
                fh.write(f"{coord},{alpha},{_fmt(fld.values[node, alpha])}\n")


def write_policy_csv(path, policy):
    grid = policy.grid
    pts = grid.coords()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{k+1}" for k in range(grid.n)) + ",regime,action\n")
        for node in range(grid.num_nodes):
            coord = ",".join(_fmt(c) for c in pts[node])
            for alpha in range(policy.m):
                fh.write(f"{coord},{alpha},{int(policy.actions[node, alpha])}\n")


def write_boundary_csv(path, grid, boundary_lists):
    with open(path, "w", newline="") as fh:
        fh.write("regime,node," + ",".join(f"x{k+1}" for k in range(grid.n)) + "\n")
        for alpha, nodes in enumerate(boundary_lists):
            for node in nodes:
                coord = ",".join(_fmt(c) for c in grid.node_coord(node))
                fh.write(f"{alpha},{node},{coord}\n")


def write_json(path, payload):
    payload = dict(payload)
    payload.setdefault("spec_version", SPEC_VERSION)
    payload.setdefault("tool_version", __version__)
    with open(path, "w") as fh:
        json.dump(_plain(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path!r} is not writable")
    return path


def read_value_csv(path):
    """Inverse of write_value_csv; returns (coords (K, n), values (K, m))."""
    from .grid import Grid, ValueField

    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    n = sum(1 for nm in names if nm.startswith("x"))
    coords = np.stack([data[f"x{k+1}"] for k in range(n)], axis=-1)
    regimes = data["regime"].astype(int)
    m = regimes.max() + 1
    col = names[-1]
    vals = data[col]
    nodes = coords[::m]
    upper = nodes.max(axis=0)
    counts = [np.unique(nodes[:, k]).size for k in range(n)]
    grid = Grid(upper, counts)
    values = vals.reshape(grid.num_nodes, m)
    if col == "value":
        return grid, ValueField(grid, m, values)
    return grid, values.astype(int)


def read_policy_csv(path):
    from .solver import PolicyField

    grid, actions = read_value_csv(path)
    return grid, PolicyField(grid, actions.shape[1], actions.astype(np.int32))
