"""Readers for the pipeline's exported files.

The figure scripts consume only the text mesh format, field CSVs, chain
CSVs and summary JSON written by the batch runner; nothing here imports
the solver package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


@dataclass
class MeshData:
    vertices: np.ndarray        # (V, 2)
    triangles: np.ndarray       # (T, 3)
    boundary_edges: np.ndarray  # (B, 2)
    gamma1_edge: np.ndarray     # (B,) bool


def read_mesh(path) -> MeshData:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0] != "aetmesh v1":
        raise ValueError(f"{path}: unsupported mesh header {lines[0]!r}")
    pos = 1

    def section(keyword):
        nonlocal pos
        tag, count = lines[pos].split()
        if tag != keyword:
            raise ValueError(f"{path}: expected {keyword!r}, got {tag!r}")
        pos += 1
        return int(count)

    nv = section("vertices")
    vertices = np.array([[float(v) for v in lines[pos + i].split()]
                         for i in range(nv)])
    pos += nv
    nt = section("triangles")
    triangles = np.array([[int(v) for v in lines[pos + i].split()]
                          for i in range(nt)])
    pos += nt
    nb = section("boundary")
    edges, flags = [], []
    for i in range(nb):
        a, b, _t, g = lines[pos + i].split()
        edges.append((int(a), int(b)))
        flags.append(bool(int(g)))
    return MeshData(vertices, triangles, np.array(edges),
                    np.array(flags, dtype=bool))


def read_field(path) -> np.ndarray:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["vertex", "x", "y", "value"]:
            raise ValueError(f"{path}: unexpected field header {header}")
        rows = [(int(r[0]), float(r[3])) for r in reader]
    out = np.empty(len(rows))
    for idx, val in rows:
        out[idx] = val
    return out


def check_same_mesh(mesh: MeshData, *fields: np.ndarray) -> None:
    for f in fields:
        if len(f) != len(mesh.vertices):
            raise ValueError(
                f"field has {len(f)} vertices, mesh has {len(mesh.vertices)}")


@dataclass
class ChainData:
    iters: np.ndarray
    accepted: np.ndarray
    beta: np.ndarray
    phase: list
    samples: np.ndarray  # (rows, n_coeffs)


def read_chain(path) -> ChainData:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["iter", "accepted", "beta", "phase"]:
            raise ValueError(f"{path}: unexpected chain header")
        n_coeffs = len(header) - 4
        iters, acc, beta, phase, xs = [], [], [], [], []
        for row in reader:
            iters.append(int(row[0]))
            acc.append(bool(int(row[1])))
            beta.append(float(row[2]))
            phase.append(row[3])
            xs.append([float(v) for v in row[4:]])
    samples = np.array(xs) if xs else np.empty((0, n_coeffs))
    return ChainData(np.array(iters), np.array(acc, dtype=bool),
                     np.array(beta), phase, samples)


def read_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
