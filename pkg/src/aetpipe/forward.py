"""The AET forward operator: boundary voltages to interior power densities.

For boundary inputs f_i the potentials u_i solve the conductivity equation;
the measurement for the pair (i, j) is the power density
sigma * grad(u_i) . grad(u_j), assembled per cell and L2-projected onto the
P1 space so that one nodal representation serves data generation, the
likelihood, and file output.  Synthetic observations are produced on a
nested fine mesh and restricted to the coarse mesh without interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .fem import CellVectorField, NodalField
from .mesh import TWO_PI, NestedMeshPair, TriMesh
from .seeding import stream


@dataclass
class BoundaryInput:
    """Dirichlet boundary voltage, stored as the P1 lifting: prescribed
    values at boundary vertices, zero at interior vertices."""

    mesh: TriMesh
    g: NodalField
    kind: str = "custom"
    ell_bound: int | None = None

    def trace_on_gamma1(self):
        """(arc parameters, values) on Gamma_1, ordered along the arc."""
        idx = self.mesh.boundary_vertices()
        on_g1 = self.mesh.gamma1_mask[idx]
        idx = idx[on_g1]
        t = self.mesh.vertex_arc_params(idx)
        if self.mesh.gamma1_arc is not None:
            start = self.mesh.gamma1_arc[0]
            rel = np.mod(t - start, TWO_PI)
            order = np.argsort(rel, kind="stable")
            idx, t = idx[order], t[order]
        return t, self.g.coeffs[idx]

    def splits_monotonically(self) -> bool:
        """True if the Gamma_1 trace is one nonincreasing then one
        nondecreasing run (single pulse)."""
        _, vals = self.trace_on_gamma1()
        d = np.diff(vals)
        d = d[np.abs(d) > 1e-14]
        if len(d) == 0:
            return True
        sign_changes = int(np.sum(np.diff(np.sign(d)) != 0))
        return sign_changes <= 1


@dataclass
class PowerDensity:
    """Nodal power density for one measurement pair (1-based indices)."""

    h: NodalField
    pair: tuple[int, int]

    def min_value(self) -> float:
        return float(self.h.coeffs.min())


@dataclass
class NoisySignal:
    """Observation y = h + scale * eps with exact relative noise level."""

    y: NodalField
    tau_noise: float
    d_noise: float
    norm_kind: str
    rng_seed: int
    pair: tuple[int, int]


@dataclass
class JacobianReport:
    min_det: float
    fraction_nonpositive: float
    dets: np.ndarray = field(repr=False)


def make_boundary_input(mesh: TriMesh, ell_bound: int) -> BoundaryInput:
    """Cosine-pulse voltage cos(ell*(t - t0)) - 1 on Gamma_1, zero elsewhere.

    With the standard pairing (full:1, half:2, quarter:4, eighth:8) exactly
    one cosine period spans the arc, so the trace vanishes continuously at
    both Gamma_1 endpoints and splits into one decreasing and one increasing
    segment.
    """
    if ell_bound < 1:
        raise ValueError(f"ell_bound must be >= 1, got {ell_bound}")
    if not mesh.gamma1_mask.any():
        raise ValueError("mesh has an empty Gamma_1")
    if mesh.gamma1_arc is None:
        raise ValueError("mesh carries no Gamma_1 arc parameters")
    start, span = mesh.gamma1_arc
    periods = ell_bound * span / TWO_PI
    if abs(periods - round(periods)) > 1e-9 or round(periods) < 1:
        raise ValueError(
            f"ell_bound={ell_bound} puts {periods:.4f} cosine periods on "
            f"Gamma_1; an integer count is required for the trace to vanish "
            f"at the arc endpoints")

    g = np.zeros(mesh.vertex_count)
    idx = np.flatnonzero(mesh.gamma1_mask)
    rel = np.mod(mesh.vertex_arc_params(idx) - start, TWO_PI)
    rel = np.minimum(rel, span)  # guard the far endpoint against mod jitter
    g[idx] = np.cos(ell_bound * rel) - 1.0
    return BoundaryInput(mesh, NodalField(mesh, g), kind="cosine_pulse",
                         ell_bound=ell_bound)


def make_sine_input(mesh: TriMesh, ell_bound: int,
                    taper_fraction: float = 0.1) -> BoundaryInput:
    """Quarter-period-shifted companion voltage for the analytical method.

    Full view: sin(t - t0).  Limited view: sin(ell*(t - t0)) forced to zero
    at the Gamma_1 endpoints by a C^1 smoothstep taper over the outer
    taper_fraction of the arc.
    """
    if ell_bound < 1:
        raise ValueError(f"ell_bound must be >= 1, got {ell_bound}")
    if mesh.gamma1_arc is None:
        raise ValueError("mesh carries no Gamma_1 arc parameters")
    start, span = mesh.gamma1_arc

    g = np.zeros(mesh.vertex_count)
    idx = np.flatnonzero(mesh.gamma1_mask)
    rel = np.mod(mesh.vertex_arc_params(idx) - start, TWO_PI)
    rel = np.minimum(rel, span)
    vals = np.sin(ell_bound * rel)
    if span < TWO_PI - 1e-12:
        w = taper_fraction * span
        s_lo = np.clip(rel / w, 0.0, 1.0)
        s_hi = np.clip((span - rel) / w, 0.0, 1.0)
        vals = vals * (s_lo**2 * (3 - 2 * s_lo)) * (s_hi**2 * (3 - 2 * s_hi))
    g[idx] = vals
    return BoundaryInput(mesh, NodalField(mesh, g), kind="custom",
                         ell_bound=ell_bound)


def linear_input(mesh: TriMesh, direction=(1.0, 0.0)) -> BoundaryInput:
    """Test-only input with trace a*x + b*y on the whole boundary."""
    g = np.zeros(mesh.vertex_count)
    bmask = mesh.boundary_vertex_mask()
    g[bmask] = mesh.vertices[bmask] @ np.asarray(direction, dtype=float)
    return BoundaryInput(mesh, NodalField(mesh, g), kind="custom")


def solve_potentials(sigma: NodalField, inputs: list[BoundaryInput],
                     method: str = "direct") -> list[NodalField]:
    """One Dirichlet solve per boundary input, sharing the assembled matrix."""
    mesh = sigma.mesh
    K = fem.assemble_stiffness(mesh, sigma)
    return [fem._solve_lifted(mesh, K, bi.g, method) for bi in inputs]


def power_density(sigma: NodalField, u_i: NodalField, u_j: NodalField,
                  method: str = "direct") -> NodalField:
    """sigma_cell * (grad u_i . grad u_j) as a cell constant, L2-projected
    onto P1."""
    mesh = sigma.mesh
    scell = sigma.coeffs[mesh.triangles].mean(axis=1)
    gi = fem.gradient(u_i).vectors
    gj = fem.gradient(u_j).vectors
    q = scell * np.einsum("ij,ij->i", gi, gj)
    return fem.project_cellwise(mesh, q, method=method)


def forward(sigma: NodalField, inputs: list[BoundaryInput],
            pairs: list[tuple[int, int]] | None = None,
            method: str = "direct") -> list[PowerDensity]:
    """Power densities for every pair (i, j), i <= j, over the inputs.

    Deterministic given its arguments; pair indices are 1-based.
    """
    us = solve_potentials(sigma, inputs, method)
    if pairs is None:
        d = len(inputs)
        pairs = [(i + 1, j + 1) for i in range(d) for j in range(i, d)]
    out = []
    for (i, j) in pairs:
        h = power_density(sigma, us[i - 1], us[j - 1], method)
        out.append(PowerDensity(h=h, pair=(i, j)))
    return out


def restrict_to_coarse(pair: NestedMeshPair, f_fine: NodalField) -> NodalField:
    """Nodal extraction: fine values at the injected coarse vertices."""
    return NodalField(pair.coarse, f_fine.coeffs[pair.injection])


def add_scaled_noise(h: NodalField, d_noise: float, norm_kind: str,
                     seed: int, pair_idx: tuple[int, int]) -> NoisySignal:
    """y = h + s*eps with iid standard-normal nodal eps, s chosen so the
    relative noise level in the requested functional norm is exactly d_noise."""
    if d_noise < 0:
        raise ValueError(f"d_noise must be >= 0, got {d_noise}")
    mesh = h.mesh
    h_norm = fem.norm(h, norm_kind)
    if d_noise == 0.0:
        # valid for the analytic pipeline only; likelihoods require tau > 0
        return NoisySignal(NodalField(mesh, h.coeffs.copy()), 0.0, 0.0,
                           norm_kind, seed, pair_idx)
    rng = stream(seed, "noise", pair_idx[0], pair_idx[1])
    eps = rng.standard_normal(mesh.vertex_count)
    eps_norm = fem.norm(NodalField(mesh, eps), norm_kind)
    scale = d_noise * h_norm / eps_norm
    y = NodalField(mesh, h.coeffs + scale * eps)
    return NoisySignal(y, tau_noise=d_noise * h_norm, d_noise=d_noise,
                       norm_kind=norm_kind, rng_seed=seed, pair=pair_idx)


def generate_data(sigma_true: NodalField, meshes: NestedMeshPair,
                  inputs: list[BoundaryInput], d_noise: float,
                  norm_kind: str, seed: int,
                  pairs: list[tuple[int, int]] | None = None,
                  method: str = "direct"):
    """Synthetic observations on the coarse mesh from fine-mesh truth.

    Solves on the fine mesh, restricts nodal values through the injection
    map (no interpolation), then adds exactly scaled noise per pair.
    Returns (clean, noisy) lists of PowerDensity / NoisySignal.
    """
    if sigma_true.mesh is not meshes.fine:
        raise ValueError("sigma_true must live on the fine mesh")
    fine_pd = forward(sigma_true, inputs, pairs=pairs, method=method)
    clean, noisy = [], []
    for pd in fine_pd:
        h_c = restrict_to_coarse(meshes, pd.h)
        clean.append(PowerDensity(h=h_c, pair=pd.pair))
        noisy.append(add_scaled_noise(h_c, d_noise, norm_kind, seed, pd.pair))
    return clean, noisy


def check_jacobian_condition(u1: NodalField, u2: NodalField) -> JacobianReport:
    """Per-cell det[grad u1, grad u2]; positivity guarantees pointwise
    invertibility of the 2x2 power-density matrix."""
    if u1.mesh is not u2.mesh:
        raise ValueError("fields live on different meshes")
    g1 = fem.gradient(u1).vectors
    g2 = fem.gradient(u2).vectors
    dets = g1[:, 0] * g2[:, 1] - g1[:, 1] * g2[:, 0]
    return JacobianReport(
        min_det=float(dets.min()),
        fraction_nonpositive=float(np.mean(dets <= 0.0)),
        dets=dets)


# ---------------------------------------------------------------------------
# Out-of-prior phantom

@dataclass
class Inclusion:
    cx: float
    cy: float
    radius: float
    value: float = 8.0


DEFAULT_INCLUSIONS = [
    Inclusion(0.00, 0.62, 0.18),
    Inclusion(0.42, 0.18, 0.12),
    Inclusion(-0.38, 0.25, 0.14),
    Inclusion(-0.15, -0.25, 0.22),
    Inclusion(0.30, -0.45, 0.10),
    Inclusion(-0.55, -0.30, 0.08),
]


def phantom_values(points: np.ndarray, background: float = 4.0,
                   inclusions: list[Inclusion] | None = None,
                   mollify_width: float = 0.03) -> np.ndarray:
    """Smoothed piecewise-constant phantom: disjoint circular inclusions on
    a constant background, each edge ramped by a C^1 smoothstep of the
    given width."""
    if inclusions is None:
        inclusions = DEFAULT_INCLUSIONS
    for a in range(len(inclusions)):
        for b in range(a + 1, len(inclusions)):
            ia, ib = inclusions[a], inclusions[b]
            gap = math.hypot(ia.cx - ib.cx, ia.cy - ib.cy) - ia.radius - ib.radius
            if gap <= 0:
                raise ValueError(f"inclusions {a} and {b} overlap")
    pts = np.asarray(points, dtype=float)
    vals = np.full(pts.shape[0], float(background))
    for inc in inclusions:
        d = np.hypot(pts[:, 0] - inc.cx, pts[:, 1] - inc.cy)
        s = np.clip((inc.radius - d) / mollify_width, 0.0, 1.0)
        ramp = s * s * (3.0 - 2.0 * s)
        vals += (inc.value - background) * ramp
    return vals


def phantom_field(mesh: TriMesh, background: float = 4.0,
                  inclusions: list[Inclusion] | None = None,
                  mollify_width: float = 0.03) -> NodalField:
    return NodalField(mesh, phantom_values(mesh.vertices, background,
                                           inclusions, mollify_width))
