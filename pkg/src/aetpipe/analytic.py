"""Two-step analytical conductivity reconstruction from 2x2 power densities.

Step one recovers the rotation angle between the scaled-gradient frame
sqrt(sigma)*[grad u_1, grad u_2] and the data-determined factor frame via a
Poisson problem; step two recovers log(sigma) from a second Poisson problem
whose right-hand side couples the angle with derivatives of the factor.
Noisy data matrices are made pointwise SPD first by flooring their
eigenvalues.

Conventions: T is the lower-triangular factor with T^T T = H^{-1}; entries
of T are P1 vertex fields, their gradients are cell fields, and every cell
product uses cell-averaged companion factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .fem import CellVectorField, NodalField
from .mesh import TWO_PI, TriMesh


class AnalyticError(RuntimeError):
    """Reconstruction aborted on a data-quality problem."""


@dataclass
class MatrixField:
    """Per-vertex symmetric 2x2 data matrices (h12 stored once)."""

    mesh: TriMesh
    h11: np.ndarray
    h12: np.ndarray
    h22: np.ndarray

    def __post_init__(self):
        n = self.mesh.vertex_count
        for name in ("h11", "h12", "h22"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per vertex")
            setattr(self, name, arr)

    def min_eigenvalues(self) -> np.ndarray:
        m = 0.5 * (self.h11 + self.h22)
        r = np.hypot(0.5 * (self.h11 - self.h22), self.h12)
        return m - r


@dataclass
class TFactorField:
    """Lower-triangular factor T = [[t11, 0], [t21, t22]] per vertex."""

    mesh: TriMesh
    t11: np.ndarray
    t21: np.ndarray
    t22: np.ndarray

    def det(self) -> np.ndarray:
        return self.t11 * self.t22


def threshold_eigenvalues(Y: MatrixField, b: float) -> MatrixField:
    """Floor both eigenvalues of every vertex matrix at b (> 0).

    Reassembles from the symmetric eigendecomposition; output is SPD
    everywhere and untouched wherever the input already satisfied the bound.
    """
    if b <= 0:
        raise ValueError(f"threshold must be positive, got {b}")
    a, c, d = Y.h11, Y.h12, Y.h22
    m = 0.5 * (a + d)
    r = np.hypot(0.5 * (a - d), c)
    lam1, lam2 = m - r, m + r
    lam1c = np.maximum(lam1, b)
    lam2c = np.maximum(lam2, b)

    # eigenvector of lam2, picked from the better-conditioned column
    v1a, v2a = c, lam2 - a
    v1b, v2b = lam2 - d, c
    use_b = np.hypot(v1b, v2b) > np.hypot(v1a, v2a)
    v1 = np.where(use_b, v1b, v1a)
    v2 = np.where(use_b, v2b, v2a)
    nrm = np.hypot(v1, v2)
    degenerate = nrm < 1e-300
    nrm = np.where(degenerate, 1.0, nrm)
    v1 = np.where(degenerate, 1.0, v1 / nrm)
    v2 = np.where(degenerate, 0.0, v2 / nrm)

    gap = lam2c - lam1c
    out11 = lam1c + gap * v1 * v1
    out12 = gap * v1 * v2
    out22 = lam1c + gap * v2 * v2
    # vertices already satisfying the bound pass through bitwise unchanged
    ok = lam1 >= b
    return MatrixField(Y.mesh,
                       h11=np.where(ok, a, out11),
                       h12=np.where(ok, c, out12),
                       h22=np.where(ok, d, out22))


def build_T(H: MatrixField) -> TFactorField:
    """Closed-form lower-triangular factor with T^T T = H^{-1}."""
    det = H.h11 * H.h22 - H.h12**2
    bad = (H.h11 <= 0) | (det <= 0)
    if np.any(bad):
        v = int(np.flatnonzero(bad)[0])
        raise AnalyticError(
            f"matrix at vertex {v} is not SPD (h11={H.h11[v]:.3e}, "
            f"det={det[v]:.3e}); threshold the data first")
    return TFactorField(H.mesh,
                        t11=1.0 / np.sqrt(H.h11),
                        t21=-H.h12 / np.sqrt(H.h11 * det),
                        t22=np.sqrt(H.h11 / det))


def _cell_mean(mesh, nodal: np.ndarray) -> np.ndarray:
    return nodal[mesh.triangles].mean(axis=1)


def _t_derivative_fields(T: TFactorField):
    """Cell fields v_ij = grad(t_i1) t^{1j} + grad(t_i2) t^{2j}.

    For a lower-triangular T the inverse is lower triangular with
    t^{11} = 1/t11, t^{21} = -t21/(t11 t22), t^{22} = 1/t22, so v12 = 0.
    """
    mesh = T.mesh
    g11 = fem.gradient(NodalField(mesh, T.t11)).vectors
    g21 = fem.gradient(NodalField(mesh, T.t21)).vectors
    g22 = fem.gradient(NodalField(mesh, T.t22)).vectors

    inv11 = _cell_mean(mesh, 1.0 / T.t11)
    inv21 = _cell_mean(mesh, -T.t21 / (T.t11 * T.t22))
    inv22 = _cell_mean(mesh, 1.0 / T.t22)

    v11 = g11 * inv11[:, None]
    v21 = g21 * inv11[:, None] + g22 * inv21[:, None]
    v22 = g22 * inv22[:, None]
    v12 = np.zeros_like(v11)
    return v11, v12, v21, v22


def _rot90(vec: np.ndarray) -> np.ndarray:
    """Apply J = [[0, -1], [1, 0]] rowwise."""
    return np.stack([-vec[:, 1], vec[:, 0]], axis=1)


def theta_rhs(T: TFactorField) -> CellVectorField:
    """Cell field f = (v12 - v21 - J grad(log d)) / 2 with d = 1/det(T)."""
    mesh = T.mesh
    det_t = T.det()
    if np.any(det_t <= 0):
        v = int(np.argmin(det_t))
        raise AnalyticError(f"nonpositive factor determinant at vertex {v}; "
                            f"threshold the data first")
    v11, v12, v21, v22 = _t_derivative_fields(T)
    log_d = NodalField(mesh, -np.log(det_t))  # d = det(H)^(1/2) = 1/det(T)
    grad_log_d = fem.gradient(log_d).vectors
    f = 0.5 * (v12 - v21 - _rot90(grad_log_d))
    return CellVectorField(mesh, f)


def _gradient_load(mesh, cell_vec: np.ndarray) -> np.ndarray:
    """Load vector b_m = integral of (cell field . grad phi_m)."""
    area, gx, gy = fem._p1(mesh)
    tri = mesh.triangles
    b = np.zeros(mesh.vertex_count)
    for i in range(3):
        np.add.at(b, tri[:, i],
                  area * (cell_vec[:, 0] * gx[:, i] + cell_vec[:, 1] * gy[:, i]))
    return b


def _laplace_matrix(mesh):
    if "laplace" not in mesh._cache:
        ones = NodalField(mesh, np.ones(mesh.vertex_count))
        mesh._cache["laplace"] = fem.assemble_stiffness(mesh, ones)
    return mesh._cache["laplace"]


def _solve_poisson_from_gradient(mesh, rhs_field: CellVectorField,
                                 boundary_values: np.ndarray,
                                 method: str = "direct") -> NodalField:
    """Weak solve of laplace(p) = div(f), p = boundary_values on the boundary.

    Integration by parts against tests vanishing on the boundary turns the
    divergence into int(f . grad w), so f is never differentiated.
    """
    lift = np.zeros(mesh.vertex_count)
    bmask = mesh.boundary_vertex_mask()
    lift[bmask] = np.asarray(boundary_values, dtype=float)[bmask]
    load = _gradient_load(mesh, rhs_field.vectors)
    return fem._solve_lifted(mesh, _laplace_matrix(mesh),
                             NodalField(mesh, lift), method, load=load)


def solve_theta(mesh, f: CellVectorField, theta_boundary: np.ndarray,
                method: str = "direct") -> NodalField:
    """Recover the rotation angle from its gradient field via the Dirichlet
    Poisson problem; theta_boundary holds values at boundary vertices."""
    return _solve_poisson_from_gradient(mesh, f, theta_boundary, method)


def sigma_rhs(T: TFactorField, theta: NodalField,
              gauge: str = "rotated") -> CellVectorField:
    """Cell field g with grad(log sigma) = g.

    g = cos(2 theta) K + sin(2 theta) K~ with U = diag(1, -1).  The
    published formula reads K = U(v11 - v22) + J U (v12 - v21) and repeats
    K in the second term, which is inconsistent with the rotation structure
    for the lower-triangular factor convention used here.  Carrying the
    divergence/curl constraints on sqrt(sigma)*grad(u_i) through S = R T^-T
    gives K = U(v11 - v22) + J U (v12 + v21) and K~ = J K; that is gauge
    'rotated'.  Gauge 'literal' keeps the published reading, and the
    noise-free self-consistency check selects the shipped variant.
    """
    if gauge not in ("rotated", "literal"):
        raise ValueError(f"unknown gauge {gauge!r}")
    mesh = T.mesh
    v11, v12, v21, v22 = _t_derivative_fields(T)

    du = v11 - v22
    dv = (v12 + v21) if gauge == "rotated" else (v12 - v21)
    K = np.stack([du[:, 0], -du[:, 1]], axis=1) + _rot90(
        np.stack([dv[:, 0], -dv[:, 1]], axis=1))
    K_second = _rot90(K) if gauge == "rotated" else K

    th_cell = _cell_mean(mesh, theta.coeffs)
    g = (np.cos(2.0 * th_cell)[:, None] * K
         + np.sin(2.0 * th_cell)[:, None] * K_second)
    return CellVectorField(mesh, g)


def solve_log_sigma(mesh, g: CellVectorField, logsigma_boundary: np.ndarray,
                    method: str = "direct") -> NodalField:
    """Second Poisson solve; exponentiate the result for the conductivity."""
    return _solve_poisson_from_gradient(mesh, g, logsigma_boundary, method)


# ---------------------------------------------------------------------------
# Boundary truth for the two Dirichlet problems

def rotation_angles(T: TFactorField, sigma: NodalField, u1: NodalField,
                    u2: NodalField) -> np.ndarray:
    """Per-cell angle of R = S T^T with S = sqrt(sigma) [grad u1, grad u2]."""
    mesh = T.mesh
    s = np.sqrt(_cell_mean(mesh, sigma.coeffs))
    s1 = fem.gradient(u1).vectors * s[:, None]
    s2 = fem.gradient(u2).vectors * s[:, None]
    t11 = _cell_mean(mesh, T.t11)
    t21 = _cell_mean(mesh, T.t21)
    t22 = _cell_mean(mesh, T.t22)
    # columns of R = S T^T are t11*s1 and t21*s1 + t22*s2
    r11 = t11 * s1[:, 0]
    r21 = t11 * s1[:, 1]
    r12 = t21 * s1[:, 0] + t22 * s2[:, 0]
    r22 = t21 * s1[:, 1] + t22 * s2[:, 1]
    return np.arctan2(r21 - r12, r11 + r22)


def boundary_theta_truth(T: TFactorField, sigma: NodalField, u1: NodalField,
                         u2: NodalField) -> np.ndarray:
    """Angle values at boundary vertices, averaged over incident cells and
    unwrapped along the boundary; interior entries are zero."""
    mesh = T.mesh
    th_cell = rotation_angles(T, sigma, u1, u2)

    cos_acc = np.zeros(mesh.vertex_count)
    sin_acc = np.zeros(mesh.vertex_count)
    for i in range(3):
        np.add.at(cos_acc, mesh.triangles[:, i], np.cos(th_cell))
        np.add.at(sin_acc, mesh.triangles[:, i], np.sin(th_cell))

    out = np.zeros(mesh.vertex_count)
    border = mesh.boundary_vertices()  # sorted by arc parameter
    theta_b = np.arctan2(sin_acc[border], cos_acc[border])
    theta_b = np.unwrap(theta_b)
    # keep the representative centered: remove whole turns from the mean
    theta_b -= TWO_PI * np.round(theta_b.mean() / TWO_PI)
    out[border] = theta_b
    return out


@dataclass
class AnalyticResult:
    theta: NodalField
    log_sigma: NodalField
    sigma: NodalField
    report: dict


def reconstruct(Y: MatrixField, threshold_b: float,
                theta_boundary: np.ndarray, logsigma_boundary: np.ndarray,
                gauge: str = "rotated", method: str = "direct") -> AnalyticResult:
    """Full chain: eigenvalue floor -> factor -> angle BVP -> log sigma BVP."""
    mesh = Y.mesh
    min_eigs = Y.min_eigenvalues()
    Yt = threshold_eigenvalues(Y, threshold_b)
    T = build_T(Yt)
    f = theta_rhs(T)
    theta = solve_theta(mesh, f, theta_boundary, method)
    g = sigma_rhs(T, theta, gauge)
    log_sigma = solve_log_sigma(mesh, g, logsigma_boundary, method)
    sigma = NodalField(mesh, np.exp(log_sigma.coeffs))
    report = {
        "min_eig_before": float(min_eigs.min()),
        "fraction_thresholded": float(np.mean(min_eigs < threshold_b)),
        "threshold_b": float(threshold_b),
        "gauge": gauge,
    }
    return AnalyticResult(theta, log_sigma, sigma, report)
