"""First-order Lagrange (P1) finite elements on a TriMesh.

Fields are vectors of nodal coefficients; gradients of P1 fields are
per-triangle constant 2-vectors.  Assembled matrices are scipy CSR and
kept internal; all boundary conditions are imposed by row/column
elimination to a reduced SPD system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

REL_RESIDUAL_TOL = 1e-10
EIG_TOL = 1e-8


class SolverError(RuntimeError):
    """Linear or eigenvalue solve failed; message carries diagnostics."""


@dataclass
class NodalField:
    """Scalar P1 field: one coefficient per mesh vertex."""

    mesh: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.mesh.vertex_count,):
            raise ValueError(
                f"coefficient vector has length {self.coeffs.shape}, "
                f"mesh has {self.mesh.vertex_count} vertices")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite nodal coefficient")


@dataclass
class CellVectorField:
    """Per-triangle constant 2-vector field, e.g. the gradient of a P1 field."""

    mesh: object
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.shape != (self.mesh.triangle_count, 2):
            raise ValueError("vector field shape must be (n_triangles, 2)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite cell vector")


def _p1(mesh):
    """Per-mesh P1 geometry: areas and basis-function gradients, cached."""
    cache = mesh._cache
    if "p1" not in cache:
        tri = mesh.triangles
        p = mesh.vertices[tri]
        x, y = p[..., 0], p[..., 1]
        # grad phi_i = (b_i, c_i) / (2A) with the standard cyclic differences
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        area = mesh.areas()
        gx = b / (2.0 * area)[:, None]
        gy = c / (2.0 * area)[:, None]
        cache["p1"] = (area, gx, gy)
    return cache["p1"]


def assemble_stiffness(mesh, sigma: NodalField) -> sp.csr_matrix:
    """Stiffness matrix with conductivity sigma, evaluated per triangle as
    the mean of its three nodal values."""
    svals = sigma.coeffs if isinstance(sigma, NodalField) else np.asarray(sigma)
    if np.any(svals <= 0):
        bad = int(np.argmin(svals))
        raise ValueError(f"sigma must be positive everywhere; "
                         f"sigma[{bad}] = {svals[bad]}")
    area, gx, gy = _p1(mesh)
    tri = mesh.triangles
    scell = svals[tri].mean(axis=1)
    w = scell * area
    rows, cols, data = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            data.append(w * (gx[:, i] * gx[:, j] + gy[:, i] * gy[:, j]))
    n = mesh.vertex_count
    K = sp.coo_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return K


def assemble_mass(mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix; entry sum equals the mesh area."""
    area = mesh.areas()
    tri = mesh.triangles
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    rows, cols, data = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            data.append(area * local[i, j])
    n = mesh.vertex_count
    return sp.coo_matrix((np.concatenate(data),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def mass_matrix(mesh) -> sp.csr_matrix:
    """Cached mass matrix for a mesh."""
    if "mass" not in mesh._cache:
        mesh._cache["mass"] = assemble_mass(mesh)
    return mesh._cache["mass"]


def _mass_solver(mesh):
    if "mass_lu" not in mesh._cache:
        mesh._cache["mass_lu"] = spla.splu(mass_matrix(mesh).tocsc())
    return mesh._cache["mass_lu"]


def _check_residual(A, x, b, what):
    r = np.linalg.norm(A @ x - b)
    scale = max(np.linalg.norm(b), 1e-300)
    if r > REL_RESIDUAL_TOL * scale and r > 1e-14:
        raise SolverError(f"{what}: relative residual {r / scale:.3e} "
                          f"exceeds {REL_RESIDUAL_TOL:.1e}")


def solve_spd(A: sp.csr_matrix, b: np.ndarray, method: str = "direct",
              tol: float = REL_RESIDUAL_TOL) -> np.ndarray:
    """Solve SPD system: sparse factorization by default, diagonally
    preconditioned CG as the large-system fallback."""
    if method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
    elif method == "cg":
        d = A.diagonal()
        M = sp.diags(1.0 / d)
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=10 * A.shape[0], M=M)
        if info != 0:
            rnorm = np.linalg.norm(A @ x - b)
            raise SolverError(f"CG did not converge (info={info}, "
                              f"residual {rnorm:.3e} after cap)")
    else:
        raise ValueError(f"unknown solver method {method!r}")
    _check_residual(A, x, b, f"solve_spd[{method}]")
    return x


def solve_dirichlet(mesh, sigma: NodalField, g: NodalField,
                    method: str = "direct") -> NodalField:
    """Solve div(sigma grad u) = 0 with u = g on the whole boundary.

    g is the lifting: prescribed nodal values on every boundary vertex and
    zero at interior vertices.  Returns u = v + g where v solves the reduced
    system with Dirichlet rows eliminated.
    """
    K = assemble_stiffness(mesh, sigma)
    return _solve_lifted(mesh, K, g, method)


def _solve_lifted(mesh, K, g: NodalField, method="direct",
                  load: np.ndarray | None = None) -> NodalField:
    """Reduced solve K_II v_I = load_I - (K g)_I, then u = g + v."""
    interior = mesh.interior_vertices()
    rhs = -(K @ g.coeffs)
    if load is not None:
        rhs = rhs + load
    K_ii = K[interior][:, interior].tocsr()
    v_i = solve_spd(K_ii, rhs[interior], method=method)
    u = g.coeffs.copy()
    u[interior] += v_i
    return NodalField(mesh, u)


def gradient(u: NodalField) -> CellVectorField:
    """Per-triangle constant gradient of the P1 interpolant."""
    area, gx, gy = _p1(u.mesh)
    vals = u.coeffs[u.mesh.triangles]
    return CellVectorField(u.mesh, np.stack(
        [(vals * gx).sum(axis=1), (vals * gy).sum(axis=1)], axis=1))


def integrate(f: NodalField) -> float:
    """Exact integral of the P1 interpolant."""
    vals = f.coeffs[f.mesh.triangles]
    return float((f.mesh.areas() * vals.mean(axis=1)).sum())


def norm_l2(f: NodalField) -> float:
    """L2 norm via the mass-matrix quadratic form."""
    M = mass_matrix(f.mesh)
    q = float(f.coeffs @ (M @ f.coeffs))
    return float(np.sqrt(max(q, 0.0)))


def norm_l1(f: NodalField) -> float:
    """Exact L1 norm of the P1 interpolant (triangles split along the
    zero level line of the linear interpolant, no quadrature error)."""
    vals = np.sort(f.coeffs[f.mesh.triangles], axis=1)
    area = f.mesh.areas()
    v0, v1, v2 = vals[:, 0], vals[:, 1], vals[:, 2]
    mean = (v0 + v1 + v2) / 3.0
    base = area * mean  # signed integral

    out = np.empty_like(base)
    nonneg = v0 >= 0
    nonpos = v2 <= 0
    out[nonneg] = base[nonneg]
    out[nonpos] = -base[nonpos]

    mixed = ~(nonneg | nonpos)
    one_pos = mixed & (v1 < 0)  # only the max vertex is positive
    if np.any(one_pos):
        a, lo, mid, hi = area[one_pos], v0[one_pos], v1[one_pos], v2[one_pos]
        pos_part = a * hi**3 / (3.0 * (hi - lo) * (hi - mid))
        out[one_pos] = 2.0 * pos_part - base[one_pos]
    two_pos = mixed & (v1 >= 0)  # only the min vertex is negative
    if np.any(two_pos):
        a, lo, mid, hi = area[two_pos], v0[two_pos], v1[two_pos], v2[two_pos]
        neg_part = a * lo**3 / (3.0 * (mid - lo) * (hi - lo))
        out[two_pos] = base[two_pos] - 2.0 * neg_part
    return float(out.sum())


def norm(f: NodalField, kind: str) -> float:
    if kind == "l1":
        return norm_l1(f)
    if kind == "l2":
        return norm_l2(f)
    raise ValueError(f"unknown norm kind {kind!r}")


def lumped_vertex_areas(mesh) -> np.ndarray:
    """Lumped-mass nodal areas: one third of each incident triangle."""
    area = mesh.areas()
    out = np.zeros(mesh.vertex_count)
    for i in range(3):
        np.add.at(out, mesh.triangles[:, i], area / 3.0)
    return out


def project_cellwise(mesh, cell_values: np.ndarray,
                     method: str = "direct") -> NodalField:
    """L2-project a per-triangle constant function onto the P1 space."""
    area = mesh.areas()
    tri = mesh.triangles
    w = area * np.asarray(cell_values) / 3.0
    b = np.zeros(mesh.vertex_count)
    for i in range(3):
        np.add.at(b, tri[:, i], w)
    lu = _mass_solver(mesh)
    h = lu.solve(b)
    _check_residual(mass_matrix(mesh), h, b, "project_cellwise")
    return NodalField(mesh, h)


def eigs_smallest(A: sp.csr_matrix, M: sp.csr_matrix, k: int,
                  tol: float = EIG_TOL):
    """k smallest generalized eigenpairs A e = mu M e (both SPD).

    Shift-inverted Lanczos (ARPACK) with a deterministic start vector;
    eigenvalues ascending, eigenvectors M-orthonormal.
    """
    n = A.shape[0]
    if k > n:
        raise ValueError(f"requested {k} eigenpairs from dimension {n}")
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        vals, vecs = spla.eigsh(A, k=k, M=M, sigma=0.0, which="LM", v0=v0,
                                tol=tol)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(
            f"eigensolver converged only {len(exc.eigenvalues)}/{k} pairs "
            f"(residuals unavailable from ARPACK)") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    # enforce exact M-normalization and a deterministic sign convention
    mnorm = np.sqrt(np.einsum("ij,ij->j", vecs, M @ vecs))
    vecs = vecs / mnorm
    anchor = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[anchor, np.arange(k)])
    signs[signs == 0] = 1.0
    vecs = vecs * signs

    res = np.linalg.norm(A @ vecs - (M @ vecs) * vals, axis=0)
    scale = np.abs(vals) * np.linalg.norm(M @ vecs, axis=0)
    bad = res > 100 * tol * np.maximum(scale, 1.0)
    if np.any(bad):
        raise SolverError(f"eigenpair residuals too large: "
                          f"max {res[bad].max():.3e}")
    return vals, vecs


# ---------------------------------------------------------------------------
# NodalField CSV format: vertex,x,y,value

def save_field(f: NodalField, path) -> None:
    mesh = f.mesh
    with open(path, "w") as fh:
        fh.write("vertex,x,y,value\n")
        for i, ((x, y), v) in enumerate(zip(mesh.vertices, f.coeffs)):
            fh.write(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}\n")


def load_field(mesh, path) -> NodalField:
    vals = np.full(mesh.vertex_count, np.nan)
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "vertex,x,y,value":
            raise ValueError(f"unexpected field header {header!r}")
        for line in fh:
            idx, _x, _y, v = line.strip().split(",")
            vals[int(idx)] = float(v)
    return NodalField(mesh, vals)
