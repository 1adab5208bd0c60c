"""Whittle-Matern Gaussian priors via truncated Karhunen-Loeve expansions.

The covariance (tau*I - Laplacian)^(-alpha) is diagonalized through the FEM
generalized eigenproblem (tau*M + K) e = gamma * M e on interior vertices
with homogeneous Dirichlet conditions, so realized fields vanish on the
boundary and conductivities match their background value there.  Latent
coordinates are iid standard normal; three pushforwards map the Gaussian
field to positive conductivities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import fem
from .fem import NodalField
from .mesh import TriMesh

LatentVector = np.ndarray


@dataclass
class KLBasis:
    """Truncated eigenpairs of the prior covariance.

    lambdas are normalized against the computed pool (sum over the pool
    equals 1) and sorted descending; modes are M-orthonormal nodal fields
    extended by zero to the boundary.
    """

    mesh: TriMesh
    n_kl: int
    lambdas: np.ndarray          # (n_kl,) normalized, descending
    modes: np.ndarray            # (V, n_kl)
    matern_tau: float
    matern_alpha: float
    pool_size: int
    variance_retained: float
    gammas: np.ndarray | None = None   # (n_kl,) raw operator eigenvalues

    def sqrt_lambdas(self) -> np.ndarray:
        return np.sqrt(self.lambdas)

    def pointwise_variance(self) -> np.ndarray:
        """Var X(xi) = sum_i lambda_i e_i(xi)^2 for the truncated field."""
        return (self.modes**2) @ self.lambdas


def build_kl_basis(mesh: TriMesh, matern_tau: float, matern_alpha: float,
                   n_kl: int, pool_size: int | None = None) -> KLBasis:
    """Assemble the KL basis from the FEM eigenproblem.

    pool_size eigenpairs are computed (default 2*n_kl); the reported
    variance_retained is the retained share of the pool's lambda sum.
    """
    if matern_alpha <= 1.5:
        raise ValueError(f"matern_alpha must exceed 1.5 (trace-class "
                         f"condition), got {matern_alpha}")
    if matern_tau <= 0:
        raise ValueError(f"matern_tau must be positive, got {matern_tau}")
    if pool_size is None:
        pool_size = 2 * n_kl
    interior = mesh.interior_vertices()
    if not (0 < n_kl <= pool_size <= len(interior)):
        raise ValueError(f"need 0 < n_kl <= pool_size <= {len(interior)} "
                         f"interior vertices, got n_kl={n_kl}, "
                         f"pool_size={pool_size}")

    ones = NodalField(mesh, np.ones(mesh.vertex_count))
    K = fem.assemble_stiffness(mesh, ones)
    M = fem.mass_matrix(mesh)
    K_ii = K[interior][:, interior].tocsr()
    M_ii = M[interior][:, interior].tocsr()
    A = (matern_tau * M_ii + K_ii).tocsr()

    gammas, vecs = fem.eigs_smallest(A, M_ii, pool_size)
    lam_pool = gammas**(-matern_alpha)  # gamma ascending -> lambda descending
    lam_pool = lam_pool / lam_pool.sum()

    modes = np.zeros((mesh.vertex_count, n_kl))
    modes[interior] = vecs[:, :n_kl]
    return KLBasis(mesh=mesh, n_kl=n_kl, lambdas=lam_pool[:n_kl],
                   modes=modes, matern_tau=matern_tau,
                   matern_alpha=matern_alpha, pool_size=pool_size,
                   variance_retained=float(lam_pool[:n_kl].sum()),
                   gammas=gammas[:n_kl])


def sample_latent(rng: np.random.Generator, n_kl: int) -> LatentVector:
    return rng.standard_normal(n_kl)


def realize(basis: KLBasis, x: LatentVector) -> NodalField:
    """X = sum_i sqrt(lambda_i) x_i e_i as a nodal field (linear in x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.n_kl,):
        raise ValueError(f"latent vector length {x.shape} != n_kl={basis.n_kl}")
    return NodalField(basis.mesh, basis.modes @ (basis.sqrt_lambdas() * x))


@dataclass
class Pushforward:
    """Map from the latent Gaussian field to a positive conductivity.

    kinds: 'log_gaussian'  sigma = a + b*exp(X)
           'heaviside'     sigma = s- + (s+ - s-) * 1[X >= 0]
           'sigmoid'       sigma = s- + (s+ - s-) / (1 + exp(-sharpness*X))
    """

    kind: str
    sigma_minus: float = 4.0
    sigma_plus: float = 8.0
    sharpness: float = 50.0
    a: float = 3.0
    b: float = 2.0

    def __post_init__(self):
        if self.kind not in ("log_gaussian", "heaviside", "sigmoid"):
            raise ValueError(f"unknown pushforward kind {self.kind!r}")
        if self.kind == "log_gaussian":
            if self.a < 0 or self.b <= 0:
                raise ValueError("log_gaussian needs a >= 0 and b > 0")
        else:
            if self.sigma_minus <= 0 or self.sigma_plus <= 0:
                raise ValueError("level values must be positive")
        if self.kind == "sigmoid" and self.sharpness <= 0:
            raise ValueError("sharpness must be positive")

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if self.kind == "log_gaussian":
            # exponent capped to keep the output finite for any latent draw
            return self.a + self.b * np.exp(np.minimum(v, 700.0))
        if self.kind == "heaviside":
            return np.where(v >= 0.0, self.sigma_plus, self.sigma_minus)
        sig = expit(self.sharpness * v)
        return self.sigma_minus + (self.sigma_plus - self.sigma_minus) * sig


def push(sigma_map: Pushforward, X: NodalField) -> NodalField:
    """Nodal application of the pushforward; output is strictly positive."""
    return NodalField(X.mesh, sigma_map.apply(X.coeffs))
