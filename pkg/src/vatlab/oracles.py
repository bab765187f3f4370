"""Closed-form models and brute-force references used to validate the
perturbation search and the divergence layer.

The linear-Gaussian model has an exactly quadratic KL sensitivity with a
rank-1 Hessian theta theta^T / sigma^2, so the smoothness value and the
dominant direction are both known in closed form. The brute-force Hessian
and the in-repo Jacobi eigensolver give an independent route to the
dominant eigenvector for tiny networks; they never run in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import divergence
from .errors import ConfigError, DataError, DimensionError
from .numerics import Tensor, as_tensor

_MAX_DENSE_DIM = 32


@dataclass
class LinearGaussianModel:
    """Scalar Gaussian regression y ~ N(theta^T x, sigma2).

    KL between the outputs at x and x + r is (theta^T r)^2 / (2 sigma2),
    independent of x, so the model doubles as an analytic probe target for
    the perturbation search (duck-typed methods below).
    """
    theta: Tensor
    sigma2: float = 1.0

    def __post_init__(self):
        self.theta = as_tensor(self.theta)
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be > 0")

    def base_distribution(self, x: Tensor):
        return None  # sensitivity is independent of the base point

    def delta_kl(self, x: Tensor, r: Tensor, base) -> Tensor:
        proj = as_tensor(r) @ self.theta
        return proj ** 2 / (2.0 * self.sigma2)

    def grad_r_delta_kl(self, x: Tensor, r: Tensor, base) -> Tensor:
        proj = as_tensor(r) @ self.theta
        return np.outer(proj, self.theta) / self.sigma2


@dataclass
class LogisticModel:
    """Binary logistic regression p(y=1|x) = sigmoid(theta^T x)."""
    theta: Tensor

    def __post_init__(self):
        self.theta = as_tensor(self.theta)

    def prob(self, x: Tensor) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-(as_tensor(x) @ self.theta)))


def gaussian_lds_exact(model: LinearGaussianModel, epsilon: float) -> float:
    """Exact smoothness value -eps^2 ||theta||^2 / (2 sigma2)."""
    return float(-(epsilon ** 2) * (model.theta @ model.theta) / (2.0 * model.sigma2))


def logistic_lds_taylor(model: LogisticModel, x: Tensor, epsilon: float) -> float:
    """Second-order smoothness value -0.5 s(1-s) eps^2 ||theta||^2 at s = sigmoid(theta^T x)."""
    s = float(model.prob(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])
    return float(-0.5 * s * (1.0 - s) * epsilon ** 2 * (model.theta @ model.theta))


def logistic_kl(model: LogisticModel, x: Tensor, r: Tensor) -> float:
    """Exact Bernoulli KL between the model outputs at x and x + r."""
    x = as_tensor(x)
    p = float(model.prob(x.reshape(1, -1))[0])
    q = float(model.prob((x + r).reshape(1, -1))[0])
    eps = 1e-300
    return p * np.log(max(p, eps) / max(q, eps)) + \
        (1 - p) * np.log(max(1 - p, eps) / max(1 - q, eps))


def logistic_lds_grid(model: LogisticModel, x: Tensor, epsilon: float,
                      n_angles: int = 3600) -> float:
    """Negative max KL over a dense grid on the 2-D epsilon-sphere."""
    if model.theta.shape[0] != 2:
        raise DimensionError("grid oracle is 2-D only")
    angles = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    worst = max(
        logistic_kl(model, x, epsilon * np.array([np.cos(a), np.sin(a)]))
        for a in angles
    )
    return -worst


def brute_force_hessian(model, x_row: Tensor, h_step: float = 1e-4) -> Tensor:
    """Symmetric finite-difference Hessian of the KL sensitivity at r = 0.

    x_row is a single input point; refuses dimensions above 32 since the
    stencil costs O(I^2) forward passes.
    """
    x = as_tensor(x_row).reshape(1, -1)
    dim = x.shape[1]
    if dim > _MAX_DENSE_DIM:
        raise DimensionError(f"brute_force_hessian refuses I > {_MAX_DENSE_DIM}")
    if h_step <= 0:
        raise ConfigError("h_step must be > 0")
    base = divergence.base_distribution(model, x)

    def f(r_vec):
        return float(divergence.delta_kl(model, x, r_vec.reshape(1, -1), base)[0])

    h = h_step
    hess = np.zeros((dim, dim))
    e = np.eye(dim)
    for i in range(dim):
        hess[i, i] = (f(h * e[i]) - 2.0 * f(np.zeros(dim)) + f(-h * e[i])) / h ** 2
        for j in range(i + 1, dim):
            val = (f(h * (e[i] + e[j])) - f(h * (e[i] - e[j]))
                   - f(h * (e[j] - e[i])) + f(-h * (e[i] + e[j]))) / (4.0 * h ** 2)
            hess[i, j] = hess[j, i] = val
    return 0.5 * (hess + hess.T)


def jacobi_eigh(matrix: Tensor, tol: float = 1e-12,
                max_sweeps: int = 100) -> tuple[Tensor, Tensor]:
    """Eigendecomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    sorted by descending eigenvalue.
    """
    a = as_tensor(matrix).copy()
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-10):
        raise DataError("jacobi_eigh needs a symmetric square matrix")
    if n > _MAX_DENSE_DIM:
        raise DimensionError(f"jacobi_eigh refuses n > {_MAX_DENSE_DIM}")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < tol * 1e-3:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / a[p, q]
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta ** 2 + 1.0)) \
                    if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t ** 2 + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], v[:, order]


def dominant_eigenvector(matrix: Tensor) -> tuple[float, Tensor]:
    """Largest-magnitude eigenpair of a small symmetric matrix."""
    eigvals, eigvecs = jacobi_eigh(matrix)
    idx = int(np.argmax(np.abs(eigvals)))
    return float(eigvals[idx]), eigvecs[:, idx]
