"""Geometry of the manifold of symmetric positive-definite matrices.

Points are dense ``(d, d)`` float arrays. Tangent vectors at any point are
symmetric matrices. The metric is the affine-invariant one,
``g_Y(A, B) = tr(Y^-1 A Y^-1 B)``. Every matrix function goes through a
symmetric eigendecomposition.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimMismatch, DomainError, NonConvergence

SYM_RTOL = 1e-10
SPD_RCOND = 1e-12

_FUNCS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "inv_sqrt": lambda lam: 1.0 / np.sqrt(lam),
    "inv": lambda lam: 1.0 / lam,
}
_NEEDS_POSITIVE = {"log", "sqrt", "inv_sqrt", "inv"}


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {m.shape}")
    return m


def check_symmetric(m, name: str = "matrix") -> np.ndarray:
    m = _square(m)
    tol = SYM_RTOL * np.maximum(1.0, np.abs(m))
    if np.any(np.abs(m - m.T) > tol):
        raise DomainError(f"{name} is not symmetric")
    return m


def check_spd(m, name: str = "matrix") -> np.ndarray:
    """Validate symmetry and positive definiteness, returning a float array."""
    m = check_symmetric(m, name)
    lam = np.linalg.eigvalsh(sym(m))
    if not np.all(np.isfinite(lam)) or lam[0] <= SPD_RCOND * max(lam[-1], 0.0):
        raise DomainError(f"{name} is not positive definite (lambda_min={lam[0]:.3g})")
    return m


def sym_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    The input is symmetrized first so round-off asymmetry never leaks into
    complex output.
    """
    m = _square(m)
    try:
        lam, vec = np.linalg.eigh(sym(m))
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(str(exc)) from exc
    return lam, vec


def from_eig(lam: np.ndarray, vec: np.ndarray) -> np.ndarray:
    return sym((vec * lam) @ vec.T)


def mat_fn(m, f: str, eig: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Apply a scalar function to the spectrum of a symmetric matrix.

    ``f`` is one of ``exp``, ``log``, ``sqrt``, ``inv_sqrt`` or ``inv``.
    A precomputed ``(eigenvalues, eigenvectors)`` pair may be passed as
    ``eig`` to skip the decomposition.
    """
    if f not in _FUNCS:
        raise ValueError(f"unknown matrix function {f!r}")
    lam, vec = sym_eig(m) if eig is None else eig
    if f in _NEEDS_POSITIVE and lam[0] <= 0:
        raise DomainError(f"{f} needs a positive-definite argument (lambda_min={lam[0]:.3g})")
    return from_eig(_FUNCS[f](lam), vec)


def _same_dim(*ms: np.ndarray) -> None:
    if len({m.shape for m in ms}) != 1:
        raise DimMismatch(f"shape mismatch: {[m.shape for m in ms]}")


def metric(y, a, b) -> float:
    """Affine-invariant inner product ``tr(Y^-1 A Y^-1 B)``."""
    y, a, b = _square(y), _square(a), _square(b)
    _same_dim(y, a, b)
    ya = np.linalg.solve(y, a)
    yb = np.linalg.solve(y, b)
    return float(np.sum(ya * yb.T))


def geodesic_distance(y, z) -> float:
    """Affine-invariant distance, the Frobenius norm of ``log(Y^-1/2 Z Y^-1/2)``."""
    y, z = check_spd(y, "Y"), check_spd(z, "Z")
    _same_dim(y, z)
    y_is = mat_fn(y, "inv_sqrt")
    lam = np.linalg.eigvalsh(sym(y_is @ z @ y_is))
    if lam[0] <= 0:
        raise DomainError("Z is numerically singular relative to Y")
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def exp_map(y, delta, y_eig: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Riemannian exponential ``Y^1/2 exp(Y^-1/2 D Y^-1/2) Y^1/2``."""
    y, delta = _square(y), check_symmetric(delta, "tangent vector")
    _same_dim(y, delta)
    lam, vec = sym_eig(y) if y_eig is None else y_eig
    if lam[0] <= 0:
        raise DomainError("base point is not positive definite")
    root = np.sqrt(lam)
    y_half = from_eig(root, vec)
    y_inv_half = from_eig(1.0 / root, vec)
    inner = mat_fn(y_inv_half @ delta @ y_inv_half, "exp")
    return sym(y_half @ inner @ y_half)


def riemannian_grad(c, euclid_grad) -> np.ndarray:
    """Convert a Euclidean gradient into the affine-invariant gradient ``C E C``."""
    c, e = _square(c), _square(euclid_grad)
    _same_dim(c, e)
    return sym(c @ sym(e) @ c)


def project_eigen_floor(
    c, floor: float, eig: tuple[np.ndarray, np.ndarray] | None = None
) -> np.ndarray:
    """Clamp the spectrum of ``c`` from below at ``floor``."""
    if floor <= 0:
        raise DomainError("floor must be positive")
    lam, vec = sym_eig(c) if eig is None else eig
    if np.all(lam >= floor):
        return sym(_square(c))
    return from_eig(np.maximum(lam, floor), vec)


def det_root(c) -> float:
    """``det(C)^(1/d)`` computed from log-eigenvalues to avoid overflow."""
    lam = np.linalg.eigvalsh(sym(_square(c)))
    if lam[0] <= 0:
        raise DomainError("det_root needs a positive-definite matrix")
    return float(np.exp(np.mean(np.log(lam))))


def random_spd(rng: np.random.Generator, d: int, cond: float = 10.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues spread log-uniformly in ``[1, cond]``."""
    q = random_orthogonal(rng, d)
    lam = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return from_eig(lam, q)


def random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))
