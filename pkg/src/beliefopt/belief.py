"""Gaussian belief state: mean plus half-vectorized covariance."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Asymmetry larger than this is treated as a caller error, not noise.
SYMMETRY_TOL = 1e-12
# Eigenvalues above -PSD_TOL count as positive semi-definite.
PSD_TOL = 1e-9


@lru_cache(maxsize=None)
def _triu_indices(n: int):
    return np.triu_indices(n)


def vech(mat: np.ndarray) -> np.ndarray:
    """Half-vectorize a symmetric matrix.

    Stacks the lower triangle in column-major order, e.g. a 3x3 matrix
    yields entries (0,0), (1,0), (2,0), (1,1), (2,1), (2,2).
    """
    s = np.asarray(mat, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    asym = np.abs(s - s.T)
    if asym.size and asym.max() > SYMMETRY_TOL:
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise ValueError(
            f"matrix not symmetric: |S[{i},{j}] - S[{j},{i}]| = {asym[i, j]:.3e}"
        )
    return s.T[_triu_indices(s.shape[0])].copy()


def unvech(v: np.ndarray, n: int) -> np.ndarray:
    """Rebuild the symmetric n x n matrix whose lower triangle is ``v``."""
    v = np.asarray(v, dtype=float)
    expected = n * (n + 1) // 2
    if v.shape != (expected,):
        raise ValueError(f"expected {expected} entries for n={n}, got shape {v.shape}")
    out = np.zeros((n, n))
    out.T[_triu_indices(n)] = v
    return out + out.T - np.diag(np.diag(out))


def vech_diag_indices(n: int) -> np.ndarray:
    """Positions of the matrix diagonal inside a vech vector."""
    i = np.arange(n)
    return i * n - i * (i - 1) // 2


def symmetrize_and_clamp(mat: np.ndarray) -> np.ndarray:
    """Symmetrize, and clamp negative eigenvalues to zero when they exceed tolerance.

    Covariances coming out of finite-difference-heavy updates drift slightly
    indefinite; clamping keeps downstream solvers iterating instead of
    aborting on 1e-12-scale violations.
    """
    s = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("matrix has non-finite entries")
    sym = 0.5 * (s + s.T)
    if np.linalg.eigvalsh(sym)[0] < -PSD_TOL:
        w, v = np.linalg.eigh(sym)
        sym = (v * np.maximum(w, 0.0)) @ v.T
        sym = 0.5 * (sym + sym.T)
    return sym


def max_eigenvalue(mat: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(mat)[-1])


def wrap_angle(theta):
    """Wrap angle(s) to (-pi, pi]."""
    t = np.asarray(theta, dtype=float)
    wrapped = np.mod(t + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if t.ndim == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Belief:
    """Gaussian state estimate over an n-dimensional robot state.

    ``mean`` is the state estimate and ``cov_vech`` the half-vectorized
    covariance, giving a flat belief vector of dimension n + n(n+1)/2
    (9 for the planar n = 3 models).
    """

    mean: np.ndarray
    cov_vech: np.ndarray

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[0] + self.cov_vech.shape[0]

    def cov(self) -> np.ndarray:
        return unvech(self.cov_vech, self.n)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.mean, self.cov_vech])

    @classmethod
    def from_moments(cls, mean, cov) -> "Belief":
        return cls(mean=np.asarray(mean, dtype=float), cov_vech=vech(cov))

    @classmethod
    def from_vector(cls, vec, n: int) -> "Belief":
        vec = np.asarray(vec, dtype=float)
        expected = n + n * (n + 1) // 2
        if vec.shape != (expected,):
            raise ValueError(f"expected belief vector of length {expected}, got {vec.shape}")
        return cls(mean=vec[:n].copy(), cov_vech=vec[n:].copy())

    def validate(self, tol: float = PSD_TOL) -> None:
        """Raise if the covariance is indefinite beyond tolerance."""
        w = np.linalg.eigvalsh(self.cov())
        if w[0] < -tol:
            raise ValueError(f"covariance indefinite: min eigenvalue {w[0]:.3e}")
