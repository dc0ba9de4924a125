"""Proper Orthogonal Decomposition by the method of snapshots.

Works on plain coefficient matrices with a pluggable inner product: the
Gramian C[k, k'] = (u_k, u_k') is eigen-decomposed and modes are assembled
as normalized linear combinations of the snapshots.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = ["PodResult", "pod", "pod_gram", "select_cardinality"]

_MODE_CUTOFF = 1e-13


@dataclass
class PodResult:
    eigenvalues: np.ndarray
    modes: np.ndarray  # (n_dofs..., n_modes) combinations of the snapshots
    coeffs: np.ndarray  # (n_snapshots, n_modes) snapshot weights per mode
    gramian: np.ndarray
    kind: str = "L2"
    extras: dict = field(default_factory=dict)

    @property
    def n_modes(self):
        return self.modes.shape[-1]

    def select(self, tol):
        return select_cardinality(self.eigenvalues, tol)


def _sign_fix(vecs):
    """Orient each eigenvector so its first non-negligible entry is positive."""
    v = vecs.copy()
    for j in range(v.shape[1]):
        col = v[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if len(nz) and col[nz[0]] < 0:
            v[:, j] = -col
    return v


def pod_gram(gramian, kind="L2"):
    """Eigen-decomposition of a snapshot Gramian (descending, clipped)."""
    C = np.asarray(gramian, dtype=float)
    C = 0.5 * (C + C.T)
    lam, vec = scipy.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vec = _sign_fix(vec[:, order])
    lam = np.where(lam > 0.0, lam, 0.0)
    return lam, vec


def pod(snapshots, inner="euclidean", weights=None, gramian=None, kind=None):
    """POD of a snapshot matrix (n_snapshots, n_dofs).

    inner: 'euclidean', a callable (u, v) -> float, a dense/sparse Gram
    operator G (inner product u @ G @ v), or 'weighted' with a ``weights``
    vector (diagonal quadrature inner product).  ``gramian`` short-circuits
    the computation when the correlation matrix is already available.
    Modes are orthonormal in the chosen inner product; directions with
    eigenvalues below 1e-13 * lambda_1 are dropped from the mode set.
    """
    U = np.asarray(snapshots, dtype=float)
    if U.ndim == 1:
        U = U[None, :]
    if not np.isfinite(U).all():
        raise ValueError("non-finite snapshot values")
    n = U.shape[0]
    flat = U.reshape(n, -1)

    if gramian is not None:
        C = np.asarray(gramian, dtype=float)
        label = kind or "custom"
    elif callable(inner):
        C = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                C[i, j] = C[j, i] = inner(U[i], U[j])
        label = kind or "custom"
    elif inner == "euclidean":
        C = flat @ flat.T
        label = kind or "l2-vector"
    elif inner == "weighted":
        if weights is None:
            raise ValueError("weights required for the weighted inner product")
        w = np.asarray(weights, dtype=float).ravel()
        C = (flat * w[None, :]) @ flat.T
        label = kind or "L2"
    else:
        G = inner
        C = flat @ (G @ flat.T)
        label = kind or "L2"

    lam, vec = pod_gram(C)
    keep = lam > _MODE_CUTOFF * max(lam[0], 1e-300) if n else np.zeros(0, bool)
    coeffs = vec[:, keep] / np.sqrt(lam[keep])[None, :]
    modes = np.tensordot(coeffs.T, U, axes=(1, 0))
    modes = np.moveaxis(modes, 0, -1)
    return PodResult(lam, modes, coeffs, C, kind=label)


def select_cardinality(eigenvalues, tol_pod):
    """Smallest N with sum_{n<=N} lambda_n >= (1 - tol) * sum(lambda)."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0.0:
        return 0
    csum = np.cumsum(lam)
    return int(np.searchsorted(csum, (1.0 - tol_pod) * total, side="left") + 1)
