"""Boundary-preserving polynomial mapping family and bijectivity machinery.

Maps have the form x = X + sum_m a_m phi_m(X) where each basis function is a
tensorized shifted-Legendre polynomial times a bubble factor that pins every
face of the rectangle to itself: the first component vanishes on the two
vertical faces, the second on the horizontal ones.  Because the family is
polynomial, the H2-seminorm penalty is the quadratic form of a precomputed
Gram matrix, and the Jacobian-determinant barrier integral has an analytic
gradient in the coefficients.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from regrom.quadrature import composite_gauss_rect, tensor_gauss_rect

__all__ = [
    "MappingBasis",
    "BarrierConfig",
    "BarrierResult",
    "build_basis",
    "eval_map",
    "h2_gram",
    "barrier",
    "barrier_log",
    "verify_bijectivity",
    "verify_geometry_map",
    "MapEvaluator",
    "BasisMap",
    "IdentityMap",
    "polyline_distance",
    "invert_map",
]

_EXP_CLAMP = 700.0


def _legendre_tables(t, n, normalized=True):
    """Shifted Legendre values/derivatives on [0,1]: three (len(t), n) arrays."""
    t = np.asarray(t, dtype=float)
    s = 2.0 * t - 1.0
    P = np.empty((n, len(t)))
    dP = np.empty_like(P)
    d2P = np.empty_like(P)
    P[0] = 1.0
    dP[0] = 0.0
    d2P[0] = 0.0
    if n > 1:
        P[1] = s
        dP[1] = 1.0
        d2P[1] = 0.0
    for k in range(1, n - 1):
        P[k + 1] = ((2 * k + 1) * s * P[k] - k * P[k - 1]) / (k + 1)
        dP[k + 1] = dP[k - 1] + (2 * k + 1) * P[k]
        d2P[k + 1] = d2P[k - 1] + (2 * k + 1) * dP[k]
    # chain rule for s = 2t - 1, and L2([0,1]) normalization
    scale = np.sqrt(2.0 * np.arange(n) + 1.0) if normalized else np.ones(n)
    return (
        (scale[:, None] * P).T,
        (2.0 * scale[:, None] * dP).T,
        (4.0 * scale[:, None] * d2P).T,
    )


class MappingBasis:
    """Tensor Legendre mapping basis on a rectangle; M_hf = 2*Mbar^2."""

    def __init__(self, Mbar, rect=(0.0, 1.0, 0.0, 1.0)):
        if Mbar < 1:
            raise ValueError("Mbar must be >= 1")
        self.Mbar = int(Mbar)
        self.rect = tuple(float(v) for v in rect)
        self.M_hf = 2 * self.Mbar**2
        a, b, c, d = self.rect
        self.Lx = b - a
        self.Ly = d - c
        self.area = self.Lx * self.Ly
        self._gram = None

    # -- local coordinates ---------------------------------------------------

    def _unit(self, pts):
        a, _, c, _ = self.rect
        s = (pts[:, 0] - a) / self.Lx
        t = (pts[:, 1] - c) / self.Ly
        return s, t

    def tables(self, pts, second=False):
        """Per-block value/derivative tables at physical points.

        Returns a dict with value tables V1, V2 (n, Mbar^2) for the single
        nonzero component of each block, physical first-derivative tables
        D1x, D1y, D2x, D2y, and (optionally) second derivatives.
        Block 1 spans e1-displacements, block 2 e2-displacements; column m
        of a block multiplies coefficient a[m] (block 2 offset by Mbar^2).
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        s, t = self._unit(pts)
        n = self.Mbar
        Ls, dLs, d2Ls = _legendre_tables(s, n)
        Lt, dLt, d2Lt = _legendre_tables(t, n)
        gs = s * (1.0 - s)
        dgs = 1.0 - 2.0 * s
        gt = t * (1.0 - t)
        dgt = 1.0 - 2.0 * t

        A1 = Ls * gs[:, None]
        dA1 = dLs * gs[:, None] + Ls * dgs[:, None]
        A2 = Lt * gt[:, None]
        dA2 = dLt * gt[:, None] + Lt * dgt[:, None]

        def mix(fx, fy):
            # column index m = i + i'*Mbar (i over x fast)
            return np.einsum("nj,ni->nji", fy, fx).reshape(len(pts), n * n)

        out = {
            # physical displacement of component k is L_k * u(s, t)
            "V1": self.Lx * mix(A1, Lt),
            "V2": self.Ly * mix(Ls, A2),
            # physical first derivatives of the component
            "D1x": mix(dA1, Lt),
            "D1y": (self.Lx / self.Ly) * mix(A1, dLt),
            "D2x": (self.Ly / self.Lx) * mix(dLs, A2),
            "D2y": mix(Ls, dA2),
        }
        if second:
            d2A1 = d2Ls * gs[:, None] + 2.0 * dLs * dgs[:, None] - 2.0 * Ls
            d2A2 = d2Lt * gt[:, None] + 2.0 * dLt * dgt[:, None] - 2.0 * Lt
            out.update(
                {
                    "H1xx": mix(d2A1, Lt) / self.Lx,
                    "H1xy": mix(dA1, dLt) / self.Ly,
                    "H1yy": (self.Lx / self.Ly**2) * mix(A1, d2Lt),
                    "H2xx": (self.Ly / self.Lx**2) * mix(d2Ls, A2),
                    "H2xy": mix(dLs, dA2) / self.Lx,
                    "H2yy": mix(Ls, d2A2) / self.Ly,
                }
            )
        return out

    def split(self, a):
        a = np.asarray(a, dtype=float)
        if a.shape != (self.M_hf,):
            raise ValueError(f"coefficient vector must have length {self.M_hf}")
        h = self.Mbar**2
        return a[:h], a[h:]

    def deformation_gradient(self, tables, a):
        """F entries and J at the table points for coefficients a."""
        a1, a2 = self.split(a)
        F11 = 1.0 + tables["D1x"] @ a1
        F12 = tables["D1y"] @ a1
        F21 = tables["D2x"] @ a2
        F22 = 1.0 + tables["D2y"] @ a2
        J = F11 * F22 - F12 * F21
        return F11, F12, F21, F22, J

    def jacobian_derivative(self, tables, F11, F12, F21, F22):
        """dJ/da at the table points, shape (n, M_hf)."""
        d1 = tables["D1x"] * F22[:, None] - tables["D1y"] * F21[:, None]
        d2 = F11[:, None] * tables["D2y"] - F12[:, None] * tables["D2x"]
        return np.hstack([d1, d2])

    def gram(self):
        if self._gram is None:
            self._gram = h2_gram(self)
        return self._gram


def build_basis(Mbar, rect=(0.0, 1.0, 0.0, 1.0)):
    return MappingBasis(Mbar, rect)


def eval_map(basis, a, pts):
    """Map points: returns (x (n,2), F (n,2,2), J (n,))."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    tb = basis.tables(pts)
    a1, a2 = basis.split(np.asarray(a, dtype=float))
    x = pts.copy()
    x[:, 0] += tb["V1"] @ a1
    x[:, 1] += tb["V2"] @ a2
    F11, F12, F21, F22, J = basis.deformation_gradient(tb, a)
    F = np.empty((len(pts), 2, 2))
    F[:, 0, 0] = F11
    F[:, 0, 1] = F12
    F[:, 1, 0] = F21
    F[:, 1, 1] = F22
    return x, F, J


def h2_gram(basis):
    """Gram matrix of the H2 seminorm: |Psi_a|^2 = a^T A a (block diagonal)."""
    n = basis.Mbar + 3
    pts, w = tensor_gauss_rect(basis.rect, n)
    tb = basis.tables(pts, second=True)
    A = np.zeros((basis.M_hf, basis.M_hf))
    h = basis.Mbar**2
    for blk, (xx, xy, yy) in enumerate(
        (("H1xx", "H1xy", "H1yy"), ("H2xx", "H2xy", "H2yy"))
    ):
        G = (
            np.einsum("n,nm,nk->mk", w, tb[xx], tb[xx])
            + 2.0 * np.einsum("n,nm,nk->mk", w, tb[xy], tb[xy])
            + np.einsum("n,nm,nk->mk", w, tb[yy], tb[yy])
        )
        sl = slice(blk * h, (blk + 1) * h)
        A[sl, sl] = 0.5 * (G + G.T)
    return A


@dataclass
class BarrierConfig:
    """Constants of the Jacobian barrier constraint."""

    epsilon: float = 0.1
    C_exp: float = 0.0025
    delta: float = 1.0

    @classmethod
    def paper_defaults(cls, area=1.0, epsilon=0.1):
        return cls(epsilon=epsilon, C_exp=0.025 * epsilon, delta=area)

    def admissibility_floor(self, area):
        """Smallest delta for which a = 0 is admissible."""
        return area * (
            np.exp((self.epsilon - 1.0) / self.C_exp)
            + np.exp((1.0 - 1.0 / self.epsilon) / self.C_exp)
        )


@dataclass
class BarrierResult:
    value: float
    gradient: np.ndarray
    saturated: bool


def _barrier_quad(basis, quad):
    if quad is None:
        n_panels = max(basis.Mbar, 6)
        return composite_gauss_rect(basis.rect, n_panels, 5)
    return quad


def barrier(basis, a, config, quad=None, with_grad=True):
    """Quadrature value of the double-exponential Jacobian barrier.

    Exponents are clamped at 700 to avoid overflow; a clamped evaluation is
    reported through the ``saturated`` flag and should be treated as
    infeasible by callers.
    """
    pts, w = _barrier_quad(basis, quad)
    tb = basis.tables(pts)
    F11, F12, F21, F22, J = basis.deformation_gradient(tb, a)
    c = config
    s_lo = (c.epsilon - J) / c.C_exp
    s_hi = (J - 1.0 / c.epsilon) / c.C_exp
    saturated = bool((s_lo > _EXP_CLAMP).any() or (s_hi > _EXP_CLAMP).any())
    e_lo = np.exp(np.minimum(s_lo, _EXP_CLAMP))
    e_hi = np.exp(np.minimum(s_hi, _EXP_CLAMP))
    value = float(w @ (e_lo + e_hi))
    grad = None
    if with_grad:
        dJ = basis.jacobian_derivative(tb, F11, F12, F21, F22)
        coef = w * (e_hi - e_lo) / c.C_exp
        grad = dJ.T @ coef
    return BarrierResult(value, grad, saturated)


def barrier_log(basis, a, config, quad=None):
    """log of the barrier integral, overflow-free, with gradient.

    Equivalent constraint: log(barrier) <= log(delta).  Used by the solver.
    """
    pts, w = _barrier_quad(basis, quad)
    tb = basis.tables(pts)
    F11, F12, F21, F22, J = basis.deformation_gradient(tb, a)
    c = config
    s_lo = (c.epsilon - J) / c.C_exp
    s_hi = (J - 1.0 / c.epsilon) / c.C_exp
    s = np.concatenate([s_lo, s_hi])
    ww = np.concatenate([w, w])
    val = float(logsumexp(s, b=ww))
    # softmax weights of each exponential term
    p = ww * np.exp(s - val)
    dJ = basis.jacobian_derivative(tb, F11, F12, F21, F22)
    n = len(w)
    grad = dJ.T @ ((p[n:] - p[:n]) / c.C_exp)
    return val, grad


def verify_bijectivity(basis, a, grid_density=200, quad=None, tol=1e-12):
    """min Jacobian over a dense grid plus boundary preservation check.

    Returns (min_J, boundary_ok).  min_J <= 0 is a result, not an error.
    """
    a_, b_, c_, d_ = basis.rect
    g = np.linspace(0.0, 1.0, grid_density)
    X, Y = np.meshgrid(a_ + (b_ - a_) * g, c_ + (d_ - c_) * g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    qpts, _ = _barrier_quad(basis, quad)
    pts = np.vstack([pts, qpts])
    _, _, J = eval_map(basis, a, pts)
    min_j = float(J.min())

    t = np.linspace(0.0, 1.0, grid_density)
    edges = [
        (np.column_stack([a_ + (b_ - a_) * t, np.full_like(t, c_)]), 1),
        (np.column_stack([a_ + (b_ - a_) * t, np.full_like(t, d_)]), 1),
        (np.column_stack([np.full_like(t, a_), c_ + (d_ - c_) * t]), 0),
        (np.column_stack([np.full_like(t, b_), c_ + (d_ - c_) * t]), 0),
    ]
    scale = max(basis.Lx, basis.Ly)
    boundary_ok = True
    for epts, comp in edges:
        x, _, _ = eval_map(basis, a, epts)
        if np.abs(x[:, comp] - epts[:, comp]).max() > tol * scale:
            boundary_ok = False
    return min_j, boundary_ok


# -- generic map objects -----------------------------------------------------


class MapEvaluator:
    """Anything that maps points and exposes gradients and Jacobians."""

    def evaluate(self, pts):
        raise NotImplementedError

    def __call__(self, pts):
        return self.evaluate(pts)[0]


class BasisMap(MapEvaluator):
    def __init__(self, basis, a):
        self.basis = basis
        self.a = np.asarray(a, dtype=float)

    def evaluate(self, pts):
        return eval_map(self.basis, self.a, pts)


class IdentityMap(MapEvaluator):
    def __init__(self, rect=None):
        self.rect = rect

    def evaluate(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        F = np.tile(np.eye(2), (len(pts), 1, 1))
        return pts.copy(), F, np.ones(len(pts))


def polyline_distance(pts, poly, closed=True):
    """Distance from each point to a sampled curve (piecewise segments)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    poly = np.asarray(poly, dtype=float)
    seg_a = poly
    seg_b = np.roll(poly, -1, axis=0) if closed else poly[1:]
    if not closed:
        seg_a = poly[:-1]
    d = seg_b - seg_a  # (s, 2)
    len2 = np.maximum((d**2).sum(axis=1), 1e-300)
    best = np.full(len(pts), np.inf)
    # chunk over points to bound memory
    step = max(1, int(2e6 / max(len(seg_a), 1)))
    for lo in range(0, len(pts), step):
        P = pts[lo : lo + step]
        w = P[:, None, :] - seg_a[None, :, :]
        t = np.clip((w * d[None, :, :]).sum(-1) / len2[None, :], 0.0, 1.0)
        proj = seg_a[None, :, :] + t[:, :, None] * d[None, :, :]
        dist = np.linalg.norm(P[:, None, :] - proj, axis=-1).min(axis=1)
        best[lo : lo + step] = dist
    return best


def verify_geometry_map(map_eval, u_boundary, v_distance, box, tol, grid_density=100):
    """Numerical check of the bijectivity conditions for U -> V maps.

    (i) the Jacobian determinant stays positive on a dense sample of the
    bounding box; (ii) mapped boundary samples of U land within ``tol`` of
    the boundary of V (``v_distance(points) -> distances``).
    """
    a_, b_, c_, d_ = box
    g = np.linspace(0.0, 1.0, grid_density)
    X, Y = np.meshgrid(a_ + (b_ - a_) * g, c_ + (d_ - c_) * g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    _, _, J = map_eval.evaluate(pts)
    mapped, _, _ = map_eval.evaluate(np.asarray(u_boundary, dtype=float))
    dist = np.asarray(v_distance(mapped), dtype=float)
    return {
        "min_det": float(J.min()),
        "max_boundary_dist": float(dist.max()),
        "ok": bool(J.min() > 0.0 and dist.max() <= tol),
    }


def invert_map(map_eval, targets, rect, grid_density=64, max_iter=60, tol=1e-12):
    """Pointwise preimages by damped Newton seeded from a grid sweep.

    Intended for verification only: robust, not fast.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    a_, b_, c_, d_ = rect
    g = np.linspace(0.0, 1.0, grid_density)
    X, Y = np.meshgrid(a_ + (b_ - a_) * g, c_ + (d_ - c_) * g, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    gx, _, _ = map_eval.evaluate(grid)
    d2 = ((gx[None, :, :] - targets[:, None, :]) ** 2).sum(-1)
    X0 = grid[np.argmin(d2, axis=1)].copy()

    scale = max(b_ - a_, d_ - c_)
    for _ in range(max_iter):
        x, F, J = map_eval.evaluate(X0)
        r = x - targets
        if np.abs(r).max() < tol * scale:
            break
        inv = np.empty_like(F)
        inv[:, 0, 0] = F[:, 1, 1]
        inv[:, 0, 1] = -F[:, 0, 1]
        inv[:, 1, 0] = -F[:, 1, 0]
        inv[:, 1, 1] = F[:, 0, 0]
        inv /= np.maximum(np.abs(J), 1e-14)[:, None, None] * np.sign(J)[:, None, None]
        step = np.einsum("nab,nb->na", inv, r)
        # damped update, clipped to the closed rectangle
        nrm = np.linalg.norm(step, axis=1, keepdims=True)
        lim = 0.2 * scale
        step = np.where(nrm > lim, step * (lim / np.maximum(nrm, 1e-300)), step)
        X0 = X0 - step
        X0[:, 0] = np.clip(X0[:, 0], a_, b_)
        X0[:, 1] = np.clip(X0[:, 1], c_, d_)
    return X0
