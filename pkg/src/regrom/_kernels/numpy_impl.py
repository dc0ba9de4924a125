"""Pure-numpy implementation of the hot kernels.

Same contracts as the compiled extension in ``native.pyx``; used as the
fallback when the extension is unavailable (or when REGROM_PURE_PYTHON=1).
"""

import numpy as np

BACKEND = "numpy"

MODE_STRICT = 0
MODE_CLAMP = 1


def locate(pts, xlines, ylines, mode):
    """Locate points on a structured triangular grid.

    Cell lookup uses searchsorted(side='left') - 1, so a point sitting
    exactly on an interior grid line is assigned to the lower-index cell;
    on the shared diagonal (local lx == ly) the lower triangle wins.

    Returns (elem, ref, inside): element indices (int64, -1 for outside
    points in strict mode), reference-triangle coordinates (xi, eta), and
    an inside mask.
    """
    pts = np.asarray(pts, dtype=float)
    x = pts[:, 0]
    y = pts[:, 1]
    a, b = xlines[0], xlines[-1]
    c, d = ylines[0], ylines[-1]
    nx = len(xlines) - 1
    ny = len(ylines) - 1

    inside = (x >= a) & (x <= b) & (y >= c) & (y <= d)
    if mode == MODE_CLAMP:
        x = np.clip(x, a, b)
        y = np.clip(y, c, d)
        inside = np.ones_like(inside)

    ix = np.clip(np.searchsorted(xlines, x, side="left") - 1, 0, nx - 1)
    iy = np.clip(np.searchsorted(ylines, y, side="left") - 1, 0, ny - 1)
    hx = xlines[ix + 1] - xlines[ix]
    hy = ylines[iy + 1] - ylines[iy]
    lx = np.clip((x - xlines[ix]) / hx, 0.0, 1.0)
    ly = np.clip((y - ylines[iy]) / hy, 0.0, 1.0)

    upper = ly > lx
    elem = 2 * (iy * nx + ix) + upper
    xi = np.where(upper, lx, lx - ly)
    eta = np.where(upper, ly - lx, ly)

    elem = elem.astype(np.int64)
    if mode == MODE_STRICT:
        elem = np.where(inside, elem, -1)
        xi = np.where(inside, xi, 0.0)
        eta = np.where(inside, eta, 0.0)
    return elem, np.column_stack([xi, eta]), inside


def eval_fields(elem, ref, conn, inv_jt, cmat, ex, ey, coeffs):
    """Evaluate nodal fields (values and physical gradients) at points.

    elem   : (n,) element index per point (must be valid)
    ref    : (n, 2) reference coordinates per point
    conn   : (n_el, n_loc) global dof ids
    inv_jt : (n_el, 2, 2) inverse-transpose geometric Jacobians
    cmat   : (n_loc, n_mono) monomial coefficients of the local basis
    ex, ey : (n_mono,) monomial exponents
    coeffs : (n_dof, n_f) field coefficients

    Returns (vals (n, n_f), grads (n, n_f, 2)).
    """
    xi = ref[:, 0][:, None]
    eta = ref[:, 1][:, None]
    ex = ex[None, :]
    ey = ey[None, :]

    with np.errstate(divide="ignore", invalid="ignore"):
        px = xi**ex
        py = eta**ey
        p = px * py
        pdx = np.where(ex > 0, ex * xi ** np.maximum(ex - 1, 0) * py, 0.0)
        pdy = np.where(ey > 0, ey * eta ** np.maximum(ey - 1, 0) * px, 0.0)

    basis = p @ cmat.T  # (n, n_loc)
    basis_dx = pdx @ cmat.T
    basis_dy = pdy @ cmat.T

    local = coeffs[conn[elem]]  # (n, n_loc, n_f)
    vals = np.einsum("nl,nlf->nf", basis, local)
    g_xi = np.einsum("nl,nlf->nf", basis_dx, local)
    g_eta = np.einsum("nl,nlf->nf", basis_dy, local)

    jt = inv_jt[elem]  # (n, 2, 2)
    grads = np.empty((len(elem), coeffs.shape[1], 2))
    grads[:, :, 0] = jt[:, 0, 0, None] * g_xi + jt[:, 0, 1, None] * g_eta
    grads[:, :, 1] = jt[:, 1, 0, None] * g_xi + jt[:, 1, 1, None] * g_eta
    return vals, grads
