"""Galerkin assembly: continuous ADR systems, DG upwind advection, norms.

Coefficient input comes in two flavours: callables evaluated at quadrature
points (the user-facing path) and pre-sampled arrays at those same points
(the path used by the hyper-reduced ROM, where empirical-interpolation
basis fields replace the physical coefficients).
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from regrom.quadrature import gauss_legendre_01

__all__ = [
    "SingularSystem",
    "AdrCoefficients",
    "DgCoefficients",
    "EdgeQuadrature",
    "reference_tables",
    "assemble_adr",
    "assemble_adr_sampled",
    "assemble_dg_advection",
    "assemble_dg_sampled",
    "sample_dg_coefficients",
    "edge_quadrature",
    "apply_dirichlet",
    "solve_linear",
    "mass_matrix",
    "stiffness_matrix",
    "inner_product",
    "norm",
]


class SingularSystem(Exception):
    """Linear system is singular or numerically unusable."""


class AdrCoefficients:
    """Coefficient functions for -div(K grad z - c z) + sigma z = f.

    Each entry is a callable on points (n, 2) or None.  ``kappa`` may return
    scalars (n,) for isotropic diffusion or tensors (n, 2, 2); ``neumann``
    is integrated over the non-Dirichlet part of the boundary.
    """

    def __init__(self, kappa=None, advection=None, reaction=None, source=None, neumann=None):
        self.kappa = kappa
        self.advection = advection
        self.reaction = reaction
        self.source = source
        self.neumann = neumann


class DgCoefficients:
    """Coefficients for the hyperbolic problem div(c z) + sigma z = f.

    ``inflow_value`` supplies the weakly imposed boundary data z_D; the
    inflow part of the boundary is detected pointwise by the sign of c.n.
    """

    def __init__(self, advection, reaction=None, source=None, inflow_value=None):
        self.advection = advection
        self.reaction = reaction
        self.source = source
        self.inflow_value = inflow_value


def reference_tables(space):
    """Basis values/derivatives at the reference quadrature points.

    Returns (phi (nq, n_loc), dphi (nq, n_loc, 2)) on the reference triangle.
    """
    mesh = space.mesh
    ref = mesh.quad_bary[:, 1:]
    xi = ref[:, 0][:, None]
    eta = ref[:, 1][:, None]
    ex = space.mono_ex[None, :]
    ey = space.mono_ey[None, :]
    p = xi**ex * eta**ey
    pdx = np.where(ex > 0, ex * xi ** np.maximum(ex - 1, 0) * eta**ey, 0.0)
    pdy = np.where(ey > 0, ey * eta ** np.maximum(ey - 1, 0) * xi**ex, 0.0)
    phi = p @ space.basis_coeff.T
    dphi = np.stack([pdx @ space.basis_coeff.T, pdy @ space.basis_coeff.T], axis=-1)
    return phi, dphi


def _basis_at_ref(space, ref):
    xi = ref[:, 0][:, None]
    eta = ref[:, 1][:, None]
    ex = space.mono_ex[None, :]
    ey = space.mono_ey[None, :]
    p = xi**ex * eta**ey
    pdx = np.where(ex > 0, ex * xi ** np.maximum(ex - 1, 0) * eta**ey, 0.0)
    pdy = np.where(ey > 0, ey * eta ** np.maximum(ey - 1, 0) * xi**ex, 0.0)
    phi = p @ space.basis_coeff.T
    dphi = np.stack([pdx @ space.basis_coeff.T, pdy @ space.basis_coeff.T], axis=-1)
    return phi, dphi


def _phys_grads(space, dphi):
    """Physical basis gradients at element quad points: (n_el, nq, n_loc, 2)."""
    return np.einsum("eab,qlb->eqla", space.mesh.elem_inv_jt, dphi)


def _scatter(space, local):
    """Accumulate local element matrices (n_el, n_loc, n_loc) into CSR."""
    conn = space.conn
    n_el, n_loc = conn.shape
    rows = np.repeat(conn, n_loc, axis=1).ravel()
    cols = np.tile(conn, (1, n_loc)).ravel()
    A = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs)
    )
    return A.tocsr()


def _scatter_vec(space, local):
    F = np.zeros(space.n_dofs)
    np.add.at(F, space.conn.ravel(), local.ravel())
    return F


# -- edge machinery ----------------------------------------------------------


class EdgeQuadrature:
    """Edge connectivity, outward normals and 1D quadrature for a mesh.

    The plus side of an interior edge is the adjacent element with the lower
    index; normals point away from it.  Boundary edges have elem_minus = -1.
    """

    _LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

    def __init__(self, mesh, n_points):
        self.mesh = mesh
        self.n_points = n_points
        first = {}
        edges = []
        for e in range(mesh.n_elements):
            tri = mesh.elements[e]
            for loc, (la, lb) in enumerate(self._LOCAL_EDGES):
                ga, gb = int(tri[la]), int(tri[lb])
                key = (min(ga, gb), max(ga, gb))
                if key in first:
                    idx = first[key]
                    edges[idx][3] = e
                    edges[idx][4] = loc
                else:
                    first[key] = len(edges)
                    edges.append([ga, gb, e, -1, -1, loc])
        arr = np.asarray(edges, dtype=np.int64)
        self.va = arr[:, 0]
        self.vb = arr[:, 1]
        self.elem_plus = arr[:, 2]
        self.elem_minus = arr[:, 3]
        self.loc_minus = arr[:, 4]
        self.loc_plus = arr[:, 5]
        self.n_edges = len(arr)
        self.is_boundary = self.elem_minus < 0

        pa = mesh.vertices[self.va]
        pb = mesh.vertices[self.vb]
        tang = pb - pa
        self.length = np.hypot(tang[:, 0], tang[:, 1])
        # outward normal of the plus element (its triangles are CCW)
        self.normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / self.length[:, None]

        t, w = gauss_legendre_01(n_points)
        self.points = (
            pa[:, None, :] + t[None, :, None] * tang[:, None, :]
        ).reshape(-1, 2)
        self.weights = (self.length[:, None] * w[None, :]).ravel()
        self.edge_of_point = np.repeat(np.arange(self.n_edges), n_points)

    def ref_coords(self, side):
        """Reference coords of all edge quad points in the side's element."""
        elem = self.elem_plus if side == "+" else self.elem_minus
        el = np.repeat(elem, self.n_points)
        mesh = self.mesh
        d = self.points - mesh.elem_origin[el]
        B = mesh.elem_jac[el]
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        xi = (B[:, 1, 1] * d[:, 0] - B[:, 0, 1] * d[:, 1]) / det
        eta = (-B[:, 1, 0] * d[:, 0] + B[:, 0, 0] * d[:, 1]) / det
        return np.column_stack([xi, eta])


def _edge_quad(space):
    mesh = space.mesh
    n_points = space.degree + 2
    key = ("_edge_quad", n_points)
    cache = getattr(mesh, "_edge_cache", None)
    if cache is None:
        cache = {}
        mesh._edge_cache = cache
    if key not in cache:
        cache[key] = EdgeQuadrature(mesh, n_points)
    return cache[key]


def edge_quadrature(space):
    return _edge_quad(space)


def _edge_traces(space, eq):
    """Basis traces at edge quad points from both sides.

    Returns (tr_plus, tr_minus): (n_edges, n_eq, n_loc); minus rows of
    boundary edges are zero.
    """
    cache_key = ("_edge_traces", space.degree, space.continuity, eq.n_points)
    cache = getattr(space, "_trace_cache", None)
    if cache is None:
        cache = {}
        space._trace_cache = cache
    if cache_key in cache:
        return cache[cache_key]
    phi_p, _ = _basis_at_ref(space, eq.ref_coords("+"))
    tr_plus = phi_p.reshape(eq.n_edges, eq.n_points, space.n_local)
    tr_minus = np.zeros_like(tr_plus)
    interior = ~eq.is_boundary
    if interior.any():
        eqm = eq.ref_coords("-")
        mask = np.repeat(interior, eq.n_points)
        phi_m = np.zeros((len(eqm), space.n_local))
        phi_m[mask], _ = _basis_at_ref(space, eqm[mask])
        tr_minus = phi_m.reshape(eq.n_edges, eq.n_points, space.n_local)
    cache[cache_key] = (tr_plus, tr_minus)
    return cache[cache_key]


# -- CG advection-diffusion-reaction ----------------------------------------


def assemble_adr_sampled(space, kappa=None, advection=None, reaction=None, source=None):
    """Assemble the ADR system from coefficient samples at quadrature points.

    kappa     : (n_el*nq, 2, 2) or (n_el*nq,) or None
    advection : (n_el*nq, 2) or None
    reaction  : (n_el*nq,) or None
    source    : (n_el*nq,) or None

    No boundary conditions are applied here.
    """
    mesh = space.mesh
    n_el = mesh.n_elements
    nq = mesh.n_quad_local
    phi, dphi = reference_tables(space)
    w = mesh.quad_weights.reshape(n_el, nq)

    local = np.zeros((n_el, space.n_local, space.n_local))
    grads = None
    if kappa is not None or advection is not None:
        grads = _phys_grads(space, dphi)
    if kappa is not None:
        K = np.asarray(kappa, dtype=float)
        if K.ndim == 1:
            Kg = K.reshape(n_el, nq, 1, 1) * grads
        else:
            K = K.reshape(n_el, nq, 2, 2)
            Kg = np.einsum("eqab,eqlb->eqla", K, grads)
        local += np.einsum("eq,eqja,eqia->eij", w, Kg, grads)
    if advection is not None:
        c = np.asarray(advection, dtype=float).reshape(n_el, nq, 2)
        local -= np.einsum("eq,qj,eqia,eqa->eij", w, phi, grads, c)
    if reaction is not None:
        s = np.asarray(reaction, dtype=float).reshape(n_el, nq)
        local += np.einsum("eq,eq,qj,qi->eij", w, s, phi, phi)
    A = _scatter(space, local)

    F = np.zeros(space.n_dofs)
    if source is not None:
        f = np.asarray(source, dtype=float).reshape(n_el, nq)
        F = _scatter_vec(space, np.einsum("eq,eq,qi->ei", w, f, phi))
    return A, F


def _sample_adr(coeffs, pts):
    kap = adv = rea = src = None
    if coeffs.kappa is not None:
        kap = np.asarray(coeffs.kappa(pts), dtype=float)
    if coeffs.advection is not None:
        adv = np.asarray(coeffs.advection(pts), dtype=float)
    if coeffs.reaction is not None:
        rea = np.asarray(coeffs.reaction(pts), dtype=float)
    if coeffs.source is not None:
        src = np.asarray(coeffs.source(pts), dtype=float)
    return kap, adv, rea, src


def assemble_adr(space, coeffs, dirichlet=None):
    """Assemble the CG system for the ADR problem with strong Dirichlet data.

    ``dirichlet`` is None or a (marker, value) pair: marker(points)->mask
    selects the Dirichlet nodes, value(points)->(n,) their data.  Imposition
    is by lifting with symmetric elimination, so pure diffusion-reaction
    systems stay symmetric.
    """
    if space.continuity != "CG":
        raise ValueError("assemble_adr expects a CG space")
    kap, adv, rea, src = _sample_adr(coeffs, space.mesh.quad_points)
    A, F = assemble_adr_sampled(space, kap, adv, rea, src)

    if coeffs.neumann is not None:
        eq = _edge_quad(space)
        tr_plus, _ = _edge_traces(space, eq)
        bnd = eq.is_boundary
        if bnd.any():
            g = np.asarray(coeffs.neumann(eq.points), dtype=float).reshape(
                eq.n_edges, eq.n_points
            )
            wq = eq.weights.reshape(eq.n_edges, eq.n_points)
            loc = np.einsum("eq,eq,eqi->ei", wq[bnd], g[bnd], tr_plus[bnd])
            np.add.at(F, space.conn[eq.elem_plus[bnd]].ravel(), loc.ravel())

    if dirichlet is not None:
        marker, value = dirichlet
        dofs = space.boundary_dofs(marker)
        vals = np.asarray(value(space.dof_coords[dofs]), dtype=float)
        A, F = apply_dirichlet(A, F, dofs, vals)
    return A, F


def apply_dirichlet(A, F, dofs, values):
    """Symmetric elimination: zero rows/cols, unit diagonal, lifted rhs."""
    A = A.tocsr()
    n = A.shape[0]
    lift = np.zeros(n)
    lift[dofs] = values
    F = F - A @ lift
    mask = np.zeros(n, dtype=bool)
    mask[dofs] = True
    keep = sp.diags(np.where(mask, 0.0, 1.0))
    A = keep @ A @ keep + sp.diags(mask.astype(float))
    F[dofs] = values
    return A.tocsr(), F


def solve_linear(A, F):
    """Direct sparse solve with a singularity diagnostic."""
    A = A.tocsc()
    try:
        lu = spla.splu(A)
        z = lu.solve(F)
    except RuntimeError as exc:  # pragma: no cover - scipy raises on exact zeros
        raise SingularSystem(f"sparse factorization failed: {exc}") from exc
    resid = np.linalg.norm(A @ z - F)
    scale = np.linalg.norm(F) + np.linalg.norm(z) + 1e-300
    if not np.isfinite(z).all() or resid > 1e-8 * scale:
        cond = np.abs(A.diagonal()).max() / max(np.abs(A.diagonal()).min(), 1e-300)
        raise SingularSystem(
            f"singular or ill-conditioned system: residual {resid:.3e}, "
            f"diagonal ratio {cond:.3e}"
        )
    return z


# -- DG advection-reaction ----------------------------------------------------


def assemble_dg_sampled(space, elem_coef, edge_coef, f_el=None, f_ed=None):
    """Assemble the upwind DG system from sampled coefficient fields.

    elem_coef : (n_el*nq, 3)   rows [sigma, c1, c2] at element quad points
    edge_coef : (n_edges*n_eq, 2) rows [flux advection coef, jump penalty]
                at edge quad points; the first entry is c.n+ on interior
                edges and (1 - delta_in) c.n on boundary edges, the second
                is tau/2 on interior edges and 0 on the boundary
    f_el      : (n_el*nq,) element source, or None
    f_ed      : (n_edges*n_eq,) edge source (inflow data c.n z_D), or None
    """
    if space.continuity != "DG":
        raise ValueError("assemble_dg_sampled expects a DG space")
    mesh = space.mesh
    n_el = mesh.n_elements
    nq = mesh.n_quad_local
    n_loc = space.n_local
    phi, dphi = reference_tables(space)
    grads = _phys_grads(space, dphi)
    w = mesh.quad_weights.reshape(n_el, nq)

    ec = np.asarray(elem_coef, dtype=float).reshape(n_el, nq, 3)
    sig = ec[..., 0]
    c = ec[..., 1:]
    local = np.einsum("eq,eq,qj,qi->eij", w, sig, phi, phi)
    local -= np.einsum("eq,qj,eqia,eqa->eij", w, phi, grads, c)

    eq = _edge_quad(space)
    tr_p, tr_m = _edge_traces(space, eq)
    wq = eq.weights.reshape(eq.n_edges, eq.n_points)
    gc = np.asarray(edge_coef, dtype=float).reshape(eq.n_edges, eq.n_points, 2)
    a_coef = gc[..., 0]
    j_coef = gc[..., 1]
    interior = ~eq.is_boundary

    rows, cols, data = [], [], []

    def add_block(test_tr, test_el, trial_tr, trial_el, coef, mask):
        blk = np.einsum("eq,eq,eqi,eqj->eij", wq[mask], coef[mask], test_tr[mask], trial_tr[mask])
        conn_i = space.conn[test_el[mask]]
        conn_j = space.conn[trial_el[mask]]
        rows.append(np.repeat(conn_i, n_loc, axis=1).ravel())
        cols.append(np.tile(conn_j, (1, n_loc)).ravel())
        data.append(blk.ravel())

    ep, em = eq.elem_plus, eq.elem_minus
    # interior: [a {w} + j (w+ - w-)] (v+ - v-)
    half_a = 0.5 * a_coef
    for tv, ev, sv in ((tr_p, ep, 1.0), (tr_m, em, -1.0)):
        for tw, ew, sw_avg, sw_jmp in (
            (tr_p, ep, 1.0, 1.0),
            (tr_m, em, 1.0, -1.0),
        ):
            coef = sv * (sw_avg * half_a + sw_jmp * j_coef)
            add_block(tv, ev, tw, ew, coef, interior)
    # boundary: a w v with the plus traces
    if eq.is_boundary.any():
        add_block(tr_p, ep, tr_p, ep, a_coef, eq.is_boundary)

    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_dofs, space.n_dofs),
    ).tocsr()
    A = A + _scatter(space, local)

    F = np.zeros(space.n_dofs)
    if f_el is not None:
        f = np.asarray(f_el, dtype=float).reshape(n_el, nq)
        F += _scatter_vec(space, np.einsum("eq,eq,qi->ei", w, f, phi))
    if f_ed is not None:
        fe = np.asarray(f_ed, dtype=float).reshape(eq.n_edges, eq.n_points)
        bnd = eq.is_boundary
        loc = -np.einsum("eq,eq,eqi->ei", wq[bnd], fe[bnd], tr_p[bnd])
        np.add.at(F, space.conn[ep[bnd]].ravel(), loc.ravel())
    return A, F


def sample_dg_coefficients(space, coeffs):
    """Evaluate DgCoefficients into the sampled arrays used by assembly."""
    mesh = space.mesh
    eq = _edge_quad(space)
    pts = mesh.quad_points
    c_el = np.asarray(coeffs.advection(pts), dtype=float)
    if not np.isfinite(c_el).all() or np.max(np.hypot(c_el[:, 0], c_el[:, 1])) < 1e-14:
        raise ValueError("zero advection field: upwind flux undefined")
    sig = (
        np.asarray(coeffs.reaction(pts), dtype=float)
        if coeffs.reaction is not None
        else np.zeros(len(pts))
    )
    elem_coef = np.column_stack([sig, c_el])

    nrm = np.repeat(eq.normal, eq.n_points, axis=0)
    c_ed = np.asarray(coeffs.advection(eq.points), dtype=float)
    cdotn = np.einsum("pa,pa->p", c_ed, nrm)
    bnd = np.repeat(eq.is_boundary, eq.n_points)
    inflow = bnd & (cdotn < 0)
    a_coef = np.where(inflow, 0.0, cdotn)
    j_coef = np.where(bnd, 0.0, 0.5 * np.abs(cdotn))
    edge_coef = np.column_stack([a_coef, j_coef])

    f_el = (
        np.asarray(coeffs.source(pts), dtype=float)
        if coeffs.source is not None
        else None
    )
    f_ed = None
    if coeffs.inflow_value is not None:
        zd = np.asarray(coeffs.inflow_value(eq.points), dtype=float)
        f_ed = np.where(inflow, cdotn * zd, 0.0)
    return elem_coef, edge_coef, f_el, f_ed


def assemble_dg_advection(space, coeffs):
    """Upwind-stabilized DG system for div(c z) + sigma z = f, weak inflow."""
    elem_coef, edge_coef, f_el, f_ed = sample_dg_coefficients(space, coeffs)
    return assemble_dg_sampled(space, elem_coef, edge_coef, f_el, f_ed)


# -- inner products -----------------------------------------------------------


def mass_matrix(space):
    if not hasattr(space, "_mass"):
        space._mass = assemble_adr_sampled(
            space, reaction=np.ones(len(space.mesh.quad_points))
        )[0]
    return space._mass


def stiffness_matrix(space):
    if not hasattr(space, "_stiff"):
        space._stiff = assemble_adr_sampled(
            space, kappa=np.ones(len(space.mesh.quad_points))
        )[0]
    return space._stiff


def _field_pair(u, v):
    from regrom.mesh import FeField

    if not isinstance(u, FeField) or not isinstance(v, FeField):
        raise TypeError("L2/H1 inner products need FeField operands")
    if u.space is not v.space:
        raise ValueError("fields live on different spaces")
    return u.space, u.coeffs, v.coeffs


def inner_product(kind, u, v):
    """Symmetric bilinear pairing: 'L2', 'H1' or 'Euclidean'."""
    if kind == "Euclidean":
        ua = u.coeffs if hasattr(u, "coeffs") else np.asarray(u, dtype=float)
        va = v.coeffs if hasattr(v, "coeffs") else np.asarray(v, dtype=float)
        if ua.shape != va.shape:
            raise ValueError("length mismatch in Euclidean inner product")
        return float(ua.ravel() @ va.ravel())
    space, ua, va = _field_pair(u, v)
    if kind == "L2":
        return float(ua @ (mass_matrix(space) @ va))
    if kind == "H1":
        M = mass_matrix(space)
        S = stiffness_matrix(space)
        return float(ua @ (M @ va) + ua @ (S @ va))
    raise ValueError(f"unknown inner product kind {kind!r}")


def norm(kind, u):
    return float(np.sqrt(max(inner_product(kind, u, u), 0.0)))
