"""Structured triangular meshes on rectangles, FE spaces and fields.

Each cell of an nx-by-ny grid is split into two triangles along the
diagonal from the lower-left to the upper-right corner.  Lagrange spaces of
degree 1..3 are supported, with shared (CG) or element-private (DG) dofs.
Point location is O(1) on uniform grids and O(log n) on graded ones, with a
deterministic tie rule: points on inter-element boundaries belong to the
lower-index element.
"""

import json

import numpy as np

from regrom import _kernels
from regrom.quadrature import triangle_rule

__all__ = [
    "OutsideDomain",
    "Mesh",
    "FeSpace",
    "FeField",
    "build_structured_mesh",
    "locate_point",
    "evaluate_field",
    "mesh_to_dict",
    "mesh_from_dict",
    "field_to_dict",
    "field_from_dict",
    "field_to_csv",
]


class OutsideDomain(Exception):
    """A query point lies outside the closure of the mesh rectangle."""


def _grade_lines(lo, hi, n, ratio):
    """Grid lines with geometric cell-width progression h_{i+1} = ratio*h_i.

    ratio > 1 refines toward ``lo``; ratio < 1 toward ``hi``; 1 is uniform.
    """
    if n < 1:
        raise ValueError("cell count must be >= 1")
    if ratio <= 0:
        raise ValueError("grading ratio must be positive")
    if abs(ratio - 1.0) < 1e-14 or n == 1:
        return np.linspace(lo, hi, n + 1)
    h0 = (hi - lo) * (1.0 - ratio) / (1.0 - ratio**n)
    widths = h0 * ratio ** np.arange(n)
    lines = lo + np.concatenate([[0.0], np.cumsum(widths)])
    lines[-1] = hi
    return lines


class Mesh:
    """Structured triangular mesh with an attached quadrature rule."""

    def __init__(self, rect, nx, ny, quad_order=6, grading=(1.0, 1.0)):
        a, b, c, d = (float(v) for v in rect)
        if not (b > a and d > c):
            raise ValueError(f"degenerate rectangle {rect}")
        if nx < 1 or ny < 1:
            raise ValueError("nx and ny must be >= 1")
        self.rect = (a, b, c, d)
        self.nx = int(nx)
        self.ny = int(ny)
        self.quad_order = int(quad_order)
        self.grading = (float(grading[0]), float(grading[1]))

        self.xlines = _grade_lines(a, b, self.nx, self.grading[0])
        self.ylines = _grade_lines(c, d, self.ny, self.grading[1])

        X, Y = np.meshgrid(self.xlines, self.ylines, indexing="xy")
        self.vertices = np.column_stack([X.ravel(), Y.ravel()])

        nvx = self.nx + 1
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="xy")
        ix, iy = ix.ravel(), iy.ravel()
        v00 = iy * nvx + ix
        v10 = v00 + 1
        v01 = v00 + nvx
        v11 = v01 + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        elements = np.empty((2 * self.nx * self.ny, 3), dtype=np.int64)
        elements[0::2] = lower
        elements[1::2] = upper
        self.elements = elements
        self.n_elements = len(elements)

        # Per-element geometry: x = v0 + B [xi, eta]^T, columns (v1-v0, v2-v0).
        v0 = self.vertices[elements[:, 0]]
        e1 = self.vertices[elements[:, 1]] - v0
        e2 = self.vertices[elements[:, 2]] - v0
        self.elem_origin = v0
        B = np.empty((self.n_elements, 2, 2))
        B[:, :, 0] = e1
        B[:, :, 1] = e2
        self.elem_jac = B
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        self.elem_area = 0.5 * det
        inv = np.empty_like(B)
        inv[:, 0, 0] = B[:, 1, 1] / det
        inv[:, 0, 1] = -B[:, 0, 1] / det
        inv[:, 1, 0] = -B[:, 1, 0] / det
        inv[:, 1, 1] = B[:, 0, 0] / det
        self.elem_inv_jt = np.ascontiguousarray(np.transpose(inv, (0, 2, 1)))

        bary, w_ref = triangle_rule(self.quad_order)
        self.quad_bary = bary
        self.quad_w_ref = w_ref
        self.n_quad_local = len(w_ref)
        # Physical quadrature points, element-major: shape (n_el*nq, 2).
        corners = self.vertices[elements]  # (n_el, 3, 2)
        pts = np.einsum("qj,ejd->eqd", bary, corners)
        self.quad_points = pts.reshape(-1, 2)
        self.quad_weights = np.repeat(self.elem_area, self.n_quad_local) * np.tile(
            w_ref, self.n_elements
        )
        self.quad_elem = np.repeat(
            np.arange(self.n_elements, dtype=np.int64), self.n_quad_local
        )
        self.quad_ref = np.tile(bary[:, 1:], (self.n_elements, 1))

    @property
    def area(self):
        a, b, c, d = self.rect
        return (b - a) * (d - c)

    def locate(self, pts, mode="strict"):
        """Element index and (xi, eta) reference coordinates per point.

        mode='strict' raises OutsideDomain if any point leaves the closed
        rectangle; mode='clamp' projects onto the closure first.
        """
        kmode = _kernels.MODE_CLAMP if mode == "clamp" else _kernels.MODE_STRICT
        elem, ref, inside = _kernels.locate(
            np.ascontiguousarray(pts, dtype=float), self.xlines, self.ylines, kmode
        )
        if mode == "strict" and not inside.all():
            bad = np.flatnonzero(~inside)[0]
            raise OutsideDomain(
                f"point {np.asarray(pts)[bad]} outside closure of rect {self.rect}"
            )
        return elem, ref


def build_structured_mesh(rect, nx, ny, quad_order=6, grading=(1.0, 1.0)):
    """Structured triangular mesh over a rectangle with quadrature attached."""
    return Mesh(rect, nx, ny, quad_order=quad_order, grading=grading)


def locate_point(mesh, x):
    """Locate a single point; returns (element index, barycentric coords)."""
    elem, ref = mesh.locate(np.asarray(x, dtype=float).reshape(1, 2), mode="strict")
    xi, eta = ref[0]
    return int(elem[0]), np.array([1.0 - xi - eta, xi, eta])


def _reference_nodes(degree):
    """Lattice nodes (xi, eta) = (i/k, j/k), i + j <= k, vertex-first order."""
    k = degree
    nodes = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    # edge nodes: edge 0 = v0-v1, edge 1 = v1-v2, edge 2 = v2-v0
    for t in range(1, k):
        nodes.append((t / k, 0.0))
    for t in range(1, k):
        nodes.append((1.0 - t / k, t / k))
    for t in range(1, k):
        nodes.append((0.0, 1.0 - t / k))
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append((i / k, j / k))
    return np.asarray(nodes)


def _monomial_exponents(degree):
    ex, ey = [], []
    for total in range(degree + 1):
        for p in range(total, -1, -1):
            ex.append(p)
            ey.append(total - p)
    return np.asarray(ex, dtype=np.int64), np.asarray(ey, dtype=np.int64)


class FeSpace:
    """Continuous or discontinuous Lagrange space on a structured mesh."""

    def __init__(self, mesh, degree=2, continuity="CG"):
        if degree < 1 or degree > 3:
            raise ValueError("supported polynomial degrees: 1, 2, 3")
        if continuity not in ("CG", "DG"):
            raise ValueError("continuity must be 'CG' or 'DG'")
        self.mesh = mesh
        self.degree = int(degree)
        self.continuity = continuity

        self.ref_nodes = _reference_nodes(degree)
        self.n_local = len(self.ref_nodes)
        self.mono_ex, self.mono_ey = _monomial_exponents(degree)
        V = (
            self.ref_nodes[:, 0][:, None] ** self.mono_ex[None, :]
            * self.ref_nodes[:, 1][:, None] ** self.mono_ey[None, :]
        )
        self.basis_coeff = np.ascontiguousarray(np.linalg.inv(V).T)

        if continuity == "DG":
            self._build_dg()
        else:
            self._build_cg()
        self.dof_count = self.n_dofs

    # -- dof enumeration ---------------------------------------------------

    def _build_dg(self):
        n_el = self.mesh.n_elements
        conn = np.arange(n_el * self.n_local, dtype=np.int64).reshape(
            n_el, self.n_local
        )
        self.conn = conn
        self.n_dofs = n_el * self.n_local
        self.dof_coords = self._node_coords().reshape(-1, 2)

    def _build_cg(self):
        mesh = self.mesh
        k = self.degree
        n_el = mesh.n_elements
        n_v = len(mesh.vertices)
        conn = np.empty((n_el, self.n_local), dtype=np.int64)
        conn[:, :3] = mesh.elements

        next_dof = n_v
        coords_extra = []
        if k >= 2:
            edge_ids = {}
            local_edges = ((0, 1), (1, 2), (2, 0))
            for e in range(n_el):
                tri = mesh.elements[e]
                for le, (la, lb) in enumerate(local_edges):
                    ga, gb = int(tri[la]), int(tri[lb])
                    key = (min(ga, gb), max(ga, gb))
                    if key not in edge_ids:
                        edge_ids[key] = next_dof
                        pa = mesh.vertices[key[0]]
                        pb = mesh.vertices[key[1]]
                        for t in range(1, k):
                            coords_extra.append(pa + (t / k) * (pb - pa))
                        next_dof += k - 1
                    base = edge_ids[key]
                    for t in range(1, k):
                        # node at fraction t/k from local vertex la toward lb
                        frac_from_min = t if ga < gb else k - t
                        conn[e, 3 + le * (k - 1) + (t - 1)] = base + frac_from_min - 1
        n_interior = self.n_local - 3 - 3 * (k - 1)
        if n_interior > 0:
            interior_ref = self.ref_nodes[3 + 3 * (k - 1) :]
            corners = mesh.vertices[mesh.elements]  # (n_el, 3, 2)
            bary = np.column_stack(
                [
                    1.0 - interior_ref[:, 0] - interior_ref[:, 1],
                    interior_ref[:, 0],
                    interior_ref[:, 1],
                ]
            )
            pts = np.einsum("qj,ejd->eqd", bary, corners).reshape(-1, 2)
            coords_extra.extend(pts)
            ids = next_dof + np.arange(n_el * n_interior, dtype=np.int64)
            conn[:, 3 + 3 * (k - 1) :] = ids.reshape(n_el, n_interior)
            next_dof += n_el * n_interior

        self.conn = conn
        self.n_dofs = next_dof
        if coords_extra:
            self.dof_coords = np.vstack([mesh.vertices, np.asarray(coords_extra)])
        else:
            self.dof_coords = mesh.vertices.copy()

    def _node_coords(self):
        """Physical coordinates of all local nodes, shape (n_el, n_local, 2)."""
        bary = np.column_stack(
            [
                1.0 - self.ref_nodes[:, 0] - self.ref_nodes[:, 1],
                self.ref_nodes[:, 0],
                self.ref_nodes[:, 1],
            ]
        )
        corners = self.mesh.vertices[self.mesh.elements]
        return np.einsum("qj,ejd->eqd", bary, corners)

    def boundary_dofs(self, marker=None):
        """Dofs whose node lies on the rectangle boundary (CG only).

        ``marker(points) -> bool mask`` restricts to part of the boundary.
        """
        if self.continuity != "CG":
            raise ValueError("strong boundary dofs only defined for CG spaces")
        a, b, c, d = self.mesh.rect
        p = self.dof_coords
        tol = 1e-12 * max(b - a, d - c)
        on_bnd = (
            (np.abs(p[:, 0] - a) < tol)
            | (np.abs(p[:, 0] - b) < tol)
            | (np.abs(p[:, 1] - c) < tol)
            | (np.abs(p[:, 1] - d) < tol)
        )
        idx = np.flatnonzero(on_bnd)
        if marker is not None:
            idx = idx[np.asarray(marker(p[idx]), dtype=bool)]
        return idx

    def interpolate(self, fn):
        """Nodal interpolant of a callable fn(points (n,2)) -> (n,)."""
        if self.continuity == "CG":
            vals = np.asarray(fn(self.dof_coords), dtype=float)
        else:
            vals = np.asarray(fn(self.dof_coords), dtype=float)
        return FeField(self, vals)

    def eval_at(self, coeffs, points, mode="strict"):
        """Evaluate coefficient columns at points: (vals, grads)."""
        coeffs = np.asarray(coeffs, dtype=float)
        squeeze = coeffs.ndim == 1
        if squeeze:
            coeffs = coeffs[:, None]
        elem, ref = self.mesh.locate(points, mode=mode)
        vals, grads = _kernels.eval_fields(
            elem,
            np.ascontiguousarray(ref),
            self.conn,
            self.mesh.elem_inv_jt,
            self.basis_coeff,
            self.mono_ex,
            self.mono_ey,
            np.ascontiguousarray(coeffs),
        )
        if squeeze:
            return vals[:, 0], grads[:, 0, :]
        return vals, grads

    def eval_on_quad(self, coeffs):
        """Values and gradients at the mesh quadrature points (element-major)."""
        coeffs = np.asarray(coeffs, dtype=float)
        squeeze = coeffs.ndim == 1
        if squeeze:
            coeffs = coeffs[:, None]
        mesh = self.mesh
        vals, grads = _kernels.eval_fields(
            mesh.quad_elem,
            np.ascontiguousarray(mesh.quad_ref),
            self.conn,
            mesh.elem_inv_jt,
            self.basis_coeff,
            self.mono_ex,
            self.mono_ey,
            np.ascontiguousarray(coeffs),
        )
        if squeeze:
            return vals[:, 0], grads[:, 0, :]
        return vals, grads


class FeField:
    """Coefficient vector over an FE space; evaluable anywhere in the domain."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != space.n_dofs:
            raise ValueError(
                f"coefficient length {coeffs.shape[0]} != dof count {space.n_dofs}"
            )
        if not np.isfinite(coeffs).all():
            raise ValueError("non-finite field coefficients")
        self.space = space
        self.coeffs = coeffs

    @property
    def components(self):
        return 1 if self.coeffs.ndim == 1 else self.coeffs.shape[1]

    def __call__(self, points, mode="strict"):
        return self.space.eval_at(self.coeffs, points, mode=mode)[0]

    def eval(self, points, mode="strict"):
        return self.space.eval_at(self.coeffs, points, mode=mode)


def evaluate_field(field, points, mode="strict"):
    """Values and spatial gradients of the FE interpolant at given points."""
    return field.eval(points, mode=mode)


# -- serialization ---------------------------------------------------------


def mesh_to_dict(mesh):
    return {
        "rect": list(mesh.rect),
        "nx": mesh.nx,
        "ny": mesh.ny,
        "quad_order": mesh.quad_order,
        "grading": list(mesh.grading),
    }


def mesh_from_dict(d):
    return Mesh(
        tuple(d["rect"]),
        d["nx"],
        d["ny"],
        quad_order=d.get("quad_order", 6),
        grading=tuple(d.get("grading", (1.0, 1.0))),
    )


def field_to_dict(field):
    d = mesh_to_dict(field.space.mesh)
    d.update(
        {
            "degree": field.space.degree,
            "continuity": field.space.continuity,
            "coeffs": field.coeffs.tolist(),
        }
    )
    return d


def field_from_dict(d, space=None):
    if space is None:
        mesh = mesh_from_dict(d)
        space = FeSpace(mesh, degree=d["degree"], continuity=d["continuity"])
    return FeField(space, np.asarray(d["coeffs"], dtype=float))


def field_to_csv(field, path):
    """Dump (x, y, value) rows at the nodal points for external plotting."""
    coords = field.space.dof_coords
    vals = np.atleast_2d(field.coeffs.T).T
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for (x, y), v in zip(coords, vals):
            row = ",".join("%.17g" % c for c in (x, y, *v))
            fh.write(row + "\n")


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh)
