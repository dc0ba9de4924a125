"""Per-snapshot registration solves and the warm-started training loop.

Each solve minimizes proximity(a) + xi * |Psi_a|_{H2}^2 subject to the
Jacobian barrier inequality (and optional box constraints around the warm
start).  The solver is an augmented-Lagrangian outer loop over the single
barrier constraint with box-projected L-BFGS inner iterations; the barrier
enters through its logarithm (a monotone transform of the same constraint),
which is overflow-free however badly a line-search iterate folds the map.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from regrom.mapping import BarrierConfig, barrier, verify_bijectivity

__all__ = [
    "InfeasibleStart",
    "FieldProximity",
    "PointProximity",
    "proximity_field",
    "proximity_points",
    "RegistrationProblem",
    "TrainingSet",
    "solve_registration",
    "train_all",
    "nearest_neighbor_order",
]


class InfeasibleStart(Exception):
    """The initial coefficient vector violates the barrier constraint."""


# -- proximity functionals ----------------------------------------------------


class FieldProximity:
    """L2 field mismatch: integral of |u(Psi_a(X)) - ubar(X)|^2 over the mesh.

    ``u`` is the snapshot field (evaluated one-sidedly at mapped points,
    which are projected onto the closed domain first: transient optimizer
    iterates may push quadrature points slightly outside), ``ubar`` the
    reference field sampled once at the quadrature points of ``mesh``.
    """

    def __init__(self, u, ubar, mesh, basis):
        self.u = u
        self.mesh = mesh
        self.basis = basis
        self.points = mesh.quad_points
        self.weights = mesh.quad_weights
        if hasattr(ubar, "eval"):
            self.ubar_vals = ubar(self.points)
        else:
            self.ubar_vals = np.asarray(ubar, dtype=float)
        tb = basis.tables(self.points)
        self.V1 = tb["V1"]
        self.V2 = tb["V2"]

    def __call__(self, a):
        a1, a2 = self.basis.split(a)
        x = self.points.copy()
        x[:, 0] += self.V1 @ a1
        x[:, 1] += self.V2 @ a2
        vals, grads = self.u.space.eval_at(self.u.coeffs, x, mode="clamp")
        r = vals - self.ubar_vals
        value = float(self.weights @ r**2)
        wr = 2.0 * self.weights * r
        g = np.concatenate([self.V1.T @ (wr * grads[:, 0]), self.V2.T @ (wr * grads[:, 1])])
        return value, g


class PointProximity:
    """Mean squared control-point mismatch: (1/N) sum |Psi_a(X_i) - x_i|^2."""

    def __init__(self, ref_points, target_points, basis):
        ref_points = np.asarray(ref_points, dtype=float)
        target_points = np.asarray(target_points, dtype=float)
        if ref_points.shape != target_points.shape:
            raise ValueError("reference/target point lists differ in length")
        self.ref = ref_points
        self.target = target_points
        self.basis = basis
        tb = basis.tables(ref_points)
        self.V1 = tb["V1"]
        self.V2 = tb["V2"]

    def __call__(self, a):
        a1, a2 = self.basis.split(a)
        r1 = self.ref[:, 0] + self.V1 @ a1 - self.target[:, 0]
        r2 = self.ref[:, 1] + self.V2 @ a2 - self.target[:, 1]
        n = len(self.ref)
        value = float(r1 @ r1 + r2 @ r2) / n
        g = np.concatenate([self.V1.T @ r1, self.V2.T @ r2]) * (2.0 / n)
        return value, g


def proximity_field(basis, a, u, ubar, mesh):
    """One-shot evaluation of the field proximity measure and its gradient."""
    return FieldProximity(u, ubar, mesh, basis)(np.asarray(a, dtype=float))


def proximity_points(basis, a, ref_points, target_points):
    """One-shot evaluation of the point proximity measure and its gradient."""
    return PointProximity(ref_points, target_points, basis)(np.asarray(a, dtype=float))


# -- constrained solve ---------------------------------------------------------


@dataclass
class RegistrationProblem:
    proximity: object  # callable a -> (value, gradient)
    basis: object
    xi: float = 0.0
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    box: tuple | None = None  # (lower, upper) arrays in coefficient space
    barrier_quad: tuple | None = None  # (points, weights); None = composite rule
    gtol: float = 1e-6
    max_inner: int = 2000
    max_outer: int = 12


class _LogBarrier:
    """log(barrier integral) with precomputed basis tables."""

    def __init__(self, basis, config, quad=None):
        from regrom.mapping import _barrier_quad

        self.basis = basis
        self.config = config
        pts, w = _barrier_quad(basis, quad)
        self.w2 = np.concatenate([w, w])
        self.tb = basis.tables(pts)

    def __call__(self, a):
        c = self.config
        F11, F12, F21, F22, J = self.basis.deformation_gradient(self.tb, a)
        s = np.concatenate([(c.epsilon - J) / c.C_exp, (J - 1.0 / c.epsilon) / c.C_exp])
        val = float(logsumexp(s, b=self.w2))
        p = self.w2 * np.exp(s - val)
        n = len(J)
        dJ = self.basis.jacobian_derivative(self.tb, F11, F12, F21, F22)
        grad = dJ.T @ ((p[n:] - p[:n]) / c.C_exp)
        return val, grad


def solve_registration(problem, a0=None):
    """Local solve of the constrained registration problem.

    Returns (a_hf, diagnostics).  The returned point is the best admissible
    iterate encountered, so its objective never exceeds the starting one.
    """
    basis = problem.basis
    M = basis.M_hf
    a0 = np.zeros(M) if a0 is None else np.asarray(a0, dtype=float).copy()
    A_reg = basis.gram()
    log_delta = float(np.log(problem.barrier.delta))
    lb = _LogBarrier(basis, problem.barrier, problem.barrier_quad)

    h0, _ = lb(a0)
    if h0 > log_delta + 1e-9:
        raise InfeasibleStart(
            f"initial barrier value exp({h0:.3e}) exceeds delta={problem.barrier.delta:.3e}"
        )

    def objective(a):
        pv, pg = problem.proximity(a)
        reg = A_reg @ a
        return pv + problem.xi * float(a @ reg), pg + 2.0 * problem.xi * reg

    bounds = None
    if problem.box is not None:
        lo, hi = problem.box
        a0 = np.clip(a0, lo, hi)
        bounds = list(zip(lo, hi))

    best = {"a": a0.copy(), "f": objective(a0)[0]}
    state = {"feval": 0}

    lam = 0.0
    rho = 10.0
    a = a0.copy()
    inner_total = 0
    status = "converged"
    f_outer_prev = None

    for outer in range(problem.max_outer):

        def al(avec):
            state["feval"] += 1
            fv, fg = objective(avec)
            hv, hg = lb(avec)
            viol = hv - log_delta
            if viol <= 1e-12 and fv < best["f"]:
                best["a"] = avec.copy()
                best["f"] = fv
            t = lam + rho * viol
            if t > 0.0:
                fv = fv + (t * t - lam * lam) / (2.0 * rho)
                fg = fg + t * hg
            return fv, fg

        # first round runs on a short budget: with lambda = 0 the iterates
        # tend to bounce on the barrier wall until the multiplier estimate
        # below unsticks them
        budget = problem.max_inner - inner_total
        if outer == 0:
            budget = min(budget, max(200, problem.max_inner // 5))
        if budget <= 0:
            status = "max_inner"
            break
        res = minimize(
            al,
            a,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={
                "maxiter": budget,
                "gtol": problem.gtol,
                "ftol": 1e-14,
                "maxcor": 25,
                "maxls": 60,
            },
        )
        a = res.x
        inner_total += res.nit
        fv, fg = objective(a)
        hv, hg = lb(a)
        viol = hv - log_delta

        # multiplier update; when the iterate presses against the barrier
        # wall a least-squares estimate unsticks lambda from zero
        lam_next = max(0.0, lam + rho * viol)
        if viol > -20.0:
            hg2 = float(hg @ hg)
            if hg2 > 0.0:
                lam_next = max(lam_next, -float(fg @ hg) / hg2)
        converged_inner = res.status == 0
        stalled = (
            f_outer_prev is not None
            and abs(f_outer_prev - best["f"]) <= 1e-10 * max(abs(best["f"]), 1e-30)
        )
        if viol <= 1e-10 and (converged_inner or stalled) and outer > 0:
            break
        if viol <= 1e-10 and lam_next <= 0.0 and converged_inner:
            break  # constraint inactive at an interior optimum
        f_outer_prev = best["f"]
        if viol > 0.0 and lam > 0.0 and lam_next >= lam:
            rho *= 5.0
        lam = lam_next
    else:
        status = "max_outer"
    if inner_total >= problem.max_inner:
        status = "max_inner"

    a_best = best["a"]
    pv, _ = problem.proximity(a_best)
    h2_sq = float(a_best @ (A_reg @ a_best))
    bres = barrier(
        basis, a_best, problem.barrier, quad=problem.barrier_quad, with_grad=False
    )
    min_j, boundary_ok = verify_bijectivity(basis, a_best, grid_density=50)
    diagnostics = {
        "status": status,
        "outer_iterations": outer + 1,
        "inner_iterations": int(inner_total),
        "n_feval": state["feval"],
        "objective": best["f"],
        "proximity": pv,
        "h2_seminorm_sq": h2_sq,
        "penalty": problem.xi * h2_sq,
        "barrier": bres.value,
        "barrier_saturated": bres.saturated,
        "min_J": min_j,
        "boundary_ok": boundary_ok,
    }
    return a_best, diagnostics


# -- training loop -------------------------------------------------------------


@dataclass
class TrainingSet:
    parameters: np.ndarray  # (n_train, P)
    reference_parameter: np.ndarray  # (P,)
    proximity_factory: object  # callable k -> proximity functional
    param_scale: np.ndarray | None = None  # optional per-axis normalization


def _scaled(tset):
    mu = np.atleast_2d(np.asarray(tset.parameters, dtype=float))
    if mu.shape[0] == 1 and np.ndim(tset.parameters) == 1:
        mu = np.asarray(tset.parameters, dtype=float).reshape(-1, 1)
    mubar = np.atleast_1d(np.asarray(tset.reference_parameter, dtype=float))
    if tset.param_scale is not None:
        s = np.asarray(tset.param_scale, dtype=float)
        return mu / s, mubar / s
    return mu, mubar


def nearest_neighbor_order(parameters, reference_parameter, param_scale=None):
    """Snapshot visiting order: start nearest to the reference, then chain
    to the nearest unvisited parameter; ties break on the original index."""
    mu = np.atleast_2d(np.asarray(parameters, dtype=float))
    if mu.shape[0] == 1 and np.ndim(parameters) > 0 and np.shape(parameters)[0] > 1:
        mu = np.asarray(parameters, dtype=float).reshape(-1, 1)
    ref = np.atleast_1d(np.asarray(reference_parameter, dtype=float))
    if param_scale is not None:
        s = np.asarray(param_scale, dtype=float)
        mu = mu / s
        ref = ref / s
    n = len(mu)
    remaining = list(range(n))
    d0 = np.linalg.norm(mu - ref[None, :], axis=1)
    cur = min(remaining, key=lambda i: (d0[i], i))
    order = [cur]
    remaining.remove(cur)
    while remaining:
        d = np.linalg.norm(mu[remaining] - mu[cur][None, :], axis=1)
        j = min(range(len(remaining)), key=lambda t: (d[t], remaining[t]))
        cur = remaining.pop(j)
        order.append(cur)
    return order


def train_all(
    tset,
    basis,
    xi,
    barrier_cfg,
    C_inf=10.0,
    barrier_quad=None,
    gtol=1e-6,
    max_inner=2000,
    verbose=False,
):
    """Registration over a training set with reordering and warm starts.

    Parameters are visited in the nearest-neighbor chain order; each solve
    warm-starts from the nearest already-solved neighbor and carries box
    constraints |a_m - a_m^ne| <= C_inf * |mu - mu_ne|_2 (skipped when
    C_inf is None or for the first solve).  Results come back in the
    original parameter order.
    """
    mu, _ = _scaled(tset)
    n = len(mu)
    order = nearest_neighbor_order(
        tset.parameters, tset.reference_parameter, tset.param_scale
    )
    solved = {}
    diags = {}
    for step, k in enumerate(order):
        prox = tset.proximity_factory(k)
        if step == 0:
            a0 = np.zeros(basis.M_hf)
            box = None
        else:
            done = list(solved)
            d = np.linalg.norm(mu[done] - mu[k][None, :], axis=1)
            ne = min(range(len(done)), key=lambda t: (d[t], done[t]))
            a_ne = solved[done[ne]]
            r = C_inf * d[ne] if C_inf is not None else None
            a0 = a_ne.copy()
            box = (a_ne - r, a_ne + r) if r is not None else None
        problem = RegistrationProblem(
            proximity=prox,
            basis=basis,
            xi=xi,
            barrier=barrier_cfg,
            box=box,
            barrier_quad=barrier_quad,
            gtol=gtol,
            max_inner=max_inner,
        )
        try:
            a_hf, dg = solve_registration(problem, a0)
        except InfeasibleStart as exc:
            raise InfeasibleStart(
                f"infeasible warm start at parameter index {k} "
                f"(mu={np.asarray(tset.parameters)[k]}): {exc}"
            ) from exc
        solved[k] = a_hf
        dg["visit_step"] = step
        diags[k] = dg
        if verbose:
            print(
                f"[train {step + 1}/{n}] k={k} proximity={dg['proximity']:.3e} "
                f"minJ={dg['min_J']:.3f} status={dg['status']}"
            )
    coeffs = np.vstack([solved[k] for k in range(n)])
    return coeffs, [diags[k] for k in range(n)], order
