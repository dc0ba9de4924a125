"""Quadrature rules: symmetric Gauss rules on triangles and 1D Gauss-Legendre.

Triangle rules are stored in barycentric coordinates with weights summing to
one (so they integrate against the element area directly).  Only rules with
strictly positive weights are kept; the degree-7 Dunavant rule carries a
negative weight and is skipped in favour of the degree-8 rule.
"""

import numpy as np

__all__ = [
    "triangle_rule",
    "available_triangle_degrees",
    "gauss_legendre_01",
    "tensor_gauss_rect",
]


def _perm3(a, b, c):
    """All distinct permutations of a barycentric triple."""
    pts = {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}
    return sorted(pts)


def _group(entries):
    pts, wts = [], []
    for (a, b, c), w in entries:
        perms = _perm3(a, b, c)
        pts.extend(perms)
        wts.extend([w] * len(perms))
    return np.asarray(pts, dtype=float), np.asarray(wts, dtype=float)


_THIRD = 1.0 / 3.0

# Dunavant / Strang symmetric rules, barycentric points and weights (sum = 1).
_RULES = {
    1: _group([((_THIRD, _THIRD, _THIRD), 1.0)]),
    2: _group([((2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), 1.0 / 3.0)]),
    3: _group(
        [
            (
                (0.659027622374092, 0.231933368553031, 0.109039009072877),
                1.0 / 6.0,
            )
        ]
    ),
    4: _group(
        [
            (
                (0.816847572980459, 0.091576213509771, 0.091576213509771),
                0.109951743655322,
            ),
            (
                (0.108103018168070, 0.445948490915965, 0.445948490915965),
                0.223381589678011,
            ),
        ]
    ),
    5: _group(
        [
            ((_THIRD, _THIRD, _THIRD), 0.225),
            (
                (0.797426985353087, 0.101286507323456, 0.101286507323456),
                0.125939180544827,
            ),
            (
                (0.059715871789770, 0.470142064105115, 0.470142064105115),
                0.132394152788506,
            ),
        ]
    ),
    6: _group(
        [
            (
                (0.873821971016996, 0.063089014491502, 0.063089014491502),
                0.050844906370207,
            ),
            (
                (0.501426509658179, 0.249286745170910, 0.249286745170910),
                0.116786275726379,
            ),
            (
                (0.636502499121399, 0.310352451033785, 0.053145049844816),
                0.082851075618374,
            ),
        ]
    ),
    8: _group(
        [
            ((_THIRD, _THIRD, _THIRD), 0.144315607677787),
            (
                (0.081414823414554, 0.459292588292723, 0.459292588292723),
                0.095091634413245,
            ),
            (
                (0.658861384496480, 0.170569307751760, 0.170569307751760),
                0.103217370534718,
            ),
            (
                (0.898905543365938, 0.050547228317031, 0.050547228317031),
                0.032458497623198,
            ),
            (
                (0.008394777409958, 0.263112829634638, 0.728492392955404),
                0.027230314174435,
            ),
        ]
    ),
    10: _group(
        [
            ((_THIRD, _THIRD, _THIRD), 0.090817990382754),
            (
                (0.028844733232685, 0.485577633383657, 0.485577633383657),
                0.036725957756467,
            ),
            (
                (0.781036849029926, 0.109481575485037, 0.109481575485037),
                0.045321059435528,
            ),
            (
                (0.141707219414880, 0.307939838764121, 0.550352941820999),
                0.072757916845420,
            ),
            (
                (0.025003534762686, 0.246672560639903, 0.728323904597411),
                0.028327242531057,
            ),
            (
                (0.009540815400299, 0.066803251012200, 0.923655933587500),
                0.009421666963733,
            ),
        ]
    ),
}


def available_triangle_degrees():
    return sorted(_RULES)


def triangle_rule(degree):
    """Smallest positive-weight symmetric rule exact for the given degree.

    Returns (bary, weights): bary has shape (nq, 3), weights sum to 1.
    """
    if degree < 1:
        degree = 1
    for d in available_triangle_degrees():
        if d >= degree:
            bary, w = _RULES[d]
            return bary.copy(), w.copy()
    raise ValueError(
        f"no triangle quadrature rule of degree >= {degree} available "
        f"(max {available_triangle_degrees()[-1]})"
    )


def gauss_legendre_01(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def tensor_gauss_rect(rect, n_per_axis):
    """Tensor-product Gauss rule on an axis-aligned rectangle.

    Returns (points (n, 2), weights (n,)) with weights summing to the area.
    """
    a, b, c, d = rect
    x, wx = gauss_legendre_01(n_per_axis)
    y, wy = gauss_legendre_01(n_per_axis)
    X, Y = np.meshgrid(a + (b - a) * x, c + (d - c) * y, indexing="ij")
    W = np.outer((b - a) * wx, (d - c) * wy)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def composite_gauss_01(n_panels, n_points):
    """Composite Gauss rule on [0, 1]: n_panels uniform panels."""
    x, w = gauss_legendre_01(n_points)
    h = 1.0 / n_panels
    offs = h * np.arange(n_panels)
    pts = (offs[:, None] + h * x[None, :]).ravel()
    wts = np.tile(h * w, n_panels)
    return pts, wts


def composite_gauss_rect(rect, n_panels, n_points=4):
    """Composite tensor Gauss rule on a rectangle.

    Uniform panels per axis keep sample points close to the boundary, which
    matters for integrands that localize there (e.g. Jacobian barriers).
    """
    a, b, c, d = rect
    x, wx = composite_gauss_01(n_panels, n_points)
    X, Y = np.meshgrid(a + (b - a) * x, c + (d - c) * x, indexing="ij")
    W = np.outer((b - a) * wx, (d - c) * wx)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()
