"""Contact geometry on R^3 with the standard form alpha = dz - y dx.

A chart here is a coordinate change K(x, y, z) = (A(x,y), B(x,y), z + C(x,y))
that pulls the standard contact form back to itself.  Such maps are exactly
those with unit planar Jacobian determinant and

    dC/dx = B * dA/dx - y,      dC/dy = B * dA/dy.

Charts are kept as compositions of three testable elementary moves:
straightening of a stable leaf given as a graph over the y-axis, a
translation-with-shear moving a point to the origin, and a linear
normalization fixing the image of an unstable vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._quadrature import gl_interval
from .errors import DegenerateFrame, NotInKernel

FD_STEP = 1e-6  # central-difference step used by derivative checks


def eval_alpha(point: Sequence[float], vector: Sequence[float]) -> float:
    """alpha(vector) at point: v_z - y * v_x."""
    return float(vector[2]) - float(point[1]) * float(vector[0])


class ContactForm3:
    """The standard contact form; exists as a value for API symmetry."""

    @staticmethod
    def __call__(point, vector) -> float:
        return eval_alpha(point, vector)

    @staticmethod
    def reeb_vector(point) -> tuple[float, float, float]:
        return (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class ContactChart:
    """Planar components (A, B), vertical correction C, analytic gradients.

    grad_* callables return (d/dx, d/dy) pairs.
    """

    a: Callable[[float, float], float]
    b: Callable[[float, float], float]
    c: Callable[[float, float], float]
    grad_a: Callable[[float, float], tuple[float, float]]
    grad_b: Callable[[float, float], tuple[float, float]]
    grad_c: Callable[[float, float], tuple[float, float]]
    label: str = "chart"

    def apply(self, point: Sequence[float]) -> tuple[float, float, float]:
        x, y, z = (float(t) for t in point)
        return (self.a(x, y), self.b(x, y), z + self.c(x, y))

    def planar_jacobian(self, x: float, y: float) -> np.ndarray:
        ax, ay = self.grad_a(x, y)
        bx, by = self.grad_b(x, y)
        return np.array([[ax, ay], [bx, by]])

    def pushforward(self, point: Sequence[float], vector: Sequence[float]) -> tuple[float, float, float]:
        x, y, _ = (float(t) for t in point)
        vx, vy, vz = (float(t) for t in vector)
        ax, ay = self.grad_a(x, y)
        bx, by = self.grad_b(x, y)
        cx, cy = self.grad_c(x, y)
        return (ax * vx + ay * vy, bx * vx + by * vy, cx * vx + cy * vy + vz)

    def pullback_residual(self, point, vector) -> float:
        """|alpha(DK v) at K(point) - alpha(v) at point| (analytic)."""
        return abs(eval_alpha(self.apply(point), self.pushforward(point, vector)) - eval_alpha(point, vector))


def identity_chart() -> ContactChart:
    return ContactChart(
        a=lambda x, y: x,
        b=lambda x, y: y,
        c=lambda x, y: 0.0,
        grad_a=lambda x, y: (1.0, 0.0),
        grad_b=lambda x, y: (0.0, 1.0),
        grad_c=lambda x, y: (0.0, 0.0),
        label="identity",
    )


def linear_contact_chart(m) -> ContactChart:
    """Planar linear map with det 1 plus its forced quadratic z-correction.

    C = (m00*m10/2) x^2 + m01*m10 x y + (m01*m11/2) y^2 satisfies the chart
    PDEs identically when det m = 1.
    """
    m00, m01 = float(m[0][0]), float(m[0][1])
    m10, m11 = float(m[1][0]), float(m[1][1])
    det = m00 * m11 - m01 * m10
    if abs(det - 1.0) > 1e-12:
        raise DegenerateFrame(f"planar block must have det 1, got {det!r}")
    q20, q11, q02 = 0.5 * m00 * m10, m01 * m10, 0.5 * m01 * m11
    return ContactChart(
        a=lambda x, y: m00 * x + m01 * y,
        b=lambda x, y: m10 * x + m11 * y,
        c=lambda x, y: q20 * x * x + q11 * x * y + q02 * y * y,
        grad_a=lambda x, y: (m00, m01),
        grad_b=lambda x, y: (m10, m11),
        grad_c=lambda x, y: (2 * q20 * x + q11 * y, q11 * x + 2 * q02 * y),
        label=f"linear[{m00},{m01};{m10},{m11}]",
    )


def contact_translation(anchor: Sequence[float]) -> ContactChart:
    """Move anchor to the origin: (x,y,z) -> (x-ax, y-ay, z-az-ay*(x-ax))."""
    ax_, ay_, az_ = (float(t) for t in anchor)
    return ContactChart(
        a=lambda x, y: x - ax_,
        b=lambda x, y: y - ay_,
        c=lambda x, y: -az_ - ay_ * (x - ax_),
        grad_a=lambda x, y: (1.0, 0.0),
        grad_b=lambda x, y: (0.0, 1.0),
        grad_c=lambda x, y: (-ay_, 0.0),
        label=f"translate{tuple(round(v, 6) for v in (ax_, ay_, az_))}",
    )


def leaf_straightening(
    f_graph: Callable[[float], float],
    df_graph: Callable[[float], float],
    y_bar: float,
    quad_nodes: int = 48,
) -> ContactChart:
    """Straighten the leaf {(F(y), y, .)} to a vertical line through x = F(y_bar).

    A(x, y) = x - F(y) + F(y_bar), B = y; the correction C depends on y only,
    C(y) = -integral_{y_bar}^{y} t F'(t) dt, so dC/dx = B dA/dx - y = 0 and
    dC/dy = -y F'(y) = B dA/dy hold identically.
    """
    y_bar = float(y_bar)
    f_bar = float(f_graph(y_bar))

    def c_of_y(y: float) -> float:
        if y == y_bar:
            return 0.0
        ts, ws = gl_interval(y_bar, y, quad_nodes)
        return -float(np.dot(ws, ts * np.array([df_graph(t) for t in ts])))

    return ContactChart(
        a=lambda x, y: x - float(f_graph(y)) + f_bar,
        b=lambda x, y: y,
        c=lambda x, y: c_of_y(y),
        grad_a=lambda x, y: (1.0, -float(df_graph(y))),
        grad_b=lambda x, y: (0.0, 1.0),
        grad_c=lambda x, y: (0.0, -y * float(df_graph(y))),
        label=f"straighten(y_bar={y_bar:.6g})",
    )


def compose_charts(outer: ContactChart, inner: ContactChart) -> ContactChart:
    """outer after inner; the composite is again of the (A, B, z+C) shape."""

    def a(x, y):
        return outer.a(inner.a(x, y), inner.b(x, y))

    def b(x, y):
        return outer.b(inner.a(x, y), inner.b(x, y))

    def c(x, y):
        return inner.c(x, y) + outer.c(inner.a(x, y), inner.b(x, y))

    def _chain(grad_outer):
        def g(x, y):
            u, v = inner.a(x, y), inner.b(x, y)
            gu, gv = grad_outer(u, v)
            iax, iay = inner.grad_a(x, y)
            ibx, iby = inner.grad_b(x, y)
            return (gu * iax + gv * ibx, gu * iay + gv * iby)

        return g

    ga, gb, gc_outer = _chain(outer.grad_a), _chain(outer.grad_b), _chain(outer.grad_c)

    def gc(x, y):
        icx, icy = inner.grad_c(x, y)
        ocx, ocy = gc_outer(x, y)
        return (icx + ocx, icy + ocy)

    return ContactChart(a=a, b=b, c=c, grad_a=ga, grad_b=gb, grad_c=gc, label=f"{outer.label}*{inner.label}")


@dataclass
class ChartReport:
    """Max residuals of the three chart equations over the sampled points."""

    max_det_residual: float
    max_cx_residual: float
    max_cy_residual: float
    fd_step: float | None
    n_points: int
    tolerance: float = 1e-10
    flagged: list[str] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(self.max_det_residual, self.max_cx_residual, self.max_cy_residual)

    @property
    def ok(self) -> bool:
        return not self.flagged


def _fd_grad(f: Callable[[float, float], float], x: float, y: float, h: float) -> tuple[float, float]:
    return (
        (f(x + h, y) - f(x - h, y)) / (2 * h),
        (f(x, y + h) - f(x, y - h)) / (2 * h),
    )


def check_contact_chart(
    chart: ContactChart,
    sample_points: Sequence[Sequence[float]],
    fd_step: float | None = None,
    tolerance: float = 1e-10,
) -> ChartReport:
    """Residuals of det = 1, dC/dx = B dA/dx - y, dC/dy = B dA/dy.

    Residuals above tolerance are reported, never raised.  fd_step switches
    the derivative source from analytic gradients to central differences.
    """
    rd = rx = ry = 0.0
    for p in sample_points:
        x, y = float(p[0]), float(p[1])
        if fd_step is None:
            ax, ay = chart.grad_a(x, y)
            bx, by = chart.grad_b(x, y)
            cx, cy = chart.grad_c(x, y)
        else:
            ax, ay = _fd_grad(chart.a, x, y, fd_step)
            bx, by = _fd_grad(chart.b, x, y, fd_step)
            cx, cy = _fd_grad(chart.c, x, y, fd_step)
        bv = chart.b(x, y)
        rd = max(rd, abs(ax * by - ay * bx - 1.0))
        rx = max(rx, abs(cx - (bv * ax - y)))
        ry = max(ry, abs(cy - bv * ay))
    report = ChartReport(
        max_det_residual=rd,
        max_cx_residual=rx,
        max_cy_residual=ry,
        fd_step=fd_step,
        n_points=len(sample_points),
        tolerance=tolerance,
    )
    for name, val in (("det", rd), ("c_x", rx), ("c_y", ry)):
        if val > tolerance:
            report.flagged.append(f"{name} residual {val:.3e} > {tolerance:.1e}")
    return report


def reeb_chart_at(
    point: Sequence[float],
    stable_dir: Sequence[float],
    unstable_vec: Sequence[float],
    kernel_tol: float = 1e-10,
) -> ContactChart:
    """Chart sending point to the origin, the local stable leaf into the
    y-axis, and unstable_vec to (1, 0, 0), while preserving the contact form.

    The stable leaf through the point is the kernel lift of the straight
    planar line in direction stable_dir.  Both vectors must lie in ker alpha
    at the point; their planar projections must be independent.
    """
    x0, y0, z0 = (float(t) for t in point)
    s = tuple(float(t) for t in stable_dir)
    u = tuple(float(t) for t in unstable_vec)
    for name, v in (("stable_dir", s), ("unstable_vec", u)):
        if abs(eval_alpha(point, v)) > kernel_tol * max(1.0, max(abs(c) for c in v)):
            raise NotInKernel(f"{name} has alpha(v) = {eval_alpha(point, v):.3e} at the base point")
    cross = u[0] * s[1] - u[1] * s[0]
    scale = max(abs(s[0]), abs(s[1])) * max(abs(u[0]), abs(u[1]))
    if scale == 0.0 or abs(cross) <= 1e-12 * scale:
        raise DegenerateFrame("planar projections of stable_dir and unstable_vec are parallel")
    if abs(s[1]) <= 1e-12 * abs(s[0]):
        raise DegenerateFrame("stable leaf is not a graph over the y-axis (stable_dir[1] ~ 0)")

    slope = s[0] / s[1]  # dx/dy along the leaf
    k1 = leaf_straightening(
        f_graph=lambda y: x0 + slope * (y - y0),
        df_graph=lambda y: slope,
        y_bar=y0,
    )
    p1 = k1.apply(point)
    k2 = contact_translation(p1)
    k21 = compose_charts(k2, k1)
    v2 = k21.pushforward(point, u)
    if abs(v2[2]) > 1e-9 * max(1.0, abs(v2[0]), abs(v2[1])):
        raise NotInKernel(f"normalized unstable vector left the kernel: z-component {v2[2]:.3e}")
    uu, sc = v2[0], v2[1]
    if abs(uu) < 1e-12:
        raise DegenerateFrame("unstable vector collapses onto the stable axis")
    k3 = linear_contact_chart([[1.0 / uu, 0.0], [-sc, uu]])
    return compose_charts(k3, k21)
