"""Cone fields, expansion constants, transversality, and complexity counts.

Planar cones here are pairs of linear functionals: C = {v: |L1 v| <= a |L2 v|}
with aperture a.  The default (L1, L2) = ((1,-1), (1,2)) gives the family
C_a = {|x - y| <= a |x + 2y|} whose axis is the expanding direction (1,1);
swapping the functionals gives the matching stable-side family around
(1, -1/2).  Expansion constants are evaluated on cone boundary rays (for a
2-D cone the extrema of |Mv|/|v| over the cone sit on its boundary; this is
spot-checked densely at n = 1).  Complexity counts refine the base partition
exactly in rational arithmetic, or by itinerary codes on a grid (lower
bound).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _polygon as pg
from ._rng import spawn_rng
from .errors import ArrangementDegeneracy, ConeNotInvariant


# ---------------------------------------------------------------------------
# cones
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cone2:
    """Planar cone {v: |transverse . v| <= aperture * |axial . v|}.

    The general form is (axis direction, half-aperture): the axis is the
    kernel of the transverse functional and the half-aperture is measured in
    the seminorm pair (|transverse . v|, |axial . v|).
    """

    aperture: float
    transverse: tuple[float, float] = (1.0, -1.0)
    axial: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        if self.aperture <= 0:
            raise ValueError("aperture > 0 required")

    def _l1(self, v):
        return self.transverse[0] * v[..., 0] + self.transverse[1] * v[..., 1]

    def _l2(self, v):
        return self.axial[0] * v[..., 0] + self.axial[1] * v[..., 1]

    def aperture_of(self, v) -> np.ndarray:
        """|L1 v| / |L2 v|; inf on the L2 kernel."""
        v = np.asarray(v, dtype=float)
        num = np.abs(self._l1(v))
        den = np.abs(self._l2(v))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den > 0, num / den, np.inf)
        return out

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.abs(self._l1(v)) <= self.aperture * np.abs(self._l2(v))

    def axis_direction(self) -> np.ndarray:
        d = np.array([-self.transverse[1], self.transverse[0]])
        return d / np.linalg.norm(d)

    def boundary_rays(self) -> np.ndarray:
        """Two unit vectors spanning the cone boundary (one per sign)."""
        rays = []
        t = np.asarray(self.transverse)
        ax = np.asarray(self.axial)
        for s in (1.0, -1.0):
            f = t - s * self.aperture * ax  # kernel of L1 - s a L2
            d = np.array([-f[1], f[0]])
            d /= np.linalg.norm(d)
            rays.append(d)
        return np.stack(rays)

    def sample_directions(self, n: int) -> np.ndarray:
        """n unit vectors filling the cone, boundary rays included."""
        if n < 2:
            raise ValueError("n >= 2 required")
        u = np.linspace(-self.aperture, self.aperture, n)
        t = np.asarray(self.transverse)
        ax = np.asarray(self.axial)
        dirs = []
        for ui in u:
            f = t - ui * ax  # solve L1 v = ui L2 v
            d = np.array([-f[1], f[0]])
            d /= np.linalg.norm(d)
            dirs.append(d)
        return np.stack(dirs)

    def stable_partner(self) -> "Cone2":
        """Cone with the two functionals swapped (same aperture)."""
        return Cone2(self.aperture, transverse=self.axial, axial=self.transverse)


@dataclass(frozen=True)
class ConeField3:
    """{(eta, xi, zeta): (eta, xi) in base, delta |zeta| <= ||(eta, xi)||}."""

    base: Cone2
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta > 0 required")

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        planar = v[..., :2]
        norm = np.linalg.norm(planar, axis=-1)
        return self.base.contains(planar) & (self.delta * np.abs(v[..., 2]) <= norm)


@dataclass(frozen=True)
class HyperbolicityParams:
    lambda_u: float
    lambda_s: float
    Lambda_u: float
    beta: float
    t00: float

    def __post_init__(self):
        if not (self.lambda_u > 1 > self.lambda_s > 0):
            raise ValueError("need lambda_u > 1 > lambda_s > 0")
        if self.Lambda_u < self.lambda_u:
            raise ValueError("need Lambda_u >= lambda_u")
        if not (0 <= self.beta < 1):
            raise ValueError("beta in [0, 1) required")


def default_params(flow, beta: float = 0.1, aperture: float = 0.01, n: int = 1) -> HyperbolicityParams:
    cone = Cone2(aperture)
    lu, ls, Lu = expansion_constants(flow.base, cone, n)
    return HyperbolicityParams(
        lambda_u=lu ** (1.0 / n), lambda_s=ls ** (1.0 / n), Lambda_u=Lu ** (1.0 / n),
        beta=beta, t00=flow.tau_minus / 4.0,
    )


# ---------------------------------------------------------------------------
# cone invariance and expansion
# ---------------------------------------------------------------------------


@dataclass
class ConeInvarianceReport:
    aperture: float
    max_image_aperture: float
    margin: float
    per_piece: list[float]
    n_rays: int

    @property
    def ok(self) -> bool:
        return self.margin > 0


def check_cone_invariance(base_map, cone: Cone2, n_rays: int = 64) -> ConeInvarianceReport:
    """Image apertures of cone directions under every piece matrix.

    margin = a - max image aperture; margin <= 0 signals failure (the map is
    not strictly cone-invariant); no exception is raised here.
    """
    if n_rays < 16:
        raise ValueError("n_rays >= 16 required")
    dirs = cone.sample_directions(n_rays)
    per_piece = []
    for m in base_map.sample_jacobians():
        img = dirs @ np.asarray(m).T
        per_piece.append(float(cone.aperture_of(img).max()))
    worst = max(per_piece)
    return ConeInvarianceReport(
        aperture=cone.aperture,
        max_image_aperture=worst,
        margin=cone.aperture - worst,
        per_piece=per_piece,
        n_rays=n_rays,
    )


def _word_products(mats: list[np.ndarray], n: int, cap: int = 4096, seed: int = 0) -> list[np.ndarray]:
    """Products over length-n words of the matrix alphabet.

    Distinct matrices only; all words when their count fits under cap,
    otherwise a deterministic sample.
    """
    uniq = []
    for m in mats:
        if not any(np.array_equal(m, u) for u in uniq):
            uniq.append(np.asarray(m, dtype=float))
    k = len(uniq)
    total = k ** n
    out = []
    if total <= cap:
        idx = [0] * n
        for w in range(total):
            m = np.eye(2)
            ww = w
            for _ in range(n):
                m = uniq[ww % k] @ m
                ww //= k
            out.append(m)
    else:
        rng = spawn_rng(seed, 3)
        for _ in range(cap):
            m = np.eye(2)
            for j in rng.integers(0, k, size=n):
                m = uniq[j] @ m
            out.append(m)
    return out


def expansion_constants(base_map, cone: Cone2, n: int = 1, dense_check: int = 4096):
    """(lambda_u(n), lambda_s(n), Lambda_u(n)) over length-n words.

    lambda_u / Lambda_u: min / max total expansion |Mv| over unit v in the
    unstable cone; lambda_s: max |Mv| over unit v in the stable partner cone.
    Evaluated on boundary rays, with a dense spot-check at n = 1.

    Raises ConeNotInvariant when the cone loses aperture under some piece.
    """
    inv = check_cone_invariance(base_map, cone, max(16, dense_check // 16))
    if inv.margin < -1e-12:
        raise ConeNotInvariant(
            f"aperture grows from {cone.aperture} to {inv.max_image_aperture}"
        )
    words = _word_products(base_map.piece_matrices() if hasattr(base_map, "piece_matrices")
                           else base_map.sample_jacobians(), n)
    u_rays = cone.boundary_rays()
    s_rays = cone.stable_partner().boundary_rays()
    lam_u, Lam_u, lam_s = math.inf, 0.0, 0.0
    for m in words:
        gu = np.linalg.norm(u_rays @ m.T, axis=1)
        gs = np.linalg.norm(s_rays @ m.T, axis=1)
        lam_u = min(lam_u, float(gu.min()))
        Lam_u = max(Lam_u, float(gu.max()))
        lam_s = max(lam_s, float(gs.max()))
    if n == 1 and dense_check:
        du = cone.sample_directions(dense_check)
        ds = cone.stable_partner().sample_directions(dense_check)
        for m in words:
            gu = np.linalg.norm(du @ m.T, axis=1)
            gs = np.linalg.norm(ds @ m.T, axis=1)
            lam_u = min(lam_u, float(gu.min()))
            Lam_u = max(Lam_u, float(gu.max()))
            lam_s = max(lam_s, float(gs.max()))
    return lam_u, lam_s, Lam_u


def check_bunching(params: HyperbolicityParams) -> tuple[bool, float]:
    """Evaluate lambda_s^(1-beta) * lambda_u^(-1) * Lambda_u^(1+beta) vs 1.

    Returns (satisfied, margin) with margin = 1 - value (positive is good).
    """
    val = (
        params.lambda_s ** (1.0 - params.beta)
        * params.lambda_u ** (-1.0)
        * params.Lambda_u ** (1.0 + params.beta)
    )
    return val < 1.0, 1.0 - val


# ---------------------------------------------------------------------------
# transversality of discontinuity images
# ---------------------------------------------------------------------------


def _proj_angle(v) -> float:
    """Direction angle mod pi."""
    a = math.atan2(v[1], v[0])
    return a % math.pi


def _proj_dist(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


@dataclass
class TransversalityReport:
    min_clearance: float
    per_segment: list[float]
    n_samples: int

    @property
    def ok(self) -> bool:
        return self.min_clearance > 0


def check_transversality(flow, stable_cone: Cone2, samples_per_segment: int = 64) -> TransversalityReport:
    """Angular clearance of discontinuity-image tangents from the stable cone.

    For each map-discontinuity segment, pushes the tangent forward with the
    local Jacobian at sampled points and measures the projective angular
    distance to the stable cone (negative when the tangent falls inside).
    """
    base = flow.base
    segs = base.map_discontinuity_segments()
    b1, b2 = (_proj_angle(r) for r in stable_cone.boundary_rays())
    axis = _proj_angle(stable_cone.axis_direction())
    half = max(_proj_dist(b1, axis), _proj_dist(b2, axis))
    per_segment = []
    for p0, p1, _label in segs:
        tang = (p1[0] - p0[0], p1[1] - p0[1])
        worst = math.inf
        for i in range(samples_per_segment):
            s = (i + 0.5) / samples_per_segment
            x = p0[0] + s * tang[0]
            y = p0[1] + s * tang[1]
            if hasattr(base, "jacobian_at"):
                m = base.jacobian_at(x % 1.0, y % 1.0)
            else:
                m = base.jacobian(base.piece_of(x % 1.0, y % 1.0))
            w = m @ np.asarray(tang, dtype=float)
            clearance = _proj_dist(_proj_angle(w), axis) - half
            worst = min(worst, clearance)
        per_segment.append(worst)
    return TransversalityReport(
        min_clearance=min(per_segment), per_segment=per_segment, n_samples=samples_per_segment
    )


# ---------------------------------------------------------------------------
# complexity counts
# ---------------------------------------------------------------------------


@dataclass
class ComplexityReport:
    n: int
    D_b: int
    D_e: int
    rate_b: float
    rate_e: float
    cells_b: int = 0
    cells_e: int = 0
    method: str = "exact"
    lower_bound: bool = False
    merged_slivers: int = 0

    def to_json_dict(self) -> dict:
        return {
            "n": self.n, "D_b": self.D_b, "D_e": self.D_e,
            "rate_b": self.rate_b, "rate_e": self.rate_e,
            "cells_b": self.cells_b, "cells_e": self.cells_e,
            "method": self.method, "lower_bound": self.lower_bound,
        }


SLIVER_AREA = Fraction(1, 10 ** 14)


def _refine_level(cells: list[pg.Polygon], image_polys, inv_mats, inv_offs) -> tuple[list[pg.Polygon], int]:
    out = []
    slivers = 0
    for q in cells:
        for j in range(len(image_polys)):
            r = pg.clip_convex(q, image_polys[j])
            if len(r) < 3:
                continue
            a = pg.polygon_area(r)
            if a == 0:
                continue
            if a < SLIVER_AREA:
                slivers += 1
                continue
            out.append(pg.affine_image(r, inv_mats[j], inv_offs[j]))
    return out, slivers


def _inverse_piece_data(base_map):
    mats, offs, imgs = [], [], []
    for p, img in zip(base_map.pieces, base_map.image_polygons):
        m = p.matrix
        det = p.det()
        inv = ((m[1][1] / det, -m[0][1] / det), (-m[1][0] / det, m[0][0] / det))
        c = p.offset
        ioff = (-(inv[0][0] * c[0] + inv[0][1] * c[1]), -(inv[1][0] * c[0] + inv[1][1] * c[1]))
        mats.append(inv)
        offs.append(ioff)
        imgs.append(img)
    return imgs, mats, offs


def _max_incidence(cells: list[pg.Polygon]) -> int:
    """Max number of distinct cell closures meeting one torus point.

    Candidates are cell vertices and their integer translates; a float
    bounding-box prescreen keeps the exact containment checks sparse.
    """
    if not cells:
        return 0
    verts: set[tuple[Fraction, Fraction]] = set()
    for c in cells:
        verts.update((v[0], v[1]) for v in c)
    vlist = list(verts)
    vf = np.array([[float(a), float(b)] for a, b in vlist])
    boxes = np.array([
        [min(float(v[0]) for v in c), min(float(v[1]) for v in c),
         max(float(v[0]) for v in c), max(float(v[1]) for v in c)]
        for c in cells
    ])
    # incidence[v] = set of cells containing some translate of v
    incid: list[set[int]] = [set() for _ in vlist]
    translates = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
    for dx, dy in translates:
        pts = vf + np.array([dx, dy])
        inside = (pts[:, 0] >= -1e-9) & (pts[:, 0] <= 1 + 1e-9) & (pts[:, 1] >= -1e-9) & (pts[:, 1] <= 1 + 1e-9)
        cand_idx = np.where(inside)[0]
        if len(cand_idx) == 0:
            continue
        sub = pts[cand_idx]
        for ci, c in enumerate(cells):
            b = boxes[ci]
            near = (
                (sub[:, 0] >= b[0] - 1e-9) & (sub[:, 0] <= b[2] + 1e-9)
                & (sub[:, 1] >= b[1] - 1e-9) & (sub[:, 1] <= b[3] + 1e-9)
            )
            for vi in cand_idx[np.where(near)[0]]:
                if ci in incid[vi]:
                    continue
                p = (vlist[vi][0] + dx, vlist[vi][1] + dy)
                if pg.point_in_closed(c, p):
                    incid[vi].add(ci)
    return max(len(s) for s in incid)


def _complexity_exact(base_map, n_max: int) -> list[ComplexityReport]:
    fwd_imgs, fwd_inv_mats, fwd_inv_offs = _inverse_piece_data(base_map)
    # backward refinement of the inverse map gives the forward-image cells
    bwd_imgs = [p.polygon for p in base_map.pieces]
    bwd_inv_mats = [p.matrix for p in base_map.pieces]
    bwd_inv_offs = [p.offset for p in base_map.pieces]

    cells_b = [p.polygon for p in base_map.pieces]
    cells_e = list(fwd_imgs)
    reports = []
    slivers_total = 0
    for n in range(1, n_max + 1):
        if n > 1:
            cells_b, s1 = _refine_level(cells_b, fwd_imgs, fwd_inv_mats, fwd_inv_offs)
            cells_e, s2 = _refine_level(cells_e, bwd_imgs, bwd_inv_mats, bwd_inv_offs)
            slivers_total += s1 + s2
            if s1 + s2:
                warnings.warn(
                    f"merged {s1 + s2} sliver cells below area 1e-14 at depth {n}",
                    RuntimeWarning,
                )
                if s1 + s2 > max(1, (len(cells_b) + len(cells_e)) // 100):
                    raise ArrangementDegeneracy(
                        f"{s1 + s2} sliver cells at depth {n}; arrangement unreliable"
                    )
        db = _max_incidence(cells_b)
        de = _max_incidence(cells_e)
        reports.append(
            ComplexityReport(
                n=n, D_b=db, D_e=de,
                rate_b=math.log(db) / n, rate_e=math.log(de) / n,
                cells_b=len(cells_b), cells_e=len(cells_e),
                method="exact", merged_slivers=slivers_total,
            )
        )
    return reports


def _complexity_sampling(base_map, n_max: int, grid: int = 2048) -> list[ComplexityReport]:
    xs = (np.arange(grid) + 0.5) / grid
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    x, y = gx.ravel(), gy.ravel()
    nb = len(base_map.pieces)

    def codes(inverse: bool):
        cx, cy = x.copy(), y.copy()
        code = np.zeros(x.shape, dtype=np.int64)
        mult = 1
        seq = []
        for _ in range(n_max):
            pid = base_map.piece_of_arrays(cx, cy)
            code = code + mult * pid
            mult *= nb
            seq.append(code.copy())
            if inverse:
                cx, cy, _ = base_map.apply_inverse_arrays(cx, cy)
            else:
                cx, cy, _ = base_map.apply_arrays(cx, cy)
        return seq

    def max_window_distinct(code):
        c = code.reshape(grid, grid)
        # distinct itinerary codes among the 3x3 torus window of samples
        stacks = [np.roll(np.roll(c, dx, 0), dy, 1) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
        arr = np.stack(stacks)
        arr.sort(axis=0)
        distinct = 1 + (arr[1:] != arr[:-1]).sum(axis=0)
        return int(distinct.max())

    seq_b = codes(inverse=False)
    seq_e = codes(inverse=True)
    reports = []
    for n in range(1, n_max + 1):
        db = max_window_distinct(seq_b[n - 1])
        de = max_window_distinct(seq_e[n - 1])
        reports.append(
            ComplexityReport(
                n=n, D_b=db, D_e=de,
                rate_b=math.log(db) / n, rate_e=math.log(de) / n,
                method="sampling", lower_bound=True,
            )
        )
    return reports


def complexity_counts(flow, n_max: int, method: str = "exact") -> list[ComplexityReport]:
    """Complexity reports for n = 1..n_max.

    exact: rational-arithmetic refinement of the base partition (n_max <= 12);
    sampling: itinerary codes on a 2048^2 grid, a labeled lower bound
    (n_max <= 20).
    """
    base = flow.base if hasattr(flow, "base") else flow
    if method == "exact":
        if n_max > 12:
            raise ValueError("exact method supports n_max <= 12")
        if not hasattr(base, "pieces"):
            raise ValueError("exact method needs a piecewise affine map")
        return _complexity_exact(base, n_max)
    if method == "sampling":
        if n_max > 20:
            raise ValueError("sampling method supports n_max <= 20")
        return _complexity_sampling(base, n_max)
    raise ValueError(f"unknown method {method!r}")
