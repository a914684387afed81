"""Observation sets and the geometric hypotheses on them.

A set is stored as a cell mask, optionally together with the exact union
of intervals (1D) or boxes (2D) it was generated from. A cell belongs to
the set iff its centre does. Balls are sup-norm cubes
``B(x, R) = {y : |y - x|_inf <= R}`` and a cell belongs to a ball iff its
centre does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .grid import Domain

__all__ = [
    "ContentEstimate",
    "ObservationSet",
    "ThicknessCertificate",
    "UniformityCheck",
    "ball_mask",
    "block_sup_sum",
    "cantor_intervals",
    "fat_cantor_intervals",
    "good_point_blocks",
    "good_points_subset",
    "hausdorff_content_upper",
    "lattice_centers",
    "refine_by_level",
    "thickness",
    "uniform_distribution_check",
]

_EPS = 1e-12


def cantor_intervals(a: float, b: float, generation: int, ratio: float = 1 / 3) -> np.ndarray:
    """Generation-``g`` intervals of a symmetric Cantor set on ``[a, b]``.

    Each interval is replaced by its two end pieces scaled by ``ratio``.
    """
    if not 0 < ratio < 0.5:
        raise ValueError("ratio must lie in (0, 1/2)")
    iv = np.array([[a, b]], dtype=float)
    for _ in range(generation):
        length = (iv[:, 1] - iv[:, 0]) * ratio
        left = np.stack([iv[:, 0], iv[:, 0] + length], 1)
        right = np.stack([iv[:, 1] - length, iv[:, 1]], 1)
        iv = np.stack([left, right], 1).reshape(-1, 2)
    return iv


def fat_cantor_intervals(a: float, b: float, generation: int, fraction: float = 0.5) -> np.ndarray:
    """Smith-Volterra-Cantor construction on ``[a, b]``.

    At generation ``g`` a middle gap of absolute length
    ``beta * 4**-g * (b - a)`` is removed from each of the ``2**(g-1)``
    intervals, with ``beta = 2 (1 - fraction)`` so that the limit set has
    measure ``fraction * (b - a)``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    L = b - a
    beta = 2.0 * (1.0 - fraction)
    iv = np.array([[a, b]], dtype=float)
    for g in range(1, generation + 1):
        gap = beta * 4.0**-g * L
        mid = 0.5 * (iv[:, 0] + iv[:, 1])
        if np.any(iv[:, 1] - iv[:, 0] <= gap):
            raise ValueError("gap exceeds interval length; fraction too small")
        left = np.stack([iv[:, 0], mid - gap / 2], 1)
        right = np.stack([mid + gap / 2, iv[:, 1]], 1)
        iv = np.stack([left, right], 1).reshape(-1, 2)
    return iv


def _boxes_to_mask(domain: Domain, boxes: np.ndarray) -> np.ndarray:
    """Cells whose centre lies in the closed union of boxes."""
    mask = np.zeros(domain.shape, dtype=bool)
    if boxes.size == 0:
        return mask.ravel()
    if domain.dim == 1:
        x = domain.axis_centers(0)
        L = domain.lengths[0]
        for lo, hi in boxes:
            if domain.periodic:
                # test the centre and its periodic images
                for s in (-L, 0.0, L):
                    mask |= (x + s >= lo - _EPS) & (x + s <= hi + _EPS)
            else:
                mask |= (x >= lo - _EPS) & (x <= hi + _EPS)
        return mask.ravel()
    x, y = domain.axis_centers(0), domain.axis_centers(1)
    for x0, x1, y0, y1 in boxes:
        ix = (x >= x0 - _EPS) & (x <= x1 + _EPS)
        iy = (y >= y0 - _EPS) & (y <= y1 + _EPS)
        mask |= np.outer(ix, iy)
    return mask.ravel()


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Subset of a grid domain.

    Attributes
    ----------
    mask
        Boolean per cell (flat, C order).
    boxes
        Exact representation, shape ``(m, 2)`` in 1D or ``(m, 4)`` as
        ``(x0, x1, y0, y1)`` in 2D; ``None`` when only the mask is known.
    provenance
        Generator tag and parameters, e.g. ``{"kind": "cantor", "generation": 8}``.
    """

    domain: Domain
    mask: np.ndarray
    boxes: np.ndarray | None = None
    provenance: dict = field(default_factory=lambda: {"kind": "explicit"})

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool).reshape(self.domain.size)
        object.__setattr__(self, "mask", m)
        if self.boxes is not None:
            b = np.asarray(self.boxes, dtype=float).reshape(-1, 2 * self.domain.dim)
            object.__setattr__(self, "boxes", b)

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_boxes(cls, domain: Domain, boxes, provenance: dict | None = None) -> "ObservationSet":
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 2 * domain.dim)
        return cls(domain, _boxes_to_mask(domain, boxes), boxes, provenance or {"kind": "explicit"})

    @classmethod
    def from_mask(cls, domain: Domain, mask, provenance: dict | None = None) -> "ObservationSet":
        return cls(domain, mask, None, provenance or {"kind": "explicit"})

    @classmethod
    def whole(cls, domain: Domain) -> "ObservationSet":
        return cls.from_boxes(domain, [domain.bounds], {"kind": "explicit", "name": "whole"})

    @classmethod
    def empty(cls, domain: Domain) -> "ObservationSet":
        return cls(domain, np.zeros(domain.size, bool), np.zeros((0, 2 * domain.dim)), {"kind": "explicit"})

    @classmethod
    def cantor(cls, domain: Domain, generation: int, ratio: float = 1 / 3, span=None, cross=None):
        """Generation-``g`` Cantor set on ``span`` (default: the x-range).

        In 2D the set is crossed with the y-interval ``cross`` (default: the
        full y-range).
        """
        a, b = span if span is not None else domain.bounds[:2]
        iv = cantor_intervals(a, b, generation, ratio)
        prov = {"kind": "cantor", "generation": generation, "ratio": ratio, "span": (a, b)}
        return cls.from_boxes(domain, _cross(domain, iv, cross), prov)

    @classmethod
    def fat_cantor(cls, domain: Domain, generation: int, fraction: float = 0.5, span=None, cross=None):
        a, b = span if span is not None else domain.bounds[:2]
        iv = fat_cantor_intervals(a, b, generation, fraction)
        prov = {"kind": "fat_cantor", "generation": generation, "fraction": fraction, "span": (a, b)}
        return cls.from_boxes(domain, _cross(domain, iv, cross), prov)

    @classmethod
    def cantor_dust(cls, domain: Domain, generation: int, period: float, ratio: float = 1 / 3):
        """A scaled Cantor set in every period cell along x (1D)."""
        a, b = domain.bounds[:2]
        count = int(math.ceil((b - a) / period - 1e-9))
        pieces = [cantor_intervals(a + j * period, min(a + (j + 1) * period, b), generation, ratio) for j in range(count)]
        prov = {"kind": "cantor", "generation": generation, "ratio": ratio, "period": period}
        return cls.from_boxes(domain, _cross(domain, np.concatenate(pieces), None), prov)

    @classmethod
    def periodic(cls, domain: Domain, period: float, duty: float = 0.5, phase: float = 0.0):
        """Union of ``[phase + k P, phase + k P + duty P]`` along x."""
        a, b = domain.bounds[:2]
        k0 = int(math.floor((a - phase) / period)) - 1
        k1 = int(math.ceil((b - phase) / period)) + 1
        starts = phase + period * np.arange(k0, k1 + 1)
        iv = np.stack([starts, starts + duty * period], 1)
        iv = np.clip(iv, a, b)
        iv = iv[iv[:, 1] > iv[:, 0]]
        prov = {"kind": "periodic", "period": period, "duty": duty, "phase": phase}
        return cls.from_boxes(domain, _cross(domain, iv, None), prov)

    @classmethod
    def random(cls, domain: Domain, density: float, seed: int):
        rng = np.random.default_rng(seed)
        mask = rng.random(domain.size) < density
        return cls(domain, mask, None, {"kind": "random", "seed": seed, "density": density})

    @classmethod
    def disk(cls, domain: Domain, center, radius: float):
        c = domain.centers()
        mask = np.sum((c - np.asarray(center, dtype=float)) ** 2, axis=1) <= radius**2 * (1 + _EPS)
        return cls(domain, mask, None, {"kind": "explicit", "disk": (tuple(center), radius)})

    # -- set algebra ------------------------------------------------------

    @property
    def cells(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def measure(self) -> float:
        return self.count * self.domain.cell_volume

    def exact_measure(self) -> float | None:
        """Lebesgue measure of the exact representation (boxes assumed disjoint)."""
        if self.boxes is None:
            return None
        ext = self.boxes[:, 1::2] - self.boxes[:, 0::2]
        return float(np.sum(np.prod(ext, axis=1)))

    def is_empty(self) -> bool:
        return not self.mask.any()

    def union(self, other: "ObservationSet") -> "ObservationSet":
        self._same_grid(other)
        boxes = None
        if self.boxes is not None and other.boxes is not None:
            boxes = np.concatenate([self.boxes, other.boxes])
        return ObservationSet(self.domain, self.mask | other.mask, boxes)

    def intersect(self, other: "ObservationSet") -> "ObservationSet":
        self._same_grid(other)
        return ObservationSet(self.domain, self.mask & other.mask)

    def restrict(self, cell_mask: np.ndarray) -> "ObservationSet":
        return ObservationSet(self.domain, self.mask & np.asarray(cell_mask, bool), None, dict(self.provenance))

    def eroded(self, rho: float) -> "ObservationSet":
        """Cells at distance ``>= rho`` from the boundary."""
        keep = self.domain.distance_to_boundary() >= rho - _EPS
        return ObservationSet(self.domain, self.mask & keep, None, dict(self.provenance))

    def is_subset(self, other: "ObservationSet") -> bool:
        return bool(np.all(other.mask[self.mask]))

    def _same_grid(self, other):
        if other.domain != self.domain:
            raise ValueError("sets live on different grids")

    def to_csv(self, path) -> None:
        c = self.domain.centers()
        with open(path, "w") as fh:
            fh.write(",".join(["x", "y"][: self.domain.dim] + ["in_set"]) + "\n")
            for row, m in zip(c, self.mask):
                fh.write(",".join(f"{v:.12g}" for v in row) + f",{int(m)}\n")


def _cross(domain: Domain, iv: np.ndarray, cross) -> np.ndarray:
    if domain.dim == 1:
        return iv
    c, d = cross if cross is not None else domain.bounds[2:]
    return np.concatenate([iv, np.tile([c, d], (iv.shape[0], 1))], axis=1)


# -- balls and lattices ------------------------------------------------------


def lattice_centers(domain: Domain, spacing: float) -> np.ndarray:
    """Ball centres covering the domain at spacing ``<= spacing``.

    Bounded domains use ``a + spacing * j`` up to the upper bound
    (inclusive); the torus uses ``ceil(L / spacing)`` equispaced points.
    Returns shape ``(m, dim)``.
    """
    axes = []
    for k in range(domain.dim):
        a, b = domain.bounds[2 * k], domain.bounds[2 * k + 1]
        if domain.periodic:
            count = int(math.ceil((b - a) / spacing - 1e-9))
            axes.append(a + (b - a) * np.arange(count) / count)
        else:
            count = int(math.floor((b - a) / spacing + 1e-9))
            pts = a + spacing * np.arange(count + 1)
            if pts[-1] < b - 1e-9 * (b - a):
                pts = np.append(pts, b)
            axes.append(pts)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def ball_mask(domain: Domain, center, R: float) -> np.ndarray:
    """Cells whose centre lies in the closed sup-norm ball ``B(center, R)``."""
    c = domain.centers()
    diff = np.abs(c - np.asarray(center, dtype=float)[None, :])
    if domain.periodic:
        L = domain.lengths[0]
        diff = np.minimum(diff, L - diff)
    return np.all(diff <= R * (1 + 1e-12) + _EPS, axis=1)


@dataclass(frozen=True)
class ThicknessCertificate:
    R: float
    gamma: float
    worst_center: tuple
    centers: str = "lattice"


def thickness(oset: ObservationSet, R: float, centers: str = "lattice") -> ThicknessCertificate:
    """Worst density ``|omega ∩ B(x,R) ∩ Omega| / |B(x,R) ∩ Omega|``.

    ``centers="lattice"`` samples lattice points at spacing ``R``;
    ``centers="cells"`` samples every cell centre (a stricter check).
    """
    dom = oset.domain
    if R < 2 * max(dom.h) * (1 - 1e-12):
        raise ValueError(f"R={R:g} is below two cell widths; thickness is unresolved")
    if centers == "lattice":
        pts = lattice_centers(dom, R)
        ratios = np.empty(len(pts))
        for i, p in enumerate(pts):
            inside = ball_mask(dom, p, R)
            ratios[i] = oset.mask[inside].sum() / inside.sum()
        k = int(np.argmin(ratios))
        return ThicknessCertificate(R, float(ratios[k]), tuple(map(float, pts[k])), centers)
    if centers != "cells":
        raise ValueError("centers must be 'lattice' or 'cells'")
    mode = "wrap" if dom.periodic else "constant"
    num = oset.mask.reshape(dom.shape).astype(float)
    den = np.ones(dom.shape)
    for ax in range(dom.dim):
        w = int(math.floor(R / dom.h[ax] + 1e-9))
        kern = np.ones(2 * w + 1)
        num = correlate1d(num, kern, axis=ax, mode=mode, cval=0.0)
        den = correlate1d(den, kern, axis=ax, mode=mode, cval=0.0)
    ratio = (num / den).ravel()
    k = int(np.argmin(ratio))
    return ThicknessCertificate(R, float(ratio[k]), tuple(map(float, dom.centers()[k])), centers)


# -- Hausdorff content -------------------------------------------------------


@dataclass(frozen=True)
class ContentEstimate:
    """Hausdorff content bounds at order ``s`` (radius convention ``sum r_j^s``).

    ``upper`` is always an upper bound from an explicit cover; ``lower`` is
    an analytic lower bound, present only when the set's construction
    provides one.
    """

    s: float
    upper: float
    lower: float | None = None
    cover: str = ""
    label: str = "upper bound"


def _dyadic_count(oset: ObservationSet, g: int, boxes: np.ndarray | None) -> int:
    dom = oset.domain
    side = 2.0**-g
    counts = [int(math.ceil(dom.lengths[k] / side - 1e-9)) for k in range(dom.dim)]
    hit = np.zeros(counts, dtype=bool)
    if boxes is None:
        # masked cells as half-open cells
        c = dom.centers()[oset.mask]
        lo = c - 0.5 * np.asarray(dom.h)
        hi = c + 0.5 * np.asarray(dom.h)
        boxes = np.empty((c.shape[0], 2 * dom.dim))
        boxes[:, 0::2], boxes[:, 1::2] = lo, hi
        half_open = True
    else:
        half_open = False
    if boxes.shape[0] == 0:
        return 0
    ranges = []
    for k in range(dom.dim):
        a = dom.bounds[2 * k]
        lo = (boxes[:, 2 * k] - a) / side
        hi = (boxes[:, 2 * k + 1] - a) / side
        i0 = np.floor(lo + 1e-12).astype(int)
        if half_open:
            i1 = np.ceil(hi - 1e-12).astype(int) - 1
        else:
            i1 = np.floor(hi).astype(int)
        i0 = np.clip(i0, 0, counts[k] - 1)
        i1 = np.clip(np.maximum(i1, i0), 0, counts[k] - 1)
        ranges.append((i0, i1))
    if dom.dim == 1:
        diff = np.zeros(counts[0] + 1, int)
        np.add.at(diff, ranges[0][0], 1)
        np.add.at(diff, ranges[0][1] + 1, -1)
        hit = np.cumsum(diff)[:-1] > 0
    else:
        diff = np.zeros((counts[0] + 1, counts[1] + 1), int)
        (x0, x1), (y0, y1) = ranges
        np.add.at(diff, (x0, y0), 1)
        np.add.at(diff, (x1 + 1, y0), -1)
        np.add.at(diff, (x0, y1 + 1), -1)
        np.add.at(diff, (x1 + 1, y1 + 1), 1)
        hit = np.cumsum(np.cumsum(diff, 0), 1)[:-1, :-1] > 0
    return int(hit.sum())


_UNIT_BALL = {1: 2.0, 2: math.pi}


def hausdorff_content_upper(oset: ObservationSet, s: float) -> ContentEstimate:
    """Upper bound on ``C_H^s`` from dyadic and construction-specific covers.

    Only covers with radii ``<= 1/2`` are used, which keeps the bound
    nonincreasing in ``s`` whenever it is ``<= 1``.
    """
    dom = oset.domain
    d = dom.dim
    if not 0 < s <= d + 1e-12:
        raise ValueError(f"order s={s:g} must lie in (0, {d}]")
    if oset.is_empty() and (oset.boxes is None or oset.boxes.shape[0] == 0):
        return ContentEstimate(s, 0.0, 0.0, "empty")
    boxes = oset.boxes
    best, how = math.inf, ""
    g_min = int(math.ceil(math.log2(math.sqrt(d)) - 1e-12))
    g_max = int(math.floor(math.log2(1.0 / min(dom.h)) + 1e-12))
    for g in range(g_min, max(g_min, g_max) + 1):
        n = _dyadic_count(oset, g, boxes)
        val = n * (2.0**-g * math.sqrt(d) / 2) ** s
        if val < best:
            best, how = val, f"dyadic generation {g}"
    prov = oset.provenance
    if prov.get("kind") == "cantor" and "span" in prov:
        a, b = prov["span"]
        L, r = b - a, prov["ratio"]
        for j in range(prov["generation"] + 1):
            rad = L * r**j / 2
            if rad <= 0.5:
                extent = 1.0
                if d == 2:
                    extent = (dom.bounds[3] - dom.bounds[2]) if boxes is None else boxes[0, 3] - boxes[0, 2]
                    # each interval crossed with the segment, covered by cubes of side L r^j
                    extent = math.ceil(extent / (2 * rad) - 1e-9)
                    rad = rad * math.sqrt(2)
                    if rad > 0.5:
                        continue
                val = extent * 2**j * rad**s
                if val < best:
                    best, how = val, f"cantor generation {j}"
    if boxes is not None and boxes.shape[0] > 0:
        ext = boxes[:, 1::2] - boxes[:, 0::2]
        radii = 0.5 * np.sqrt(np.sum(ext**2, axis=1))
        if radii.max() <= 0.5:
            val = float(np.sum(radii**s))
            if val < best:
                best, how = val, "one ball per box"
        lo, hi = boxes[:, 0::2].min(axis=0), boxes[:, 1::2].max(axis=0)
        rad = 0.5 * float(np.sqrt(np.sum((hi - lo) ** 2)))
        if rad <= 0.5 and rad**s < best:
            best, how = rad**s, "bounding ball"
    lower = None
    if abs(s - d) < 1e-12:
        meas = oset.exact_measure() if boxes is not None else oset.measure()
        lower = meas / _UNIT_BALL[d]
    elif prov.get("kind") == "cantor" and "span" in prov and d == 1 and prov["ratio"] <= 1 / 3 + 1e-12:
        a, b = prov["span"]
        dim = math.log(2) / math.log(1 / prov["ratio"])
        if abs(s - dim) < 1e-9:
            lower = (b - a) ** s * 2.0**-s / 2
    return ContentEstimate(s, float(best), lower, how)


@dataclass(frozen=True)
class UniformityCheck:
    """Minimum per-ball content bound; ``label`` says it is an upper-bound proxy."""

    m: float
    R: float
    s: float
    worst_center: tuple
    label: str = "upper-bound proxy"


def _clip_boxes(boxes: np.ndarray, center, R: float, domain: Domain) -> np.ndarray:
    out = []
    shifts = [0.0]
    if domain.periodic:
        L = domain.lengths[0]
        shifts = [-L, 0.0, L]
    for s in shifts:
        b = boxes.copy()
        b[:, 0:2] += s
        lo = np.maximum(b[:, 0::2], np.asarray(center) - R)
        hi = np.minimum(b[:, 1::2], np.asarray(center) + R)
        keep = np.all(hi >= lo, axis=1)
        c = np.empty((int(keep.sum()), b.shape[1]))
        c[:, 0::2], c[:, 1::2] = lo[keep], hi[keep]
        if domain.periodic:
            c[:, 0:2] -= s
        out.append(c)
    return np.concatenate(out)


def uniform_distribution_check(oset: ObservationSet, R: float, s: float) -> UniformityCheck:
    """``min_k`` of the content upper bound of ``omega ∩ B(k, R)`` over lattice balls."""
    dom = oset.domain
    if R < 2 * max(dom.h) * (1 - 1e-12):
        raise ValueError(f"R={R:g} is below two cell widths")
    best, where = math.inf, None
    for p in lattice_centers(dom, R):
        inside = ball_mask(dom, p, R)
        boxes = None
        if oset.boxes is not None:
            boxes = _clip_boxes(oset.boxes, p, R, dom)
        prov = {"kind": "explicit"}
        piece = ObservationSet(dom, oset.mask & inside, boxes, prov)
        val = hausdorff_content_upper(piece, s).upper
        if val < best:
            best, where = val, tuple(map(float, p))
    return UniformityCheck(float(best), R, s, where)


# -- level sets and good points ----------------------------------------------


def refine_by_level(u: np.ndarray, oset: ObservationSet, threshold: float) -> ObservationSet:
    """Cells of the set where ``|u| <= threshold``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (oset.domain.size,):
        raise ValueError("field does not live on the set's grid")
    return ObservationSet(oset.domain, oset.mask & (np.abs(u) <= threshold), None, {"kind": "level"})


@dataclass(frozen=True, eq=False)
class GoodPointBlock:
    center: tuple
    block: np.ndarray  # cell indices of omega ∩ B(k, R)
    kept: np.ndarray  # cell indices of the good-point subset


def good_point_blocks(g: np.ndarray, oset: ObservationSet, R: float) -> list:
    """Per lattice ball, the cells where ``|g|^2 <= 2 * mean(|g|^2)`` over ``omega ∩ B``.

    A block whose integral vanishes is kept whole.
    """
    g2 = np.abs(np.asarray(g, dtype=float)) ** 2
    out = []
    for p in lattice_centers(oset.domain, R):
        block = np.flatnonzero(oset.mask & ball_mask(oset.domain, p, R))
        if block.size == 0:
            out.append(GoodPointBlock(tuple(map(float, p)), block, block))
            continue
        mean = g2[block].mean()
        kept = block if mean == 0 else block[g2[block] <= 2.0 * mean]
        out.append(GoodPointBlock(tuple(map(float, p)), block, kept))
    return out


def good_points_subset(g: np.ndarray, oset: ObservationSet, R: float) -> ObservationSet:
    """Union over lattice balls of the good-point subsets."""
    mask = np.zeros(oset.domain.size, dtype=bool)
    for blk in good_point_blocks(g, oset, R):
        mask[blk.kept] = True
    return ObservationSet(oset.domain, mask, None, {"kind": "good_points", "R": R})


def block_sup_sum(u: np.ndarray, oset: ObservationSet, R: float) -> float:
    """``sum_k sup_{omega ∩ B(k,R)} |u|`` over the lattice balls."""
    au = np.abs(np.asarray(u, dtype=float))
    total = 0.0
    for p in lattice_centers(oset.domain, R):
        sel = oset.mask & ball_mask(oset.domain, p, R)
        if sel.any():
            total += float(au[sel].max())
    return total
