"""Frontal view synthesis: depth rasterization, inverse warping and symmetry fill.

Frontal-frame conventions used throughout:

* a :class:`GridSpec` maps pixel ``(col, row)`` to the frontal-frame point
  ``origin + step * (col + 0.5, row + 0.5)`` (pixel centres);
* smaller depth is nearer the camera;
* warping samples the input image at the integer part (floor) of the
  projected position, so pixel ``i`` covers ``[i, i + 1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .deform_fit import FitConfig, FitResult, fit
from .errors import DegenerateInputError, ModelError
from .geometry import (
    SimilarityTransform,
    apply_transform,
    as_points,
    compose,
    inverse_pose,
    yaw_degrees,
)
from .image import Image
from .robust_align import AlignConfig, align
from .shape_model import ShapeModel

log = logging.getLogger(__name__)

DET_TOL = 1e-12
INSIDE_TOL = 1e-12


@dataclass(frozen=True)
class Barycentric:
    a1: float
    a2: float
    a3: float

    @property
    def inside(self) -> bool:
        w = (self.a1, self.a2, self.a3)
        return all(-1e-9 <= v <= 1 + 1e-9 for v in w) and abs(sum(w) - 1.0) <= 1e-9

    def __iter__(self):
        return iter((self.a1, self.a2, self.a3))


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    width: int
    height: int
    step: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have positive width and height")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def centres(self, cols, rows):
        cols = np.asarray(cols, dtype=float)
        rows = np.asarray(rows, dtype=float)
        return self.origin[0] + self.step * (cols + 0.5), self.origin[1] + self.step * (rows + 0.5)


@dataclass(frozen=True)
class DepthMap:
    grid: GridSpec
    depth: np.ndarray  # NaN where unoccupied
    occupancy: np.ndarray

    @property
    def origin(self):
        return self.grid.origin


def frontalize_landmarks(X, T: SimilarityTransform) -> np.ndarray:
    """Map landmarks into the frontal frame with the estimated pose."""
    return apply_transform(T, X)


def barycentric_coords(p, tri) -> Barycentric:
    """Barycentric weights of the 2D point ``p`` in triangle ``tri`` (3 x 2)."""
    p = np.asarray(p, dtype=float).reshape(2)
    tri = np.asarray(tri, dtype=float).reshape(3, 2)
    a, b, c = tri
    det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    if abs(det) <= DET_TOL:
        raise DegenerateInputError("triangle is degenerate")
    l2 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det
    l3 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det
    return Barycentric(1.0 - l2 - l3, l2, l3)


def rasterize(verts, triangles, grid: GridSpec, attributes=None):
    """Z-buffered rasterization of a triangle mesh onto ``grid``.

    Vertices are ``(N, 3)``: frontal-frame ``x, y`` and depth ``z``.  Every
    pixel centre inside a projected triangle receives the barycentric
    interpolation of the vertex depths; the smallest depth wins, and the first
    triangle wins exact ties.  ``attributes`` (``(N, C)``) are interpolated
    with the same weights.  Returns ``(depth, occupancy, attrs)`` where
    ``attrs`` is ``None`` when no attributes were given.
    """
    V = as_points(verts)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if tris.size == 0:
        raise DegenerateInputError("no triangles to rasterize")
    if tris.min() < 0 or tris.max() >= len(V):
        raise ValueError("triangle index out of range")
    attr = None if attributes is None else np.asarray(attributes, dtype=float).reshape(len(V), -1)

    H, W = grid.height, grid.width
    u = (V[:, 0] - grid.origin[0]) / grid.step
    v = (V[:, 1] - grid.origin[1]) / grid.step
    zbuf = np.full((H, W), np.inf)
    out = None if attr is None else np.zeros((H, W, attr.shape[1]))
    n_valid = 0
    for t in tris:
        tu, tv = u[t], v[t]
        det = (tu[1] - tu[0]) * (tv[2] - tv[0]) - (tu[2] - tu[0]) * (tv[1] - tv[0])
        if abs(det) <= DET_TOL:
            continue
        n_valid += 1
        c0 = max(int(np.ceil(tu.min() - 0.5)), 0)
        c1 = min(int(np.floor(tu.max() - 0.5)), W - 1)
        r0 = max(int(np.ceil(tv.min() - 0.5)), 0)
        r1 = min(int(np.floor(tv.max() - 0.5)), H - 1)
        if c0 > c1 or r0 > r1:
            continue
        pu = np.arange(c0, c1 + 1) + 0.5
        pv = np.arange(r0, r1 + 1)[:, None] + 0.5
        du, dv = pu - tu[0], pv - tv[0]
        l2 = (du * (tv[2] - tv[0]) - (tu[2] - tu[0]) * dv) / det
        l3 = ((tu[1] - tu[0]) * dv - du * (tv[1] - tv[0])) / det
        l1 = 1.0 - l2 - l3
        inside = (l1 >= -INSIDE_TOL) & (l2 >= -INSIDE_TOL) & (l3 >= -INSIDE_TOL)
        if not inside.any():
            continue
        z = l1 * V[t[0], 2] + l2 * V[t[1], 2] + l3 * V[t[2], 2]
        block = zbuf[r0 : r1 + 1, c0 : c1 + 1]
        win = inside & (z < block)
        block[win] = z[win]
        if out is not None:
            vals = l1[..., None] * attr[t[0]] + l2[..., None] * attr[t[1]] + l3[..., None] * attr[t[2]]
            out[r0 : r1 + 1, c0 : c1 + 1][win] = vals[win]
    if n_valid == 0:
        raise DegenerateInputError("every triangle projects to a degenerate triangle")
    occ = np.isfinite(zbuf)
    depth = np.where(occ, zbuf, np.nan)
    return depth, occ, out


def rasterize_depth(verts, triangles, grid: GridSpec) -> DepthMap:
    depth, occ, _ = rasterize(verts, triangles, grid)
    depth.flags.writeable = False
    occ.flags.writeable = False
    return DepthMap(grid, depth, occ)


def warp(
    I_p: Image,
    depth: DepthMap,
    T_inv: SimilarityTransform,
    bilinear: bool = False,
    occlusion_tol: float | None = 2.0,
) -> Image:
    """Sample the input image at the projection of every occupied frontal pixel.

    The frontal point ``(A1, A2, A3)`` is mapped by the top two rows of
    ``scale * R`` plus the first two translation components, and the input
    pixel at the integer part of the result is copied.  Out-of-bounds or
    invalid samples leave the output pixel masked.

    Self-occlusion: frontal pixels landing on the same input pixel compete on
    their depth along the input view (third row of ``T_inv``); pixels deeper
    than the nearest by more than ``occlusion_tol`` are masked.  ``None``
    disables the test.
    """
    g = depth.grid
    rows, cols = np.nonzero(depth.occupancy)
    H, W = I_p.height, I_p.width
    out_px = np.zeros((g.height, g.width) + I_p.pixels.shape[2:], dtype=np.uint8)
    out_mask = np.zeros((g.height, g.width), dtype=bool)
    if rows.size == 0:
        return Image(out_px, out_mask)

    x, y = g.centres(cols, rows)
    P = np.column_stack([x, y, depth.depth[rows, cols]])
    B = apply_transform(T_inv, P)
    bx = np.floor(B[:, 0])
    by = np.floor(B[:, 1])
    ok = (bx >= 0) & (bx < W) & (by >= 0) & (by < H)
    bxi = np.where(ok, bx, 0).astype(np.int64)
    byi = np.where(ok, by, 0).astype(np.int64)
    ok &= I_p.mask[byi, bxi]

    if occlusion_tol is not None and ok.any():
        key = byi * W + bxi
        nearest = np.full(H * W, np.inf)
        np.minimum.at(nearest, key[ok], B[ok, 2])
        ok &= B[:, 2] <= nearest[key] + occlusion_tol

    if bilinear:
        vals, valid = _bilinear(I_p, B[:, 0] - 0.5, B[:, 1] - 0.5)
        ok &= valid
    else:
        vals = I_p.pixels[byi, bxi]
    out_px[rows[ok], cols[ok]] = vals[ok]
    out_mask[rows[ok], cols[ok]] = True
    return Image(out_px, out_mask)


def _bilinear(img: Image, fx, fy):
    H, W = img.height, img.width
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = fx - x0
    ay = fy - y0
    valid = (x0 >= 0) & (x0 + 1 < W) & (y0 >= 0) & (y0 + 1 < H)
    x0 = np.where(valid, x0, 0)
    y0 = np.where(valid, y0, 0)
    m = img.mask
    valid &= m[y0, x0] & m[y0, x0 + 1] & m[y0 + 1, x0] & m[y0 + 1, x0 + 1]
    px = img.pixels.astype(float)
    if px.ndim == 3:
        ax, ay = ax[:, None], ay[:, None]
    val = (
        (1 - ax) * (1 - ay) * px[y0, x0]
        + ax * (1 - ay) * px[y0, x0 + 1]
        + (1 - ax) * ay * px[y0 + 1, x0]
        + ax * ay * px[y0 + 1, x0 + 1]
    )
    return np.clip(np.rint(val), 0, 255).astype(np.uint8), valid


def mirror_columns(width: int, axis_x: float) -> np.ndarray:
    """Column index mirrored across the vertical line ``x = axis_x``.

    Pixel centre ``c + 0.5`` reflects to ``2 axis_x - c - 0.5``; taking the
    integer part makes the map an involution on the integers.
    """
    c = np.arange(width)
    return np.floor(2.0 * axis_x - c - 0.5).astype(np.int64)


def soft_symmetry_fill(img: Image, axis_x: float) -> Image:
    """Fill masked pixels from their valid mirror image across ``x = axis_x``."""
    if not 0 <= axis_x <= img.width:
        raise ValueError("symmetry axis must lie within the image width")
    m = mirror_columns(img.width, axis_x)
    inb = (m >= 0) & (m < img.width)
    src = np.where(inb, m, 0)
    donor = img.mask[:, src] & inb[None, :]
    fill = ~img.mask & donor
    px = img.pixels.copy()
    px[fill] = img.pixels[:, src][fill]
    return Image(px, img.mask | fill)


@dataclass
class PipelineConfig:
    align: AlignConfig = field(default_factory=AlignConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    # output canvas (height, width); None uses the input image size
    canvas: tuple | None = None
    supersample: int = 1
    bilinear: bool = False
    soft_symmetry: bool = False
    occlusion_tol: float | None = 2.0


@dataclass
class PipelineResult:
    image: Image
    pose: SimilarityTransform  # input frame -> model frame
    head_pose: SimilarityTransform  # fitted model -> input frame
    fit: FitResult
    depth: DepthMap
    yaw: float
    frontal_landmarks: np.ndarray  # fitted landmarks in output pixel coordinates
    symmetry_axis: float


def canvas_grid(model: ShapeModel, shape, supersample: int = 1) -> GridSpec:
    """Grid that centres the mean shape's bounding box in an ``(H, W)`` canvas."""
    H, W = int(shape[0]), int(shape[1])
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    mv = model.mean_vertices
    centre = 0.5 * (mv[:, :2].min(axis=0) + mv[:, :2].max(axis=0))
    step = 1.0 / supersample
    return GridSpec((centre[0] - 0.5 * W, centre[1] - 0.5 * H), W * supersample, H * supersample, step)


def to_canvas(P, grid: GridSpec) -> np.ndarray:
    """Frontal-frame points to output pixel coordinates (depth kept)."""
    P = as_points(P).copy()
    P[:, 0] = (P[:, 0] - grid.origin[0]) / grid.step
    P[:, 1] = (P[:, 1] - grid.origin[1]) / grid.step
    return P


def run_pipeline(I_p: Image, X, model: ShapeModel, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Frontalize ``I_p`` given its 3D landmarks ``X`` and a shape model."""
    cfg = cfg or PipelineConfig()
    if model.triangles.size == 0:
        raise ModelError("model has no triangles to rasterize")
    X = as_points(X)
    pose = align(X, model.landmark_mean, cfg.align).transform
    Y = frontalize_landmarks(X, pose)
    fitted = fit(Y, model, cfg.fit)
    verts = fitted.vertices(model)
    grid = canvas_grid(model, cfg.canvas or (I_p.height, I_p.width), cfg.supersample)
    dm = rasterize_depth(verts, model.triangles, grid)
    T_inv = inverse_pose(pose)
    out = warp(I_p, dm, T_inv, bilinear=cfg.bilinear, occlusion_tol=cfg.occlusion_tol)
    axis = 0.5 * grid.width
    if cfg.soft_symmetry:
        out = soft_symmetry_fill(out, axis)
    # the rigid pose alone absorbs part of the shape deformation; the yaw is
    # read from the full model-to-image map instead
    head_pose = compose(T_inv, fitted.transform)
    yaw = yaw_degrees(head_pose.matrix)
    log.info("pipeline: yaw %.2f deg, fit took %d iterations", yaw, fitted.iterations)
    return PipelineResult(out, pose, head_pose, fitted, dm, yaw, to_canvas(fitted.landmarks(model), grid), axis)
