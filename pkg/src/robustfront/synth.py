"""Deterministic synthetic face scenes for tests, scripts and the CLI.

A scene is a height-field face mesh with a statistical model learned from
smoothly deformed copies of it, a ground-truth embedding inside the model's
confidence ellipsoid, a head pose at a given yaw, orthographic textured
renders of the posed input and of the frontal ground truth, and 68 landmarks
in the usual layout (jaw 0-16, brows 17-26, nose 27-35, eyes 36-47,
mouth 48-67) with optional noise and gross outliers.

Image and model frames: ``x`` to the right, ``y`` down, ``z`` away from the
camera (smaller depth is nearer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontalize import GridSpec, canvas_grid, rasterize, to_canvas
from .geometry import SimilarityTransform, axis_angle_quat
from .image import Image
from .robust_align import cloud_radius
from .shape_model import ShapeModel, build_model, ellipsoid_check, reconstruct

HALF_WIDTH = 50.0
HALF_HEIGHT = 60.0
BACKGROUND = 40
OUTLIER_DISPLACEMENT = 50.0  # in units of the landmark cloud radius


@dataclass
class SynthScene:
    model: ShapeModel
    image: Image  # posed input render
    landmarks: np.ndarray  # (68, 3) input-image landmarks, noisy, with outliers
    pose: SimilarityTransform  # model frame -> input image frame
    embedding: np.ndarray
    frontal: Image  # frontal ground-truth render
    frontal_landmarks: np.ndarray  # true landmarks in frontal canvas pixels
    outliers: np.ndarray  # indices of displaced landmarks
    grid: GridSpec
    yaw: float
    training: np.ndarray  # (M, 3N) shapes the model was built from


def landmark_template() -> np.ndarray:
    """Nominal 2D positions of the 68 landmarks in face coordinates."""
    pts = []
    t = np.linspace(0.0, 1.0, 17)
    pts += list(zip(-46 * np.cos(np.pi * t), -5 + 50 * np.sin(np.pi * t)))
    for xs in (np.linspace(-38, -10, 5), np.linspace(10, 38, 5)):
        pts += [(x, -28 - 4 * np.sin(np.pi * (abs(x) - 10) / 28)) for x in xs]
    pts += [(0.0, y) for y in np.linspace(-20, 5, 4)]
    pts += [(x, 10.0) for x in np.linspace(-9, 9, 5)]
    ang = np.radians([180, 120, 60, 0, -60, -120])
    for cx in (-21.0, 21.0):
        pts += [(cx + 8 * np.cos(a), -15 - 3.5 * np.sin(a)) for a in ang]
    outer = np.radians(np.arange(180, -180, -30))
    pts += [(18 * np.cos(a), 30 - 8 * np.sin(a)) for a in outer]
    inner = np.radians(np.arange(180, -180, -45))
    pts += [(11 * np.cos(a), 30 - 3 * np.sin(a)) for a in inner]
    return np.array(pts)


def face_depth(x, y):
    """Depth of the neutral face surface; the nose tip is nearest the camera."""
    dome = 20 * (1 - (x / 70) ** 2 - (y / 90) ** 2)
    nose = 16 * np.exp(-(x**2) / (2 * 6**2) - y**2 / (2 * 9**2))
    lips = 3 * np.exp(-(x**2) / 200 - (y - 30) ** 2 / 30)
    eyes = -4 * (np.exp(-((x + 21) ** 2 + (y + 15) ** 2) / 60) + np.exp(-((x - 21) ** 2 + (y + 15) ** 2) / 60))
    return -(dome + nose + lips + eyes)


def face_mesh(n_vertices: int):
    """Regular grid mesh of about ``n_vertices`` vertices and its triangles."""
    nx = max(int(round(np.sqrt(n_vertices * HALF_WIDTH / HALF_HEIGHT))), 2)
    ny = max(int(round(n_vertices / nx)), 2)
    xs = np.linspace(-HALF_WIDTH, HALF_WIDTH, nx)
    ys = np.linspace(-HALF_HEIGHT, HALF_HEIGHT, ny)
    gx, gy = np.meshgrid(xs, ys)
    V = np.column_stack([gx.ravel(), gy.ravel(), face_depth(gx, gy).ravel()])
    idx = np.arange(nx * ny).reshape(ny, nx)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([b, d, c])])
    return V, tris


def landmark_vertices(V: np.ndarray) -> np.ndarray:
    """Distinct mesh vertices nearest to each template landmark."""
    chosen: list[int] = []
    for p in landmark_template():
        order = np.argsort(np.sum((V[:, :2] - p) ** 2, axis=1), kind="stable")
        chosen.append(int(next(i for i in order if i not in chosen)))
    return np.array(chosen, dtype=np.int64)


def _deformation_fields(rng, V, k: int, bumps: int = 4):
    F = np.zeros((k,) + V.shape)
    for i in range(k):
        for _ in range(bumps):
            c = rng.uniform([-HALF_WIDTH, -HALF_HEIGHT], [HALF_WIDTH, HALF_HEIGHT])
            width = rng.uniform(15, 40)
            g = np.exp(-np.sum((V[:, :2] - c) ** 2, axis=1) / (2 * width**2))
            F[i] += g[:, None] * rng.normal(size=3) * [2.0, 2.0, 3.0]
    return F.reshape(k, -1)


def _texture(rng):
    n = 8
    wavelength = rng.uniform(8, 22, n)
    theta = rng.uniform(0, np.pi, n)
    k = (2 * np.pi / wavelength)[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = rng.uniform(8, 18, n)

    def shade(uv):
        u, v = uv[..., 0], uv[..., 1]
        val = 140 + np.tensordot(np.sin(u[..., None] * k[:, 0] + v[..., None] * k[:, 1] + phase), amp, axes=1)
        val -= 60 * np.exp(-((u / 17) ** 2 + ((v - 30) / 6) ** 2) ** 2)  # lips
        for cx in (-21, 21):
            val -= 50 * np.exp(-(((u - cx) / 7) ** 2 + ((v + 15) / 3) ** 2))  # eyes
        return np.clip(np.rint(val), 0, 255).astype(np.uint8)

    return shade


def _render(verts, tris, grid: GridSpec, texcoords, shade, background=None) -> Image:
    _, occ, uv = rasterize(verts, tris, grid, texcoords)
    px = shade(uv)
    if background is not None:
        px[~occ] = background
        return Image(px)
    return Image(px, occ)


def synth_scene(
    seed: int,
    N: int = 2000,
    M: int = 20,
    K_target: int = 8,
    yaw: float = 0.0,
    noise_sigma: float = 0.0,
    outlier_frac: float = 0.0,
    canvas: int = 160,
    embedding_radius: float | None = None,
) -> SynthScene:
    """Build a deterministic synthetic scene; identical arguments give identical output.

    ``embedding_radius`` fixes ``sqrt(s^T Lambda^-1 s)`` of the true embedding;
    by default it is drawn from ``[0.5, 0.9]``.
    """
    if N < 100:
        raise ValueError("N must be at least 100 vertices")
    if M < 2 or not 1 <= K_target <= M - 1:
        raise ValueError("need M >= 2 and 1 <= K_target <= M - 1")
    if not -60.0 <= yaw <= 60.0:
        raise ValueError("yaw must lie in [-60, 60] degrees")
    if noise_sigma < 0 or not 0 <= outlier_frac < 0.5:
        raise ValueError("noise must be >= 0 and outlier_frac in [0, 0.5)")
    if embedding_radius is not None and not 0 <= embedding_radius <= 1:
        raise ValueError("embedding_radius must lie in [0, 1]")
    if canvas < 140:
        raise ValueError("canvas must be at least 140 pixels")
    rng = np.random.default_rng(seed)

    base, tris = face_mesh(N)
    lm = landmark_vertices(base)
    F = _deformation_fields(rng, base, K_target)
    coeffs = rng.normal(size=(M, K_target))
    training = base.ravel() + coeffs @ F
    model = build_model(training, variance_fraction=1.0, triangles=tris, landmark_indices=lm)

    direction = rng.normal(size=model.n_modes)
    radius = rng.uniform(0.5, 0.9)
    if embedding_radius is not None:
        radius = embedding_radius
    s = direction * np.sqrt(model.eigvals)
    s *= radius / np.sqrt(ellipsoid_check(model, s))
    V = reconstruct(model, s).reshape(-1, 3)

    grid = canvas_grid(model, (canvas, canvas))
    mv = model.mean_vertices
    centre = np.array([0.5 * (mv[:, 0].min() + mv[:, 0].max()), 0.5 * (mv[:, 1].min() + mv[:, 1].max()), mv[:, 2].mean()])
    q = axis_angle_quat([0.0, 1.0, 0.0], np.radians(yaw))
    R = SimilarityTransform(1.0, q).matrix
    offset = np.array([grid.origin[0], grid.origin[1], 0.0])
    pose = SimilarityTransform(1.0, q, centre - R @ centre - offset)

    shade = _texture(rng)
    texcoords = mv[:, :2]
    image = _render(pose(V), tris, GridSpec((0.0, 0.0), canvas, canvas), texcoords, shade, BACKGROUND)
    frontal = _render(V, tris, grid, texcoords, shade)

    X = pose(V[lm])
    if noise_sigma > 0:
        X = X + rng.normal(scale=noise_sigma, size=X.shape)
    n_out = int(np.floor(outlier_frac * len(lm)))
    outliers = np.sort(rng.choice(len(lm), n_out, replace=False)) if n_out else np.zeros(0, dtype=np.int64)
    if n_out:
        d = rng.normal(size=(n_out, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        X[outliers] += OUTLIER_DISPLACEMENT * cloud_radius(X) * d
    return SynthScene(model, image, X, pose, s, frontal, to_canvas(V[lm], grid), outliers, grid, float(yaw), training)
