"""Zero-mean normalized cross-correlation with shift search over a region."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateScaleError, NoAdmissibleShiftError, UndefinedCorrelationError
from .image import Image

MOUTH = slice(48, 68)
# jaw excluded: brows, nose and eyes are the most stable under expression
SCALE_SUBSET = np.arange(17, 48)


@dataclass(frozen=True)
class Region:
    """Inclusive pixel box ``x0..x1`` by ``y0..y1``."""

    x0: int
    x1: int
    y0: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "x1", "y0", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x1 - self.x0 < 1 or self.y1 - self.y0 < 1:
            raise ValueError("region must be at least 2 x 2 pixels")

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    @property
    def half_extent(self) -> tuple[float, float]:
        return 0.5 * (self.x1 - self.x0 + 1), 0.5 * (self.y1 - self.y0 + 1)

    def shifted(self, dx: int, dy: int) -> "Region":
        return Region(self.x0 + dx, self.x1 + dx, self.y0 + dy, self.y1 + dy)

    def inside(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 < width and self.y1 < height

    def cut(self, a: np.ndarray) -> np.ndarray:
        return a[self.y0 : self.y1 + 1, self.x0 : self.x1 + 1]


@dataclass(frozen=True)
class ZnccResult:
    coefficient: float
    shift: tuple[int, int]
    center: tuple[float, float]
    matched_center: tuple[float, float]


def zncc(Rf, Rt) -> float:
    """Centered covariance of two equal-size blocks over their centered norms."""
    a = np.asarray(Rf, dtype=float)
    b = np.asarray(Rt, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"blocks differ in shape: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise UndefinedCorrelationError("blocks need at least two pixels")
    a = a - a.mean()
    b = b - b.mean()
    saa = np.sum(a * a)
    sbb = np.sum(b * b)
    if saa == 0 or sbb == 0:
        raise UndefinedCorrelationError("a block has zero variance")
    # one square root of the product keeps zncc(a, a) exactly 1
    return float(np.clip(np.sum(a * b) / np.sqrt(saa * sbb), -1.0, 1.0))


def zncc_search(I_f: Image, I_t: Image, region: Region, max_shift: int = 10) -> ZnccResult:
    """Best ZNCC between ``region`` of ``I_f`` and shifted copies of it in ``I_t``.

    Every shift in ``[-max_shift, max_shift]^2`` whose target box is inside
    ``I_t`` and fully valid is scored.  The maximum wins; ties go to the
    smallest ``|dx| + |dy|`` and then to the lexicographically smallest shift.
    """
    if max_shift < 0:
        raise ValueError("max_shift must be non-negative")
    if not region.inside(I_f.width, I_f.height) or not region.cut(I_f.mask).all():
        raise NoAdmissibleShiftError("region is not fully valid in the first image")
    a = region.cut(I_f.gray())
    gt = I_t.gray()
    best = None
    for dx in range(-max_shift, max_shift + 1):
        for dy in range(-max_shift, max_shift + 1):
            r = region.shifted(dx, dy)
            if not r.inside(I_t.width, I_t.height) or not r.cut(I_t.mask).all():
                continue
            try:
                c = zncc(a, r.cut(gt))
            except UndefinedCorrelationError:
                continue
            key = (-c, abs(dx) + abs(dy), dx, dy)
            if best is None or key < best:
                best = key
    if best is None:
        raise NoAdmissibleShiftError("no shift gives a fully valid, non-constant region pair")
    c, _, dx, dy = best
    h, v = region.center
    return ZnccResult(-c, (dx, dy), (h, v), (h + dx, v + dy))


def scale_factor(lm_f, lm_t, subset=None) -> float:
    """Ratio of mean pairwise ``xy`` landmark distances, target over source."""
    f = np.asarray(lm_f, dtype=float)
    t = np.asarray(lm_t, dtype=float)
    if f.ndim != 2 or f.shape != t.shape or f.shape[1] < 2:
        raise ValueError("landmark sets must have the same (J, 2 or 3) shape")
    if subset is None:
        subset = SCALE_SUBSET if len(f) >= 68 else np.arange(len(f))
    f, t = f[subset, :2], t[subset, :2]
    if len(f) < 2:
        raise DegenerateScaleError("scale needs at least two landmarks")
    df, dt = pdist(f).mean(), pdist(t).mean()
    if not (df > 1e-12 and dt > 1e-12):
        raise DegenerateScaleError("landmarks are coincident")
    return float(dt / df)


def resample(img: Image, scale: float) -> Image:
    """Nearest-pixel rescale: output pixel ``x`` reads input ``floor((x + 0.5) / scale)``."""
    H = max(1, int(round(img.height * scale)))
    W = max(1, int(round(img.width * scale)))
    cols = np.minimum(np.floor((np.arange(W) + 0.5) / scale).astype(np.int64), img.width - 1)
    rows = np.minimum(np.floor((np.arange(H) + 0.5) / scale).astype(np.int64), img.height - 1)
    return Image(img.pixels[rows][:, cols], img.mask[rows][:, cols])


def scale_normalize(I_f: Image, lm_f, lm_t, subset=None) -> Image:
    """Resample ``I_f`` so its landmark spread matches that of ``lm_t``."""
    s = scale_factor(lm_f, lm_t, subset)
    if s == 1.0:
        return I_f
    return resample(I_f, s)


def mouth_region(landmarks, margin: int = 5, image_shape=None) -> Region:
    """Bounding box of the mouth landmarks (indices 48-67) grown by ``margin``."""
    L = np.asarray(landmarks, dtype=float)
    if L.ndim != 2 or len(L) < 68:
        raise ValueError("mouth region needs the 68-point landmark layout")
    m = L[MOUTH, :2]
    x0 = int(np.floor(m[:, 0].min() - margin))
    x1 = int(np.ceil(m[:, 0].max() + margin))
    y0 = int(np.floor(m[:, 1].min() - margin))
    y1 = int(np.ceil(m[:, 1].max() + margin))
    if image_shape is not None:
        H, W = image_shape[:2]
        x0, x1 = max(x0, 0), min(x1, W - 1)
        y0, y1 = max(y0, 0), min(y1, H - 1)
    return Region(x0, x1, y0, y1)


def evaluate_mouth(pred: Image, truth: Image, lm_pred, lm_truth, max_shift: int = 10, margin: int = 5) -> ZnccResult:
    """Scale-normalize ``pred`` onto ``truth`` and score the mouth region."""
    s = scale_factor(lm_pred, lm_truth)
    scaled = resample(pred, s) if s != 1.0 else pred
    lm = np.asarray(lm_pred, dtype=float)[:, :2] * s
    region = mouth_region(lm, margin, (scaled.height, scaled.width))
    return zncc_search(scaled, truth, region, max_shift)
