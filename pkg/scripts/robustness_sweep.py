"""Rigid and deformable fit accuracy as the outlier fraction grows.

    python3 scripts/robustness_sweep.py --seeds 50 --fractions 0 0.1 0.2 0.3

For each fraction prints the median rotation error of the robust aligner and
of the closed-form least-squares solution, and the median inlier RMS of the
robust and uniform-weight deformable fits (in cloud radii).
"""

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from robustfront.deform_fit import FitConfig, fit
from robustfront.geometry import horn_align, rotation_angle
from robustfront.robust_align import align, cloud_radius

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from scenes import deform_scene, rigid_scene, rms  # noqa: E402


def rigid_errors(seed, frac, noise):
    X, Z, T, _ = rigid_scene(seed, outlier_frac=frac, noise=noise)
    r = align(X, Z).transform
    h = horn_align(X, Z)
    return np.degrees(rotation_angle(r.matrix, T.matrix)), np.degrees(rotation_angle(h.matrix, T.matrix))


def deform_errors(seed, frac):
    m, Y, clean, _, _, idx = deform_scene(seed, outlier_frac=frac)
    inl = np.setdiff1d(np.arange(len(Y)), idx)
    rad = cloud_radius(clean)
    out = []
    for robust in (True, False):
        f = fit(Y, m, FitConfig(eta=1e-6, robust=robust))
        out.append(rms(f.landmarks(m)[inl], clean[inl]) / rad)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.05, 0.1, 0.2, 0.3])
    ap.add_argument("--noise", type=float, default=0.01, help="rigid-scene noise in cloud radii")
    args = ap.parse_args()
    warnings.simplefilter("ignore")

    print(f"{'frac':>5} {'robust rot':>11} {'lsq rot':>9} {'robust fit':>11} {'uniform fit':>12}")
    for frac in args.fractions:
        rig = np.array([rigid_errors(s, frac, args.noise) for s in range(args.seeds)])
        dfm = np.array([deform_errors(s, frac) for s in range(args.seeds)])
        r, h = np.median(rig, axis=0)
        a, b = np.median(dfm, axis=0)
        print(f"{frac:5.2f} {r:10.4f}° {h:8.4f}° {a:11.2e} {b:12.2e}")


if __name__ == "__main__":
    main()
