"""Command-line interface.

Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.  Numbers
printed to stdout use 6 significant digits; JSON files keep full precision.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .deform_fit import FitConfig, fit
from .errors import RobustFrontError
from .frontalize import PipelineConfig, run_pipeline
from .robust_align import AlignConfig, align
from .shape_model import build_model, ellipsoid_check
from .synth import synth_scene
from .zncc import evaluate_mouth

log = logging.getLogger("robustfront")


def fmt(x) -> str:
    return f"{float(x) + 0.0:.6g}"


def _vec(v) -> str:
    return " ".join(fmt(x) for x in np.ravel(v))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _student_dict(st) -> dict:
    return {
        "mu": float(st.mu),
        "sigma": np.asarray(st.sigma).tolist(),
        "wbar": [float(w) for w in st.wbar],
    }


def _align_cfg(args) -> dict:
    return dict(eps=args.eps, max_iter=args.max_iter, mu_init=args.mu_init)


def cmd_align(args) -> int:
    X = io.load_landmarks(args.source)
    Z = io.load_landmarks(args.target)
    if len(X) != len(Z):
        raise ValueError(f"source has {len(X)} points, target has {len(Z)}")
    res = align(X, Z, AlignConfig(**_align_cfg(args)))
    T = res.transform
    print("scale", fmt(T.scale))
    print("quaternion", _vec(T.rotation))
    print("translation", _vec(T.translation))
    print("mu", fmt(res.student.mu))
    print("iterations", res.iterations)
    if args.out:
        _write_json(
            args.out,
            {
                "transform": T.to_dict(),
                "student": _student_dict(res.student),
                "iterations": res.iterations,
                "converged": bool(res.converged),
            },
        )
    return 0


def _read_indices(path, cols=None) -> np.ndarray:
    a = np.loadtxt(path, dtype=np.int64, ndmin=2 if cols else 1)
    return a.reshape(-1, cols) if cols else a.ravel()


def cmd_build_model(args) -> int:
    d = Path(args.shapes)
    files = sorted(d.glob("*.lm"))
    if len(files) < 2:
        raise ValueError(f"{d} holds fewer than two .lm shape files")
    shapes = [io.load_landmarks(f).ravel() for f in files]
    tri = _read_indices(d / "triangles.txt", 3) if (d / "triangles.txt").exists() else None
    lm = _read_indices(d / "landmark_indices.txt") if (d / "landmark_indices.txt").exists() else None
    expressive = None
    if (d / "expressive").is_dir():
        expressive = [io.load_landmarks(d / "expressive" / f.name).ravel() for f in files]
    model = build_model(shapes, args.variance, args.min_k, tri, lm, expressive)
    io.save_model(args.out, model, units=args.units)
    print("vertices", model.n_vertices)
    print("modes", model.n_modes)
    print("explained", fmt(model.eigvals.sum()))
    return 0


def cmd_fit(args) -> int:
    Y = io.load_landmarks(args.landmarks)
    model = io.load_model(args.model)
    res = fit(Y, model, FitConfig(eta=args.eta, **_align_cfg(args)))
    T = res.transform
    q = ellipsoid_check(model.fitting_model(), res.embedding)
    print("scale", fmt(T.scale))
    print("quaternion", _vec(T.rotation))
    print("translation", _vec(T.translation))
    print("embedding", _vec(res.embedding))
    print("ellipsoid", fmt(q))
    print("mu", fmt(res.student.mu))
    print("iterations", res.iterations)
    if args.out:
        _write_json(
            args.out,
            {
                "transform": T.to_dict(),
                "embedding": [float(v) for v in res.embedding],
                "ellipsoid": q,
                "student": _student_dict(res.student),
                "iterations": res.iterations,
                "converged": bool(res.converged),
            },
        )
    return 0


def cmd_frontalize(args) -> int:
    img = io.load_image(args.image)
    X = io.load_landmarks(args.landmarks)
    model = io.load_model(args.model)
    cfg = PipelineConfig(
        align=AlignConfig(**_align_cfg(args)),
        fit=FitConfig(eta=args.eta, **_align_cfg(args)),
        bilinear=args.bilinear,
        soft_symmetry=args.soft_symmetry,
    )
    res = run_pipeline(img, X, model, cfg)
    out = Path(args.out)
    io.save_image(out, res.image)
    io.save_landmarks(out.with_suffix(".lm"), res.frontal_landmarks)
    _write_json(
        out.with_suffix(".pose.json"),
        {
            "yaw_degrees": res.yaw,
            "pose": res.pose.to_dict(),
            "head_pose": res.head_pose.to_dict(),
            "fit_transform": res.fit.transform.to_dict(),
            "embedding": [float(v) for v in res.fit.embedding],
            "symmetry_axis": res.symmetry_axis,
            "valid_pixels": int(res.image.mask.sum()),
        },
    )
    print("yaw", fmt(res.yaw))
    print("valid_pixels", int(res.image.mask.sum()))
    return 0


def cmd_zncc(args) -> int:
    res = evaluate_mouth(
        io.load_image(args.pred),
        io.load_image(args.truth),
        io.load_landmarks(args.pred_landmarks),
        io.load_landmarks(args.truth_landmarks),
        args.max_shift,
        args.margin,
    )
    print("coefficient", fmt(res.coefficient))
    print("shift", res.shift[0], res.shift[1])
    if args.out:
        _write_json(args.out, {"coefficient": res.coefficient, "shift": list(res.shift)})
    return 0


def cmd_synth(args) -> int:
    sc = synth_scene(
        args.seed,
        N=args.n_vertices,
        M=args.shapes,
        K_target=args.modes,
        yaw=args.yaw,
        noise_sigma=args.noise,
        outlier_frac=args.outliers,
    )
    out = Path(args.out)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    io.save_model(out / "model.bin", sc.model, units="pixels")
    io.save_image(out / "input.pgm", sc.image)
    io.save_image(out / "frontal.pgm", sc.frontal)
    io.save_landmarks(out / "input.lm", sc.landmarks)
    io.save_landmarks(out / "frontal.lm", sc.frontal_landmarks)
    for m, shape in enumerate(sc.training):
        io.save_landmarks(out / "shapes" / f"shape_{m:03d}.lm", shape.reshape(-1, 3))
    np.savetxt(out / "shapes" / "triangles.txt", sc.model.triangles, fmt="%d")
    np.savetxt(out / "shapes" / "landmark_indices.txt", sc.model.landmark_indices, fmt="%d")
    _write_json(
        out / "truth.json",
        {
            "seed": args.seed,
            "yaw_degrees": sc.yaw,
            "pose": sc.pose.to_dict(),
            "embedding": [float(v) for v in sc.embedding],
            "outliers": [int(i) for i in sc.outliers],
        },
    )
    print("vertices", sc.model.n_vertices)
    print("modes", sc.model.n_modes)
    print("outliers", len(sc.outliers))
    return 0


def _add_solver_args(p) -> None:
    p.add_argument("--eps", type=float, default=1e-6, help="convergence threshold")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--mu-init", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustfront", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="robust similarity alignment of two landmark sets")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _add_solver_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("build-model", help="build a shape model from a directory of shapes")
    p.add_argument("--shapes", required=True)
    p.add_argument("--variance", type=float, default=0.95)
    p.add_argument("--min-k", type=int, default=1)
    p.add_argument("--units", default="unspecified")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("fit", help="fit a shape model to landmarks")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--eta", type=float, default=1.0)
    _add_solver_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("frontalize", help="synthesize the frontal view of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--soft-symmetry", action="store_true")
    p.add_argument("--bilinear", action="store_true")
    _add_solver_args(p)
    p.set_defaults(func=cmd_frontalize)

    p = sub.add_parser("zncc", help="mouth-region ZNCC between two frontal images")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred-landmarks", required=True)
    p.add_argument("--truth-landmarks", required=True)
    p.add_argument("--max-shift", type=int, default=10)
    p.add_argument("--margin", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_zncc)

    p = sub.add_parser("synth", help="write a synthetic scene")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--yaw", type=float, default=30.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--outliers", type=float, default=0.0)
    p.add_argument("--n-vertices", type=int, default=2000)
    p.add_argument("--shapes", type=int, default=20)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (RobustFrontError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
