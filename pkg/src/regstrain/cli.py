"""``regstrain`` command-line interface.

Subcommands: ``synth``, ``register``, ``strain``, ``dic``, ``compare`` and
``ssim``. Each writes its outputs plus ``manifest.json`` into ``--out-dir``.

Exit codes: 0 success, 1 usage or configuration error, 2 unreadable or
unusable data, 3 a registration step aborted on degenerate overlap.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .bspline import save_transform
from .config import RunConfig, load_config
from .dic import DicParams, dic_displacement, dic_strain
from .exceptions import (
    ConfigurationError,
    DegenerateOverlapError,
    EmptyResultError,
    FormatError,
    GenerationError,
    ParameterError,
    UndefinedMapeError,
)
from .fields import (
    DISPLACEMENT_SCHEMA,
    STRAIN_SCHEMA,
    DisplacementField,
    StrainField,
    read_schema,
)
from .image import GrayImage, load_mask, load_pgm, save_mask, save_pgm
from .manifest import RunManifest, derive_seeds
from .registration import register_sequence
from .strain import green_lagrange_strain
from .synthetic import AnalyticField, generate_sequence, generate_speckle
from .validation import mape_fields, ssim

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 1, 2, 3

FIELD_KINDS = ("identity", "translation", "stretch", "rotation", "sinusoid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI file with [registration], [asgd] and [dic] sections")
    p.add_argument("--out-dir", default=".", help="output directory (created if missing)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not change)")
    p.add_argument("--seed", type=int, help="root seed; named seeds are derived from it")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regstrain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    common = [_common()]

    p = sub.add_parser("synth", parents=common, help="generate a speckle sequence with ground truth")
    p.add_argument("--kind", choices=FIELD_KINDS, default="identity")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--frames", type=int, default=2, help="number of frames, >= 2")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    p.add_argument("--density", type=float, default=3.0, help="blobs per 100 px^2")
    p.add_argument("--radius", type=float, nargs=2, default=(2.0, 4.0), metavar=("MIN", "MAX"))
    p.add_argument("--shift", type=float, nargs=2, default=(0.0, 0.0), metavar=("TX", "TY"))
    p.add_argument("--stretch", type=float, nargs=2, default=(1.0, 1.0), metavar=("LX", "LY"))
    p.add_argument("--angle", type=float, default=0.0, help="rotation in degrees")
    p.add_argument("--center", type=float, nargs=2, metavar=("CX", "CY"),
                   help="fixed point of stretch/rotation (default: image centre)")
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--period", type=float, default=50.0)
    p.add_argument("--axis", choices=("x", "y"), default="x")

    p = sub.add_parser("register", parents=common, help="register an ordered image sequence")
    p.add_argument("images", nargs="+", help="PGM frames in order")
    p.add_argument("--mask", help="PGM region of interest for the first frame")

    p = sub.add_parser("strain", parents=common, help="Green-Lagrange strain of displacement CSVs")
    p.add_argument("fields", nargs="+", help="displacement CSV files")
    p.add_argument("--method", choices=("central", "window"), default="central")
    p.add_argument("--window", type=float, help="plane-fit radius for --method window")
    p.add_argument("--pixel-spacing", type=float, nargs=2, default=(1.0, 1.0),
                   metavar=("HX", "HY"))

    p = sub.add_parser("dic", parents=common, help="subset DIC on an image pair")
    p.add_argument("reference")
    p.add_argument("deformed")
    p.add_argument("--mask", help="PGM region of interest for the reference")
    p.add_argument("--subset-radius", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--search-radius", type=int)
    p.add_argument("--strain-window", type=float)

    p = sub.add_parser("compare", parents=common, help="per-component MAPE of two field CSVs")
    p.add_argument("reference", help="reference field (denominator of the error)")
    p.add_argument("test")

    p = sub.add_parser("ssim", parents=common, help="windowed SSIM of two images")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mask", help="PGM region over which SSIM is evaluated")
    return parser


# ---------------------------------------------------------------------------


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.threads < 1:
        raise ConfigurationError(f"threads: must be >= 1, got {args.threads}")
    return cfg.with_workers(args.threads)


def _open_manifest(args, argv, cfg=None):
    os.makedirs(args.out_dir, exist_ok=True)
    m = RunManifest(command=args.command, argv=list(argv))
    if cfg is not None:
        m.config = cfg.to_dict()
    if args.config:
        m.add_input(args.config)
    args.manifest = m
    return m


def _out(args, manifest, name):
    path = os.path.join(args.out_dir, name)
    manifest.add_artifact(path, args.out_dir)
    return path


def _scaled_field(args, s: float, shape) -> AnalyticField:
    height, width = shape
    center = tuple(args.center) if args.center else ((width - 1) / 2.0, (height - 1) / 2.0)
    if args.kind == "identity":
        return AnalyticField.translation(0.0, 0.0)
    if args.kind == "translation":
        return AnalyticField.translation(s * args.shift[0], s * args.shift[1])
    if args.kind == "stretch":
        lx, ly = (1.0 + s * (lam - 1.0) for lam in args.stretch)
        return AnalyticField.stretch(lx, ly, center)
    if args.kind == "rotation":
        return AnalyticField.rotation(s * args.angle, center,
                                      (s * args.shift[0], s * args.shift[1]))
    return AnalyticField.sinusoid(s * args.amplitude, args.period, args.axis)


def cmd_synth(args, argv) -> int:
    if args.frames < 2:
        raise ParameterError(f"frames: must be >= 2, got {args.frames}")
    m = _open_manifest(args, argv)
    root = 0 if args.seed is None else args.seed
    seeds = derive_seeds(root)
    m.seed, m.seeds = root, seeds
    m.parameters = {k: v for k, v in vars(args).items()
                    if k not in ("command", "config", "out_dir", "threads", "seed", "manifest")}
    base = generate_speckle(args.width, args.height, args.density, tuple(args.radius),
                            seed=seeds["speckle"])
    n = args.frames
    fields = [_scaled_field(args, k / (n - 1), base.shape) for k in range(1, n)]
    images, truths = generate_sequence(base, fields, args.noise, seed=seeds["noise"])
    for k, im in enumerate(images):
        save_pgm(im, _out(args, m, f"frame_{k:03d}.pgm"))
        if im.mask is not None:
            save_mask(im.mask, _out(args, m, f"mask_{k:03d}.pgm"))
    for k, truth in enumerate(truths, start=1):
        truth.to_csv(_out(args, m, f"truth_{k:03d}.csv"))
    m.summary = {"frames": n, "max_truth_magnitude": float(truths[-1].magnitude().max())}
    m.write(args.out_dir)
    print(f"wrote {n} frames to {args.out_dir}")
    return EXIT_OK


def _load_image(path, mask_path=None) -> GrayImage:
    image = load_pgm(path)
    if mask_path:
        image = image.with_mask(load_mask(mask_path))
    return image


def cmd_register(args, argv) -> int:
    cfg = _resolve_config(args)
    if args.seed is None:
        root, seeds = None, {"sampling": cfg.registration.asgd.seed}
    else:
        root, seeds = args.seed, derive_seeds(args.seed)
        cfg = cfg.with_seed(seeds["sampling"])
    m = _open_manifest(args, argv, cfg)
    m.seed, m.seeds = root, seeds
    images = []
    for k, path in enumerate(args.images):
        m.add_input(path)
        images.append(_load_image(path, args.mask if k == 0 else None))
    if args.mask:
        m.add_input(args.mask)
    if len(images) < 2:
        raise ParameterError("images: need at least two frames")
    result = register_sequence(images, cfg.registration)
    report = ["step,ssim_before,ssim_after,final_value,aborted"]
    for i, T in enumerate(result.transforms):
        step = i + 1
        save_transform(T, _out(args, m, f"transform_{step:03d}.txt"))
        result.displacements[i].to_csv(_out(args, m, f"displacement_{step:03d}.csv"))
        result.traces[i].to_csv(_out(args, m, f"trace_{step:03d}.csv"))
        trace = result.traces[i]
        last = trace.values[-1] if trace.values else float("nan")
        report.append(f"{step},{result.ssim_before[i]!r},{result.ssim_means[i]!r},"
                      f"{last!r},{int(result.aborted[i])}")
    with open(_out(args, m, "report.csv"), "w") as fh:
        fh.write("\n".join(report) + "\n")
    aborted = any(result.aborted)
    m.summary = {
        "steps": len(result),
        "ssim_before": result.ssim_before,
        "ssim_after": result.ssim_means,
        "aborted_steps": [i + 1 for i, a in enumerate(result.aborted) if a],
    }
    m.status = "aborted" if aborted else "ok"
    m.write(args.out_dir)
    for line in report:
        print(line)
    if aborted:
        reasons = {t.abort_reason for t in result.traces if t.abort_reason}
        print(f"regstrain: registration aborted: {'; '.join(sorted(reasons))}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_strain(args, argv) -> int:
    cfg = _resolve_config(args)
    m = _open_manifest(args, argv, cfg)
    window = args.window if args.window is not None else cfg.dic.strain_window
    m.parameters = {"method": args.method, "window": window,
                    "pixel_spacing": list(args.pixel_spacing)}
    for path in args.fields:
        m.add_input(path)
        field = DisplacementField.from_csv(path)
        if args.method == "central":
            strain = green_lagrange_strain(field, tuple(args.pixel_spacing))
        else:
            strain = dic_strain(field, window)
        stem = os.path.splitext(os.path.basename(path))[0]
        name = stem.replace("displacement", "strain") if "displacement" in stem else f"strain_{stem}"
        strain.to_csv(_out(args, m, f"{name}.csv"))
        valid = strain.valid
        m.summary[name] = {c: float(np.mean(v[valid])) if valid.any() else float("nan")
                           for c, v in strain.components().items()}
    m.write(args.out_dir)
    return EXIT_OK


def cmd_dic(args, argv) -> int:
    cfg = _resolve_config(args)
    overrides = {k: getattr(args, k) for k in
                 ("subset_radius", "step", "search_radius", "strain_window")
                 if getattr(args, k) is not None}
    try:
        params = DicParams(**{**cfg.dic.__dict__, **overrides})
    except ParameterError as exc:
        raise ConfigurationError(f"dic.{exc}") from None
    cfg = RunConfig(cfg.registration, params)
    m = _open_manifest(args, argv, cfg)
    ref = _load_image(args.reference, args.mask)
    deformed = load_pgm(args.deformed)
    for path in (args.reference, args.deformed, args.mask):
        if path:
            m.add_input(path)
    field = dic_displacement(ref, deformed, params)
    strain = dic_strain(field, params.strain_window)
    field.to_csv(_out(args, m, "dic_displacement.csv"))
    strain.to_csv(_out(args, m, "dic_strain.csv"))
    m.summary = {"valid_seeds": int(np.count_nonzero(field.valid)),
                 "valid_strain": int(np.count_nonzero(strain.valid))}
    m.write(args.out_dir)
    print(f"{m.summary['valid_seeds']} valid seeds")
    return EXIT_OK


def _read_field(path):
    schema = read_schema(path)
    if schema == DISPLACEMENT_SCHEMA:
        return schema, DisplacementField.from_csv(path)
    if schema == STRAIN_SCHEMA:
        return schema, StrainField.from_csv(path)
    raise FormatError(f"{path}: cannot compare fields of schema {schema!r}")


def cmd_compare(args, argv) -> int:
    m = _open_manifest(args, argv)
    schema_a, ref = _read_field(args.reference)
    schema_b, test = _read_field(args.test)
    if schema_a != schema_b:
        raise FormatError(f"schemas differ: {schema_a!r} vs {schema_b!r}")
    if ref.shape != test.shape:
        raise FormatError(f"field sizes differ: {ref.shape} vs {test.shape}")
    m.add_input(args.reference)
    m.add_input(args.test)
    result = mape_fields(ref, test)
    lines = ["component,mape,used,excluded,status"]
    for comp, r in result.items():
        status = "ok" if r["used"] else "undefined"
        lines.append(f"{comp},{r['mape']!r},{r['used']},{r['excluded']},{status}")
    with open(_out(args, m, "compare.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    m.summary = result
    m.write(args.out_dir)
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_ssim(args, argv) -> int:
    m = _open_manifest(args, argv)
    a, b = load_pgm(args.a), load_pgm(args.b)
    m.add_input(args.a)
    m.add_input(args.b)
    region = None
    if args.mask:
        region = load_mask(args.mask)
        m.add_input(args.mask)
    rep = ssim(a, b, region)
    with open(_out(args, m, "ssim_map.pgm"), "wb") as fh:
        fh.write(rep.to_pgm_bytes())
    rep.to_csv(_out(args, m, "ssim_map.csv"))
    m.summary = {"mean": rep.mean, "pixels": int(np.count_nonzero(rep.region))}
    m.write(args.out_dir)
    print(f"mean SSIM {rep.mean!r}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "register": cmd_register,
    "strain": cmd_strain,
    "dic": cmd_dic,
    "compare": cmd_compare,
    "ssim": cmd_ssim,
}


def run_cli(argv=None) -> int:
    """Run one command; returns the process exit code instead of exiting."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a command is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, argv)
    except (ConfigurationError, ParameterError) as exc:
        code, message = EXIT_USAGE, str(exc)
    except (FormatError, OSError, EmptyResultError, GenerationError, UndefinedMapeError) as exc:
        code, message = EXIT_DATA, str(exc)
    except DegenerateOverlapError as exc:
        code, message = EXIT_ABORT, str(exc)
    print(f"regstrain {args.command}: {message}", file=sys.stderr)
    manifest = getattr(args, "manifest", None)
    if manifest is not None and manifest.artifacts:
        # keep the directory self-describing even after a partial run
        manifest.status = f"failed: {message}"
        manifest.write(args.out_dir)
    return code


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
