"""Command line interface: ``voxsyn <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io, metrics, render
from .grid import MappingField
from .nnf import CapacityError
from .pyramid import (PROCEDURAL_KINDS, SynthesisConfig, build_pyramid, load_pyramid_dir, procedural_exemplar,
                      save_pyramid_dir)
from .synth import analogy_features, edit_synthesis, preset, readout, redecorate, retarget, run_synthesis, \
    structural_analogy

log = logging.getLogger("voxsyn")

EXIT_USAGE, EXIT_CAPACITY, EXIT_IO = 2, 3, 4

# flag name -> (config field, parser)
_CONFIG_FLAGS = {
    "r": ("r", float),
    "N": ("N", int),
    "p": ("p", int),
    "w_a": ("w_a", float),
    "alpha": ("alpha", float),
    "sigma": ("sigma", float),
    "t_multiplier": ("t_multiplier", float),
    "T_e": ("T_e", int),
    "T_a": ("T_a", int),
    "exact_scales": ("exact_scales", int),
    "max_dim_schedule": ("max_dim_schedule", None),
    "pm_sweeps": ("pm_sweeps", int),
    "jump_radius": ("jump_radius", int),
    "exact_budget": ("exact_budget", int),
    "start_scale": ("start_scale", int),
}


class UsageError(Exception):
    pass


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace("x", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def dims_arg(text: str) -> tuple[int, int, int]:
    v = int_list(text)
    if len(v) != 3 or min(v) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive integers like 121,121,47, got {text!r}")
    return tuple(v)


def parse_seeds(text: str) -> list[int]:
    """``3``, ``1,4,9`` or an inclusive range ``1..10``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("no seeds given")
    return out


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthesis settings (override --config)")
    g.add_argument("--config", help="JSON file with synthesis settings")
    g.add_argument("--r", type=float, help="scale factor between levels")
    g.add_argument("--N", type=int, help="number of levels minus one")
    g.add_argument("--p", type=int, help="patch edge length")
    g.add_argument("--w-a", dest="w_a", type=float, help="appearance weight")
    g.add_argument("--alpha", type=float, help="completeness weight")
    g.add_argument("--sigma", type=float, help="initial mapping noise")
    g.add_argument("--t-multiplier", dest="t_multiplier", type=float, help="SDF truncation in voxels")
    g.add_argument("--T-e", dest="T_e", type=int, help="exact iterations per scale")
    g.add_argument("--T-a", dest="T_a", type=int, help="approximate iterations per scale")
    g.add_argument("--exact-scales", dest="exact_scales", type=int, help="levels below this index use exact search")
    g.add_argument("--max-dim-schedule", dest="max_dim_schedule", type=int_list, help="e.g. 16,21,28,38,51,68,91,121")
    g.add_argument("--pm-sweeps", dest="pm_sweeps", type=int, help="PatchMatch sweeps per match")
    g.add_argument("--jump-radius", dest="jump_radius", type=int)
    g.add_argument("--exact-budget", dest="exact_budget", type=int, help="max distance-matrix entries")
    g.add_argument("--start-scale", dest="start_scale", type=int, help="first level visited")


def _add_source(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("exemplar source (exactly one)")
    g.add_argument("--exemplar", help="VXG radiance grid")
    g.add_argument("--pyramid-dir", help="directory with level_0.vxg .. level_N.vxg [high.vxg]")
    g.add_argument("--procedural", help="KIND:X,Y,Z[:SEED], e.g. terrain:121,121,47:1")
    p.set_defaults(_source_required=required)


def resolve_config(args, kind: str | None = None, **overrides) -> SynthesisConfig:
    """Defaults, then the application preset ``kind``, then --config, then flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})")
        fields = set(SynthesisConfig.__dataclass_fields__)
        unknown = set(data) - fields
        if unknown:
            raise UsageError(f"{args.config}: unknown settings {sorted(unknown)}")
        values.update(data)
    for flag, (name, _) in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = SynthesisConfig(**values)
        if kind is None:
            return config
        pinned = {k: values[k] for k in ("sigma", "start_scale") if k in values}
        return preset(config, kind).replace(**pinned)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthesis settings: {exc}")


def load_exemplar(args, config: SynthesisConfig):
    """Returns (fine grid or None, pyramid builder)."""
    given = [s for s in ("exemplar", "pyramid_dir", "procedural") if getattr(args, s, None)]
    if len(given) != 1:
        raise UsageError("specify exactly one of --exemplar, --pyramid-dir, --procedural")
    if args.pyramid_dir:
        return None, load_pyramid_dir(args.pyramid_dir, config)
    grid = io.load_voxel_grid(args.exemplar, config.density_threshold) if args.exemplar else \
        _procedural(args.procedural)
    return grid, build_pyramid(grid, config)


def _procedural(text: str):
    parts = text.split(":")
    if len(parts) not in (2, 3) or parts[0] not in PROCEDURAL_KINDS:
        raise UsageError(f"--procedural expects KIND:X,Y,Z[:SEED] with KIND in {sorted(PROCEDURAL_KINDS)}")
    try:
        dims = dims_arg(parts[1])
        seed = int(parts[2]) if len(parts) == 3 else 0
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise UsageError(str(exc))
    return procedural_exemplar(parts[0], dims, seed)


def _threads() -> int:
    env = os.environ.get("VOXSYN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"VOXSYN_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _write_result(out: Path, stem: str, result, readout_grid=None) -> None:
    io.write_vxm(out / f"{stem}.vxm", result.field)
    (out / f"{stem}.log").write_text(result.log_text())
    if readout_grid is not None:
        io.save_grid(out / f"{stem}.vxg", readout(result.field, readout_grid))


def _render_outputs(out: Path, stem: str, field: MappingField, exemplar, args) -> None:
    if not getattr(args, "render", None):
        return
    cams = render.parse_camera_spec(args.render, tuple(args.resolution), args.focal)
    for i, cam in enumerate(cams):
        img = render.render((field, exemplar), cam, args.step)
        io.write_ppm(out / f"{stem}_view{i:03d}.ppm", img)


def _generate_one(job):
    pyramid, config, seed, out, want_readout = job
    result = run_synthesis(pyramid, config, seed)
    _write_result(Path(out), f"seed_{seed}", result, pyramid.readout_grid() if want_readout else None)
    return seed, result.seconds


# ------------------------------------------------------------------ commands

def cmd_make_exemplar(args) -> int:
    grid = procedural_exemplar(args.kind, args.dims, args.seed)
    _ensure_parent(args.out)
    io.save_grid(args.out, grid)
    if args.high_res_dims:
        hi = procedural_exemplar(args.kind, args.high_res_dims, args.seed)
        io.save_grid(_with_suffix(args.out, "_high"), hi)
    print(args.out)
    return 0


def cmd_build_pyramid(args) -> int:
    config = resolve_config(args)
    _, pyr = load_exemplar(args, config)
    save_pyramid_dir(pyr, args.out)
    print(f"{len(pyr)} levels: " + " ".join("x".join(map(str, d)) for d in pyr.dims))
    return 0


def cmd_generate(args) -> int:
    config = resolve_config(args)
    grid, pyr = load_exemplar(args, config)
    out = _outdir(args.out)
    jobs = [(pyr, config, s, str(out), args.readout) for s in args.seeds]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for seed, secs in ex.map(_generate_one, jobs):
                print(f"seed {seed}: {secs:.1f}s")
    else:
        for job in jobs:
            seed, secs = _generate_one(job)
            print(f"seed {seed}: {secs:.1f}s")
    if args.render:
        for s in args.seeds:
            fld = io.read_vxm(out / f"seed_{s}.vxm")
            _render_outputs(out, f"seed_{s}", fld, pyr.readout_grid(), args)
    return 0


def cmd_retarget(args) -> int:
    config = resolve_config(args, "retarget")
    _, pyr = load_exemplar(args, config)
    out = _outdir(args.out)
    result = retarget(pyr, args.target_dims, config, args.seed)
    _write_result(out, "retarget", result, pyr.readout_grid() if args.readout else None)
    _render_outputs(out, "retarget", result.field, pyr.readout_grid(), args)
    print("x".join(map(str, result.field.dims)))
    return 0


def cmd_analogy(args) -> int:
    config = resolve_config(args, "analogy")
    _, pyr = load_exemplar(args, config)
    grid_b = io.load_voxel_grid(args.structure, config.density_threshold) if not args.structure.startswith("procedural:") \
        else _procedural(args.structure.split(":", 1)[1])
    out = _outdir(args.out)
    result = structural_analogy(pyr, analogy_features(grid_b, pyr, config), config, args.seed)
    _write_result(out, "analogy", result, pyr.readout_grid() if args.readout else None)
    _render_outputs(out, "analogy", result.field, pyr.readout_grid(), args)
    return 0


def cmd_edit(args) -> int:
    config = resolve_config(args, "edit")
    _, pyr = load_exemplar(args, config)
    coords, bbox, ebox = io.read_vxm_raw(args.proxy)
    if not np.all(ebox.contains(coords)):
        log.warning("proxy coordinates outside the exemplar box were clamped")
    proxy = MappingField(coords, bbox, ebox)
    out = _outdir(args.out)
    try:
        result = edit_synthesis(pyr, proxy, config, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    _write_result(out, "edit", result, pyr.readout_grid() if args.readout else None)
    _render_outputs(out, "edit", result.field, pyr.readout_grid(), args)
    return 0


def cmd_redecorate(args) -> int:
    field = io.read_vxm(args.mapping)
    other = io.load_voxel_grid(args.exemplar)
    try:
        grid = redecorate(field, other)
    except ValueError as exc:
        raise UsageError(str(exc))
    _ensure_parent(args.out)
    io.save_grid(args.out, grid)
    return 0


def _load_scene(path: str, exemplar: str | None):
    if path.endswith(".vxm"):
        if not exemplar:
            raise UsageError(f"{path}: rendering a mapping needs --exemplar")
        return io.read_vxm(path), io.load_voxel_grid(exemplar)
    return io.load_voxel_grid(path)


def cmd_render(args) -> int:
    scene = _load_scene(args.scene, args.exemplar)
    cams = render.parse_camera_spec(args.cameras, tuple(args.resolution), args.focal)
    out = _outdir(args.out)
    for i, cam in enumerate(cams):
        img = render.render(scene, cam, args.step)
        io.write_ppm(out / f"view_{i:03d}.ppm", img)
        if args.png:
            io.write_png(out / f"view_{i:03d}.png", img)
    print(f"{len(cams)} images -> {out}")
    return 0


def _scene_grid(path: str, exemplar_grid):
    if path.endswith(".vxm"):
        return readout(io.read_vxm(path), exemplar_grid)
    return io.load_voxel_grid(path)


def cmd_evaluate(args) -> int:
    exemplar = io.load_voxel_grid(args.exemplar)
    scenes = [_scene_grid(s, exemplar) for s in args.scenes]
    ids = [Path(s).stem for s in args.scenes]
    want_div = not args.no_diversity
    if want_div and len(scenes) < 2:
        raise UsageError("diversity metrics need at least two scenes (or pass --no-diversity)")
    ex_pc = metrics.scene_point_cloud(exemplar, args.quality_points, args.seed)
    ex_patches = metrics.extract_patches_pc(ex_pc, args.patch_centers, args.patch_points, args.seed)
    quality = []
    for i, g in enumerate(scenes):
        # one sampling seed for every scene: identical geometry gives identical samples
        pc = metrics.scene_point_cloud(g, args.quality_points, args.seed)
        quality.append(metrics.mmd_quality(metrics.extract_patches_pc(pc, args.patch_centers, args.patch_points,
                                                                      args.seed), ex_patches))
    contrib = [float("nan")] * len(scenes)
    tmd = float("nan")
    vdiv = []
    if want_div:
        pcs = [metrics.scene_point_cloud(g, args.diversity_points, args.seed) for g in scenes]
        pair = metrics.pairwise_chamfer(pcs)
        contrib = list(0.5 * pair.sum(axis=1))
        tmd = float(np.triu(pair, 1).sum())
        cams = render.parse_camera_spec(args.cameras, tuple(args.resolution), args.focal)
        for cam in cams:
            stack = [render.render(g, cam, args.step) for g in scenes]
            ref = render.render(exemplar, cam, args.step)
            vdiv.append(metrics.visual_diversity([stack], [ref]))
    lines = ["scene\tG-Qua\tG-Div_contribution\tV-Qua"]
    for sid, q, c in zip(ids, quality, contrib):
        lines.append(f"{sid}\t{q:.6g}\t{c:.6g}\tunavailable")
    lines.append(f"#mean_G-Qua\t{np.mean(quality):.6g}")
    lines.append(f"#G-Div_TMD\t{tmd:.6g}")
    for i, v in enumerate(vdiv):
        lines.append(f"#V-Div_view{i}\t{v:.6g}")
    if vdiv:
        lines.append(f"#V-Div_mean\t{np.mean(vdiv):.6g}")
    lines.append("#V-Qua\tunavailable (SIFID needs a pretrained network)")
    report = "\n".join(lines) + "\n"
    if args.out:
        _ensure_parent(args.out)
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    return 0


# ------------------------------------------------------------------ plumbing

def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _with_suffix(path: str, tag: str) -> str:
    p = Path(path)
    return str(p.with_name(p.stem + tag + p.suffix))


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _add_render_flags(p: argparse.ArgumentParser, flag: str = "--render") -> None:
    if flag == "--render":
        p.add_argument("--render", help="camera spec (hemisphere:K:R or a camera file) to render outputs")
    p.add_argument("--resolution", type=lambda s: tuple(int_list(s)), default=(256, 256), help="W,H")
    p.add_argument("--focal", type=float, default=render.DEFAULT_FOCAL, help="focal length in pixels")
    p.add_argument("--step", type=float, default=None, help="ray step (default half a voxel)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxsyn", description="Patch-based synthesis of voxel radiance scenes.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-exemplar", help="write a procedural exemplar grid")
    p.add_argument("--kind", required=True, choices=sorted(PROCEDURAL_KINDS))
    p.add_argument("--dims", required=True, type=dims_arg)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--high-res-dims", type=dims_arg, help="also write a higher-resolution copy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_exemplar)

    p = sub.add_parser("build-pyramid", help="downsample an exemplar into pyramid levels")
    _add_source(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_pyramid)

    p = sub.add_parser("generate", help="random synthesis, one mapping per seed")
    _add_source(p)
    _add_config_flags(p)
    p.add_argument("--seeds", type=parse_seeds, default=[0], help="e.g. 1..10 or 1,3,5")
    p.add_argument("--out", required=True)
    p.add_argument("--readout", action="store_true", help="also write the resolved radiance grid")
    _add_render_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("retarget", help="synthesise at new target dims")
    _add_source(p)
    _add_config_flags(p)
    p.add_argument("--target-dims", required=True, type=dims_arg)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--readout", action="store_true")
    _add_render_flags(p)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("analogy", help="patches of the exemplar, layout of another scene")
    _add_source(p)
    _add_config_flags(p)
    p.add_argument("--structure", required=True, help="VXG of scene B, or procedural:KIND:X,Y,Z[:SEED]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--readout", action="store_true")
    _add_render_flags(p)
    p.set_defaults(func=cmd_analogy)

    p = sub.add_parser("edit", help="re-synthesise from an edited mapping proxy")
    _add_source(p)
    _add_config_flags(p)
    p.add_argument("--proxy", required=True, help="VXM mapping at the edit scale dims")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--readout", action="store_true")
    _add_render_flags(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("redecorate", help="read a mapping through a different exemplar")
    p.add_argument("--mapping", required=True)
    p.add_argument("--exemplar", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_redecorate)

    p = sub.add_parser("render", help="render a grid or a mapping+exemplar pair")
    p.add_argument("--scene", required=True, help="VXG grid or VXM mapping")
    p.add_argument("--exemplar", help="exemplar VXG when --scene is a mapping")
    p.add_argument("--cameras", default=f"hemisphere:{render.DEFAULT_VIEWS}:{render.DEFAULT_RADIUS}")
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true")
    _add_render_flags(p, "--cameras")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", help="quality and diversity metrics for generated scenes")
    p.add_argument("--exemplar", required=True)
    p.add_argument("--scenes", required=True, nargs="+", help="VXG grids or VXM mappings")
    p.add_argument("--no-diversity", action="store_true")
    p.add_argument("--cameras", default="hemisphere:4:2.5")
    p.add_argument("--quality-points", type=int, default=metrics.QUALITY_POINTS)
    p.add_argument("--diversity-points", type=int, default=metrics.DIVERSITY_POINTS)
    p.add_argument("--patch-centers", type=int, default=metrics.PATCH_CENTERS)
    p.add_argument("--patch-points", type=int, default=metrics.PATCH_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the report here")
    _add_render_flags(p, "--cameras")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"voxsyn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"voxsyn: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (OSError, io.FormatError) as exc:
        print(f"voxsyn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
