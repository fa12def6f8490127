"""Command-line entry point: ``foe <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import networks as nw
from . import optics as op
from .errors import NumericalError
from .tensor import Tensor, no_grad
from .tensor import io as fio

log = logging.getLogger("foe")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
INITS = ("zeros", "pencils_hex", "helix")
DATASET_PRESETS = ("A", "B", "C", "D", "toy")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; route those to the validation code."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


# --- config ------------------------------------------------------------------------

RUN_KEYS = {"optics", "train", "network", "dataset", "init"}


def load_config(path: str | None) -> dict:
    """Run config JSON; a bare OpticsConfig object is accepted as {"optics": ...}."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise ValidationError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if not set(cfg) & RUN_KEYS:
        return {"optics": cfg}
    unknown = set(cfg) - RUN_KEYS
    if unknown:
        raise ValidationError(f"unknown config sections {sorted(unknown)}")
    return cfg


def optics_from(cfg: dict, default=op.toy_config) -> op.OpticsConfig:
    if "optics" not in cfg:
        return default()
    return op.OpticsConfig.from_json(json.dumps(cfg["optics"]))


def dataset_from(cfg: dict, args, optics: op.OpticsConfig) -> dt.PhantomDataset:
    """Phantom source on the camera grid; table presets are shrunk to the camera size."""
    d = dict(cfg.get("dataset", {}))
    name = args.preset or d.pop("preset", "toy")
    d.pop("preset", None)
    h, w = optics.camera_pixels
    z = optics.num_planes
    if name == "toy":
        ds = dt.toy_dataset(planes=z, size=h, nuclei=int(d.pop("nuclei", max(1, 6 * h * w // 256))))
        if h != w:
            raise ValidationError("toy phantoms need a square camera")
    else:
        spec = dt.dataset_spec(name)
        shrink = spec.camera_px[0] / h
        _, vy, vx = spec.voxel_um
        vox = (spec.span_um[0] / z, vy * shrink, vx * shrink)
        params = dt.PhantomParams((z, h, w), vox, int(d.pop("nuclei", 20)),
                                  tuple(d.pop("radius_um", (max(vox), 2 * max(vox)))), (0.5, 1.0))
        ds = dt.PhantomDataset(params, dt.AugmentOptions(flip_z=0.5, flip_y=0.5, brightness=(0.5, 1.5),
                                                         background=(0.0, 0.05)),
                               diameter_um=spec.aperture_diameter_um)
    if d:
        raise ValidationError(f"unknown dataset fields {sorted(d)}")
    return ds


def network_from(cfg: dict, optics: op.OpticsConfig, default: str) -> tuple[str, dict, object]:
    """(preset name, builder overrides sized to the camera, input scale or "auto")."""
    n = dict(cfg.get("network", {}))
    name = n.pop("preset", default)
    scale = n.pop("input_scale", "auto")
    extra = n.pop("args", {})
    if n:
        raise ValidationError(f"unknown network fields {sorted(n)}")
    h, w = optics.camera_pixels
    if h != w:
        raise ValidationError("network presets need a square camera")
    return name, dict(extra, size=h), scale


def phi_from(args, optics: op.OpticsConfig, cfg: dict) -> Tensor:
    if getattr(args, "phi", None):
        phi = fio.read(args.phi)
        if phi.shape != (optics.mask_pixels,) * 2:
            raise ValidationError(f"mask {phi.shape} does not match mask_pixels {optics.mask_pixels}")
        return Tensor(phi)
    name = args.init or cfg.get("init", "zeros")
    if name not in INITS:
        raise ValidationError(f"unknown initialiser {name!r}")
    return op.init_phase_mask(name, optics)


# --- outputs -------------------------------------------------------------------------

def write_pgm(path: Path, img: np.ndarray) -> None:
    """8-bit binary PGM scaled to the image maximum."""
    img = np.asarray(img, float)
    top = img.max()
    scaled = np.zeros(img.shape, np.uint8) if top <= 0 else np.clip(np.round(255 * img / top), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + scaled.tobytes())


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _previews(out: Path, stem: str, vol: np.ndarray) -> None:
    write_pgm(out / f"{stem}_xy.pgm", vol.max(axis=0))
    write_pgm(out / f"{stem}_xz.pgm", vol.max(axis=1))


# --- subcommands ------------------------------------------------------------------

def cmd_psf(args, cfg) -> int:
    optics = optics_from(cfg).validate()
    phi = phi_from(args, optics, cfg)
    with no_grad():
        psf = op.compute_psf_stack(phi, optics).data
    out = _out(args)
    fio.write(out / "psf.fot", psf)
    fio.write(out / "phi.fot", phi.data)
    _previews(out, "psf", psf)
    peak = int(np.argmax(psf.reshape(len(psf), -1).max(axis=1)))
    log.info("psf stack %s; peak plane %d (z=%.3g um)", psf.shape, peak, optics.z_planes_um[peak])
    return EXIT_OK


def _volume_arg(args, optics, cfg) -> np.ndarray:
    if args.volume:
        v = fio.read(args.volume)
    else:
        v = dataset_from(cfg, args, optics)(0, np.random.default_rng(args.seed))
    if v.shape != (optics.num_planes,) + optics.camera_pixels:
        raise ValidationError(f"volume {v.shape} must be (planes, camera H, camera W) = "
                              f"{(optics.num_planes,) + optics.camera_pixels}")
    return v


def cmd_simulate(args, cfg) -> int:
    optics = optics_from(cfg).validate()
    phi = phi_from(args, optics, cfg)
    v = _volume_arg(args, optics, cfg)
    with no_grad():
        mu = op.image_volume(op.compute_psf_stack(phi, optics), Tensor(v))
        mu = Tensor(mu.data * optics.photon_budget)
        c = op.apply_shot_noise(mu, seed=args.seed).data
    out = _out(args)
    fio.write(out / "expected.fot", mu.data)
    fio.write(out / "camera.fot", c)
    write_pgm(out / "camera.pgm", c)
    if not args.volume:
        fio.write(out / "volume.fot", v)
    return EXIT_OK


def _train(args, cfg, mode: str) -> int:
    from .training import ReplicaStore, TrainConfig, estimate_input_scale, train

    optics = optics_from(cfg).validate()
    tcfg = dict(cfg.get("train", {}))
    tcfg.update(mode=mode, seed=args.seed)
    if args.workers is not None:
        tcfg["workers"] = args.workers
    if args.iters is not None:
        tcfg["iterations"] = args.iters
    try:
        tc = TrainConfig.from_dict(tcfg)
    except TypeError as err:
        raise ValidationError(str(err)) from None
    phi = phi_from(args, optics, cfg)
    ds = dataset_from(cfg, args, optics)
    name, kw, scale = network_from(cfg, optics, "fouriernet2d")
    if scale == "auto":
        scale = estimate_input_scale(optics, phi, ds, seed=args.seed)
        log.info("input scale estimated as %.6g", scale)
    spec = nw.preset(name, **kw, scale=float(scale))
    store = ReplicaStore.build(spec, optics.num_planes, seed=args.seed)
    out = _out(args)
    (out / "config.json").write_text(json.dumps({
        "optics": json.loads(optics.to_json()), "train": json.loads(tc.to_json()),
        "network": {"preset": name, "args": {k: v for k, v in kw.items() if k != "size"},
                    "input_scale": scale}}, indent=2))
    log.info("%s training: %d iterations, %d workers", mode, tc.iterations, tc.workers)
    res = train(optics, phi, store, ds, tc, log_path=out / "metrics.jsonl")
    fio.write(out / "phi.fot", res.phi.data)
    save_store(store, out / "decoder")
    if res.records:
        log.info("final loss %.6g", res.records[-1]["loss"])
    return EXIT_OK


def save_store(store, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for k, net in enumerate(store.nets):
        nw.save_checkpoint(net, directory / f"replica_{k:03d}", extra={"replica": k, "depth": store.depth})
    (directory / "store.json").write_text(json.dumps({"replicas": len(store.nets), "depth": store.depth}))


def load_store(directory: Path):
    from .training import ReplicaStore
    try:
        meta = json.loads((directory / "store.json").read_text())
    except FileNotFoundError:
        raise ValidationError(f"{directory} is not a decoder checkpoint (store.json missing)") from None
    return ReplicaStore([nw.load_checkpoint(directory / f"replica_{k:03d}") for k in range(meta["replicas"])])


def cmd_reconstruct(args, cfg) -> int:
    store = load_store(Path(args.checkpoint))
    c = fio.read(args.image)
    with no_grad():
        planes = [net.output_planes(Tensor(c)).data for net in store.nets]
    v_hat = np.concatenate(planes, axis=0)
    if not np.all(np.isfinite(v_hat)):
        raise NumericalError("reconstruction contains non-finite values")
    out = _out(args)
    fio.write(out / "recon.fot", v_hat)
    _previews(out, "recon", v_hat)
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    m = dt.metrics_eval(fio.read(args.truth), fio.read(args.recon))
    text = json.dumps(m, sort_keys=True)
    print(text)
    if args.out:
        (_out(args) / "metrics.json").write_text(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from .verify import run_suite
    reports = run_suite(seed=args.seed, tol=args.tol)
    bad = 0
    for name, rep in reports:
        status = "ok" if rep.ok(args.tol) else "FAIL"
        bad += status == "FAIL"
        print(f"{status:4s} {rep.rel_error:10.3e} {rep.checked:6d}  {rep.name}")
    if args.out:
        (_out(args) / "gradcheck.json").write_text(json.dumps(
            [{"name": rep.name, "rel_error": rep.rel_error, "checked": rep.checked} for _, rep in reports],
            indent=2))
    if bad:
        log.error("%d gradient checks above %.0e", bad, args.tol)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_bench(args, cfg) -> int:
    from .fourier import benchmark
    res = benchmark(size=args.size, repeats=args.repeats, seed=args.seed)
    print(f"{'size':>6s} {'kernel':>7s} {'fourier_ms':>11s} {'direct_ms':>11s} {'ratio':>8s}")
    print(f"{res['size']:6d} {res['direct_kernel']:7d} {res['fourier_ms']:11.3f} "
          f"{res['direct_ms']:11.1f} {res['ratio']:8.1f}")
    if args.out:
        (_out(args) / "bench.json").write_text(json.dumps(res, indent=2))
    return EXIT_OK


def cmd_phantom(args, cfg) -> int:
    name = args.preset or cfg.get("dataset", {}).get("preset", "toy")
    if name == "toy":
        optics = optics_from(cfg)
        v = dataset_from(cfg, args, optics)(0, np.random.default_rng(args.seed))
    else:
        spec = dt.dataset_spec(name, args.divisor)
        vmax = max(spec.voxel_um)
        params = dt.PhantomParams((spec.z_planes,) + spec.camera_px, spec.voxel_um, args.nuclei,
                                  (1.5 * vmax, 3 * vmax), seed=args.seed)
        v = dt.generate_phantom(params)
        if spec.aperture_diameter_um is not None:
            v = dt.aperture_cutout(v, spec.aperture_diameter_um, None, spec.voxel_um)
    out = _out(args)
    fio.write(out / "phantom.fot", v)
    _previews(out, "phantom", v)
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="foe", description="Differentiable snapshot-microscope simulation and reconstruction.")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON run config (optics/train/network/dataset sections) "
                                         "or a bare optics config")
        sp.add_argument("--seed", type=int, default=None,
                        help="random seed (default: the config's train seed, else 0)")
        sp.add_argument("--workers", type=int, default=None, help="shard worker count")
        sp.add_argument("--out", required=out_required, default=None, help="output directory")

    def mask(sp):
        sp.add_argument("--init", choices=INITS, help="phase-mask initialiser (default zeros)")
        sp.add_argument("--phi", help="phase mask FOT1 file (overrides --init)")

    s = sub.add_parser("psf", help="compute a PSF stack and max-projection previews")
    common(s)
    mask(s)
    s.set_defaults(func=cmd_psf)

    s = sub.add_parser("simulate", help="image a volume through a mask and add shot noise")
    common(s)
    mask(s)
    s.add_argument("--volume", help="volume FOT1 file [planes, H, W]; a phantom is drawn if omitted")
    s.add_argument("--preset", choices=DATASET_PRESETS, help="phantom preset when no volume is given")
    s.set_defaults(func=cmd_simulate)

    for name, mode, helptext in (("train-encoder", "joint", "jointly train the mask and a planewise decoder"),
                                 ("train-decoder", "decoder_only", "train a decoder behind a fixed mask")):
        s = sub.add_parser(name, help=helptext)
        common(s)
        mask(s)
        s.add_argument("--iters", type=int, help="training iterations (overrides the config)")
        s.add_argument("--preset", choices=DATASET_PRESETS, help="phantom dataset preset (default toy)")
        s.set_defaults(func=lambda a, c, m=mode: _train(a, c, m))

    s = sub.add_parser("reconstruct", help="run a trained decoder on a camera image")
    common(s)
    s.add_argument("--checkpoint", required=True, help="decoder directory written by training")
    s.add_argument("--image", required=True, help="camera image FOT1 file")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="PSNR, MS-SSIM and high-pass NMSE of a reconstruction")
    common(s, out_required=False)
    s.add_argument("--truth", required=True, help="ground-truth volume FOT1 file")
    s.add_argument("--recon", required=True, help="reconstructed volume FOT1 file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the full pipeline")
    common(s, out_required=False)
    s.add_argument("--tol", type=float, default=1e-4, help="relative error bound (default 1e-4)")
    s.set_defaults(func=cmd_gradcheck, seed=7)

    s = sub.add_parser("bench", help="time Fourier against direct global convolution")
    common(s, out_required=False)
    s.add_argument("--size", type=int, default=256, help="input extent (default 256)")
    s.add_argument("--repeats", type=int, default=5, help="Fourier timing repeats (default 5)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("phantom", help="write a seeded nuclei phantom volume")
    common(s)
    s.add_argument("--preset", choices=DATASET_PRESETS, help="dataset geometry (default toy)")
    s.add_argument("--divisor", type=int, default=8, help="shrink factor for table presets (default 8)")
    s.add_argument("--nuclei", type=int, default=40, help="nucleus count for table presets (default 40)")
    s.set_defaults(func=cmd_phantom)
    return p


def _setup_logging() -> None:
    level = os.environ.get("FOE_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise ValidationError(f"FOE_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr, format="%(levelname)s %(message)s",
                        force=True)


def run(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        parser = build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return EXIT_OK if not exc.code else EXIT_VALIDATION
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_VALIDATION
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ValidationError("--workers must be positive")
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = int(cfg.get("train", {}).get("seed", 0))
        if args.seed < 0:
            raise ValidationError("--seed must be non-negative")
        return args.func(args, cfg)
    except NumericalError as err:
        print(f"foe: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, fio.FotError, FileNotFoundError, KeyError) as err:
        print(f"foe: error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run())
