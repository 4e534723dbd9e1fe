"""Command-line entry point: ``omniloss <command> [options]``.

Commands
--------
grad-check   finite-difference check of every loss and a G -> D -> loss chain
paper-table  gradient magnitudes of the omni-loss at the balance probe points
train        train a variant, write metrics.csv, collapse.txt and a checkpoint
sample       render one image from a checkpoint at any resolution (PPM)
invert       restore a degraded image with a trained generator

Exit status is 0 on success, 1 when a check or numerical run fails and 2 on
usage errors (bad flags, missing or malformed files).
"""

import argparse
import csv
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .checks import gradient_table, run_grad_checks
from .exceptions import NonFiniteError, OmniLossError
from .inr import INRGenerator
from .inversion import Degradation, InversionConfig, bilinear_upsample, degrade, invert, psnr
from .nn import Discriminator, Generator, load_arrays, save_arrays
from .optim import DECAY_PRESETS, truncated_sample
from .toydata import PRNG_NAME, MetricsRow
from .trainer import VARIANTS, TrainConfig, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- files

def write_ppm(path, image):
    """Binary P6, maxval 255; ``[-1, 1]`` maps to ``round((v + 1) * 127.5)``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise UsageError(f"cannot write image of shape {image.shape}")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    H, W, _ = image.shape
    data = np.clip(np.round((image + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _ppm_tokens(raw, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_ppm(path):
    """Read a P6 file written by :func:`write_ppm`; values back in ``[-1, 1]``."""
    raw = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _ppm_tokens(raw, 4)
        W, H, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError):
        raise UsageError(f"{path}: not a PPM file") from None
    if magic != b"P6" or maxval != 255:
        raise UsageError(f"{path}: only binary P6 with maxval 255 is supported")
    data = np.frombuffer(raw[offset:offset + H * W * 3], dtype=np.uint8)
    if data.size != H * W * 3:
        raise UsageError(f"{path}: truncated pixel data")
    return data.reshape(H, W, 3).astype(np.float64) / 127.5 - 1.0


def write_manifest(path, command, config, seed, started):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "prng": PRNG_NAME,
        "version": __version__,
        "duration_seconds": round(time.perf_counter() - started, 3),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsRow.FIELDS)
        for row in rows:
            w.writerow([repr(v) for v in row.as_list()])


def save_checkpoint(path, G, D, config):
    arrays = {f"G.{k}": v for k, v in G.parameters().items()}
    arrays.update({f"D.{k}": v for k, v in D.parameters().items()})
    kind = "inr" if isinstance(G, INRGenerator) else "direct"
    meta = {"generator_kind": kind, "generator": G.config(),
            "discriminator": D.config(), "train_config": config.to_dict()}
    save_arrays(path, arrays, meta)


def load_checkpoint(path):
    """``(G, D, meta)`` from a checkpoint written by ``train``."""
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} not found")
    try:
        arrays, meta = load_arrays(path)
        gcfg = dict(meta["generator"])
        if meta["generator_kind"] == "inr":
            G = INRGenerator(**gcfg)
        else:
            G = Generator(**gcfg)
        D = Discriminator(**meta["discriminator"])
    except (OmniLossError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: unreadable checkpoint ({exc})") from None
    G.load_parameters({k[2:]: v for k, v in arrays.items() if k.startswith("G.")})
    D.load_parameters({k[2:]: v for k, v in arrays.items() if k.startswith("D.")})
    return G, D, meta


# ---------------------------------------------------------------- config

def _coerce(value, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        kind = type(default[0]) if default else int
        return tuple(kind(p) for p in parts)
    return value


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment."""
    if not Path(path).is_file():
        raise UsageError(f"config file {path} not found")
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_train_config(args):
    raw = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        raw[key.strip().replace("-", "_")] = value.strip()
    preset = raw.pop("preset", "no-decay")
    for flag in ("variant", "seed", "steps", "task"):
        if getattr(args, flag) is not None:
            raw[flag] = str(getattr(args, flag))
    if args.preset is not None:
        preset = args.preset
    if preset not in DECAY_PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(DECAY_PRESETS)}")
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    kw = {}
    for key, value in raw.items():
        if key not in defaults:
            raise UsageError(f"unknown configuration key {key!r}")
        try:
            kw[key] = _coerce(value, defaults[key])
        except ValueError as exc:
            raise UsageError(f"{key}: {exc}") from None
    # decay coefficients given explicitly win over the preset
    explicit = {k: kw.pop(k) for k in ("weight_decay_d", "weight_decay_g") if k in kw}
    cfg = TrainConfig(**kw).with_preset(preset)
    for k, v in explicit.items():
        setattr(cfg, k, v)
    return cfg, preset


# ---------------------------------------------------------------- commands

def cmd_grad_check(args):
    results = run_grad_checks(args.trials, seed=args.seed)
    width = max(len(r.op) for r in results)
    print(f"{'op':<{width}}  trials  worst_rel_err  status")
    failed = False
    for r in results:
        ok = r.passed(args.tol)
        failed |= not ok
        print(f"{r.op:<{width}}  {r.trials:>6}  {r.worst:13.3e}  {'ok' if ok else 'FAIL'}")
    print(f"tolerance {args.tol:g}: {'FAILED' if failed else 'all passed'}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_paper_table(args):
    print("panel point inputs            |grad 1| |grad 2|")
    for panel, point, inputs, g1, g2 in gradient_table():
        print(f"{panel:<5} {point:<5} {inputs:<17} {g1:7.2f}  {g2:7.2f}")
    return EXIT_OK


def cmd_train(args):
    started = time.perf_counter()
    cfg, preset = build_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg)
    write_metrics(out / "metrics.csv", result.rows)
    rep = result.collapse
    (out / "collapse.txt").write_text(
        f"collapsed: {str(rep.collapsed).lower()}\n"
        f"step: {rep.step}\n"
        f"peak/trough: {rep.peak!r}/{rep.trough!r}\n")
    save_checkpoint(out / "checkpoint.bin", result.generator, result.discriminator, cfg)
    config = dict(cfg.to_dict(), preset=preset)
    write_manifest(out / "manifest.json", "train", config, cfg.seed, started)
    last = result.rows[-1] if result.rows else None
    if last is not None:
        print(f"step {last.step}: d_loss {last.d_loss:.4f} g_loss {last.g_loss:.4f} "
              f"coverage {last.mode_coverage:.3f} fidelity {last.class_fidelity:.3f} "
              f"hq {last.high_quality_fraction:.3f}")
    print(f"collapsed: {str(rep.collapsed).lower()} (step {rep.step}, "
          f"peak {rep.peak:.3f}, trough {rep.trough:.3f})")
    if result.aborted:
        print("training aborted on a non-finite loss", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sample(args):
    started = time.perf_counter()
    G, _, meta = load_checkpoint(args.checkpoint)
    if meta["generator_kind"] != "inr":
        raise UsageError("checkpoint has a direct sample head, not an image generator")
    H = args.height or G.image_size[0]
    W = args.width or G.image_size[1]
    if H < 1 or W < 1:
        raise UsageError("height and width must be >= 1")
    if not 0 <= args.cls < G.n_classes:
        raise UsageError(f"class must lie in [0, {G.n_classes})")
    rng = np.random.default_rng(args.seed)
    z = (rng.standard_normal((1, G.z_dim)) if args.sigma is None
         else truncated_sample(rng, G.z_dim, args.sigma, size=1))
    image = G.forward(z, np.array([args.cls]), size=(H, W))[0]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, image)
    config = {"checkpoint": str(args.checkpoint), "class": args.cls, "height": H,
              "width": W, "sigma": args.sigma, "z": z[0].tolist()}
    write_manifest(out.with_name(out.name + ".manifest.json"), "sample", config,
                   args.seed, started)
    print(f"wrote {out} ({H}x{W})")
    return EXIT_OK


def cmd_invert(args):
    started = time.perf_counter()
    G, D, _ = load_checkpoint(args.checkpoint)
    if not isinstance(G, INRGenerator):
        raise UsageError("inversion needs an image generator checkpoint")
    if not Path(args.target).is_file():
        raise UsageError(f"target {args.target} not found")
    target = read_ppm(args.target)
    try:
        d = Degradation.parse(args.degrade)
    except OmniLossError as exc:
        raise UsageError(str(exc)) from None
    native = G.image_size
    full_res = target.shape[:2] == tuple(native)
    observation = degrade(target, d) if full_res else target
    if d.kind == "grayscale" and not full_res:
        observation = observation.mean(axis=2, keepdims=True)
    layers = tuple(range(D.depth)) if args.layers is None else tuple(args.layers)
    cfg = InversionConfig(steps=args.steps, lr_z=args.lr, finetune_theta=args.finetune,
                          lr_theta=args.lr_theta, layers=layers, init=args.init,
                          k=args.k, seed=args.seed)
    cls = args.cls
    if cls is None:
        # pick the class whose initial state fits the observation best
        starts = [invert(G, D, observation, d, InversionConfig(
            steps=0, layers=layers, init=args.init, k=args.k, seed=args.seed), cls=c)
            for c in range(G.n_classes)]
        cls = int(np.argmin([s.initial for s in starts]))
    size = (args.height or native[0], args.width or native[1])
    res = invert(G, D, observation, d, cfg, cls=cls, size=size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / "restored.ppm", res.restored)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "objective"])
        for k, v in enumerate(res.trace):
            w.writerow([k, repr(v)])
    report = [f"class: {cls}", f"objective_initial: {res.initial!r}",
              f"objective_final: {res.final!r}"]
    if full_res:
        native_restored = res.restored if size == tuple(native) else \
            G.forward(res.z[None], np.array([cls]))[0]
        report.append(f"psnr_db: {psnr(native_restored, target):.4f}")
        if d.kind == "downsample":
            base = bilinear_upsample(observation, *native)
            report.append(f"psnr_bilinear_db: {psnr(base, target):.4f}")
    (out / "report.txt").write_text("\n".join(report) + "\n")
    config = {"checkpoint": str(args.checkpoint), "target": str(args.target),
              "degrade": str(d), "class": cls, "size": list(size),
              "inversion": {f.name: getattr(cfg, f.name) for f in fields(cfg)}}
    write_manifest(out / "manifest.json", "invert", config, args.seed, started)
    print("\n".join(report))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="omniloss", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grad-check", help="finite-difference gradient checks")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)

    t = sub.add_parser("paper-table", help="omni-loss gradient balance table")
    t.set_defaults(func=cmd_paper_table)

    tr = sub.add_parser("train", help="train a conditional GAN variant")
    tr.add_argument("--variant", choices=VARIANTS)
    tr.add_argument("--preset", choices=sorted(DECAY_PRESETS))
    tr.add_argument("--seed", type=int)
    tr.add_argument("--steps", type=int)
    tr.add_argument("--task", choices=("ring", "image"))
    tr.add_argument("--config", help="file of 'key = value' lines")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override any configuration key (repeatable)")
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="render an image from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--class", dest="cls", type=int, default=0)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--sigma", type=float, help="truncation threshold")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output .ppm file")
    s.set_defaults(func=cmd_sample)

    v = sub.add_parser("invert", help="restore a degraded image")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--target", required=True, help="PPM, full resolution or degraded")
    v.add_argument("--degrade", default="identity",
                   help="identity, grayscale or downsample:FACTOR")
    v.add_argument("--out", required=True)
    v.add_argument("--class", dest="cls", type=int)
    v.add_argument("--steps", type=int, default=InversionConfig.steps)
    v.add_argument("--lr", type=float, default=InversionConfig.lr_z)
    v.add_argument("--finetune", action="store_true", help="also update generator weights")
    v.add_argument("--lr-theta", type=float, default=InversionConfig.lr_theta)
    v.add_argument("--layers", type=int, nargs="+")
    v.add_argument("--init", choices=("zero", "random", "best_of_k"), default="random")
    v.add_argument("--k", type=int, default=InversionConfig.k)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--height", type=int)
    v.add_argument("--width", type=int)
    v.set_defaults(func=cmd_invert)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"omniloss {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"omniloss {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OmniLossError as exc:
        print(f"omniloss {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
