"""Command-line entry point: ``rmm <subcommand> ...``.

Exit status is 0 on success, 1 on a contract error (reported on stderr as a
single ``ERR:<code>:<message>`` line) and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import contextlib
import glob
import json
import os
import sys
import warnings

import numpy as np

from .config import SECTIONS, RunConfig, UnknownKey, keys_help
from .errors import ContractError, IOFailure, TrainingDiverged

LOCK_NAME = ".rmm.lock"


class Locked(ContractError):
    code = "LOCKED"


class GradcheckFailed(ContractError):
    code = "GRADCHECK"


@contextlib.contextmanager
def output_lock(out_dir):
    """Exclusive lock file inside ``out_dir`` for the duration of a command."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise Locked(f"{out_dir} is in use by another run (remove {path} if stale)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)


def _png_files(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.png")))
        if not files:
            raise IOFailure(f"no PNG files in {path}")
        return files
    if not os.path.exists(path):
        raise IOFailure(f"no such file: {path}")
    return [path]


def _require(path):
    if not os.path.exists(path):
        raise IOFailure(f"no such file: {path}")
    return path


# -- subcommands ----------------------------------------------------------------------
def cmd_synth_data(args, rc):
    from .pipeline.dataset import save_dataset, synth_dataset

    with output_lock(args.out_dir):
        ds = synth_dataset(rc["data.count"], rc["data.resolution"], args.seed)
        save_dataset(ds, args.out_dir)
        rc.echo(args.out_dir)
    print(f"wrote {len(ds)} images to {args.out_dir}")


def cmd_degrade(args, rc):
    from .degradation import DegradationConfig, degrade, substream
    from .imageio import read_png, write_png

    files = _png_files(args.in_dir)
    ranges = rc.degrade_ranges()
    with output_lock(args.out_dir):
        rows = []
        for i, path in enumerate(files):
            cfg = DegradationConfig.sample(substream(args.seed, i), ranges)
            lq, _ = degrade(read_png(path), cfg)
            name = os.path.basename(path)
            write_png(os.path.join(args.out_dir, name), lq)
            rows.append({"index": i, "source": path, "file": name, "config": cfg.to_dict()})
        with open(os.path.join(args.out_dir, "manifest.jsonl"), "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        rc.echo(args.out_dir)
    print(f"degraded {len(rows)} images into {args.out_dir}")


def cmd_train(args, rc):
    from .pipeline.dataset import load_dataset
    from .pipeline.train import Trainer

    gen_cfg = rc.generator_config()
    train_cfg = rc.train_config(args.seed)
    dataset = load_dataset(_require(args.data)) if args.data else None
    with output_lock(args.out_dir):
        rc.echo(args.out_dir)
        trainer = Trainer(gen_cfg, train_cfg, dataset=dataset, out_dir=args.out_dir)
        log_path = os.path.join(args.out_dir, "train.log")
        with open(log_path, "w") as fh:
            def log(line):
                fh.write(line + "\n")
                fh.flush()
                if args.verbose:
                    print(line)
            trainer.run(log=log)
        ckpt = trainer.save(os.path.join(args.out_dir, "model"))
    print(f"trained {train_cfg.steps} steps; checkpoint {ckpt}")


def cmd_restore(args, rc):
    from .imageio import read_png, write_png
    from .pipeline.inference import load_model, restore, retrieve_code

    model, bank = load_model(_require(args.checkpoint), args.bank and _require(args.bank))
    files = _png_files(args.input)
    with output_lock(args.out_dir):
        rows = []
        for i, path in enumerate(files):
            lq = read_png(path)
            _, slot = retrieve_code(model, bank, lq, warn=False)
            out = restore(lq, model, bank, seed=args.seed + i)
            name = os.path.basename(path)
            write_png(os.path.join(args.out_dir, name), out)
            rows.append({"file": name, "source": path, "slot": slot, "seed": args.seed + i})
        with open(os.path.join(args.out_dir, "restore.jsonl"), "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        rc.echo(args.out_dir)
    print(f"restored {len(rows)} images into {args.out_dir}")


def cmd_wpd(args, rc):
    from .imageio import read_png, write_png
    from .tensor import write_tensor
    from .wavelet import reflect_pad, subband_grid, wavelet_style_code, wpd_forward

    levels = args.levels if args.levels is not None else rc["wpd.levels"]
    image = read_png(_require(args.image))
    padded, orig = reflect_pad(image, levels)
    tree = wpd_forward(padded, levels, orig)
    with output_lock(args.out_dir):
        width = len(str(tree.band_count - 1))
        for k in range(tree.band_count):
            write_tensor(os.path.join(args.out_dir, f"band_{k:0{width}d}.mmt"), tree.subbands[:, k])
        write_png(os.path.join(args.out_dir, "grid.png"), subband_grid(tree))
        code = wavelet_style_code(tree, rc["wpd.pooling"])
        with open(os.path.join(args.out_dir, "code.txt"), "w") as fh:
            fh.write(" ".join(repr(float(v)) for v in code) + "\n")
        rc.echo(args.out_dir)
    print(f"{tree.band_count} subbands of {tree.subbands.shape[2]}x{tree.subbands.shape[3]}, "
          f"code length {len(code)}")


ATTN_NAMES = ("S_I", "N_I", "W_I", "S_L", "N_L", "W_L", "O")


def cmd_dump_attn(args, rc):
    from .imageio import read_png, write_png
    from .pipeline.inference import RestorationModel, load_model, restore
    from .pipeline.networks import Generator, QueryEncoder
    from .memory import MemoryBank
    from .tensor import write_tensor

    if args.checkpoint:
        model, bank = load_model(_require(args.checkpoint))
    else:
        cfg = rc.generator_config()
        rng = np.random.default_rng(args.seed)
        model = RestorationModel(cfg, Generator(cfg, rng), QueryEncoder(rng))
        bank = MemoryBank(1, 64, cfg.wavelet_dim)
    lq = read_png(_require(args.image))
    record = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        restore(lq, model, bank, seed=args.seed, record=record)
    with output_lock(args.out_dir):
        for j, maps in enumerate(record):
            stack = np.stack([maps[name][0, 0] if maps[name].shape[1] == 1
                              else maps[name][0].mean(axis=0) for name in ATTN_NAMES])
            write_tensor(os.path.join(args.out_dir, f"block{j}_attn.mmt"), stack)
            h, w = stack.shape[1:]
            grid = np.ones((h + 2, len(ATTN_NAMES) * (w + 2)))
            for t, tile in enumerate(stack):
                grid[1:h + 1, t * (w + 2) + 1:t * (w + 2) + 1 + w] = tile
            write_png(os.path.join(args.out_dir, f"block{j}_attn.png"), grid[None])
        with open(os.path.join(args.out_dir, "attn_order.txt"), "w") as fh:
            fh.write(" ".join(ATTN_NAMES) + "\n")
        rc.echo(args.out_dir)
    print(f"wrote attention maps for {len(record)} blocks")


def cmd_memory(args, rc):
    from .memory import MemoryBank, bank_stats

    bank = MemoryBank.load(_require(args.bank))
    if args.action == "stats":
        print(json.dumps(bank_stats(bank, args.bins), sort_keys=True))
        return
    lines = []
    for i in bank.occupied_indices():
        lines.append(json.dumps({"slot": int(i), "last_access": int(bank.last_access[i]),
                                 "key": bank.keys[i].tolist(), "value": bank.values[i].tolist()}))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_metrics(args, rc):
    from .imageio import read_png
    from .metrics import evaluate_pair

    names_a = {os.path.basename(p) for p in _png_files(args.dir_a)}
    names_b = {os.path.basename(p) for p in _png_files(args.dir_b)}
    common = sorted(names_a & names_b)
    if not common:
        raise IOFailure("the two directories share no PNG file names")
    rows = []
    for name in common:
        a = read_png(os.path.join(args.dir_a, name))
        b = read_png(os.path.join(args.dir_b, name))
        if a.shape != b.shape:
            raise ContractError(f"{name}: shapes differ {a.shape} vs {b.shape}")
        rows.append({"file": name, **evaluate_pair(a, b)})
    print(f"{'file':<24}{'psnr':>10}{'ssim':>10}{'ms_ssim':>10}")
    for r in rows:
        print(f"{r['file']:<24}{r['psnr']:>10.4f}{r['ssim']:>10.6f}{r['ms_ssim']:>10.6f}")
    finite = [r["psnr"] for r in rows if np.isfinite(r["psnr"])]
    agg = {"count": len(rows), "psnr": float(np.mean(finite)) if finite else float("inf"),
           "ssim": float(np.mean([r["ssim"] for r in rows])),
           "ms_ssim": float(np.mean([r["ms_ssim"] for r in rows]))}
    print(f"{'mean':<24}{agg['psnr']:>10.4f}{agg['ssim']:>10.6f}{agg['ms_ssim']:>10.6f}")
    for r in rows:
        print("METRIC " + json.dumps(r, sort_keys=True))
    print("AGGREGATE " + json.dumps(agg, sort_keys=True))


def cmd_gradcheck(args, rc):
    from .gradcheck import TOLERANCE, run_all

    results = run_all(args.seed, args.module or None)
    failed = []
    for module, cases in results.items():
        worst = max(c[1] for c in cases)
        for name, err, n in cases:
            print(f"  {module}.{name}: max_rel_err={err:.3e} coords={n}")
        status = "ok" if worst < TOLERANCE else "FAIL"
        print(f"{module}: max_rel_err={worst:.3e} {status}")
        if worst >= TOLERANCE:
            failed.append(module)
    if failed:
        raise GradcheckFailed(f"relative error >= {TOLERANCE:g} in {', '.join(failed)}")


# -- parser -----------------------------------------------------------------------------
def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="rmm", description="Wavelet-memory restoration toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog=keys_help(SECTIONS[name]),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _add_common(p)
        p.set_defaults(func=func)
        return p

    p = add("synth-data", cmd_synth_data, "write procedural toy faces and a manifest")
    p.add_argument("out_dir")

    p = add("degrade", cmd_degrade, "degrade every PNG of a directory, one manifest line each")
    p.add_argument("in_dir")
    p.add_argument("out_dir")

    p = add("train", cmd_train, "train the restoration model on the toy dataset")
    p.add_argument("out_dir")
    p.add_argument("--data", help="dataset directory from synth-data (default: generate)")
    p.add_argument("--verbose", action="store_true", help="echo log lines to stdout")

    p = add("restore", cmd_restore, "restore low-quality images with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input", help="PNG file or directory")
    p.add_argument("out_dir")
    p.add_argument("--bank", help="memory bank file (default: the one the checkpoint references)")

    p = add("wpd", cmd_wpd, "wavelet packet subbands of an image as tensor files plus a grid")
    p.add_argument("--levels", type=int, default=None, help="decomposition levels (wpd.levels)")
    p.add_argument("image")
    p.add_argument("out_dir")

    p = add("dump-attn", cmd_dump_attn, "write per-block attention and gate maps as image grids")
    p.add_argument("image")
    p.add_argument("out_dir")
    p.add_argument("--checkpoint", help="trained checkpoint (default: untrained, from config)")

    p = add("memory", cmd_memory, "inspect a memory bank file")
    p.add_argument("action", choices=("dump", "stats"))
    p.add_argument("bank")
    p.add_argument("--out", help="dump destination (default stdout)")
    p.add_argument("--bins", type=int, default=10, help="histogram bins for stats")

    p = add("metrics", cmd_metrics, "PSNR / SSIM / MS-SSIM between same-named PNGs of two directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient suites for every module")
    p.add_argument("--module", action="append", help="restrict to a module (repeatable)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = RunConfig()
        if args.config:
            rc.load_file(args.config)
        rc.apply_overrides(args.set)
    except UnknownKey as exc:
        parser.print_usage(sys.stderr)
        print(f"ERR:CONFIG:{exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"ERR:{exc.code}:{exc}", file=sys.stderr)
        return 1
    try:
        args.func(args, rc)
    except (ContractError, TrainingDiverged) as exc:
        print(f"ERR:{exc.code}:{exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
