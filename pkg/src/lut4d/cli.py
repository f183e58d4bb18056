"""``lut4d`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure (for example a non-finite loss while fitting).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import EngineConfig, apply_overrides, load_config
from .context import generate_context, init_context_params, luminance_context
from .errors import DataError, NumericError
from .fitting import fit
from .lut import (BasisLutBank, Lut3D, Lut4D, apply_lut3d, apply_lut4d, fuse_luts,
                  make_identity_lut3d, make_identity_lut4d)
from .metrics import HIST_BINS, LAB_BINS, hist_corr, lab_bhattacharyya, psnr, ssim
from .style import FeatureProvider, extract_features, generate_weights, init_weight_generator

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lut4d")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _json_value(v):
    """JSON has no infinity; it is written as the string ``"inf"``."""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def _is_cube(path) -> bool:
    return str(path).lower().endswith(".cube")


def read_any_lut(path):
    return formats.read_cube(path) if _is_cube(path) else formats.read_lut4d(path)


# -- init -----------------------------------------------------------------

def cmd_init(args, cfg: EngineConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    if args.kind == "bank":
        bank = BasisLutBank.random(cfg.n_bases, cfg.lut_size, cfg.context_bins, cfg.basis_scale, seed)
        formats.write_bank(args.output, bank)
    elif args.kind == "wg":
        formats.write_weights(args.output, init_weight_generator(
            cfg.pyramid_channels, cfg.n_bases, cfg.reduce_channels, cfg.mlp_hidden, seed))
    elif args.kind == "cg":
        formats.write_weights(args.output, init_context_params(
            cfg.encoder_channels, cfg.residual_blocks, cfg.attention_dim, seed))
    elif _is_cube(args.output):
        formats.write_cube(args.output, make_identity_lut3d(cfg.lut_size), title="identity")
    else:
        formats.write_lut4d(args.output, make_identity_lut4d(cfg.lut_size, cfg.context_bins))
    print(f"wrote {args.kind} -> {args.output}")
    return EXIT_OK


# -- fuse -----------------------------------------------------------------

def cmd_fuse(args, cfg: EngineConfig) -> int:
    if (args.style is None) == (args.alpha is None):
        raise UsageError("fuse: give exactly one of --style and --alpha")
    bank = formats.read_bank(args.bank)
    if args.alpha is not None:
        alpha = formats.read_alpha(args.alpha)
        if np.any(alpha < 0):
            raise DataError("alpha weights must be non-negative")
    else:
        if args.provider == "file":
            provider = FeatureProvider.from_file(args.style)
            channels = None
        else:
            provider = FeatureProvider.builtin(cfg.seed, cfg.pyramid_channels)
            channels = cfg.pyramid_channels
        style = None if args.provider == "file" else formats.read_ppm(args.style)
        levels = extract_features(style, provider)
        if args.wg_weights:
            params = formats.read_weights(args.wg_weights)
        else:
            channels = channels or tuple(l.shape[0] for l in levels)
            params = init_weight_generator(channels, bank.count, cfg.reduce_channels,
                                           cfg.mlp_hidden, cfg.seed)
        alpha = generate_weights(levels, params)
    lut = fuse_luts(bank, alpha, clamp=True)
    formats.write_lut4d(args.output, lut)
    top = np.argsort(-alpha, kind="stable")[:5]
    print(f"alpha: n={alpha.size} sum={alpha.sum():.6f} min={alpha.min():.6g} max={alpha.max():.6g}")
    print("top: " + ", ".join(f"{i}:{alpha[i]:.4f}" for i in top))
    print(f"wrote D={lut.size} C={lut.bins} LUT -> {args.output}")
    return EXIT_OK


# -- context --------------------------------------------------------------

def cmd_context(args, cfg: EngineConfig) -> int:
    content = formats.read_ppm(args.content)
    if args.style is not None:
        style = formats.read_ppm(args.style)
        if args.cg_weights:
            params = formats.read_weights(args.cg_weights)
        else:
            params = init_context_params(cfg.encoder_channels, cfg.residual_blocks,
                                         cfg.attention_dim, cfg.seed)
        ctx = generate_context(content, style, params, cfg.style_max_side)
        how = "cross-attention"
    elif args.fallback == "luminance":
        ctx = luminance_context(content, args.radius)
        how = f"luminance r={args.radius}"
    else:
        raise UsageError("context: give --style or --fallback luminance")
    formats.write_ctx(args.output, ctx)
    print(f"context ({how}) {ctx.shape[1]}x{ctx.shape[0]} range [{ctx.min():.4f}, {ctx.max():.4f}] -> {args.output}")
    return EXIT_OK


# -- apply ----------------------------------------------------------------

def _context_for(spec: str | None, content) -> np.ndarray:
    if spec is None:
        raise UsageError("apply: a 4D LUT needs --context (a .pgm map or auto:luminance[:RADIUS])")
    if spec.startswith("auto:"):
        kind, _, radius = spec[5:].partition(":")
        if kind != "luminance":
            raise UsageError(f"apply: unknown automatic context {kind!r}")
        try:
            r = int(radius) if radius else 0
        except ValueError:
            raise UsageError(f"apply: bad radius {radius!r}") from None
        return luminance_context(content, r)
    return formats.read_ctx(spec)


def cmd_apply(args, cfg: EngineConfig) -> int:
    if args.threads < 1:
        raise UsageError("apply: --threads must be >= 1")
    content = formats.read_ppm(args.content)
    lut = read_any_lut(args.lut)
    if isinstance(lut, Lut3D):
        out = apply_lut3d(lut, content, threads=args.threads)
    else:
        ctx = _context_for(args.context, content)
        out = apply_lut4d(lut, content, ctx, threads=args.threads)
    formats.write_ppm(args.output, out)
    print(f"applied {args.lut} to {args.content} -> {args.output}")
    return EXIT_OK


# -- fit ------------------------------------------------------------------

def load_pairs(directory) -> list[tuple[str, np.ndarray, np.ndarray, np.ndarray]]:
    """``NAME_content.ppm`` + ``NAME_target.ppm`` (+ optional ``NAME_ctx.pgm``).

    Without a context file the luminance map of the content is used.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{directory} is not a directory")
    out = []
    for cpath in sorted(d.glob("*_content.ppm")):
        name = cpath.name[: -len("_content.ppm")]
        tpath = d / f"{name}_target.ppm"
        if not tpath.is_file():
            raise DataError(f"{cpath.name} has no matching {tpath.name}")
        content = formats.read_ppm(cpath)
        target = formats.read_ppm(tpath)
        xpath = d / f"{name}_ctx.pgm"
        ctx = formats.read_ctx(xpath) if xpath.is_file() else luminance_context(content)
        if content.shape != target.shape or ctx.shape != content.shape[:2]:
            raise DataError(f"pair {name!r}: content, target and context sizes differ")
        out.append((name, content, ctx, target))
    if not out:
        raise DataError(f"no *_content.ppm files in {directory}")
    return out


def cmd_fit(args, cfg: EngineConfig) -> int:
    overrides = {"mode": args.mode}
    for key in ("steps", "seed", "learning_rate", "lambda_rec", "lambda_tv", "lambda_mn", "sample_pixels"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    cfg = apply_overrides(cfg, overrides)
    pairs = load_pairs(args.pairs)
    triples = [(c, x, t) for _, c, x, t in pairs]
    if cfg.fit.mode == "lut_entries":
        init = formats.read_lut4d(args.init) if args.init else make_identity_lut4d(cfg.lut_size, cfg.context_bins)
    else:
        if args.bank:
            init = formats.read_bank(args.bank)
        else:
            init = BasisLutBank.random(cfg.n_bases, cfg.lut_size, cfg.context_bins, cfg.basis_scale, cfg.seed)

    def progress(step, terms):
        if args.verbose and (step % 100 == 0 or step == cfg.fit.steps - 1):
            print(f"step {step:5d} total {terms['total']:.6g} rec {terms['rec']:.6g} "
                  f"tv {terms['tv']:.6g} mn {terms['mn']:.6g}")

    result = fit(triples, cfg.fit, init, callback=progress)
    lut = Lut4D(result.lut.clamped().table.astype(np.float32))
    formats.write_lut4d(args.output, lut)
    trace_path = args.trace or str(Path(args.output).with_suffix(".trace.csv"))
    result.write_trace(trace_path)
    if cfg.fit.mode == "alpha":
        alpha_path = args.alpha_out or str(Path(args.output).with_suffix(".alpha"))
        formats.write_alpha(alpha_path, result.params)
        print(f"alpha -> {alpha_path}")
    last = result.trace[-1]
    print(f"fit {cfg.fit.mode}: {cfg.fit.steps} steps, final total {last[4]:.6g} "
          f"(rec {last[1]:.6g}, tv {last[2]:.6g}, mn {last[3]:.6g})")
    if result.out_of_range > 0:
        print(f"note: fitted lattice left [0, 1] by up to {result.out_of_range:.4g}; export is clamped")
    train_psnr = [psnr(apply_lut4d(lut, c, x), t) for _, c, x, t in pairs]
    print(f"train PSNR mean {_fmt_db(float(np.mean(train_psnr)))}")
    if args.holdout:
        held = [psnr(apply_lut4d(lut, c, x), t) for _, c, x, t in load_pairs(args.holdout)]
        print(f"held-out PSNR mean {_fmt_db(float(np.mean(held)))} over {len(held)} pairs")
    print(f"wrote LUT -> {args.output}, trace -> {trace_path}")
    return EXIT_OK


def _fmt_db(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.3f} dB"


# -- metrics --------------------------------------------------------------

def _images_in(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.ppm"))
        if not files:
            raise DataError(f"no .ppm images in {path}")
        return files
    return [p]


def _read_lpips(path) -> dict:
    """``name value`` lines, or a single number for the whole run."""
    scores = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if len(parts) == 1:
                scores["*"] = float(parts[0])
            else:
                scores[parts[0]] = float(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: expected 'name value'") from None
    return scores


def compute_metrics(test, ref, style=None, image_set=None, lpips=None) -> dict:
    tests = _images_in(test)
    refs = _images_in(ref)
    if len(refs) == 1 and len(tests) > 1:
        refs = refs * len(tests)
    if len(tests) != len(refs):
        raise DataError(f"{len(tests)} test images but {len(refs)} references")
    style_img = formats.read_ppm(style) if style else None
    rows = []
    for tp, rp in zip(tests, refs):
        a = formats.read_ppm(tp)
        b = formats.read_ppm(rp)
        rows.append({"test": str(tp), "ref": str(rp), "psnr": psnr(a, b), "ssim": ssim(a, b),
                     "h_corr": hist_corr(a, b if style_img is None else style_img)})
    agg = {"count": len(rows)}
    for key in ("psnr", "ssim", "h_corr"):
        agg[key] = float(np.mean([r[key] for r in rows]))
    doc = {
        "pairs": rows,
        "aggregate": agg,
        "meta": {
            "psnr_peak": 1.0,
            "ssim": {"window": 11, "sigma": 1.5, "k1": 0.01, "k2": 0.03, "channel": "rec709_luma"},
            "h_corr": {"bins": HIST_BINS, "against": "ref" if style_img is None else "style",
                       "definition": "pearson"},
        },
    }
    if image_set is not None:
        files = _images_in(image_set)
        L, a, b = lab_bhattacharyya([formats.read_ppm(f) for f in files])
        doc["lab_bhattacharyya"] = {"L": L, "a": a, "b": b, "images": len(files),
                                    "pairs": len(files) * (len(files) - 1) // 2}
        doc["meta"]["lab_bins"] = {k: {"bins": n, "range": [lo, hi]} for k, (n, lo, hi) in LAB_BINS.items()}
    if lpips is not None:
        scores = _read_lpips(lpips)
        per = {}
        for r in rows:
            name = Path(r["test"]).name
            if name in scores:
                r["lpips_external"] = scores[name]
                per[name] = scores[name]
        vals = list(per.values()) or ([scores["*"]] if "*" in scores else [])
        doc["lpips_external"] = {"mean": float(np.mean(vals)) if vals else None,
                                 "source": str(lpips), "matched": len(per)}
    return doc


def cmd_metrics(args, cfg: EngineConfig) -> int:
    doc = _json_value(compute_metrics(args.test, args.ref, args.style, args.set, args.lpips))
    text = json.dumps(doc, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    if args.json:
        print(text)
    else:
        a = doc["aggregate"]
        print(f"pairs {a['count']}: PSNR {a['psnr']}  SSIM {a['ssim']:.4f}  H-Corr {a['h_corr']:.4f}")
        if "lab_bhattacharyya" in doc:
            d = doc["lab_bhattacharyya"]
            print(f"Lab Bhattacharyya over {d['images']} images: L {d['L']}  a {d['a']}  b {d['b']}")
    return EXIT_OK


# -- bench, gradcheck -----------------------------------------------------

def cmd_bench(args, cfg: EngineConfig) -> int:
    from .bench import format_report, run_bench

    if args.iters < 1 or args.threads < 1 or args.width < 1 or args.height < 1:
        raise UsageError("bench: sizes, --threads and --iters must be >= 1")
    lut = read_any_lut(args.lut) if args.lut else None
    rep = run_bench(args.width, args.height, args.threads, args.iters, lut=lut, cfg=cfg)
    if args.output:
        Path(args.output).write_text(json.dumps(rep, indent=2) + "\n")
    print(json.dumps(rep, indent=2) if args.json else format_report(rep))
    return EXIT_OK


def cmd_gradcheck(args, cfg: EngineConfig) -> int:
    from .gradcheck import TOLERANCE, run_gradcheck

    corrupt = None
    if args.corrupt is not None:
        factor = args.corrupt
        corrupt = lambda g: g * factor  # noqa: E731
    results = run_gradcheck(args.seed, args.coords, corrupt)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.mode:12s} coords {r.coords:4d}  max rel error {r.max_rel_error:.3e}  "
              f"(worst at {r.worst_coord})  {status}")
    ok = all(r.passed for r in results)
    print(f"gradcheck {'passed' if ok else 'failed'} (tolerance {TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- wiring ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lut4d", description="Spatially adaptive 4D LUT color engine.")
    p.add_argument("--config", help="preset name or key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="write seeded weights, a basis bank or an identity LUT")
    s.add_argument("kind", choices=["bank", "wg", "cg", "identity"])
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("fuse", help="fuse a basis bank into one 4D LUT")
    s.add_argument("--bank", required=True)
    s.add_argument("--style", help="style image (builtin provider) or pyramid archive (file provider)")
    s.add_argument("--provider", choices=["builtin", "file"], default="builtin")
    s.add_argument("--wg-weights", help="weight generator archive (seeded from config if omitted)")
    s.add_argument("--alpha", help="text file of basis weights")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("context", help="write a 16-bit context map")
    s.add_argument("--content", required=True)
    s.add_argument("--style")
    s.add_argument("--cg-weights", help="context generator archive (seeded from config if omitted)")
    s.add_argument("--fallback", choices=["luminance"])
    s.add_argument("--radius", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_context)

    s = sub.add_parser("apply", help="apply a 4D LUT or .cube to an image")
    s.add_argument("--lut", required=True)
    s.add_argument("--content", required=True)
    s.add_argument("--context", help="context .pgm, or auto:luminance[:RADIUS]")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_apply)

    s = sub.add_parser("fit", help="fit a LUT or basis weights to image pairs")
    s.add_argument("--pairs", required=True, help="directory of NAME_content.ppm / NAME_target.ppm")
    s.add_argument("--mode", choices=["alpha", "lut_entries"], default="lut_entries")
    s.add_argument("--init", help="initial 4D LUT (lut_entries mode; identity if omitted)")
    s.add_argument("--bank", help="basis bank (alpha mode; seeded from config if omitted)")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--learning-rate", dest="learning_rate", type=float)
    s.add_argument("--lambda-rec", dest="lambda_rec", type=float)
    s.add_argument("--lambda-tv", dest="lambda_tv", type=float)
    s.add_argument("--lambda-mn", dest="lambda_mn", type=float)
    s.add_argument("--sample-pixels", dest="sample_pixels", type=int)
    s.add_argument("--holdout", help="directory of held-out pairs to report PSNR on")
    s.add_argument("--trace", help="loss trace CSV (default: OUTPUT with .trace.csv)")
    s.add_argument("--alpha-out", help="alpha mode: weights file (default: OUTPUT with .alpha)")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("metrics", help="PSNR, SSIM, H-Corr and Lab diversity")
    s.add_argument("--test", required=True, help="image or directory")
    s.add_argument("--ref", required=True, help="image or directory")
    s.add_argument("--style", help="style image for H-Corr (default: compare with --ref)")
    s.add_argument("--set", help="directory for pairwise Lab Bhattacharyya distances")
    s.add_argument("--lpips", help="externally computed LPIPS scores")
    s.add_argument("--json", action="store_true", help="print the JSON document")
    s.add_argument("-o", "--output", help="write the JSON document here")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("bench", help="time LUT generation and 4K application")
    s.add_argument("--width", type=int, default=3840)
    s.add_argument("--height", type=int, default=2160)
    s.add_argument("--threads", type=int, default=8)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--lut", help="apply this LUT instead of the generated one")
    s.add_argument("--json", action="store_true")
    s.add_argument("-o", "--output", help="write the JSON report here")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--coords", type=int, default=100)
    s.add_argument("--corrupt", type=float, help="test hook: scale analytic gradients by this factor")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
