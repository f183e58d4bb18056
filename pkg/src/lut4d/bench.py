"""Throughput benchmark: LUT generation and per-frame application.

The two stages are timed separately.  Generation runs the style pipeline
(builtin feature provider, seeded weight generator and bank) once per
iteration.  Application times :func:`apply_lut4d` on a synthetic frame; the
context map is computed once beforehand and is not part of the frame time.
"""

from __future__ import annotations

import os
import platform
import time

import numpy as np

from .config import EngineConfig
from .context import luminance_context
from .lut import BasisLutBank, Lut3D, apply_lut3d, apply_lut4d
from .style import FeatureProvider, init_weight_generator, style_to_lut

TARGET_FPS = 16.0
PASS_FPS = 8.0


def synthetic_frame(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Smooth color ramps plus noise, float32 in [0, 1]."""
    rng = np.random.default_rng(seed)
    y = np.linspace(0.0, 1.0, height, dtype=np.float32)[:, None]
    x = np.linspace(0.0, 1.0, width, dtype=np.float32)[None, :]
    frame = np.empty((height, width, 3), dtype=np.float32)
    frame[..., 0] = x
    frame[..., 1] = y
    frame[..., 2] = 0.5 * (x + y)
    frame += rng.normal(0.0, 0.05, size=(height, 1, 1)).astype(np.float32)
    np.clip(frame, 0.0, 1.0, out=frame)
    return frame


def summarize(samples) -> dict:
    s = np.asarray(samples, dtype=np.float64)
    return {"mean": float(s.mean()), "p50": float(np.percentile(s, 50)),
            "p95": float(np.percentile(s, 95)), "min": float(s.min()), "samples": len(s)}


def machine_info() -> dict:
    try:
        usable = len(os.sched_getaffinity(0))
    except AttributeError:
        usable = os.cpu_count()
    import numba

    return {"platform": platform.platform(), "processor": platform.processor() or platform.machine(),
            "cpu_count": os.cpu_count(), "usable_cpus": usable,
            "python": platform.python_version(), "numpy": np.__version__, "numba": numba.__version__}


def run_bench(width: int = 3840, height: int = 2160, threads: int = 8, iters: int = 10,
              lut=None, cfg: EngineConfig | None = None, style_side: int = 256,
              warmup: int = 1) -> dict:
    """Time both stages and return a JSON-ready report.

    ``lut`` may be a :class:`Lut4D` or :class:`Lut3D` to apply instead of
    the generated one.  ``warmup`` untimed runs absorb kernel compilation.
    """
    cfg = cfg or EngineConfig()
    if iters < 1:
        raise ValueError("iters must be >= 1")
    provider = FeatureProvider.builtin(cfg.seed, cfg.pyramid_channels)
    params = init_weight_generator(cfg.pyramid_channels, cfg.n_bases, cfg.reduce_channels,
                                   cfg.mlp_hidden, cfg.seed)
    bank = BasisLutBank.random(cfg.n_bases, cfg.lut_size, cfg.context_bins, cfg.basis_scale, cfg.seed)
    style = synthetic_frame(style_side, style_side, seed=cfg.seed + 1)[:, ::-1]

    gen_times = []
    fused = None
    for i in range(warmup + iters):
        t0 = time.perf_counter()
        fused = style_to_lut(style, provider, params, bank)
        if i >= warmup:
            gen_times.append(time.perf_counter() - t0)

    target = fused if lut is None else lut
    frame = synthetic_frame(height, width, seed=cfg.seed)
    if isinstance(target, Lut3D):
        run = lambda: apply_lut3d(target, frame, threads=threads)  # noqa: E731
        lut_info = {"kind": "3d", "size": target.size, "bins": 1}
    else:
        ctx = luminance_context(frame)
        _ = target.packed  # packing is part of LUT preparation, not the frame
        run = lambda: apply_lut4d(target, frame, ctx, threads=threads)  # noqa: E731
        lut_info = {"kind": "4d", "size": target.size, "bins": target.bins}
    lut_info["source"] = "generated" if lut is None else "file"

    app_times = []
    for i in range(warmup + iters):
        t0 = time.perf_counter()
        run()
        if i >= warmup:
            app_times.append(time.perf_counter() - t0)

    gen = summarize(gen_times)
    app = summarize(app_times)
    return {
        "width": width, "height": height, "threads": threads, "iters": iters,
        "lut": lut_info,
        "generation": {"n_bases": cfg.n_bases, "lut_size": cfg.lut_size,
                       "context_bins": cfg.context_bins, "style_side": style_side,
                       "provider": "builtin", "seconds": gen},
        "application": {"seconds": app, "fps_mean": 1.0 / app["mean"], "fps_p50": 1.0 / app["p50"]},
        "target_fps": TARGET_FPS, "pass_fps": PASS_FPS,
        "machine": machine_info(),
    }


def format_report(rep: dict) -> str:
    gen = rep["generation"]["seconds"]
    app = rep["application"]["seconds"]
    fps = rep["application"]["fps_mean"]
    m = rep["machine"]
    lines = [
        f"frame {rep['width']}x{rep['height']}, {rep['threads']} threads, {rep['iters']} iters",
        f"machine: {m['processor']}, {m['usable_cpus']} usable of {m['cpu_count']} CPUs",
        f"LUT generation  mean {gen['mean']:.4f} s  p50 {gen['p50']:.4f}  p95 {gen['p95']:.4f}",
        f"LUT application mean {app['mean']:.4f} s  p50 {app['p50']:.4f}  p95 {app['p95']:.4f}",
        f"split: {gen['mean']:.4f} + {app['mean']:.4f} s",
        f"throughput: {fps:.2f} FPS (pass >= {rep['pass_fps']:g}, target {rep['target_fps']:g})",
    ]
    return "\n".join(lines)
