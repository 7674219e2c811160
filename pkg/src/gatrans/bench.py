"""Wall-clock scaling benchmark for dense vs bucketed attention."""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .glam import GlamParams, dense_attention_reference, glam_forward
from .tensor import Tensor


def _median_time(fn, repeats):
    # grow inner iterations until a sample costs >= 10 ms, so the timer
    # resolution cannot dominate small sizes
    inner = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        dt = time.perf_counter() - t0
        if dt >= 0.010:
            break
        inner *= 2
    samples = [dt / inner]
    for _ in range(repeats - 1):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return float(np.median(samples))


def fit_loglog_slope(sizes, times):
    return float(np.polyfit(np.log(np.asarray(sizes, dtype=float)),
                            np.log(np.asarray(times, dtype=float)), 1)[0])


def bench_attention(sizes, c=64, tokens_per_bucket=16, repeats=5, seed=0,
                    out_dir=None, guard_n=512):
    """Time dense vs bucketed attention across token counts.

    Bucket count scales with n (n / tokens_per_bucket) so expected occupancy
    stays constant. Returns a result dict; optionally writes ``bench.csv``
    and ``bench.svg`` under out_dir. A numeric guard compares both paths at
    d_buckets=1 before any timing.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    rng = np.random.default_rng(seed)

    guard_params = GlamParams(c, 1, seed=seed, dtype=np.float32)
    xg = rng.standard_normal((guard_n, c)).astype(np.float32)
    with T.no_grad():
        got = glam_forward(Tensor(xg), guard_params).data
    ref = dense_attention_reference(xg, guard_params)
    guard_err = float(np.abs(got - ref).max())
    if guard_err > 1e-4:
        raise AssertionError(f"bucketed/dense disagreement {guard_err:.2e} before timing")

    rows = []
    for n in sizes:
        x = rng.standard_normal((n, c)).astype(np.float32)
        params = GlamParams(c, max(1, n // tokens_per_bucket), seed=seed + n,
                            dtype=np.float32)
        xt = Tensor(x)
        def run_glam():
            with T.no_grad():
                glam_forward(xt, params)
        t_dense = _median_time(lambda: dense_attention_reference(x, params), repeats)
        t_glam = _median_time(run_glam, repeats)
        rows.append((n, t_dense, t_glam))

    slope_dense = fit_loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    slope_glam = fit_loglog_slope([r[0] for r in rows], [r[2] for r in rows])
    result = dict(rows=rows, slope_dense=slope_dense, slope_glam=slope_glam,
                  guard_err=guard_err)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(to_csv(result, c, tokens_per_bucket, repeats))
        (out / "bench.svg").write_text(to_svg(result))
    return result


def to_csv(result, c, tokens_per_bucket, repeats):
    threads = os.environ.get("OMP_NUM_THREADS") or os.environ.get(
        "OPENBLAS_NUM_THREADS") or "default"
    lines = [
        f"# c={c} tokens_per_bucket={tokens_per_bucket} repeats={repeats} "
        f"blas_threads={threads}",
        "n,dense_seconds,bucketed_seconds",
    ]
    for n, td, tg in result["rows"]:
        lines.append(f"{n},{td:.6g},{tg:.6g}")
    lines.append(f"# slope_dense={result['slope_dense']:.4f} "
                 f"slope_bucketed={result['slope_glam']:.4f} "
                 f"guard_err={result['guard_err']:.3g}")
    return "\n".join(lines) + "\n"


def to_svg(result, width=480, height=360):
    """Log-log scaling plot, emitted as plain SVG text."""
    rows = result["rows"]
    xs = np.log10([r[0] for r in rows])
    series = {"dense": np.log10([r[1] for r in rows]),
              "bucketed": np.log10([r[2] for r in rows])}
    all_y = np.concatenate(list(series.values()))
    x0, x1 = xs.min(), xs.max()
    y0, y1 = all_y.min() - 0.2, all_y.max() + 0.2
    pad = 50

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width/2}" y="20" text-anchor="middle" font-size="13">'
             'attention wall time vs tokens (log-log)</text>']
    colors = {"dense": "#c0392b", "bucketed": "#2471a3"}
    for name, ys in series.items():
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colors[name]}" stroke-width="2"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{colors[name]}"/>')
        parts.append(f'<text x="{px(xs[-1]) - 60}" y="{py(ys[-1]) - 8}" font-size="11" '
                     f'fill="{colors[name]}">{name} (slope '
                     f'{result["slope_dense" if name == "dense" else "slope_glam"]:.2f})</text>')
    for n, _, _ in result["rows"]:
        parts.append(f'<text x="{px(np.log10(n)):.1f}" y="{height - pad + 15}" '
                     f'text-anchor="middle" font-size="10">{n}</text>')
    parts.append(f'<text x="{width/2}" y="{height - 8}" text-anchor="middle" '
                 'font-size="11">tokens</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
