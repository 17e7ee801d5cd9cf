"""Image-quality metrics on coil-combined magnitudes.

Reconstruction quality is always scored on the root-sum-of-squares magnitude
image; the reference image defines the peak (PSNR) and dynamic range (SSIM).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "coil_combine",
    "psnr",
    "PSNR_SENTINEL",
    "ssim",
    "ssim_terms",
    "evaluate",
    "write_report_csv",
    "save_error_grid",
]

PSNR_SENTINEL = 99.0

_WIN = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def coil_combine(x: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares over the leading coil axis: (coils, h, w) -> (h, w)."""
    if x.ndim != 3:
        raise ShapeError(f"coil_combine expects (coils, h, w), got {x.shape}")
    return np.sqrt((np.abs(x) ** 2).sum(axis=0))


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak taken from the reference.

    A mean squared error below ``1e-12 * peak**2`` (numerically exact match)
    returns the sentinel 99.0 instead of overflowing toward infinity.
    """
    if img.shape != ref.shape:
        raise ShapeError(f"psnr shape mismatch: {img.shape} vs {ref.shape}")
    peak = float(np.max(ref))
    mse = float(np.mean((np.asarray(img, dtype=np.float64) - ref) ** 2))
    if mse <= 1e-12 * peak * peak:
        return PSNR_SENTINEL
    return 10.0 * np.log10(peak * peak / mse)


def _gauss_kernel() -> np.ndarray:
    r = np.arange(_WIN, dtype=np.float64) - (_WIN - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * _SIGMA * _SIGMA))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_stats(img: np.ndarray, ref: np.ndarray):
    k = _gauss_kernel()
    wx = np.lib.stride_tricks.sliding_window_view(img, (_WIN, _WIN))
    wy = np.lib.stride_tricks.sliding_window_view(ref, (_WIN, _WIN))
    mu_x = np.einsum("ijkl,kl->ij", wx, k)
    mu_y = np.einsum("ijkl,kl->ij", wy, k)
    ex2 = np.einsum("ijkl,kl->ij", wx * wx, k)
    ey2 = np.einsum("ijkl,kl->ij", wy * wy, k)
    exy = np.einsum("ijkl,kl->ij", wx * wy, k)
    return mu_x, mu_y, ex2 - mu_x * mu_x, ey2 - mu_y * mu_y, exy - mu_x * mu_y


def _ssim_setup(img, ref):
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ShapeError(f"ssim shape mismatch: {img.shape} vs {ref.shape}")
    if img.ndim != 2 or min(img.shape) < _WIN:
        raise ConfigError(f"ssim needs a 2-D image at least {_WIN}x{_WIN}, got {img.shape}")
    L = float(ref.max() - ref.min())
    if L <= 0.0:
        L = 1.0
    return img, ref, (_K1 * L) ** 2, (_K2 * L) ** 2


def ssim(img: np.ndarray, ref: np.ndarray) -> float:
    """Mean structural similarity: 11x11 Gaussian windows (sigma 1.5), valid
    windowing only, dynamic range from the reference."""
    img, ref, c1, c2 = _ssim_setup(img, ref)
    mu_x, mu_y, var_x, var_y, cov = _windowed_stats(img, ref)
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim_terms(img: np.ndarray, ref: np.ndarray) -> dict:
    """Luminance/contrast/structure decomposition (window means).

    The product form uses C3 = C2/2 so ``luminance * contrast * structure``
    equals the usual two-factor SSIM map pointwise.
    """
    img, ref, c1, c2 = _ssim_setup(img, ref)
    mu_x, mu_y, var_x, var_y, cov = _windowed_stats(img, ref)
    sx = np.sqrt(np.maximum(var_x, 0.0))
    sy = np.sqrt(np.maximum(var_y, 0.0))
    c3 = c2 / 2.0
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    con = (2.0 * sx * sy + c2) / (var_x + var_y + c2)
    struct = (cov + c3) / (sx * sy + c3)
    full = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
    return {"luminance": float(lum.mean()), "contrast": float(con.mean()),
            "structure": float(struct.mean()), "ssim": float(full.mean())}


def evaluate(recon: np.ndarray, target: np.ndarray,
             zero_filled: np.ndarray | None = None) -> dict:
    """Score per-sample reconstructions against targets on RSS magnitudes.

    All inputs are (n, coils, h, w); ``zero_filled`` adds baseline columns so
    a report shows the gain over the unprocessed inverse FFT side by side.

    Returns {"rows": [...], "mean": {...}, "std": {...}} with metric keys
    psnr/ssim (and zf_psnr/zf_ssim when the baseline is given).
    """
    recon = np.asarray(recon)
    target = np.asarray(target)
    if recon.shape != target.shape or recon.ndim != 4:
        raise ShapeError(f"evaluate expects matching (n, coils, h, w), got {recon.shape} vs {target.shape}")
    if zero_filled is not None and np.asarray(zero_filled).shape != target.shape:
        raise ShapeError("zero_filled must match target shape")
    rows = []
    for i in range(recon.shape[0]):
        ref = coil_combine(target[i])
        row = {"index": i,
               "psnr": psnr(coil_combine(recon[i]), ref),
               "ssim": ssim(coil_combine(recon[i]), ref)}
        if zero_filled is not None:
            zf = coil_combine(np.asarray(zero_filled)[i])
            row["zf_psnr"] = psnr(zf, ref)
            row["zf_ssim"] = ssim(zf, ref)
        rows.append(row)
    keys = [k for k in rows[0] if k != "index"]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    std = {k: float(np.std([r[k] for r in rows])) for k in keys}
    return {"rows": rows, "mean": mean, "std": std}


def write_report_csv(path, result: dict) -> None:
    """One row per sample plus a trailing aggregate row (mean+/-std cells)."""
    rows = result["rows"]
    keys = [k for k in rows[0] if k != "index"]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + keys)
        for r in rows:
            w.writerow([r["index"]] + [f"{r[k]:.6f}" for k in keys])
        w.writerow(["aggregate"] + [f"{result['mean'][k]:.6f}+/-{result['std'][k]:.6f}"
                                    for k in keys])


def save_error_grid(path, recon: np.ndarray, target: np.ndarray,
                    zero_filled: np.ndarray | None = None, max_rows: int = 4) -> None:
    """Render a PNG panel: target / reconstruction / 5x |error| per sample."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = min(np.asarray(recon).shape[0], max_rows)
    cols = 3 + (zero_filled is not None)
    fig, axes = plt.subplots(n, cols, figsize=(2.2 * cols, 2.2 * n), squeeze=False)
    vmax = max(coil_combine(target[i]).max() for i in range(n))
    for i in range(n):
        ref = coil_combine(target[i])
        img = coil_combine(recon[i])
        panels = [("target", ref), ("recon", img), ("5x error", 5.0 * np.abs(img - ref))]
        if zero_filled is not None:
            panels.insert(1, ("zero-filled", coil_combine(np.asarray(zero_filled)[i])))
        for j, (name, panel) in enumerate(panels):
            ax = axes[i][j]
            ax.imshow(panel, cmap="gray", vmin=0.0, vmax=vmax)
            ax.set_axis_off()
            if i == 0:
                ax.set_title(name, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
