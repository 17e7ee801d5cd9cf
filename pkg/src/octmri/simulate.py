"""Synthetic parallel-MRI acquisition.

Ground truth is a complex phantom image multiplied by smooth complex coil
sensitivity maps; the measurement is the centered orthonormal FFT of each coil
image with a binary undersampling mask applied:

    y_i = M * fft2c(S_i * x)

The phase-encode axis is the column (width) axis: 1-D patterns select whole
columns. Masks live in the DC-centered layout (DC at ``(h//2, w//2)``).

Datasets are directories: ``manifest.json`` plus raw little-endian row-major
``kspace.bin`` / ``mask.bin`` / ``target.bin`` (complex as interleaved re, im
float32 pairs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError

__all__ = [
    "Phantom",
    "CoilSensitivities",
    "SamplingMask",
    "KSpaceMeasurement",
    "PHANTOM_KINDS",
    "MASK_PATTERNS",
    "make_phantom",
    "make_coils",
    "make_mask",
    "forward_acquire",
    "zero_filled_recon",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]

PHANTOM_KINDS = ("shepp_logan", "blobs", "checker")
MASK_PATTERNS = ("uniform1d", "cartesian1d", "random2d", "radial2d")

# Classic head phantom: ten ellipses, each (intensity, a, b, x0, y0, angle_deg)
# on the [-1, 1]^2 field of view. Overlaps keep the sum inside [0, 1].
_SHEPP_LOGAN = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


@dataclass
class Phantom:
    """Complex ground-truth image, magnitude in [0, 1], shape (1, h, w)."""

    image: np.ndarray
    descriptor: dict = field(default_factory=dict)


@dataclass
class CoilSensitivities:
    """Smooth complex maps (coils, h, w) with pixelwise RSS == 1."""

    maps: np.ndarray
    descriptor: dict = field(default_factory=dict)


@dataclass
class SamplingMask:
    """Binary k-space mask (h, w) in the DC-centered layout."""

    mask: np.ndarray
    pattern: str
    R: int
    center_fraction: float = 0.0
    seed: int | None = None

    @property
    def fraction(self) -> float:
        return float(self.mask.mean())


@dataclass
class KSpaceMeasurement:
    """Masked multi-coil k-space (coils, h, w) plus its acquisition metadata."""

    y: np.ndarray
    mask: SamplingMask
    meta: dict = field(default_factory=dict)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_dims(h: int, w: int) -> None:
    if h < 16 or w < 16 or h % 2 or w % 2:
        raise ConfigError(f"image dims must be even and >= 16, got {(h, w)}")


def _grid(h: int, w: int):
    y = np.linspace(-1.0, 1.0, h, endpoint=False) + 1.0 / h
    x = np.linspace(-1.0, 1.0, w, endpoint=False) + 1.0 / w
    return np.meshgrid(y, x, indexing="ij")


def _render_ellipses(h: int, w: int, table) -> np.ndarray:
    yy, xx = _grid(h, w)
    img = np.zeros((h, w), dtype=np.float64)
    for amp, a, b, x0, y0, ang in table:
        t = np.deg2rad(ang)
        xr = (xx - x0) * np.cos(t) + (yy - y0) * np.sin(t)
        yr = -(xx - x0) * np.sin(t) + (yy - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    return img


def make_phantom(kind: str, h: int, w: int, seed=0, phase_ramp: bool = True) -> Phantom:
    """Build a seeded complex phantom.

    Args:
        kind: one of ``shepp_logan`` (ten-ellipse head, seeded geometric
            jitter), ``blobs`` (random smooth Gaussian bumps), ``checker``
            (alternating 0/1 blocks of size 4).
        h, w: even extents >= 16.
        seed: int, SeedSequence or Generator; fixes the variant exactly.
        phase_ramp: when true, multiply by a smooth seeded linear phase ramp
            (magnitude is unaffected).

    Returns:
        Phantom with ``image`` of shape (1, h, w), complex128, max magnitude 1.
    """
    _check_dims(h, w)
    if kind not in PHANTOM_KINDS:
        raise ConfigError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")
    rng = _rng(seed)
    if kind == "shepp_logan":
        table = []
        for amp, a, b, x0, y0, ang in _SHEPP_LOGAN:
            table.append((
                amp,
                a * (1.0 + 0.05 * rng.standard_normal()),
                b * (1.0 + 0.05 * rng.standard_normal()),
                x0 + 0.02 * rng.standard_normal(),
                y0 + 0.02 * rng.standard_normal(),
                ang + 2.0 * rng.standard_normal(),
            ))
        mag = _render_ellipses(h, w, table)
        mag = np.clip(mag, 0.0, None)
    elif kind == "blobs":
        yy, xx = _grid(h, w)
        mag = np.zeros((h, w), dtype=np.float64)
        for _ in range(int(rng.integers(4, 9))):
            cy, cx = rng.uniform(-0.6, 0.6, size=2)
            s = rng.uniform(0.08, 0.35)
            amp = rng.uniform(0.3, 1.0)
            mag += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * s * s))
    else:  # checker
        rows, cols = np.indices((h, w))
        mag = (((rows // 4) + (cols // 4)) % 2).astype(np.float64)
    peak = mag.max()
    if peak <= 0:
        raise ConfigError(f"degenerate phantom: {kind} rendered all-zero at {(h, w)}")
    mag = mag / peak
    if phase_ramp:
        fy, fx = rng.uniform(-0.5, 0.5, size=2)
        yy, xx = _grid(h, w)
        phase = np.exp(1j * np.pi * (fy * yy + fx * xx))
    else:
        phase = 1.0
    img = (mag * phase).astype(np.complex128)[None]
    return Phantom(image=img, descriptor={"kind": kind, "h": h, "w": w,
                                          "phase_ramp": bool(phase_ramp)})


def make_coils(h: int, w: int, coils: int, seed=0) -> CoilSensitivities:
    """Smooth complex coil maps: Gaussian lobes at equally spaced border angles.

    Each coil magnitude is a Gaussian bump centered on the inscribed circle;
    each phase is a gentle seeded linear ramp oriented toward the coil. Maps
    are normalized pixelwise so the root-sum-of-squares equals one exactly,
    which makes conjugate coil combination the exact inverse of coil expansion.
    """
    _check_dims(h, w)
    if coils < 1:
        raise ConfigError(f"coils must be >= 1, got {coils}")
    rng = _rng(seed)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    radius = 0.5 * min(h, w)
    sigma = 0.45 * min(h, w)
    offset = rng.uniform(0.0, 2.0 * np.pi)
    maps = np.empty((coils, h, w), dtype=np.complex128)
    for i in range(coils):
        theta = offset + 2.0 * np.pi * i / coils
        cy = (h - 1) / 2.0 + radius * np.sin(theta)
        cx = (w - 1) / 2.0 + radius * np.cos(theta)
        mag = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma)))
        slope = rng.uniform(0.5, 1.5)
        proj = ((xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)) / min(h, w)
        maps[i] = mag * np.exp(1j * (slope * np.pi * proj + rng.uniform(0, 2 * np.pi)))
    rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    maps /= rss
    return CoilSensitivities(maps=maps, descriptor={"coils": coils, "h": h, "w": w})


def _center_cols(w: int, center_fraction: float) -> np.ndarray:
    n = T.round_half_up(center_fraction * w)
    cols = np.zeros(w, dtype=bool)
    if n:
        lo = w // 2 - n // 2
        cols[lo:lo + n] = True
    return cols


def make_mask(pattern: str, R: int, h: int, w: int, center_fraction: float = 0.0,
              seed=0) -> SamplingMask:
    """Build a binary undersampling mask.

    Patterns (all in the DC-centered layout, 1-D patterns selecting columns):

    * ``uniform1d``  — every R-th column starting at 0, plus the center band.
    * ``cartesian1d`` — ceil(w/R) random columns, variable density
      ``p ∝ exp(-d^2 / (2 (w/6)^2))`` toward the center, sampled without
      replacement; the center band is always included.
    * ``random2d``   — Bernoulli points, Gaussian density weighting, expected
      count h*w/R.
    * ``radial2d``   — ceil(h*w / (R*max(h,w))) equiangular spokes rasterized
      through the DC pixel (h//2, w//2).

    Args:
        R: integer acceleration, 2 <= R <= w.
        center_fraction: fraction of fully sampled center (band for 1-D
            patterns, square for 2-D), in [0, 0.2].
    """
    if pattern not in MASK_PATTERNS:
        raise ConfigError(f"unknown mask pattern {pattern!r}; choose from {MASK_PATTERNS}")
    if not isinstance(R, (int, np.integer)) or isinstance(R, bool):
        raise ConfigError(f"R must be an integer, got {R!r}")
    if R < 2 or R > w:
        raise ConfigError(f"acceleration R must satisfy 2 <= R <= width, got R={R}, w={w}")
    if not 0.0 <= center_fraction <= 0.2:
        raise ConfigError(f"center_fraction must lie in [0, 0.2], got {center_fraction}")
    if h < 4 or w < 4 or h % 2 or w % 2:
        raise ConfigError(f"mask dims must be even and >= 4, got {(h, w)}")
    rng = _rng(seed)
    mask = np.zeros((h, w), dtype=np.float32)
    if pattern == "uniform1d":
        cols = np.zeros(w, dtype=bool)
        cols[::R] = True
        cols |= _center_cols(w, center_fraction)
        mask[:, cols] = 1.0
    elif pattern == "cartesian1d":
        target = -(-w // R)  # ceil
        cols = _center_cols(w, center_fraction)
        free = np.flatnonzero(~cols)
        need = max(target - int(cols.sum()), 0)
        if need > free.size:
            raise ConfigError(f"cartesian1d cannot place {target} columns in width {w}")
        d = free - w / 2.0
        sigma = w / 6.0
        p = np.exp(-(d * d) / (2.0 * sigma * sigma))
        p /= p.sum()
        chosen = rng.choice(free, size=need, replace=False, p=p)
        cols[chosen] = True
        mask[:, cols] = 1.0
    elif pattern == "random2d":
        target = T.round_half_up(h * w / R)
        yy, xx = np.meshgrid(np.arange(h) - h / 2.0, np.arange(w) - w / 2.0, indexing="ij")
        sigma = min(h, w) / 6.0
        wgt = np.exp(-(yy * yy + xx * xx) / (2.0 * sigma * sigma))
        # scale so that sum(min(c*wgt, 1)) == target, then draw Bernoulli
        lo_c, hi_c = 0.0, 2.0 * target / wgt.sum()
        while np.minimum(hi_c * wgt, 1.0).sum() < target:
            hi_c *= 2.0
        for _ in range(60):
            mid = 0.5 * (lo_c + hi_c)
            if np.minimum(mid * wgt, 1.0).sum() < target:
                lo_c = mid
            else:
                hi_c = mid
        p = np.minimum(hi_c * wgt, 1.0)
        mask[rng.random((h, w)) < p] = 1.0
        if center_fraction > 0:
            ch = T.round_half_up(center_fraction * h)
            cw = T.round_half_up(center_fraction * w)
            mask[h // 2 - ch // 2: h // 2 - ch // 2 + ch,
                 w // 2 - cw // 2: w // 2 - cw // 2 + cw] = 1.0
    else:  # radial2d
        n_spokes = -(-(h * w) // (R * max(h, w)))  # ceil
        cy, cx = h // 2, w // 2
        t = np.arange(-max(h, w), max(h, w) + 1, dtype=np.float64)
        for j in range(n_spokes):
            theta = np.pi * j / n_spokes
            ux, uy = np.cos(theta), np.sin(theta)
            s = max(abs(ux), abs(uy))  # advance one pixel per step on the dominant axis
            py = np.rint(cy + t * uy / s).astype(int)
            px = np.rint(cx + t * ux / s).astype(int)
            keep = (py >= 0) & (py < h) & (px >= 0) & (px < w)
            mask[py[keep], px[keep]] = 1.0
        mask[cy, cx] = 1.0
        if center_fraction > 0:
            ch = T.round_half_up(center_fraction * h)
            cw = T.round_half_up(center_fraction * w)
            mask[h // 2 - ch // 2: h // 2 - ch // 2 + ch,
                 w // 2 - cw // 2: w // 2 - cw // 2 + cw] = 1.0
    seed_val = int(seed) if isinstance(seed, (int, np.integer)) else None
    return SamplingMask(mask=mask, pattern=pattern, R=int(R),
                        center_fraction=float(center_fraction), seed=seed_val)


def forward_acquire(x: Phantom, s: CoilSensitivities, m: SamplingMask) -> KSpaceMeasurement:
    """Simulate the acquisition ``y_i = M * fft2c(S_i * x)``."""
    img = x.image
    if img.ndim != 3 or img.shape[0] != 1:
        raise ShapeError(f"phantom image must be (1, h, w), got {img.shape}")
    if s.maps.shape[-2:] != img.shape[-2:] or m.mask.shape != img.shape[-2:]:
        raise ShapeError("phantom, coils and mask must share spatial dims")
    coil_images = s.maps * img  # (coils, h, w)
    y = T.fft2c(coil_images) * m.mask
    return KSpaceMeasurement(y=y, mask=m,
                             meta={"pattern": m.pattern, "R": m.R, "seed": m.seed,
                                   "center_fraction": m.center_fraction})


def zero_filled_recon(y: KSpaceMeasurement) -> np.ndarray:
    """Per-coil inverse FFT of the masked measurement, (coils, h, w)."""
    return T.ifft2c(y.y)


# ---------------------------------------------------------------------------
# dataset directory format

def make_dataset(phantom: str, h: int, w: int, coils: int, pattern: str, R: int,
                 center_fraction: float = 0.0, num_samples: int = 20, seed: int = 0,
                 phase_ramp: bool = True) -> dict:
    """Simulate a dataset of seeded phantom variants under one acquisition setup.

    Coil maps are shared across samples (one virtual scanner); the phantom and
    (for random patterns) the mask are re-seeded per sample. Returns arrays
    ready for :func:`save_dataset`: complex64 ``kspace``/``target`` of shape
    (n, coils, h, w), float32 ``mask`` (n, h, w), plus the meta record.
    """
    if num_samples < 1:
        raise ConfigError(f"num_samples must be >= 1, got {num_samples}")
    coil_set = make_coils(h, w, coils, seed=np.random.SeedSequence([seed, 997]))
    kspace = np.empty((num_samples, coils, h, w), dtype=np.complex64)
    masks = np.empty((num_samples, h, w), dtype=np.float32)
    target = np.empty((num_samples, coils, h, w), dtype=np.complex64)
    for i in range(num_samples):
        ph = make_phantom(phantom, h, w, seed=np.random.SeedSequence([seed, i, 0]),
                          phase_ramp=phase_ramp)
        m = make_mask(pattern, R, h, w, center_fraction,
                      seed=np.random.SeedSequence([seed, i, 1]))
        meas = forward_acquire(ph, coil_set, m)
        kspace[i] = meas.y.astype(np.complex64)
        masks[i] = m.mask
        target[i] = (coil_set.maps * ph.image).astype(np.complex64)
    meta = {"phantom": phantom, "pattern": pattern, "R": int(R),
            "center_fraction": float(center_fraction), "seed": int(seed),
            "coils": int(coils), "height": int(h), "width": int(w),
            "num_samples": int(num_samples), "phase_ramp": bool(phase_ramp)}
    return {"kspace": kspace, "mask": masks, "target": target, "meta": meta}


_ARRAY_FILES = {"kspace": "kspace.bin", "mask": "mask.bin", "target": "target.bin"}


def save_dataset(path, data: dict) -> None:
    """Write a dataset directory (manifest.json + raw little-endian arrays)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = data["meta"]
    arrays = {}
    for key, fname in _ARRAY_FILES.items():
        arr = data[key]
        if key == "mask":
            raw = np.ascontiguousarray(arr, dtype="<f4")
        else:
            raw = np.ascontiguousarray(arr, dtype="<c8")  # interleaved re, im float32
        (path / fname).write_bytes(raw.tobytes())
        arrays[key] = {"file": fname, "shape": list(arr.shape),
                       "complex": key != "mask", "offset": 0,
                       "nbytes": int(raw.nbytes)}
    manifest = {"format": "octmri-dataset-v1", "dtype": "float32",
                "complex_interleaved": True, "arrays": arrays, **meta}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(path) -> dict:
    """Read a dataset directory back; validates the manifest fail-closed."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise ConfigError(f"{path} is not a dataset directory (no manifest.json)")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != "octmri-dataset-v1":
        raise ConfigError(f"unrecognized dataset format in {mpath}")
    for field_ in ("num_samples", "coils", "height", "width", "pattern", "R", "seed", "arrays"):
        if field_ not in manifest:
            raise ConfigError(f"dataset manifest missing field {field_!r}")
    out: dict = {"meta": {k: v for k, v in manifest.items() if k != "arrays"}}
    for key, info in manifest["arrays"].items():
        if key not in _ARRAY_FILES:
            raise ConfigError(f"unknown dataset array {key!r}")
        raw = (path / info["file"]).read_bytes()
        if len(raw) < info["offset"] + info["nbytes"]:
            raise ConfigError(f"dataset array {key!r} is truncated")
        dt = "<c8" if info["complex"] else "<f4"
        arr = np.frombuffer(raw[info["offset"]: info["offset"] + info["nbytes"]], dtype=dt)
        out[key] = arr.reshape(info["shape"]).astype(np.complex64 if info["complex"] else np.float32)
    for key in _ARRAY_FILES:
        if key not in out:
            raise ConfigError(f"dataset manifest lacks array {key!r}")
    return out
