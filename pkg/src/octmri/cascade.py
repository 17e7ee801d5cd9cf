"""Unrolled reconstruction network.

A cascade of ``num_blocks`` identical blocks, each followed by a k-space data
fidelity unit. A block splits its coil-image input into octave groups, lifts it
to the working width with a first routed complex convolution, applies further
routed layers (optionally densely fused across the block's history), projects
to equal low/high output widths, and merges back to a full-resolution tensor
holding the real halves of all coils followed by the imaginary halves.

Routed layers are linear and bias-free; the only nonlinearities live in the
dense fusion units (BN → ReLU → 1x1 conv → BN → ReLU → 3x3 conv, applied to
each of the four groups independently, ReLU acting separately on the real and
imaginary components). Data fidelity re-imposes measured k-space samples:

    out = ifft2c((1 - M) * fft2c(x) + M * y)   per coil.

Checkpoints are a directory holding ``manifest.json`` (names, shapes, dtype,
kinds, byte offsets) plus ``payload.bin``, a single little-endian raw buffer;
save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import octconv as oc
from . import tensor as T
from .autodiff import BNBuffers, Var
from .errors import ConfigError, NumericsError, ShapeError
from .octconv import BANK_NAMES, DualOctKernel, OctComplexFeature

__all__ = [
    "BlockConfig",
    "CascadeConfig",
    "ParamSpec",
    "parameter_spec",
    "buffer_spec",
    "num_parameters",
    "CascadeModel",
    "dense_fuse",
    "data_fidelity",
    "l1_loss",
    "reconstruct",
    "save_checkpoint",
    "load_checkpoint",
]

GROUPS = ("rh", "ih", "rl", "il")
_GROUP_INDEX = {g: i for i, g in enumerate(GROUPS)}


@dataclass(frozen=True)
class BlockConfig:
    """One block: routed layer count, working width, split ratio, connectivity."""

    num_layers: int = 4
    channels: int = 64
    alpha: float = 0.125
    kernel_size: int = 3
    dense: bool = True


@dataclass(frozen=True)
class CascadeConfig:
    coils: int
    num_blocks: int = 10
    block: BlockConfig = field(default_factory=BlockConfig)


def _validate_config(cfg: CascadeConfig) -> None:
    b = cfg.block
    if cfg.coils < 1:
        raise ConfigError(f"coils must be >= 1, got {cfg.coils}")
    if cfg.num_blocks < 1:
        raise ConfigError(f"num_blocks must be >= 1, got {cfg.num_blocks}")
    if b.num_layers < 1:
        raise ConfigError(f"num_layers must be >= 1, got {b.num_layers}")
    if b.channels < 1:
        raise ConfigError(f"channels must be >= 1, got {b.channels}")
    if not 0.0 <= b.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {b.alpha}")
    if b.kernel_size < 1 or b.kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size must be odd and positive, got {b.kernel_size}")


def block_widths(cfg: CascadeConfig) -> dict[str, int]:
    """Channel bookkeeping for one block.

    ``in_*``: octave split of the coil input; ``w*``: working widths; ``out_*``:
    the output projection, chosen so the merged tensor has 2*coils channels
    (equal low/high counts, degenerating to one band at alpha in {0, 1}).
    """
    b = cfg.block
    in_low = T.round_half_up(b.alpha * cfg.coils)
    wl = T.round_half_up(b.alpha * b.channels)
    if b.alpha == 0.0:
        out_low, out_high = 0, cfg.coils
    elif b.alpha == 1.0:
        out_low, out_high = cfg.coils, 0
    else:
        out_low, out_high = cfg.coils, cfg.coils
    return {
        "in_low": in_low, "in_high": cfg.coils - in_low,
        "wl": wl, "wh": b.channels - wl,
        "out_low": out_low, "out_high": out_high,
    }


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    kind: str  # bank_r | bank_i | weight | bias | bn_gamma | bn_beta
    fan_in: int
    pair: str | None = None  # shared draw key for (r, i) bank pairs


def _bank_specs(prefix: str, in_low: int, in_high: int, out_low: int, out_high: int,
                ks: int) -> list[ParamSpec]:
    specs = []
    for path, o, i in (("hh", out_high, in_high), ("hl", out_low, in_high),
                       ("lh", out_high, in_low), ("ll", out_low, in_low)):
        fan = i * ks * ks
        for comp, kind in (("r", "bank_r"), ("i", "bank_i")):
            specs.append(ParamSpec(f"{prefix}.{comp}_{path}", (o, i, ks, ks), kind,
                                   fan, pair=f"{prefix}.{path}"))
    return specs


def _group_width(widths: dict[str, int], grp: str) -> int:
    return widths["wl"] if grp.endswith("l") else widths["wh"]


def parameter_spec(cfg: CascadeConfig) -> list[ParamSpec]:
    """Flat, ordered inventory of every trainable parameter."""
    _validate_config(cfg)
    w = block_widths(cfg)
    b = cfg.block
    specs: list[ParamSpec] = []
    for bi in range(cfg.num_blocks):
        specs += _bank_specs(f"block{bi}.layer0", w["in_low"], w["in_high"],
                             w["wl"], w["wh"], b.kernel_size)
        for j in range(1, b.num_layers):
            specs += _bank_specs(f"block{bi}.layer{j}", w["wl"], w["wh"],
                                 w["wl"], w["wh"], b.kernel_size)
            if not b.dense:
                continue
            hist = j + 1  # newest layer output plus all previous, working width each
            for grp in GROUPS:
                gw = _group_width(w, grp)
                if gw == 0:
                    continue
                cat = hist * gw
                p = f"block{bi}.fuse{j}.{grp}"
                specs += [
                    ParamSpec(f"{p}.bn1.gamma", (cat,), "bn_gamma", cat),
                    ParamSpec(f"{p}.bn1.beta", (cat,), "bn_beta", cat),
                    ParamSpec(f"{p}.conv1.w", (gw, cat, 1, 1), "weight", cat),
                    ParamSpec(f"{p}.conv1.b", (gw,), "bias", cat),
                    ParamSpec(f"{p}.bn2.gamma", (gw,), "bn_gamma", gw),
                    ParamSpec(f"{p}.bn2.beta", (gw,), "bn_beta", gw),
                    ParamSpec(f"{p}.conv2.w", (gw, gw, 3, 3), "weight", gw * 9),
                    ParamSpec(f"{p}.conv2.b", (gw,), "bias", gw * 9),
                ]
        specs += _bank_specs(f"block{bi}.out", w["wl"], w["wh"],
                             w["out_low"], w["out_high"], b.kernel_size)
    return specs


def buffer_spec(cfg: CascadeConfig) -> list[tuple[str, tuple]]:
    """Running-statistic buffers (BN mean/var), ordered like the fuse units."""
    out: list[tuple[str, tuple]] = []
    for s in parameter_spec(cfg):
        if s.kind == "bn_gamma":
            base = s.name[: -len(".gamma")]
            out.append((f"{base}.mean", s.shape))
            out.append((f"{base}.var", s.shape))
    return out


def num_parameters(cfg: CascadeConfig) -> int:
    return sum(int(np.prod(s.shape)) for s in parameter_spec(cfg))


def cascade_flops(cfg: CascadeConfig, height: int, width: int,
                  per_layer: bool = False):
    """Mul-add count of all frequency-routed layers at the given image size.

    Counts the complex dual-resolution convolutions only; the pointwise
    fusion units are excluded so the number isolates the cost that the split
    ratio actually controls.
    """
    _validate_config(cfg)
    b = cfg.block
    a = b.alpha
    if a == 0.0:
        out_total, alpha_out = cfg.coils, 0.0
    elif a == 1.0:
        out_total, alpha_out = cfg.coils, 1.0
    else:
        out_total, alpha_out = 2 * cfg.coils, 0.5
    layers = []
    for bi in range(cfg.num_blocks):
        layers.append((f"block{bi}.layer0",
                       oc.count_flops(cfg.coils, b.channels, height, width, a,
                                      b.kernel_size)))
        for j in range(1, b.num_layers):
            layers.append((f"block{bi}.layer{j}",
                           oc.count_flops(b.channels, b.channels, height, width, a,
                                          b.kernel_size)))
        layers.append((f"block{bi}.out",
                       oc.count_flops(b.channels, out_total, height, width, a,
                                      b.kernel_size, alpha_out=alpha_out)))
    total = sum(rep.total_mul_adds for _, rep in layers)
    return (total, layers) if per_layer else total


def _empty_like_band(ref: Var, channels: int, half: bool) -> np.ndarray:
    n, _, h, w = ref.data.shape
    if half:
        h, w = h // 2, w // 2
    return np.zeros((n, channels, h, w), dtype=ref.data.dtype)


def fuse_unit_vars(feats: list[tuple[Var, Var, Var, Var]], pv: dict[str, Var],
                   buffers: dict[str, np.ndarray], prefix: str, bn_mode: str,
                   widths: dict[str, int]) -> tuple[Var, Var, Var, Var]:
    """Dense fusion on a newest-first feature history, one chain per group."""
    outs: list[Var] = []
    for grp in GROUPS:
        idx = _GROUP_INDEX[grp]
        gw = _group_width(widths, grp)
        if gw == 0:
            outs.append(feats[0][idx])
            continue
        p = f"{prefix}.{grp}"
        x = ad.concat([f[idx] for f in feats])
        x = ad.batchnorm(x, pv[f"{p}.bn1.gamma"], pv[f"{p}.bn1.beta"],
                         BNBuffers(buffers[f"{p}.bn1.mean"], buffers[f"{p}.bn1.var"]), bn_mode)
        x = ad.relu(x)
        x = ad.bias_add(ad.conv2d(x, pv[f"{p}.conv1.w"]), pv[f"{p}.conv1.b"])
        x = ad.batchnorm(x, pv[f"{p}.bn2.gamma"], pv[f"{p}.bn2.beta"],
                         BNBuffers(buffers[f"{p}.bn2.mean"], buffers[f"{p}.bn2.var"]), bn_mode)
        x = ad.relu(x)
        x = ad.bias_add(ad.conv2d(x, pv[f"{p}.conv2.w"]), pv[f"{p}.conv2.b"])
        outs.append(x)
    return tuple(outs)  # type: ignore[return-value]


class CascadeModel:
    """Parameter store plus forward graph builder for the unrolled cascade."""

    def __init__(self, cfg: CascadeConfig, params: dict[str, np.ndarray],
                 buffers: dict[str, np.ndarray]):
        _validate_config(cfg)
        self.cfg = cfg
        spec = parameter_spec(cfg)
        missing = [s.name for s in spec if s.name not in params]
        extra = sorted(set(params) - {s.name for s in spec})
        if missing or extra:
            raise ConfigError(f"parameter dict does not match the model spec "
                              f"(missing {missing[:3]}, extra {extra[:3]})")
        for s in spec:
            if params[s.name].shape != s.shape:
                raise ConfigError(f"parameter {s.name!r} has shape {params[s.name].shape}, "
                                  f"expected {s.shape}")
        self.params = {s.name: params[s.name] for s in spec}
        bspec = buffer_spec(cfg)
        missing_b = [name for name, _ in bspec if name not in buffers]
        if missing_b:
            raise ConfigError(f"buffer dict is missing {missing_b[:3]}")
        self.buffers = {name: buffers[name] for name, _ in bspec}

    @property
    def dtype(self) -> np.dtype:
        for arr in self.params.values():
            if arr.size:
                return arr.dtype
        return np.dtype(T.default_dtype())

    # -- graph construction -------------------------------------------------

    def param_vars(self) -> dict[str, Var]:
        return {name: Var(arr) for name, arr in self.params.items()}

    def _split_vars(self, re: Var, im: Var, in_low: int, coils: int):
        xrl = ad.avg_pool2(ad.slice_channels(re, 0, in_low))
        xil = ad.avg_pool2(ad.slice_channels(im, 0, in_low))
        xrh = ad.slice_channels(re, in_low, coils)
        xih = ad.slice_channels(im, in_low, coils)
        return xrh, xih, xrl, xil

    def block_vars(self, bi: int, re: Var, im: Var, pv: dict[str, Var],
                   bn_mode: str) -> tuple[Var, Var]:
        cfg = self.cfg
        w = block_widths(cfg)
        cur = self._split_vars(re, im, w["in_low"], cfg.coils)
        kv = lambda layer: {b: pv[f"block{bi}.{layer}.{b}"] for b in BANK_NAMES}
        cur = oc.dual_octconv_vars(*cur, kv("layer0"))
        hist = [cur]
        for j in range(1, cfg.block.num_layers):
            cur = oc.dual_octconv_vars(*cur, kv(f"layer{j}"))
            if cfg.block.dense:
                newest_first = [cur] + hist[::-1]
                cur = fuse_unit_vars(newest_first, pv, self.buffers,
                                     f"block{bi}.fuse{j}", bn_mode, w)
            hist.append(cur)
        yrh, yih, yrl, yil = oc.dual_octconv_vars(*cur, kv("out"))
        if w["out_low"] == 0:
            merged = ad.concat([yrh, yih])
        elif w["out_high"] == 0:
            merged = ad.upsample_nearest2(ad.concat([yrl, yil]))
        else:
            merged = ad.add(ad.upsample_nearest2(ad.concat([yrl, yil])),
                            ad.concat([yrh, yih]))
        return (ad.slice_channels(merged, 0, cfg.coils),
                ad.slice_channels(merged, cfg.coils, 2 * cfg.coils))

    def forward_vars(self, y: np.ndarray, mask: np.ndarray, bn_mode: str = "train",
                     pv: dict[str, Var] | None = None) -> tuple[Var, Var]:
        """Build the full cascade graph from measured k-space.

        Args:
            y: complex k-space, ``(n, coils, h, w)`` (centered layout).
            mask: binary sampling mask, ``(h, w)`` or ``(n, h, w)``.
            bn_mode: train | eval | identity.
            pv: parameter nodes (defaults to fresh ones over ``self.params``).
        """
        y4, mask4 = _normalize_y_mask(y, mask, self.cfg.coils)
        y4 = y4.astype(T.complex_dtype_for(self.dtype), copy=False)
        mask4 = mask4.astype(self.dtype)
        if pv is None:
            pv = self.param_vars()
        x0 = T.ifft2c(y4)
        re = Var(np.ascontiguousarray(x0.real))
        im = Var(np.ascontiguousarray(x0.imag))
        keep = (1.0 - mask4).astype(re.data.dtype)
        my = y4 * mask4
        my_re = np.ascontiguousarray(my.real)
        my_im = np.ascontiguousarray(my.imag)
        for bi in range(self.cfg.num_blocks):
            bre, bim = self.block_vars(bi, re, im, pv, bn_mode)
            kre, kim = ad.fft2c(bre, bim)
            kre = ad.add_arr(ad.mul_arr(kre, keep), my_re)
            kim = ad.add_arr(ad.mul_arr(kim, keep), my_im)
            re, im = ad.ifft2c(kre, kim)
        return re, im

    # -- inference conveniences ---------------------------------------------

    def forward(self, y: np.ndarray, mask: np.ndarray, bn_mode: str = "eval") -> np.ndarray:
        """Reconstruct coil images from measured k-space (no gradients kept)."""
        squeeze = y.ndim == 3
        re, im = self.forward_vars(y if y.ndim == 4 else y[None], mask, bn_mode)
        out = np.empty(re.data.shape, dtype=T.complex_dtype_for(re.data.dtype))
        out.real = re.data
        out.imag = im.data
        return out[0] if squeeze else out

    def block_forward(self, x: np.ndarray, block_index: int = 0,
                      bn_mode: str = "identity") -> np.ndarray:
        """Run one block on complex coil images; returns the merged real tensor."""
        squeeze = x.ndim == 3
        x4 = x if x.ndim == 4 else x[None]
        if x4.shape[1] != self.cfg.coils:
            raise ShapeError(f"block input must carry {self.cfg.coils} coil channels, got {x4.shape[1]}")
        re = Var(np.ascontiguousarray(x4.real))
        im = Var(np.ascontiguousarray(x4.imag))
        bre, bim = self.block_vars(block_index, re, im, self.param_vars(), bn_mode)
        merged = np.concatenate([bre.data, bim.data], axis=1)
        return merged[0] if squeeze else merged


def _normalize_y_mask(y: np.ndarray, mask: np.ndarray, coils: int):
    if not np.iscomplexobj(y):
        raise ShapeError("measured k-space must be complex")
    y4 = y if y.ndim == 4 else y[None]
    if y4.ndim != 4 or y4.shape[1] != coils:
        raise ShapeError(f"k-space must be (n, {coils}, h, w), got {y.shape}")
    m = np.asarray(mask)
    if m.ndim == 2:
        m4 = m[None, None]
    elif m.ndim == 3:
        m4 = m[:, None]
    else:
        raise ShapeError(f"mask must be (h, w) or (n, h, w), got {m.shape}")
    if m4.shape[-2:] != y4.shape[-2:]:
        raise ShapeError(f"mask spatial dims {m4.shape[-2:]} do not match k-space {y4.shape[-2:]}")
    return y4, m4.astype(np.float64 if y4.dtype == np.complex128 else np.float32)


def dense_fuse(history: list[OctComplexFeature], params: dict[str, np.ndarray],
               buffers: dict[str, np.ndarray], prefix: str, widths: dict[str, int],
               bn_mode: str = "identity") -> OctComplexFeature:
    """Functional dense fusion over a newest-first history of octave features."""
    if not history:
        raise ShapeError("dense_fuse needs at least one history entry")
    feats = []
    squeeze = history[0].r_h.ndim == 3
    for f in history:
        f4 = f.batched()[0] if squeeze else f
        feats.append((Var(f4.r_h), Var(f4.i_h), Var(f4.r_l), Var(f4.i_l)))
    pv = {name: Var(arr) for name, arr in params.items()}
    rh, ih, rl, il = fuse_unit_vars(feats, pv, buffers, prefix, bn_mode, widths)
    out = OctComplexFeature(rh.data, ih.data, rl.data, il.data)
    return out.squeezed() if squeeze else out


def data_fidelity(x_hat: np.ndarray, y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Re-impose measured k-space samples on predicted coil images.

    ``out_i = ifft2c((1 - M) * fft2c(x_hat_i) + M * y_i)`` per coil; sampled
    frequencies come verbatim from ``y``, unsampled ones from the prediction.
    Idempotent, and the identity map wherever ``fft2c(x_hat)`` already agrees
    with ``y`` on the mask.
    """
    if x_hat.shape != y.shape:
        raise ShapeError(f"prediction/measurement shape mismatch: {x_hat.shape} vs {y.shape}")
    coils = x_hat.shape[-3]
    x4 = x_hat if x_hat.ndim == 4 else x_hat[None]
    y4, m4 = _normalize_y_mask(y if y.ndim == 4 else y[None], mask, coils)
    k = T.fft2c(x4)
    out = T.ifft2c(k * (1.0 - m4) + y4 * m4)
    return out[0] if x_hat.ndim == 3 else out


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error over all real and imaginary entries.

    Per-sample mean, averaged over the batch; with equal-sized samples this is
    the global mean over both components.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(0.5 * (np.abs(d.real).mean() + np.abs(d.imag).mean()))


def l1_loss_vars(re: Var, im: Var, target: np.ndarray) -> Var:
    tre = np.ascontiguousarray(target.real).astype(re.data.dtype, copy=False)
    tim = np.ascontiguousarray(target.imag).astype(im.data.dtype, copy=False)
    return ad.scale(ad.add(ad.mean_abs(ad.sub_arr(re, tre)),
                           ad.mean_abs(ad.sub_arr(im, tim))), 0.5)


def reconstruct(model: CascadeModel, y: np.ndarray, mask: np.ndarray,
                bn_mode: str = "eval") -> np.ndarray:
    """Cascade inference: zero-filled start, blocks interleaved with fidelity."""
    return model.forward(y, mask, bn_mode=bn_mode)


# ---------------------------------------------------------------------------
# checkpoint format

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray],
                    opt: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> None:
    """Write a checkpoint directory: manifest.json + one raw payload.

    The manifest lists every entry's name, shape, dtype, kind and byte offset
    into ``payload.bin`` (little-endian, row-major, concatenated in manifest
    order). Loading reproduces every array bit-exactly.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    groups = [("param", params), ("buffer", buffers)]
    if opt:
        groups.append(("opt", opt))
    for kind, table in groups:
        for name, arr in table.items():
            dt = np.dtype(arr.dtype).name
            if dt not in _DTYPE_TAGS:
                raise ConfigError(f"checkpoint arrays must be float32/float64, got {dt} for {name!r}")
            raw = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[dt]).tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "dtype": dt,
                            "kind": kind, "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    manifest = {"format": "octmri-checkpoint-v1", "payload": "payload.bin",
                "entries": entries, "meta": meta or {}}
    (path / "payload.bin").write_bytes(b"".join(chunks))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(path) -> dict:
    """Read a checkpoint directory back into {params, buffers, opt, meta}."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "octmri-checkpoint-v1":
        raise ConfigError(f"not a checkpoint directory: {path}")
    payload = (path / manifest["payload"]).read_bytes()
    out: dict = {"params": {}, "buffers": {}, "opt": {}, "meta": manifest.get("meta", {})}
    kind_key = {"param": "params", "buffer": "buffers", "opt": "opt"}
    for e in manifest["entries"]:
        raw = payload[e["offset"]: e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[e["dtype"]]).reshape(e["shape"])
        arr = arr.astype(e["dtype"], copy=True)  # native byte order, writable
        out[kind_key[e["kind"]]][e["name"]] = arr
    return out


def model_meta(cfg: CascadeConfig, dtype) -> dict:
    b = cfg.block
    return {"coils": cfg.coils, "num_blocks": cfg.num_blocks, "num_layers": b.num_layers,
            "channels": b.channels, "alpha": b.alpha, "kernel_size": b.kernel_size,
            "dense": b.dense, "dtype": np.dtype(dtype).name}


def config_from_meta(meta: dict) -> CascadeConfig:
    try:
        block = BlockConfig(num_layers=int(meta["num_layers"]), channels=int(meta["channels"]),
                            alpha=float(meta["alpha"]), kernel_size=int(meta["kernel_size"]),
                            dense=bool(meta["dense"]))
        return CascadeConfig(coils=int(meta["coils"]), num_blocks=int(meta["num_blocks"]), block=block)
    except KeyError as exc:
        raise ConfigError(f"checkpoint meta is missing model field {exc}") from exc


def load_model(path) -> tuple[CascadeModel, dict]:
    """Rebuild a CascadeModel (plus the raw checkpoint dict) from a directory."""
    ck = load_checkpoint(path)
    meta = ck["meta"]
    if "model" not in meta:
        raise ConfigError("checkpoint meta lacks a 'model' section")
    cfg = config_from_meta(meta["model"])
    model = CascadeModel(cfg, ck["params"], ck["buffers"])
    for name, arr in model.params.items():
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"checkpoint parameter {name!r} contains non-finite values")
    return model, ck
