"""
Phantoms, coil maps, and undersampling masks
============================================

A quick tour of the acquisition simulator: the three synthetic phantom
families, smoothly varying coil sensitivity maps whose root-sum-of-squares
is exactly one, and the four k-space undersampling patterns.

Outputs land in ``demo_out/``.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from octmri.simulate import make_coils, make_mask, make_phantom

OUT = Path(__file__).resolve().parent / "demo_out"
OUT.mkdir(exist_ok=True)

# %%
# Phantoms. Magnitude is normalized to peak 1; a seeded linear phase ramp
# makes the images genuinely complex-valued, which matters once the network
# is asked to track real and imaginary channels separately.

fig, axes = plt.subplots(2, 3, figsize=(9, 6))
for col, kind in enumerate(("shepp_logan", "blobs", "checker")):
    ph = make_phantom(kind, 128, 128, seed=7)
    axes[0, col].imshow(np.abs(ph.image[0]), cmap="gray")
    axes[0, col].set_title(kind)
    axes[1, col].imshow(np.angle(ph.image[0]), cmap="twilight")
    axes[1, col].set_title("phase")
    for ax in (axes[0, col], axes[1, col]):
        ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "phantoms.png", dpi=110)
plt.close(fig)
print("phantom magnitudes peak at",
      [float(np.abs(make_phantom(k, 64, 64, seed=1).image).max())
       for k in ("shepp_logan", "blobs", "checker")])

# %%
# Coil sensitivities. Eight Gaussian lobes spaced around the border; the
# root-sum-of-squares across coils is identically 1, so combining the coil
# images with conjugate weights returns the phantom exactly.

coils = make_coils(128, 128, 8, seed=3)
rss = np.sqrt((np.abs(coils.maps) ** 2).sum(axis=0))
print(f"RSS of coil maps: min {rss.min():.12f}, max {rss.max():.12f}")

fig, axes = plt.subplots(2, 4, figsize=(10, 5))
for i, ax in enumerate(axes.ravel()):
    ax.imshow(np.abs(coils.maps[i]), cmap="viridis")
    ax.set_title(f"coil {i}")
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "coils.png", dpi=110)
plt.close(fig)

# %%
# Undersampling masks. All four patterns keep a fully sampled region around
# the k-space center (DC sits at (h//2, w//2)); the printed fraction should
# hover near 1/R.

patterns = (("uniform1d", 3), ("cartesian1d", 3), ("random2d", 3), ("radial2d", 4))
fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
for ax, (pattern, R) in zip(axes, patterns):
    m = make_mask(pattern, R, 128, 128, center_fraction=0.08, seed=5)
    ax.imshow(m.mask, cmap="gray", interpolation="nearest")
    ax.set_title(f"{pattern} R={R}\nfraction {m.fraction:.3f} (1/R = {1 / R:.3f})")
    ax.axis("off")
    print(f"{pattern:<12} R={R}: sampled fraction {m.fraction:.4f}")
fig.tight_layout()
fig.savefig(OUT / "masks.png", dpi=110)
plt.close(fig)

print("wrote", OUT / "phantoms.png", OUT / "coils.png", OUT / "masks.png", sep="\n  ")
