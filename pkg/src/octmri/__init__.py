"""Parallel-MRI reconstruction with complex-valued dual-resolution convolutions.

An unrolled cascade alternates image-domain refinement blocks with k-space
data-fidelity projections. Refinement blocks operate on complex coil images
split into a full-resolution and a half-resolution frequency band, with
densely fused intermediate features. Everything runs on a small reverse-mode
tape over numpy arrays; no deep-learning framework is involved.
"""

from .errors import ConfigError, NumericsError, ShapeError
from .tensor import (set_default_dtype, default_dtype, complex_dtype_for,
                     set_checked, checked_mode, round_half_up,
                     conv2d, avg_pool2, upsample_nearest2,
                     fft2, ifft2, fft2c, ifft2c,
                     finite_diff_grad, GradCheckReport)
from .autodiff import Var, backward, zero_grads, BNBuffers, BN_EPS, batchnorm
from .octconv import (OctComplexFeature, DualOctKernel, BANK_NAMES,
                      split_frequency, merge_frequency, complex_conv2d,
                      dual_octconv_forward, dual_octconv_backward, dual_octconv_vars,
                      FlopsReport, count_flops, count_flops_banks)
from .cascade import (BlockConfig, CascadeConfig, CascadeModel,
                      block_widths, parameter_spec, buffer_spec, num_parameters,
                      cascade_flops, dense_fuse, data_fidelity,
                      l1_loss, reconstruct,
                      save_checkpoint, load_checkpoint, load_model)
from .simulate import (Phantom, CoilSensitivities, SamplingMask, KSpaceMeasurement,
                       PHANTOM_KINDS, MASK_PATTERNS,
                       make_phantom, make_coils, make_mask,
                       forward_acquire, zero_filled_recon,
                       make_dataset, save_dataset, load_dataset)
from .training import (TrainConfig, AdamState, FitReport,
                       init_complex_kernel, init_model, adam_step,
                       learning_rate, fit)
from .metrics import (coil_combine, psnr, PSNR_SENTINEL, ssim, ssim_terms,
                      evaluate, write_report_csv, save_error_grid)

__version__ = "0.1.0"
