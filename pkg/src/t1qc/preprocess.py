"""Geometric and intensity normalization to the fixed network input grid.

The pipeline is resample (isotropic) -> optional rough affine alignment ->
min-max rescale -> center crop/pad.  Interpolation is separable per axis:
trilinear by default, Catmull-Rom cubic convolution behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ValidationFailed, Volume

INTERPOLATION_METHODS = ("trilinear", "cubic")
DEFAULT_TARGET_SHAPE = (169, 208, 179)


@dataclass(frozen=True)
class PreprocessConfig:
    target_spacing: float = 1.0
    target_shape: tuple[int, int, int] = DEFAULT_TARGET_SHAPE
    interpolation: str = "trilinear"
    do_registration: bool = False
    reference: Volume | None = None
    # When set, volumes whose spacing is already >= this threshold on every
    # axis skip the resampling stage.
    resample_threshold_mm: float | None = None

    def __post_init__(self) -> None:
        if self.target_spacing <= 0:
            raise ValidationFailed(f"target_spacing must be positive, got {self.target_spacing}")
        if len(self.target_shape) != 3 or any(d < 1 for d in self.target_shape):
            raise ValidationFailed(f"target_shape components must be >= 1, got {self.target_shape}")
        if self.interpolation not in INTERPOLATION_METHODS:
            raise ValidationFailed(f"interpolation must be one of {INTERPOLATION_METHODS}")
        if self.do_registration and self.reference is None:
            raise ValidationFailed("do_registration requires a reference volume")


def _catmull_rom_weights(t: float) -> tuple[float, float, float, float]:
    # Weights for samples at offsets (-1, 0, 1, 2) from floor(position).
    t2 = t * t
    t3 = t2 * t
    return (
        -0.5 * t + t2 - 0.5 * t3,
        1.0 - 2.5 * t2 + 1.5 * t3,
        0.5 * t + 2.0 * t2 - 1.5 * t3,
        -0.5 * t2 + 0.5 * t3,
    )


def _axis_weight_matrix(n_in: int, n_out: int, ratio: float, method: str) -> np.ndarray:
    """Interpolation weights W[j, i]: output voxel j as a combination of inputs.

    Output voxel centers map to input continuous indices through the spacing
    ratio (index j samples input index j * ratio, so integer ratios read input
    samples directly); indices outside the grid clamp to the nearest edge voxel.
    """
    centers = np.arange(n_out) * ratio
    w = np.zeros((n_out, n_in))
    base = np.floor(centers).astype(int)
    frac = centers - base
    for j in range(n_out):
        t = float(frac[j])
        if method == "trilinear":
            weights = (1.0 - t, t)
            offsets = (0, 1)
        else:
            weights = _catmull_rom_weights(t)
            offsets = (-1, 0, 1, 2)
        for off, wk in zip(offsets, weights):
            i = min(max(base[j] + off, 0), n_in - 1)
            w[j, i] += wk
    return w


def resample_isotropic(v: Volume, spacing: float, method: str = "trilinear") -> Volume:
    """Resample to isotropic voxels of the given spacing (mm).

    Output dimensions are round(in_dim * in_spacing / spacing), clamped to at
    least 1.  Resampling at the input's own isotropic spacing is the identity
    (bit-exact for trilinear).
    """
    if spacing <= 0:
        raise ValidationFailed(f"spacing must be positive, got {spacing}")
    if method not in INTERPOLATION_METHODS:
        raise ValidationFailed(f"method must be one of {INTERPOLATION_METHODS}")
    data = v.data.astype(np.float64, copy=False)
    out_dims = []
    ratios = []
    for axis in range(3):
        extent = v.shape[axis] * v.spacing[axis]
        n_out = max(1, int(np.floor(extent / spacing + 0.5)))
        out_dims.append(n_out)
        ratios.append(spacing / v.spacing[axis])
    for axis in range(3):
        w = _axis_weight_matrix(v.shape[axis], out_dims[axis], ratios[axis], method)
        data = np.moveaxis(np.tensordot(w, data, axes=(1, axis)), 0, axis)

    affine = None
    if v.affine is not None:
        # new index j sits at input index j * ratio per axis
        affine = v.affine @ np.diag([ratios[0], ratios[1], ratios[2], 1.0])
    return Volume(data=data, spacing=(spacing, spacing, spacing), affine=affine)


def rescale_minmax(v: Volume) -> Volume:
    """Map intensities linearly onto [0, 1]; constant volumes map to zeros."""
    data = v.data.astype(np.float64, copy=False)
    lo = float(data.min())
    hi = float(data.max())
    if hi <= lo:
        out = np.zeros_like(data)
    else:
        out = (data - lo) / (hi - lo)
    return Volume(data=out, spacing=v.spacing, affine=v.affine)


def crop_or_pad(v: Volume, shape: Sequence[int]) -> Volume:
    """Center crop axes larger than the target and zero-pad smaller ones.

    When the size difference is odd, the extra cropped (or padded) voxel goes
    to the high-index side.
    """
    target = tuple(int(s) for s in shape)
    if len(target) != 3 or any(s < 1 for s in target):
        raise ValidationFailed(f"target shape components must be >= 1, got {shape}")
    out = np.zeros(target, dtype=v.data.dtype)
    src_slices = []
    dst_slices = []
    origin_shift = []
    for axis in range(3):
        n_in, n_out = v.shape[axis], target[axis]
        if n_in >= n_out:
            start = (n_in - n_out) // 2
            src_slices.append(slice(start, start + n_out))
            dst_slices.append(slice(0, n_out))
            origin_shift.append(start)
        else:
            pad_low = (n_out - n_in) // 2
            src_slices.append(slice(0, n_in))
            dst_slices.append(slice(pad_low, pad_low + n_in))
            origin_shift.append(-pad_low)
    out[tuple(dst_slices)] = v.data[tuple(src_slices)]
    affine = None
    if v.affine is not None:
        affine = v.affine.copy()
        affine[:3, 3] += affine[:3, :3] @ np.asarray(origin_shift, dtype=np.float64)
    return Volume(data=out, spacing=v.spacing, affine=affine)


def preprocess_pipeline(v: Volume, cfg: PreprocessConfig | None = None) -> Volume:
    """Run resample -> optional registration -> rescale -> crop/pad.

    The output has exactly ``cfg.target_shape`` voxels with values in [0, 1].
    """
    from .registration import register_affine  # local import to avoid a cycle

    cfg = cfg or PreprocessConfig()
    out = v
    skip_resample = cfg.resample_threshold_mm is not None and all(
        s >= cfg.resample_threshold_mm for s in v.spacing
    )
    if not skip_resample:
        out = resample_isotropic(out, cfg.target_spacing, cfg.interpolation)
    if cfg.do_registration:
        assert cfg.reference is not None
        result = register_affine(out, cfg.reference)
        out = result.warped
    out = rescale_minmax(out)
    return crop_or_pad(out, cfg.target_shape)
