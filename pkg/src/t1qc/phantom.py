"""Synthetic labeled volumes with QC ground truth known by construction.

The anatomy is deliberately stylized (nested ellipsoids for tissue, ghosting
for motion, bright tubes for contrast agent): the classifier only needs
learnable visual signatures that scale monotonically with the grade, not MR
physics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    ConsensusLabel,
    Grades,
    Tier,
    ValidationFailed,
    Volume,
    consensus_to_dict,
    tier_from_grades,
    write_jsonl,
)
from .nifti import write_nifti_file

DEFAULT_TISSUES = {"background": 0.02, "csf": 0.20, "gm": 0.55, "wm": 0.75}
DEFAULT_RADII_FRACTION = (0.86, 0.82, 0.84)
# Consensus class proportions observed on the source data: SR, tier 1, 2, 3.
DEFAULT_CLASS_MIX = (0.26, 0.16, 0.28, 0.30)
# Fraction of images with contrast agent per tier, rising with degradation.
DEFAULT_GADO_RATE_BY_TIER = {Tier.TIER1: 0.41, Tier.TIER2: 0.53, Tier.TIER3: 0.76}

NOISE_SIGMA0 = 0.06
CONTRAST_SHRINK_PER_GRADE = 0.45
MOTION_WEIGHT_PER_GRADE = 0.25
MOTION_COPIES = 3
SR_MODES = ("truncated", "segmented")


class ShapeTooSmall(ValueError):
    """Phantom shapes below 8 voxels per axis cannot host the shell structure."""


class InvalidMix(ValueError):
    """Class proportions do not sum to one."""


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (32, 40, 36)
    seed: int = 0
    tissue_intensities: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TISSUES))
    ellipsoid_radii_fraction: tuple[float, float, float] = DEFAULT_RADII_FRACTION

    def __post_init__(self) -> None:
        t = self.tissue_intensities
        if not (t["background"] < t["csf"] < t["gm"] < t["wm"]):
            raise ValidationFailed("tissue intensities must be ordered background < csf < gm < wm")
        if any(not (0 < f <= 1) for f in self.ellipsoid_radii_fraction):
            raise ValidationFailed("radii fractions must lie in (0, 1]")


@dataclass(frozen=True)
class ArtifactSpec:
    noise_grade: int = 0
    contrast_grade: int = 0
    motion_grade: int = 0
    gadolinium: bool = False
    sr_mode: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("noise_grade", "contrast_grade", "motion_grade"):
            if getattr(self, name) not in (0, 1, 2):
                raise ValidationFailed(f"{name} must be 0, 1 or 2")
        if self.sr_mode is not None and self.sr_mode not in SR_MODES:
            raise ValidationFailed(f"sr_mode must be one of {SR_MODES}")


# Inner shells as fractions of the outer (CSF) ellipsoid radii.
_GM_SHELL = 0.80
_WM_SHELL = 0.55


def generate_phantom(spec: PhantomSpec) -> Volume:
    """Nested-ellipsoid phantom: WM core in a GM shell in a CSF rim.

    Deterministic per seed; the seed jitters the outer radii by up to 5%.
    """
    if any(d < 8 for d in spec.shape):
        raise ShapeTooSmall(f"each dimension must be >= 8, got {spec.shape}")
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    jitter = 1.0 + rng.uniform(-0.05, 0.05, size=3)
    radii = np.asarray(spec.ellipsoid_radii_fraction) * (np.asarray(spec.shape) / 2.0) * jitter

    coords = [np.arange(n, dtype=np.float64) - (n - 1) / 2.0 for n in spec.shape]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    rho2 = (gx / radii[0]) ** 2 + (gy / radii[1]) ** 2 + (gz / radii[2]) ** 2

    t = spec.tissue_intensities
    data = np.full(spec.shape, t["background"], dtype=np.float64)
    data[rho2 <= 1.0] = t["csf"]
    data[rho2 <= _GM_SHELL**2] = t["gm"]
    data[rho2 <= _WM_SHELL**2] = t["wm"]
    return Volume(data=data, spacing=(1.0, 1.0, 1.0))


def inject_noise(v: Volume, grade: int, seed: int = 0) -> Volume:
    """Add zero-mean Gaussian noise with sigma = grade * 0.06, clamped to [0, 1]."""
    if grade == 0:
        return v
    rng = np.random.default_rng(np.random.PCG64(seed))
    noisy = v.data + rng.normal(0.0, NOISE_SIGMA0 * grade, size=v.shape)
    return Volume(data=np.clip(noisy, 0.0, 1.0), spacing=v.spacing, affine=v.affine)


def inject_contrast_loss(
    v: Volume, grade: int, gm_value: float = DEFAULT_TISSUES["gm"], wm_value: float = DEFAULT_TISSUES["wm"]
) -> Volume:
    """Shrink the GM-WM gap by (1 - 0.45*grade), moving both toward their midpoint.

    Operates on phantoms whose voxels carry the exact tissue values.
    """
    if grade == 0:
        return v
    factor = 1.0 - CONTRAST_SHRINK_PER_GRADE * grade
    mid = 0.5 * (gm_value + wm_value)
    data = v.data.copy()
    data[v.data == gm_value] = mid + (gm_value - mid) * factor
    data[v.data == wm_value] = mid + (wm_value - mid) * factor
    return Volume(data=data, spacing=v.spacing, affine=v.affine)


def inject_motion(v: Volume, grade: int, seed: int = 0) -> Volume:
    """Ghosting: blend the volume with the mean of randomly shifted copies.

    Shift magnitude grows with the grade (<= 2 + 2*grade voxels per axis) and
    the ghost weight is 0.25 * grade.  Constant volumes pass through exactly.
    """
    if grade == 0:
        return v
    rng = np.random.default_rng(np.random.PCG64(seed))
    max_shift = 2 + 2 * grade
    ghost = np.zeros_like(v.data)
    for _ in range(MOTION_COPIES):
        shift = rng.integers(-max_shift, max_shift + 1, size=3)
        ghost += np.roll(v.data, tuple(shift), axis=(0, 1, 2))
    ghost /= MOTION_COPIES
    weight = MOTION_WEIGHT_PER_GRADE * grade
    return Volume(data=v.data + weight * (ghost - v.data), spacing=v.spacing, affine=v.affine)


def inject_gadolinium(v: Volume, seed: int = 0, intensity: float = 0.95) -> Volume:
    """Superimpose 2-4 bright curvilinear tubes inside the GM/CSF shell region."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    shape = np.asarray(v.shape)
    center = (shape - 1) / 2.0
    # keep arcs well inside the outer ellipsoid
    orbit = 0.55 * shape / 2.0
    data = v.data.copy()
    n_tubes = int(rng.integers(2, 5))
    for _ in range(n_tubes):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        radius_frac = rng.uniform(0.7, 1.0)
        span = rng.uniform(np.pi / 2.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tube_radius = rng.uniform(1.0, 2.0)
        n_steps = max(16, int(span * float(np.max(orbit)) * 2))
        ts = phase + np.linspace(0.0, span, n_steps)
        points = center + radius_frac * (
            np.outer(np.cos(ts), e1 * orbit) + np.outer(np.sin(ts), e2 * orbit)
        )
        _paint_tube(data, points, tube_radius, intensity)
    return Volume(data=data, spacing=v.spacing, affine=v.affine)


def _paint_tube(data: np.ndarray, points: np.ndarray, radius: float, intensity: float) -> None:
    shape = data.shape
    r = int(np.ceil(radius))
    offsets = np.stack(
        np.meshgrid(*(np.arange(-r, r + 1),) * 3, indexing="ij"), axis=-1
    ).reshape(-1, 3)
    offsets = offsets[np.linalg.norm(offsets, axis=1) <= radius]
    voxels = np.rint(points).astype(np.int64)
    targets = (voxels[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    valid = np.all((targets >= 0) & (targets < np.asarray(shape)), axis=1)
    targets = targets[valid]
    data[targets[:, 0], targets[:, 1], targets[:, 2]] = np.maximum(
        data[targets[:, 0], targets[:, 1], targets[:, 2]], intensity
    )


def make_sr_variant(
    v: Volume,
    mode: str,
    seed: int = 0,
    gm_value: float = DEFAULT_TISSUES["gm"],
    wm_value: float = DEFAULT_TISSUES["wm"],
) -> Volume:
    """Turn a proper volume into a straight-reject example.

    ``truncated`` zeroes a contiguous 40-60% block of slices on one axis;
    ``segmented`` thresholds the volume at the GM/WM midpoint into {0, 1}.
    """
    if mode not in SR_MODES:
        raise ValidationFailed(f"mode must be one of {SR_MODES}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    if mode == "segmented":
        mid = 0.5 * (gm_value + wm_value)
        return Volume(data=(v.data >= mid).astype(np.float64), spacing=v.spacing, affine=v.affine)
    axis = int(rng.integers(0, 3))
    n = v.shape[axis]
    lo = int(np.ceil(0.4 * n))
    hi = int(np.floor(0.6 * n))
    block = int(rng.integers(lo, max(lo, hi) + 1))
    start = int(rng.integers(0, n - block + 1))
    data = v.data.copy()
    index = [slice(None)] * 3
    index[axis] = slice(start, start + block)
    data[tuple(index)] = 0.0
    return Volume(data=data, spacing=v.spacing, affine=v.affine)


# All grade vectors compatible with each tier, in lexicographic order.
_TIER_GRADE_VECTORS = {
    Tier.TIER1: [(0, 0, 0)],
    Tier.TIER2: [
        g
        for g in ((m, c, n) for m in range(2) for c in range(2) for n in range(2))
        if max(g) == 1
    ],
    Tier.TIER3: [
        g
        for g in ((m, c, n) for m in range(3) for c in range(3) for n in range(3))
        if max(g) == 2
    ],
}


@dataclass(frozen=True)
class LabeledSample:
    volume: Volume
    label: ConsensusLabel
    patient_id: str


def apply_artifacts(volume: Volume, artifact: ArtifactSpec, tissues: dict[str, float]) -> Volume:
    """Apply injections in the fixed order contrast -> motion -> noise -> gadolinium."""
    rng = np.random.default_rng(np.random.PCG64(artifact.seed))
    sub = rng.integers(0, 2**62, size=4)
    if artifact.sr_mode is not None:
        mode_seed = int(sub[0])
        return make_sr_variant(
            volume, artifact.sr_mode, seed=mode_seed, gm_value=tissues["gm"], wm_value=tissues["wm"]
        )
    out = inject_contrast_loss(volume, artifact.contrast_grade, tissues["gm"], tissues["wm"])
    out = inject_motion(out, artifact.motion_grade, seed=int(sub[1]))
    out = inject_noise(out, artifact.noise_grade, seed=int(sub[2]))
    if artifact.gadolinium:
        out = inject_gadolinium(out, seed=int(sub[3]))
    return out


def generate_labeled_dataset(
    n: int,
    shape: tuple[int, int, int] = (32, 40, 36),
    class_mix: Sequence[float] = DEFAULT_CLASS_MIX,
    seed: int = 0,
    tissues: dict[str, float] | None = None,
    gado_rate_by_tier: dict[Tier, float] | None = None,
) -> list[LabeledSample]:
    """Generate n phantoms with exact consensus labels and synthetic patients.

    ``class_mix`` gives the (SR, tier1, tier2, tier3) proportions; counts are
    allocated by largest remainder.  Patients carry 1-3 images each.  Serial
    and parallel generation agree because each sample derives its own RNG
    from ``seed`` xor the sample index.
    """
    mix = tuple(float(p) for p in class_mix)
    if len(mix) != 4 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise InvalidMix(f"class mix must be 4 non-negative proportions summing to 1, got {class_mix}")
    tissues = dict(tissues or DEFAULT_TISSUES)
    gado_rate = dict(gado_rate_by_tier or DEFAULT_GADO_RATE_BY_TIER)

    counts = _largest_remainder([p * n for p in mix], n)
    classes: list[int] = []
    for class_index, count in enumerate(counts):
        classes.extend([class_index] * count)

    master = np.random.default_rng(np.random.PCG64(seed))
    class_order = np.asarray(classes)
    master.shuffle(class_order)
    classes = class_order.tolist()

    patient_of: list[str] = []
    patient_index = 0
    while len(patient_of) < n:
        size = int(master.integers(1, 4))
        patient_id = f"P{patient_index:05d}"
        patient_of.extend([patient_id] * min(size, n - len(patient_of)))
        patient_index += 1

    samples: list[LabeledSample] = []
    for i in range(n):
        rng = np.random.default_rng(np.random.PCG64((seed ^ i) & 0xFFFFFFFFFFFFFFFF))
        image_id = f"IMG{i:05d}"
        phantom = generate_phantom(
            PhantomSpec(shape=shape, seed=int(rng.integers(0, 2**62)), tissue_intensities=tissues)
        )
        cls = classes[i]
        if cls == 0:
            mode = SR_MODES[int(rng.integers(0, 2))]
            artifact = ArtifactSpec(sr_mode=mode, seed=int(rng.integers(0, 2**62)))
            label = ConsensusLabel(image_id=image_id, straight_reject=True)
        else:
            tier = Tier(cls)
            options = _TIER_GRADE_VECTORS[tier]
            m, c, nz = options[int(rng.integers(0, len(options)))]
            grades = Grades(motion=m, contrast=c, noise=nz)
            gado = bool(rng.random() < gado_rate[tier])
            artifact = ArtifactSpec(
                noise_grade=nz,
                contrast_grade=c,
                motion_grade=m,
                gadolinium=gado,
                seed=int(rng.integers(0, 2**62)),
            )
            label = ConsensusLabel(
                image_id=image_id,
                straight_reject=False,
                gadolinium=gado,
                grades=grades,
                tier=tier_from_grades(grades),
            )
        volume = apply_artifacts(phantom, artifact, tissues)
        samples.append(LabeledSample(volume=volume, label=label, patient_id=patient_of[i]))
    return samples


def _largest_remainder(quotas: Sequence[float], total: int) -> list[int]:
    base = [int(np.floor(q)) for q in quotas]
    remainder = total - sum(base)
    order = np.argsort([-(q - np.floor(q)) for q in quotas], kind="stable")
    for k in range(remainder):
        base[order[k]] += 1
    return base


def save_dataset(samples: Sequence[LabeledSample], directory: str | Path) -> Path:
    """Write volumes as .nii files plus a labels.jsonl manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        write_nifti_file(s.volume, directory / f"{s.label.image_id}.nii")
        record = consensus_to_dict(s.label)
        record["patient_id"] = s.patient_id
        lines.append(record)
    manifest = directory / "labels.jsonl"
    manifest.write_text(write_jsonl(lines))
    return manifest
