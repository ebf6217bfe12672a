"""Minimal single-file NIfTI-1 reader/writer and central-slice PNG export.

Only the little-endian, single-file (``n+1``) flavor with uint8/int16/float32
payloads is supported; that covers every scanner export this pipeline sees.
The PNG writer emits the smallest profile that decodes everywhere: 8-bit
grayscale, non-interlaced, one IDAT chunk.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Volume

HEADER_SIZE = 348
DATA_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI-1 datatype code -> numpy dtype (little-endian)
_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_BITPIX = {2: 8, 4: 16, 16: 32}


class NiftiError(ValueError):
    """Base class for NIfTI parsing and writing failures."""


class BadMagic(NiftiError):
    """Not a little-endian single-file NIfTI-1 stream."""


class UnsupportedDatatype(NiftiError):
    """Datatype code outside the supported uint8/int16/float32 set."""


class TruncatedPayload(NiftiError):
    """Fewer payload bytes than the header dimensions promise."""


class NonFinite(NiftiError):
    """NaN or Inf encountered in the scaled payload."""


class DimensionOverflow(NiftiError):
    """A volume dimension does not fit the 16-bit header field."""


class HeaderInvalid(NiftiError):
    """Header fields are internally inconsistent."""


def read_nifti(buf: bytes) -> Volume:
    """Parse a single-file NIfTI-1 byte stream into a Volume.

    Applies the ``scl_slope``/``scl_inter`` affine scaling when the slope is
    nonzero and builds the voxel-to-world affine from the srow rows when an
    sform is declared.  Quaternion (qform) orientation is ignored.
    """
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayload(f"stream of {len(buf)} bytes is shorter than the {HEADER_SIZE}-byte header")
    (sizeof_hdr,) = struct.unpack_from("<i", buf, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise BadMagic(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE} (big-endian files are not supported)")
    magic = buf[344:348]
    if magic != MAGIC:
        raise BadMagic(f"magic is {magic!r}, expected {MAGIC!r}")

    dim = struct.unpack_from("<8h", buf, 40)
    (datatype, bitpix) = struct.unpack_from("<2h", buf, 70)
    pixdim = struct.unpack_from("<8f", buf, 76)
    (vox_offset, scl_slope, scl_inter) = struct.unpack_from("<3f", buf, 108)
    (sform_code,) = struct.unpack_from("<h", buf, 254)
    srow = np.array(struct.unpack_from("<12f", buf, 280), dtype=np.float64).reshape(3, 4)

    if dim[0] != 3:
        raise HeaderInvalid(f"only 3D volumes are supported, got dim[0]={dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise HeaderInvalid(f"non-positive dimensions {nx}x{ny}x{nz}")
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not in {sorted(_DTYPES)}")
    if bitpix != _BITPIX[datatype]:
        raise HeaderInvalid(f"bitpix {bitpix} inconsistent with datatype {datatype}")
    if vox_offset < DATA_OFFSET:
        raise HeaderInvalid(f"vox_offset {vox_offset} below the minimum {DATA_OFFSET}")
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise HeaderInvalid(f"non-positive pixdim {spacing}")

    dtype = _DTYPES[datatype]
    nvox = nx * ny * nz
    offset = int(vox_offset)
    if len(buf) - offset < nvox * dtype.itemsize:
        raise TruncatedPayload(
            f"payload holds {(len(buf) - offset) // dtype.itemsize} voxels, header promises {nvox}"
        )
    raw = np.frombuffer(buf, dtype=dtype, count=nvox, offset=offset).reshape((nx, ny, nz), order="F")

    data = raw.astype(np.float64)
    if scl_slope != 0.0:
        data = data * np.float64(scl_slope) + np.float64(scl_inter)
    if not np.isfinite(data).all():
        raise NonFinite("payload contains NaN or Inf after scaling")

    affine = None
    if sform_code > 0:
        affine = np.vstack([srow, [0.0, 0.0, 0.0, 1.0]])
    return Volume(data=data, spacing=spacing, affine=affine)  # type: ignore[arg-type]


def write_nifti(v: Volume) -> bytes:
    """Serialize a Volume as a float32 little-endian single-file NIfTI-1 stream.

    Written with slope 1 / intercept 0 so that ``read_nifti(write_nifti(v))``
    is bit-exact in data and spacing for float32-valued volumes.
    """
    nx, ny, nz = v.shape
    if max(nx, ny, nz) > 0x7FFF:
        raise DimensionOverflow(f"dimension {max(nx, ny, nz)} exceeds the 16-bit header field")

    hdr = bytearray(DATA_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, 16, 32)  # float32
    struct.pack_into("<8f", hdr, 76, 1.0, v.spacing[0], v.spacing[1], v.spacing[2], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, float(DATA_OFFSET), 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 2)  # spatial units: mm
    if v.affine is not None:
        struct.pack_into("<h", hdr, 254, 1)
        struct.pack_into("<12f", hdr, 280, *np.asarray(v.affine, dtype=np.float64)[:3, :].ravel())
    struct.pack_into("<4s", hdr, 344, MAGIC)
    # bytes 348..352 stay zero: no header extensions

    payload = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    return bytes(hdr) + payload


def read_nifti_file(path: str | Path) -> Volume:
    return read_nifti(Path(path).read_bytes())


def write_nifti_file(v: Volume, path: str | Path) -> None:
    Path(path).write_bytes(write_nifti(v))


@dataclass(frozen=True)
class SliceTriplet:
    """Central axial, coronal and sagittal slices as 8-bit grayscale images."""

    axial: np.ndarray
    coronal: np.ndarray
    sagittal: np.ndarray

    def planes(self) -> dict[str, np.ndarray]:
        return {"axial": self.axial, "coronal": self.coronal, "sagittal": self.sagittal}


def _window_to_u8(plane: np.ndarray) -> np.ndarray:
    lo = float(plane.min())
    hi = float(plane.max())
    if hi <= lo:
        return np.zeros(plane.shape, dtype=np.uint8)
    scaled = (plane.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.rint(scaled).astype(np.uint8)


def export_central_slices(v: Volume) -> SliceTriplet:
    """Extract min-max-windowed central slices for the annotation interface.

    The slice index is ``floor(dim/2)`` on each axis; each slice is windowed
    independently to [0, 255], and constant slices map to all zeros.
    """
    nx, ny, nz = v.shape
    return SliceTriplet(
        axial=_window_to_u8(v.data[:, :, nz // 2]),
        coronal=_window_to_u8(v.data[:, ny // 2, :]),
        sagittal=_window_to_u8(v.data[nx // 2, :, :]),
    )


def encode_png_gray8(img: np.ndarray) -> bytes:
    """Encode a 2D uint8 array as an 8-bit grayscale non-interlaced PNG."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected a 2D uint8 image")
    height, width = img.shape

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + np.ascontiguousarray(img[r]).tobytes() for r in range(height))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


def write_slice_pngs(v: Volume, image_id: str, directory: str | Path) -> dict[str, Path]:
    """Write ``<image_id>_{axial|coronal|sagittal}.png`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for plane, img in export_central_slices(v).planes().items():
        path = directory / f"{image_id}_{plane}.png"
        path.write_bytes(encode_png_gray8(img))
        paths[plane] = path
    return paths
