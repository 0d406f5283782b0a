"""
Motion-cue containers: optical flow, depth, instance masks and the sequence
manifest that ties them together.

Formats:
    flow   Middlebury .flo (little-endian float32 magic 202021.25, int32 width,
           int32 height, interleaved float32 u, v, row-major)
    depth  PFM grayscale ("Pf", negative scale = little-endian, rows stored
           bottom-up) or 16-bit gray PNG with a manifest-declared scale
    masks  16-bit gray PNG of track ids, 0 = unassigned
"""

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence as SequenceType, Tuple, Union

import numpy as np
import yaml
from PIL import Image

from . import constants
from .exceptions import (
    DimensionMismatch,
    IoFailure,
    MalformedFile,
    MissingFile,
    NonFiniteValue,
    UnknownTrackId,
    ValidationError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_FLO_HEADER_BYTES = 12
_PFM_DIMS = re.compile(rb'^\s*(\d+)\s+(\d+)\s*$')
_PNG_16BIT_MODES = ('I;16', 'I;16B', 'I;16L', 'I')


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense (u, v) displacement between two consecutive frames, in pixels."""
    width: int
    height: int
    data: np.ndarray  # (height, width, 2) float32

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != (self.height, self.width, 2):
            raise DimensionMismatch(
                f"flow data shape {data.shape} does not match {self.height}x{self.width}x2"
            )
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("flow field contains NaN or Inf")
        object.__setattr__(self, 'data', _frozen(data))

    @property
    def u(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[..., 1]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Single-channel depth grid in the declared convention."""
    width: int
    height: int
    data: np.ndarray  # (height, width) float32, > 0
    convention: str = 'depth'
    clamped: int = 0  # pixels raised to the floor while loading

    def __post_init__(self):
        if self.convention not in constants.DEPTH_CONVENTIONS:
            raise ValidationError(f"unknown depth convention: {self.convention}")
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"depth data shape {data.shape} does not match {self.height}x{self.width}"
            )
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("depth map contains NaN or Inf")
        if np.any(data <= 0):
            raise ValidationError("depth map values must be positive; use clamp_depth first")
        object.__setattr__(self, 'data', _frozen(data))


@dataclass(frozen=True, eq=False)
class InverseDepthMap:
    """Relative inverse depth q = 1/z, known up to a positive scale."""
    width: int
    height: int
    q: np.ndarray  # (height, width) float64

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"inverse depth shape {q.shape} does not match {self.height}x{self.width}"
            )
        if not np.all(np.isfinite(q)) or np.any(q <= 0):
            raise NonFiniteValue("inverse depth must be finite and positive")
        object.__setattr__(self, 'q', _frozen(q))


@dataclass(frozen=True, eq=False)
class MaskFrame:
    """Per-frame instance label map; 0 marks unassigned pixels."""
    width: int
    height: int
    labels: np.ndarray  # (height, width) int64

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"mask shape {labels.shape} does not match {self.height}x{self.width}"
            )
        if labels.size and labels.min() < 0:
            raise MalformedFile("mask labels must be non-negative")
        object.__setattr__(self, 'labels', _frozen(labels.astype(np.int64)))

    @property
    def track_ids(self) -> List[int]:
        """Nonzero labels present in this frame, ascending."""
        return [int(t) for t in np.unique(self.labels) if t != constants.UNASSIGNED_LABEL]

    def track_mask(self, track_id: int) -> np.ndarray:
        return self.labels == track_id

    def track_masks(self) -> Dict[int, np.ndarray]:
        return {track_id: self.track_mask(track_id) for track_id in self.track_ids}

    def pixel_count(self, track_id: int) -> int:
        return int(np.count_nonzero(self.labels == track_id))


@dataclass(frozen=True, eq=False)
class Sequence:
    """Frames, cues and the track registry of one video clip."""
    width: int
    height: int
    track_ids: Tuple[int, ...]
    masks: Tuple[MaskFrame, ...]
    flows: Tuple[FlowField, ...]
    depths: Tuple[DepthMap, ...]
    depth_png_scale: float = constants.DEPTH_PNG_SCALE
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'track_ids', tuple(int(t) for t in self.track_ids))
        object.__setattr__(self, 'masks', tuple(self.masks))
        object.__setattr__(self, 'flows', tuple(self.flows))
        object.__setattr__(self, 'depths', tuple(self.depths))

        if len(set(self.track_ids)) != len(self.track_ids):
            raise UnknownTrackId(f"track registry has duplicate ids: {list(self.track_ids)}")
        if constants.UNASSIGNED_LABEL in self.track_ids:
            raise UnknownTrackId("track id 0 is reserved for unassigned pixels")
        if not self.masks:
            raise DimensionMismatch("sequence has no frames")
        if len(self.depths) != len(self.masks):
            raise DimensionMismatch(
                f"{len(self.depths)} depth maps for {len(self.masks)} frames"
            )
        if len(self.flows) != len(self.masks) - 1:
            raise DimensionMismatch(
                f"{len(self.flows)} flow fields for {len(self.masks)} frames (need frame_count - 1)"
            )

        for kind, items in (('mask', self.masks), ('flow', self.flows), ('depth', self.depths)):
            for index, item in enumerate(items):
                if (item.width, item.height) != (self.width, self.height):
                    raise DimensionMismatch(
                        f"{kind} {index} is {item.width}x{item.height}, "
                        f"sequence is {self.width}x{self.height}"
                    )

        registry = set(self.track_ids)
        for index, mask in enumerate(self.masks):
            unknown = set(mask.track_ids) - registry
            if unknown:
                raise UnknownTrackId(f"mask {index} has labels {sorted(unknown)} not in the track registry")

    @property
    def frame_count(self) -> int:
        return len(self.masks)

    @property
    def pair_count(self) -> int:
        return len(self.flows)

    def area(self, track_id: int) -> int:
        """Total pixel count of a track over the whole sequence."""
        return sum(mask.pixel_count(track_id) for mask in self.masks)

    def with_masks(self, masks: SequenceType[MaskFrame]) -> 'Sequence':
        return replace(self, masks=tuple(masks))

    def inverse_depth(self, frame: int) -> InverseDepthMap:
        return to_inverse_depth(self.depths[frame])


# ---------------------------------------------------------------------------
# Flow
# ---------------------------------------------------------------------------

def read_flow(path: PathLike) -> FlowField:
    """Read a Middlebury .flo file."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < _FLO_HEADER_BYTES:
        raise MalformedFile(f"{path}: truncated .flo header")

    magic = np.frombuffer(raw, dtype='<f4', count=1)[0]
    if magic != np.float32(constants.FLO_MAGIC):
        raise MalformedFile(f"{path}: bad .flo magic {magic!r}")

    width, height = (int(v) for v in np.frombuffer(raw, dtype='<i4', count=2, offset=4))
    if width <= 0 or height <= 0:
        raise MalformedFile(f"{path}: invalid .flo size {width}x{height}")

    expected = _FLO_HEADER_BYTES + 8 * width * height
    if len(raw) != expected:
        raise MalformedFile(f"{path}: expected {expected} bytes, found {len(raw)}")

    data = np.frombuffer(raw, dtype='<f4', offset=_FLO_HEADER_BYTES).reshape(height, width, 2)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: flow contains NaN or Inf")
    return FlowField(width=width, height=height, data=data.astype(np.float32))


def write_flow(path: PathLike, flow: FlowField) -> Path:
    path = Path(path)
    header = np.array([constants.FLO_MAGIC], dtype='<f4').tobytes()
    header += np.array([flow.width, flow.height], dtype='<i4').tobytes()
    _write_bytes(path, header + flow.data.astype('<f4').tobytes())
    return path


# ---------------------------------------------------------------------------
# Depth
# ---------------------------------------------------------------------------

def clamp_depth(values: np.ndarray, source: str = 'depth') -> Tuple[np.ndarray, int]:
    """Raise nonpositive samples to the floor, returning the clamped count."""
    values = np.asarray(values, dtype=np.float32)
    bad = values <= 0
    count = int(np.count_nonzero(bad))
    if count:
        logger.warning(f"{source}: clamped {count} nonpositive depth values to {constants.Q_MIN}")
        values = np.where(bad, np.float32(constants.Q_MIN), values)
    return values, count


def read_depth(path: PathLike, convention: str = 'depth',
               png_scale: float = constants.DEPTH_PNG_SCALE) -> DepthMap:
    """Read a PFM or 16-bit PNG depth grid."""
    path = Path(path)
    if convention not in constants.DEPTH_CONVENTIONS:
        raise MalformedFile(f"{path}: unknown depth convention {convention!r}")

    if path.suffix.lower() == '.png':
        values = _read_png16(path).astype(np.float64) * (png_scale / 65535.0)
    else:
        values = _read_pfm(path)

    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: depth contains NaN or Inf")

    values, clamped = clamp_depth(values, source=str(path))
    height, width = values.shape
    return DepthMap(width=width, height=height, data=values, convention=convention, clamped=clamped)


def write_depth(path: PathLike, depth: DepthMap) -> Path:
    """Write a little-endian grayscale PFM."""
    path = Path(path)
    header = b'Pf\n%d %d\n-1.0\n' % (depth.width, depth.height)
    body = np.flipud(depth.data).astype('<f4').tobytes()
    _write_bytes(path, header + body)
    return path


def write_depth_png(path: PathLike, depth: DepthMap,
                    png_scale: float = constants.DEPTH_PNG_SCALE) -> Path:
    """Quantize depth to 16 bits; png_scale is the value stored as 65535."""
    raw = np.rint(depth.data.astype(np.float64) / png_scale * 65535.0)
    _write_png16(Path(path), np.clip(raw, 0, 65535))
    return Path(path)


def to_inverse_depth(depth: DepthMap) -> InverseDepthMap:
    values = depth.data.astype(np.float64)
    if depth.convention == 'depth':
        q = 1.0 / values
    else:
        q = values
    q = np.clip(q, constants.Q_MIN, constants.Q_MAX)
    return InverseDepthMap(width=depth.width, height=depth.height, q=q)


def _read_pfm(path: Path) -> np.ndarray:
    raw = _read_bytes(path)
    lines = raw.split(b'\n', 3)
    if len(lines) < 4:
        raise MalformedFile(f"{path}: truncated PFM header")

    tag, dims, scale_line, body = lines
    tag = tag.strip()
    if tag == b'PF':
        raise MalformedFile(f"{path}: color PFM given where a single-channel depth map is expected")
    if tag != b'Pf':
        raise MalformedFile(f"{path}: not a PFM file")

    match = _PFM_DIMS.match(dims)
    if not match:
        raise MalformedFile(f"{path}: malformed PFM dimensions")
    width, height = (int(v) for v in match.groups())

    try:
        scale = float(scale_line.strip())
    except ValueError:
        raise MalformedFile(f"{path}: malformed PFM scale")
    if scale == 0 or not np.isfinite(scale):
        raise MalformedFile(f"{path}: malformed PFM scale")
    endian = '<' if scale < 0 else '>'

    if width <= 0 or height <= 0 or len(body) != 4 * width * height:
        raise MalformedFile(f"{path}: PFM body does not hold {width}x{height} floats")

    data = np.frombuffer(body, dtype=endian + 'f4').reshape(height, width)
    return np.flipud(data).astype(np.float32)


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def read_masks(path: PathLike) -> MaskFrame:
    labels = _read_png16(Path(path)).astype(np.int64)
    height, width = labels.shape
    return MaskFrame(width=width, height=height, labels=labels)


def write_masks(path: PathLike, mask: MaskFrame) -> Path:
    if mask.labels.size and mask.labels.max() > 65535:
        raise IoFailure(f"{path}: label {mask.labels.max()} does not fit in 16 bits")
    _write_png16(Path(path), mask.labels)
    return Path(path)


def _read_png16(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingFile(f"{path}: no such file")
    try:
        with Image.open(path) as image:
            if image.mode not in _PNG_16BIT_MODES:
                raise MalformedFile(f"{path}: expected 16-bit grayscale PNG, got mode {image.mode}")
            return np.array(image)
    except (OSError, SyntaxError) as e:
        raise MalformedFile(f"{path}: unreadable PNG ({e})")


def _write_png16(path: Path, values: np.ndarray) -> None:
    image = Image.fromarray(np.asarray(values).astype(np.uint16))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path, format='PNG')
    except OSError as e:
        raise IoFailure(f"{path}: {e}")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_sequence(manifest_path: PathLike) -> Sequence:
    """Load every cue a manifest lists and validate the result.

    Manifest schema (version 1, YAML)::

        version: 1
        width: 64
        height: 64
        track_ids: [1, 2, 3]
        depth_convention: inverse_depth   # or depth
        depth_png_scale: 1.0              # only used by .png depth files
        frames:
          - {mask: masks/0000.png, depth: depth/0000.pfm, flow: flow/0000.flo}
          - {mask: masks/0001.png, depth: depth/0001.pfm}

    Paths are relative to the manifest. Every frame but the last lists the
    flow to the next frame.
    """
    manifest_path = Path(manifest_path)
    document = _read_yaml(manifest_path)
    base = manifest_path.parent

    version = document.get('version')
    if version != constants.MANIFEST_VERSION:
        raise MalformedFile(f"{manifest_path}: unsupported manifest version {version!r}")

    frames = document.get('frames')
    if not isinstance(frames, list) or not frames:
        raise MalformedFile(f"{manifest_path}: 'frames' must be a non-empty list")

    try:
        width = int(document['width'])
        height = int(document['height'])
        track_ids = [int(t) for t in document.get('track_ids', [])]
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFile(f"{manifest_path}: bad header field ({e})")

    convention = str(document.get('depth_convention', 'depth'))
    raw_scale = document.get('depth_png_scale', constants.DEPTH_PNG_SCALE)
    try:
        png_scale = float(raw_scale)
    except (TypeError, ValueError):
        png_scale = float('nan')
    if not np.isfinite(png_scale) or png_scale <= 0:
        raise MalformedFile(f"{manifest_path}: depth_png_scale must be a positive number, got {raw_scale!r}")

    masks, depths, flows = [], [], []
    for index, frame in enumerate(frames):
        if not isinstance(frame, dict) or 'mask' not in frame or 'depth' not in frame:
            raise MalformedFile(f"{manifest_path}: frame {index} needs 'mask' and 'depth'")
        masks.append(read_masks(_resolve(base, frame['mask'])))
        depths.append(read_depth(_resolve(base, frame['depth']), convention, png_scale))
        is_last = index == len(frames) - 1
        if not is_last:
            if 'flow' not in frame:
                raise MalformedFile(f"{manifest_path}: frame {index} is missing its 'flow' entry")
            flows.append(read_flow(_resolve(base, frame['flow'])))

    sequence = Sequence(
        width=width,
        height=height,
        track_ids=tuple(track_ids),
        masks=tuple(masks),
        flows=tuple(flows),
        depths=tuple(depths),
        depth_png_scale=png_scale,
        source=manifest_path,
    )
    logger.info(
        f"Loaded {manifest_path}: {sequence.frame_count} frames, "
        f"{len(sequence.track_ids)} tracks, {width}x{height}"
    )
    return sequence


def write_sequence(sequence: Sequence, out_dir: PathLike,
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write every cue of a sequence plus its manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    frames = []
    conventions = {depth.convention for depth in sequence.depths}
    if len(conventions) > 1:
        raise IoFailure(f"{out_dir}: depth maps mix conventions {sorted(conventions)}")

    for index in range(sequence.frame_count):
        entry = {
            'mask': f"masks/{index:04d}.png",
            'depth': f"depth/{index:04d}.pfm",
        }
        write_masks(out_dir / entry['mask'], sequence.masks[index])
        write_depth(out_dir / entry['depth'], sequence.depths[index])
        if index < sequence.pair_count:
            entry['flow'] = f"flow/{index:04d}.flo"
            write_flow(out_dir / entry['flow'], sequence.flows[index])
        frames.append(entry)

    document = {
        'version': constants.MANIFEST_VERSION,
        'width': sequence.width,
        'height': sequence.height,
        'track_ids': list(sequence.track_ids),
        'depth_convention': conventions.pop(),
        'depth_png_scale': sequence.depth_png_scale,
        'frames': frames,
    }
    if extra:
        document.update(extra)

    manifest_path = out_dir / 'manifest.yaml'
    write_yaml(manifest_path, document)
    return manifest_path


def write_yaml(path: PathLike, document: Dict[str, Any]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            yaml.safe_dump(document, f, sort_keys=False)
    except OSError as e:
        raise IoFailure(f"{path}: {e}")
    return path


def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise MissingFile(f"{path}: no such file")
    try:
        with open(path) as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise MalformedFile(f"{path}: invalid YAML ({e})")
    except (OSError, UnicodeDecodeError) as e:
        raise MalformedFile(f"{path}: cannot read ({e})")
    if not isinstance(document, dict):
        raise MalformedFile(f"{path}: expected a mapping at the top level")
    return document


def read_yaml(path: PathLike) -> Dict[str, Any]:
    return _read_yaml(Path(path))


def _resolve(base: Path, relative: Any) -> Path:
    path = base / str(relative)
    if not path.exists():
        raise MissingFile(f"{path}: no such file")
    return path


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise MissingFile(f"{path}: no such file")
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise MalformedFile(f"{path}: cannot read ({e.strerror or e})")


def _write_bytes(path: Path, payload: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(payload)
    except OSError as e:
        raise IoFailure(f"{path}: {e}")
