"""
Scripted rigid scenes rendered with the instantaneous screw-motion flow
equations, used as the ground-truth oracle for the pipeline.

Every object is a region (rect, ellipse or polygon in normalized
coordinates), an inverse-depth plane q = (1 + sx*x + sy*y) / z and a screw
motion relative to the camera. Camera ego-motion is the motion given to the
static objects and the background. Later objects paint over earlier ones.

Scene script (YAML)::

    width: 64
    height: 64
    frame_count: 4
    focal: 1.0
    depth_convention: inverse_depth
    background_group: 0
    background:
      depth: {z: 8.0, slope_y: 0.2}
      motion: {tau: [0, 0, -0.2], omega: [0, 0, 0]}
    objects:
      - name: far-layer
        track_id: 1
        group: 0
        region: {shape: rect, bounds: [-1, -1, 1, -0.3]}
        depth: {z: 16.0, slope_y: 0.2}
        motion: {tau: [0, 0, -0.2]}
        # optional: motions (one per frame pair), drift: [dx, dy], frames: [first, last]
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from . import constants
from .clustering import Labeling, render_segmentation, write_segmentation
from .cues import DepthMap, FlowField, MaskFrame, Sequence, read_yaml, write_sequence, write_yaml
from .exceptions import MalformedFile, ValidationError
from .motion_model import CoordGrid, normalize_coords
from .seeding import STAGE_NOISE, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScrewMotion:
    tau1: float = 0.0
    tau2: float = 0.0
    tau3: float = 0.0
    omega1: float = 0.0
    omega2: float = 0.0
    omega3: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.as_tuple()):
            raise ValidationError(f"screw motion must be finite: {self}")

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.tau1, self.tau2, self.tau3, self.omega1, self.omega2, self.omega3)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScrewMotion':
        tau = [float(v) for v in data.get('tau', (0.0, 0.0, 0.0))]
        omega = [float(v) for v in data.get('omega', (0.0, 0.0, 0.0))]
        if len(tau) != 3 or len(omega) != 3:
            raise MalformedFile(f"motion needs 3 tau and 3 omega values, got {data}")
        return cls(*tau, *omega)

    def to_dict(self) -> Dict[str, List[float]]:
        return {'tau': [self.tau1, self.tau2, self.tau3], 'omega': [self.omega1, self.omega2, self.omega3]}


@dataclass(frozen=True)
class CameraModel:
    focal: float = constants.DEFAULT_FOCAL

    def __post_init__(self):
        if not self.focal > 0:
            raise ValidationError(f"focal length must be positive, got {self.focal}")


@dataclass(frozen=True)
class PlaneDepth:
    """Inverse depth q = (1 + slope_x*x + slope_y*y) / z."""
    z: float
    slope_x: float = 0.0
    slope_y: float = 0.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PlaneDepth':
        return cls(z=float(data['z']), slope_x=float(data.get('slope_x', 0.0)),
                   slope_y=float(data.get('slope_y', 0.0)))

    def inverse_depth(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (1.0 + self.slope_x * x + self.slope_y * y) / self.z

    def min_over(self, half_width: float, half_height: float) -> float:
        corners = [(sx * half_width, sy * half_height) for sx in (-1, 1) for sy in (-1, 1)]
        return min(float(self.inverse_depth(np.float64(x), np.float64(y))) for x, y in corners)


@dataclass(frozen=True)
class Region:
    shape: str
    params: Tuple[float, ...]  # rect: x0 y0 x1 y1; ellipse: cx cy rx ry; polygon: x y pairs

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Region':
        shape = data.get('shape')
        if shape == 'rect':
            params = data['bounds']
        elif shape == 'ellipse':
            params = list(data['center']) + list(data['radii'])
        elif shape == 'polygon':
            params = [float(v) for point in data['points'] for v in point]
        else:
            raise MalformedFile(f"unknown region shape {shape!r}")
        return cls(shape=shape, params=tuple(float(p) for p in params))

    def shifted(self, dx: float, dy: float) -> 'Region':
        if self.shape == 'rect':
            x0, y0, x1, y1 = self.params
            return Region('rect', (x0 + dx, y0 + dy, x1 + dx, y1 + dy))
        if self.shape == 'ellipse':
            cx, cy, rx, ry = self.params
            return Region('ellipse', (cx + dx, cy + dy, rx, ry))
        points = np.array(self.params).reshape(-1, 2) + (dx, dy)
        return Region('polygon', tuple(points.ravel()))

    def bounds(self) -> Tuple[float, float, float, float]:
        if self.shape == 'rect':
            return self.params
        if self.shape == 'ellipse':
            cx, cy, rx, ry = self.params
            return (cx - rx, cy - ry, cx + rx, cy + ry)
        points = np.array(self.params).reshape(-1, 2)
        return (*points.min(axis=0), *points.max(axis=0))

    def contains(self, grid: CoordGrid) -> np.ndarray:
        if self.shape == 'rect':
            x0, y0, x1, y1 = self.params
            return (grid.x >= x0) & (grid.x <= x1) & (grid.y >= y0) & (grid.y <= y1)
        if self.shape == 'ellipse':
            cx, cy, rx, ry = self.params
            return ((grid.x - cx) / rx) ** 2 + ((grid.y - cy) / ry) ** 2 <= 1.0
        cols, rows = grid.to_pixels(*np.array(self.params).reshape(-1, 2).T)
        canvas = Image.new('1', (grid.width, grid.height), 0)
        ImageDraw.Draw(canvas).polygon(list(zip(cols.tolist(), rows.tolist())), fill=1)
        return np.array(canvas, dtype=bool)


@dataclass(frozen=True)
class SceneObject:
    name: str
    track_id: int
    group: int
    region: Region
    depth: PlaneDepth
    motions: Tuple[ScrewMotion, ...]  # one per frame pair; the last one repeats
    drift: Tuple[float, float] = (0.0, 0.0)  # region shift per frame, normalized units
    frames: Optional[Tuple[int, int]] = None  # first and last visible frame

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SceneObject':
        try:
            if 'motions' in data:
                motions = tuple(ScrewMotion.from_dict(m) for m in data['motions'])
            else:
                motions = (ScrewMotion.from_dict(data.get('motion', {})),)
            frames = data.get('frames')
            return cls(
                name=str(data.get('name', f"object-{data['track_id']}")),
                track_id=int(data['track_id']),
                group=int(data['group']),
                region=Region.from_dict(data['region']),
                depth=PlaneDepth.from_dict(data['depth']),
                motions=motions,
                drift=tuple(float(v) for v in data.get('drift', (0.0, 0.0))),
                frames=tuple(int(f) for f in frames) if frames is not None else None,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedFile(f"bad scene object {data.get('name', '?')!r}: {e}")

    def motion_at(self, pair: int) -> ScrewMotion:
        return self.motions[min(pair, len(self.motions) - 1)]

    def visible_at(self, frame: int) -> bool:
        return self.frames is None or self.frames[0] <= frame <= self.frames[1]

    def region_at(self, frame: int) -> Region:
        return self.region.shifted(frame * self.drift[0], frame * self.drift[1])


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    frame_count: int
    background_depth: PlaneDepth
    background_motion: ScrewMotion
    objects: Tuple[SceneObject, ...]
    camera: CameraModel = field(default_factory=CameraModel)
    depth_convention: str = 'inverse_depth'
    background_group: int = 0
    name: str = 'custom'

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        self.validate()

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.frame_count < 2:
            raise ValidationError(
                f"scene needs a positive size and at least 2 frames, got "
                f"{self.width}x{self.height}, {self.frame_count} frames"
            )
        if self.depth_convention not in constants.DEPTH_CONVENTIONS:
            raise ValidationError(f"depth_convention must be one of {constants.DEPTH_CONVENTIONS}")

        s_norm = max(self.width, self.height) / 2.0
        half_w, half_h = self.width / (2 * s_norm), self.height / (2 * s_norm)
        tolerance = 1e-9

        track_ids = [obj.track_id for obj in self.objects]
        if len(set(track_ids)) != len(track_ids) or any(t <= 0 for t in track_ids):
            raise ValidationError(f"track ids must be unique and positive, got {track_ids}")

        groups = {obj.group for obj in self.objects}
        if groups and groups != set(range(max(groups) + 1)):
            raise ValidationError(f"group ids must be contiguous from 0, got {sorted(groups)}")

        for depth, name in [(self.background_depth, 'background')] + [(o.depth, o.name) for o in self.objects]:
            if depth.z <= 0 or depth.min_over(half_w, half_h) <= 0:
                raise ValidationError(f"{name}: depth must be positive over the whole image")

        for obj in self.objects:
            for frame in range(self.frame_count):
                x0, y0, x1, y1 = obj.region_at(frame).bounds()
                if x0 < -half_w - tolerance or x1 > half_w + tolerance \
                        or y0 < -half_h - tolerance or y1 > half_h + tolerance:
                    raise ValidationError(f"{obj.name}: region leaves the image in frame {frame}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], name: str = 'custom') -> 'SceneSpec':
        try:
            background = data.get('background', {})
            return cls(
                width=int(data.get('width', constants.DEFAULT_IMAGE_SIZE)),
                height=int(data.get('height', constants.DEFAULT_IMAGE_SIZE)),
                frame_count=int(data.get('frame_count', constants.DEFAULT_FRAME_COUNT)),
                background_depth=PlaneDepth.from_dict(background.get('depth', {'z': 10.0})),
                background_motion=ScrewMotion.from_dict(background.get('motion', {})),
                objects=tuple(SceneObject.from_dict(o) for o in data.get('objects', [])),
                camera=CameraModel(float(data.get('focal', constants.DEFAULT_FOCAL))),
                depth_convention=data.get('depth_convention', 'inverse_depth'),
                background_group=int(data.get('background_group', 0)),
                name=str(data.get('name', name)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise MalformedFile(f"bad scene script: {e}")

    @property
    def track_ids(self) -> Tuple[int, ...]:
        return tuple(sorted(obj.track_id for obj in self.objects))

    def ground_truth(self) -> Labeling:
        groups = {obj.track_id: obj.group for obj in self.objects}
        return Labeling.from_dict(groups, background_group=self.background_group)


def load_scene(path) -> SceneSpec:
    path = Path(path)
    return SceneSpec.from_dict(read_yaml(path), name=path.stem)


def render_flow(motion: ScrewMotion, x: np.ndarray, y: np.ndarray, q: np.ndarray,
                focal: float = constants.DEFAULT_FOCAL) -> Tuple[np.ndarray, np.ndarray]:
    """Instantaneous flow of a rigid screw motion, normalized units."""
    return _screw_flow(motion.as_tuple(), x, y, q, focal)


def _screw_flow(params, x, y, q, f: float) -> Tuple[np.ndarray, np.ndarray]:
    # params: (tau1, tau2, tau3, omega1, omega2, omega3), scalars or per-pixel arrays
    t1, t2, t3, w1, w2, w3 = params
    u = -x * y / f * w1 + (f * f + x * x) / f * w2 - y * w3 + (f * t1 - x * t3) * q
    v = -(f * f + y * y) / f * w1 + x * y / f * w2 + x * w3 + (f * t2 - y * t3) * q
    return u, v


@dataclass(frozen=True, eq=False)
class RenderedPair:
    flow: FlowField
    depth: DepthMap
    mask: MaskFrame
    labels: Labeling


def _stored_inverse_depth(q: np.ndarray, convention: str) -> Tuple[np.ndarray, np.ndarray]:
    """Depth as written to disk (float32) and the inverse depth a reader recovers from it."""
    if convention == 'inverse_depth':
        stored = q.astype(np.float32)
        return stored, stored.astype(np.float64)
    stored = (1.0 / q).astype(np.float32)
    return stored, 1.0 / stored.astype(np.float64)


def render_pair(spec: SceneSpec, m: int, grid: Optional[CoordGrid] = None) -> RenderedPair:
    """Cues of frame m: its depth and masks plus the flow towards frame m + 1."""
    if not 0 <= m < spec.frame_count:
        raise ValidationError(f"frame {m} is outside 0..{spec.frame_count - 1}")
    grid = grid or normalize_coords(spec.width, spec.height)

    owner = np.full((spec.height, spec.width), -1, dtype=np.int64)
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    q = spec.background_depth.inverse_depth(grid.x, grid.y)
    for index, obj in enumerate(spec.objects):
        if not obj.visible_at(m):
            continue
        inside = obj.region_at(m).contains(grid)
        owner[inside] = index
        labels[inside] = obj.track_id
        q = np.where(inside, obj.depth.inverse_depth(grid.x, grid.y), q)

    stored, q = _stored_inverse_depth(q, spec.depth_convention)

    motions = [spec.background_motion] + [obj.motion_at(m) for obj in spec.objects]
    params = np.array([motion.as_tuple() for motion in motions])[owner + 1]
    u, v = _screw_flow(np.moveaxis(params, -1, 0), grid.x, grid.y, q, spec.camera.focal)

    flow = np.stack([u, v], axis=-1) * grid.s_norm
    return RenderedPair(
        flow=FlowField(width=spec.width, height=spec.height, data=flow.astype(np.float32)),
        depth=DepthMap(width=spec.width, height=spec.height, data=stored, convention=spec.depth_convention),
        mask=MaskFrame(width=spec.width, height=spec.height, labels=labels),
        labels=spec.ground_truth(),
    )


def add_noise(pair: RenderedPair, sigma_flow: float = 0.0, sigma_depth_rel: float = 0.0,
              seed=constants.DEFAULT_SEED) -> RenderedPair:
    """Gaussian flow noise in pixels and multiplicative depth noise, clamped positive."""
    if sigma_flow < 0 or sigma_depth_rel < 0:
        raise ValidationError(f"noise levels must be nonnegative, got {sigma_flow}, {sigma_depth_rel}")
    if sigma_flow == 0 and sigma_depth_rel == 0:
        return pair
    rng = np.random.default_rng(seed)
    flow = pair.flow.data.astype(np.float64) + rng.normal(0.0, sigma_flow, pair.flow.data.shape)
    factor = 1.0 + rng.normal(0.0, sigma_depth_rel, pair.depth.data.shape)
    depth = np.maximum(pair.depth.data.astype(np.float64) * factor, constants.Q_MIN)
    return replace(
        pair,
        flow=replace(pair.flow, data=flow.astype(np.float32)),
        depth=replace(pair.depth, data=depth.astype(np.float32)),
    )


def build_sequence(spec: SceneSpec, sigma_flow: float = 0.0, sigma_depth_rel: float = 0.0,
                   seed=constants.DEFAULT_SEED) -> Tuple[Sequence, Labeling]:
    grid = normalize_coords(spec.width, spec.height)
    pairs = [
        add_noise(render_pair(spec, m, grid), sigma_flow, sigma_depth_rel, derive_seed(seed, STAGE_NOISE, m))
        for m in range(spec.frame_count)
    ]
    sequence = Sequence(
        width=spec.width,
        height=spec.height,
        track_ids=spec.track_ids,
        masks=[p.mask for p in pairs],
        flows=[p.flow for p in pairs[:-1]],
        depths=[p.depth for p in pairs],
    )
    return sequence, spec.ground_truth()


def emit_sequence(spec: SceneSpec, out_dir, sigma_flow: float = 0.0, sigma_depth_rel: float = 0.0,
                  seed=constants.DEFAULT_SEED) -> Path:
    """Write cues, manifest, groundtruth.yaml and ground-truth label masks."""
    out_dir = Path(out_dir)
    sequence, truth = build_sequence(spec, sigma_flow, sigma_depth_rel, seed)
    manifest = write_sequence(sequence, out_dir, extra={'scene': spec.name})

    write_yaml(out_dir / constants.GROUNDTRUTH_FILE, {
        'scene': spec.name,
        'background_group': truth.background_group,
        'groups': {int(t): int(g) for t, g in truth.as_dict().items()},
        'objects': [
            {'name': obj.name, 'track_id': obj.track_id, 'group': obj.group,
             'motions': [motion.to_dict() for motion in obj.motions]}
            for obj in spec.objects
        ],
        'noise': {'flow_px': sigma_flow, 'depth_rel': sigma_depth_rel, 'seed': int(seed)},
    })
    write_segmentation(out_dir / 'groundtruth', render_segmentation(truth, sequence), truth)
    logger.info(f"Emitted scene {spec.name!r} to {out_dir} ({len(spec.objects)} tracks, {truth.num_groups} groups)")
    return manifest


def load_ground_truth(path) -> Labeling:
    """Object-level labels from a groundtruth.yaml."""
    document = read_yaml(path)
    try:
        groups = {int(t): int(g) for t, g in document['groups'].items()}
    except (KeyError, AttributeError, ValueError) as e:
        raise MalformedFile(f"{path}: bad groups table ({e})")
    return Labeling.from_dict(groups, background_group=document.get('background_group'))


# ---------------------------------------------------------------------------
# Presets (64x64, f = 1, |flow| < 3 px)
# ---------------------------------------------------------------------------

def _rect(x0, y0, x1, y1) -> Region:
    return Region('rect', (x0, y0, x1, y1))


def _ellipse(cx, cy, rx, ry) -> Region:
    return Region('ellipse', (cx, cy, rx, ry))


def _obj(name, track_id, group, region, depth, motion, drift=(0.0, 0.0)) -> SceneObject:
    return SceneObject(name=name, track_id=track_id, group=group, region=region,
                       depth=depth, motions=(motion,), drift=drift)


def _layers(forward: float, mover_speed: Optional[float]) -> List[SceneObject]:
    static = ScrewMotion(tau3=forward)
    near = ScrewMotion(tau3=forward * (mover_speed if mover_speed is not None else 1.0))
    return [
        _obj('far-layer', 1, 0, _rect(-1.0, -1.0, 1.0, -0.3), PlaneDepth(16.0, slope_y=0.2), static),
        _obj('mid-layer', 2, 0, _rect(-1.0, -0.1, 0.1, 1.0), PlaneDepth(4.0, slope_y=0.2), static),
        _obj('near-object', 3, 1 if mover_speed is not None else 0,
             _ellipse(0.55, 0.5, 0.3, 0.3), PlaneDepth(1.0, slope_y=0.2), near),
    ]


def parallax_trap() -> SceneSpec:
    """Forward ego-motion over depths 16 and 4 plus a depth-1 object moving
    forward at a quarter of the camera speed; its flow equals the depth-4
    layer's, so only depth tells them apart."""
    forward = -0.2
    return SceneSpec(
        width=64, height=64, frame_count=constants.DEFAULT_FRAME_COUNT,
        background_depth=PlaneDepth(8.0, slope_y=0.2),
        background_motion=ScrewMotion(tau3=forward),
        objects=tuple(_layers(forward, mover_speed=0.25)),
        name='parallax-trap',
    )


def parallax_static() -> SceneSpec:
    """Three static layers at depths 16, 4 and 1 under forward ego-motion."""
    forward = -0.075
    return SceneSpec(
        width=64, height=64, frame_count=constants.DEFAULT_FRAME_COUNT,
        background_depth=PlaneDepth(8.0, slope_y=0.2),
        background_motion=ScrewMotion(tau3=forward),
        objects=tuple(_layers(forward, mover_speed=None)),
        name='parallax-static',
    )


def _street(ego: ScrewMotion) -> List[SceneObject]:
    return [
        _obj('sky', 1, 0, _rect(-1.0, -1.0, 1.0, -0.55), PlaneDepth(10.0, slope_y=0.5), ego),
        _obj('building', 2, 0, _rect(-1.0, -0.55, -0.35, 0.3), PlaneDepth(3.0, slope_x=0.3), ego),
        _obj('ground', 3, 0, _rect(-1.0, 0.6, 1.0, 1.0), PlaneDepth(1.5, slope_y=0.5), ego),
    ]


def two_movers() -> SceneSpec:
    ego = ScrewMotion(tau1=0.03, tau3=-0.02, omega2=0.004)
    car = ScrewMotion(tau1=-0.04, tau2=0.01, tau3=0.01)
    cyclist = ScrewMotion(tau2=-0.03, omega3=0.02)
    car_depth = PlaneDepth(2.0, slope_x=0.1, slope_y=0.1)
    cyclist_depth = PlaneDepth(2.5, slope_x=0.1, slope_y=0.2)
    objects = _street(ego) + [
        _obj('car-body', 4, 1, _rect(-0.25, -0.2, 0.25, 0.3), car_depth, car, drift=(-0.02, 0.0)),
        _obj('car-roof', 5, 1, _rect(-0.2, -0.45, 0.2, -0.2), car_depth, car, drift=(-0.02, 0.0)),
        _obj('cyclist', 6, 2, _ellipse(0.6, 0.0, 0.22, 0.3), cyclist_depth, cyclist, drift=(0.0, -0.01)),
        _obj('wheel', 7, 2, _ellipse(0.6, 0.42, 0.18, 0.14), cyclist_depth, cyclist, drift=(0.0, -0.01)),
    ]
    return SceneSpec(
        width=64, height=64, frame_count=constants.DEFAULT_FRAME_COUNT,
        background_depth=PlaneDepth(6.0, slope_y=0.3), background_motion=ego,
        objects=tuple(objects), name='two-movers',
    )


def rotor() -> SceneSpec:
    """Panning camera over a spinning, sliding disk."""
    ego = ScrewMotion(tau1=0.02, omega2=0.01)
    spin = ScrewMotion(tau2=0.02, omega3=0.05)
    disk_depth = PlaneDepth(2.0, slope_x=0.2, slope_y=0.2)
    objects = _street(ego) + [
        _obj('disk', 4, 1, _ellipse(0.3, 0.05, 0.35, 0.35), disk_depth, spin),
        _obj('hub', 5, 1, _ellipse(0.3, 0.05, 0.15, 0.15), disk_depth, spin),
    ]
    return SceneSpec(
        width=64, height=64, frame_count=constants.DEFAULT_FRAME_COUNT,
        background_depth=PlaneDepth(6.0, slope_y=0.3), background_motion=ego,
        objects=tuple(objects), name='rotor',
    )


def shared_motion() -> SceneSpec:
    """Two boxes at different depths with one screw motion form one group."""
    ego = ScrewMotion(tau1=-0.02, omega3=0.005)
    shared = ScrewMotion(tau1=0.03, tau2=-0.01, tau3=0.01, omega3=0.01)
    objects = [
        _obj('sky', 1, 0, _rect(-1.0, -1.0, 1.0, -0.55), PlaneDepth(10.0, slope_y=0.5), ego),
        _obj('ground', 2, 0, _rect(-1.0, 0.6, 1.0, 1.0), PlaneDepth(1.5, slope_y=0.5), ego),
        _obj('left-box', 3, 1, _rect(-0.7, -0.2, -0.3, 0.2), PlaneDepth(2.0, slope_x=0.2), shared),
        _obj('right-box', 4, 1, _rect(0.3, -0.2, 0.7, 0.2), PlaneDepth(5.0, slope_y=0.3), shared),
    ]
    return SceneSpec(
        width=64, height=64, frame_count=constants.DEFAULT_FRAME_COUNT,
        background_depth=PlaneDepth(6.0, slope_y=0.3), background_motion=ego,
        objects=tuple(objects), name='shared-motion',
    )


PRESET_BUILDERS = {
    'parallax-trap': parallax_trap,
    'parallax-static': parallax_static,
    'two-movers': two_movers,
    'rotor': rotor,
    'shared-motion': shared_motion,
}


def preset(name: str) -> SceneSpec:
    try:
        return PRESET_BUILDERS[name]()
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(constants.PRESETS)}")
