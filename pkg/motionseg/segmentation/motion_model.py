"""
Parametric motion models fitted per object per frame pair.

Coordinates are centred on the image and divided by s_norm = max(W, H) / 2;
flow is divided by the same factor, so every model works in normalized units
and never needs camera intrinsics.

Depth-aware linear model (sign-consistent with the rigid screw-motion flow
equations, q = 1/z)::

    u = a + b*q - c*x*q - d*y + e*x^2 - f*x*y
    v = g + h*q - c*y*q + d*x + e*x*y - f*y^2

The printed variant flips the d*x and f*y^2 terms of the v equation. The
depth-free quadratic model has 12 coefficients, six per flow component.
"""

import logging
from dataclasses import dataclass, fields
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg

from . import constants
from .cues import FlowField, InverseDepthMap, Sequence
from .exceptions import InsufficientData, NumericalFailure, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CoordGrid:
    """Normalized pixel coordinates with the origin at the image centre."""
    width: int
    height: int
    s_norm: float
    x: np.ndarray  # (height, width)
    y: np.ndarray

    def to_pixels(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Inverse of the normalization: (col, row) of normalized points."""
        col = np.asarray(x) * self.s_norm + (self.width - 1) / 2.0
        row = np.asarray(y) * self.s_norm + (self.height - 1) / 2.0
        return col, row


def normalize_coords(width: int, height: int) -> CoordGrid:
    if width < 1 or height < 1:
        raise ValidationError(f"image size must be positive, got {width}x{height}")
    s_norm = max(width, height) / 2.0
    cols = (np.arange(width, dtype=np.float64) - (width - 1) / 2.0) / s_norm
    rows = (np.arange(height, dtype=np.float64) - (height - 1) / 2.0) / s_norm
    x, y = np.meshgrid(cols, rows)
    x.setflags(write=False)
    y.setflags(write=False)
    return CoordGrid(width=width, height=height, s_norm=s_norm, x=x, y=y)


@dataclass(frozen=True, eq=False)
class PixelSample:
    """Per-object fitting data; u, v are already in normalized units."""
    x: np.ndarray
    y: np.ndarray
    q: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        arrays = []
        for name in ('x', 'y', 'q', 'u', 'v'):
            values = np.ascontiguousarray(getattr(self, name), dtype=np.float64).ravel()
            values.setflags(write=False)
            object.__setattr__(self, name, values)
            arrays.append(values)
        n = arrays[0].size
        if n < 1 or any(a.size != n for a in arrays):
            raise InsufficientData(f"pixel sample arrays must share a nonzero length, got {[a.size for a in arrays]}")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NumericalFailure("pixel sample contains NaN or Inf")

    @property
    def n(self) -> int:
        return self.x.size

    def scaled_depth(self, scale: float) -> 'PixelSample':
        return PixelSample(x=self.x, y=self.y, q=self.q * scale, u=self.u, v=self.v)


@dataclass(frozen=True)
class LinearMotionModel:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 0.0
    f_coef: float = 0.0
    g: float = 0.0
    h: float = 0.0
    printed: bool = False  # use the v equation exactly as printed (d*x and f*y^2 signs flipped)

    @property
    def kind(self) -> str:
        return constants.MODEL_LINEAR_DEPTH_PRINTED if self.printed else constants.MODEL_LINEAR_DEPTH

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f_coef, self.g, self.h])


@dataclass(frozen=True)
class QuadraticMotionModel:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 0.0
    f: float = 0.0
    g: float = 0.0
    h: float = 0.0
    i: float = 0.0
    j: float = 0.0
    k: float = 0.0
    l: float = 0.0  # noqa: E741

    kind = constants.MODEL_QUADRATIC

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


MotionModel = Union[LinearMotionModel, QuadraticMotionModel]


def design_matrix(kind: str, x: np.ndarray, y: np.ndarray, q: Optional[np.ndarray] = None) -> np.ndarray:
    """Stacked regressors: n rows for u, then n rows for v."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    one = np.ones_like(x)
    zero = np.zeros_like(x)

    if kind == constants.MODEL_QUADRATIC:
        basis = [one, x, y, x * x, x * y, y * y]
        u_rows = np.column_stack(basis + [zero] * 6)
        v_rows = np.column_stack([zero] * 6 + basis)
        return np.vstack([u_rows, v_rows])

    if kind not in (constants.MODEL_LINEAR_DEPTH, constants.MODEL_LINEAR_DEPTH_PRINTED):
        raise ValidationError(f"unknown motion model: {kind}")
    if q is None:
        raise ValidationError("the depth-aware model needs inverse depth")
    q = np.asarray(q, dtype=np.float64).ravel()
    sign = -1.0 if kind == constants.MODEL_LINEAR_DEPTH_PRINTED else 1.0

    u_rows = np.column_stack([one, q, -x * q, -y, x * x, -x * y, zero, zero])
    v_rows = np.column_stack([zero, zero, -y * q, sign * x, x * y, -sign * y * y, one, q])
    return np.vstack([u_rows, v_rows])


def _model_from_coefficients(kind: str, beta: np.ndarray) -> MotionModel:
    values = [float(v) for v in beta]
    if kind == constants.MODEL_QUADRATIC:
        return QuadraticMotionModel(*values)
    return LinearMotionModel(*values, printed=(kind == constants.MODEL_LINEAR_DEPTH_PRINTED))


def solve_least_squares(X: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimum-norm least squares through a rank-revealing SVD solver.

    Columns are equilibrated first so the solution does not depend on the
    scale of the inverse depth. If the factorization fails, the ridge system
    (X^T X + lambda I) beta = X^T y with lambda = 1e-8 * trace(X^T X) / p is
    solved instead.
    """
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    scaled = X / norms

    try:
        solution, _, rank, _ = scipy.linalg.lstsq(
            scaled, target, cond=constants.RANK_TOLERANCE, lapack_driver='gelsd'
        )
        beta = solution / norms
        if rank < X.shape[1]:
            logger.debug(f"Rank-deficient design ({rank} of {X.shape[1]}); using minimum-norm solution")
        if np.all(np.isfinite(beta)):
            return beta
        logger.warning("Least-squares solution is not finite; falling back to ridge")
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.warning(f"Least-squares factorization failed ({e}); falling back to ridge")

    gram = scaled.T @ scaled
    ridge = constants.RIDGE_FACTOR * np.trace(gram) / gram.shape[0]
    try:
        solution = scipy.linalg.solve(gram + ridge * np.eye(gram.shape[0]), scaled.T @ target, assume_a='pos')
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailure(f"ridge solve failed: {e}")
    beta = solution / norms
    if not np.all(np.isfinite(beta)):
        raise NumericalFailure("ridge solution is not finite")
    return beta


def fit_model(kind: str, s: PixelSample, quorum: int = constants.FIT_QUORUM) -> MotionModel:
    if s.n < quorum:
        raise InsufficientData(f"{s.n} pixels is below the fitting quorum of {quorum}")
    X = design_matrix(kind, s.x, s.y, s.q)
    target = np.concatenate([s.u, s.v])
    return _model_from_coefficients(kind, solve_least_squares(X, target))


def fit_linear_model(s: PixelSample, quorum: int = constants.FIT_QUORUM,
                     printed: bool = False) -> LinearMotionModel:
    kind = constants.MODEL_LINEAR_DEPTH_PRINTED if printed else constants.MODEL_LINEAR_DEPTH
    return fit_model(kind, s, quorum)


def fit_quadratic_model(s: PixelSample, quorum: int = constants.FIT_QUORUM) -> QuadraticMotionModel:
    return fit_model(constants.MODEL_QUADRATIC, s, quorum)


def predict_flow(m: MotionModel, x: np.ndarray, y: np.ndarray,
                 q: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate a model; returns (u, v) shaped like x."""
    shape = np.shape(x)
    X = design_matrix(m.kind, x, y, q)
    flow = X @ m.coefficients
    n = flow.size // 2
    return flow[:n].reshape(shape), flow[n:].reshape(shape)


def model_residual(m: MotionModel, s: PixelSample) -> float:
    """Mean over pixels of the squared flow error (u and v summed)."""
    u, v = predict_flow(m, s.x, s.y, s.q)
    return float(np.mean((u - s.u) ** 2 + (v - s.v) ** 2))


def sum_squared_error(m: MotionModel, s: PixelSample, coefficients: Optional[np.ndarray] = None) -> float:
    X = design_matrix(m.kind, s.x, s.y, s.q)
    beta = m.coefficients if coefficients is None else coefficients
    r = X @ beta - np.concatenate([s.u, s.v])
    return float(r @ r)


def normal_equation_gradient(m: MotionModel, s: PixelSample) -> np.ndarray:
    """Gradient of the summed squared error, 2 X^T (X beta - y)."""
    X = design_matrix(m.kind, s.x, s.y, s.q)
    return 2.0 * X.T @ (X @ m.coefficients - np.concatenate([s.u, s.v]))


def sample_pixels(track: int, frame_pair: int, seq: Sequence,
                  max_n: int = constants.MAX_SAMPLES, seed=0,
                  coords: Optional[CoordGrid] = None,
                  inverse_depth: Optional[InverseDepthMap] = None,
                  quorum: int = 1) -> PixelSample:
    """Deterministic subsample of a track's pixels in frame m with pair m's cues.

    seed may be an int or a numpy SeedSequence.
    """
    mask = seq.masks[frame_pair].track_mask(track)
    rows, cols = np.nonzero(mask)
    count = rows.size
    if count < max(quorum, 1):
        raise InsufficientData(f"track {track} has {count} pixels in frame {frame_pair}")

    if count > max_n:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(count, size=max_n, replace=False))
        rows, cols = rows[keep], cols[keep]

    coords = coords or normalize_coords(seq.width, seq.height)
    inverse_depth = inverse_depth or seq.inverse_depth(frame_pair)
    flow: FlowField = seq.flows[frame_pair]

    return PixelSample(
        x=coords.x[rows, cols],
        y=coords.y[rows, cols],
        q=inverse_depth.q[rows, cols],
        u=flow.u[rows, cols].astype(np.float64) / coords.s_norm,
        v=flow.v[rows, cols].astype(np.float64) / coords.s_norm,
    )
