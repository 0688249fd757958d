"""Dense two-frame optical flow via quadratic polynomial expansion.

Each frame is locally approximated as x'Ax + b'x + c under a Gaussian
applicability window; displacement comes from the coefficient differences,
refined coarse-to-fine over an image pyramid with Gaussian-weighted
neighborhood averaging of the per-pixel normal equations.

The flow convention matches the usual one: ``next(x + d(x)) ~ prev(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError
from .imgutil import gaussian_kernel1d, resize_bilinear
from .params import read_array_file, write_array_file

FLOW_RANGE = 10.0  # displacement mapped onto [0,1] frame channels
_MIN_LEVEL_SIZE = 12


@dataclass
class FlowParams:
    levels: int = 3
    scale: float = 0.5
    window: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def validate(self):
        if self.levels < 1:
            raise ValueError(f"flow: levels must be >= 1, got {self.levels}")
        if not 0.0 < self.scale < 1.0:
            raise ValueError(f"flow: pyramid scale must be in (0, 1), got {self.scale}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"flow: window must be odd and >= 3, got {self.window}")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError(f"flow: poly_n must be odd and >= 3, got {self.poly_n}")
        if self.poly_sigma <= 0:
            raise ValueError(f"flow: poly_sigma must be positive, got {self.poly_sigma}")


@dataclass
class FlowField:
    """Per-pixel displacement planes, x (columns) and y (rows), in pixels."""

    dx: np.ndarray
    dy: np.ndarray

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    def save(self, path):
        """Debug dump using the same binary record scheme as parameter files."""
        write_array_file(path, {"dx": self.dx, "dy": self.dy}, seed=0)

    @classmethod
    def load(cls, path) -> "FlowField":
        arrays, _ = read_array_file(path)
        if set(arrays) != {"dx", "dy"}:
            raise DataError(f"{path}: not a flow dump (records {sorted(arrays)})")
        return cls(arrays["dx"], arrays["dy"])


def _plane(img) -> np.ndarray:
    """Accept an ImageFrame or a bare 2-d array; reject multichannel input."""
    pixels = getattr(img, "pixels", img)
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise DataError(f"flow needs grayscale input, got {a.shape[2]} channels")
        a = a[:, :, 0]
    if a.ndim != 2:
        raise DataError(f"flow needs a 2-d image, got shape {a.shape}")
    return np.ascontiguousarray(a)


def _poly_expand(img: np.ndarray, n: int, sigma: float):
    """Weighted-LS quadratic expansion; returns (axx, axy, ayy, bx, by)."""
    m = n // 2
    x = np.arange(-m, m + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    f0, f1, f2 = w, w * x, w * x * x

    r0 = kernels.correlate1d_rows(img, f0)
    r1 = kernels.correlate1d_rows(img, f1)
    r2 = kernels.correlate1d_rows(img, f2)
    m00 = kernels.correlate1d_cols(r0, f0)
    m10 = kernels.correlate1d_cols(r1, f0)
    m01 = kernels.correlate1d_cols(r0, f1)
    m20 = kernels.correlate1d_cols(r2, f0)
    m02 = kernels.correlate1d_cols(r0, f2)
    m11 = kernels.correlate1d_cols(r1, f1)

    # normal matrix of the basis (1, x, y, x^2, y^2, xy) under w(x)w(y)
    gx, gy = np.meshgrid(x, x)
    w2 = np.outer(w, w)
    basis = np.stack([np.ones_like(gx), gx, gy, gx * gx, gy * gy, gx * gy])
    g = np.einsum("ahw,bhw,hw->ab", basis, basis, w2)
    ginv = np.linalg.inv(g)

    mom = np.stack([m00, m10, m01, m20, m02, m11])
    r = np.einsum("ab,bhw->ahw", ginv, mom)
    return r[3], 0.5 * r[5], r[4], r[1], r[2]


def _pyramid(img: np.ndarray, params: FlowParams) -> list[np.ndarray]:
    levels = [img]
    blur = gaussian_kernel1d(1.0 / params.scale - 1.0)
    for _ in range(params.levels - 1):
        prev = levels[-1]
        nh = int(round(prev.shape[0] * params.scale))
        nw = int(round(prev.shape[1] * params.scale))
        if min(nh, nw) < _MIN_LEVEL_SIZE:
            break
        smooth = kernels.correlate1d_cols(kernels.correlate1d_rows(prev, blur), blur)
        levels.append(np.ascontiguousarray(resize_bilinear(smooth, nh, nw)))
    return levels


def farneback_flow(prev, nxt, params: FlowParams | None = None) -> FlowField:
    """Estimate dense displacement from ``prev`` to ``nxt``."""
    params = params or FlowParams()
    params.validate()
    a = _plane(prev)
    b = _plane(nxt)
    if a.shape != b.shape:
        raise DataError(f"flow: frame sizes differ: {a.shape} vs {b.shape}")

    pyr_a = _pyramid(a, params)
    pyr_b = _pyramid(b, params)
    win = gaussian_kernel1d(0.3 * ((params.window - 1) * 0.5 - 1.0) + 0.8,
                            radius=params.window // 2)

    dx = dy = None
    for la, lb in zip(reversed(pyr_a), reversed(pyr_b)):
        h, w = la.shape
        if dx is None:
            dx = np.zeros((h, w))
            dy = np.zeros((h, w))
        else:
            rx = w / dx.shape[1]
            ry = h / dx.shape[0]
            dx = np.ascontiguousarray(resize_bilinear(dx, h, w) * rx)
            dy = np.ascontiguousarray(resize_bilinear(dy, h, w) * ry)
        ca = _poly_expand(la, params.poly_n, params.poly_sigma)
        cb = _poly_expand(lb, params.poly_n, params.poly_sigma)
        for _ in range(params.iterations):
            g11, g12, g22, h1, h2 = kernels.flow_update_matrices(*ca, *cb, dx, dy)
            planes = []
            for p in (g11, g12, g22, h1, h2):
                planes.append(kernels.correlate1d_cols(
                    kernels.correlate1d_rows(p, win), win))
            dx, dy = kernels.solve_flow(*planes)
    return FlowField(dx, dy)


def flow_to_frame(flow: FlowField, resolution: int | None = None,
                  index: int = 0, flow_range: float = FLOW_RANGE):
    """Encode a flow field as a two-channel frame in [0, 1].

    dx and dy are mapped affinely from [-flow_range, +flow_range] (clipped)
    so zero motion lands on 0.5; the result is resized to ``resolution``
    when given.
    """
    from .data import ImageFrame  # local import: data builds on flow at the CLI level

    half = 2.0 * flow_range
    chans = np.stack(
        [
            np.clip((flow.dx + flow_range) / half, 0.0, 1.0),
            np.clip((flow.dy + flow_range) / half, 0.0, 1.0),
        ],
        axis=-1,
    )
    if resolution is not None:
        chans = np.clip(resize_bilinear(chans, resolution, resolution), 0.0, 1.0)
    return ImageFrame(pixels=chans, index=index)
