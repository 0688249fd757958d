"""Dataset ingestion, pair/triplet/sequence sampling, synthetic stereo scenes.

Sign conventions (shared package-wide): a sequence pair with true delay d
has left[i] and right[j] showing the same scene instant when i - j == d,
i.e. the matching diagonal of the 20x20 matrix is k = i - j = d.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .imgutil import gaussian_kernel1d, resize_bilinear, rgb_to_gray
from . import kernels

log = logging.getLogger(__name__)

SEQUENCE_LENGTH = 20
DELAY_MIN = -20
DELAY_MAX = 19
NONMATCH_OFFSETS = tuple(range(-10, 0)) + tuple(range(1, 11))

_IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass
class ImageFrame:
    """(H, W, C) pixels in [0, 1] with C of 1 (gray) or 2 (flow), plus index."""

    pixels: np.ndarray
    index: int = 0

    def validate(self, resolution: int | None = None):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] not in (1, 2):
            raise DataError(f"frame {self.index}: bad pixel shape {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise DataError(f"frame {self.index}: values outside [0, 1]")
        if resolution is not None and p.shape[:2] != (resolution, resolution):
            raise DataError(
                f"frame {self.index}: size {p.shape[:2]} != {resolution}x{resolution}"
            )

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class LabeledPair:
    left: ImageFrame
    right: ImageFrame
    label: int           # 1 match, 0 non-match
    offset: int          # right capture time minus left capture time


@dataclass
class Triplet:
    anchor: ImageFrame
    positive: ImageFrame
    negative: ImageFrame
    offset: int          # negative's offset from the anchor instant


@dataclass
class SequencePair:
    left: list[ImageFrame]
    right: list[ImageFrame]
    true_delay: int


def frames_to_batch(frames) -> np.ndarray:
    """Stack frames into a contiguous (B, H, W, C) array."""
    arrs = [f.pixels for f in frames]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise DataError(f"frames have mixed shapes: {sorted(shapes)}")
    return np.ascontiguousarray(np.stack(arrs))


# ---------------------------------------------------------------------------
# loading


def _decode(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except Exception as exc:
        raise DataError(f"unreadable image file {path}: {exc}") from None
    if arr.dtype == np.uint8:
        a = arr.astype(np.float64) / 255.0
    elif arr.dtype == np.uint16:
        a = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.int32:  # PIL mode "I" for 16-bit PGM
        a = arr.astype(np.float64) / 65535.0
    else:
        a = arr.astype(np.float64)
    if a.ndim == 2:
        return a[:, :, None]
    if a.shape[2] == 2:          # LA: two data channels (flow frames)
        return a
    if a.shape[2] in (3, 4):
        return rgb_to_gray(a[:, :, :3])[:, :, None]
    raise DataError(f"{path}: unsupported channel count {a.shape[2]}")


def load_frames(directory, resolution: int) -> list[ImageFrame]:
    """Load a directory of PNG/PGM frames, ordered by filename.

    Color input is converted with the standard luma weights, then resized
    (bilinear) to resolution x resolution and normalized to [0, 1].
    """
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"no image files (png/pgm) in {d}")
    frames = []
    for i, p in enumerate(paths):
        a = _decode(p)
        if a.shape[:2] != (resolution, resolution):
            a = resize_bilinear(a, resolution, resolution)
        frames.append(ImageFrame(np.clip(a, 0.0, 1.0), index=i))
    return frames


def frames_to_flow_frames(frames, resolution: int | None = None,
                          flow_params=None) -> list[ImageFrame]:
    """Per-lens consecutive-frame flow (t vs t+1), encoded as 2-channel frames.

    Yields len(frames) - 1 frames; frame i holds the motion from i to i+1.
    """
    from .flow import farneback_flow, flow_to_frame

    if len(frames) < 2:
        raise DataError(f"need at least 2 frames for flow, got {len(frames)}")
    out = []
    for i in range(len(frames) - 1):
        ff = farneback_flow(frames[i], frames[i + 1], flow_params)
        out.append(flow_to_frame(ff, resolution=resolution, index=i))
    return out


# ---------------------------------------------------------------------------
# sampling


def _check_streams(left, right, min_len: int, what: str):
    if len(left) != len(right):
        raise DataError(f"{what}: stream lengths differ ({len(left)} vs {len(right)})")
    if len(left) < min_len:
        raise DataError(f"{what}: streams must hold at least {min_len} frames, got {len(left)}")


def _nonmatch_combos(length: int) -> list[tuple[int, int]]:
    return [(t, o) for t in range(length) for o in NONMATCH_OFFSETS
            if 0 <= t + o < length]


def make_pairs(left, right, n_match: int, n_nonmatch: int, seed: int) -> list[LabeledPair]:
    """Aligned (label 1) and offset (label 0) frame pairs, without replacement.

    Non-match offsets are drawn uniformly from [-10,-1] u [1,10] subject to
    both indices staying in range.
    """
    _check_streams(left, right, 11, "make_pairs")
    length = len(left)
    rng = np.random.default_rng(seed)
    if n_match > length:
        raise DataError(f"make_pairs: requested {n_match} matching pairs, only {length} exist")
    combos = _nonmatch_combos(length)
    if n_nonmatch > len(combos):
        raise DataError(
            f"make_pairs: requested {n_nonmatch} non-matching pairs, only {len(combos)} exist"
        )
    pairs = []
    for t in rng.choice(length, size=n_match, replace=False):
        pairs.append(LabeledPair(left[t], right[t], 1, 0))
    for ci in rng.choice(len(combos), size=n_nonmatch, replace=False):
        t, o = combos[ci]
        pairs.append(LabeledPair(left[t], right[t + o], 0, o))
    return pairs


def make_triplets(left, right, n: int, seed: int) -> list[Triplet]:
    """(anchor=left[t], positive=right[t], negative=right[t+o]) samples."""
    _check_streams(left, right, 11, "make_triplets")
    length = len(left)
    rng = np.random.default_rng(seed)
    combos = _nonmatch_combos(length)
    if n > len(combos):
        raise DataError(f"make_triplets: requested {n} triplets, only {len(combos)} exist")
    out = []
    for ci in rng.choice(len(combos), size=n, replace=False):
        t, o = combos[ci]
        out.append(Triplet(left[t], right[t], right[t + o], o))
    return out


def make_sequence_pairs(left, right, n: int, seed: int,
                        delays=None) -> list[SequencePair]:
    """Desynchronized 20+20 frame windows with balanced signed delays.

    The delay class counts over the n pairs differ by at most one.  The
    right window starts at t + d so the matching matrix diagonal i - j = d
    carries the aligned frames; |d| >= 20 shares no scene instant.
    """
    if delays is None:
        delays = range(DELAY_MIN, DELAY_MAX + 1)
    delays = sorted(int(d) for d in delays)
    if not delays:
        raise DataError("make_sequence_pairs: empty delay support")
    max_mag = max(abs(d) for d in delays)
    required = SEQUENCE_LENGTH + max_mag
    _check_streams(left, right, required, "make_sequence_pairs")
    length = len(left)
    rng = np.random.default_rng(seed)

    order = np.array(delays)
    rng.shuffle(order)
    base, extra = divmod(n, len(order))
    counts = {int(d): base + (1 if i < extra else 0) for i, d in enumerate(order)}

    pairs = []
    last = length - SEQUENCE_LENGTH
    for d in delays:
        t_lo = max(0, -d)
        t_hi = min(last, last - d)
        for _ in range(counts[int(d)]):
            t = int(rng.integers(t_lo, t_hi + 1))
            pairs.append(SequencePair(
                left=list(left[t:t + SEQUENCE_LENGTH]),
                right=list(right[t + d:t + d + SEQUENCE_LENGTH]),
                true_delay=d,
            ))
    perm = rng.permutation(len(pairs))
    return [pairs[i] for i in perm]


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneConfig:
    """Textured moving blobs over a noisy background, two shifted viewpoints."""

    resolution: int = 64
    n_frames: int = 80
    disparity: float = 2.0   # horizontal pixel shift between the views
    n_blobs: int = 4
    noise: float = 0.0       # per-frame sensor noise stddev


@dataclass
class _Blob:
    cx0: float
    cy0: float
    ax: float
    ay: float
    wx: float
    wy: float
    px: float
    py: float
    r0: float
    wr: float
    pr: float
    amp: float
    wa: float
    pa: float
    ux: float
    uy: float
    wt: float
    pt: float


def _smooth_noise(rng, h, w, sigma=3.0):
    base = rng.random((h, w))
    k = gaussian_kernel1d(sigma)
    s = kernels.correlate1d_cols(kernels.correlate1d_rows(np.ascontiguousarray(base), k), k)
    lo, hi = s.min(), s.max()
    return (s - lo) / max(hi - lo, 1e-12)


def render_synthetic_stereo(config: SceneConfig, seed: int):
    """Deterministic stereo frame streams; returns (left, right) frame lists.

    Both views show the same scene; the right view is the scene sampled
    with a horizontal offset of ``disparity`` pixels (small-baseline rig,
    same orientation).  Blobs follow Lissajous paths with pulsating radii
    so every instant is visually distinctive.
    """
    res = config.resolution
    if res < 8:
        raise DataError(f"scene resolution must be >= 8, got {res}")
    rng = np.random.default_rng(seed)
    pad = int(np.ceil(abs(config.disparity))) + 2
    bg = 0.2 + 0.35 * _smooth_noise(rng, res + 2 * pad, res + 2 * pad)

    blobs = []
    for _ in range(config.n_blobs):
        blobs.append(_Blob(
            cx0=rng.uniform(0.3, 0.7) * res,
            cy0=rng.uniform(0.3, 0.7) * res,
            ax=rng.uniform(0.18, 0.33) * res,
            ay=rng.uniform(0.18, 0.33) * res,
            wx=rng.uniform(0.25, 0.55),
            wy=rng.uniform(0.25, 0.55),
            px=rng.uniform(0, 2 * np.pi),
            py=rng.uniform(0, 2 * np.pi),
            r0=rng.uniform(0.1, 0.16) * res,
            wr=rng.uniform(0.3, 0.7),
            pr=rng.uniform(0, 2 * np.pi),
            amp=rng.uniform(0.3, 0.5),
            wa=rng.uniform(0.25, 0.6),
            pa=rng.uniform(0, 2 * np.pi),
            ux=rng.uniform(0.3, 0.9),
            uy=rng.uniform(0.3, 0.9),
            wt=rng.uniform(0.6, 1.4),
            pt=rng.uniform(0, 2 * np.pi),
        ))

    noise = None
    if config.noise > 0:
        noise = rng.standard_normal((config.n_frames, 2, res, res)) * config.noise

    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)
    views = ((0, 0.0), (1, float(config.disparity)))
    streams: tuple[list, list] = ([], [])
    for tau in range(config.n_frames):
        for vi, off in views:
            base = pad + off
            b0 = int(np.floor(base))
            frac = base - b0
            window = (1.0 - frac) * bg[pad:pad + res, b0:b0 + res]
            if frac > 0:
                window = window + frac * bg[pad:pad + res, b0 + 1:b0 + 1 + res]
            canvas = window.copy()
            for bl in blobs:
                # pulsating radius, drifting texture phase and breathing
                # brightness give every instant a non-translational
                # signature that a pure view shift cannot imitate
                cx = bl.cx0 + bl.ax * np.sin(bl.wx * tau + bl.px) - off
                cy = bl.cy0 + bl.ay * np.sin(bl.wy * tau + bl.py)
                r = bl.r0 * (1.0 + 0.35 * np.sin(bl.wr * tau + bl.pr))
                amp = bl.amp * (1.0 + 0.25 * np.sin(bl.wa * tau + bl.pa))
                gx = xs - cx
                gy = ys - cy
                bump = np.exp(-(gx * gx + gy * gy) / (2.0 * r * r))
                tex = 0.65 + 0.35 * np.sin(bl.ux * gx + bl.uy * gy
                                           + bl.wt * tau + bl.pt)
                canvas += amp * bump * tex
            if noise is not None:
                canvas = canvas + noise[tau, vi]
            streams[vi].append(ImageFrame(
                np.clip(canvas, 0.0, 1.0)[:, :, None], index=tau))
    return streams


# ---------------------------------------------------------------------------
# manifests

MANIFEST_FIELDS = ("kind", "split", "idx", "left", "right", "offset")


def write_manifest(path, records: list[dict]):
    """CSV manifest, one record per pair/triplet/sequence."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
