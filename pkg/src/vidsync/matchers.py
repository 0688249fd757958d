"""Frame-matching models and the 20x20 matching matrix they produce.

Three trainable matchers share one CNN branch architecture (conv 32/48/48/64,
3x3 kernels, stride 1, valid padding, 2x2 maxpool after each conv, global
average pooling): a sigmoid-headed model scoring signed embedding
differences, and two embedding models trained with the Euclidean or cosine
triplet objective.  A pixel-difference oracle ships as a training-free
baseline so the delay stage can be exercised on its own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ImageFrame, LabeledPair, SequencePair, Triplet, frames_to_batch, SEQUENCE_LENGTH
from .errors import DataError
from .optim import AdamState
from .params import ParamSet, glorot_uniform
from .tensor import (Tensor, bce_loss, conv2d, dense, global_avg_pool,
                     maxpool2d, relu, sigmoid, triplet_cosine_loss,
                     triplet_euclidean_loss)

POLARITY_HIGH = "higher_is_match"
POLARITY_LOW = "lower_is_match"

CONV_FILTERS = (32, 48, 48, 64)
KERNEL_SIZE = 3
EMBED_DIM = CONV_FILTERS[-1]

MATCHER_KINDS = ("siamese", "triplet-euc", "triplet-sim", "oracle")


def shape_trace(resolution: int) -> list[int]:
    """Spatial sizes after each conv/pool stage under valid padding.

    Raises ValueError when the resolution is too small for the stack.
    """
    sizes = []
    s = resolution
    for stage in range(len(CONV_FILTERS)):
        if s < KERNEL_SIZE:
            raise ValueError(
                f"resolution {resolution} too small: stage {stage} conv sees {s} pixels"
            )
        s -= KERNEL_SIZE - 1
        sizes.append(s)
        if s < 2:
            raise ValueError(
                f"resolution {resolution} too small: stage {stage} pool sees {s} pixels"
            )
        s //= 2
        sizes.append(s)
    return sizes


def _min_resolution() -> int:
    r = KERNEL_SIZE
    while True:
        try:
            shape_trace(r)
            return r
        except ValueError:
            r += 1


MIN_RESOLUTION = _min_resolution()


@dataclass
class MatchingMatrix:
    """20x20 score grid; scores[i][j] compares left frame i with right frame j."""

    scores: np.ndarray
    polarity: str
    model_tag: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (SEQUENCE_LENGTH, SEQUENCE_LENGTH):
            raise ValueError(f"matching matrix must be 20x20, got {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("matching matrix holds non-finite scores")
        if self.polarity not in (POLARITY_HIGH, POLARITY_LOW):
            raise ValueError(f"unknown polarity {self.polarity!r}")

    def flatten(self) -> np.ndarray:
        return self.scores.reshape(SEQUENCE_LENGTH * SEQUENCE_LENGTH)


def _sigmoid_np(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


class CnnBranch:
    """The shared conv stack; one parameter set regardless of how many
    inputs flow through it."""

    def __init__(self, params: ParamSet, rng: np.random.Generator,
                 in_channels: int = 1, prefix: str = "branch"):
        self.in_channels = in_channels
        self.stages = []
        chans = (in_channels,) + CONV_FILTERS
        k = KERNEL_SIZE
        for i, (cin, cout) in enumerate(zip(chans, chans[1:])):
            w = params.add(f"{prefix}.conv{i}.w", glorot_uniform(
                rng, (k, k, cin, cout), fan_in=k * k * cin, fan_out=k * k * cout))
            b = params.add(f"{prefix}.conv{i}.b", np.zeros(cout))
            self.stages.append((w, b))

    def forward(self, x: Tensor) -> Tensor:
        for w, b in self.stages:
            x = maxpool2d(relu(conv2d(x, w, b)))
        return global_avg_pool(x)


class _EmbeddingMatcher:
    """Shared plumbing: batched embedding and frame-level scoring."""

    params: ParamSet
    in_channels: int

    def embed_tensor(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def embed_frames(self, frames, chunk: int = 64) -> np.ndarray:
        """Embeddings for a list of frames, (n, EMBED_DIM), no gradients kept."""
        out = []
        for s in range(0, len(frames), chunk):
            batch = frames_to_batch(frames[s:s + chunk])
            if batch.shape[3] != self.in_channels:
                raise DataError(
                    f"frames have {batch.shape[3]} channels, model expects {self.in_channels}"
                )
            out.append(self.embed_tensor(Tensor(batch, requires_grad=False)).data)
        return np.concatenate(out, axis=0)

    def score_matrix(self, left_frames, right_frames) -> np.ndarray:
        el = self.embed_frames(left_frames)
        er = self.embed_frames(right_frames)
        return self._matrix_from_embeddings(el, er)

    def _matrix_from_embeddings(self, el, er) -> np.ndarray:
        raise NotImplementedError


class SiameseModel(_EmbeddingMatcher):
    """Shared branch, then sigmoid(dense(embed(left) - embed(right))).

    The difference is signed (the distance block subtracts, it does not
    take magnitudes), so score(A, B) and score(B, A) generally differ.
    """

    kind = "siamese"
    tag = "siamese"
    polarity = POLARITY_HIGH

    def __init__(self, in_channels: int = 1, seed: int = 0):
        self.in_channels = in_channels
        self.params = ParamSet(seed)
        rng = np.random.default_rng(seed)
        self.branch = CnnBranch(self.params, rng, in_channels)
        self.head_w = self.params.add(
            "head.w", glorot_uniform(rng, (EMBED_DIM, 1), EMBED_DIM, 1))
        self.head_b = self.params.add("head.b", np.zeros(1))

    def embed_tensor(self, x: Tensor) -> Tensor:
        return self.branch.forward(x)

    def forward_scores(self, lefts: Tensor, rights: Tensor) -> Tensor:
        diff = self.branch.forward(lefts) - self.branch.forward(rights)
        return sigmoid(dense(diff, self.head_w, self.head_b))

    def score(self, left: ImageFrame, right: ImageFrame) -> float:
        out = self.forward_scores(
            Tensor(frames_to_batch([left]), requires_grad=False),
            Tensor(frames_to_batch([right]), requires_grad=False))
        return float(out.data[0, 0])

    def _matrix_from_embeddings(self, el, er) -> np.ndarray:
        diff = el[:, None, :] - er[None, :, :]
        z = diff @ self.head_w.data[:, 0] + self.head_b.data[0]
        return _sigmoid_np(z)


class TripletModel(_EmbeddingMatcher):
    """Shared branch plus a linear 64->64 projection; scores are embedding
    distances (squared L2) or cosine similarities.

    Both kinds are lower-is-match: the cosine objective, taken exactly as
    written, drives matching-pair similarity down.
    """

    kind = "triplet"
    polarity = POLARITY_LOW

    def __init__(self, distance: str = "euclidean", in_channels: int = 1, seed: int = 0):
        if distance not in ("euclidean", "cosine"):
            raise ValueError(f"distance must be 'euclidean' or 'cosine', got {distance!r}")
        self.distance_kind = distance
        self.tag = "triplet-euc" if distance == "euclidean" else "triplet-sim"
        self.in_channels = in_channels
        self.params = ParamSet(seed)
        rng = np.random.default_rng(seed)
        self.branch = CnnBranch(self.params, rng, in_channels)
        self.proj_w = self.params.add(
            "proj.w", glorot_uniform(rng, (EMBED_DIM, EMBED_DIM), EMBED_DIM, EMBED_DIM))
        self.proj_b = self.params.add("proj.b", np.zeros(EMBED_DIM))

    def embed_tensor(self, x: Tensor) -> Tensor:
        return dense(self.branch.forward(x), self.proj_w, self.proj_b)

    def score(self, a: ImageFrame, b: ImageFrame) -> float:
        e = self.embed_frames([a, b])
        return float(self._matrix_from_embeddings(e[:1], e[1:2])[0, 0])

    def _matrix_from_embeddings(self, el, er) -> np.ndarray:
        if self.distance_kind == "euclidean":
            diff = el[:, None, :] - er[None, :, :]
            return (diff * diff).sum(axis=2)
        nl = np.linalg.norm(el, axis=1)
        nr = np.linalg.norm(er, axis=1)
        el_n = np.where(nl[:, None] > 1e-30, el / np.maximum(nl, 1e-30)[:, None], 0.0)
        er_n = np.where(nr[:, None] > 1e-30, er / np.maximum(nr, 1e-30)[:, None], 0.0)
        return el_n @ er_n.T


class PixelOracleMatcher:
    """Training-free baseline: negative sum of squared pixel differences."""

    kind = "oracle"
    tag = "oracle"
    polarity = POLARITY_HIGH
    in_channels = None  # accepts any

    def score(self, left: ImageFrame, right: ImageFrame) -> float:
        d = left.pixels - right.pixels
        return -float((d * d).sum())

    def score_matrix(self, left_frames, right_frames) -> np.ndarray:
        lb = frames_to_batch(left_frames)
        rb = frames_to_batch(right_frames)
        out = np.empty((len(left_frames), len(right_frames)))
        for i in range(lb.shape[0]):
            d = lb[i:i + 1] - rb
            out[i] = -(d * d).sum(axis=(1, 2, 3))
        return out


def build_matcher(kind: str, in_channels: int = 1, seed: int = 0):
    if kind == "siamese":
        return SiameseModel(in_channels=in_channels, seed=seed)
    if kind == "triplet-euc":
        return TripletModel("euclidean", in_channels=in_channels, seed=seed)
    if kind == "triplet-sim":
        return TripletModel("cosine", in_channels=in_channels, seed=seed)
    if kind == "oracle":
        return PixelOracleMatcher()
    raise ValueError(f"unknown matcher kind {kind!r} (choose from {MATCHER_KINDS})")


def build_matching_matrix(model, seq: SequencePair) -> MatchingMatrix:
    """Score every left frame against every right frame (rows index left)."""
    if len(seq.left) != SEQUENCE_LENGTH or len(seq.right) != SEQUENCE_LENGTH:
        raise DataError(
            f"sequence pair must hold {SEQUENCE_LENGTH}+{SEQUENCE_LENGTH} frames, "
            f"got {len(seq.left)}+{len(seq.right)}"
        )
    scores = model.score_matrix(seq.left, seq.right)
    return MatchingMatrix(scores, model.polarity, model.tag)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingLog:
    epoch_losses: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("epoch,mean_loss\n")
            for i, v in enumerate(self.epoch_losses):
                fh.write(f"{i},{v!r}\n")


def train_siamese(model: SiameseModel, pairs: list[LabeledPair],
                  epochs: int = 100, batch_size: int = 1, lr: float = 0.01,
                  seed: int = 0, progress=None) -> TrainingLog:
    """Binary cross-entropy + Adam, data order reshuffled every epoch."""
    if not pairs:
        raise DataError("train_siamese: empty dataset")
    opt = AdamState(model.params, lr)
    rng = np.random.default_rng(seed)
    n = len(pairs)
    logrec = TrainingLog()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            lefts = frames_to_batch([pairs[i].left for i in idx])
            rights = frames_to_batch([pairs[i].right for i in idx])
            labels = np.array([pairs[i].label for i in idx], dtype=np.float64)
            model.params.zero_grad()
            scores = model.forward_scores(Tensor(lefts, requires_grad=False),
                                          Tensor(rights, requires_grad=False))
            loss = bce_loss(scores, labels.reshape(-1, 1))
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        logrec.epoch_losses.append(total / n)
        if progress:
            progress(epoch, logrec.epoch_losses[-1])
    return logrec


def train_triplet(model: TripletModel, triplets: list[Triplet],
                  epochs: int = 100, batch_size: int = 32, lr: float = 0.001,
                  seed: int = 0, progress=None) -> TrainingLog:
    """Triplet loss matching the model's distance kind; short final batch kept."""
    if not triplets:
        raise DataError("train_triplet: empty dataset")
    loss_fn = (triplet_euclidean_loss if model.distance_kind == "euclidean"
               else triplet_cosine_loss)
    opt = AdamState(model.params, lr)
    rng = np.random.default_rng(seed)
    n = len(triplets)
    logrec = TrainingLog()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            anchors = frames_to_batch([triplets[i].anchor for i in idx])
            positives = frames_to_batch([triplets[i].positive for i in idx])
            negatives = frames_to_batch([triplets[i].negative for i in idx])
            model.params.zero_grad()
            ea = model.embed_tensor(Tensor(anchors, requires_grad=False))
            ep = model.embed_tensor(Tensor(positives, requires_grad=False))
            en = model.embed_tensor(Tensor(negatives, requires_grad=False))
            loss = loss_fn(ea, ep, en)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        logrec.epoch_losses.append(total / n)
        if progress:
            progress(epoch, logrec.epoch_losses[-1])
    return logrec


# ---------------------------------------------------------------------------
# persistence

_META_SUFFIX = ".meta.json"


def save_matcher(model, path, resolution: int | None = None, input_kind: str | None = None):
    if model.kind == "oracle":
        raise ValueError("the pixel oracle has no parameters to save")
    path = Path(path)
    model.params.save(path)
    meta = {
        "kind": model.kind,
        "tag": model.tag,
        "distance": getattr(model, "distance_kind", None),
        "in_channels": model.in_channels,
        "seed": model.params.seed,
        "resolution": resolution,
        "input": input_kind,
    }
    with open(str(path) + _META_SUFFIX, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_matcher_meta(path) -> dict:
    meta_path = str(path) + _META_SUFFIX
    try:
        with open(meta_path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing model metadata file {meta_path}") from None


def load_matcher(path):
    meta = load_matcher_meta(path)
    stored = ParamSet.load(path)
    if meta["kind"] == "siamese":
        model = SiameseModel(in_channels=meta["in_channels"], seed=stored.seed)
    elif meta["kind"] == "triplet":
        model = TripletModel(meta["distance"], in_channels=meta["in_channels"],
                             seed=stored.seed)
    else:
        raise DataError(f"{path}: unknown model kind {meta['kind']!r}")
    model.params.load_values_from(stored)
    return model, meta
