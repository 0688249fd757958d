"""Delay estimation from a matching matrix.

Two methods: a diagonal vote over row-wise score maxima, and a small dense
classifier (400 -> 64 -> 32 -> 40 softmax) over the flattened matrix.  The
40 classes map onto the signed support [-20, 19] via delay = class - 20.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DELAY_MIN, DELAY_MAX, SEQUENCE_LENGTH
from .matchers import MatchingMatrix, POLARITY_HIGH, TrainingLog
from .optim import AdamState
from .params import ParamSet, glorot_uniform
from .tensor import Tensor, categorical_ce_loss, dense, relu, softmax

N_DELAY_CLASSES = DELAY_MAX - DELAY_MIN + 1
MATRIX_INPUT = SEQUENCE_LENGTH * SEQUENCE_LENGTH
DENSE_WIDTHS = (64, 32, N_DELAY_CLASSES)


def class_to_delay(c: int) -> int:
    if not 0 <= c < N_DELAY_CLASSES:
        raise ValueError(f"delay class {c} outside [0, {N_DELAY_CLASSES - 1}]")
    return int(c) + DELAY_MIN


def delay_to_class(d: int) -> int:
    if not DELAY_MIN <= d <= DELAY_MAX:
        raise ValueError(f"delay {d} outside [{DELAY_MIN}, {DELAY_MAX}]")
    return int(d) - DELAY_MIN


@dataclass
class DelayEstimate:
    delay: int
    confidence: float
    method: str


def _scores_higher(matrix: MatchingMatrix) -> np.ndarray:
    """Normalize so larger always means better match."""
    return matrix.scores if matrix.polarity == POLARITY_HIGH else -matrix.scores


def heatmap_estimate(matrix: MatchingMatrix,
                     normalize_by_length: bool = False) -> DelayEstimate:
    """Vote each row's best column onto diagonal k = i - j, keep the winner.

    Ties break toward the smallest |k|, then the negative k.  The optional
    length normalization divides votes by diagonal length (off by default:
    the raw vote is biased toward long diagonals, but that is the method
    as described).  Confidence is the winner's raw vote share.
    """
    s = _scores_higher(matrix)
    n = SEQUENCE_LENGTH
    j_star = np.argmax(s, axis=1)          # first column on ties
    k = np.arange(n) - j_star
    votes = np.bincount(k + (n - 1), minlength=2 * n - 1).astype(np.float64)
    ks = np.arange(-(n - 1), n)
    score = votes / (n - np.abs(ks)) if normalize_by_length else votes
    order = sorted(range(2 * n - 1), key=lambda i: (-score[i], abs(ks[i]), ks[i]))
    win = order[0]
    return DelayEstimate(delay=int(ks[win]),
                         confidence=float(votes[win] / n),
                         method="heatmap")


class DenseDelayModel:
    """400 -> 64 relu -> 32 relu -> 40 softmax over the flattened matrix."""

    def __init__(self, seed: int = 0):
        self.params = ParamSet(seed)
        rng = np.random.default_rng(seed)
        self.layers = []
        sizes = (MATRIX_INPUT,) + DENSE_WIDTHS
        for i, (nin, nout) in enumerate(zip(sizes, sizes[1:])):
            w = self.params.add(f"dense{i}.w", glorot_uniform(rng, (nin, nout), nin, nout))
            b = self.params.add(f"dense{i}.b", np.zeros(nout))
            self.layers.append((w, b))

    def forward(self, x: Tensor) -> Tensor:
        (w0, b0), (w1, b1), (w2, b2) = self.layers
        h = relu(dense(x, w0, b0))
        h = relu(dense(h, w1, b1))
        return softmax(dense(h, w2, b2))


def matrix_to_input(matrix: MatchingMatrix) -> np.ndarray:
    """Row-major flatten after normalizing polarity to higher-is-match."""
    return _scores_higher(matrix).reshape(MATRIX_INPUT)


def densedelay_estimate(model: DenseDelayModel, matrix: MatchingMatrix) -> DelayEstimate:
    """argmax class of the classifier output; ties keep the first class,
    so an all-uniform output degenerates to delay -20."""
    probs = model.forward(Tensor(matrix_to_input(matrix)[None], requires_grad=False))
    p = probs.data[0]
    c = int(np.argmax(p))
    return DelayEstimate(delay=class_to_delay(c), confidence=float(p[c]), method="dense")


def train_densedelay(model: DenseDelayModel, matrices, labels,
                     epochs: int = 50, lr: float = 0.01, batch_size: int = 32,
                     seed: int = 0, progress=None) -> TrainingLog:
    """Categorical cross-entropy + Adam over (matrix, delay-class) samples."""
    if len(matrices) != len(labels):
        raise ValueError(f"{len(matrices)} matrices vs {len(labels)} labels")
    if not matrices:
        raise ValueError("train_densedelay: empty dataset")
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("train_densedelay: labels must be integer delay classes")
    if labels.min() < 0 or labels.max() >= N_DELAY_CLASSES:
        bad = labels[(labels < 0) | (labels >= N_DELAY_CLASSES)][0]
        raise ValueError(f"train_densedelay: label {bad} outside [0, {N_DELAY_CLASSES - 1}]")
    inputs = np.stack([matrix_to_input(m) for m in matrices])
    opt = AdamState(model.params, lr)
    rng = np.random.default_rng(seed)
    n = len(matrices)
    logrec = TrainingLog()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            model.params.zero_grad()
            probs = model.forward(Tensor(inputs[idx], requires_grad=False))
            loss = categorical_ce_loss(probs, labels[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        logrec.epoch_losses.append(total / n)
        if progress:
            progress(epoch, logrec.epoch_losses[-1])
    return logrec


# ---------------------------------------------------------------------------
# matrix CSV round trip


def matrix_to_csv(matrix: MatchingMatrix, path):
    """20x20 CSV with a one-line header carrying polarity and model tag."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# polarity={matrix.polarity} tag={matrix.model_tag}\n")
        for row in matrix.scores:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def matrix_from_csv(path) -> MatchingMatrix:
    from .errors import DataError

    with open(path) as fh:
        header = fh.readline().strip()
        rows = [line.strip() for line in fh if line.strip()]
    if not header.startswith("# polarity="):
        raise DataError(f"{path}: missing matrix header")
    fieldsd = dict(part.split("=", 1) for part in header[2:].split(" "))
    scores = np.array([[float(v) for v in r.split(",")] for r in rows])
    return MatchingMatrix(scores, fieldsd["polarity"], fieldsd.get("tag", "unknown"))
