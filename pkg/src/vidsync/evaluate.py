"""Scoring, the cross-dataset experiment grid, and result tables/plots.

The paper-style "F1 score" for exact-delay prediction is reported two ways
so either reading is available: exact-match accuracy and macro-F1 over the
delay classes present in the ground truth.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (SceneConfig, load_frames, make_pairs, make_sequence_pairs,
                   make_triplets, frames_to_flow_frames, render_synthetic_stereo)
from .delay import (DenseDelayModel, delay_to_class, densedelay_estimate,
                    heatmap_estimate, train_densedelay)
from .errors import ConfigError, DataError
from .matchers import (MATCHER_KINDS, build_matcher, build_matching_matrix,
                       train_siamese, train_triplet)

DELAY_METHODS = ("heatmap", "dense")


def mae_frames(preds, truths) -> float:
    """Mean absolute error of predicted delays, in frames."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"mae_frames: {p.shape} predictions vs {t.shape} truths")
    if p.size == 0:
        raise ValueError("mae_frames: empty inputs")
    return float(np.abs(p - t).mean())


def f1_delay(preds, truths) -> tuple[float, float]:
    """(exact-match accuracy, macro F1 over classes present in the truths)."""
    p = np.asarray(preds)
    t = np.asarray(truths)
    if p.shape != t.shape:
        raise ValueError(f"f1_delay: {p.shape} predictions vs {t.shape} truths")
    if p.size == 0:
        raise ValueError("f1_delay: empty inputs")
    acc = float((p == t).mean())
    f1s = []
    for c in np.unique(t):
        tp = int(((p == c) & (t == c)).sum())
        fp = int(((p == c) & (t != c)).sum())
        fn = int(((p != c) & (t == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1s))


def derive_seed(master: int, *tags) -> int:
    """Stable per-job sub-seed from the master seed and string tags."""
    h = zlib.crc32("|".join(str(t) for t in tags).encode())
    return int(np.random.SeedSequence([int(master) & 0xFFFFFFFF, h]).generate_state(1)[0])


@dataclass
class EvalReport:
    matcher: str
    delay_method: str
    train_set: str
    test_set: str
    n: int
    exact_acc: float
    macro_f1: float
    mae: float


@dataclass
class GridConfig:
    """One experiment grid: matchers x delay methods x train sets, each
    system evaluated on every listed dataset it was not trained on."""

    datasets: dict = field(default_factory=dict)   # name -> source spec
    matchers: list = field(default_factory=lambda: ["oracle"])
    delay_methods: list = field(default_factory=lambda: ["heatmap"])
    train_sets: list = field(default_factory=list)
    test_sets: list | None = None
    resolution: int = 64
    input: str = "raw"
    seed: int = 0
    n_train: int = 200
    n_matrices: int = 150
    n_eval: int = 40
    epochs: int | None = None
    dense_epochs: int = 50
    dense_lr: float = 0.01
    dense_batch: int = 32

    def validate(self):
        if not self.datasets:
            raise ConfigError("grid: no datasets configured")
        if not self.train_sets:
            raise ConfigError("grid: no train_sets configured")
        for name in self.train_sets:
            if name not in self.datasets:
                raise ConfigError(f"grid: train set {name!r} is not a dataset")
        if self.test_sets is not None:
            for name in self.test_sets:
                if name not in self.datasets:
                    raise ConfigError(f"grid: test set {name!r} is not a dataset")
            for name in self.train_sets:
                if name in self.test_sets:
                    raise ConfigError(
                        f"grid: train set {name!r} appears in its own test list")
        for m in self.matchers:
            if m not in MATCHER_KINDS:
                raise ConfigError(f"grid: unknown matcher {m!r}")
        for dmethod in self.delay_methods:
            if dmethod not in DELAY_METHODS:
                raise ConfigError(f"grid: unknown delay method {dmethod!r}")
        if self.input not in ("raw", "flow"):
            raise ConfigError(f"grid: input must be raw or flow, got {self.input!r}")
        if self.resolution < 1:
            raise ConfigError(f"grid: invalid resolution {self.resolution}")


def load_dataset_source(source: str, resolution: int, input_kind: str,
                        default_frames: int = 120):
    """Materialize 'synthetic:SEED[:FRAMES]' or 'dir:PATH' into frame streams."""
    if source.startswith("synthetic:"):
        parts = source.split(":")[1:]
        try:
            seed = int(parts[0])
            frames = int(parts[1]) if len(parts) > 1 else default_frames
        except (ValueError, IndexError):
            raise ConfigError(f"bad synthetic dataset spec {source!r}") from None
        left, right = render_synthetic_stereo(
            SceneConfig(resolution=resolution, n_frames=frames), seed=seed)
    elif source.startswith("dir:"):
        root = Path(source[4:])
        left = load_frames(root / "left", resolution)
        right = load_frames(root / "right", resolution)
    else:
        raise ConfigError(f"dataset source must be synthetic:... or dir:..., got {source!r}")
    if input_kind == "flow":
        left = frames_to_flow_frames(left, resolution)
        right = frames_to_flow_frames(right, resolution)
    return left, right


def _train_matcher(kind: str, streams, grid: GridConfig, seed: int):
    in_channels = streams[0][0].channels
    model = build_matcher(kind, in_channels=in_channels, seed=seed)
    if kind == "oracle":
        return model
    left, right = streams
    epochs = grid.epochs
    if kind == "siamese":
        pairs = make_pairs(left, right, grid.n_train // 2,
                           grid.n_train - grid.n_train // 2, seed=seed)
        train_siamese(model, pairs, epochs=100 if epochs is None else epochs,
                      batch_size=1, lr=0.01, seed=seed)
    else:
        trips = make_triplets(left, right, grid.n_train, seed=seed)
        train_triplet(model, trips, epochs=100 if epochs is None else epochs,
                      batch_size=32, lr=0.001, seed=seed)
    return model


def _matrices_for(model, streams, n: int, seed: int):
    seqs = make_sequence_pairs(streams[0], streams[1], n, seed=seed)
    mats = [build_matching_matrix(model, sp) for sp in seqs]
    labels = [delay_to_class(sp.true_delay) for sp in seqs]
    return mats, labels


def run_experiment(grid: GridConfig, progress=None) -> list[EvalReport]:
    """Train each (matcher, train set) once and score every listed system.

    Every job seed derives from the grid seed plus the job's names, so a
    re-run reproduces the same reports exactly.
    """
    grid.validate()
    streams = {
        name: load_dataset_source(src, grid.resolution, grid.input)
        for name, src in sorted(grid.datasets.items())
    }
    reports: list[EvalReport] = []
    for train_name in grid.train_sets:
        test_names = (grid.test_sets if grid.test_sets is not None
                      else [n for n in sorted(streams) if n != train_name])
        for kind in grid.matchers:
            if progress:
                progress(f"training {kind} on {train_name}")
            model = _train_matcher(kind, streams[train_name], grid,
                                   derive_seed(grid.seed, "train", train_name, kind))
            dense_model = None
            if "dense" in grid.delay_methods:
                mats, labels = _matrices_for(
                    model, streams[train_name], grid.n_matrices,
                    derive_seed(grid.seed, "matrices", train_name, kind))
                dense_model = DenseDelayModel(
                    seed=derive_seed(grid.seed, "dense", train_name, kind))
                train_densedelay(dense_model, mats, labels,
                                 epochs=grid.dense_epochs, lr=grid.dense_lr,
                                 batch_size=grid.dense_batch,
                                 seed=derive_seed(grid.seed, "densetrain", train_name, kind))
            per_test = {}
            for test_name in test_names:
                seqs = make_sequence_pairs(
                    streams[test_name][0], streams[test_name][1], grid.n_eval,
                    seed=derive_seed(grid.seed, "eval", test_name))
                per_test[test_name] = (
                    [build_matching_matrix(model, sp) for sp in seqs],
                    [sp.true_delay for sp in seqs],
                )
            for dmethod in grid.delay_methods:
                for test_name in test_names:
                    mats, truths = per_test[test_name]
                    if dmethod == "heatmap":
                        preds = [heatmap_estimate(m).delay for m in mats]
                    else:
                        preds = [densedelay_estimate(dense_model, m).delay for m in mats]
                    acc, f1 = f1_delay(preds, truths)
                    reports.append(EvalReport(
                        matcher=model.tag, delay_method=dmethod,
                        train_set=train_name, test_set=test_name,
                        n=len(truths), exact_acc=acc, macro_f1=f1,
                        mae=mae_frames(preds, truths)))
                    if progress:
                        progress(f"{model.tag}+{dmethod} {train_name}->{test_name}: "
                                 f"acc={acc:.3f} mae={reports[-1].mae:.2f}")
    return reports


# ---------------------------------------------------------------------------
# CSV and SVG output

CSV_HEADER = "matcher,delay_method,train_set,test_set,n,exact_acc,macro_f1,mae"


def reports_to_csv(reports: list[EvalReport]) -> str:
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(f"{r.matcher},{r.delay_method},{r.train_set},{r.test_set},"
                     f"{r.n},{r.exact_acc:.6f},{r.macro_f1:.6f},{r.mae:.6f}")
    return "\n".join(lines) + "\n"


def write_reports_csv(reports, path):
    Path(path).write_text(reports_to_csv(reports))


def read_reports_csv(path) -> list[EvalReport]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise DataError(f"{path}: not a results csv")
    out = []
    for line in lines[1:]:
        m, dm, tr, te, n, acc, f1, mae = line.split(",")
        out.append(EvalReport(m, dm, tr, te, int(n), float(acc), float(f1), float(mae)))
    return out


_PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
            "#aa3377", "#bbbbbb", "#222222")


def emit_plot(reports: list[EvalReport], path):
    """Grouped bar chart (macro F1 up, MAE down) as a deterministic SVG."""
    if not reports:
        raise ConfigError("emit_plot: empty report set")
    systems = sorted({(r.matcher, r.delay_method, r.train_set) for r in reports})
    tests = sorted({r.test_set for r in reports})
    lookup = {(r.matcher, r.delay_method, r.train_set, r.test_set): r for r in reports}

    bar_w = 18
    group_gap = 30
    group_w = len(systems) * bar_w
    margin_l, margin_r, margin_t = 60, 20, 50
    panel_h, panel_gap, label_h = 160, 45, 30
    width = margin_l + len(tests) * (group_w + group_gap) + margin_r
    height = margin_t + 2 * panel_h + panel_gap + label_h
    mae_max = max(1.0, float(np.ceil(max(r.mae for r in reports))))

    def esc(s):
        return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for si, sys_key in enumerate(systems):
        label = "+".join(sys_key)
        x = margin_l + si * 150
        color = _PALETTE[si % len(_PALETTE)]
        parts.append(f'<rect x="{x}" y="12" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{x + 14}" y="21">{esc(label)}</text>')

    for panel, (metric, vmax, title) in enumerate(
            (("macro_f1", 1.0, "macro F1"), ("mae", mae_max, "MAE [frames]"))):
        top = margin_t + panel * (panel_h + panel_gap)
        base = top + panel_h
        parts.append(f'<text x="6" y="{top + 12}" font-weight="bold">{esc(title)}</text>')
        parts.append(f'<line x1="{margin_l}" y1="{base}" x2="{width - margin_r}" '
                     f'y2="{base}" stroke="black"/>')
        for frac in (0.0, 0.5, 1.0):
            yv = base - frac * (panel_h - 20)
            parts.append(f'<text x="{margin_l - 34}" y="{yv + 4:.1f}">'
                         f'{frac * vmax:.2f}</text>')
            parts.append(f'<line x1="{margin_l - 4}" y1="{yv:.1f}" x2="{margin_l}" '
                         f'y2="{yv:.1f}" stroke="black"/>')
        for ti, test in enumerate(tests):
            gx = margin_l + ti * (group_w + group_gap) + group_gap // 2
            for si, sys_key in enumerate(systems):
                r = lookup.get((*sys_key, test))
                if r is None:
                    continue
                v = getattr(r, metric)
                h = (panel_h - 20) * min(v, vmax) / vmax
                x = gx + si * bar_w
                color = _PALETTE[si % len(_PALETTE)]
                parts.append(
                    f'<rect x="{x}" y="{base - h:.2f}" width="{bar_w - 3}" '
                    f'height="{h:.2f}" fill="{color}"><title>{esc(test)} '
                    f'{esc("+".join(sys_key))} {metric}={v:.4f}</title></rect>')
            if panel == 1:
                parts.append(f'<text x="{gx + group_w / 2:.1f}" y="{base + 16}" '
                             f'text-anchor="middle">{esc(test)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
