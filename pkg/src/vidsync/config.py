"""Flat key=value config files plus command-line overrides.

The file format is one ``key = value`` per line, ``#`` comments allowed;
CLI flags take precedence.  Unknown keys are rejected by name.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .evaluate import GridConfig
from .flow import FlowParams
from .matchers import MATCHER_KINDS


def parse_kv_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


@dataclass
class RunConfig:
    """Validated settings shared by gen-data / flow / train / sync."""

    resolution: int = 64
    input: str = "raw"
    matcher: str = "oracle"
    delay: str = "heatmap"
    epochs: int | None = None      # None: paper schedule for the matcher kind
    batch: int | None = None
    lr: float | None = None
    dense_epochs: int = 50
    dense_lr: float = 0.01
    dense_batch: int = 32
    seed: int = 0
    frames: int = 120
    disparity: float = 3.0
    blobs: int = 4
    noise: float = 0.0
    n_pairs: int = 200
    n_triplets: int = 300
    n_matrices: int = 150
    n_sequences: int = 40
    flow_levels: int = 3
    flow_scale: float = 0.5
    flow_window: int = 15
    flow_iterations: int = 3
    flow_poly_n: int = 5
    flow_poly_sigma: float = 1.1

    def validate(self):
        if self.resolution < 1:
            raise ConfigError(f"invalid resolution {self.resolution}")
        if self.input not in ("raw", "flow"):
            raise ConfigError(f"input must be raw or flow, got {self.input!r}")
        if self.matcher not in MATCHER_KINDS:
            raise ConfigError(f"unknown matcher {self.matcher!r}")
        if self.delay not in ("heatmap", "dense"):
            raise ConfigError(f"unknown delay method {self.delay!r}")
        for key in ("frames", "blobs", "n_pairs", "n_triplets", "n_matrices",
                    "n_sequences", "dense_epochs", "dense_batch"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        try:
            self.flow_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def flow_params(self) -> FlowParams:
        p = FlowParams(levels=self.flow_levels, scale=self.flow_scale,
                       window=self.flow_window, iterations=self.flow_iterations,
                       poly_n=self.flow_poly_n, poly_sigma=self.flow_poly_sigma)
        p.validate()
        return p

    def apply_paper_defaults(self):
        """Pin the published training schedule (resolution 224, 100 epochs;
        per-matcher batch/lr resolved by training_schedule)."""
        self.resolution = 224
        self.epochs = None
        self.batch = None
        self.lr = None
        self.dense_epochs = 50
        self.dense_lr = 0.01

    def training_schedule(self) -> tuple[int, int, float]:
        """(epochs, batch, lr) for the selected matcher, paper values as
        defaults: siamese trains with batch 1 at lr 0.01, the triplet models
        with batch 32 at lr 0.001, all over 100 epochs."""
        if self.matcher == "siamese":
            sched = (100, 1, 0.01)
        else:
            sched = (100, 32, 0.001)
        return (self.epochs if self.epochs is not None else sched[0],
                self.batch if self.batch is not None else sched[1],
                self.lr if self.lr is not None else sched[2])


def _coerce(name: str, raw: str, target_type):
    try:
        if target_type is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as "
                          f"{target_type.__name__}") from None


def build_run_config(file_values: dict[str, str] | None,
                     overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    for key, raw in (file_values or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        target = type(getattr(cfg, key)) if getattr(cfg, key) is not None else float
        if key in ("epochs", "batch"):
            target = int
        if key == "lr":
            target = float
        setattr(cfg, key, _coerce(key, raw, target))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, val)
    cfg.validate()
    return cfg


_GRID_LIST_KEYS = ("matchers", "delay_methods", "train_sets", "test_sets")
_GRID_INT_KEYS = ("resolution", "seed", "n_train", "n_matrices", "n_eval",
                  "epochs", "dense_epochs", "dense_batch")
_GRID_FLOAT_KEYS = ("dense_lr",)


def build_grid_config(values: dict[str, str],
                      overrides: dict | None = None) -> GridConfig:
    grid = GridConfig()
    for key, raw in values.items():
        if key.startswith("dataset."):
            name = key[len("dataset."):]
            if not name:
                raise ConfigError("dataset key needs a name: dataset.<name> = ...")
            grid.datasets[name] = raw
        elif key in _GRID_LIST_KEYS:
            setattr(grid, key, [v.strip() for v in raw.split(",") if v.strip()])
        elif key in _GRID_INT_KEYS:
            setattr(grid, key, _coerce(key, raw, int))
        elif key in _GRID_FLOAT_KEYS:
            setattr(grid, key, _coerce(key, raw, float))
        elif key == "input":
            grid.input = raw
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        setattr(grid, key, val)
    grid.validate()
    return grid
