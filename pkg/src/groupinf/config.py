"""Run configuration: JSON schema, validation, and derived defaults.

Configs are validated in full before any compute starts, and every
error names the offending field path. A single top-level ``seed`` is
the only randomness source; consumers derive their streams from it (see
``seeding``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import SyntheticConfig
from .errors import ConfigError
from .model import TrainConfig

VALID_METHODS = ("random", "top_k_first_order", "greedy_interaction")


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}: missing required field")
    return section[key]


def _typed(value, types, path: str):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{path}: expected {types}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{path}: expected {types}, got {type(value).__name__}")
    return value


def _get(section: dict, key: str, types, path: str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    return _typed(section[key], types, f"{path}.{key}")


@dataclass(frozen=True)
class DatasetConfig:
    source: str  # "synthetic_blobs" | "idx" | "csv"
    blobs: Optional[SyntheticConfig] = None
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    csv_path: Optional[str] = None
    target_column: Optional[str] = None
    test_fraction: float = 0.25
    standardize: bool = True


@dataclass(frozen=True)
class ArchConfig:
    kind: str  # "lr_binary" | "lr_multiclass" | "linear" | "mlp"
    hidden1: int = 128
    hidden2: int = 64


@dataclass(frozen=True)
class CurvatureConfig:
    mode: Optional[str] = None         # default: exact for convex archs, GN for mlp
    damping: Optional[float] = None    # default: 0 for damped-free convex, 1e-2 for mlp
    target_mode: Optional[str] = None
    target_block_diagonal: bool = False
    dense_limit: int = 20_000


@dataclass(frozen=True)
class TargetConfig:
    kind: str = "mean_test_loss"
    index: int = 0          # single_example: index into the chosen split
    split: str = "test"


@dataclass(frozen=True)
class GroupConfig:
    count: int = 50
    size: int = 25
    construction: str = "similar_softmax"  # or "random"


@dataclass(frozen=True)
class SelectionConfig:
    pool_size: int = 2000
    budgets: tuple = (200,)
    methods: tuple = VALID_METHODS
    n_seeds: int = 5


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset: DatasetConfig
    arch: ArchConfig
    train: TrainConfig
    curvature: CurvatureConfig = CurvatureConfig()
    target: TargetConfig = TargetConfig()
    groups: GroupConfig = GroupConfig()
    selection: SelectionConfig = SelectionConfig()
    raw: dict = field(default_factory=dict, compare=False)


def _parse_dataset(section: dict) -> DatasetConfig:
    path = "dataset"
    source = _require(section, "source", path)
    test_fraction = float(_get(section, "test_fraction", (int, float), path, default=0.25))
    standardize = _get(section, "standardize", bool, path, default=True)
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("dataset.test_fraction: must lie strictly between 0 and 1")
    if source == "synthetic_blobs":
        blobs = SyntheticConfig(
            n_classes=int(_get(section, "n_classes", int, path, required=True)),
            n_per_class=int(_get(section, "n_per_class", int, path, required=True)),
            dim=int(_get(section, "dim", int, path, required=True)),
            center_scale=float(_get(section, "center_scale", (int, float), path, default=3.0)),
            stddev=float(_get(section, "stddev", (int, float), path, default=1.0)),
            seed=int(_get(section, "seed", int, path, default=0)),
        )
        return DatasetConfig(source, blobs=blobs, test_fraction=test_fraction,
                             standardize=standardize)
    if source == "idx":
        images = _get(section, "images", str, path, required=True)
        labels = _get(section, "labels", str, path, required=True)
        for key, p in (("images", images), ("labels", labels)):
            if not Path(p).exists():
                raise ConfigError(f"dataset.{key}: path {p!r} does not exist")
        return DatasetConfig(source, images_path=images, labels_path=labels,
                             test_fraction=test_fraction, standardize=standardize)
    if source == "csv":
        csv_path = _get(section, "path", str, path, required=True)
        if not Path(csv_path).exists():
            raise ConfigError(f"dataset.path: path {csv_path!r} does not exist")
        return DatasetConfig(source, csv_path=csv_path,
                             target_column=_get(section, "target_column", str, path),
                             test_fraction=test_fraction, standardize=standardize)
    raise ConfigError(f"dataset.source: unknown source {source!r}")


def _parse_arch(section: dict) -> ArchConfig:
    kind = _require(section, "kind", "arch")
    if kind not in ("lr_binary", "lr_multiclass", "linear", "mlp"):
        raise ConfigError(f"arch.kind: unknown architecture {kind!r}")
    return ArchConfig(kind,
                      hidden1=int(_get(section, "hidden1", int, "arch", default=128)),
                      hidden2=int(_get(section, "hidden2", int, "arch", default=64)))


def _parse_train(section: dict, master_seed: int) -> TrainConfig:
    return TrainConfig(
        optimizer=_get(section, "optimizer", str, "train", default="newton_lr"),
        learning_rate=float(_get(section, "learning_rate", (int, float), "train", default=0.01)),
        epochs=int(_get(section, "epochs", int, "train", default=100)),
        batch_size=int(_get(section, "batch_size", int, "train", default=64)),
        weight_decay=float(_get(section, "weight_decay", (int, float), "train", default=0.01)),
        momentum=float(_get(section, "momentum", (int, float), "train", default=0.0)),
        seed=master_seed,
        convergence_tol=float(_get(section, "convergence_tol", (int, float), "train",
                                   default=1e-10)),
    )


def _parse_curvature(section: dict) -> CurvatureConfig:
    mode = _get(section, "mode", str, "curvature")
    target_mode = _get(section, "target_mode", str, "curvature")
    for name, value in (("mode", mode), ("target_mode", target_mode)):
        if value is not None and value not in ("exact_hessian", "gauss_newton"):
            raise ConfigError(f"curvature.{name}: unknown mode {value!r}")
    damping = _get(section, "damping", (int, float), "curvature")
    if damping is not None and damping < 0:
        raise ConfigError("curvature.damping: must be >= 0")
    return CurvatureConfig(
        mode=mode,
        damping=None if damping is None else float(damping),
        target_mode=target_mode,
        target_block_diagonal=_get(section, "target_block_diagonal", bool, "curvature",
                                   default=False),
        dense_limit=int(_get(section, "dense_limit", int, "curvature", default=20_000)),
    )


def _parse_target(section: dict) -> TargetConfig:
    kind = _get(section, "kind", str, "target", default="mean_test_loss")
    if kind not in ("mean_test_loss", "single_example"):
        raise ConfigError(f"target.kind: unknown target {kind!r}")
    split = _get(section, "split", str, "target", default="test")
    if split not in ("train", "test"):
        raise ConfigError(f"target.split: must be 'train' or 'test', got {split!r}")
    return TargetConfig(kind, index=int(_get(section, "index", int, "target", default=0)),
                        split=split)


def _parse_groups(section: dict) -> GroupConfig:
    construction = _get(section, "construction", str, "groups", default="similar_softmax")
    if construction not in ("similar_softmax", "random"):
        raise ConfigError(f"groups.construction: unknown construction {construction!r}")
    cfg = GroupConfig(count=int(_get(section, "count", int, "groups", default=50)),
                      size=int(_get(section, "size", int, "groups", default=25)),
                      construction=construction)
    if cfg.count < 1 or cfg.size < 1:
        raise ConfigError("groups.count and groups.size must be >= 1")
    return cfg


def _parse_selection(section: dict) -> SelectionConfig:
    budgets = _get(section, "budgets", list, "selection", default=[200])
    budgets = tuple(int(_typed(b, int, "selection.budgets[]")) for b in budgets)
    if not budgets or any(b < 1 for b in budgets):
        raise ConfigError("selection.budgets: need at least one positive budget")
    if list(budgets) != sorted(budgets):
        raise ConfigError("selection.budgets: must be sorted ascending")
    methods = _get(section, "methods", list, "selection", default=list(VALID_METHODS))
    for m in methods:
        if m not in VALID_METHODS:
            raise ConfigError(f"selection.methods: unknown method {m!r}")
    cfg = SelectionConfig(
        pool_size=int(_get(section, "pool_size", int, "selection", default=2000)),
        budgets=budgets, methods=tuple(methods),
        n_seeds=int(_get(section, "n_seeds", int, "selection", default=5)))
    if cfg.n_seeds < 1:
        raise ConfigError("selection.n_seeds: must be >= 1")
    if max(budgets) > cfg.pool_size:
        raise ConfigError("selection.budgets: budgets must not exceed pool_size")
    return cfg


def parse_config(raw: dict, seed_override: Optional[int] = None) -> RunConfig:
    """Validate a parsed JSON config dict into a RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    seed = seed_override if seed_override is not None else _get(
        raw, "seed", int, "config", default=0)
    dataset = _parse_dataset(_typed(_require(raw, "dataset", "config"), dict, "dataset"))
    arch = _parse_arch(_typed(_require(raw, "arch", "config"), dict, "arch"))
    train = _parse_train(_typed(raw.get("train", {}), dict, "train"), seed)
    curvature = _parse_curvature(_typed(raw.get("curvature", {}), dict, "curvature"))
    target = _parse_target(_typed(raw.get("target", {}), dict, "target"))
    groups = _parse_groups(_typed(raw.get("groups", {}), dict, "groups"))
    selection = _parse_selection(_typed(raw.get("selection", {}), dict, "selection"))
    echo = dict(raw)
    echo["seed"] = seed
    return RunConfig(seed=int(seed), dataset=dataset, arch=arch, train=train,
                     curvature=curvature, target=target, groups=groups,
                     selection=selection, raw=echo)


def load_config(path: str, seed_override: Optional[int] = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from None
    return parse_config(raw, seed_override)


def resolve_curvature_defaults(cfg: CurvatureConfig, arch_kind: str,
                               weight_decay: float) -> CurvatureConfig:
    """Fill mode/damping defaults: exact+undamped for convex archs with l2,
    Gauss-Newton with 1e-2 damping for the MLP."""
    convex = arch_kind != "mlp"
    mode = cfg.mode or ("exact_hessian" if convex else "gauss_newton")
    target_mode = cfg.target_mode or ("exact_hessian" if convex else "gauss_newton")
    damping = cfg.damping
    if damping is None:
        damping = 0.0 if (convex and weight_decay > 0) else 1e-2
    return CurvatureConfig(mode, damping, target_mode, cfg.target_block_diagonal,
                           cfg.dense_limit)
