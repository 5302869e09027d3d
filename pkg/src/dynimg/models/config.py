"""Pipeline configuration sections.

Every section is a dataclass validated on construction. ``from_dict`` accepts
the JSON form (rejecting unknown keys) and ``to_dict`` returns it, so a
config file written with ``to_dict`` reproduces the run exactly.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, ClassVar, Mapping, TypeVar

from dynimg.models.json import DataClassJSONMixin
from dynimg.models.training import tensor_shapes


# Synthetic footage runs at roughly the source videos' ~243 frames per minute.
SYNTH_FPS = 4


class ConfigError(Exception):
    """Exception for invalid or inconsistent configuration."""

    pass


_S = TypeVar("_S", bound="_Section")


class _Section(DataClassJSONMixin):
    """Shared dict conversion for config sections."""

    # JSON key -> attribute name, for keys that are not valid identifiers
    aliases: ClassVar[dict[str, str]] = {}
    name: ClassVar[str] = ""

    @classmethod
    def from_dict(cls: type[_S], mapping: Mapping[str, Any] | None) -> _S:
        """Build the section from its JSON form.

        Raises:
            ConfigError: unknown key or invalid value
        """
        known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
        kwargs: dict[str, Any] = {}
        for key, value in (mapping or {}).items():
            attr = cls.aliases.get(key, key)
            if attr not in known:
                raise ConfigError(f"Unknown key {key!r} in section {cls.name!r}")
            if isinstance(value, list):
                value = tuple(value)
            kwargs[attr] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid section {cls.name!r}: {exc}")

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON form of the section."""
        inverse = {attr: key for key, attr in self.aliases.items()}
        out: dict[str, Any] = {}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[inverse.get(f.name, f.name)] = value
        return out


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


@dataclass(frozen=True)
class PreprocessConfig(_Section):
    """Frame transforms applied before pooling.

    Brightness noise draws one factor per clip by default; with
    ``brightness_scope="frame"`` every frame gets its own factor, which adds
    a random global brightness trend to the ranking signal.
    """

    name: ClassVar[str] = "preprocess"

    resize_width: int = 224
    resize_height: int = 224
    interpolation: str = "bilinear"
    brightness_noise: bool = True
    brightness_range: tuple[float, float] = (0.7, 1.3)
    brightness_scope: str = "clip"
    gamma: float = 0.5
    augment_order: str = "before_pool"

    def __post_init__(self) -> None:
        _require(
            self.resize_width >= 1 and self.resize_height >= 1,
            "resize dimensions must be >= 1",
        )
        _require(
            self.interpolation in ("bilinear", "nearest"),
            f"interpolation must be 'bilinear' or 'nearest', got {self.interpolation!r}",
        )
        low, high = self.brightness_range
        _require(
            0.25 <= low <= high <= 4.0,
            f"brightness_range must lie within [0.25, 4], got {self.brightness_range}",
        )
        _require(
            self.brightness_scope in ("clip", "frame"),
            f"brightness_scope must be 'clip' or 'frame', "
            f"got {self.brightness_scope!r}",
        )
        _require(self.gamma > 0, f"gamma must be > 0, got {self.gamma}")
        _require(
            self.augment_order in ("before_pool", "after_pool"),
            f"augment_order must be 'before_pool' or 'after_pool', "
            f"got {self.augment_order!r}",
        )


@dataclass(frozen=True)
class RankPoolConfig(_Section):
    """Settings of the rank pooling solver.

    ``lam`` is the regularization weight of the energy. The solver itself is
    deterministic; ``seed`` is recorded in sidecars so a run is fully
    described by its metadata.
    """

    name: ClassVar[str] = "rankpool"
    aliases: ClassVar[dict[str, str]] = {"lambda": "lam"}

    lam: float = 1e-3
    max_iters: int = 200
    step_size: float = 1.0
    tol: float = 1e-6
    sweep: int = 10
    seed: int = 0
    solver: str = "exact"
    smooth: bool = True

    def __post_init__(self) -> None:
        _require(self.lam > 0, f"lambda must be > 0, got {self.lam}")
        _require(self.max_iters >= 1, f"max_iters must be >= 1, got {self.max_iters}")
        _require(self.step_size > 0, f"step_size must be > 0, got {self.step_size}")
        _require(self.tol >= 0, f"tol must be >= 0, got {self.tol}")
        _require(self.sweep >= 1, f"sweep must be >= 1, got {self.sweep}")
        _require(
            self.solver in ("exact", "approx"),
            f"solver must be 'exact' or 'approx', got {self.solver!r}",
        )


@dataclass(frozen=True)
class DatasetConfig(_Section):
    """Windowing, splitting and synthetic generation settings.

    Synthetic sources are ``source_frames`` long (one minute at
    ``SYNTH_FPS`` by default) and cut into clips of ``T`` frames.
    """

    name: ClassVar[str] = "dataset"

    T: int = 25
    stride: int | None = None
    multiplier: int = 1
    test_fraction: float = 0.21
    periodic_sources: int = 10
    drift_sources: int = 5
    static_sources: int = 5
    source_frames: int = SYNTH_FPS * 60
    width: int = 64
    height: int = 64
    channels: int = 3
    noise: float = 0.02

    def __post_init__(self) -> None:
        _require(self.T >= 2, f"T must be >= 2, got {self.T}")
        _require(
            self.stride is None or self.stride >= 1,
            f"stride must be >= 1, got {self.stride}",
        )
        _require(
            self.multiplier >= 1, f"multiplier must be >= 1, got {self.multiplier}"
        )
        _require(
            0 < self.test_fraction < 1,
            f"test_fraction must lie in (0, 1), got {self.test_fraction}",
        )
        _require(
            min(self.periodic_sources, self.drift_sources, self.static_sources) >= 0,
            "source counts must be >= 0",
        )
        _require(
            self.source_frames >= 2,
            f"source_frames must be >= 2, got {self.source_frames}",
        )
        _require(
            self.channels in (1, 3), f"channels must be 1 or 3, got {self.channels}"
        )
        _require(self.noise >= 0, f"noise must be >= 0, got {self.noise}")

    @property
    def effective_stride(self) -> int:
        """Stride used for windowing; defaults to non-overlapping windows."""
        return self.T if self.stride is None else self.stride


@dataclass(frozen=True)
class TrainConfig(_Section):
    """Training hyperparameters.

    The learning rate at step ``t`` is ``lr0 * exp(k * t)``; ``schedule``
    selects whether ``t`` counts epochs or optimizer steps.
    """

    name: ClassVar[str] = "train"

    lr0: float = 0.001
    k: float = -0.01
    batch_size: int = 12
    dropout_p: float = 0.5
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    schedule: str = "epoch"
    val_fraction: float = 0.2

    def __post_init__(self) -> None:
        _require(self.lr0 > 0, f"lr0 must be > 0, got {self.lr0}")
        _require(
            self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"
        )
        _require(
            0 <= self.dropout_p < 1,
            f"dropout_p must lie in [0, 1), got {self.dropout_p}",
        )
        _require(
            self.max_epochs >= 1, f"max_epochs must be >= 1, got {self.max_epochs}"
        )
        _require(self.patience >= 0, f"patience must be >= 0, got {self.patience}")
        _require(
            self.schedule in ("epoch", "step"),
            f"schedule must be 'epoch' or 'step', got {self.schedule!r}",
        )
        _require(
            0 < self.val_fraction < 1,
            f"val_fraction must lie in (0, 1), got {self.val_fraction}",
        )


@dataclass(frozen=True)
class EvalConfig(_Section):
    """Cross-validation settings."""

    name: ClassVar[str] = "eval"

    k: int = 10

    def __post_init__(self) -> None:
        _require(self.k >= 2, f"k must be >= 2, got {self.k}")


@dataclass(frozen=True)
class PathsConfig(_Section):
    """Input and output locations; unset paths live under ``out_dir``."""

    name: ClassVar[str] = "paths"

    out_dir: str = "runs"
    frames_dir: str | None = None
    manifest: str | None = None

    @property
    def out(self) -> Path:
        """Output directory."""
        return Path(self.out_dir)

    @property
    def frames(self) -> Path:
        """Per-source frame directories."""
        return Path(self.frames_dir) if self.frames_dir else self.out / "frames"

    @property
    def manifest_path(self) -> Path:
        """Line-delimited JSON manifest."""
        return Path(self.manifest) if self.manifest else self.out / "manifest.jsonl"

    @property
    def pooled(self) -> Path:
        """Dynamic images and their sidecars."""
        return self.out / "pooled"

    @property
    def weights(self) -> Path:
        """Trained weights."""
        return self.out / "model.dnw"


@dataclass(frozen=True)
class PipelineConfig(DataClassJSONMixin):
    """All sections of a pipeline run plus the global seed."""

    seed: int = 0
    workers: int = 1
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    rankpool: RankPoolConfig = field(default_factory=RankPoolConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    _sections: ClassVar[dict[str, type[_Section]]] = {
        "preprocess": PreprocessConfig,
        "rankpool": RankPoolConfig,
        "dataset": DatasetConfig,
        "train": TrainConfig,
        "eval": EvalConfig,
        "paths": PathsConfig,
    }

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Any]) -> "PipelineConfig":
        """Build the full config from its JSON form.

        Raises:
            ConfigError: unknown section or key, or invalid value
        """
        kwargs: dict[str, Any] = {}
        for key, value in mapping.items():
            if key in cls._sections:
                if not isinstance(value, Mapping):
                    raise ConfigError(f"Section {key!r} must be an object")
                kwargs[key] = cls._sections[key].from_dict(value)
            elif key in ("seed", "workers"):
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"{key!r} must be an integer")
                kwargs[key] = value
            else:
                raise ConfigError(f"Unknown config section {key!r}")
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON form of the full config."""
        out: dict[str, Any] = {"seed": self.seed, "workers": self.workers}
        for key in self._sections:
            out[key] = getattr(self, key).to_dict()
        return out

    def override(self, **overrides: Any) -> "PipelineConfig":
        """Apply command-line overrides; ``None`` values are ignored.

        Recognized keys: ``seed``, ``out``, ``solver``, ``T``, ``workers``.
        The global seed also reseeds the training and solver sections.
        """
        cfg = self
        if (seed := overrides.get("seed")) is not None:
            cfg = replace(
                cfg,
                seed=seed,
                train=replace(cfg.train, seed=seed),
                rankpool=replace(cfg.rankpool, seed=seed),
            )
        if (out := overrides.get("out")) is not None:
            cfg = replace(cfg, paths=replace(cfg.paths, out_dir=str(out)))
        if (solver := overrides.get("solver")) is not None:
            try:
                cfg = replace(cfg, rankpool=replace(cfg.rankpool, solver=solver))
            except ValueError as exc:
                raise ConfigError(str(exc))
        if (T := overrides.get("T")) is not None:  # noqa: N806
            try:
                cfg = replace(cfg, dataset=replace(cfg.dataset, T=T))
            except ValueError as exc:
                raise ConfigError(str(exc))
        if (workers := overrides.get("workers")) is not None:
            if workers < 1:
                raise ConfigError(f"workers must be >= 1, got {workers}")
            cfg = replace(cfg, workers=workers)
        return cfg

    def validate(self) -> "PipelineConfig":
        """Check settings that span sections.

        Section ranges are enforced on construction; this adds the checks that
        need more than one section.

        Raises:
            ConfigError: inconsistent configuration
        """
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        try:
            tensor_shapes(self.input_shape)
        except ValueError as exc:
            raise ConfigError(f"preprocess resize does not fit the classifier: {exc}")
        if min(self.dataset.width, self.dataset.height) < 4:
            raise ConfigError(
                f"dataset frames must be at least 4x4, got "
                f"{self.dataset.width}x{self.dataset.height}"
            )
        return self

    @property
    def input_shape(self) -> tuple[int, int, int]:
        """Shape ``(height, width, channels)`` of the classifier input."""
        return (
            self.preprocess.resize_height,
            self.preprocess.resize_width,
            self.dataset.channels,
        )
