"""Represents classifier weights, optimizer state and training history."""
from dataclasses import dataclass, field

import numpy as np

from dynimg.models.json import DataClassJSONMixin

CONV1_FILTERS = 8
CONV2_FILTERS = 16
HIDDEN_UNITS = 64
NUM_CLASSES = 2

# Layer stack of the classifier, input to output.
LAYERS = (
    "conv1",
    "relu",
    "maxpool",
    "conv2",
    "relu",
    "maxpool",
    "flatten",
    "dense1",
    "relu",
    "dropout",
    "dense2",
    "softmax",
)

# Weight tensors in declaration (and file) order.
TENSORS = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "dense1_w",
    "dense1_b",
    "dense2_w",
    "dense2_b",
)


def tensor_shapes(input_shape: tuple[int, int, int]) -> dict[str, tuple[int, ...]]:
    """Return the weight shape of every tensor for an ``(H, W, C)`` input.

    Raises:
        ValueError: input too small for two 2x2 poolings
    """
    height, width, channels = input_shape
    pooled_h, pooled_w = height // 4, width // 4
    if pooled_h < 1 or pooled_w < 1 or channels < 1:
        raise ValueError(f"Input shape {input_shape} is too small, need at least 4x4")
    flat = pooled_h * pooled_w * CONV2_FILTERS
    return {
        "conv1_w": (3, 3, channels, CONV1_FILTERS),
        "conv1_b": (CONV1_FILTERS,),
        "conv2_w": (3, 3, CONV1_FILTERS, CONV2_FILTERS),
        "conv2_b": (CONV2_FILTERS,),
        "dense1_w": (flat, HIDDEN_UNITS),
        "dense1_b": (HIDDEN_UNITS,),
        "dense2_w": (HIDDEN_UNITS, NUM_CLASSES),
        "dense2_b": (NUM_CLASSES,),
    }


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Classifier weights for a fixed input shape.

    Instances are never mutated; an optimizer step returns a new object, so
    a cached forward pass can tell whether it is stale.
    """

    input_shape: tuple[int, int, int]
    weights: dict[str, np.ndarray]
    dropout_p: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        expected = tensor_shapes(self.input_shape)
        for name, shape in expected.items():
            if name not in self.weights:
                raise ValueError(f"Missing weight tensor {name!r}")
            if self.weights[name].shape != shape:
                raise ValueError(
                    f"Tensor {name!r} has shape {self.weights[name].shape}, "
                    f"expected {shape}"
                )
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    def manifest(self) -> list[dict]:
        """Return the layer manifest written in weight file headers."""
        return [
            {"name": name, "shape": list(self.weights[name].shape)} for name in TENSORS
        ]


@dataclass
class AdamState:
    """First and second moment estimates plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        """Return zero moments shaped like ``params``."""
        return cls(
            m={name: np.zeros_like(w) for name, w in params.weights.items()},
            v={name: np.zeros_like(w) for name, w in params.weights.items()},
        )


@dataclass
class EpochRecord(DataClassJSONMixin):
    """Metrics of one training epoch."""

    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class TrainTrace(DataClassJSONMixin):
    """Per-epoch history of a training run."""

    epochs: list[EpochRecord] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0

    @property
    def best(self) -> EpochRecord:
        """Record of the best validation epoch."""
        return self.epochs[self.best_epoch]


@dataclass(frozen=True, eq=False)
class ImageSet:
    """Classifier inputs ``(N, H, W, C)`` with integer class labels ``(N,)``.

    Label 1 is the positive class (Ruminating).
    """

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError(
                f"labels {labels.shape} do not match {images.shape[0]} images"
            )
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        """Shape ``(H, W, C)`` of one image."""
        return self.images.shape[1:]  # type: ignore[return-value]

    def take(self, indices: np.ndarray) -> "ImageSet":
        """Return the samples at ``indices``."""
        return ImageSet(images=self.images[indices], labels=self.labels[indices])
