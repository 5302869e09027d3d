"""Represents labeled clips and the manifest that lists them."""
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from dynimg.models.frame import CropRect
from dynimg.models.json import DataClassJSONMixin


class Label(str, Enum):
    """Clip classes. ``Ruminating`` is the positive class."""

    ruminating = "Ruminating"
    other = "Other"

    @property
    def index(self) -> int:
        """Classifier output index (1 for the positive class)."""
        return 1 if self is Label.ruminating else 0

    @classmethod
    def from_index(cls, index: int) -> "Label":
        """Inverse of ``index``."""
        return cls.ruminating if index == 1 else cls.other


class Split(str, Enum):
    """Train/test assignment of a manifest entry."""

    train = "train"
    test = "test"


@dataclass(frozen=True)
class LabeledClip(DataClassJSONMixin):
    """One window of ``T`` frames from a source, with its label.

    ``variant`` selects the augmentation filters (0 is the unaugmented clip).
    """

    source_id: str
    start: int
    T: int
    label: Label
    split: Split = Split.train
    crop: CropRect | None = None
    variant: int = 0

    @property
    def frame_range(self) -> tuple[int, int]:
        """Return ``(start, T)``."""
        return self.start, self.T

    @property
    def group(self) -> tuple[str, int]:
        """Identity shared by all augmentation variants of a clip."""
        return self.source_id, self.start

    @property
    def key(self) -> str:
        """File stem used for pooled outputs."""
        return f"{self.source_id}_{self.start:06d}_v{self.variant}"

    def to_record(self) -> dict[str, Any]:
        """Return the manifest line object."""
        record: dict[str, Any] = {
            "source_id": self.source_id,
            "start": self.start,
            "T": self.T,
            "label": self.label.value,
            "split": self.split.value,
            "variant": self.variant,
        }
        if self.crop is not None:
            record["crop"] = self.crop.to_list()
        return record

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "LabeledClip":
        """Parse a manifest line object.

        Raises:
            KeyError: a required key is missing
            ValueError: a value is invalid
        """
        crop = record.get("crop")
        return cls(
            source_id=str(record["source_id"]),
            start=int(record["start"]),
            T=int(record["T"]),
            label=Label(record["label"]),
            split=Split(record.get("split", Split.train.value)),
            crop=CropRect.from_list(crop) if crop is not None else None,
            variant=int(record.get("variant", 0)),
        )


@dataclass(frozen=True)
class Manifest(DataClassJSONMixin):
    """Ordered list of labeled clips sharing one window length ``T``."""

    T: int
    entries: tuple[LabeledClip, ...] = field(default_factory=tuple)
    multiplier: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        for entry in self.entries:
            if entry.T != self.T:
                raise ValueError(
                    f"Entry {entry.key} has T={entry.T}, manifest has T={self.T}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, split: Split) -> "Manifest":
        """Return the entries assigned to ``split``."""
        return replace(self, entries=tuple(e for e in self.entries if e.split == split))

    def label_counts(self) -> Counter:
        """Count entries per label."""
        return Counter(e.label for e in self.entries)

    def groups(self) -> list[tuple[str, int]]:
        """Distinct clip groups in first-seen order."""
        return list(dict.fromkeys(e.group for e in self.entries))
