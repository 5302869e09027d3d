"""Represents evaluation outputs."""
from dataclasses import dataclass, field

from dynimg.models.json import DataClassJSONMixin


@dataclass(frozen=True)
class ConfusionMatrix(DataClassJSONMixin):
    """Counts of a binary classification against ground truth."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        """Number of evaluated samples."""
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """Return the matrix with the positive class exchanged."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


@dataclass(frozen=True)
class RocPoint(DataClassJSONMixin):
    """One ROC vertex; ``threshold`` is the lowest score counted positive."""

    threshold: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class ClassMetrics(DataClassJSONMixin):
    """Precision and recall with one class taken as positive."""

    precision: float
    recall: float
    support: int


@dataclass
class EvalReport(DataClassJSONMixin):
    """Metrics of a classifier on one test set.

    Undefined metrics are NaN and serialize as ``null``.
    """

    confusion: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    auc: float
    per_class: dict[str, ClassMetrics] = field(default_factory=dict)
    roc_points: list[RocPoint] = field(default_factory=list)
    positive: str = "Ruminating"


@dataclass(frozen=True)
class FoldResult(DataClassJSONMixin):
    """Held-out metrics of one cross-validation fold."""

    fold: int
    accuracy: float
    auc: float
    n_test: int
    seed: int


@dataclass
class CrossValSummary(DataClassJSONMixin):
    """Per-fold results with their mean and population standard deviation."""

    k: int
    folds: list[FoldResult]
    accuracy_mean: float
    accuracy_std: float
    auc_mean: float
    auc_std: float
    std_kind: str = "population"
