# noqa: D100
import pytest

from dynimg.models import CropRect, Label, LabeledClip, Manifest, Split


class TestLabeledClip:
    """Unit tests for LabeledClip."""

    clip = LabeledClip("cow01", 50, 25, Label.ruminating, crop=CropRect(4, 2, 10, 8))

    def test_key_and_group(self):  # noqa: D102
        assert self.clip.key == "cow01_000050_v0"
        assert self.clip.group == ("cow01", 50)
        assert self.clip.frame_range == (50, 25)

    def test_record(self):  # noqa: D102
        record = self.clip.to_record()

        assert record["crop"] == [4, 2, 10, 8]
        assert record["label"] == "Ruminating" and record["split"] == "train"
        assert LabeledClip.from_record(record) == self.clip

    def test_record_defaults(self):  # noqa: D102
        clip = LabeledClip.from_record(
            {"source_id": "a", "start": 0, "T": 4, "label": "Other"}
        )

        assert clip.split is Split.train and clip.variant == 0 and clip.crop is None

    def test_bad_label(self):  # noqa: D102
        with pytest.raises(ValueError):
            LabeledClip.from_record(
                {"source_id": "a", "start": 0, "T": 4, "label": "Eating"}
            )

    def test_label_index(self):  # noqa: D102
        assert Label.ruminating.index == 1 and Label.other.index == 0
        assert Label.from_index(1) is Label.ruminating


class TestManifest:
    """Unit tests for Manifest."""

    entries = [
        LabeledClip("a", 0, 4, Label.ruminating, Split.test),
        LabeledClip("a", 0, 4, Label.ruminating, Split.test, variant=1),
        LabeledClip("b", 4, 4, Label.other),
    ]

    def test_subset_and_counts(self):  # noqa: D102
        manifest = Manifest(T=4, entries=self.entries)

        assert len(manifest.subset(Split.test)) == 2
        assert manifest.label_counts() == {Label.ruminating: 2, Label.other: 1}
        assert manifest.groups() == [("a", 0), ("b", 4)]

    def test_mixed_t(self):  # noqa: D102
        with pytest.raises(ValueError, match="manifest has T=5"):
            Manifest(T=5, entries=self.entries)


class TestCropRect:
    """Unit tests for CropRect."""

    def test_fits(self):  # noqa: D102
        assert CropRect(2, 2, 4, 4).fits(6, 6)
        assert not CropRect(2, 2, 4, 4).fits(5, 6)

    def test_invalid(self):  # noqa: D102
        with pytest.raises(ValueError, match="extents"):
            CropRect(0, 0, 0, 4)
        with pytest.raises(ValueError, match="offsets"):
            CropRect(-1, 0, 2, 2)
