# noqa: D100
from dataclasses import replace

import numpy as np
import orjson
import pytest

from dynimg.dataset import DatasetError, split_manifest, synth_dataset
from dynimg.models import (
    ConfigError,
    DatasetConfig,
    Label,
    LabeledClip,
    Manifest,
    PathsConfig,
    PipelineConfig,
    PreprocessConfig,
    RankPoolConfig,
    Split,
    TrainConfig,
)
from dynimg.pipeline import (
    SKIP_LOG,
    entry_seed,
    fit_manifest,
    image_set,
    load_pooled,
    pool_manifest,
    read_skip_log,
)
from dynimg.preprocess import read_frame


def small_config(out_dir) -> PipelineConfig:
    """Return a config that runs the whole pipeline on 16x16 clips in seconds."""
    return PipelineConfig(
        preprocess=PreprocessConfig(
            resize_width=8, resize_height=8, brightness_noise=False
        ),
        rankpool=RankPoolConfig(max_iters=50),
        dataset=DatasetConfig(
            T=6,
            periodic_sources=6,
            drift_sources=3,
            static_sources=3,
            source_frames=6,
            width=16,
            height=16,
            channels=1,
            test_fraction=0.34,
        ),
        train=TrainConfig(batch_size=4, max_epochs=2),
        paths=PathsConfig(out_dir=str(out_dir)),
    )


def synth(cfg: PipelineConfig) -> Manifest:
    """Render the configured clips and return their manifest."""
    return synth_dataset(cfg.dataset, cfg.paths.frames, cfg.seed)


class TestPoolManifest:
    """Unit tests for pool_manifest and load_pooled."""

    def test_outputs(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        manifest = synth(cfg)

        result = pool_manifest(manifest, cfg)

        assert len(result.written) == 12 and not result.skipped
        assert len(list(cfg.paths.pooled.glob("*.png"))) == 12
        assert len(list(cfg.paths.pooled.glob("*.json"))) == 12
        assert (cfg.paths.pooled / SKIP_LOG).read_bytes() == b""

    def test_sidecar(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        entry = synth(cfg).entries[0]

        pool_manifest(Manifest(T=6, entries=[entry]), cfg)

        meta = orjson.loads((cfg.paths.pooled / f"{entry.key}.json").read_bytes())
        assert meta["key"] == entry.key
        assert meta["T"] == 6 and meta["label"] == "Ruminating"
        assert meta["lambda"] == 1e-3 and meta["solver"] == "exact"
        assert meta["norm_min"] <= meta["norm_max"]
        assert (meta["width"], meta["height"], meta["channels"]) == (8, 8, 1)

    def test_image_range(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        manifest = synth(cfg)
        pool_manifest(manifest, cfg)

        _, pooled = load_pooled(manifest, cfg.paths.pooled, T=6)

        assert len(pooled) == 12
        for pixels in pooled.values():
            assert pixels.shape == (8, 8, 1)
            assert pixels.min() >= 0.0 and pixels.max() <= 1.0

    def test_byte_identical_reruns(self, tmp_path):  # noqa: D102
        first, second = small_config(tmp_path / "a"), small_config(tmp_path / "b")
        for cfg in (first, second):
            pool_manifest(synth(cfg), replace(cfg, workers=2))

        names = sorted(p.name for p in first.paths.pooled.iterdir())
        assert names == sorted(p.name for p in second.paths.pooled.iterdir())
        for name in names:
            assert (first.paths.pooled / name).read_bytes() == (
                second.paths.pooled / name
            ).read_bytes()

    def test_short_source_skipped(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        manifest = synth(cfg)
        late = replace(manifest.entries[0], start=3)
        extended = replace(manifest, entries=(*manifest.entries, late))

        result = pool_manifest(extended, cfg)

        assert [record["key"] for record in result.skipped] == [late.key]
        assert read_skip_log(cfg.paths.pooled) == {late.key}
        kept, pooled = load_pooled(extended, cfg.paths.pooled)
        assert len(kept) == 12 and late.key not in pooled

    def test_missing_frames(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        ghost = LabeledClip("ghost", 0, 6, Label.other)

        with pytest.raises(DatasetError, match="Missing frames"):
            pool_manifest(Manifest(T=6, entries=[ghost]), cfg)

    def test_after_pool_filters(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        after = replace(cfg.preprocess, augment_order="after_pool")
        cfg = replace(cfg, preprocess=after)
        entry = synth(cfg).entries[0]
        negated = replace(entry, variant=1)

        pool_manifest(Manifest(T=6, entries=[entry, negated], multiplier=2), cfg)

        plain = read_frame(cfg.paths.pooled / f"{entry.key}.png").pixels
        flipped = read_frame(cfg.paths.pooled / f"{negated.key}.png").pixels
        assert np.max(np.abs(flipped - (1.0 - plain))) <= 1 / 255 + 1e-9

    def test_t_mismatch(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        manifest = synth(cfg)
        pool_manifest(manifest, cfg)

        with pytest.raises(ConfigError, match="T=6, config has T=8"):
            load_pooled(manifest, cfg.paths.pooled, T=8)

    def test_missing_output(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        manifest = synth(cfg)

        with pytest.raises(DatasetError, match="Missing pooled output"):
            load_pooled(manifest, cfg.paths.pooled)


class TestFitManifest:
    """Unit tests for image_set, fit_manifest and entry_seed."""

    def test_train_on_pooled(self, tmp_path):  # noqa: D102
        cfg = small_config(tmp_path)
        manifest = split_manifest(synth(cfg), cfg.dataset.test_fraction, cfg.seed)
        pool_manifest(manifest, cfg)
        manifest, pooled = load_pooled(manifest, cfg.paths.pooled, T=6)

        params, trace = fit_manifest(manifest.subset(Split.train), pooled, cfg.train)

        assert params.input_shape == (8, 8, 1)
        assert 1 <= len(trace.epochs) <= 2

    def test_image_set_labels(self):  # noqa: D102
        entries = [
            LabeledClip("a", 0, 4, Label.ruminating),
            LabeledClip("b", 0, 4, Label.other),
        ]
        pooled = {entry.key: np.zeros((4, 4, 1)) for entry in entries}

        data = image_set(Manifest(T=4, entries=entries), pooled)

        assert data.labels.tolist() == [1, 0]
        assert data.input_shape == (4, 4, 1)

    def test_image_set_errors(self):  # noqa: D102
        entry = LabeledClip("a", 0, 4, Label.ruminating)

        with pytest.raises(DatasetError, match="No entries"):
            image_set(Manifest(T=4), {})
        with pytest.raises(DatasetError, match="a_000000_v0"):
            image_set(Manifest(T=4, entries=[entry]), {})

    def test_entry_seed(self):  # noqa: D102
        entry = LabeledClip("a", 0, 4, Label.other)

        assert entry_seed(3, entry) == entry_seed(3, entry)
        assert entry_seed(3, entry) != entry_seed(3, replace(entry, variant=1))
