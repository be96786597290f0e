import json
import math

import numpy as np
import pytest

from posecontrast.errors import BadClassIdError, FormatError, InvalidSplitError
from posecontrast.geometry import PoseLabel
from posecontrast.seeding import substream
from posecontrast.synthdata import (
    ELEVATION_LIMIT,
    INPLANE_LIMIT,
    AugmentationConfig,
    Renderer,
    RendererConfig,
    SplitSpec,
    augment_poses,
    batch_augment,
    contrast_views,
    generate_dataset,
    load_dataset,
    render,
    sample_poses,
    validate_split,
)

SMALL_SPLIT = SplitSpec(n_train=80, n_val=40)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(RendererConfig(), SMALL_SPLIT)


class TestSeeding:
    def test_named_streams_differ(self):
        a = substream(0, "a").random(4)
        assert not np.array_equal(a, substream(0, "b").random(4))
        assert not np.array_equal(a, substream(1, "a").random(4))
        np.testing.assert_array_equal(a, substream(0, "a").random(4))

    def test_extra_keys(self):
        assert substream(0, "n", 1).random() != substream(0, "n", 2).random()


class TestRenderer:
    def test_deterministic(self):
        p = PoseLabel(0.3, 0.1, -0.05)
        np.testing.assert_array_equal(render(RendererConfig(), 3, p, 17), render(RendererConfig(), 3, p, 17))

    def test_formula(self):
        cfg = RendererConfig(noise_sigma=0.0)
        r = Renderer(cfg)
        p = PoseLabel(0.3, 0.1, -0.05)
        z, _ = r.nuisance(5)
        phi = r.pose_features(p.as_array()[None])[0]
        want = r.pose_basis[2] @ phi + r.nuisance_basis[2] @ z
        np.testing.assert_allclose(render(r, 2, p, 5), want, rtol=1e-13)

    def test_pose_features_layout(self):
        r = Renderer(RendererConfig(fourier_dim=3))
        phi = r.pose_features(np.zeros((1, 3)))[0]
        assert phi.shape == (15,)
        np.testing.assert_array_equal(phi[:9], np.eye(3).ravel())

    def test_group_members_share_structure(self):
        cfg = RendererConfig(noise_sigma=0.0)
        r = Renderer(cfg)
        same = np.linalg.norm(r.pose_basis[0] - r.pose_basis[4])
        other = np.linalg.norm(r.pose_basis[0] - r.pose_basis[1])
        assert same < 0.3 * other

    def test_bad_class(self):
        with pytest.raises(BadClassIdError):
            render(RendererConfig(), 10, PoseLabel(0, 0, 0), 0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RendererConfig(num_geometry_groups=11)


class TestSplit:
    def test_default_has_no_warnings(self):
        assert validate_split(RendererConfig(), SplitSpec()) == []

    def test_unsupported_unseen_class_warns(self):
        w = validate_split(RendererConfig(), SplitSpec(seen_classes=(0, 1, 2, 4, 5, 6), unseen_classes=(3, 7)))
        assert {x["class_id"] for x in w} == {3, 7}

    @pytest.mark.parametrize("spec", [
        SplitSpec(seen_classes=()),
        SplitSpec(seen_classes=(0, 1), unseen_classes=(1,)),
        SplitSpec(seen_classes=(0, 12)),
        SplitSpec(n_train=-1),
    ])
    def test_invalid(self, spec):
        with pytest.raises(InvalidSplitError):
            validate_split(RendererConfig(), spec)


class TestDataset:
    def test_counts_and_classes(self, small):
        assert len(small.indices("train")) == 80 and len(small.indices("val")) == 40
        assert set(small.class_ids[small.indices("train")]) == set(range(8))
        assert set(small.class_ids[small.indices("val")]) == set(range(10))

    def test_pose_ranges(self):
        a = sample_poses(np.random.default_rng(0), 20000)
        assert a[:, 1].min() >= -ELEVATION_LIMIT and a[:, 1].max() <= ELEVATION_LIMIT
        assert np.abs(a[:, 2]).max() <= INPLANE_LIMIT
        assert a[:, 0].min() < -3.1 and a[:, 0].max() > 3.1

    def test_same_seed_same_bytes(self, small):
        assert generate_dataset(RendererConfig(), SMALL_SPLIT).dumps() == small.dumps()
        assert generate_dataset(RendererConfig(master_seed=1), SMALL_SPLIT).dumps() != small.dumps()

    def test_save_load_roundtrip(self, small, tmp_path):
        path = tmp_path / "d.jsonl"
        small.save(path)
        back = load_dataset(path)
        assert back.dumps() == small.dumps()
        np.testing.assert_array_equal(back.angles, small.angles)
        idx = np.arange(len(small))
        np.testing.assert_array_equal(back.features(idx), small.features(idx))

    def test_record_layout(self, small):
        rec = json.loads(small.dumps().splitlines()[1])
        assert set(rec) == {"id", "class_id", "geometry_group", "split", "pose_deg", "nuisance_seed"}

    def test_novel_pool(self):
        ds = generate_dataset(RendererConfig(), SplitSpec(n_train=16, n_val=10, novel_pool_per_class=5))
        assert len(ds.indices("train", [8, 9])) == 10
        assert len(ds.train_indices()) == 16

    def test_bad_file(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text('{"format": "other"}\n')
        with pytest.raises(FormatError):
            load_dataset(p)
        p.write_text("")
        with pytest.raises(FormatError):
            load_dataset(p)


class TestAugmentation:
    def test_forced_flip_and_rotation(self):
        a = np.array([[0.5, 0.2, 0.1]])
        out = augment_poses(a, AugmentationConfig(), np.random.default_rng(0), flip=True, phi=0.2)
        np.testing.assert_allclose(out, [[-0.5, 0.2, 0.1]], atol=1e-15)

    def test_no_augmentation(self):
        a = sample_poses(np.random.default_rng(1), 10)
        cfg = AugmentationConfig(flip_probability=0.0, rotation_range_deg=0.0)
        np.testing.assert_array_equal(augment_poses(a, cfg, np.random.default_rng(0)), a)

    def test_rotation_range(self):
        a = np.zeros((2000, 3))
        out = augment_poses(a, AugmentationConfig(flip_probability=0.0), np.random.default_rng(2))
        assert np.abs(out[:, 2]).max() <= math.radians(15)

    def test_flip_rate(self):
        a = np.tile([[0.5, 0.0, 0.0]], (4000, 1))
        out = augment_poses(a, AugmentationConfig(rotation_range_deg=0.0), np.random.default_rng(3))
        np.testing.assert_allclose(np.mean(out[:, 0] < 0), 0.5, atol=0.03)

    def test_batch_rerenders(self, small):
        s = small.take(np.arange(4))
        feats, angles = batch_augment(s, AugmentationConfig(), np.random.default_rng(4), small.renderer,
                                      flip=False, phi=0.0)
        np.testing.assert_array_equal(angles, s.angles)
        np.testing.assert_array_equal(feats, small.features(np.arange(4)))

    def test_views_differ_only_slightly(self, small):
        x = small.features(np.arange(8))
        a, b = contrast_views(x, AugmentationConfig(), np.random.default_rng(5),
                              small.renderer.nuisance_basis[small.class_ids[:8]])
        assert not np.array_equal(a, b)
        assert np.linalg.norm(a - b) < 0.5 * np.linalg.norm(x)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentationConfig(flip_probability=1.5)
