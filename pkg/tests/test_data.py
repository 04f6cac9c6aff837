import numpy as np
import pytest
import torch

from blacksmith import attacks
from blacksmith.data import (
    CIFAR_PIXELS, DatasetSource, SyntheticParams, gen_synthetic, iter_batches, load_dataset, load_npz,
    num_batches, parse_cifar_records, save_npz,
)
from blacksmith.diagnostics import EvalSettings, evaluate
from blacksmith.errors import ConfigError, FormatError
from blacksmith.model import ViTConfig
from blacksmith.rng import substream
from blacksmith.schedules import cyclic
from blacksmith.training import TrainConfig, train


def cifar_bytes(labels, label_bytes=1, fill=None):
    """Hand-built records; pixel bytes cycle 0..255 unless ``fill`` is given."""
    out = bytearray()
    for i, lab in enumerate(labels):
        out += bytes(lab if isinstance(lab, tuple) else (lab,))
        if fill is None:
            out += bytes((j + i) % 256 for j in range(CIFAR_PIXELS))
        else:
            out += bytes([fill]) * CIFAR_PIXELS
    return bytes(out)


def test_cifar10_records_decode():
    raw = cifar_bytes([3, 9, 0])
    x, y = parse_cifar_records(raw, 1, 10)
    assert y.tolist() == [3, 9, 0]
    assert x.shape == (3, 3, 32, 32)
    # channel-major: red plane first, row-major inside a plane
    assert x[1, 0, 0, 0] == 1 and x[1, 0, 0, 1] == 2 and x[1, 1, 0, 0] == (1024 + 1) % 256


def test_cifar100_keeps_fine_label():
    x, y = parse_cifar_records(cifar_bytes([(4, 87), (19, 2)], label_bytes=2), 2, 100)
    assert y.tolist() == [87, 2]


def test_truncated_file_reports_offset():
    raw = cifar_bytes([1, 2])[:-10]
    with pytest.raises(FormatError) as info:
        parse_cifar_records(raw, 1, 10)
    assert info.value.offset == 3073


def test_bad_label_reports_offset():
    raw = cifar_bytes([1, 2, 12])
    with pytest.raises(FormatError) as info:
        parse_cifar_records(raw, 1, 10)
    assert info.value.offset == 2 * 3073


def test_load_cifar_directory(tmp_path):
    for i in range(1, 6):
        (tmp_path / f"data_batch_{i}.bin").write_bytes(cifar_bytes([i, i + 1], fill=255))
    (tmp_path / "test_batch.bin").write_bytes(cifar_bytes([7], fill=0))
    train_set = load_dataset(DatasetSource("cifar10_bin", str(tmp_path)))
    assert len(train_set) == 10 and train_set.num_classes == 10
    assert train_set.pixels.dtype == torch.float32
    assert torch.all(train_set.pixels == 1.0)
    test_set = load_dataset(DatasetSource("cifar10_bin", str(tmp_path), "test"))
    assert test_set.labels.tolist() == [7] and torch.all(test_set.pixels == 0.0)


def test_load_cifar100_file(tmp_path):
    path = tmp_path / "train.bin"
    path.write_bytes(cifar_bytes([(0, 99), (1, 50)], label_bytes=2))
    ds = load_dataset(DatasetSource("cifar100_bin", str(path)))
    assert ds.labels.tolist() == [99, 50] and ds.num_classes == 100


def test_load_cifar_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_dataset(DatasetSource("cifar10_bin", str(tmp_path)))
    with pytest.raises(ConfigError):
        load_dataset(DatasetSource("cifar10_bin"))
    bad = tmp_path / "x.bin"
    bad.write_bytes(cifar_bytes([1])[:100])
    with pytest.raises(FormatError) as info:
        load_dataset(DatasetSource("cifar10_bin", str(bad)))
    assert info.value.offset == 0 and "x.bin" in str(info.value)


def test_subset_is_seeded(tmp_path):
    path = tmp_path / "data.bin"
    path.write_bytes(cifar_bytes(list(range(10)) * 2))
    a = load_dataset(DatasetSource("cifar10_bin", str(path), subset_fraction=0.25))
    b = load_dataset(DatasetSource("cifar10_bin", str(path), subset_fraction=0.25))
    assert len(a) == 5 and torch.equal(a.labels, b.labels)


def test_source_validation():
    with pytest.raises(ConfigError):
        DatasetSource("imagenet")
    with pytest.raises(ConfigError):
        DatasetSource(subset_fraction=0.0)
    with pytest.raises(ConfigError):
        SyntheticParams(num_classes=1)


def test_synthetic_is_deterministic():
    p = SyntheticParams(num_classes=3, image_size=8, samples=30)
    a, b = gen_synthetic(p), gen_synthetic(p)
    assert torch.equal(a.pixels, b.pixels) and torch.equal(a.labels, b.labels)
    other = gen_synthetic(SyntheticParams(num_classes=3, image_size=8, samples=30, seed=1))
    assert not torch.equal(a.pixels, other.pixels)


def test_synthetic_without_noise_is_class_pattern():
    p = SyntheticParams(num_classes=3, image_size=8, samples=30, noise=0.0, pattern_grid=2)
    ds = gen_synthetic(p)
    for c in range(3):
        members = ds.pixels[ds.labels == c]
        assert len(members) == 10
        assert torch.all(members == members[0])
        # 2x2 grid upsampled to 8x8: constant 4x4 blocks
        block = members[0, :, :4, :4]
        assert torch.all(block == block[:, :1, :1])
    assert ds.pixels.min() >= 0.2 and ds.pixels.max() <= 0.8


def test_synthetic_splits_share_patterns():
    p = SyntheticParams(num_classes=2, image_size=4, samples=10, noise=0.0)
    tr, te = gen_synthetic(p, "train"), gen_synthetic(p, "test")
    for c in range(2):
        assert torch.equal(tr.pixels[tr.labels == c][0], te.pixels[te.labels == c][0])


def test_npz_round_trip(tmp_path):
    ds = gen_synthetic(SyntheticParams(num_classes=3, image_size=4, samples=9))
    save_npz(ds, tmp_path / "d.npz")
    back = load_npz(tmp_path / "d.npz")
    assert torch.equal(back.pixels, ds.pixels) and torch.equal(back.labels, ds.labels)
    assert back.num_classes == 3


def test_iter_batches_covers_dataset_once():
    ds = gen_synthetic(SyntheticParams(num_classes=3, image_size=4, samples=25))
    batches = list(iter_batches(ds, 8, substream(0, 0, "data")))
    assert [len(b) for b in batches] == [8, 8, 8, 1] and num_batches(ds, 8) == 4
    seen = np.sort(np.concatenate([b.pixels[:, 0, 0, 0].numpy() for b in batches]))
    np.testing.assert_array_equal(seen, np.sort(ds.pixels[:, 0, 0, 0].numpy()))


def test_depth_two_model_fits_synthetic_data():
    params = SyntheticParams(num_classes=4, image_size=16, samples=512, noise=0.05)
    cfg = TrainConfig(
        method="fgsm", epochs=12, batch_size=32, seed=0,
        model=ViTConfig(image_size=16, patch_size=4, embed_dim=32, depth=2, num_heads=2, num_classes=4),
        data=DatasetSource(synthetic=params), test_data=DatasetSource(split="test", synthetic=params),
        attack=attacks.fgsm(0.0), lr=cyclic(0.05), eval=EvalSettings(every=0),
    )
    steps = []
    model, _ = train(cfg, on_step=lambda m, r: steps.append(r))
    assert len(steps) <= 200
    assert evaluate(model, gen_synthetic(params, "test")).clean_acc >= 95.0


def test_two_record_file_exact_pixels(tmp_path):
    path = tmp_path / "two.bin"
    raw = cifar_bytes([5, 6])
    path.write_bytes(raw)
    ds = load_dataset(DatasetSource("cifar10_bin", str(path)))
    expected = np.frombuffer(raw, np.uint8).reshape(2, 3073)[:, 1:].reshape(2, 3, 32, 32) / np.float32(255)
    np.testing.assert_array_equal(ds.pixels.numpy(), expected.astype(np.float32))
    assert ds.pixels[0, 0, 0, 0] == 0.0 and ds.pixels[0, 0, 7, 31] == 1.0
