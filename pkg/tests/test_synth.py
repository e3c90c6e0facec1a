import numpy as np
import pytest
from PIL import Image

from xfr.synth import generate_dataset, identity_summary, render_face, sample_identity


def test_render_range_and_shape():
    rng = np.random.default_rng(0)
    img = render_face(sample_identity(rng), rng, 48)
    assert img.shape == (48, 48) and 0 <= img.min() and img.max() <= 1


def test_same_identity_varies_between_images():
    rng = np.random.default_rng(1)
    p = sample_identity(rng)
    assert not np.array_equal(render_face(p, rng), render_face(p, rng))


def test_dataset_layout_and_determinism(tmp_path):
    a = generate_dataset(tmp_path / "a", n_identities=3, per_identity=2, seed=4)
    b = generate_dataset(tmp_path / "b", n_identities=3, per_identity=2, seed=4)
    files = sorted(p.relative_to(a) for p in a.rglob("*.png"))
    assert [str(f) for f in files] == [f"id{i:04d}/{j:03d}.png" for i in range(3) for j in range(2)]
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert Image.open(a / files[0]).size == (64, 64)


def test_summary_matches_generation_order():
    s = identity_summary(4, 3)
    assert len(s) == 3 and s[0] != s[1]
    assert identity_summary(4, 3) == s


def test_rejects_tiny_requests(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(tmp_path, n_identities=1)
