import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from exforge.data import (Dataset, SyntheticSpec, adapt_shape, generate, glyph_templates,
                          interpolate, skew_classes)
from exforge.exceptions import ConfigurationError, ValidationError

FAMS = [("blobs", 5, 4), ("spirals", 2, 3), ("grid-digits", 36, 10),
        ("uniform-noise", 7, 2), ("standard-normal-noise", 7, 2)]


@pytest.mark.parametrize("family,d,k", FAMS)
def test_inputs_in_box_and_deterministic(family, d, k):
    spec = SyntheticSpec(family, 301, d, k, 0.3, 4)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    assert a.inputs.shape == (301, d)
    assert np.abs(a.inputs).max() <= 1.0
    counts = np.bincount(a.labels, minlength=k)
    assert counts.max() - counts.min() <= 1


def test_test_split_differs_but_shares_geometry():
    spec = SyntheticSpec("blobs", 200, 3, 2, 0.0, 1)
    tr, te = generate(spec, "train"), generate(spec, "test")
    assert not np.array_equal(tr.labels, te.labels) or not np.array_equal(tr.inputs, te.inputs)
    # zero noise: each class collapses onto its centre, identical across splits
    for c in range(2):
        assert np.allclose(tr.inputs[tr.labels == c], tr.inputs[tr.labels == c][0])
        assert np.allclose(te.inputs[te.labels == c][0], tr.inputs[tr.labels == c][0])


def test_standard_normal_noise_is_clipped_not_rescaled():
    x = generate(SyntheticSpec("standard-normal-noise", 5000, 4, 2, 0, 0)).inputs
    assert np.mean(np.abs(x) == 1.0) > 0.25


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        generate(SyntheticSpec("spirals", 10, 3, 2))
    with pytest.raises(ConfigurationError):
        generate(SyntheticSpec("grid-digits", 10, 36, 11))
    with pytest.raises(ConfigurationError):
        generate(SyntheticSpec("moons", 10, 2, 2))
    with pytest.raises(ConfigurationError):
        generate(SyntheticSpec("blobs", 10, 2, 2), "valid")


def test_glyphs_are_distinct():
    g = glyph_templates(10)
    assert g.shape == (10, 36) and set(np.unique(g)) == {-1.0, 1.0}
    assert len({tuple(r) for r in g}) == 10


def test_interpolate_examples():
    assert np.array_equal(interpolate([1.0, -1.0], [0.0, 0.0], 0.5), [0.5, -0.5])
    x, y = np.array([[0.2, 0.4]]), np.array([[-0.6, 0.9]])
    assert np.array_equal(interpolate(x, y, 0.0), x)
    assert np.array_equal(interpolate(x, y, 1.0), y)
    with pytest.raises(ValidationError):
        interpolate(x, y, 1.5)
    with pytest.raises(ValidationError):
        interpolate(x, np.zeros((1, 3)), 0.5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-1, 1)),
       arrays(np.float64, 6, elements=st.floats(-1, 1)), st.floats(0, 1))
def test_interpolate_is_symmetric_linear(x, y, lam):
    assert np.allclose(interpolate(x, y, lam) + interpolate(y, x, lam), x + y, atol=1e-12)


def test_skew_classes():
    ds = generate(SyntheticSpec("blobs", 400, 2, 4, 0.1, 0))
    only0 = skew_classes(ds, {0})
    assert len(only0) == 100 and set(only0.labels) == {0} and only0.n_classes == 4
    assert len(skew_classes(ds, range(4))) == 400
    with pytest.raises(ValidationError):
        skew_classes(ds, [])
    with pytest.raises(ValidationError):
        skew_classes(ds, [4])


def test_adapt_shape():
    assert adapt_shape([1.0, 2.0], 5).tolist() == [1, 2, 1, 2, 1]
    assert adapt_shape([1.0, 2.0, 3.0, 4.0], 2).tolist() == [1, 2]
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(adapt_shape(x, 3), x)
    assert adapt_shape(x, 7).shape == (2, 7)


def test_dataset_roundtrip(tmp_path):
    ds = generate(SyntheticSpec("spirals", 50, 2, 3, 0.05, 2))
    ds.save(tmp_path / "d.json")
    back = Dataset.load(tmp_path / "d.json")
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.labels, ds.labels)
    assert back.spec == ds.spec and back.name == ds.name
    import json
    doc = json.loads((tmp_path / "d.json").read_text())
    assert {"name", "d", "K", "split", "inputs", "labels"} <= set(doc)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
