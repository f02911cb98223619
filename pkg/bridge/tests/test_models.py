import torch
import pytest

from dpxlab_bridge import (
    ConfigError,
    available_layers,
    load_model,
    registry_names,
    save_bundle,
)


def _state_equal(a, b):
    sa, sb = a.module.state_dict(), b.module.state_dict()
    return set(sa) == set(sb) and all(torch.equal(sa[k], sb[k]) for k in sa)


def test_registry_names():
    assert registry_names() == ["tiny_cnn", "tiny_mlp", "toy_linear"]


def test_registry_builds_are_deterministic():
    # Global torch RNG state must not leak into registry weights.
    first = load_model("tiny_mlp")
    torch.manual_seed(999)
    torch.rand(100)
    second = load_model("tiny_mlp")
    assert _state_equal(first, second)


def test_models_run_double_without_grad():
    m = load_model("toy_linear")
    assert all(p.dtype == torch.float64 for p in m.module.parameters())
    assert not any(p.requires_grad for p in m.module.parameters())
    out = m.module(torch.zeros((2, *m.input_shape), dtype=torch.float64))
    assert out.shape == (2, 3)


def test_bundle_round_trip(tmp_path):
    original = load_model("tiny_cnn")
    path = tmp_path / "cnn.pt"
    save_bundle(original, path)
    loaded = load_model(str(path))
    assert loaded.name == "tiny_cnn"
    assert loaded.input_shape == (1, 12, 12)
    assert _state_equal(original, loaded)


def test_unknown_source_lists_registry():
    with pytest.raises(ConfigError, match="tiny_mlp"):
        load_model("no_such_model")


def test_bundle_with_unknown_architecture(tmp_path):
    path = tmp_path / "bad.pt"
    torch.save({"registry": "mystery", "state_dict": {}}, path)
    with pytest.raises(ConfigError, match="mystery"):
        load_model(str(path))


def test_bundle_without_keys(tmp_path):
    path = tmp_path / "junk.pt"
    torch.save({"weights": {}}, path)
    with pytest.raises(ConfigError, match="registry"):
        load_model(str(path))


def test_available_layers():
    assert available_layers(load_model("tiny_mlp").module) == ["fc1", "act1", "fc2"]
    assert available_layers(load_model("tiny_cnn").module) == [
        "conv1",
        "act1",
        "pool1",
        "flat",
        "fc1",
    ]
