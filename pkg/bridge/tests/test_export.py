"""Export contracts: shapes, manifest schema, skip handling, and the
write-only discipline."""

import json
import os

import numpy as np
import pytest
import torch

from dpxlab_bridge import (
    ConfigError,
    ExportJob,
    StateError,
    export_activations,
    export_all,
    export_attributions,
    export_sensitivities,
    load_model,
    read_tensor,
    save_bundle,
)


def _entry(manifest, logical_name):
    for e in manifest.entries:
        if e["logical_name"] == logical_name:
            return e
    raise AssertionError(f"{logical_name} not in manifest")


def _load(manifest, logical_name):
    entry = _entry(manifest, logical_name)
    return read_tensor(os.path.join(os.path.dirname(manifest.path), entry["file_path"]))


@pytest.fixture(scope="module")
def acts_manifest(vector_dataset, tmp_path_factory):
    job = ExportJob(
        model="tiny_mlp",
        dataset_dir=vector_dataset,
        out_dir=str(tmp_path_factory.mktemp("acts")),
        layers=("fc1", "act1", "fc2"),
        epsilon=1.0,
        batch_size=5,
    )
    return export_activations(job)


@pytest.fixture(scope="module")
def attr_manifest(vector_dataset, tmp_path_factory):
    job = ExportJob(
        model="tiny_mlp",
        dataset_dir=vector_dataset,
        out_dir=str(tmp_path_factory.mktemp("attr")),
        explainers=("saliency", "smoothgrad", "grad_cam"),
        seed=5,
    )
    with pytest.warns(UserWarning, match="grad_cam"):
        return export_attributions(job)


class TestActivations:
    def test_one_tensor_per_layer(self, acts_manifest):
        acts = [e for e in acts_manifest.entries if e["role"] == "activation"]
        assert len(acts) == 3
        assert {e["layer_id"] for e in acts} == {"fc1", "act1", "fc2"}

    def test_flattened_shapes(self, acts_manifest):
        assert _load(acts_manifest, "tiny_mlp.fc1.activations").shape == (12, 8)
        assert _load(acts_manifest, "tiny_mlp.act1.activations").shape == (12, 8)
        assert _load(acts_manifest, "tiny_mlp.fc2.activations").shape == (12, 4)

    def test_predictions_match_manual_forward(self, acts_manifest, vector_dataset):
        # Recompute the argmax with plain numpy from the state dict; the
        # export path with its hooks and batching must agree.
        sd = {k: v.numpy() for k, v in load_model("tiny_mlp").module.state_dict().items()}
        x = read_tensor(os.path.join(vector_dataset, "inputs.dpxt"))
        hidden = np.maximum(x @ sd["fc1.weight"].T + sd["fc1.bias"], 0.0)
        logits = hidden @ sd["fc2.weight"].T + sd["fc2.bias"]
        expected = logits.argmax(axis=1).astype(np.float64)
        assert np.array_equal(_load(acts_manifest, "tiny_mlp.predictions"), expected)

    def test_labels_passed_through(self, acts_manifest, vector_dataset):
        labels = read_tensor(os.path.join(vector_dataset, "labels.dpxt"))
        assert np.array_equal(_load(acts_manifest, "tiny_mlp.labels"), labels)

    def test_epsilon_tag_on_every_entry(self, acts_manifest):
        assert all(e["epsilon"] == 1.0 for e in acts_manifest.entries)

    def test_activation_values_match_hookless_forward(self, acts_manifest, vector_dataset):
        module = load_model("tiny_mlp").module
        x = torch.from_numpy(read_tensor(os.path.join(vector_dataset, "inputs.dpxt")))
        with torch.no_grad():
            fc1 = module.fc1(x)
        assert np.allclose(_load(acts_manifest, "tiny_mlp.fc1.activations"), fc1.numpy())

    def test_unknown_layer_lists_available(self, vector_dataset, tmp_path):
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path),
            layers=("fc1", "bogus"),
        )
        with pytest.raises(ConfigError, match="bogus") as err:
            export_activations(job)
        for name in ("fc1", "act1", "fc2"):
            assert name in str(err.value)


class TestAttributions:
    def test_one_map_per_input_per_compatible_explainer(self, attr_manifest):
        maps = [e for e in attr_manifest.entries if e["role"] == "attribution"]
        assert len(maps) == 24
        by_explainer = {e["explainer_id"] for e in maps}
        assert by_explainer == {"saliency", "smoothgrad"}

    def test_incompatibility_recorded_in_manifest(self, attr_manifest):
        assert attr_manifest.warnings == (
            {
                "explainer_id": "grad_cam",
                "reason": "grad_cam needs a Conv2d layer and this model has none",
            },
        )

    def test_shapes_match_inputs(self, attr_manifest):
        assert _load(attr_manifest, "tiny_mlp.saliency.case0000").shape == (6,)
        assert _load(attr_manifest, "tiny_mlp.smoothgrad.case0011").shape == (6,)

    def test_params_sidecars(self, attr_manifest):
        params_dir = os.path.join(os.path.dirname(attr_manifest.path), "params")
        with open(os.path.join(params_dir, "smoothgrad.json")) as fh:
            doc = json.load(fh)
        assert doc["params"] == {"n_samples": 25, "noise_fraction": 0.1, "seed": 5}
        with open(os.path.join(params_dir, "saliency.json")) as fh:
            assert json.load(fh)["explainer_id"] == "saliency"
        assert not os.path.exists(os.path.join(params_dir, "grad_cam.json"))

    def test_sampling_reruns_reproduce_bytes(self, attr_manifest, vector_dataset, tmp_path):
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path / "again"),
            explainers=("smoothgrad",),
            seed=5,
        )
        again = export_attributions(job)
        for i in range(12):
            name = f"tiny_mlp.smoothgrad.case{i:04d}"
            assert _load(again, name).tobytes() == _load(attr_manifest, name).tobytes()

    def test_unknown_explainer(self, vector_dataset, tmp_path):
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path),
            explainers=("mystery",),
        )
        with pytest.raises(ConfigError, match="mystery"):
            export_attributions(job)

    def test_grad_cam_on_conv_model(self, image_dataset, tmp_path):
        job = ExportJob(
            model="tiny_cnn",
            dataset_dir=image_dataset,
            out_dir=str(tmp_path),
            explainers=("grad_cam",),
        )
        manifest = export_attributions(job)
        assert manifest.warnings == ()
        # CAM lives on the conv layer's spatial grid.
        assert _load(manifest, "tiny_cnn.grad_cam.case0000").shape == (12, 12)
        params_path = os.path.join(str(tmp_path), "params", "grad_cam.json")
        with open(params_path) as fh:
            assert json.load(fh)["params"] == {"cam_layer": "conv1"}


class TestSensitivities:
    def test_unrestricted_covers_all_inputs(self, vector_dataset, tmp_path):
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path),
            layers=("act1",),
            sensitivities=True,
        )
        manifest = export_sensitivities(job)
        assert _load(manifest, "tiny_mlp.act1.sensitivities").shape == (12, 8)

    def test_matched_prediction_restriction(self, vector_dataset, tmp_path):
        reference = load_model("tiny_mlp")
        with torch.no_grad():
            reference.module.fc2.bias += torch.tensor([1.0, 0, 0, 0], dtype=torch.float64)
        ref_path = tmp_path / "shifted.pt"
        save_bundle(reference, ref_path)

        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path / "sens"),
            layers=("fc1",),
            sensitivity_reference=str(ref_path),
        )
        manifest = export_sensitivities(job)
        preds = _load(manifest, "tiny_mlp.predictions")
        ref_preds = _load(manifest, "tiny_mlp.reference.predictions")
        matched = int((preds == ref_preds).sum())
        assert 0 < matched < len(preds)
        assert _load(manifest, "tiny_mlp.fc1.sensitivities").shape == (matched, 8)

    def test_sensitivity_rows_equal_single_input_grads(self, vector_dataset, tmp_path):
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path),
            layers=("fc1",),
            sensitivities=True,
            batch_size=4,
        )
        manifest = export_sensitivities(job)
        rows = _load(manifest, "tiny_mlp.fc1.sensitivities")
        preds = _load(manifest, "tiny_mlp.predictions")
        module = load_model("tiny_mlp").module
        x = torch.from_numpy(read_tensor(os.path.join(vector_dataset, "inputs.dpxt")))
        # One input at a time, no hooks: d logit_c / d fc1 = w2[c] * relu'(fc1).
        sd = module.state_dict()
        for i in (0, 5, 11):
            fc1 = (x[i] @ sd["fc1.weight"].T + sd["fc1.bias"]).numpy()
            grad = sd["fc2.weight"].numpy()[int(preds[i])] * (fc1 > 0)
            assert np.allclose(rows[i], grad, atol=1e-12)


class TestDiscipline:
    def test_refuses_to_overwrite(self, vector_dataset, tmp_path):
        target = tmp_path / "tiny_mlp.predictions.dpxt"
        target.write_bytes(b"precious")
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path),
            layers=("fc1",),
        )
        with pytest.raises(StateError, match="refusing to overwrite"):
            export_activations(job)
        assert target.read_bytes() == b"precious"

    def test_nothing_selected(self, vector_dataset, tmp_path):
        job = ExportJob(model="tiny_mlp", dataset_dir=vector_dataset, out_dir=str(tmp_path))
        with pytest.raises(ConfigError, match="nothing to export"):
            export_all(job)

    def test_dataset_shape_mismatch(self, image_dataset, tmp_path):
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=image_dataset,
            out_dir=str(tmp_path),
            layers=("fc1",),
        )
        with pytest.raises(ConfigError, match="does not fit"):
            export_activations(job)

    def test_missing_inputs_file(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=str(empty),
            out_dir=str(tmp_path / "out"),
            layers=("fc1",),
        )
        with pytest.raises(ConfigError, match="inputs.dpxt"):
            export_activations(job)


class TestPrimaryInterop:
    def test_manifest_parses_and_loads_in_primary(self, vector_dataset, tmp_path):
        dpxlab = pytest.importorskip("dpxlab")
        job = ExportJob(
            model="tiny_mlp",
            dataset_dir=vector_dataset,
            out_dir=str(tmp_path),
            layers=("fc1",),
            explainers=("integrated_gradients",),
            epsilon=4.0,
        )
        ours = export_all(job)
        theirs = dpxlab.load_manifest(ours.path)
        assert len(theirs.entries) == len(ours.entries)
        assert theirs.epsilon_of("tiny_mlp") == 4.0
        acts = theirs.load("tiny_mlp.fc1.activations")
        assert acts.shape == (12, 8)
        ig = theirs.load("tiny_mlp.integrated_gradients.case0003")
        assert ig.shape == (6,)
        assert theirs.get("tiny_mlp.integrated_gradients.case0003").explainer_id == (
            "integrated_gradients"
        )
