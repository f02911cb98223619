import csv
import json
from pathlib import Path

import numpy as np
import pytest

from dpxlab.errors import ReportInputError
from dpxlab.ldp import LdpParams
from dpxlab.report import METRICS_COLUMNS, generate_report
from dpxlab.tensorio import Manifest, ManifestEntry, write_tensor


class WorkspaceBuilder:
    """Assemble a manifest-backed workspace from in-memory arrays."""

    def __init__(self, root: Path):
        self.root = Path(root)
        (self.root / "tensors").mkdir(parents=True)
        self.entries = []

    def add(self, logical_name, values, role, model_id, **meta):
        rel = Path("tensors") / (logical_name.replace("/", "__") + ".dpxt")
        write_tensor(np.asarray(values, dtype=np.float64), self.root / rel)
        self.entries.append(
            ManifestEntry(
                logical_name=logical_name,
                file_path=str(rel),
                role=role,
                model_id=model_id,
                **meta,
            )
        )
        return self

    def manifest(self):
        return Manifest(entries=list(self.entries), base_dir=str(self.root))


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture()
def identical_pair(tmp_path):
    """Baseline and one private model with identical predictions and maps."""
    rng = np.random.default_rng(0)
    labels = np.array([0, 0, 1, 1, 2, 2])
    maps = np.abs(rng.normal(size=(6, 5))) + 0.1
    ws = WorkspaceBuilder(tmp_path / "ws")
    ws.add("labels", labels, "label", "dataset")
    ws.add("predictions/base", labels, "prediction", "base")
    ws.add("predictions/priv", labels, "prediction", "priv", epsilon=4.0)
    ws.add("attributions/base/saliency", maps, "attribution", "base", explainer_id="saliency")
    ws.add("attributions/priv/saliency", maps, "attribution", "priv",
           explainer_id="saliency", epsilon=4.0)
    return ws


class TestMetricsCsv:
    def test_identical_pair_scores_perfectly(self, identical_pair, tmp_path):
        paths = generate_report(identical_pair.manifest(), tmp_path / "out")
        rows = read_rows(paths.metrics)
        assert len(rows) == 3  # one model, one explainer, three classes
        for row in rows:
            assert row["pis_avg"] == "1.0"
            assert row["ds_pass_fraction"] == "1.0"
            assert row["agreement"] == "1.0"
            assert row["acc_ratio"] == "1.0"
            assert row["eliminated"] == "false"
            assert row["la_satisfied"] == "true"
        overall = read_rows(paths.metrics_overall)
        assert len(overall) == 1
        assert overall[0]["class_label"] == "all"
        assert overall[0]["pis_avg"] == "1.0"

    def test_cardinality_six_epsilons_gives_18_rows(self, tmp_path):
        rng = np.random.default_rng(1)
        labels = np.array([0, 1, 2] * 4)
        maps = rng.normal(size=(12, 6))
        ws = WorkspaceBuilder(tmp_path / "ws")
        ws.add("labels", labels, "label", "dataset")
        ws.add("predictions/base", labels, "prediction", "base")
        ws.add("attributions/base/ig", maps, "attribution", "base", explainer_id="ig")
        for eps in (0.4, 0.7, 1.0, 4.0, 7.0, 10.0):
            m = f"dp{eps:g}"
            ws.add(f"predictions/{m}", labels, "prediction", m, epsilon=eps)
            ws.add(f"attributions/{m}/ig", maps + rng.normal(0, 0.01, maps.shape),
                   "attribution", m, explainer_id="ig", epsilon=eps)
        paths = generate_report(ws.manifest(), tmp_path / "out")
        rows = read_rows(paths.metrics)
        assert len(rows) == 18
        assert len(read_rows(paths.metrics_overall)) == 6
        # ordering: ascending epsilon, then class
        eps_order = [float(r["epsilon"]) for r in rows]
        assert eps_order == sorted(eps_order)
        assert [r["class_label"] for r in rows[:3]] == ["0", "1", "2"]

    def test_columns_match_contract(self, identical_pair, tmp_path):
        paths = generate_report(identical_pair.manifest(), tmp_path / "out")
        with open(paths.metrics) as fh:
            header = fh.readline().strip().split(",")
        assert header == list(METRICS_COLUMNS)
        for required in ("pis_avg", "ds_pass_fraction", "acc_ratio", "agreement"):
            assert required in header

    def test_prediction_mismatch_shrinks_matched_set(self, tmp_path):
        rng = np.random.default_rng(2)
        labels = np.array([0, 0, 1, 1])
        preds_priv = np.array([1, 0, 1, 1])  # first class-0 example disagrees
        maps = np.abs(rng.normal(size=(4, 5))) + 0.1
        ws = WorkspaceBuilder(tmp_path / "ws")
        ws.add("labels", labels, "label", "dataset")
        ws.add("predictions/base", labels, "prediction", "base")
        ws.add("predictions/priv", preds_priv, "prediction", "priv", epsilon=1.0)
        ws.add("attributions/base/sal", maps, "attribution", "base", explainer_id="sal")
        ws.add("attributions/priv/sal", maps, "attribution", "priv",
               explainer_id="sal", epsilon=1.0)
        rows = read_rows(generate_report(ws.manifest(), tmp_path / "out").metrics)
        row0 = next(r for r in rows if r["class_label"] == "0")
        assert row0["n_examples"] == "2"
        assert row0["n_matched"] == "1"
        assert row0["agreement"] == "0.5"
        assert row0["acc_ratio"] == "0.5"
        row1 = next(r for r in rows if r["class_label"] == "1")
        assert row1["n_matched"] == "2"

    def test_sign_flipped_maps_are_eliminated(self, tmp_path):
        rng = np.random.default_rng(3)
        labels = np.array([0, 0, 1, 1])
        maps = rng.normal(size=(4, 8)) + 0.01
        ws = WorkspaceBuilder(tmp_path / "ws")
        ws.add("labels", labels, "label", "dataset")
        ws.add("predictions/base", labels, "prediction", "base")
        ws.add("predictions/priv", labels, "prediction", "priv", epsilon=1.0)
        ws.add("attributions/base/sal", maps, "attribution", "base", explainer_id="sal")
        ws.add("attributions/priv/sal", -maps, "attribution", "priv",
               explainer_id="sal", epsilon=1.0)
        rows = read_rows(generate_report(ws.manifest(), tmp_path / "out").metrics)
        for row in rows:
            assert row["eliminated"] == "true"
            assert row["pis_avg"] == ""
            assert float(row["ds_pass_fraction"]) == 0.0

    def test_zero_baseline_class_accuracy_leaves_ratio_blank(self, tmp_path):
        rng = np.random.default_rng(4)
        labels = np.array([0, 0, 1, 1])
        preds_base = np.array([0, 0, 0, 0])  # never predicts class 1
        maps = np.abs(rng.normal(size=(4, 5))) + 0.1
        ws = WorkspaceBuilder(tmp_path / "ws")
        ws.add("labels", labels, "label", "dataset")
        ws.add("predictions/base", preds_base, "prediction", "base")
        ws.add("predictions/priv", preds_base, "prediction", "priv", epsilon=1.0)
        ws.add("attributions/base/sal", maps, "attribution", "base", explainer_id="sal")
        ws.add("attributions/priv/sal", maps, "attribution", "priv",
               explainer_id="sal", epsilon=1.0)
        rows = read_rows(generate_report(ws.manifest(), tmp_path / "out").metrics)
        row1 = next(r for r in rows if r["class_label"] == "1")
        assert row1["acc_ratio"] == ""
        row0 = next(r for r in rows if r["class_label"] == "0")
        assert row0["acc_ratio"] == "1.0"


class TestMissingInputs:
    def test_empty_manifest_names_whats_needed(self, tmp_path):
        manifest = Manifest(entries=[], base_dir=str(tmp_path))
        with pytest.raises(ReportInputError) as err:
            generate_report(manifest, tmp_path / "out")
        msg = str(err.value)
        assert "label" in msg
        assert "baseline" in msg
        assert "epsilon" in msg

    def test_missing_private_attribution_is_named(self, identical_pair, tmp_path):
        ws = identical_pair
        ws.entries = [e for e in ws.entries
                      if e.logical_name != "attributions/priv/saliency"]
        with pytest.raises(ReportInputError) as err:
            generate_report(ws.manifest(), tmp_path / "out")
        msg = str(err.value)
        assert "attribution" in msg and "'priv'" in msg and "'saliency'" in msg

    def test_missing_prediction_is_named(self, identical_pair, tmp_path):
        ws = identical_pair
        ws.entries = [e for e in ws.entries if e.logical_name != "predictions/priv"]
        with pytest.raises(ReportInputError) as err:
            generate_report(ws.manifest(), tmp_path / "out")
        assert "prediction" in str(err.value) and "'priv'" in str(err.value)

    def test_two_baselines_rejected(self, identical_pair, tmp_path):
        ws = identical_pair
        labels = np.array([0, 0, 1, 1, 2, 2])
        ws.add("predictions/base2", labels, "prediction", "base2")
        with pytest.raises(ReportInputError) as err:
            generate_report(ws.manifest(), tmp_path / "out")
        assert "base2" in str(err.value)

    def test_misaligned_stack_is_named(self, identical_pair, tmp_path):
        ws = identical_pair
        ws.entries = [e for e in ws.entries
                      if e.logical_name != "attributions/priv/saliency"]
        ws.add("attributions/priv/saliency", np.zeros((4, 5)), "attribution",
               "priv", explainer_id="saliency", epsilon=4.0)
        with pytest.raises(ReportInputError) as err:
            generate_report(ws.manifest(), tmp_path / "out")
        assert "attributions/priv/saliency" in str(err.value)


class TestRepsimSection:
    def _with_activations(self, ws, model_id, base_acts, shift=0.0, **meta):
        for layer, acts in base_acts.items():
            ws.add(f"activations/{model_id}/{layer}", acts + shift, "activation",
                   model_id, layer_id=layer, **meta)

    def test_identical_activations_give_unit_medians(self, identical_pair, tmp_path):
        rng = np.random.default_rng(5)
        acts = {f"relu{i}": rng.normal(size=(6, 4)) for i in (1, 3, 5, 7)}
        self._with_activations(identical_pair, "base", acts)
        self._with_activations(identical_pair, "priv", acts, epsilon=4.0)
        paths = generate_report(identical_pair.manifest(), tmp_path / "out", n_clusters=2)
        doc = json.loads(paths.repsim_clusters.read_text())
        assert doc["baseline"] == "base"
        entry = doc["models"]["priv"]
        assert entry["epsilon"] == 4.0
        assert entry["n_layers"] == 4
        assert entry["layer_ids"] == ["relu1", "relu3", "relu5", "relu7"]
        assert entry["cluster_medians"] == pytest.approx([1.0, 1.0], abs=1e-9)

    def test_section_absent_without_activations(self, identical_pair, tmp_path):
        paths = generate_report(identical_pair.manifest(), tmp_path / "out")
        assert paths.repsim_clusters is None

    def test_model_without_activations_is_omitted(self, identical_pair, tmp_path):
        rng = np.random.default_rng(6)
        acts = {"relu1": rng.normal(size=(6, 4))}
        self._with_activations(identical_pair, "base", acts)
        paths = generate_report(identical_pair.manifest(), tmp_path / "out")
        assert paths.repsim_clusters is None  # no private model has a counterpart


class TestSsimTable:
    def _image_workspace(self, tmp_path, side=12):
        rng = np.random.default_rng(7)
        labels = np.array([0, 0, 1, 1])
        maps = rng.normal(size=(4, side, side))
        ws = WorkspaceBuilder(tmp_path / "ws")
        ws.add("labels", labels, "label", "dataset")
        ws.add("predictions/base", labels, "prediction", "base")
        ws.add("predictions/priv", labels, "prediction", "priv", epsilon=4.0)
        for m, eps in (("base", None), ("priv", 4.0)):
            meta = {} if eps is None else {"epsilon": eps}
            for ex in ("ig", "gs"):
                ws.add(f"attributions/{m}/{ex}", maps, "attribution", m,
                       explainer_id=ex, **meta)
        return ws

    def test_table_shape_is_explainers_by_classes(self, tmp_path):
        ws = self._image_workspace(tmp_path)
        paths = generate_report(ws.manifest(), tmp_path / "out",
                                ldp_params=LdpParams(epsilon=50.0, cell_size=3))
        rows = read_rows(paths.ssim_table)
        assert [r["explainer_id"] for r in rows] == ["gs", "ig"]
        assert set(rows[0]) == {"explainer_id", "class_0", "class_1"}
        for row in rows:
            for col in ("class_0", "class_1"):
                assert -1.0 <= float(row[col]) <= 1.0

    def test_vector_attributions_skip_the_table(self, identical_pair, tmp_path):
        paths = generate_report(identical_pair.manifest(), tmp_path / "out")
        assert paths.ssim_table is None


class TestDeterminism:
    def test_byte_identical_rerun(self, tmp_path):
        rng = np.random.default_rng(8)
        labels = np.array([0, 1, 2] * 3)
        base_maps = rng.normal(size=(9, 12, 12))
        ws = WorkspaceBuilder(tmp_path / "ws")
        ws.add("labels", labels, "label", "dataset")
        ws.add("predictions/base", labels, "prediction", "base")
        ws.add("predictions/priv", labels, "prediction", "priv", epsilon=1.0)
        ws.add("attributions/base/sal", base_maps, "attribution", "base",
               explainer_id="sal")
        ws.add("attributions/priv/sal", base_maps + rng.normal(0, 0.1, base_maps.shape),
               "attribution", "priv", explainer_id="sal", epsilon=1.0)
        acts = rng.normal(size=(9, 5))
        ws.add("activations/base/relu1", acts, "activation", "base", layer_id="relu1")
        ws.add("activations/priv/relu1", acts * 1.1, "activation", "priv",
               layer_id="relu1", epsilon=1.0)
        manifest = ws.manifest()
        first = generate_report(manifest, tmp_path / "out1", ldp_seed=3)
        second = generate_report(manifest, tmp_path / "out2", ldp_seed=3)
        for name in ("metrics", "metrics_overall", "repsim_clusters", "ssim_table"):
            a, b = getattr(first, name), getattr(second, name)
            assert a is not None and b is not None
            assert a.read_bytes() == b.read_bytes()
