"""Workspace-level evaluation: the comparison tables and cluster summaries.

A workspace manifest describes one evaluation set scored by one non-private
baseline model and any number of private counterparts.  Conventions:

- one ``label`` entry holds the ground-truth classes (axis 0 = example);
- each model has one ``prediction`` entry aligned with the labels;
- each (model, explainer) pair has one ``attribution`` entry whose axis 0 is
  the example axis, aligned with the labels;
- optional ``activation`` entries, one per (model, layer), feed the
  representation-similarity cluster summary;
- the baseline is the unique model without an epsilon; every private model
  carries one.

``generate_report`` turns that into deterministic files: a per-class metrics
CSV, an overall metrics CSV, and, when the inputs for them exist, a cluster-
median JSON and an SSIM table CSV.  Attribution pairs are scored only where
both models predict the same class; proxy quality for mismatched predictions
is not a meaningful question.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ReportInputError, UndefinedError
from .ldp import LdpParams, ldp_apply, quantize_heatmap, ssim, to_heatmap
from .metrics import (
    MetricConfig,
    accuracy_ratio,
    agreement,
    evaluate_localization,
    evaluate_pair,
)
from .repsim import aggregate_layer_similarity, cka
from .tensorio import Manifest

METRICS_COLUMNS = (
    "model_id",
    "epsilon",
    "explainer_id",
    "class_label",
    "n_examples",
    "n_matched",
    "pis_avg",
    "ds_pass_fraction",
    "acc_ratio",
    "agreement",
    "eliminated",
    "la_satisfied",
)


@dataclass(frozen=True)
class ReportPaths:
    metrics: Path
    metrics_overall: Path
    repsim_clusters: Path | None
    ssim_table: Path | None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _layer_depth(layer_id: str) -> int:
    m = re.search(r"(\d+)$", layer_id)
    if m is None:
        raise ReportInputError(f"activation layer_id {layer_id!r} has no depth suffix")
    return int(m.group(1))


def _resolve_models(manifest: Manifest):
    """Baseline and private model ids, with the missing-entry bookkeeping."""
    missing = []
    scored_roles = ("prediction", "attribution", "activation")
    model_ids = sorted(
        {e.model_id for e in manifest.entries if e.role in scored_roles}
    )
    baselines = [m for m in model_ids if manifest.epsilon_of(m) is None]
    private = [m for m in model_ids if manifest.epsilon_of(m) is not None]

    if not manifest.find(role="label"):
        missing.append("a 'label' entry with the ground-truth classes")
    if not baselines:
        missing.append("prediction and attribution entries for one model without epsilon (the baseline)")
    if len(baselines) > 1:
        raise ReportInputError(
            f"exactly one model may lack an epsilon; found {', '.join(baselines)}"
        )
    if not private:
        missing.append("entries for at least one model with an epsilon (a private counterpart)")
    if missing:
        raise ReportInputError("missing manifest entries: " + "; ".join(missing))
    private.sort(key=lambda m: (manifest.epsilon_of(m), m))
    return baselines[0], private


def _require(manifest: Manifest, missing: list[str], role: str, **keys):
    hits = manifest.find(role=role, **keys)
    if len(hits) == 1:
        return hits[0]
    label = role + "".join(f" {k}={v!r}" for k, v in keys.items())
    if not hits:
        missing.append(f"{label} (absent)")
    else:
        missing.append(f"{label} (ambiguous: {len(hits)} entries)")
    return None


def _collect_inputs(manifest: Manifest, baseline: str, private: list[str]):
    missing: list[str] = []
    label_entries = manifest.find(role="label")
    if len(label_entries) != 1:
        raise ReportInputError(
            f"need exactly one label entry, found {len(label_entries)}"
        )
    labels_name = label_entries[0].logical_name
    explainers = sorted(
        {
            e.explainer_id
            for e in manifest.find(role="attribution", model_id=baseline)
            if e.explainer_id is not None
        }
    )
    if not explainers:
        missing.append(f"attribution entries for baseline model {baseline!r}")
    preds = {}
    attrs: dict[tuple[str, str], object] = {}
    for m in [baseline, *private]:
        preds[m] = _require(manifest, missing, "prediction", model_id=m)
        for ex in explainers:
            attrs[m, ex] = _require(
                manifest, missing, "attribution", model_id=m, explainer_id=ex
            )
    if missing:
        raise ReportInputError("missing manifest entries: " + "; ".join(missing))

    labels = np.asarray(manifest.load(labels_name)).astype(int).ravel()
    n = labels.size
    loaded_preds = {}
    for m, entry in preds.items():
        arr = np.asarray(manifest.load(entry.logical_name)).astype(int).ravel()
        if arr.size != n:
            raise ReportInputError(
                f"entry '{entry.logical_name}': {arr.size} predictions for {n} labels"
            )
        loaded_preds[m] = arr
    loaded_attrs = {}
    for (m, ex), entry in attrs.items():
        arr = manifest.load(entry.logical_name)
        if arr.ndim < 2 or arr.shape[0] != n:
            raise ReportInputError(
                f"entry '{entry.logical_name}': expected a stack of {n} maps, got shape {arr.shape}"
            )
        loaded_attrs[m, ex] = arr
    return labels, loaded_preds, loaded_attrs, explainers


def _metric_row(model_id, epsilon, explainer_id, class_label, mask, labels,
                pred_base, pred_priv, maps_base, maps_priv, cfg):
    idx = np.flatnonzero(mask)
    match = idx[pred_base[idx] == pred_priv[idx]]
    row = {
        "model_id": model_id,
        "epsilon": epsilon,
        "explainer_id": explainer_id,
        "class_label": class_label,
        "n_examples": int(idx.size),
        "n_matched": int(match.size),
        "agreement": agreement(pred_base[idx], pred_priv[idx]),
    }
    if class_label == "all":
        acc_base = float(np.mean(pred_base[idx] == labels[idx]))
        acc_priv = float(np.mean(pred_priv[idx] == labels[idx]))
    else:
        acc_base = float(np.mean(pred_base[idx] == class_label))
        acc_priv = float(np.mean(pred_priv[idx] == class_label))
    try:
        row["acc_ratio"] = accuracy_ratio(acc_priv, acc_base)
    except UndefinedError:
        row["acc_ratio"] = None
    if match.size:
        pairs = [evaluate_pair(maps_base[i], maps_priv[i], cfg) for i in match]
        verdict = evaluate_localization(pairs, cfg)
        row["pis_avg"] = verdict.pis_avg
        row["ds_pass_fraction"] = verdict.ds_pass_fraction
        row["eliminated"] = verdict.eliminated
        row["la_satisfied"] = verdict.la_satisfied
    else:
        row["pis_avg"] = None
        row["ds_pass_fraction"] = None
        row["eliminated"] = True
        row["la_satisfied"] = False
    return row


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _cluster_section(manifest, baseline, private, n_clusters):
    base_entries = manifest.find(role="activation", model_id=baseline)
    if not base_entries:
        return None
    base_layers = {e.layer_id: e for e in base_entries}
    doc = {"baseline": baseline, "models": {}}
    for m in private:
        entries = manifest.find(role="activation", model_id=m)
        shared = sorted(
            (l for l in base_layers if l in {e.layer_id for e in entries}),
            key=_layer_depth,
        )
        if not shared:
            continue
        per_layer = []
        for layer in shared:
            a = manifest.load(base_layers[layer].logical_name)
            b = manifest.load(
                next(e for e in entries if e.layer_id == layer).logical_name
            )
            per_layer.append((_layer_depth(layer), cka(a, b)))
        k = n_clusters if n_clusters is not None else min(15, len(per_layer))
        medians = aggregate_layer_similarity(per_layer, k)
        doc["models"][m] = {
            "epsilon": manifest.epsilon_of(m),
            "n_layers": len(per_layer),
            "layer_ids": shared,
            "cluster_medians": [val for _, val in medians],
        }
    if not doc["models"]:
        return None
    return doc


def _ssim_section(labels, attrs, explainers, baseline, ldp_params, ldp_seed):
    stacks = {ex: attrs[baseline, ex] for ex in explainers}
    if any(stack.ndim < 3 for stack in stacks.values()):
        return None  # vector attributions have no image structure to score
    params = ldp_params if ldp_params is not None else LdpParams(epsilon=4.0)
    classes = sorted(int(c) for c in np.unique(labels))
    rows = []
    for k, ex in enumerate(explainers):
        stack = stacks[ex]
        scores = np.empty(stack.shape[0])
        for i in range(stack.shape[0]):
            quantized = quantize_heatmap(to_heatmap(stack[i]))
            released = ldp_apply(
                quantized, params, rng=ldp_seed + k * stack.shape[0] + i
            )
            scores[i] = ssim(released.values, quantized)
        row = {"explainer_id": ex}
        for c in classes:
            row[f"class_{c}"] = float(np.mean(scores[labels == c]))
        rows.append(row)
    columns = ["explainer_id"] + [f"class_{c}" for c in classes]
    return columns, rows


def generate_report(
    manifest: Manifest,
    out_dir,
    cfg: MetricConfig = MetricConfig(),
    n_clusters: int | None = None,
    ldp_params: LdpParams | None = None,
    ldp_seed: int = 0,
) -> ReportPaths:
    """Score every (private model, explainer) pair and write the report files.

    Raises ReportInputError listing exactly which manifest entries are absent
    when the workspace is incomplete.  Output bytes depend only on the inputs
    and the arguments, so re-runs are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline, private = _resolve_models(manifest)
    labels, preds, attrs, explainers = _collect_inputs(manifest, baseline, private)
    classes = sorted(int(c) for c in np.unique(labels))

    per_class = []
    overall = []
    for m in private:
        epsilon = manifest.epsilon_of(m)
        for ex in explainers:
            common = dict(
                model_id=m,
                epsilon=epsilon,
                explainer_id=ex,
                labels=labels,
                pred_base=preds[baseline],
                pred_priv=preds[m],
                maps_base=attrs[baseline, ex],
                maps_priv=attrs[m, ex],
                cfg=cfg,
            )
            for c in classes:
                per_class.append(_metric_row(class_label=c, mask=labels == c, **common))
            overall.append(
                _metric_row(class_label="all", mask=np.ones_like(labels, dtype=bool), **common)
            )

    metrics_path = out / "metrics.csv"
    overall_path = out / "metrics_overall.csv"
    _write_csv(metrics_path, METRICS_COLUMNS, per_class)
    _write_csv(overall_path, METRICS_COLUMNS, overall)

    clusters_path = None
    cluster_doc = _cluster_section(manifest, baseline, private, n_clusters)
    if cluster_doc is not None:
        clusters_path = out / "repsim_clusters.json"
        clusters_path.write_text(json.dumps(cluster_doc, sort_keys=True, indent=2) + "\n")

    ssim_path = None
    ssim_doc = _ssim_section(labels, attrs, explainers, baseline, ldp_params, ldp_seed)
    if ssim_doc is not None:
        columns, rows = ssim_doc
        ssim_path = out / "ssim_table.csv"
        _write_csv(ssim_path, columns, rows)

    return ReportPaths(
        metrics=metrics_path,
        metrics_overall=overall_path,
        repsim_clusters=clusters_path,
        ssim_table=ssim_path,
    )
