"""Operator command line: every subcommand is a thin shell over the library.

Option resolution order is explicit flag, then the matching table in the TOML
config file, then the built-in default.  Relative paths resolve against the
workspace root (--workspace, else $DPXLAB_WORKSPACE, else the current
directory).  All randomness flows from --seed.

Success prints a JSON document on stdout and exits 0.  Failures print
{"error": {"code", "message"}} on stderr: exit 2 for usage problems, exit 1
for everything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError, DpxlabError
from .explainers import compute_attribution
from .ldp import LdpParams, ldp_apply, quantize_heatmap, ssim, to_heatmap
from .metrics import agreement, disagreement_score, pis
from .nn import (
    NetworkSpec,
    TrainConfig,
    load_snapshot,
    make_blobs,
    make_synthetic_images,
    predict_label,
    save_snapshot,
    train,
    train_autoencoder,
)
from .pipeline import CaseStore, Pipeline, PipelineConfig, release_artifact, review_decide
from .report import _cluster_section, _resolve_models, generate_report
from .repsim import cka, dcka, hsic_gamma_test
from .tensorio import load_manifest, read_tensor, write_tensor


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _print_error("usage", message)
        self.print_usage(sys.stderr)
        raise SystemExit(2)


def _print_error(code: str, message: str):
    doc = {"error": {"code": code, "message": message}}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _emit(doc: dict):
    print(json.dumps(doc, sort_keys=True, indent=2))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    _validate_config(doc, path)
    return doc


def _validate_config(doc: dict, path: str):
    grid = doc.get("epsilon_grid")
    if grid is not None:
        if not isinstance(grid, list) or not grid or any(
            not isinstance(v, (int, float)) or v <= 0 for v in grid
        ):
            raise ConfigError(f"{path}: epsilon_grid must be a list of positive numbers")
    ws = doc.get("workspace")
    if ws is not None and not Path(ws).is_dir():
        raise ConfigError(f"{path}: workspace directory does not exist: {ws}")
    for key in ("seed", "threads"):
        if key in doc and not isinstance(doc[key], int):
            raise ConfigError(f"{path}: {key} must be an integer")


def _apply_thread_cap(n: int | None):
    if n is None:
        return
    if n < 1:
        raise ConfigError(f"--threads must be at least 1, got {n}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


class Options:
    """Flag / config-table / default resolution for one subcommand."""

    def __init__(self, args, config: dict, section: tuple[str, ...]):
        self.args = args
        node = config
        for part in section:
            node = node.get(part, {}) if isinstance(node, dict) else {}
        self.table = node if isinstance(node, dict) else {}
        ws = args.workspace or config.get("workspace") or os.environ.get("DPXLAB_WORKSPACE") or "."
        self.workspace = Path(ws)
        seed = args.seed if args.seed is not None else config.get("seed", 0)
        self.seed = int(seed)
        threads = args.threads if args.threads is not None else config.get("threads")
        _apply_thread_cap(threads)

    def get(self, name, default=None, required=False):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.table.get(name, default)
        if value is None and required:
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")
        return value

    def path(self, name, default=None, required=False) -> Path | None:
        value = self.get(name, default=default, required=required)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.workspace / p


def _parse_hidden(text) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in str(text).split(",") if w.strip())
    except ValueError:
        raise ConfigError(f"bad --hidden value {text!r}; expected e.g. 32,16") from None
    if not widths:
        raise ConfigError("--hidden needs at least one width")
    return widths


def _mlp_spec(input_shape, hidden, out_width) -> NetworkSpec:
    layers = []
    width = int(np.prod(input_shape))
    if len(input_shape) > 1:
        layers.append({"kind": "flatten"})
    for h in hidden:
        layers.append({"kind": "dense", "in_features": width, "out_features": h})
        layers.append({"kind": "relu"})
        width = h
    layers.append({"kind": "dense", "in_features": width, "out_features": out_width})
    return NetworkSpec(input_shape=input_shape, layers=tuple(layers), output_classes=out_width)


def _training_data(o: Options):
    features = o.path("features")
    if features is not None:
        x = read_tensor(features)
        labels_path = o.path("labels")
        y = None if labels_path is None else read_tensor(labels_path).astype(int).ravel()
        return x, y
    n = int(o.get("n", 600))
    n_classes = int(o.get("n_classes", 3))
    if o.get("synthetic", "blobs") == "images":
        x, y = make_synthetic_images(n, size=int(o.get("size", 12)),
                                     n_classes=n_classes, seed=o.seed)
    else:
        x, y = make_blobs(n, n_features=int(o.get("n_features", 24)),
                          n_classes=n_classes, seed=o.seed,
                          spread=float(o.get("spread", 1.0)))
    return x, y


def cmd_train(o: Options) -> int:
    x, y = _training_data(o)
    mode = o.get("mode", "non_private")
    cfg = TrainConfig(
        epochs=int(o.get("epochs", 10)),
        batch_size=int(o.get("batch_size", 128)),
        lr=float(o.get("lr", 0.001)),
        seed=o.seed,
        mode=mode,
        epsilon=o.get("epsilon") and float(o.get("epsilon")),
        delta=float(o.get("delta", 1e-3)),
        clip_norm=float(o.get("clip_norm", 1.0)),
    )
    hidden = _parse_hidden(o.get("hidden", "32,16"))
    objective = o.get("objective", "classify")
    if objective == "reconstruct":
        spec = _mlp_spec(x.shape[1:], hidden, int(np.prod(x.shape[1:])))
        snapshot = train_autoencoder(x, spec, cfg)
    elif objective == "classify":
        if y is None:
            raise ConfigError("classification training needs --labels")
        spec = _mlp_spec(x.shape[1:], hidden, int(y.max()) + 1)
        snapshot = train(x, y, spec, cfg)
    else:
        raise ConfigError(f"unknown objective {objective!r}")
    out = o.path("out", default="model")
    save_snapshot(snapshot, out)
    _emit({"out": str(out), "digest": snapshot.digest(), "provenance": snapshot.provenance})
    return 0


def cmd_explain(o: Options) -> int:
    snapshot = load_snapshot(o.path("model", required=True))
    x = read_tensor(o.path("input", required=True))
    class_index = o.get("class_index")
    if class_index is None:
        class_index = predict_label(snapshot, x)
    attribution = compute_attribution(
        snapshot, x, int(class_index), o.get("explainer", required=True), rng=o.seed
    )
    out = o.path("out", required=True)
    write_tensor(attribution.values, out)
    _emit({
        "out": str(out),
        "explainer_id": attribution.explainer_id,
        "model_id": attribution.model_id,
        "class_index": attribution.class_index,
    })
    return 0


def _pair(o: Options):
    return read_tensor(o.path("a", required=True)), read_tensor(o.path("b", required=True))


def cmd_metrics_ds(o: Options) -> int:
    a, b = _pair(o)
    _emit({"ds": disagreement_score(a, b)})
    return 0


def cmd_metrics_pis(o: Options) -> int:
    a, b = _pair(o)
    _emit({"pis": pis(a, b)})
    return 0


def cmd_metrics_agreement(o: Options) -> int:
    a, b = _pair(o)
    _emit({"agreement": agreement(a.astype(int), b.astype(int))})
    return 0


def cmd_report(o: Options) -> int:
    manifest = load_manifest(o.path("manifest", required=True))
    epsilon = o.get("ldp_epsilon")
    paths = generate_report(
        manifest,
        o.path("out", required=True),
        n_clusters=o.get("n_clusters") and int(o.get("n_clusters")),
        ldp_params=None if epsilon is None else LdpParams(epsilon=float(epsilon)),
        ldp_seed=o.seed,
    )
    _emit({
        "metrics": str(paths.metrics),
        "metrics_overall": str(paths.metrics_overall),
        "repsim_clusters": paths.repsim_clusters and str(paths.repsim_clusters),
        "ssim_table": paths.ssim_table and str(paths.ssim_table),
    })
    return 0


def cmd_repsim_hsic(o: Options) -> int:
    a, b = _pair(o)
    result = hsic_gamma_test(a, b, kernel=o.get("kernel", "rbf"),
                             alpha=float(o.get("alpha", 0.05)))
    _emit({
        "hsic": result.hsic,
        "p_value": result.p_value,
        "reject_h0": result.reject_h0,
        "kernel": result.kernel,
        "alpha": result.alpha,
        "method": result.method,
    })
    return 0


def cmd_repsim_cka(o: Options) -> int:
    a, b = _pair(o)
    _emit({"cka": cka(a, b, kernel=o.get("kernel", "linear"))})
    return 0


def cmd_repsim_dcka(o: Options) -> int:
    a, b = _pair(o)
    confounder = read_tensor(o.path("confounder", required=True))
    _emit({"dcka": dcka(a, b, confounder, kernel=o.get("kernel", "linear"))})
    return 0


def cmd_repsim_clusters(o: Options) -> int:
    manifest = load_manifest(o.path("manifest", required=True))
    baseline, private = _resolve_models(manifest)
    n_clusters = o.get("n_clusters")
    doc = _cluster_section(manifest, baseline, private,
                           n_clusters and int(n_clusters))
    if doc is None:
        raise ConfigError("manifest has no activation entries to cluster")
    out = o.path("out")
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    _emit(doc)
    return 0


def _ldp_params(o: Options) -> LdpParams:
    return LdpParams(
        epsilon=float(o.get("epsilon", required=True)),
        gray_levels=int(o.get("gray_levels", 256)),
        influenced_pixels=int(o.get("influenced_pixels", 16)),
        cell_size=int(o.get("cell_size", 14)),
        channels=int(o.get("channels", 1)),
    )


def cmd_ldp_apply(o: Options) -> int:
    raw = read_tensor(o.path("input", required=True))
    params = _ldp_params(o)
    quantized = quantize_heatmap(to_heatmap(raw))
    released = ldp_apply(quantized, params, rng=o.seed)
    out = o.path("out", required=True)
    write_tensor(np.asarray(released.values), out)
    _emit({
        "out": str(out),
        "epsilon": params.epsilon,
        "sensitivity": params.sensitivity(),
        "noise_scale": params.noise_scale(),
        "seed": released.seed,
    })
    return 0


def cmd_ldp_ssim(o: Options) -> int:
    a, b = _pair(o)
    _emit({"ssim": ssim(a, b)})
    return 0


def _open_pipeline(o: Options) -> Pipeline:
    classifier = load_snapshot(o.path("classifier", required=True))
    gate = load_snapshot(o.path("gate", required=True))
    store = CaseStore(o.path("store", required=True))
    explainers = o.get("explainers")
    kwargs = {}
    if explainers is not None:
        kwargs["explainer_set"] = tuple(e.strip() for e in str(explainers).split(",") if e.strip())
    config = PipelineConfig(
        ldp_params=_ldp_params(o),
        kappa=float(o.get("kappa", 0.07)),
        k_top=int(o.get("k_top", 2)),
        tau_ssim=float(o.get("tau_ssim", 0.05)),
        **kwargs,
    )
    return Pipeline(classifier, gate, store, config)


def cmd_pipeline_run(o: Options) -> int:
    pipe = _open_pipeline(o)
    x = read_tensor(o.path("input", required=True))
    record = pipe.run_case(x, seed=o.seed)
    _emit(record.to_json())
    return 0


def cmd_pipeline_review(o: Options) -> int:
    store = CaseStore(o.path("store", required=True))
    record = review_decide(store, o.get("case_id", required=True),
                           o.get("decision", required=True))
    _emit(record.to_json())
    return 0


def cmd_pipeline_release(o: Options) -> int:
    store = CaseStore(o.path("store", required=True))
    artifact = release_artifact(store, o.get("case_id", required=True),
                                out_dir=o.path("out"))
    doc = {
        "case_id": artifact.case_id,
        "label": artifact.label,
        "explainers": sorted(artifact.explanations),
    }
    out = o.path("out")
    if out is not None:
        doc["out"] = str(out)
    _emit(doc)
    return 0


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="TOML config file")
    sub.add_argument("--workspace", help="root for relative paths (default $DPXLAB_WORKSPACE)")
    sub.add_argument("--seed", type=int, help="seed for all randomness (default 0)")
    sub.add_argument("--threads", type=int, help="cap numeric worker threads")


def build_parser() -> _Parser:
    parser = _Parser(prog="dpxlab", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    def command(path: str, handler, configure):
        parts = tuple(path.split())
        node = commands
        if len(parts) == 2:
            group = _GROUPS[parts[0]]
            node = group
        sub = node.add_parser(parts[-1])
        _add_common(sub)
        configure(sub)
        sub.set_defaults(handler=handler, section=parts)

    _GROUPS = {}
    for name in ("metrics", "repsim", "ldp", "pipeline"):
        group_parser = commands.add_parser(name)
        _GROUPS[name] = group_parser.add_subparsers(dest="subcommand", required=True)

    command("train", cmd_train, lambda s: [
        s.add_argument("--mode", choices=("non_private", "dp")),
        s.add_argument("--objective", choices=("classify", "reconstruct")),
        s.add_argument("--epsilon", type=float),
        s.add_argument("--delta", type=float),
        s.add_argument("--clip-norm", type=float, dest="clip_norm"),
        s.add_argument("--epochs", type=int),
        s.add_argument("--batch-size", type=int, dest="batch_size"),
        s.add_argument("--lr", type=float),
        s.add_argument("--hidden"),
        s.add_argument("--features"),
        s.add_argument("--labels"),
        s.add_argument("--synthetic", choices=("blobs", "images")),
        s.add_argument("--n", type=int),
        s.add_argument("--size", type=int),
        s.add_argument("--n-features", type=int, dest="n_features"),
        s.add_argument("--n-classes", type=int, dest="n_classes"),
        s.add_argument("--spread", type=float),
        s.add_argument("--out"),
    ])
    command("explain", cmd_explain, lambda s: [
        s.add_argument("--model"),
        s.add_argument("--input"),
        s.add_argument("--explainer"),
        s.add_argument("--class-index", type=int, dest="class_index"),
        s.add_argument("--out"),
    ])
    for sub_name, handler in (("ds", cmd_metrics_ds), ("pis", cmd_metrics_pis),
                              ("agreement", cmd_metrics_agreement)):
        command(f"metrics {sub_name}", handler, lambda s: [
            s.add_argument("--a"), s.add_argument("--b"),
        ])
    command("metrics report", cmd_report, _configure_report)
    command("report", cmd_report, _configure_report)
    for sub_name, handler in (("hsic", cmd_repsim_hsic), ("cka", cmd_repsim_cka)):
        command(f"repsim {sub_name}", handler, lambda s: [
            s.add_argument("--a"), s.add_argument("--b"),
            s.add_argument("--kernel", choices=("linear", "rbf")),
            s.add_argument("--alpha", type=float),
        ])
    command("repsim dcka", cmd_repsim_dcka, lambda s: [
        s.add_argument("--a"), s.add_argument("--b"),
        s.add_argument("--confounder"),
        s.add_argument("--kernel", choices=("linear", "rbf")),
    ])
    command("repsim clusters", cmd_repsim_clusters, lambda s: [
        s.add_argument("--manifest"),
        s.add_argument("--n-clusters", type=int, dest="n_clusters"),
        s.add_argument("--out"),
    ])
    command("ldp apply", cmd_ldp_apply, lambda s: [
        s.add_argument("--input"),
        s.add_argument("--out"),
        _add_ldp_flags(s),
    ])
    command("ldp ssim", cmd_ldp_ssim, lambda s: [
        s.add_argument("--a"), s.add_argument("--b"),
    ])
    command("pipeline run", cmd_pipeline_run, lambda s: [
        s.add_argument("--classifier"),
        s.add_argument("--gate"),
        s.add_argument("--store"),
        s.add_argument("--input"),
        s.add_argument("--kappa", type=float),
        s.add_argument("--k-top", type=int, dest="k_top"),
        s.add_argument("--tau-ssim", type=float, dest="tau_ssim"),
        s.add_argument("--explainers"),
        _add_ldp_flags(s),
    ])
    command("pipeline review", cmd_pipeline_review, lambda s: [
        s.add_argument("--store"),
        s.add_argument("--case-id", dest="case_id"),
        s.add_argument("--decision", choices=("approve", "reject")),
    ])
    command("pipeline release", cmd_pipeline_release, lambda s: [
        s.add_argument("--store"),
        s.add_argument("--case-id", dest="case_id"),
        s.add_argument("--out"),
    ])
    return parser


def _configure_report(s):
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--n-clusters", type=int, dest="n_clusters")
    s.add_argument("--ldp-epsilon", type=float, dest="ldp_epsilon")


def _add_ldp_flags(s):
    s.add_argument("--epsilon", type=float)
    s.add_argument("--gray-levels", type=int, dest="gray_levels")
    s.add_argument("--influenced-pixels", type=int, dest="influenced_pixels")
    s.add_argument("--cell-size", type=int, dest="cell_size")
    s.add_argument("--channels", type=int)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        options = Options(args, config, args.section)
        return args.handler(options)
    except DpxlabError as exc:
        _print_error(exc.code, str(exc))
        return 1
    except FileNotFoundError as exc:
        _print_error("not_found", str(exc))
        return 1
    except Exception as exc:  # pragma: no cover - safety net
        _print_error("internal", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
