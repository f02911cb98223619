"""Command line front end.

Same conventions as the audit toolkit's CLI: one JSON document on stdout for
results, one JSON line on stderr for errors, exit 0 on success, 2 for usage
problems, 1 for everything else.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import BridgeError
from .export import ExportJob, export_all
from .models import registry_names


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _print_error("usage", message)
        self.print_usage(sys.stderr)
        raise SystemExit(2)


def _print_error(code: str, message: str):
    doc = {"error": {"code": code, "message": message}}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _csv(value: str) -> tuple[str, ...]:
    return tuple(part for part in (p.strip() for p in value.split(",")) if part)


def build_parser() -> _Parser:
    parser = _Parser(prog="dpxlab-bridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="extract tensors from a model into a workspace")
    exp.add_argument(
        "--model",
        required=True,
        help=f"registry name ({', '.join(registry_names())}) or bundle path",
    )
    exp.add_argument("--dataset", required=True, help="directory with inputs.dpxt")
    exp.add_argument("--out", required=True, help="output workspace (bridge only adds files)")
    exp.add_argument("--layers", type=_csv, default=(), help="comma-separated layer names")
    exp.add_argument("--explainers", type=_csv, default=(), help="comma-separated explainer ids")
    exp.add_argument("--batch-size", type=int, default=32)
    exp.add_argument("--model-id", default=None, help="manifest model id (default: model name)")
    exp.add_argument("--epsilon", type=float, default=None, help="privacy budget of the model")
    exp.add_argument("--seed", type=int, default=0, help="seed for sampling explainers")
    exp.add_argument("--sensitivities", action="store_true", help="export per-layer logit gradients")
    exp.add_argument(
        "--sensitivity-reference",
        default=None,
        help="model source whose matching predictions select the sensitivity inputs",
    )
    return parser


def cmd_export(args: argparse.Namespace) -> int:
    job = ExportJob(
        model=args.model,
        dataset_dir=args.dataset,
        out_dir=args.out,
        layers=args.layers,
        explainers=args.explainers,
        batch_size=args.batch_size,
        model_id=args.model_id,
        epsilon=args.epsilon,
        seed=args.seed,
        sensitivities=args.sensitivities,
        sensitivity_reference=args.sensitivity_reference,
    )
    manifest = export_all(job)
    print(
        json.dumps(
            {
                "manifest": manifest.path,
                "entries": len(manifest.entries),
                "warnings": list(manifest.warnings),
            },
            sort_keys=True,
            indent=2,
        )
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return cmd_export(args)
    except BridgeError as exc:
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
