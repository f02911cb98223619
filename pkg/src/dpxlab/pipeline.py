"""Gated release pipeline: OOD gate, label-only answers, private explanations.

A query flows through four stations:

1. reconstruction gate: queries the model only if an autoencoder trained on
   the deployment distribution reconstructs the input below a threshold;
2. prediction: the protected classifier answers with a bare class label,
   never scores or probability vectors;
3. explanation: each configured explainer produces an attribution map that is
   quantized and released through the local-DP mechanism, then screened by
   the SSIM elimination test and ranked;
4. review: a human moves the case from PENDING to APPROVED or REJECTED, and
   only APPROVED cases release artifacts.

Every state change is persisted before control returns, with whole-file
atomic rewrites, so a crash at any point leaves a loadable store.  Candidate
tensors are written before the record that references them; an interrupted
case can leave orphan tensor files but never a dangling reference.
"""

from __future__ import annotations

import json
import os
import tempfile
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptError, NotFoundError, StateError
from .explainers import EXPLAINER_IDS, compute_attribution
from .ldp import LdpParams, elimination_test, ldp_apply, quantize_heatmap, ssim, to_heatmap
from .nn import ModelSnapshot, ae_reconstruction_error, predict_label
from .tensorio import read_tensor, write_tensor

STATUSES = ("PENDING", "APPROVED", "REJECTED")


@dataclass(frozen=True)
class PipelineConfig:
    """Serving policy: gate threshold, release budget, survivor count."""

    ldp_params: LdpParams
    kappa: float = 0.07
    k_top: int = 2
    tau_ssim: float = 0.05
    explainer_set: tuple[str, ...] = ("integrated_gradients", "grad_shap")

    def __post_init__(self):
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.k_top < 1:
            raise ConfigError(f"k_top must be at least 1, got {self.k_top}")
        if not self.explainer_set:
            raise ConfigError("explainer_set must not be empty")
        object.__setattr__(self, "explainer_set", tuple(self.explainer_set))
        for name in self.explainer_set:
            if name not in EXPLAINER_IDS:
                raise ConfigError(f"unknown explainer {name!r}")
        if not isinstance(self.ldp_params, LdpParams):
            raise ConfigError("ldp_params must be an LdpParams instance")


@dataclass(frozen=True)
class GateResult:
    passed: bool
    mse: float
    threshold: float


@dataclass(frozen=True)
class Candidate:
    """One explainer's private release attempt for a case."""

    explainer_id: str
    ssim_score: float
    eliminated: bool
    reason: str
    tensor_path: str
    seed: int | None


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    status: str
    label: int | None
    gate: GateResult
    candidates: tuple[Candidate, ...] = ()
    top_k: tuple[str, ...] = ()
    no_releasable: bool = False
    seq: int = 0

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "status": self.status,
            "label": self.label,
            "gate": {
                "passed": self.gate.passed,
                "mse": self.gate.mse,
                "threshold": self.gate.threshold,
            },
            "candidates": [
                {
                    "explainer_id": c.explainer_id,
                    "ssim_score": c.ssim_score,
                    "eliminated": c.eliminated,
                    "reason": c.reason,
                    "tensor_path": c.tensor_path,
                    "seed": c.seed,
                }
                for c in self.candidates
            ],
            "top_k": list(self.top_k),
            "no_releasable": self.no_releasable,
            "seq": self.seq,
        }

    @staticmethod
    def from_json(doc: dict) -> "CaseRecord":
        try:
            gate = GateResult(
                passed=bool(doc["gate"]["passed"]),
                mse=float(doc["gate"]["mse"]),
                threshold=float(doc["gate"]["threshold"]),
            )
            candidates = tuple(
                Candidate(
                    explainer_id=c["explainer_id"],
                    ssim_score=float(c["ssim_score"]),
                    eliminated=bool(c["eliminated"]),
                    reason=c["reason"],
                    tensor_path=c["tensor_path"],
                    seed=c["seed"],
                )
                for c in doc["candidates"]
            )
            record = CaseRecord(
                case_id=doc["case_id"],
                status=doc["status"],
                label=None if doc["label"] is None else int(doc["label"]),
                gate=gate,
                candidates=candidates,
                top_k=tuple(doc["top_k"]),
                no_releasable=bool(doc["no_releasable"]),
                seq=int(doc["seq"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptError(f"malformed case record: {exc}") from exc
        if record.status not in STATUSES:
            raise CorruptError(f"case {record.case_id}: unknown status {record.status!r}")
        return record


class CaseStore:
    """Durable case log: one JSONL file plus a tensor directory per case.

    Writes rewrite the whole log to a temp file, fsync, then rename over the
    old one.  The loader drops a truncated final line (an interrupted write
    from a previous process) but refuses corruption anywhere else.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "tensors").mkdir(exist_ok=True)
        self._records: dict[str, CaseRecord] = {}
        self._load()

    @property
    def log_path(self) -> Path:
        return self.root / "cases.jsonl"

    def _load(self):
        if not self.log_path.exists():
            return
        raw = self.log_path.read_bytes().decode("utf-8")
        lines = raw.split("\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                is_last = all(not later.strip() for later in lines[i + 1 :])
                if is_last:
                    break  # torn final write from a crashed process
                raise CorruptError(f"case log line {i + 1} is not valid JSON")
            record = CaseRecord.from_json(doc)
            self._records[record.case_id] = record

    def _flush(self):
        payload = "".join(
            json.dumps(r.to_json(), sort_keys=True) + "\n"
            for r in sorted(self._records.values(), key=lambda r: r.seq)
        )
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".cases-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.log_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        try:
            dir_fd = os.open(self.root, os.O_RDONLY)
            try:
                os.fsync(dir_fd)
            finally:
                os.close(dir_fd)
        except OSError:
            pass

    def save(self, record: CaseRecord):
        self._records[record.case_id] = record
        self._flush()

    def get(self, case_id: str) -> CaseRecord:
        try:
            return self._records[case_id]
        except KeyError:
            raise NotFoundError(f"no case with id {case_id!r}") from None

    def __contains__(self, case_id: str) -> bool:
        return case_id in self._records

    def records(self) -> list[CaseRecord]:
        return sorted(self._records.values(), key=lambda r: r.seq)

    def next_seq(self) -> int:
        return 1 + max((r.seq for r in self._records.values()), default=0)

    def write_case_tensor(self, case_id: str, name: str, values) -> str:
        rel = Path("tensors") / case_id / f"{name}.dpxt"
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        write_tensor(np.asarray(values, dtype=np.float64), path)
        return str(rel)

    def read_case_tensor(self, rel_path: str) -> np.ndarray:
        return read_tensor(self.root / rel_path)


@dataclass(frozen=True)
class ReleasedArtifact:
    case_id: str
    label: int
    explanations: dict = field(default_factory=dict)


class Pipeline:
    """Runs cases against a protected classifier and tracks their review state."""

    def __init__(
        self,
        classifier: ModelSnapshot,
        gate_model: ModelSnapshot,
        store: CaseStore,
        config: PipelineConfig,
    ):
        self.classifier = classifier
        self.gate_model = gate_model
        self.store = store
        self.config = config
        # label queries answered by the protected model; the gate is not it
        self.model_forward_count = 0

    def run_case(self, x, seed: int | None = None) -> CaseRecord:
        """Process one query end to end and persist the resulting case."""
        x = np.asarray(x, dtype=np.float64)
        case_id = uuid.uuid4().hex
        seq = self.store.next_seq()

        mse = ae_reconstruction_error(self.gate_model, x)
        gate = GateResult(passed=mse < self.config.kappa, mse=mse, threshold=self.config.kappa)
        if not gate.passed:
            record = CaseRecord(case_id=case_id, status="REJECTED", label=None, gate=gate, seq=seq)
            self.store.save(record)
            return record

        label = predict_label(self.classifier, x)
        self.model_forward_count += 1

        candidates = []
        for k, explainer_id in enumerate(self.config.explainer_set):
            draw_seed = None if seed is None else seed + k
            attribution = compute_attribution(
                self.classifier, x, label, explainer_id, rng=draw_seed
            )
            quantized = quantize_heatmap(to_heatmap(attribution.values))
            released = ldp_apply(quantized, self.config.ldp_params, rng=draw_seed)
            released = released.with_ssim(ssim(released.values, quantized))
            verdict = elimination_test(released, tau_ssim=self.config.tau_ssim)
            tensor_path = self.store.write_case_tensor(case_id, explainer_id, released.values)
            candidates.append(
                Candidate(
                    explainer_id=explainer_id,
                    ssim_score=released.ssim_vs_nonprivate,
                    eliminated=not verdict.keep,
                    reason=verdict.reason,
                    tensor_path=tensor_path,
                    seed=released.seed,
                )
            )

        survivors = sorted(
            (c for c in candidates if not c.eliminated),
            key=lambda c: c.ssim_score,
            reverse=True,
        )
        top_k = tuple(c.explainer_id for c in survivors[: self.config.k_top])
        record = CaseRecord(
            case_id=case_id,
            status="PENDING",
            label=label,
            gate=gate,
            candidates=tuple(candidates),
            top_k=top_k,
            no_releasable=not top_k,
            seq=seq,
        )
        self.store.save(record)
        return record

    def review_decide(self, case_id: str, decision: str) -> CaseRecord:
        return review_decide(self.store, case_id, decision)

    def release_artifact(self, case_id: str, out_dir=None) -> ReleasedArtifact:
        return release_artifact(self.store, case_id, out_dir)


def review_decide(store: CaseStore, case_id: str, decision: str) -> CaseRecord:
    """Move a PENDING case to APPROVED or REJECTED; anything else is an error."""
    if decision not in ("approve", "reject"):
        raise ConfigError(f"decision must be 'approve' or 'reject', got {decision!r}")
    record = store.get(case_id)
    if record.status != "PENDING":
        raise StateError(f"case {case_id} is {record.status}, not PENDING")
    record = replace(record, status="APPROVED" if decision == "approve" else "REJECTED")
    store.save(record)
    return record


def release_artifact(store: CaseStore, case_id: str, out_dir=None) -> ReleasedArtifact:
    """Hand out the label and surviving explanations of an APPROVED case."""
    record = store.get(case_id)
    if record.status != "APPROVED":
        raise StateError(f"case {case_id} is {record.status}; only APPROVED cases release")
    by_id = {c.explainer_id: c for c in record.candidates}
    explanations = {
        name: store.read_case_tensor(by_id[name].tensor_path) for name in record.top_k
    }
    artifact = ReleasedArtifact(case_id=case_id, label=record.label, explanations=explanations)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"case_id": case_id, "label": record.label, "explainers": list(record.top_k)}
        (out / "artifact.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        for name, values in explanations.items():
            write_tensor(values, out / f"{name}.dpxt")
    return artifact
