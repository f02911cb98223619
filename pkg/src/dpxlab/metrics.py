"""Stability metrics for attribution maps and label agreement.

Two complementary views of how an explanation changes when the model that
produced it changes (for us: when training is made differentially private):

* ``disagreement_score`` looks only at the sign pattern, the percentage of
  positions where exactly one of the two maps is positive.  It is cheap and
  catches explainers whose evidence flips wholesale.
* ``pis`` (positive-importance similarity) compares the rank ordering on the
  common positive support with Kendall's tau-b (Kendall 1945), so two maps can
  agree on *where* the evidence is and still score low if they order it
  differently.

``evaluate_pair`` / ``evaluate_localization`` combine the two into the
accept/eliminate policy used by the reports: pairs failing the disagreement
threshold carry no rank score, and an explainer with no usable pair at all is
marked eliminated rather than silently scored zero.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UndefinedError


def _pairs_tied(values) -> int:
    return sum(c * (c - 1) // 2 for c in Counter(values).values())


def kendall_tau(a, b) -> float:
    """Kendall's tau-b between two equal-length sequences.

    Tie-corrected: tau_b = (C - D) / sqrt((n0 - t_a) (n0 - t_b)) with n0 the
    number of index pairs and t_a, t_b the pairs tied within each sequence.
    Pair counts are kept as exact integers (Knight's O(n log n) counting), so
    the result is bit-identical to a brute-force enumeration of all pairs.

    Raises UndefinedError for sequences shorter than 2 or with all values
    tied, where the denominator vanishes.
    """
    xs = [float(v) for v in np.asarray(a).ravel()]
    ys = [float(v) for v in np.asarray(b).ravel()]
    if len(xs) != len(ys):
        raise ShapeError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise UndefinedError("kendall_tau needs at least 2 elements")
    if any(not math.isfinite(v) for v in xs) or any(not math.isfinite(v) for v in ys):
        raise UndefinedError("kendall_tau undefined for non-finite values")

    n0 = n * (n - 1) // 2
    t_a = _pairs_tied(xs)
    t_b = _pairs_tied(ys)
    if t_a == n0 or t_b == n0:
        raise UndefinedError("kendall_tau undefined when one sequence is constant")
    t_ab = _pairs_tied(list(zip(xs, ys)))

    # Discordant pairs = inversions of the second sequence once the pairs are
    # sorted lexicographically; within an equal-first run the second key is
    # ascending and contributes none.
    order = sorted(range(n), key=lambda i: (xs[i], ys[i]))
    uniq = {v: r for r, v in enumerate(sorted(set(ys)), start=1)}
    m = len(uniq)
    tree = [0] * (m + 1)

    def _add(i):
        while i <= m:
            tree[i] += 1
            i += i & (-i)

    def _count_le(i):
        s = 0
        while i > 0:
            s += tree[i]
            i -= i & (-i)
        return s

    discordant = 0
    for seen, idx in enumerate(order):
        r = uniq[ys[idx]]
        discordant += seen - _count_le(r)
        _add(r)

    c_minus_d = n0 - t_a - t_b + t_ab - 2 * discordant
    return c_minus_d / math.sqrt((n0 - t_a) * (n0 - t_b))


def disagreement_score(s, s_other) -> float:
    """Percentage of positions whose positivity differs between the two maps.

    Zeros count as non-positive, so a feature dropping from positive evidence
    to exactly zero is a disagreement.
    """
    x = np.asarray(s, dtype=np.float64)
    y = np.asarray(s_other, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise UndefinedError("disagreement_score undefined for empty maps")
    differing = np.logical_xor(x > 0, y > 0)
    return 100.0 * float(np.count_nonzero(differing)) / x.size


def pis(s, s_other) -> float:
    """Rank correlation (tau-b) restricted to the common positive support.

    Raises UndefinedError when fewer than two positions are positive in both
    maps; the caller must surface that, never substitute a zero.
    """
    x = np.asarray(s, dtype=np.float64).ravel()
    y = np.asarray(s_other, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    mask = (x > 0) & (y > 0)
    n_common = int(np.count_nonzero(mask))
    if n_common < 2:
        raise UndefinedError(f"pis undefined: only {n_common} common positive positions")
    return kendall_tau(x[mask], y[mask])


def agreement(labels_a, labels_b) -> float:
    """Fraction of positions with identical predicted labels."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise UndefinedError("agreement undefined for empty label sets")
    return float(np.count_nonzero(a == b)) / a.size


def accuracy_ratio(acc_private: float, acc_nonprivate: float) -> float:
    """Private-over-nonprivate accuracy quotient."""
    if acc_nonprivate == 0:
        raise UndefinedError("accuracy_ratio undefined: non-private accuracy is zero")
    return acc_private / acc_nonprivate


@dataclass(frozen=True)
class MetricConfig:
    """Thresholds for the pair/explainer evaluation policy.

    ds_threshold is a fraction in [0, 1]; a pair passes when its disagreement
    score is at most 100 * ds_threshold percent.  similarity_threshold is the
    average-PIS level an explainer must reach to count as localization-stable.
    Only tau-b tie handling is implemented; the knob exists so stored configs
    say so explicitly.
    """

    ds_threshold: float = 0.15
    similarity_threshold: float = 0.5
    tie_policy: str = "tau_b"

    def __post_init__(self):
        if not 0.0 <= self.ds_threshold <= 1.0:
            raise ConfigError(f"ds_threshold must be in [0, 1], got {self.ds_threshold}")
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ConfigError(f"similarity_threshold must be in [-1, 1], got {self.similarity_threshold}")
        if self.tie_policy != "tau_b":
            raise ConfigError(f"unsupported tie_policy '{self.tie_policy}'")


@dataclass(frozen=True)
class PairEvaluation:
    """Outcome for one (map, counterpart-map) pair."""

    ds: float
    pis: float | None
    n_pos_common: int
    passed_ds: bool


@dataclass(frozen=True)
class LocalizationResult:
    """Aggregate verdict for one explainer over many pairs.

    ``eliminated`` is an outcome, not an error: it means no pair both passed
    the disagreement threshold and had a defined rank score, so the explainer
    produced nothing the policy can certify.
    """

    pis_avg: float | None
    ds_pass_fraction: float
    eliminated: bool
    la_satisfied: bool
    n_pairs: int
    n_scored: int


def evaluate_pair(s, s_other, cfg: MetricConfig = MetricConfig()) -> PairEvaluation:
    """Score one pair of attribution maps under the policy in ``cfg``.

    The rank score is computed only for pairs that pass the disagreement
    threshold; an undefined rank score (tiny or constant common support) is
    recorded as None.
    """
    ds_val = disagreement_score(s, s_other)
    passed = ds_val <= 100.0 * cfg.ds_threshold
    x = np.asarray(s, dtype=np.float64).ravel()
    y = np.asarray(s_other, dtype=np.float64).ravel()
    n_common = int(np.count_nonzero((x > 0) & (y > 0)))
    score = None
    if passed and n_common >= 2:
        try:
            score = pis(s, s_other)
        except UndefinedError:
            score = None
    return PairEvaluation(ds=ds_val, pis=score, n_pos_common=n_common, passed_ds=passed)


def evaluate_localization(
    pairs: Sequence[PairEvaluation], cfg: MetricConfig = MetricConfig()
) -> LocalizationResult:
    """Aggregate pair evaluations into the explainer-level verdict."""
    if not pairs:
        raise UndefinedError("evaluate_localization needs at least one pair")
    ds_pass_fraction = sum(1 for p in pairs if p.passed_ds) / len(pairs)
    scores = [p.pis for p in pairs if p.passed_ds and p.pis is not None]
    if not scores:
        return LocalizationResult(
            pis_avg=None,
            ds_pass_fraction=ds_pass_fraction,
            eliminated=True,
            la_satisfied=False,
            n_pairs=len(pairs),
            n_scored=0,
        )
    pis_avg = float(np.mean(scores))
    return LocalizationResult(
        pis_avg=pis_avg,
        ds_pass_fraction=ds_pass_fraction,
        eliminated=False,
        la_satisfied=pis_avg >= cfg.similarity_threshold,
        n_pairs=len(pairs),
        n_scored=len(scores),
    )
