"""Covariate-driven instability detection and recursive partitioning.

A pooled ability fit assumes one hierarchy for all studies. This module
tests that assumption covariate by covariate using score-based fluctuation
statistics: each preference record contributes a score vector (the gradient
of its log-likelihood term at the pooled estimate), and systematic drift of
these scores along a covariate signals that the abilities differ across its
range. Categorical covariates get a chi-square test on per-level score sums;
continuous covariates get a supremum-LM scan over candidate cutpoints with a
permutation p-value. Where instability is found, the records are split at
the cutpoint (or level subset) maximizing the summed log-likelihood of the
two sub-fits, and the procedure recurses.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2

from .davidson import AbilityFit, fit_davidson, win_tie_probabilities
from .errors import DataError, ModelError
from .study_data import Categorical, Continuous, CovariateKind, CovariateSchema
from .tcc import PreferenceRecord, Verdict, aggregate_tournament

__all__ = [
    "PartitionConfig",
    "PartitionNode",
    "Split",
    "best_split",
    "format_tree",
    "grow_tree",
    "score_contributions",
    "stability_test",
    "tree_to_dict",
]


@dataclass(frozen=True)
class PartitionConfig:
    """Knobs for :func:`grow_tree`; ``max_depth=None`` means unbounded."""

    alpha: float = 0.05
    min_node_size: int = 10
    max_depth: int | None = None
    permutations: int = 1000
    seed: int = 0
    trim: float = 0.10  # fraction of records excluded at each end of a cutpoint scan

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.min_node_size < 2:
            raise DataError(f"min_node_size must be at least 2, got {self.min_node_size}")
        if self.permutations < 1:
            raise DataError(f"permutations must be positive, got {self.permutations}")
        if not (0.0 <= self.trim < 0.5):
            raise DataError(f"trim must be in [0, 0.5), got {self.trim}")


@dataclass(frozen=True)
class Split:
    """A realized split: covariate, rule, test result, and the two children."""

    covariate: str
    threshold: float | None  # continuous rule: left gets values <= threshold
    subset: tuple[str, ...] | None  # categorical rule: left gets these levels
    statistic: float
    p_value: float  # Bonferroni-adjusted p-value that triggered the split
    children: tuple["PartitionNode", "PartitionNode"]


@dataclass(frozen=True, eq=False)
class PartitionNode:
    """A node of the partition tree: its records, their fit, and an optional split."""

    records: tuple[PreferenceRecord, ...]
    fit: AbilityFit
    split: Split | None = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def leaves(self) -> list["PartitionNode"]:
        """All leaf nodes, left-to-right."""
        if self.split is None:
            return [self]
        left, right = self.split.children
        return left.leaves() + right.leaves()


def score_contributions(records: Sequence[PreferenceRecord], fit: AbilityFit) -> np.ndarray:
    """Per-record score vectors at the fitted log parameters, one row each.

    Columns follow ``fit.param_names``. At the maximum-likelihood estimate
    the rows of the full record set sum to (numerically) zero, which is what
    makes cumulative sums of them usable as fluctuation processes.
    """
    index = {x: k for k, x in enumerate(fit.treatments)}
    n_t = len(fit.treatments)
    rows = np.zeros((len(records), n_t + 1))
    for r_idx, r in enumerate(records):
        if r.treat_a not in index or r.treat_b not in index:
            raise DataError(
                f"record in study {r.study_id!r} uses a treatment outside the fit"
            )
        i, j = index[r.treat_a], index[r.treat_b]
        p_a, p_b, p_tie = win_tie_probabilities(fit.psi[r.treat_a], fit.psi[r.treat_b], fit.nu)
        row = rows[r_idx]
        row[i] -= p_a + 0.5 * p_tie
        row[j] -= p_b + 0.5 * p_tie
        row[n_t] -= p_tie
        if r.verdict is Verdict.FIRST_WINS:
            row[i] += 1.0
        elif r.verdict is Verdict.SECOND_WINS:
            row[j] += 1.0
        else:
            row[i] += 0.5
            row[j] += 0.5
            row[n_t] += 1.0
    keep = list(range(1, n_t)) + ([] if fit.tie_free else [n_t])
    return rows[:, keep]


def _covariate_values(records: Sequence[PreferenceRecord], covariate: str) -> list:
    values = [r.covariates.get(covariate) for r in records]
    missing = sum(v is None for v in values)
    if missing:
        raise DataError(
            f"covariate {covariate!r} is missing on {missing} record(s); "
            "drop or impute them before testing"
        )
    return values


def _infer_kind(values: Sequence) -> CovariateKind:
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        return Continuous()
    return Categorical(levels=tuple(sorted({str(v) for v in values})))


def stability_test(
    records: Sequence[PreferenceRecord],
    covariate: str,
    fit: AbilityFit,
    kind: CovariateKind | None = None,
    *,
    permutations: int = 1000,
    rng: np.random.Generator | None = None,
    trim: float = 0.10,
    min_records: int = 10,
) -> tuple[float, float]:
    """Score-fluctuation test of ability stability along one covariate.

    Categorical covariates with Q observed levels yield a chi-square
    statistic on the per-level score sums with (number of free parameters)
    x (Q - 1) degrees of freedom. Continuous covariates yield the supremum
    of LM statistics over candidate cutpoints (records sorted by the
    covariate, cut positions trimmed by ``trim`` at both ends), with the
    p-value taken from a seeded permutation distribution: the observed
    statistic is ranked among ``permutations`` reshuffles of the covariate,
    so under the null the p-value is uniform up to 1/(permutations+1)
    resolution.

    Returns ``(statistic, p_value)``.
    """
    records = tuple(records)
    if len(records) < min_records:
        raise DataError(
            f"too few records to test stability: {len(records)} < {min_records}"
        )
    values = _covariate_values(records, covariate)
    if kind is None:
        kind = _infer_kind(values)
    scores = score_contributions(records, fit)
    n, p_dim = scores.shape
    info = scores.T @ scores / n
    info_inv = np.linalg.pinv(info)

    if isinstance(kind, Categorical):
        labels = sorted({str(v) for v in values})
        if len(labels) < 2:
            raise DataError(f"covariate {covariate!r} is constant on these records")
        statistic = 0.0
        for level in labels:
            mask = np.asarray([str(v) == level for v in values])
            level_sum = scores[mask].sum(axis=0)
            statistic += float(level_sum @ info_inv @ level_sum) / int(mask.sum())
        df = p_dim * (len(labels) - 1)
        return statistic, float(chi2.sf(statistic, df))

    numeric = np.asarray(values, dtype=float)
    if np.unique(numeric).size < 2:
        raise DataError(f"covariate {covariate!r} is constant on these records")
    order = np.argsort(numeric, kind="stable")
    ordered_values = numeric[order]
    lo = max(1, math.ceil(trim * n))
    hi = min(n - 1, math.floor((1.0 - trim) * n))
    cut_sizes = np.asarray(
        [j for j in range(lo, hi + 1) if ordered_values[j - 1] < ordered_values[j]],
        dtype=np.intp,
    )
    if cut_sizes.size == 0:
        raise DataError(
            f"covariate {covariate!r} has no admissible cutpoint inside the trim range"
        )
    weights = n / (cut_sizes * (n - cut_sizes))

    def sup_lm(score_rows: np.ndarray) -> np.ndarray:
        # score_rows: (..., n, p); returns the sup-LM along the cut axis.
        sums = np.cumsum(score_rows, axis=-2)[..., cut_sizes - 1, :]
        quad = np.einsum("...cp,pq,...cq->...c", sums, info_inv, sums)
        return np.max(quad * weights, axis=-1)

    statistic = float(sup_lm(scores[order]))
    if rng is None:
        rng = np.random.default_rng(0)
    exceed = 0
    remaining = permutations
    while remaining > 0:
        block = min(remaining, 256)  # bound the (block, n, p) workspace
        shuffles = np.argsort(rng.random((block, n)), axis=1)
        exceed += int(np.sum(sup_lm(scores[shuffles]) >= statistic))
        remaining -= block
    p_value = (1 + exceed) / (permutations + 1)
    return statistic, p_value


def _fit_quietly(records, treatments):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_davidson(aggregate_tournament(records, treatments))


def _partitioned_loglik(left, right, treatments, min_node_size):
    if len(left) < min_node_size or len(right) < min_node_size:
        return None
    try:
        fit_left = _fit_quietly(left, treatments)
        fit_right = _fit_quietly(right, treatments)
    except ModelError:
        return None
    return fit_left.loglik + fit_right.loglik


def best_split(
    records: Sequence[PreferenceRecord],
    covariate: str,
    kind: CovariateKind | None = None,
    treatments: Sequence[str] | None = None,
    *,
    min_node_size: int = 10,
):
    """Best binary split of the records along one covariate.

    Continuous: candidate cutpoints are the midpoints between consecutive
    distinct observed values; categorical: all binary partitions of the
    observed levels. A candidate is admissible when both sides meet
    ``min_node_size`` and fit successfully. The winner maximizes the summed
    maximized log-likelihood of the two sub-fits; exact ties go to the more
    balanced split, then to the smaller cutpoint (or the lexicographically
    smallest level subset).

    Returns ``(rule, partitioned_loglik)`` where ``rule`` is the cutpoint
    (left side: values <= rule) or the tuple of left-side levels.
    """
    records = tuple(records)
    values = _covariate_values(records, covariate)
    if kind is None:
        kind = _infer_kind(values)
    if treatments is None:
        seen: dict[str, None] = {}
        for r in records:
            seen.setdefault(r.treat_a)
            seen.setdefault(r.treat_b)
        treatments = tuple(seen)

    candidates = []
    if isinstance(kind, Continuous):
        numeric = np.asarray(values, dtype=float)
        distinct = np.unique(numeric)
        if distinct.size < 2:
            raise DataError(f"covariate {covariate!r} is constant on these records")
        for cut in (distinct[:-1] + distinct[1:]) / 2.0:
            left = tuple(r for r, v in zip(records, numeric) if v <= cut)
            right = tuple(r for r, v in zip(records, numeric) if v > cut)
            loglik = _partitioned_loglik(left, right, treatments, min_node_size)
            if loglik is not None:
                imbalance = abs(len(left) - len(right))
                candidates.append(((-loglik, imbalance, cut), float(cut), loglik))
    else:
        labels = sorted({str(v) for v in values})
        if len(labels) < 2:
            raise DataError(f"covariate {covariate!r} is constant on these records")
        anchor, others = labels[0], labels[1:]
        for mask in range(2 ** len(others)):
            subset = (anchor,) + tuple(
                lvl for bit, lvl in enumerate(others) if mask >> bit & 1
            )
            if len(subset) == len(labels):
                continue
            chosen = frozenset(subset)
            left = tuple(r for r, v in zip(records, values) if str(v) in chosen)
            right = tuple(r for r, v in zip(records, values) if str(v) not in chosen)
            loglik = _partitioned_loglik(left, right, treatments, min_node_size)
            if loglik is not None:
                imbalance = abs(len(left) - len(right))
                subset_sorted = tuple(sorted(subset))
                candidates.append(((-loglik, imbalance, subset_sorted), subset_sorted, loglik))
    if not candidates:
        raise ModelError(
            f"no admissible split on covariate {covariate!r}: every candidate "
            "leaves a side too small or unfittable"
        )
    _, rule, loglik = min(candidates, key=lambda c: c[0])
    return rule, loglik


def grow_tree(
    records: Iterable[PreferenceRecord],
    covariate_schema: CovariateSchema,
    config: PartitionConfig | None = None,
) -> PartitionNode:
    """Grow a partition tree: fit, test every covariate, split, recurse.

    At each node the stability test runs for every non-constant covariate in
    the schema, p-values are Bonferroni-adjusted across the covariates
    tested, and the node splits on the smallest adjusted p-value below
    ``config.alpha`` via :func:`best_split`. Guards (minimum node size,
    maximum depth, unfittable children) produce a leaf rather than an error.
    Records missing a value for any schema covariate are excluded up front
    with a warning, so the leaves always partition the retained record set.
    Growth is deterministic given the record order and ``config.seed``.
    """
    if config is None:
        config = PartitionConfig()
    records = tuple(records)
    names = list(covariate_schema)
    usable = tuple(
        r for r in records if all(r.covariates.get(n) is not None for n in names)
    )
    if len(usable) < len(records):
        warnings.warn(
            f"excluded {len(records) - len(usable)} record(s) with missing "
            "covariate values from the partition",
            UserWarning,
            stacklevel=2,
        )
    if not usable:
        raise DataError("no records with complete covariate values")
    seen: dict[str, None] = {}
    for r in usable:
        seen.setdefault(r.treat_a)
        seen.setdefault(r.treat_b)
    treatments = tuple(seen)
    return _grow(usable, treatments, covariate_schema, config, path=(), depth=0)


def _grow(records, treatments, schema, config, path, depth):
    fit = fit_davidson(aggregate_tournament(records, treatments))
    node = PartitionNode(records=records, fit=fit, split=None, depth=depth)
    if config.max_depth is not None and depth >= config.max_depth:
        return node
    if len(records) < 2 * config.min_node_size:
        return node

    tests = []
    for cov_index, name in enumerate(schema):
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(*path, cov_index))
        )
        try:
            statistic, p_value = stability_test(
                records,
                name,
                fit,
                schema[name],
                permutations=config.permutations,
                rng=rng,
                trim=config.trim,
                min_records=config.min_node_size,
            )
        except DataError:
            continue  # constant or untestable here; not a candidate at this node
        tests.append((p_value, cov_index, name, statistic))
    if not tests:
        return node

    adjusted = [(min(1.0, p * len(tests)), cov_index, name, stat) for p, cov_index, name, stat in tests]
    p_value, _, name, statistic = min(adjusted, key=lambda t: (t[0], t[1]))
    if p_value >= config.alpha:
        return node

    try:
        rule, _ = best_split(
            records, name, schema[name], treatments, min_node_size=config.min_node_size
        )
    except (DataError, ModelError):
        return node

    if isinstance(rule, tuple):
        chosen = frozenset(rule)
        left = tuple(r for r in records if str(r.covariates[name]) in chosen)
        right = tuple(r for r in records if str(r.covariates[name]) not in chosen)
        threshold, subset = None, rule
    else:
        left = tuple(r for r in records if float(r.covariates[name]) <= rule)
        right = tuple(r for r in records if float(r.covariates[name]) > rule)
        threshold, subset = rule, None

    children = (
        _grow(left, treatments, schema, config, (*path, 0), depth + 1),
        _grow(right, treatments, schema, config, (*path, 1), depth + 1),
    )
    split = Split(
        covariate=name,
        threshold=threshold,
        subset=subset,
        statistic=statistic,
        p_value=p_value,
        children=children,
    )
    return replace(node, split=split)


def tree_to_dict(node: PartitionNode) -> dict:
    """JSON-ready nested representation of a partition tree."""
    fit = node.fit
    out = {
        "n_records": len(node.records),
        "depth": node.depth,
        "nu": fit.nu,
        "loglik": fit.loglik,
        "abilities": {x: fit.pi[x] for x in fit.treatments},
        "split": None,
    }
    if node.split is not None:
        s = node.split
        rule = {"threshold": s.threshold} if s.subset is None else {"subset": list(s.subset)}
        out["split"] = {
            "covariate": s.covariate,
            "kind": "continuous" if s.subset is None else "categorical",
            **rule,
            "statistic": s.statistic,
            "p_value": s.p_value,
            "left": tree_to_dict(s.children[0]),
            "right": tree_to_dict(s.children[1]),
        }
    return out


def _rule_labels(split: Split) -> tuple[str, str]:
    if split.subset is None:
        return (
            f"{split.covariate} <= {split.threshold:.6g}",
            f"{split.covariate} > {split.threshold:.6g}",
        )
    levels = ", ".join(split.subset)
    return f"{split.covariate} in {{{levels}}}", f"{split.covariate} not in {{{levels}}}"


def format_tree(node: PartitionNode) -> str:
    """Indented text rendering of a partition tree; deterministic output."""
    lines: list[str] = []
    _format_node(node, "", "", lines)
    return "\n".join(lines) + "\n"


def _format_node(node: PartitionNode, label: str, indent: str, lines: list[str]) -> None:
    fit = node.fit
    order = sorted(fit.treatments, key=lambda x: (-fit.pi[x], x))
    abilities = ", ".join(f"{x}={fit.pi[x]:.6g}" for x in order)
    lines.append(f"{indent}{label}n={len(node.records)}, nu={fit.nu:.6g}, abilities: {abilities}")
    if node.split is not None:
        s = node.split
        lines.append(
            f"{indent}  split on {s.covariate}: statistic={s.statistic:.6g}, "
            f"adjusted p={s.p_value:.6g}"
        )
        left_label, right_label = _rule_labels(s)
        _format_node(s.children[0], f"[{left_label}] ", indent + "  ", lines)
        _format_node(s.children[1], f"[{right_label}] ", indent + "  ", lines)
