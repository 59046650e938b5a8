"""Ingest and validate study-level contrast data into a network representation.

Input rows carry one pairwise contrast per study on the log scale (log odds
ratio or any other log effect measure), with uncertainty given either as a
standard error or as a confidence/credible interval. Effects are read as
``treat_a`` versus ``treat_b``: a positive value favors ``treat_a`` on a
beneficial outcome. Variances of multi-arm contrasts are expected to be
pre-adjusted upstream; nothing here inflates or deflates them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Union

from scipy.stats import norm

from .errors import DataError

__all__ = [
    "Categorical",
    "Continuous",
    "CovariateSchema",
    "Network",
    "StudyEffect",
    "ValidationReport",
    "complete_intervals",
    "dump_contrast_table",
    "parse_contrast_table",
    "validate_network",
]


@dataclass(frozen=True)
class Continuous:
    """Marker for a numeric covariate."""


@dataclass(frozen=True)
class Categorical:
    """Covariate taking one of a fixed set of string levels."""

    levels: tuple[str, ...]


CovariateKind = Union[Continuous, Categorical]
CovariateSchema = dict[str, CovariateKind]

CovariateValue = Union[float, str, None]


@dataclass(frozen=True)
class StudyEffect:
    """One pairwise contrast from one study, on the log-ratio scale.

    ``effect`` is the estimate for ``treat_a`` relative to ``treat_b``; the
    interval bounds, when present, live on the same scale. At least one of
    ``se`` or the (``ci_lower``, ``ci_upper``) pair must be supplied.
    """

    study_id: str
    treat_a: str
    treat_b: str
    effect: float
    se: float | None = None
    ci_lower: float | None = None
    ci_upper: float | None = None
    ci_level: float = 0.95
    covariates: Mapping[str, CovariateValue] = field(default_factory=dict)

    def __post_init__(self):
        if self.treat_a == self.treat_b:
            raise DataError(
                f"study {self.study_id!r}: contrast compares {self.treat_a!r} with itself"
            )
        if not (0.0 < self.ci_level < 1.0):
            raise DataError(f"ci_level must be in (0, 1), got {self.ci_level}")
        if self.se is not None and self.se < 0:
            raise DataError(f"study {self.study_id!r}: negative standard error {self.se}")
        has_bounds = self.ci_lower is not None and self.ci_upper is not None
        if self.se is None and not has_bounds:
            raise DataError(
                f"study {self.study_id!r}: needs a standard error or both interval bounds"
            )
        if has_bounds and not (self.ci_lower <= self.effect <= self.ci_upper):
            raise DataError(
                f"study {self.study_id!r}: interval ({self.ci_lower}, {self.ci_upper}) "
                f"does not bracket the estimate {self.effect}"
            )

    @property
    def pair(self) -> tuple[str, str]:
        return (self.treat_a, self.treat_b)

    def has_intervals(self) -> bool:
        return self.ci_lower is not None and self.ci_upper is not None


@dataclass(frozen=True)
class Network:
    """All contrasts of a trial network plus the covariate schema.

    ``treatments`` keeps first-appearance order; ``effects`` keeps input row
    order (contrasts of one study are contiguous in well-formed inputs).
    Instances are immutable and safe to share across threads.
    """

    treatments: tuple[str, ...]
    effects: tuple[StudyEffect, ...]
    covariate_schema: CovariateSchema = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.treatments)
        seen_pairs: set[tuple[str, frozenset[str]]] = set()
        for e in self.effects:
            for label in (e.treat_a, e.treat_b):
                if label not in known:
                    raise DataError(f"treatment {label!r} missing from the treatment set")
            key = (e.study_id, frozenset(e.pair))
            if key in seen_pairs:
                raise DataError(
                    f"duplicate contrast for pair {e.pair} in study {e.study_id!r}"
                )
            seen_pairs.add(key)

    def by_study(self) -> dict[str, list[StudyEffect]]:
        """Group effects by study id, preserving row order within each study."""
        grouped: dict[str, list[StudyEffect]] = {}
        for e in self.effects:
            grouped.setdefault(e.study_id, []).append(e)
        return grouped


@dataclass(frozen=True)
class ValidationReport:
    """Reporting-only findings of :func:`validate_network`."""

    isolated_treatments: tuple[str, ...]
    incomplete_studies: tuple[tuple[str, int, int], ...]  # (study, observed, expected)
    covariates_with_missing: tuple[str, ...]

    def is_clean(self) -> bool:
        return not (
            self.isolated_treatments
            or self.incomplete_studies
            or self.covariates_with_missing
        )


_MANDATORY = ("study", "treat1", "treat2", "effect")


def _parse_float(cell: str, what: str, row_num: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row_num}: non-numeric {what} {cell!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row_num}: non-finite {what} {cell!r}")
    return value


def _parse_optional_float(row, column, what, row_num):
    cell = row.get(column)
    if cell is None or cell.strip() == "":
        return None
    return _parse_float(cell.strip(), what, row_num)


def _log_transform(value: float | None, what: str, row_num: int) -> float | None:
    if value is None:
        return None
    if value <= 0:
        raise DataError(f"row {row_num}: ratio-scale {what} must be positive, got {value}")
    return math.log(value)


def _parse_covariate(name, kind, cell, row_num) -> CovariateValue:
    if cell is None or cell.strip() == "":
        return None
    cell = cell.strip()
    if isinstance(kind, Continuous):
        try:
            return float(cell)
        except ValueError:
            raise DataError(
                f"row {row_num}: covariate {name!r} expects a number, got {cell!r}"
            ) from None
    if cell not in kind.levels:
        raise DataError(
            f"row {row_num}: covariate {name!r} has unknown level {cell!r} "
            f"(expected one of {kind.levels})"
        )
    return cell


def _infer_schema(names: list[str], columns: dict[str, list[str]]) -> CovariateSchema:
    # A column is continuous iff every non-empty cell parses as a float.
    schema: CovariateSchema = {}
    for name in names:
        cells = [c.strip() for c in columns[name] if c is not None and c.strip() != ""]
        try:
            for c in cells:
                float(c)
            schema[name] = Continuous()
        except ValueError:
            schema[name] = Categorical(levels=tuple(sorted(set(cells))))
    return schema


def parse_contrast_table(
    source: IO[str] | Iterable[str],
    schema: CovariateSchema | None = None,
    scale: str = "log",
) -> Network:
    """Parse a contrast CSV (UTF-8, comma-delimited, header row) into a Network.

    Required columns: ``study``, ``treat1``, ``treat2``, ``effect``, plus either
    ``se`` or ``lower``/``upper``. An optional ``ci_level`` column overrides the
    0.95 default per row; every remaining column is a covariate. With
    ``scale="ratio"``, ``effect``/``lower``/``upper`` are log-transformed on
    ingest; ``se`` values are always read as log-scale standard errors.

    ``schema=None`` infers covariate kinds: continuous when every non-empty
    cell is numeric, categorical otherwise.
    """
    if scale not in ("log", "ratio"):
        raise DataError(f"scale must be 'log' or 'ratio', got {scale!r}")
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise DataError("empty input: no header row")
    fields = [f.strip() for f in reader.fieldnames]
    missing = [c for c in _MANDATORY if c not in fields]
    if missing:
        raise DataError(f"missing mandatory column(s): {', '.join(missing)}")
    has_se = "se" in fields
    has_bounds = "lower" in fields and "upper" in fields
    if not has_se and not has_bounds:
        raise DataError("need an 'se' column or both 'lower' and 'upper' columns")
    reserved = set(_MANDATORY) | {"se", "lower", "upper", "ci_level"}
    covariate_names = [f for f in fields if f not in reserved]

    rows = [{k.strip(): v for k, v in row.items() if k is not None} for row in reader]

    if schema is None:
        schema = _infer_schema(
            covariate_names, {n: [r.get(n) or "" for r in rows] for n in covariate_names}
        )
    else:
        undeclared = [n for n in covariate_names if n not in schema]
        if undeclared:
            raise DataError(f"covariate column(s) not in schema: {', '.join(undeclared)}")

    treatments: list[str] = []
    seen = set()
    effects = []
    for i, row in enumerate(rows, start=2):  # header is line 1
        study = (row.get("study") or "").strip()
        t1 = (row.get("treat1") or "").strip()
        t2 = (row.get("treat2") or "").strip()
        if not study or not t1 or not t2:
            raise DataError(f"row {i}: study and both treatment labels are required")
        effect_cell = (row.get("effect") or "").strip()
        effect = _parse_float(effect_cell, "effect", i)
        se = _parse_optional_float(row, "se", "standard error", i) if has_se else None
        lower = _parse_optional_float(row, "lower", "lower bound", i) if has_bounds else None
        upper = _parse_optional_float(row, "upper", "upper bound", i) if has_bounds else None
        if scale == "ratio":
            effect = _log_transform(effect, "effect", i)
            lower = _log_transform(lower, "lower bound", i)
            upper = _log_transform(upper, "upper bound", i)
        level_cell = row.get("ci_level")
        ci_level = (
            _parse_float(level_cell.strip(), "ci_level", i)
            if level_cell is not None and level_cell.strip() != ""
            else 0.95
        )
        covariates = {
            name: _parse_covariate(name, schema[name], row.get(name), i)
            for name in covariate_names
        }
        for label in (t1, t2):
            if label not in seen:
                seen.add(label)
                treatments.append(label)
        effects.append(
            StudyEffect(
                study_id=study,
                treat_a=t1,
                treat_b=t2,
                effect=effect,
                se=se,
                ci_lower=lower,
                ci_upper=upper,
                ci_level=ci_level,
                covariates=covariates,
            )
        )
    return Network(
        treatments=tuple(treatments),
        effects=tuple(effects),
        covariate_schema=dict(schema),
    )


def dump_contrast_table(network: Network, stream: IO[str]) -> None:
    """Serialize a Network back to contrast CSV; inverse of the parser."""
    covariate_names = list(network.covariate_schema)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(
        ["study", "treat1", "treat2", "effect", "se", "lower", "upper", "ci_level"]
        + covariate_names
    )
    for e in network.effects:
        row = [
            e.study_id,
            e.treat_a,
            e.treat_b,
            repr(e.effect),
            "" if e.se is None else repr(e.se),
            "" if e.ci_lower is None else repr(e.ci_lower),
            "" if e.ci_upper is None else repr(e.ci_upper),
            repr(e.ci_level),
        ]
        for name in covariate_names:
            value = e.covariates.get(name)
            if value is None:
                row.append("")
            elif isinstance(value, float):
                row.append(repr(value))
            else:
                row.append(value)
        writer.writerow(row)


def complete_intervals(e: StudyEffect) -> StudyEffect:
    """Fill missing interval bounds from the SE, or the SE from the bounds.

    Bounds come from the normal quantile at ``(1 + ci_level) / 2``; existing
    values are never touched, which makes the operation idempotent. Bayesian
    credible intervals are accepted verbatim.
    """
    z = norm.ppf((1.0 + e.ci_level) / 2.0)
    se = e.se
    lower, upper = e.ci_lower, e.ci_upper
    if lower is None or upper is None:
        lower = e.effect - z * e.se
        upper = e.effect + z * e.se
    elif se is None:
        se = (upper - lower) / (2.0 * z)
    if se == e.se and lower == e.ci_lower and upper == e.ci_upper:
        return e
    return StudyEffect(
        study_id=e.study_id,
        treat_a=e.treat_a,
        treat_b=e.treat_b,
        effect=e.effect,
        se=se,
        ci_lower=lower,
        ci_upper=upper,
        ci_level=e.ci_level,
        covariates=e.covariates,
    )


def validate_network(network: Network) -> ValidationReport:
    """Report isolated treatments, incomplete multi-arm studies, and missing covariates."""
    used: set[str] = set()
    for e in network.effects:
        used.update(e.pair)
    isolated = tuple(t for t in network.treatments if t not in used)

    incomplete = []
    for study_id, contrasts in network.by_study().items():
        arms: set[str] = set()
        for e in contrasts:
            arms.update(e.pair)
        expected = len(arms) * (len(arms) - 1) // 2
        if len(contrasts) < expected:
            incomplete.append((study_id, len(contrasts), expected))

    missing = []
    for name in network.covariate_schema:
        if any(e.covariates.get(name) is None for e in network.effects):
            missing.append(name)

    return ValidationReport(
        isolated_treatments=isolated,
        incomplete_studies=tuple(incomplete),
        covariates_with_missing=tuple(missing),
    )
