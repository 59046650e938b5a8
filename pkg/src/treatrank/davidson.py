"""Tie-extended Bradley-Terry (Davidson) ranking model.

Each treatment carries a positive latent ability psi. For a contest between
X and Y the outcome probabilities are

    Pr(X wins) = psi_X / D,    Pr(tie) = nu * sqrt(psi_X * psi_Y) / D,
    D = psi_X + psi_Y + nu * sqrt(psi_X * psi_Y),

with a single tie-prevalence parameter nu >= 0. The probabilities are
degree-0 homogeneous in the abilities, so only ability ratios are
identifiable; fitting pins the first treatment's log-ability at 0 and works
on theta = (log-abilities of the rest, log nu), where the trinomial
log-likelihood is concave. Estimation runs damped Newton iterations with a
minorization-maximization sweep as fallback for ill-conditioned steps.
Uncertainty comes from the inverse observed information of theta and is
propagated to normalized abilities and ability ratios on the log scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .errors import ConvergenceError, DataError, FordConditionError, OnlyTiesError
from .tcc import Tournament

__all__ = [
    "AVERAGE",
    "AbilityFit",
    "AbilityRatio",
    "DavidsonObjective",
    "NormalizedAbility",
    "ability_ratios",
    "check_ford",
    "fit_davidson",
    "log_likelihood",
    "normalized_abilities",
    "pairwise_probabilities",
    "win_tie_probabilities",
]


class _AverageAbility:
    """Sentinel denominator: a fictional treatment whose ability is the mean ability."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AVERAGE"


AVERAGE = _AverageAbility()


def win_tie_probabilities(psi_x: float, psi_y: float, nu: float) -> tuple[float, float, float]:
    """Win/win/tie probabilities for one contest, on the ability scale.

    Parameters
    ----------
    psi_x, psi_y : positive abilities of the two treatments.
    nu : tie-prevalence parameter, >= 0.

    Returns
    -------
    (p_x_wins, p_y_wins, p_tie), summing to 1.
    """
    if psi_x <= 0 or psi_y <= 0:
        raise DataError(f"abilities must be positive, got ({psi_x}, {psi_y})")
    if nu < 0:
        raise DataError(f"tie prevalence must be non-negative, got {nu}")
    root = math.sqrt(psi_x * psi_y)
    denom = psi_x + psi_y + nu * root
    return psi_x / denom, psi_y / denom, nu * root / denom


def _ability_vector(t: Tournament, psi) -> np.ndarray:
    if isinstance(psi, Mapping):
        missing = [x for x in t.treatments if x not in psi]
        if missing:
            raise DataError(f"abilities missing for treatment(s): {', '.join(missing)}")
        values = np.asarray([float(psi[x]) for x in t.treatments])
    else:
        values = np.asarray([float(v) for v in psi])
        if values.shape != (len(t.treatments),):
            raise DataError(
                f"ability vector has length {values.size}, expected {len(t.treatments)}"
            )
    if np.any(values <= 0):
        raise DataError("abilities must be positive componentwise")
    return values


def log_likelihood(t: Tournament, psi, nu: float) -> float:
    """Trinomial log-likelihood of a tournament at the given abilities.

    Every unordered pair contributes its full win/win/tie trinomial; pairs
    without records contribute 0. Zero-probability outcomes with a positive
    count yield -inf.
    """
    values = _ability_vector(t, psi)
    if nu < 0:
        raise DataError(f"tie prevalence must be non-negative, got {nu}")
    index = {x: k for k, x in enumerate(t.treatments)}
    total = 0.0
    for (x, y), c in t.counts.items():
        p_x, p_y, p_tie = win_tie_probabilities(values[index[x]], values[index[y]], nu)
        for count, p in ((c.wins_first, p_x), (c.wins_second, p_y), (c.ties, p_tie)):
            if count:
                total += count * (math.log(p) if p > 0 else -math.inf)
    return total


def check_ford(t: Tournament) -> tuple[tuple[str, ...], tuple[str, ...]] | None:
    """Regularity check guaranteeing a finite, unique ability MLE.

    Builds the directed preference graph — an edge X -> Y when X beat Y at
    least once, and edges both ways when they tied — and requires strong
    connectivity: every bipartition (S, S-complement) must have some
    treatment outside S beating or tying some treatment in S. A tie counts
    in both directions because tied contests shrink in probability as the
    two abilities drift apart, anchoring the likelihood just as a win does.

    Returns None on pass, else one violating bipartition as
    ``(subset, complement)``: no treatment in ``complement`` ever beats or
    ties a treatment in ``subset``.
    """
    labels = t.treatments
    n = len(labels)
    index = {x: k for k, x in enumerate(labels)}
    forward: list[list[int]] = [[] for _ in range(n)]
    backward: list[list[int]] = [[] for _ in range(n)]
    for (x, y), c in t.counts.items():
        i, j = index[x], index[y]
        if c.wins_first or c.ties:
            forward[i].append(j)
            backward[j].append(i)
        if c.wins_second or c.ties:
            forward[j].append(i)
            backward[i].append(j)

    # Kosaraju's algorithm, iterative to keep deep graphs off the call stack.
    finish_order: list[int] = []
    seen = [False] * n
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        stack = [(start, iter(forward[start]))]
        while stack:
            node, neighbours = stack[-1]
            advanced = False
            for nxt in neighbours:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append((nxt, iter(forward[nxt])))
                    advanced = True
                    break
            if not advanced:
                finish_order.append(node)
                stack.pop()

    component = [-1] * n
    n_components = 0
    for start in reversed(finish_order):
        if component[start] != -1:
            continue
        component[start] = n_components
        stack = [start]
        while stack:
            node = stack.pop()
            for nxt in backward[node]:
                if component[nxt] == -1:
                    component[nxt] = n_components
                    stack.append(nxt)
        n_components += 1

    if n_components <= 1:
        return None
    has_incoming = [False] * n_components
    for i in range(n):
        for j in forward[i]:
            if component[i] != component[j]:
                has_incoming[component[j]] = True
    source = has_incoming.index(False)
    subset = tuple(x for x in labels if component[index[x]] == source)
    complement = tuple(x for x in labels if component[index[x]] != source)
    return subset, complement


class DavidsonObjective:
    """Log-likelihood of a tournament as a function of the log parameters.

    The parameter vector holds the log-abilities of every treatment except
    the first (the reference, pinned at 0), followed by log nu whenever the
    tournament contains at least one tie. In these coordinates each pair's
    log-denominator is a log-sum-exp of linear maps, so the objective is
    concave and the observed information equals the expected information.
    """

    def __init__(self, t: Tournament):
        self.treatments = t.treatments
        n = len(t.treatments)
        index = {x: k for k, x in enumerate(t.treatments)}
        pairs = [(index[x], index[y], c) for (x, y), c in t.counts.items() if c.total > 0]
        self._i = np.asarray([p[0] for p in pairs], dtype=np.intp)
        self._j = np.asarray([p[1] for p in pairs], dtype=np.intp)
        self._r_ij = np.asarray([p[2].wins_first for p in pairs], dtype=float)
        self._r_ji = np.asarray([p[2].wins_second for p in pairs], dtype=float)
        self._w = np.asarray([p[2].ties for p in pairs], dtype=float)
        self._m = self._r_ij + self._r_ji + self._w
        self.n_treatments = n
        self.has_tie_param = bool(self._w.sum() > 0)
        self.n_params = n - 1 + (1 if self.has_tie_param else 0)
        self.param_names = tuple(
            [f"log_ability[{x}]" for x in t.treatments[1:]]
            + (["log_nu"] if self.has_tie_param else [])
        )

    def _logits(self, theta: np.ndarray):
        n = self.n_treatments
        lam = np.concatenate(([0.0], np.asarray(theta[: n - 1], dtype=float)))
        l_i = lam[self._i]
        l_j = lam[self._j]
        if self.has_tie_param:
            l_tie = theta[-1] + 0.5 * (l_i + l_j)
            log_d = logsumexp(np.stack((l_i, l_j, l_tie)), axis=0)
        else:
            l_tie = None
            log_d = np.logaddexp(l_i, l_j)
        return l_i, l_j, l_tie, log_d

    def value(self, theta: np.ndarray) -> float:
        l_i, l_j, l_tie, log_d = self._logits(theta)
        total = self._r_ij @ (l_i - log_d) + self._r_ji @ (l_j - log_d)
        if self.has_tie_param:
            total += self._w @ (l_tie - log_d)
        return float(total)

    def _distribution(self, theta: np.ndarray):
        l_i, l_j, l_tie, log_d = self._logits(theta)
        p_i = np.exp(l_i - log_d)
        p_j = np.exp(l_j - log_d)
        p_tie = np.exp(l_tie - log_d) if self.has_tie_param else np.zeros_like(p_i)
        return p_i, p_j, p_tie

    def pair_distribution(self, theta: np.ndarray):
        """Per-pair (index_x, index_y, p_x, p_y, p_tie) arrays at theta."""
        p_i, p_j, p_tie = self._distribution(theta)
        return self._i, self._j, p_i, p_j, p_tie

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        p_i, p_j, p_tie = self._distribution(theta)
        s_i = p_i + 0.5 * p_tie
        s_j = p_j + 0.5 * p_tie
        by_treatment = np.zeros(self.n_treatments)
        np.add.at(by_treatment, self._i, self._r_ij + 0.5 * self._w - self._m * s_i)
        np.add.at(by_treatment, self._j, self._r_ji + 0.5 * self._w - self._m * s_j)
        if not self.has_tie_param:
            return by_treatment[1:]
        tie_part = np.sum(self._w - self._m * p_tie)
        return np.concatenate((by_treatment[1:], [tie_part]))

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        p_i, p_j, p_tie = self._distribution(theta)
        s_i = p_i + 0.5 * p_tie
        s_j = p_j + 0.5 * p_tie
        m = self._m
        n = self.n_treatments
        full = np.zeros((n + 1, n + 1))  # all log-abilities plus the tie slot
        np.add.at(full, (self._i, self._i), -m * (p_i + 0.25 * p_tie - s_i**2))
        np.add.at(full, (self._j, self._j), -m * (p_j + 0.25 * p_tie - s_j**2))
        cross = -m * (0.25 * p_tie - s_i * s_j)
        np.add.at(full, (self._i, self._j), cross)
        np.add.at(full, (self._j, self._i), cross)
        if self.has_tie_param:
            tie_i = -m * p_tie * (0.5 - s_i)
            tie_j = -m * p_tie * (0.5 - s_j)
            np.add.at(full, (self._i, np.full_like(self._i, n)), tie_i)
            np.add.at(full, (np.full_like(self._i, n), self._i), tie_i)
            np.add.at(full, (self._j, np.full_like(self._j, n)), tie_j)
            np.add.at(full, (np.full_like(self._j, n), self._j), tie_j)
            full[n, n] = np.sum(-m * p_tie * (1.0 - p_tie))
            keep = list(range(1, n)) + [n]
        else:
            keep = list(range(1, n))
        return full[np.ix_(keep, keep)]

    def mm_step(self, theta: np.ndarray) -> np.ndarray:
        """One minorization-maximization sweep, mapped back to log parameters."""
        n = self.n_treatments
        lam = np.concatenate(([0.0], np.asarray(theta[: n - 1], dtype=float)))
        psi = np.exp(lam)
        nu = math.exp(theta[-1]) if self.has_tie_param else 0.0
        psi_i, psi_j = psi[self._i], psi[self._j]
        root = np.sqrt(psi_i * psi_j)
        denom_pair = psi_i + psi_j + nu * root
        credit = np.zeros(n)
        np.add.at(credit, self._i, self._r_ij + 0.5 * self._w)
        np.add.at(credit, self._j, self._r_ji + 0.5 * self._w)
        load = np.zeros(n)
        ratio = self._m / denom_pair
        np.add.at(load, self._i, ratio * (1.0 + 0.5 * nu * np.sqrt(psi_j / psi_i)))
        np.add.at(load, self._j, ratio * (1.0 + 0.5 * nu * np.sqrt(psi_i / psi_j)))
        psi_new = credit / load
        lam_new = np.log(psi_new) - math.log(psi_new[0])
        if not self.has_tie_param:
            return lam_new[1:]
        nu_new = self._w.sum() / float(ratio @ root)
        return np.concatenate((lam_new[1:], [math.log(nu_new)]))


@dataclass(frozen=True, eq=False)
class AbilityFit:
    """Fitted abilities with uncertainty on the log-parameter scale.

    ``psi`` holds the abilities rescaled to sum to 1, which makes them equal
    to the normalized abilities ``pi``; both views are kept because they
    answer different questions (latent strength vs probability of being
    preferred). ``covariance`` is the inverse observed information over
    ``log_params`` and ``se_log_ability`` maps the reference treatment to 0.
    Instances are immutable and safe to share across threads.
    """

    treatments: tuple[str, ...]
    psi: Mapping[str, float]
    nu: float
    log_params: np.ndarray
    param_names: tuple[str, ...]
    covariance: np.ndarray
    se_log_ability: Mapping[str, float]
    pi: Mapping[str, float]
    loglik: float
    converged: bool
    iterations: int
    tie_free: bool = False

    @property
    def reference(self) -> str:
        return self.treatments[0]


@dataclass(frozen=True)
class NormalizedAbility:
    """Normalized ability with its delta-method SE and log-scale Wald CI."""

    estimate: float
    se: float
    ci_lower: float
    ci_upper: float


@dataclass(frozen=True)
class AbilityRatio:
    """Ability of ``numerator`` relative to a treatment or the average ability."""

    numerator: str
    denominator: str | _AverageAbility
    estimate: float
    ci_lower: float
    ci_upper: float
    ci_level: float = 0.95


def _maximize(obj: DavidsonObjective, theta: np.ndarray, max_iterations: int,
              grad_tol: float, step_tol: float) -> tuple[np.ndarray, int]:
    value = obj.value(theta)
    for iteration in range(1, max_iterations + 1):
        grad = obj.gradient(theta)
        if np.max(np.abs(grad)) < grad_tol:
            return theta, iteration - 1
        step = None
        try:
            step = np.linalg.solve(-obj.hessian(theta), grad)
        except np.linalg.LinAlgError:
            pass
        candidate = None
        if step is not None and np.all(np.isfinite(step)):
            scale = 1.0
            while scale >= 1e-12:
                trial = theta + scale * step
                trial_value = obj.value(trial)
                if math.isfinite(trial_value) and trial_value >= value - 1e-12:
                    candidate = (trial, trial_value)
                    break
                scale *= 0.5
        if candidate is None:
            # Newton step unusable (singular or non-improving): fall back to
            # one minorization-maximization sweep, which is always defined.
            trial = obj.mm_step(theta)
            candidate = (trial, obj.value(trial))
        new_theta, new_value = candidate
        if np.max(np.abs(new_theta - theta)) < step_tol:
            return new_theta, iteration
        theta, value = new_theta, new_value
    raise ConvergenceError(
        f"no convergence after {max_iterations} iterations "
        f"(gradient max-norm {np.max(np.abs(obj.gradient(theta))):.3g})"
    )


def fit_davidson(
    t: Tournament,
    *,
    max_iterations: int = 10_000,
    grad_tol: float = 1e-8,
    step_tol: float = 1e-10,
) -> AbilityFit:
    """Maximum-likelihood fit of the tie-extended model to a tournament.

    The log-parametrized likelihood is maximized by damped Newton iterations
    (minorization-maximization sweeps as fallback); convergence is declared
    when the gradient max-norm drops below ``grad_tol`` or the parameter
    change below ``step_tol``. Abilities are rescaled afterwards so they sum
    to 1. A tournament with zero ties is fitted under the tie-free model with
    ``nu = 0`` and a warning, since the tie parameter would sit on the
    boundary and break the covariance.

    Raises
    ------
    OnlyTiesError
        when no record is a win, so no hierarchy is estimable.
    FordConditionError
        when the preference graph is not strongly connected.
    ConvergenceError
        when the iteration cap is hit.
    """
    if len(t.treatments) < 2:
        raise DataError("need at least two treatments to rank")
    if t.total_records == 0:
        raise DataError("tournament has no records")
    if t.total_wins == 0:
        raise OnlyTiesError(
            "all records are ties; a preference hierarchy is not estimable"
        )
    failure = check_ford(t)
    if failure is not None:
        raise FordConditionError(*failure)

    obj = DavidsonObjective(t)
    theta = np.zeros(obj.n_params)
    if obj.has_tie_param:
        # Equal abilities make tie odds nu/2, so match the observed ratio.
        theta[-1] = math.log(2.0 * t.total_ties / t.total_wins)
    else:
        warnings.warn(
            "tournament has no ties; fitting the tie-free model with nu = 0",
            UserWarning,
            stacklevel=2,
        )
    theta, iterations = _maximize(obj, theta, max_iterations, grad_tol, step_tol)

    covariance = np.linalg.inv(-obj.hessian(theta))
    covariance = 0.5 * (covariance + covariance.T)

    n = obj.n_treatments
    lam = np.concatenate(([0.0], theta[: n - 1]))
    pi = np.exp(lam - logsumexp(lam))
    pi = pi / pi.sum()
    nu = math.exp(theta[-1]) if obj.has_tie_param else 0.0
    se = {t.treatments[0]: 0.0}
    for k, label in enumerate(t.treatments[1:]):
        se[label] = math.sqrt(max(covariance[k, k], 0.0))
    abilities = {label: float(pi[k]) for k, label in enumerate(t.treatments)}
    return AbilityFit(
        treatments=t.treatments,
        psi=abilities,
        nu=nu,
        log_params=theta,
        param_names=obj.param_names,
        covariance=covariance,
        se_log_ability=se,
        pi=dict(abilities),
        loglik=obj.value(theta),
        converged=True,
        iterations=iterations,
        tie_free=not obj.has_tie_param,
    )


def pairwise_probabilities(f: AbilityFit, x: str, y: str) -> tuple[float, float, float]:
    """Win/win/tie probabilities between two fitted treatments."""
    for label in (x, y):
        if label not in f.psi:
            raise DataError(f"unknown treatment {label!r}")
    if x == y:
        raise DataError(f"need two distinct treatments, got {x!r} twice")
    return win_tie_probabilities(f.psi[x], f.psi[y], f.nu)


def _ability_block(f: AbilityFit) -> np.ndarray:
    """Covariance of all log-abilities, reference row/column zero."""
    n = len(f.treatments)
    block = np.zeros((n, n))
    block[1:, 1:] = f.covariance[: n - 1, : n - 1]
    return block


def _log_pi_variance(f: AbilityFit) -> np.ndarray:
    """Delta-method variance of each log normalized ability."""
    n = len(f.treatments)
    pi = np.asarray([f.pi[x] for x in f.treatments])
    block = f.covariance[: n - 1, : n - 1]
    # d log pi_x / d lambda_z = 1{x = z} - pi_z over the free log-abilities.
    grads = -np.tile(pi[1:], (n, 1))
    for k in range(1, n):
        grads[k, k - 1] += 1.0
    return np.einsum("ki,ij,kj->k", grads, block, grads)


def normalized_abilities(
    f: AbilityFit, ci_level: float = 0.95
) -> dict[str, NormalizedAbility]:
    """Normalized abilities with SEs and CIs propagated on the log scale."""
    if not (0.0 < ci_level < 1.0):
        raise DataError(f"ci_level must be in (0, 1), got {ci_level}")
    z = norm.ppf((1.0 + ci_level) / 2.0)
    log_var = _log_pi_variance(f)
    out = {}
    for k, label in enumerate(f.treatments):
        pi = f.pi[label]
        se_log = math.sqrt(max(log_var[k], 0.0))
        out[label] = NormalizedAbility(
            estimate=pi,
            se=pi * se_log,
            ci_lower=pi * math.exp(-z * se_log),
            ci_upper=pi * math.exp(z * se_log),
        )
    return out


def ability_ratios(
    f: AbilityFit,
    denominator: str | _AverageAbility = AVERAGE,
    ci_level: float = 0.95,
) -> list[AbilityRatio]:
    """Ability ratios of every treatment against a denominator.

    The denominator is either a treatment label or :data:`AVERAGE`, a
    fictional treatment whose ability is the arithmetic mean ability. CIs are
    Wald intervals on the log-ratio, exponentiated.
    """
    if not (0.0 < ci_level < 1.0):
        raise DataError(f"ci_level must be in (0, 1), got {ci_level}")
    z = norm.ppf((1.0 + ci_level) / 2.0)
    labels = f.treatments
    ratios = []
    if isinstance(denominator, _AverageAbility):
        log_var = _log_pi_variance(f)
        mean_ability = sum(f.psi[x] for x in labels) / len(labels)
        for k, x in enumerate(labels):
            estimate = f.psi[x] / mean_ability
            se_log = math.sqrt(max(log_var[k], 0.0))
            ratios.append(
                AbilityRatio(
                    numerator=x,
                    denominator=AVERAGE,
                    estimate=estimate,
                    ci_lower=estimate * math.exp(-z * se_log),
                    ci_upper=estimate * math.exp(z * se_log),
                    ci_level=ci_level,
                )
            )
        return ratios
    if denominator not in f.psi:
        raise DataError(f"unknown denominator treatment {denominator!r}")
    block = _ability_block(f)
    index = {x: k for k, x in enumerate(labels)}
    d = index[denominator]
    for x in labels:
        k = index[x]
        estimate = 1.0 if x == denominator else f.psi[x] / f.psi[denominator]
        var = block[k, k] + block[d, d] - 2.0 * block[k, d]
        se_log = math.sqrt(max(var, 0.0))
        ratios.append(
            AbilityRatio(
                numerator=x,
                denominator=denominator,
                estimate=estimate,
                ci_lower=estimate * math.exp(-z * se_log),
                ci_upper=estimate * math.exp(z * se_log),
                ci_level=ci_level,
            )
        )
    return ratios
