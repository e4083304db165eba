"""Multinomial logit specification, likelihood, Newton estimation, simulation.

Utilities are linear in parameters: ``V_im = sum_p beta_p x_imp`` where the
activation ``x_imp`` sums, over every term bound to parameter ``p`` that
applies to alternative ``m``, the term's variable value for observation ``i``
(1 for ``ASC``).  A parameter shared by several alternatives is "tied".
Choice probabilities are the softmax of ``V_i``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..activity.labels import ACTIVITY_LABELS
from ..errors import ConfigError, DataError, IdentificationError, NumericFault
from ..rng import derive_rng

ASC = "ASC"


@dataclass(frozen=True)
class Term:
    variable: str
    alternatives: tuple
    parameter: int


@dataclass
class UtilitySpec:
    alternatives: tuple
    reference: int
    terms: list
    parameter_names: list
    variable_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alternatives = tuple(self.alternatives)
        M, P = len(self.alternatives), len(self.parameter_names)
        if M < 2:
            raise ConfigError("need at least two alternatives")
        if not 0 <= self.reference < M:
            raise ConfigError("reference alternative out of range")
        used = set()
        for t in self.terms:
            if not 0 <= t.parameter < P:
                raise ConfigError(f"term {t.variable}: parameter index {t.parameter} out of range")
            if not t.alternatives or any(not 0 <= a < M for a in t.alternatives):
                raise ConfigError(f"term {t.variable}: bad alternative set")
            if t.variable == ASC and self.reference in t.alternatives:
                raise ConfigError("the reference alternative's constant is fixed at 0")
            used.add(t.parameter)
        unused = [self.parameter_names[p] for p in range(P) if p not in used]
        if unused:
            raise ConfigError("parameters without terms: " + ", ".join(unused))

    @property
    def n_params(self) -> int:
        return len(self.parameter_names)

    @property
    def variables(self) -> list:
        out = []
        for t in self.terms:
            if t.variable != ASC and t.variable not in out:
                out.append(t.variable)
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "UtilitySpec":
        alts = tuple(doc.get("alternatives", ACTIVITY_LABELS))
        ref = doc.get("reference", alts[0])
        try:
            ref_idx = alts.index(ref) if isinstance(ref, str) else int(ref)
        except ValueError:
            raise ConfigError(f"reference {ref!r} is not an alternative") from None
        pid_index, names, terms = {}, [], []
        raw_terms = doc.get("terms")
        if not raw_terms:
            raise ConfigError("spec has no terms")
        for i, t in enumerate(raw_terms):
            try:
                var, alt_names, pid = t["variable"], t["alternatives"], t["parameter_id"]
            except (KeyError, TypeError):
                raise ConfigError(f"term {i}: needs variable, alternatives, parameter_id") from None
            if isinstance(alt_names, str):
                alt_names = [alt_names]
            try:
                idx = tuple(alts.index(a) if isinstance(a, str) else int(a) for a in alt_names)
            except ValueError as exc:
                raise ConfigError(f"term {i}: {exc}") from None
            key = str(pid)
            if key not in pid_index:
                pid_index[key] = len(names)
                names.append(key)
            terms.append(Term(str(var), idx, pid_index[key]))
        return cls(alts, ref_idx, terms, names, dict(doc.get("variable_labels", {})))

    @classmethod
    def from_json(cls, path) -> "UtilitySpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "alternatives": list(self.alternatives),
            "reference": self.alternatives[self.reference],
            "variable_labels": self.variable_labels,
            "terms": [
                {
                    "variable": t.variable,
                    "alternatives": [self.alternatives[a] for a in t.alternatives],
                    "parameter_id": self.parameter_names[t.parameter],
                }
                for t in self.terms
            ],
        }


def asc_only_spec(alternatives=ACTIVITY_LABELS, reference=0) -> UtilitySpec:
    terms, names = [], []
    for m, alt in enumerate(alternatives):
        if m == reference:
            continue
        terms.append(Term(ASC, (m,), len(names)))
        names.append(f"ASC_{alt}")
    return UtilitySpec(tuple(alternatives), reference, terms, names)


@dataclass
class ChoiceObservation:
    """Decision-maker attributes ``S_i`` (name -> value), optional
    per-alternative attributes ``X_im`` (name -> M values), and the chosen
    alternative index."""

    attributes: dict
    chosen: int = -1
    alt_attributes: dict = field(default_factory=dict)


@dataclass
class ChoiceData:
    X: np.ndarray  # (N, M, P) term activations
    chosen: np.ndarray  # (N,)

    @property
    def n_obs(self) -> int:
        return len(self.chosen)

    @property
    def n_alternatives(self) -> int:
        return self.X.shape[1]


def design(spec: UtilitySpec, observations: Sequence[ChoiceObservation]) -> ChoiceData:
    N, M, P = len(observations), len(spec.alternatives), spec.n_params
    X = np.zeros((N, M, P))
    chosen = np.empty(N, dtype=np.int64)
    for i, ob in enumerate(observations):
        chosen[i] = ob.chosen
        for t in spec.terms:
            for m in t.alternatives:
                if t.variable == ASC:
                    val = 1.0
                elif t.variable in ob.alt_attributes:
                    val = float(ob.alt_attributes[t.variable][m])
                elif t.variable in ob.attributes:
                    val = float(ob.attributes[t.variable])
                else:
                    raise DataError(f"observation {i} lacks variable {t.variable!r}")
                X[i, m, t.parameter] += val
    return ChoiceData(X, chosen)


def _as_data(spec, data) -> ChoiceData:
    if isinstance(data, ChoiceData):
        return data
    return design(spec, list(data))


def utilities(X: np.ndarray, beta) -> np.ndarray:
    V = X @ np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(V)):
        bad = int(np.flatnonzero(~np.isfinite(V).all(axis=-1))[0]) if V.ndim > 1 else 0
        raise NumericFault(f"non-finite utility for observation {bad}")
    return V


def _log_probs(V):
    vmax = V.max(axis=-1, keepdims=True)
    z = V - vmax
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def probabilities(spec: UtilitySpec, beta, obs) -> np.ndarray:
    """Choice probabilities for one observation (or a ``(M, P)`` activation block)."""
    if isinstance(obs, ChoiceObservation):
        X = design(spec, [obs]).X[0]
    else:
        X = np.asarray(obs, dtype=np.float64)
    return np.exp(_log_probs(utilities(X, beta)))


def _check_chosen(data: ChoiceData):
    if data.n_obs == 0:
        raise DataError("no observations")
    c = data.chosen
    if c.min() < 0 or c.max() >= data.n_alternatives:
        raise DataError("chosen alternative index out of range")


def log_likelihood(spec, beta, data) -> float:
    data = _as_data(spec, data)
    _check_chosen(data)
    lp = _log_probs(utilities(data.X, beta))
    picked = lp[np.arange(data.n_obs), data.chosen]
    if not np.all(np.isfinite(picked)):
        i = int(np.flatnonzero(~np.isfinite(picked))[0])
        raise NumericFault(f"chosen-alternative probability underflowed to 0 for observation {i}")
    return float(np.sum(picked))


def _derivatives(data: ChoiceData, beta):
    """``(LL, gradient, Hessian)`` at ``beta``."""
    N, M, P = data.X.shape
    lp = _log_probs(utilities(data.X, beta))
    picked = lp[np.arange(N), data.chosen]
    if not np.all(np.isfinite(picked)):
        i = int(np.flatnonzero(~np.isfinite(picked))[0])
        raise NumericFault(f"chosen-alternative probability underflowed to 0 for observation {i}")
    prob = np.exp(lp)
    xbar = np.einsum("nm,nmp->np", prob, data.X)
    x_chosen = data.X[np.arange(N), data.chosen]
    grad = (x_chosen - xbar).sum(axis=0)
    weighted = (data.X * prob[..., None]).reshape(N * M, P)
    hess = -(weighted.T @ data.X.reshape(N * M, P) - xbar.T @ xbar)
    return float(np.sum(picked)), grad, hess


def gradient(spec, beta, data) -> np.ndarray:
    """``sum_i sum_m (y_im - P_im) x_imp``."""
    data = _as_data(spec, data)
    _check_chosen(data)
    return _derivatives(data, beta)[1]


def hessian(spec, beta, data) -> np.ndarray:
    """``-sum_i X_i^T (diag(P_i) - P_i P_i^T) X_i``."""
    data = _as_data(spec, data)
    _check_chosen(data)
    return _derivatives(data, beta)[2]


def null_log_likelihood(n_obs: int, n_alternatives: int) -> float:
    """Log-likelihood of the equal-shares model, ``N ln(1/M)``."""
    if n_obs < 1 or n_alternatives < 2:
        raise ValueError("need N >= 1 and M >= 2")
    return n_obs * math.log(1.0 / n_alternatives)


def rho_squared(loglik: float, loglik_null: float) -> float:
    if not loglik_null < 0:
        raise ValueError("null log-likelihood must be negative")
    if loglik < loglik_null - 1e-9 * abs(loglik_null):
        raise ValueError("model log-likelihood is below the null model's")
    return 1.0 - loglik / loglik_null


@dataclass(frozen=True)
class EstimationSettings:
    max_iter: int = 100
    tol: float = 1e-6
    ridge: float = 0.0
    max_condition: float = 1e12
    max_halvings: int = 40


@dataclass
class MNLEstimate:
    parameter_names: list
    beta: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    loglik: float
    loglik_null: float
    rho_squared: float
    converged: bool
    iterations: int
    n_obs: int
    gradient_norm: float

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("beta", "std_errors", "t_stats"):
            d[k] = [float(v) for v in getattr(self, k)]
        return d

    @classmethod
    def from_dict(cls, d) -> "MNLEstimate":
        d = dict(d)
        for k in ("beta", "std_errors", "t_stats"):
            d[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**d)


def _null_space_columns(A: np.ndarray, names, max_condition: float):
    w, vecs = np.linalg.eigh(A)
    top = max(abs(w[-1]), 1e-300)
    small = np.flatnonzero(w <= top / max_condition)
    if not len(small):
        return []
    load = np.abs(vecs[:, small]).max(axis=1)
    return [names[p] for p in np.flatnonzero(load > 1e-6)]


def check_identification(spec: UtilitySpec, data: ChoiceData, max_condition: float = 1e12):
    """Raise if the information matrix at ``beta = 0`` is (near-)singular."""
    _, _, H = _derivatives(data, np.zeros(spec.n_params))
    cols = _null_space_columns(-H, spec.parameter_names, max_condition)
    if cols:
        raise IdentificationError(
            "parameters not identified (collinear or constant activations): " + ", ".join(cols),
            columns=cols,
        )


def _newton_step(negH, grad, ridge, names, max_condition):
    A = negH + ridge * np.eye(len(grad))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        cols = _null_space_columns(A, names, max_condition) or list(names)
        raise IdentificationError(
            "Hessian is not negative definite; check parameters: " + ", ".join(cols), columns=cols
        ) from None
    return np.linalg.solve(L.T, np.linalg.solve(L, grad))


def estimate(spec: UtilitySpec, data, settings: EstimationSettings = EstimationSettings()) -> MNLEstimate:
    """Maximize the log-likelihood by Newton-Raphson from ``beta = 0``.

    Each step solves ``(-H + ridge I) d = g`` and is halved until the
    log-likelihood does not decrease.  Convergence: ``max|g| < tol``.
    Standard errors come from the inverse observed information ``-H``.
    """
    data = _as_data(spec, data)
    _check_chosen(data)
    check_identification(spec, data, settings.max_condition)
    names = spec.parameter_names
    beta = np.zeros(spec.n_params)
    ll, g, H = _derivatives(data, beta)
    converged = False
    iterations = 0
    while True:
        if np.max(np.abs(g)) < settings.tol:
            converged = True
            break
        if iterations >= settings.max_iter:
            break
        step = _newton_step(-H, g, settings.ridge, names, settings.max_condition)
        t = 1.0
        accepted = False
        for _ in range(settings.max_halvings):
            cand = beta + t * step
            try:
                ll_new = log_likelihood(spec, cand, data)
            except NumericFault:
                ll_new = -math.inf
            if ll_new >= ll:
                accepted = True
                break
            t *= 0.5
        iterations += 1
        if not accepted:
            break
        beta = cand
        ll, g, H = _derivatives(data, beta)

    negH = -H
    try:
        cov = np.linalg.inv(negH)
        se = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        se = np.full(spec.n_params, np.nan)
    if not np.all(np.isfinite(se)):
        se = np.where(np.isfinite(se), se, np.nan)
    ll0 = null_log_likelihood(data.n_obs, data.n_alternatives)
    return MNLEstimate(
        parameter_names=list(names),
        beta=beta,
        std_errors=se,
        t_stats=beta / se,
        loglik=ll,
        loglik_null=ll0,
        rho_squared=rho_squared(ll, ll0),
        converged=converged,
        iterations=iterations,
        n_obs=data.n_obs,
        gradient_norm=float(np.max(np.abs(g))),
    )


def simulate(spec: UtilitySpec, beta, rows: Sequence[ChoiceObservation], seed: int):
    """Draw choices by inverse CDF of the logit probabilities.

    Returns new observations (same attributes) with ``chosen`` filled in.
    """
    rows = list(rows)
    data = design(spec, [ChoiceObservation(r.attributes, 0, r.alt_attributes) for r in rows])
    prob = np.exp(_log_probs(utilities(data.X, beta)))
    cdf = np.cumsum(prob, axis=1)
    u = derive_rng(seed, "simulate").random(len(rows))
    chosen = (u[:, None] >= cdf).sum(axis=1)
    chosen = np.minimum(chosen, len(spec.alternatives) - 1)
    return [ChoiceObservation(dict(r.attributes), int(c), dict(r.alt_attributes)) for r, c in zip(rows, chosen)]


# ---------------------------------------------------------------------------
# Data files


def read_choice_csv(path, alternatives=ACTIVITY_LABELS):
    """One row per observation: ``chosen`` label column plus numeric covariates."""
    obs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "chosen" not in reader.fieldnames:
            raise DataError(f"{path}: missing 'chosen' column")
        for lineno, row in enumerate(reader, start=2):
            try:
                chosen = list(alternatives).index(row.pop("chosen"))
                attrs = {k: float(v) for k, v in row.items()}
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            obs.append(ChoiceObservation(attrs, chosen))
    return obs


def write_choice_csv(path, observations, variables, alternatives=ACTIVITY_LABELS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chosen", *variables])
        for ob in observations:
            w.writerow([alternatives[ob.chosen], *(repr(float(ob.attributes[v])) for v in variables)])
