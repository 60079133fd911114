"""Elo scores from pairwise votes.

Two estimators are available.  ``elo_update`` is the classic sequential
rule; :func:`fit_bt` fits a weighted Bradley-Terry model by penalised
logistic regression, optionally with style covariates.  Judge weights come
from the scores themselves, so :func:`fit_with_dynamic_weights` iterates fit
and reweighting to a fixed point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import STYLE_FEATURES, ModelId, VoteRecord, normalize_weights
from .errors import DisconnectedGraphWarning, NonConvergence

LN10 = math.log(10.0)
STYLE_NAMES = {"length": "length", "header": "header_count", "list": "list_count", "bold": "bold_count"}
ANCHORS = ("minmax", "mean", "none")


def elo_update(r_a: float, r_b: float, s_a: float, k: float = 4.0, scale: float = 400.0) -> float:
    """Rating of A after one game against B with actual score ``s_a``."""
    return r_a + k * (s_a - 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / scale)))


@dataclass(frozen=True)
class EloFitConfig:
    """Settings for score fitting.

    ``style_control`` names any of ``length``, ``header``, ``list``, ``bold``.
    ``anchor`` maps raw Elo-unit scores to reported ones: ``minmax`` puts the
    weakest model at 0 and the strongest at 100, ``mean`` centres at 1000,
    ``none`` leaves them untouched.
    """

    mode: str = "bt"
    k: float = 4.0
    scale: float = 400.0
    style_control: tuple[str, ...] = ()
    l2_penalty: float = 1e-6
    reweight_tol: float = 1e-4
    max_reweight_iters: int = 50
    anchor: str = "minmax"
    weight_floor: float = 1e-4
    weight_shift: float = 1.0
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self) -> None:
        if self.mode not in ("bt", "sequential"):
            raise ValueError(f"unknown fit mode {self.mode!r}")
        if self.k <= 0 or self.scale <= 0:
            raise ValueError("k and scale must be positive")
        if self.reweight_tol <= 0 or self.tol <= 0 or self.l2_penalty < 0:
            raise ValueError("tolerances must be positive and the penalty non-negative")
        if self.anchor not in ANCHORS:
            raise ValueError(f"unknown anchor {self.anchor!r}")
        bad = set(self.style_control) - set(STYLE_NAMES)
        if bad:
            raise ValueError(f"unknown style features {sorted(bad)}")
        object.__setattr__(self, "style_control", tuple(sorted(set(self.style_control))))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class FitResult:
    elo: dict[ModelId, float]
    weights: dict[ModelId, float]
    style_coeffs: dict[str, float] = field(default_factory=dict)
    # log-odds strengths before anchoring
    beta: dict[ModelId, float] = field(default_factory=dict)
    iterations: int = 0
    converged: bool = True
    components: int = 1

    def order(self) -> list[ModelId]:
        return sort_by_score(self.elo)


def sort_by_score(scores: Mapping[str, float], prior: Sequence[str] | None = None) -> list:
    """Models by non-increasing score; ties keep ``prior`` order, then name."""
    pos = {m: i for i, m in enumerate(prior or ())}
    return sorted(scores, key=lambda m: (-scores[m], pos.get(m, len(pos)), m))


class VoteTable:
    """Votes flattened into arrays, grouped into distinct regression rows.

    Every vote is put in canonical orientation (``model_a < model_b``).
    Votes about the same pair with the same style covariates share a row, so
    the design has one row per (pair, question) rather than per judge.
    """

    def __init__(self, votes: Iterable[VoteRecord], style_control: Sequence[str] = ()):
        votes = [v.canonical() for v in votes]
        if not votes:
            raise ValueError("no votes to fit")
        self.models: list[ModelId] = sorted({m for v in votes for m in (v.model_a, v.model_b)})
        self.judges: list[ModelId] = sorted({v.judge for v in votes})
        self.features = [STYLE_NAMES[f] for f in style_control]
        idx = {m: i for i, m in enumerate(self.models)}
        jdx = {m: i for i, m in enumerate(self.judges)}
        cols = np.array(
            [(idx[v.model_a], idx[v.model_b], jdx[v.judge], v.verdict.score_a) for v in votes], dtype=float
        ).reshape(-1, 4)
        ia, ib = cols[:, 0].astype(np.int64), cols[:, 1].astype(np.int64)
        self.judge_idx = cols[:, 2].astype(np.int64)
        self.y = cols[:, 3]
        if self.features:
            fi = [STYLE_FEATURES.index(f) for f in self.features]
            sa = np.array([v.style_a.as_tuple() for v in votes], dtype=float)[:, fi]
            sb = np.array([v.style_b.as_tuple() for v in votes], dtype=float)[:, fi]
            diff = sa - sb
            # differences are antisymmetric, so their mean over both orientations is 0
            rms = np.sqrt(np.mean(diff**2, axis=0))
            z = np.divide(diff, rms, out=np.zeros_like(diff), where=rms > 0)
        else:
            z = np.zeros((len(votes), 0))
        keys = np.column_stack([ia, ib, z]) if z.size else np.column_stack([ia, ib]).astype(float)
        uniq, self.group = np.unique(keys, axis=0, return_inverse=True)
        self.group = self.group.ravel()
        self.ia = uniq[:, 0].astype(np.int64)
        self.ib = uniq[:, 1].astype(np.int64)
        self.z = uniq[:, 2:]
        self.n_votes = len(votes)

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def n_params(self) -> int:
        return len(self.models) + self.z.shape[1]

    def aggregate(self, judge_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-row total weight and weighted score of ``model_a``."""
        w = judge_weights[self.judge_idx]
        n = len(self.ia)
        return (np.bincount(self.group, w, minlength=n), np.bincount(self.group, w * self.y, minlength=n))

    def components(self) -> np.ndarray:
        n = self.n_models
        g = coo_matrix((np.ones(len(self.ia)), (self.ia, self.ib)), shape=(n, n))
        return connected_components(g, directed=False)[1]


def _logit(theta: np.ndarray, t: VoteTable) -> np.ndarray:
    n = t.n_models
    x = theta[t.ia] - theta[t.ib]
    if t.z.shape[1]:
        x = x + t.z @ theta[n:]
    return x


def log_likelihood(theta: np.ndarray, t: VoteTable, W: np.ndarray, Y: np.ndarray, l2: float) -> float:
    """Penalised weighted log-likelihood in log-odds units.

    Each row contributes ``Y log p + (W - Y) log(1 - p)`` with
    ``p = sigmoid(b_a - b_b + z . g)``; ties carry ``y = 0.5``.
    """
    x = _logit(theta, t)
    ll = -(Y * np.logaddexp(0.0, -x) + (W - Y) * np.logaddexp(0.0, x)).sum()
    return float(ll - 0.5 * l2 * theta @ theta)


def gradient(theta: np.ndarray, t: VoteTable, W: np.ndarray, Y: np.ndarray, l2: float) -> np.ndarray:
    n = t.n_models
    r = Y - W * _sigmoid(_logit(theta, t))
    g = np.zeros_like(theta)
    g[:n] = np.bincount(t.ia, r, minlength=n) - np.bincount(t.ib, r, minlength=n)
    if t.z.shape[1]:
        g[n:] = t.z.T @ r
    return g - l2 * theta


def hessian(theta: np.ndarray, t: VoteTable, W: np.ndarray, l2: float) -> np.ndarray:
    n, k = t.n_models, t.n_params
    p = _sigmoid(_logit(theta, t))
    s = W * p * (1.0 - p)
    H = np.zeros((k, k))
    np.add.at(H, (t.ia, t.ia), s)
    np.add.at(H, (t.ib, t.ib), s)
    np.add.at(H, (t.ia, t.ib), -s)
    np.add.at(H, (t.ib, t.ia), -s)
    if t.z.shape[1]:
        sz = s[:, None] * t.z
        cross = np.zeros((n, t.z.shape[1]))
        np.add.at(cross, t.ia, sz)
        np.add.at(cross, t.ib, -sz)
        H[:n, n:] = cross
        H[n:, :n] = cross.T
        H[n:, n:] = t.z.T @ sz
    H[np.diag_indices(k)] += l2
    return -H


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def _newton(t: VoteTable, W: np.ndarray, Y: np.ndarray, cfg: EloFitConfig, theta0=None):
    theta = np.zeros(t.n_params) if theta0 is None else theta0.copy()
    f = log_likelihood(theta, t, W, Y, cfg.l2_penalty)
    mass = max(1.0, float(W.sum()))
    for it in range(1, cfg.max_iter + 1):
        g = gradient(theta, t, W, Y, cfg.l2_penalty)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.tol:
            return theta, it - 1
        H = hessian(theta, t, W, cfg.l2_penalty)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        # backtracking line search on the concave objective
        alpha, slope = 1.0, float(g @ step)
        while alpha > 1e-12:
            cand = theta + alpha * step
            fc = log_likelihood(cand, t, W, Y, cfg.l2_penalty)
            if fc >= f + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            # no ascent possible in floating point; accept if the gradient is negligible
            if gnorm <= 1e-6 * mass:
                return theta, it
            raise NonConvergence(f"line search stalled with |grad| = {gnorm:.3g}")
        if fc - f <= 1e-15 * max(1.0, abs(f)) and gnorm <= 1e-6 * mass:
            return cand, it
        theta, f = cand, fc
    g = gradient(theta, t, W, Y, cfg.l2_penalty)
    if np.linalg.norm(g) <= 1e-6 * mass:
        return theta, cfg.max_iter
    raise NonConvergence(f"Newton did not converge in {cfg.max_iter} iterations")


def anchor_scores(raw: np.ndarray, rule: str, components: np.ndarray | None = None) -> np.ndarray:
    """Apply an anchoring rule, separately within each graph component."""
    out = raw.astype(float).copy()
    comps = np.zeros(len(raw), dtype=int) if components is None else components
    for c in np.unique(comps):
        sel = comps == c
        r = raw[sel]
        if rule == "minmax":
            lo, hi = r.min(), r.max()
            out[sel] = (r - lo) / (hi - lo) * 100.0 if hi > lo else 0.0
        elif rule == "mean":
            out[sel] = r - r.mean() + 1000.0
        elif rule != "none":
            raise ValueError(f"unknown anchor {rule!r}")
    return out


def judge_weights_from_elo(elo: Mapping[str, float], judges: Iterable[str], cfg: EloFitConfig) -> dict:
    """Normalised-score weights for every contestant and judge.

    Judges without a score of their own get the minimum score.  Weights are
    clamped to ``cfg.weight_floor`` and renormalised.
    """
    lo = min(elo.values())
    scores = dict(elo)
    for j in judges:
        scores.setdefault(j, lo)
    w = normalize_weights(scores, floor=cfg.weight_shift)
    w = {m: max(v, cfg.weight_floor) for m, v in w.items()}
    total = math.fsum(w.values())
    return {m: v / total for m, v in sorted(w.items())}


def _weight_vector(t: VoteTable, judge_weights: Mapping[str, float] | None) -> np.ndarray:
    if judge_weights is None:
        return np.full(len(t.judges), 1.0 / len(t.judges))
    known = [judge_weights[j] for j in t.judges if j in judge_weights]
    fallback = min(known) if known else 1.0 / len(t.judges)
    w = np.array([float(judge_weights.get(j, fallback)) for j in t.judges])
    if (w < 0).any():
        raise ValueError("judge weights must be non-negative")
    return w


def _fit_table(t: VoteTable, wvec: np.ndarray, cfg: EloFitConfig, theta0=None, votes=None):
    if cfg.mode == "sequential":
        return _sequential(votes, t, wvec, cfg), 1
    W, Y = t.aggregate(wvec)
    return _newton(t, W, Y, cfg, theta0)


def _sequential(votes: Sequence[VoteRecord], t: VoteTable, wvec: np.ndarray, cfg: EloFitConfig) -> np.ndarray:
    # ratings kept in Elo units, converted to log-odds so both modes share post-processing
    idx = {m: i for i, m in enumerate(t.models)}
    jdx = {m: i for i, m in enumerate(t.judges)}
    mean_w = float(wvec.mean())
    r = np.full(t.n_models, 1000.0)
    for v in votes:
        a, b = idx[v.model_a], idx[v.model_b]
        k = cfg.k * wvec[jdx[v.judge]] / mean_w
        s = v.verdict.score_a
        ra, rb = r[a], r[b]
        r[a] = elo_update(ra, rb, s, k, cfg.scale)
        r[b] = elo_update(rb, ra, 1.0 - s, k, cfg.scale)
    theta = np.zeros(t.n_params)
    theta[: t.n_models] = (r - 1000.0) * LN10 / cfg.scale
    return theta


def _result(t: VoteTable, theta: np.ndarray, cfg: EloFitConfig, iterations: int, converged: bool) -> FitResult:
    n = t.n_models
    raw = theta[:n] * cfg.scale / LN10
    comps = t.components()
    n_comp = int(comps.max()) + 1
    elo = anchor_scores(raw, cfg.anchor, comps)
    elo_map = {m: float(e) for m, e in zip(t.models, elo)}
    style = {f: float(c * cfg.scale / LN10) for f, c in zip(cfg.style_control, theta[n:])}
    return FitResult(
        elo=elo_map,
        weights=judge_weights_from_elo(elo_map, t.judges, cfg),
        style_coeffs=style,
        beta={m: float(b) for m, b in zip(t.models, theta[:n])},
        iterations=iterations,
        converged=converged,
        components=n_comp,
    )


def fit_bt(votes: Sequence[VoteRecord], judge_weights: Mapping[str, float] | None = None,
           cfg: EloFitConfig = EloFitConfig()) -> FitResult:
    """Single fit with fixed judge weights (uniform when ``judge_weights`` is None).

    Returned ``weights`` are those implied by the fitted scores, i.e. the
    next iterate of the reweighting loop.
    """
    votes = list(votes)
    t = VoteTable(votes, cfg.style_control)
    _warn_components(t)
    theta, its = _fit_table(t, _weight_vector(t, judge_weights), cfg, votes=votes)
    return _result(t, theta, cfg, its, True)


def _warn_components(t: VoteTable) -> None:
    n_comp = int(t.components().max()) + 1
    if n_comp > 1:
        warnings.warn(
            f"comparison graph has {n_comp} components; scores are anchored per component",
            DisconnectedGraphWarning,
            stacklevel=3,
        )


def fit_with_dynamic_weights(votes: Sequence[VoteRecord], cfg: EloFitConfig = EloFitConfig(),
                             initial_weights: Mapping[str, float] | None = None) -> FitResult:
    """Alternate fitting and score-based reweighting until weights settle.

    Starts from uniform judge weights unless ``initial_weights`` is given.
    Stops when no weight moves by more than ``cfg.reweight_tol`` or after
    ``cfg.max_reweight_iters`` rounds (then ``converged`` is False).
    """
    votes = list(votes)
    t = VoteTable(votes, cfg.style_control)
    _warn_components(t)
    current = _weight_vector(t, initial_weights)
    current = current / current.sum()
    theta = None
    for it in range(1, cfg.max_reweight_iters + 1):
        theta, _ = _fit_table(t, current, cfg, theta0=theta, votes=votes)
        res = _result(t, theta, cfg, it, False)
        new = np.array([res.weights[j] for j in t.judges])
        new = new / new.sum()
        delta = float(np.max(np.abs(new - current)))
        current = new
        if delta <= cfg.reweight_tol:
            res.converged = True
            return res
    return res


def fit(votes: Sequence[VoteRecord], cfg: EloFitConfig = EloFitConfig(), dynamic: bool = True,
        initial_weights: Mapping[str, float] | None = None) -> FitResult:
    if dynamic:
        return fit_with_dynamic_weights(votes, cfg, initial_weights)
    return fit_bt(votes, initial_weights, cfg)
