"""Run-likelihood anomaly detection, offline and prefix-conditioned online.

A run's score is the natural-log likelihood of its abstract path under the
induced model: sum of ln P(s_i, a_i, s_{i+1}).  A factor of zero or an
unobserved (state, action) pair yields the -inf sentinel: such runs are
anomalous by definition and are excluded from the statistics.

Offline detection flags a run when its score falls below
mu - z_{1-alpha} * sigma (one-sided, low side).  Online detection applies
the same rule to prefix scores at fixed checkpoints, where the statistics
for checkpoint k use only historical runs of length >= k truncated to their
first k transitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DomainError,
    InsufficientData,
    UnarmedCheckpoint,
    UnobservedStateAction,
)
from .trace_trie import AbstractPath

DEFAULT_CHECKPOINTS = tuple(range(10, 201, 10))


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.05
    checkpoints: tuple[int, ...] = DEFAULT_CHECKPOINTS
    mode: str = "normal"  # or "empirical"
    # |skewness| above this switches the normal rule to empirical quantiles.
    skew_limit: float = 2.0

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if any(b <= a for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        if self.mode not in ("normal", "empirical"):
            raise ValueError(f"unknown detector mode {self.mode!r}")


@dataclass(frozen=True)
class RunScore:
    trace_id: str
    loglik: float  # -inf when the run leaves the model's support
    length: int
    unseen_transition_at: int | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.loglik)


def run_loglik(model, run: AbstractPath, trace_id: str = "") -> RunScore:
    """Natural-log likelihood of a run; empty runs score 0.

    An unseen transition is data, not an error: the score becomes -inf and
    the first offending step index is recorded.
    """
    total = 0.0
    for i, (src, action, dst) in enumerate(run.steps()):
        try:
            p = model.probability(src, action, dst)
        except UnobservedStateAction:
            p = 0.0
        if p <= 0.0:
            return RunScore(trace_id, -math.inf, run.n_transitions, unseen_transition_at=i)
        total += math.log(p)
    return RunScore(trace_id, total, run.n_transitions)


# ---------------------------------------------------------------------------
# Offline (run-level) detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OfflineStats:
    mu: float
    sigma: float
    n_finite: int
    n_unseen: int


def offline_stats(scores: Iterable[RunScore]) -> OfflineStats:
    """Sample mean and unbiased (n-1) standard deviation of finite scores."""
    finite = []
    unseen = 0
    for score in scores:
        if score.finite:
            finite.append(score.loglik)
        else:
            unseen += 1
    if len(finite) < 2:
        raise InsufficientData(f"need at least 2 finite scores, got {len(finite)}")
    arr = np.asarray(finite)
    return OfflineStats(float(arr.mean()), float(arr.std(ddof=1)), len(finite), unseen)


def offline_threshold(
    mu: float,
    sigma: float,
    alpha: float,
    mode: str = "normal",
    history: Sequence[float] | None = None,
) -> float:
    if mode == "empirical":
        if history is None or len(history) == 0:
            raise InsufficientData("empirical mode needs the historical scores")
        return float(np.quantile(np.asarray(history), alpha))
    return mu - normal_quantile(1.0 - alpha) * sigma


def offline_flag(
    loglik: float,
    mu: float,
    sigma: float,
    alpha: float,
    mode: str = "normal",
    history: Sequence[float] | None = None,
) -> bool:
    """One-sided low-likelihood rule; -inf scores are always anomalous."""
    if not math.isfinite(loglik):
        return True
    return loglik < offline_threshold(mu, sigma, alpha, mode, history)


def skewness(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    centered = arr - arr.mean()
    m2 = float((centered**2).mean())
    if m2 == 0.0:
        return 0.0
    m3 = float((centered**3).mean())
    return m3 / m2**1.5


class OfflineDetector:
    """Fitted run-level detector with automatic empirical fallback.

    In "normal" mode the threshold is mu - z_{1-alpha} sigma; when the
    training scores are strongly skewed (|skewness| > skew_limit) the same
    rule is applied through the empirical alpha-quantile instead.
    """

    def __init__(self, cfg: DetectorConfig | None = None):
        self.cfg = cfg or DetectorConfig()
        self.stats: OfflineStats | None = None
        self.history: list[float] = []
        self.effective_mode: str = self.cfg.mode

    def fit(self, scores: Iterable[RunScore]) -> "OfflineDetector":
        scores = list(scores)
        self.stats = offline_stats(scores)
        self.history = sorted(s.loglik for s in scores if s.finite)
        self.effective_mode = self.cfg.mode
        if self.cfg.mode == "normal" and abs(skewness(self.history)) > self.cfg.skew_limit:
            self.effective_mode = "empirical"
        return self

    @property
    def threshold(self) -> float:
        assert self.stats is not None, "fit() first"
        return offline_threshold(
            self.stats.mu, self.stats.sigma, self.cfg.alpha, self.effective_mode, self.history
        )

    def flag(self, score: RunScore) -> dict:
        """Verdict record for one run."""
        anomalous = offline_flag(
            score.loglik,
            self.stats.mu,  # type: ignore[union-attr]
            self.stats.sigma,  # type: ignore[union-attr]
            self.cfg.alpha,
            self.effective_mode,
            self.history,
        )
        reason = "normal"
        if anomalous:
            reason = "unseen_transition" if not score.finite else "low_likelihood"
        return {
            "trace_id": score.trace_id,
            "loglik": score.loglik if score.finite else None,
            "length": score.length,
            "verdict": "anomalous" if anomalous else "normal",
            "reason": reason,
            "threshold": self.threshold,
            "unseen_transition_at": score.unseen_transition_at,
        }


# ---------------------------------------------------------------------------
# Prefix-conditioned (online) detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointStats:
    """Statistics of prefix scores at one checkpoint length.

    ``scores`` is the sorted table of finite prefix log-likelihoods, kept for
    empirical quantiles.  The checkpoint arms only once two finite scores
    exist.
    """

    k: int
    n_runs: int
    n_finite: int
    n_unseen: int
    mu: float | None
    sigma: float | None
    scores: tuple[float, ...]

    @property
    def armed(self) -> bool:
        return self.n_finite >= 2


def prefix_stats(
    runs: Sequence[AbstractPath],
    model,
    checkpoints: Iterable[int] = DEFAULT_CHECKPOINTS,
) -> dict[int, CheckpointStats]:
    """Checkpoint statistics over historical runs.

    For each k, runs shorter than k are excluded and longer runs are
    truncated to their first k transitions before scoring.
    """
    out: dict[int, CheckpointStats] = {}
    for k in sorted(set(checkpoints)):
        eligible = [r for r in runs if r.n_transitions >= k]
        finite: list[float] = []
        unseen = 0
        for run in eligible:
            score = run_loglik(model, run.prefix(k))
            if score.finite:
                finite.append(score.loglik)
            else:
                unseen += 1
        finite.sort()
        if len(finite) >= 2:
            arr = np.asarray(finite)
            mu, sigma = float(arr.mean()), float(arr.std(ddof=1))
        else:
            mu = sigma = None
        out[k] = CheckpointStats(k, len(eligible), len(finite), unseen, mu, sigma, tuple(finite))
    return out


@dataclass(frozen=True)
class CheckpointVerdict:
    k: int
    warn: bool
    reason: str  # normal | low_likelihood | unseen_transition
    loglik: float
    threshold: float | None


def online_check(
    model,
    prefix: AbstractPath,
    k: int,
    stats: Mapping[int, CheckpointStats] | CheckpointStats,
    cfg: DetectorConfig | None = None,
) -> CheckpointVerdict:
    """Applies the one-sided checkpoint rule to a length-k prefix.

    A prefix that already left the model's support warns immediately with
    reason "unseen_transition", independent of the checkpoint statistics.
    """
    cfg = cfg or DetectorConfig()
    if prefix.n_transitions != k:
        raise ValueError(f"prefix has {prefix.n_transitions} transitions, checkpoint is {k}")
    if isinstance(stats, Mapping):
        if k not in stats:
            raise UnarmedCheckpoint(f"no statistics collected for checkpoint {k}")
        cp = stats[k]
    else:
        cp = stats
    score = run_loglik(model, prefix)
    if not score.finite:
        return CheckpointVerdict(k, True, "unseen_transition", score.loglik, None)
    if not cp.armed:
        raise UnarmedCheckpoint(f"checkpoint {k} has fewer than two finite historical scores")
    threshold = offline_threshold(cp.mu, cp.sigma, cfg.alpha, cfg.mode, cp.scores)
    if score.loglik < threshold:
        return CheckpointVerdict(k, True, "low_likelihood", score.loglik, threshold)
    return CheckpointVerdict(k, False, "normal", score.loglik, threshold)


def checkpoint_warnings(
    model,
    run: AbstractPath,
    stats: Mapping[int, CheckpointStats],
    cfg: DetectorConfig | None = None,
) -> tuple[list[dict], int | None]:
    """All checkpoint warnings a monitor would emit along one run.

    Returns (warnings, unseen_transition_at).  After the run leaves the
    model's support the unseen-transition alert supersedes later checkpoints.
    """
    cfg = cfg or DetectorConfig()
    warnings: list[dict] = []
    loglik = 0.0
    unseen_at: int | None = None
    armed = {k: cp for k, cp in stats.items() if cp.armed}
    for i, (src, action, dst) in enumerate(run.steps()):
        try:
            p = model.probability(src, action, dst)
        except UnobservedStateAction:
            p = 0.0
        if p <= 0.0:
            unseen_at = i
            break
        loglik += math.log(p)
        step = i + 1
        cp = armed.get(step)
        if cp is not None:
            threshold = offline_threshold(cp.mu, cp.sigma, cfg.alpha, cfg.mode, cp.scores)
            if loglik < threshold:
                warnings.append({"k": step, "loglik_k": loglik, "threshold": threshold})
    return warnings, unseen_at


class RunMonitor:
    """Incremental per-run monitor for streaming transition feeds.

    feed() returns the alert records triggered by that transition: at most
    one unseen-transition alert per run, plus checkpoint warnings.
    """

    def __init__(self, model, stats: Mapping[int, CheckpointStats], cfg: DetectorConfig | None = None):
        self.model = model
        self.stats = {k: cp for k, cp in stats.items() if cp.armed}
        self.cfg = cfg or DetectorConfig()
        self.loglik = 0.0
        self.steps = 0
        self.dead = False

    def feed(self, src: int, action: str, dst: int) -> list[dict]:
        if self.dead:
            return []
        self.steps += 1
        try:
            p = self.model.probability(src, action, dst)
        except UnobservedStateAction:
            p = 0.0
        if p <= 0.0:
            self.dead = True
            return [{"kind": "unseen_transition", "step": self.steps - 1}]
        self.loglik += math.log(p)
        cp = self.stats.get(self.steps)
        if cp is None:
            return []
        threshold = offline_threshold(cp.mu, cp.sigma, self.cfg.alpha, self.cfg.mode, cp.scores)
        if self.loglik < threshold:
            return [
                {
                    "kind": "checkpoint",
                    "k": self.steps,
                    "loglik_k": self.loglik,
                    "threshold": threshold,
                }
            ]
        return []


# ---------------------------------------------------------------------------
# Inverse normal CDF
# ---------------------------------------------------------------------------

# Coefficients of Acklam's rational approximation to the inverse standard
# normal CDF (relative error below 1.2e-9 over (0, 1)); one Halley step with
# erfc sharpens the result to near machine precision.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF via a rational approximation."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal_quantile needs p in (0, 1), got {p!r}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    # Halley refinement against the exact CDF.
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)
