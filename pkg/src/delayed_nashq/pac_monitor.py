"""Known-set tracking, event counting, hard bounds and checkpoint audits.

The monitor has oracle access to the true model, which the learner never
sees. Per step it only tests the executed profile for an escape; full scans
of the known set and the optimism/accuracy audits run at checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import BoundViolation
from .markov_game import GameModel, JointPolicy, QTables, build_known_game, policy_evaluation
from .markov_game import h_step_horizon

OPTIMISM_TOL = 1e-6
# slack on value comparisons that come out of iterative policy evaluation
AUDIT_TOL = 1e-7


@dataclass(frozen=True)
class PacParams:
    epsilon: float
    delta: float
    epsilon_1: float
    m: int
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.epsilon <= 0 or self.epsilon_1 <= 0 or self.m < 1:
            raise ValueError("epsilon, epsilon_1 and m must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @classmethod
    def from_epsilon(cls, epsilon: float, delta: float, m: int, gamma: float) -> "PacParams":
        """Tie epsilon_1 to the target accuracy: 1/epsilon_1 = 3/((1-gamma) epsilon)."""
        return cls(epsilon, delta, (1.0 - gamma) * epsilon / 3.0, m, gamma)

    @property
    def v_max(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    @property
    def horizon(self) -> int:
        return h_step_horizon(self.gamma, self.epsilon)

    def kappa(self, dims) -> float:
        n_s, n_1, n_2 = dims
        return n_s * n_1 * n_2 / ((1.0 - self.gamma) * self.epsilon_1)

    def zeta(self, dims, m: Optional[float] = None) -> float:
        m = self.m if m is None else m
        k = self.kappa(dims)
        return 2.0 * k + 4.0 * m * k

    def theoretical_m(self, dims) -> float:
        n = dims[0] * dims[1] * dims[2]
        k = self.kappa(dims)
        return math.log(6.0 * n * (1.0 + 2.0 * k) / self.delta) / (
            2.0 * self.epsilon_1 ** 2 * (1.0 - self.gamma) ** 2
        )

    def sample_bound(self, dims, m: Optional[float] = None) -> float:
        eps, g = self.epsilon, self.gamma
        return (self.zeta(dims, m) / (eps * (1.0 - g) ** 2)
                * math.log(1.0 / self.delta) * math.log(1.0 / (eps * (1.0 - g))))


@dataclass(frozen=True)
class BoundsReport:
    dims: Tuple[int, int, int]
    epsilon: float
    delta: float
    gamma: float
    m: int
    epsilon_1: float
    v_max: float
    horizon: int
    kappa: float
    zeta: float
    sample_bound: float
    theoretical_m: float
    zeta_theoretical: float
    sample_bound_theoretical: float
    max_successful: float
    max_attempted: float
    max_escapes: float

    def lines(self) -> List[str]:
        return [f"{name} = {getattr(self, name)!r}" for name in self.__dataclass_fields__]


def compute_bounds(params: PacParams, dims) -> BoundsReport:
    dims = tuple(int(d) for d in dims)
    n = dims[0] * dims[1] * dims[2]
    k = params.kappa(dims)
    m_th = params.theoretical_m(dims)
    return BoundsReport(
        dims=dims, epsilon=params.epsilon, delta=params.delta, gamma=params.gamma, m=params.m,
        epsilon_1=params.epsilon_1, v_max=params.v_max, horizon=params.horizon,
        kappa=k, zeta=params.zeta(dims), sample_bound=params.sample_bound(dims),
        theoretical_m=m_th, zeta_theoretical=params.zeta(dims, m_th),
        sample_bound_theoretical=params.sample_bound(dims, m_th),
        max_successful=2.0 * k, max_attempted=2.0 * n * (1.0 + 2.0 * k),
        max_escapes=4.0 * params.m * k,
    )


# -- known set -----------------------------------------------------------------

def _values(model: GameModel, q: QTables, values):
    if values is None:
        values = q.values(model)
    v1, v2 = (np.asarray(v, dtype=float) for v in values)
    return v1, v2


def bellman_residuals(model: GameModel, q: QTables, values=None) -> Tuple[np.ndarray, np.ndarray]:
    """``Q^i - R^i - gamma * E[v^i(s')]`` for every profile, per player."""
    v1, v2 = _values(model, q, values)
    t = model.transition
    res_1 = q.q_1 - model.reward_1 - model.gamma * (t @ v1).reshape(model.shape)
    res_2 = q.q_2 - model.reward_2 - model.gamma * (t @ v2).reshape(model.shape)
    return res_1, res_2


def known_set_scan(model: GameModel, q: QTables, epsilon_1: float, values=None) -> np.ndarray:
    """Boolean mask of known profiles; profiles at terminal states count as known."""
    res_1, res_2 = bellman_residuals(model, q, values)
    known = (res_1 <= 3.0 * epsilon_1) & (res_2 <= 3.0 * epsilon_1)
    known[model.terminal_mask] = True
    return known


def known_set_membership(model: GameModel, q: QTables, profile, epsilon_1: float, values=None) -> bool:
    """Scalar membership test for one ``(s, a1, a2)``, used on the per-step path."""
    s, a1, a2 = profile
    if model.terminal_mask[s]:
        return True
    v1, v2 = _values(model, q, values)
    nxt, cum = model.successors[model.flat(s, a1, a2)]
    probs = np.diff([0.0] + cum)
    exp_1 = sum(p * v1[n] for n, p in zip(nxt, probs))
    exp_2 = sum(p * v2[n] for n, p in zip(nxt, probs))
    thr = 3.0 * epsilon_1
    return bool(q.q_1[s, a1, a2] - model.reward_1[s, a1, a2] - model.gamma * exp_1 <= thr
                and q.q_2[s, a1, a2] - model.reward_2[s, a1, a2] - model.gamma * exp_2 <= thr)


# -- log and per-step recording ------------------------------------------------------

@dataclass(frozen=True)
class CheckpointRecord:
    t: int
    optimism_violations: int
    optimism_checked: int
    value_optimism_violations: int
    accuracy_violations: int
    eps4_ok: bool
    known: int
    successful: int
    attempted: int
    escapes: int
    third_cause_changes: int = 0
    scan_mismatches: int = 0

    def line(self) -> str:
        return (f"{self.t}, {self.optimism_violations}, {self.accuracy_violations}, "
                f"{str(self.eps4_ok).lower()}, {self.known}, {self.successful}, {self.attempted}, {self.escapes}")


@dataclass
class MonitorLog:
    successful_updates: int = 0
    attempted_updates: int = 0
    escape_events: int = 0
    optimism_violations: List[Tuple[int, int]] = field(default_factory=list)
    accuracy_violations: List[Tuple[int, int]] = field(default_factory=list)
    eps_or_better_violations: List[int] = field(default_factory=list)
    checkpoints: List[CheckpointRecord] = field(default_factory=list)

    @property
    def optimism_count(self) -> int:
        return sum(n for _, n in self.optimism_violations)

    @property
    def accuracy_count(self) -> int:
        return sum(n for _, n in self.accuracy_violations)


@dataclass(frozen=True)
class HardLimits:
    successful: float
    attempted: float
    escapes: float

    @classmethod
    def from_report(cls, report: BoundsReport) -> "HardLimits":
        return cls(report.max_successful, report.max_attempted, report.max_escapes)


def check_limits(log: MonitorLog, limits: HardLimits) -> None:
    if log.successful_updates > limits.successful:
        raise BoundViolation("total successful updates", log.successful_updates, limits.successful)
    if log.attempted_updates > limits.attempted:
        raise BoundViolation("total attempted updates", log.attempted_updates, limits.attempted)
    if log.escape_events > limits.escapes:
        raise BoundViolation("escape events", log.escape_events, limits.escapes)


def record_step(log: MonitorLog, events, escaped: bool, limits: Optional[HardLimits] = None) -> MonitorLog:
    """Count one step's events into ``log`` (mutated and returned)."""
    for _, ok in events.attempts:
        log.attempted_updates += 1
        log.successful_updates += bool(ok)
    log.escape_events += bool(escaped)
    if limits is not None:
        check_limits(log, limits)
    return log


# -- checkpoint audits -----------------------------------------------------------

def extend_policy(policy: JointPolicy, n_states: int) -> JointPolicy:
    """Pad a policy with first-action rows for the absorbing states of a known game."""
    extra = n_states - policy.pi_1.shape[0]
    if extra <= 0:
        return policy
    pad_1 = np.zeros((extra, policy.pi_1.shape[1]))
    pad_2 = np.zeros((extra, policy.pi_2.shape[1]))
    pad_1[:, 0] = pad_2[:, 0] = 1.0
    return JointPolicy(np.vstack([policy.pi_1, pad_1]), np.vstack([policy.pi_2, pad_2]))


def audit_checkpoint(model: GameModel, q: QTables, oracle, params: PacParams, policy_snapshot: JointPolicy,
                     t: int = 0, state: Optional[int] = None, values=None, counters=(0, 0, 0),
                     known: Optional[np.ndarray] = None) -> CheckpointRecord:
    """Optimism, accuracy and 4-epsilon audits of one snapshot.

    Optimism is counted per (player, profile) on non-terminal profiles, whose
    Q entries are the only ones the learner ever moves. ``values`` are the
    stage values of ``q`` when the caller already has them.
    """
    v1, v2 = _values(model, q, values)
    live = ~model.terminal_mask
    q_star = oracle.q_star
    below_1 = q.q_1[live] < q_star.q_1[live] - OPTIMISM_TOL
    below_2 = q.q_2[live] < q_star.q_2[live] - OPTIMISM_TOL
    optimism = int(below_1.sum() + below_2.sum())
    checked = int(below_1.size * 2)
    vs1, vs2 = oracle.v_star
    value_optimism = int(((v1 < vs1 - params.epsilon - AUDIT_TOL) | (v2 < vs2 - params.epsilon - AUDIT_TOL)).sum())

    if known is None:
        known = known_set_scan(model, q, params.epsilon_1, (v1, v2))
    surrogate = build_known_game(model, known, q)
    mk1, mk2 = policy_evaluation(surrogate, extend_policy(policy_snapshot, surrogate.n_states), tol=1e-10)
    n = model.n_states
    gap = np.maximum(v1 - mk1[:n], v2 - mk2[:n])
    accuracy = int((gap[live] > params.epsilon + AUDIT_TOL).sum())

    state = model.initial if state is None else state
    tv1, tv2 = policy_evaluation(model, policy_snapshot, tol=1e-10)
    eps4 = bool(tv1[state] >= vs1[state] - 4 * params.epsilon - AUDIT_TOL
                and tv2[state] >= vs2[state] - 4 * params.epsilon - AUDIT_TOL)
    succ, att, esc = counters
    return CheckpointRecord(t, optimism, checked, value_optimism, accuracy, eps4,
                            int(known[live].sum()), succ, att, esc)


class PacMonitor:
    """Per-run monitor: escape tests on the hot path, audits at checkpoints."""

    def __init__(self, model: GameModel, params: PacParams, oracle=None):
        self.model = model
        self.params = params
        self.oracle = oracle
        self.report = compute_bounds(params, model.shape)
        self.limits = HardLimits.from_report(self.report)
        self.log = MonitorLog()
        self._threshold = 3.0 * params.epsilon_1
        self._gamma = model.gamma
        t = model.transition
        self._succ = [
            list(zip(t.indices[t.indptr[r]:t.indptr[r + 1]].tolist(), t.data[t.indptr[r]:t.indptr[r + 1]].tolist()))
            for r in range(model.n_profiles)
        ]
        self._r1 = model.reward_1.ravel().tolist()
        self._r2 = model.reward_2.ravel().tolist()
        self._last_known: Optional[np.ndarray] = None
        self._escape_since = False
        self._updates_since = False

    def escaped(self, learner, p: int) -> bool:
        """Escape test on flat profile ``p`` with the learner's current tables."""
        exp_1 = exp_2 = 0.0
        vals = learner._vals
        for s_next, prob in self._succ[p]:
            w = vals[s_next]
            w1, w2 = w if w is not None else learner.value(s_next)
            exp_1 += prob * w1
            exp_2 += prob * w2
        g = self._gamma
        return not (learner.q1[p] - self._r1[p] - g * exp_1 <= self._threshold
                    and learner.q2[p] - self._r2[p] - g * exp_2 <= self._threshold)

    def record(self, attempted: int, successful: int, escaped: bool) -> None:
        log = self.log
        log.attempted_updates += attempted
        log.successful_updates += successful
        if escaped:
            log.escape_events += 1
            self._escape_since = True
        if successful:
            self._updates_since = True
        lim = self.limits
        if (log.successful_updates > lim.successful or log.attempted_updates > lim.attempted
                or log.escape_events > lim.escapes):
            check_limits(log, lim)

    def checkpoint(self, learner, t: int, state: int) -> CheckpointRecord:
        model = self.model
        q = learner.snapshot()
        values = learner.stage_value_arrays()
        known = known_set_scan(model, q, self.params.epsilon_1, values)
        # the vectorized scan must agree with the scalar path used per step
        live_rows = np.flatnonzero(~model.terminal_mask.repeat(model.n_actions_1 * model.n_actions_2))
        scalar = np.ones(model.n_profiles, dtype=bool)
        for p in live_rows:
            scalar[p] = not self.escaped(learner, int(p))
        mismatches = int((scalar != known.ravel()).sum())
        third = 0
        if self._last_known is not None and not (self._escape_since or self._updates_since):
            third = int((self._last_known != known).sum())
        self._last_known = known
        self._escape_since = self._updates_since = False
        counters = (self.log.successful_updates, self.log.attempted_updates, self.log.escape_events)
        if self.oracle is None:
            rec = CheckpointRecord(t, 0, 0, 0, 0, True, int(known[~model.terminal_mask].sum()), *counters)
        else:
            rec = audit_checkpoint(model, q, self.oracle, self.params, learner.greedy_policy(), t, state,
                                   values, counters, known)
            if rec.optimism_violations:
                self.log.optimism_violations.append((t, rec.optimism_violations))
            if rec.accuracy_violations:
                self.log.accuracy_violations.append((t, rec.accuracy_violations))
            if not rec.eps4_ok:
                self.log.eps_or_better_violations.append(t)
        rec = CheckpointRecord(**{**rec.__dict__, "third_cause_changes": third, "scan_mismatches": mismatches})
        self.log.checkpoints.append(rec)
        return rec
