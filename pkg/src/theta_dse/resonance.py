"""The policy improvement engine: sample, evaluate, scalarize, update, decay.

One improvement cycle snapshots the current policy, samples a batch of
designs, scores them through the environment, turns objective metrics into
scalar rewards (anomalies get a dynamically shaped penalty), refreshes the
running-reward baseline, and then takes several proximal surrogate-loss steps
on the policy parameters before decaying the entropy coefficient.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .design_space import DesignSpace
from .diffcore import Adam, Tensor
from .envs import Environment, EvalResult, scalarize
from .errors import ConfigurationError
from .policy import (
    PolicyNet,
    PolicyOutput,
    PolicySnapshot,
    alpha_weights,
    batch_log_probs,
    forward_policy,
    normalize_alpha_mode,
    sample_designs,
)
from .trace import RunTrace, TraceRow, TraceWriter

log = logging.getLogger(__name__)

LOG_RATIO_CLAMP = 30.0


@dataclass(frozen=True)
class HyperParams:
    """Every scalar the engine consumes.

    Defaults: the 8/8/4 batch/mini-batch/epoch shape is fixed; the remaining
    values were chosen by sweeping the synthetic dimensional benchmarks (see
    the bench presets) before any expensive exploration runs.
    """

    objective_weights: dict[str, float] | None = None
    alpha_renew: float = 0.3
    beta_kl: float = 1.0
    beta_e0: float = 0.05
    beta_min: float = 0.0
    r_decay: float = 0.999
    alpha_anomaly: float = 0.1
    batch_size: int = 8
    minibatch_size: int = 8
    epochs: int = 4
    learning_rate: float = 3e-3
    alpha_i_mode: str = "uniform_one"
    max_evaluations: int = 10_000

    def validate(self) -> "HyperParams":
        if not 0.0 < self.alpha_renew <= 1.0:
            raise ConfigurationError("alpha_renew must be in (0, 1]")
        if self.beta_kl < 0 or self.beta_e0 < 0 or self.beta_min < 0:
            raise ConfigurationError("beta coefficients must be nonnegative")
        if self.beta_min > self.beta_e0:
            raise ConfigurationError("beta_min must not exceed beta_e0")
        if not 0.0 < self.r_decay <= 1.0:
            raise ConfigurationError("r_decay must be in (0, 1]")
        if self.alpha_anomaly < 0:
            raise ConfigurationError("alpha_anomaly must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if not 1 <= self.minibatch_size <= self.batch_size:
            raise ConfigurationError("minibatch_size must be in [1, batch_size]")
        if self.batch_size % self.minibatch_size != 0:
            raise ConfigurationError("minibatch_size must divide batch_size")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.max_evaluations < 1:
            raise ConfigurationError("max_evaluations must be >= 1")
        return replace(self, alpha_i_mode=normalize_alpha_mode(self.alpha_i_mode))

    @staticmethod
    def from_dict(raw: dict) -> "HyperParams":
        try:
            return HyperParams(**raw).validate()
        except TypeError as e:
            raise ConfigurationError(f"bad hyperparameter config: {e}") from None


@dataclass
class RunningState:
    """Mutable per-run engine state."""

    running_reward: float = 0.0
    initialized: bool = False
    beta_e_current: float = 0.0
    cycle_index: int = 0
    best_reward: float = float("-inf")
    best_design: tuple[int, ...] | None = None
    evaluations_used: int = 0


@dataclass
class SampleBatch:
    """One evaluated batch with finalized rewards and old-policy log-probs."""

    designs: list[tuple[int, ...]]
    results: list[EvalResult]
    rewards: np.ndarray
    anomaly_flags: np.ndarray
    old_log_probs: np.ndarray

    @property
    def size(self) -> int:
        return len(self.designs)


def weighted_reward(objectives: dict[str, float], weights: dict[str, float] | None) -> float:
    """Scalar reward as the weighted sum of objective metrics (maximization)."""
    return scalarize(objectives, weights)


def update_running_reward(state: RunningState, batch_mean: float, alpha_renew: float) -> float:
    state.running_reward = alpha_renew * batch_mean + (1.0 - alpha_renew) * state.running_reward
    return state.running_reward


def advantages(rewards: Sequence[float], running_reward: float) -> np.ndarray:
    return np.asarray(rewards, dtype=np.float64) - running_reward


def anomaly_reward(batch_ok_rewards: Sequence[float], running_reward: float,
                   alpha_anomaly: float) -> float:
    """Penalty reward for designs the evaluator could not score."""
    ok = np.asarray(batch_ok_rewards, dtype=np.float64)
    if ok.size == 0:
        log.warning("every sample in the batch was anomalous; using the fallback penalty")
        return running_reward - alpha_anomaly * max(abs(running_reward), 1.0)
    mean = float(ok.mean())
    penalty = alpha_anomaly * abs(mean)
    return min(mean - penalty, running_reward - penalty)


def decay_entropy_beta(state: RunningState, hp: HyperParams) -> float:
    state.beta_e_current = max(hp.beta_min, state.beta_e_current * hp.r_decay)
    return state.beta_e_current


def _alpha_row(space: DesignSpace, mode: str) -> np.ndarray:
    alpha = alpha_weights(space, mode)
    row = np.empty(space.total_width)
    for a, (off, length) in zip(alpha, space.output_layout().segments):
        row[off:off + length] = a
    return row.reshape(1, -1)


def surrogate_loss(
    net: PolicyNet,
    old: PolicySnapshot,
    designs: Sequence[Sequence[int]],
    advantage_values: np.ndarray,
    old_log_probs: np.ndarray,
    hp: HyperParams,
    beta_e: float,
    alpha_row: np.ndarray | None = None,
) -> tuple[Tensor, PolicyOutput, dict[str, float]]:
    """Total statistical risk for one mini-batch.

    Three terms: the clipped-ratio update loss against the frozen advantages,
    the reverse-KL penalty pulling the new per-dimension distributions toward
    the snapshot, and the (negative) weighted-entropy bonus.
    """
    if len(designs) == 0:
        raise ConfigurationError("surrogate_loss needs a non-empty mini-batch")
    if alpha_row is None:
        alpha_row = _alpha_row(net.space, hp.alpha_i_mode)
    out = forward_policy(net)

    log_ratio = dc.sub(batch_log_probs(out, designs), Tensor(old_log_probs))
    ratio = dc.exp(dc.clip(log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    loss_u = dc.scale(dc.tmean(dc.mul(ratio, Tensor(advantage_values))), -1.0)

    old_row = Tensor(old.log_prob_row_values.reshape(1, -1))
    kl_total = dc.tsum(dc.mul(out.prob_row, dc.sub(out.log_prob_row, old_row)))
    loss_kl = dc.scale(kl_total, hp.beta_kl)

    weighted_plogp = dc.mul(Tensor(alpha_row), dc.mul(out.prob_row, out.log_prob_row))
    loss_e = dc.scale(dc.tsum(weighted_plogp), beta_e)

    total = dc.add(dc.add(loss_u, loss_e), loss_kl)
    diag = {
        "loss_u": loss_u.item(),
        "loss_kl": loss_kl.item(),
        "loss_e": loss_e.item(),
        "loss_total": total.item(),
    }
    return total, out, diag


def _finalize_rewards(
    designs: list[tuple[int, ...]],
    results: list[EvalResult],
    weights: dict[str, float] | None,
    state: RunningState,
    hp: HyperParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Scalarize objectives, then replace anomalies with the shaped penalty."""
    n = len(designs)
    rewards = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    for b, res in enumerate(results):
        if res.is_anomaly:
            flags[b] = True
            continue
        try:
            rewards[b] = weighted_reward(res.objectives, weights)
        except KeyError as e:
            log.warning("sample %d missing objective %s; treated as anomaly", b, e)
            flags[b] = True
    ok = rewards[~flags]
    if flags.any():
        baseline = state.running_reward if state.initialized else (
            float(ok.mean()) if ok.size else 0.0
        )
        rewards[flags] = anomaly_reward(ok, baseline, hp.alpha_anomaly)
    return rewards, flags


def train(
    space: DesignSpace,
    net: PolicyNet,
    env: Environment,
    hp: HyperParams,
    seed: int,
    trace_path=None,
) -> RunTrace:
    """Run improvement cycles until the evaluation budget is spent.

    The trace is flushed row by row so an aborted run leaves a usable prefix.
    """
    hp = hp.validate()
    rng = np.random.default_rng(seed)
    optimizer = Adam(net.parameters(), learning_rate=hp.learning_rate)
    alpha_row = _alpha_row(space, hp.alpha_i_mode)
    state = RunningState(beta_e_current=hp.beta_e0)
    trace = RunTrace(seed=seed, method="resonance")
    writer = TraceWriter(trace_path)
    try:
        while state.evaluations_used + hp.batch_size <= hp.max_evaluations:
            with dc.no_grad():
                snapshot = forward_policy(net).snapshot()
            designs = sample_designs(snapshot, hp.batch_size, rng)
            results = env.evaluate_batch(designs)

            rewards, flags = _finalize_rewards(designs, results, hp.objective_weights, state, hp)
            batch_mean = float(rewards.mean())
            if state.initialized:
                update_running_reward(state, batch_mean, hp.alpha_renew)
            else:
                state.running_reward = batch_mean
                state.initialized = True
            adv = advantages(rewards, state.running_reward)

            for b in range(hp.batch_size):
                if not flags[b] and rewards[b] > state.best_reward:
                    state.best_reward = float(rewards[b])
                    state.best_design = designs[b]
            state.evaluations_used += hp.batch_size

            old_row = snapshot.log_prob_row_values
            offsets = np.array([off for off, _ in space.output_layout().segments])
            positions = offsets[None, :] + np.asarray(designs, dtype=np.intp)
            old_blp = old_row[positions].sum(axis=1)

            batch = SampleBatch(designs, results, rewards, flags, old_blp)
            diag_sums = {"loss_u": 0.0, "loss_kl": 0.0, "loss_e": 0.0}
            updates = 0
            for _ in range(hp.epochs):
                perm = rng.permutation(hp.batch_size)
                for start in range(0, hp.batch_size, hp.minibatch_size):
                    idx = perm[start:start + hp.minibatch_size]
                    loss, _, diag = surrogate_loss(
                        net,
                        snapshot,
                        [batch.designs[i] for i in idx],
                        adv[idx],
                        batch.old_log_probs[idx],
                        hp,
                        state.beta_e_current,
                        alpha_row,
                    )
                    loss.backward()
                    optimizer.step()
                    for k in diag_sums:
                        diag_sums[k] += diag[k]
                    updates += 1

            beta_e_used = state.beta_e_current
            decay_entropy_beta(state, hp)
            row = TraceRow(
                cycle=state.cycle_index,
                evaluations=state.evaluations_used,
                batch_mean_reward=batch_mean,
                running_reward=state.running_reward,
                best_reward=state.best_reward,
                beta_e=beta_e_used,
                loss_u=diag_sums["loss_u"] / updates,
                loss_kl=diag_sums["loss_kl"] / updates,
                loss_e=diag_sums["loss_e"] / updates,
                anomaly_count=int(flags.sum()),
            )
            trace.append(row)
            writer.write_row(row)
            state.cycle_index += 1
    except Exception as e:
        trace.aborted = f"{type(e).__name__}: {e}"
        trace.best_reward = state.best_reward
        trace.best_design = state.best_design
        trace.evaluations_used = state.evaluations_used
        raise
    finally:
        writer.close()
    trace.best_reward = state.best_reward
    trace.best_design = state.best_design
    trace.evaluations_used = state.evaluations_used
    return trace


def final_policy_snapshot(net: PolicyNet) -> PolicySnapshot:
    with dc.no_grad():
        return forward_policy(net).snapshot()
