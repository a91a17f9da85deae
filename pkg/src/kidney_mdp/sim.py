"""Monte Carlo evaluation of a stationary policy.

Trajectories are simulated in fixed-size blocks. Block ``b`` draws from its
own generator seeded by ``(seed, b)``, so results do not depend on how many
workers run the blocks or in what order they finish.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelSpec, Policy

log = logging.getLogger(__name__)

BLOCK_SIZE = 8192
DEFAULT_HORIZON_CAP = 4000
DEFAULT_BIAS_BOUND = 1e-6
THREADS_ENV = "KIDNEY_MDP_THREADS"

SUCCESS, DEATH, CAPPED = 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    """``start_state`` is a 1-based (h, k, m) or a patient state h alone, in
    which case the first offer and mismatch are drawn from the model."""

    n_trajectories: int = 100_000
    horizon_cap: int = DEFAULT_HORIZON_CAP
    seed: int = 0
    start_state: tuple[int, int, int] | int = (1, 1, 1)
    log_path: str | Path | None = None
    log_limit: int = 1000


@dataclass
class SimResult:
    mean: float
    std_error: float
    n: int
    success_fraction: float
    death_fraction: float
    capped_fraction: float
    bias_bound: float
    returns: np.ndarray

    def to_dict(self):
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n": self.n,
            "success_fraction": self.success_fraction,
            "death_fraction": self.death_fraction,
            "capped_fraction": self.capped_fraction,
            "bias_bound": self.bias_bound,
        }


def truncation_bias(spec: ModelSpec, horizon_cap: int) -> float:
    """Upper bound on the reward lost by stopping after ``horizon_cap`` epochs."""
    lam = spec.discount
    top = max(float(spec.transplant_reward.max()), float(spec.wait_reward.max()))
    if lam >= 1.0:
        return float("inf")
    return lam ** horizon_cap * top / (1.0 - lam)


def horizon_for_bias(spec: ModelSpec, bias: float = DEFAULT_BIAS_BOUND) -> int:
    """Smallest cap whose truncation bias is below ``bias``."""
    lam = spec.discount
    top = max(float(spec.transplant_reward.max()), float(spec.wait_reward.max()))
    if top == 0 or lam == 0:
        return 1
    return max(1, int(np.ceil(np.log(bias * (1.0 - lam) / top) / np.log(lam))))


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling; ``cum`` rows are cumulative pmfs, one per sample."""
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


class _Block:
    def __init__(self, spec: ModelSpec, policy: Policy, cfg: SimConfig, start: int, size: int):
        self.spec, self.policy, self.cfg = spec, policy, cfg
        self.start, self.size = start, size
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(start // BLOCK_SIZE,)))
        self.records: list[tuple] = []

    def run(self):
        spec, cfg, rng, n = self.spec, self.cfg, self.rng, self.size
        H, K = spec.dims.H, spec.dims.K
        lam = spec.discount
        cum_wait = np.cumsum(spec.wait_kernel, axis=1)
        cum_fail = np.cumsum(spec.fail_kernel, axis=1)
        cum_offer = np.cumsum(spec.offer_pmf, axis=1)
        cum_mm = np.cumsum(spec.mismatch_pmf)
        accept = self.policy.accept

        if isinstance(cfg.start_state, (int, np.integer)):
            h = np.full(n, int(cfg.start_state) - 1)
            k = _draw(cum_offer[h], rng.random(n))
            m = _draw(np.broadcast_to(cum_mm, (n, cum_mm.size)), rng.random(n))
        else:
            h0, k0, m0 = cfg.start_state
            h, k, m = np.full(n, h0 - 1), np.full(n, k0 - 1), np.full(n, m0 - 1)

        total = np.zeros(n)
        outcome = np.zeros(n, dtype=np.int8)
        outcome[h == H] = DEATH
        logging_on = cfg.log_path is not None
        log_rows = max(0, min(n, cfg.log_limit - self.start)) if logging_on else 0
        disc = 1.0
        for epoch in range(cfg.horizon_cap):
            live = np.flatnonzero(outcome == 0)
            if not live.size:
                break
            u_fail, u_h, u_k, u_m = rng.random((4, live.size))
            hl, kl, ml = h[live], k[live], m[live]
            offered = kl < K
            act = np.zeros(live.size, dtype=bool)
            act[offered] = accept[hl[offered], kl[offered], ml[offered]]
            failed = act & (u_fail < spec.fail_prob[hl, np.minimum(kl, K - 1), ml])
            success = act & ~failed
            reward = np.where(
                success,
                spec.transplant_reward[hl, np.minimum(kl, K - 1), ml],
                spec.wait_reward[hl],
            )
            total[live] += disc * reward

            cum = np.where(failed[:, None], cum_fail[hl], cum_wait[hl])
            h_next = _draw(cum, u_h)
            k_next = _draw(cum_offer[h_next], u_k)
            m_next = _draw(np.broadcast_to(cum_mm, (live.size, cum_mm.size)), u_m)

            new_outcome = np.where(success, SUCCESS, np.where(h_next == H, DEATH, 0))
            if log_rows:
                self._log(epoch, live, hl, kl, ml, act, success, failed, new_outcome, reward, log_rows)
            outcome[live] = new_outcome
            h[live], k[live], m[live] = h_next, k_next, m_next
            disc *= lam
        outcome[outcome == 0] = CAPPED
        return total, outcome

    def _log(self, epoch, live, hl, kl, ml, act, success, failed, new_outcome, reward, limit):
        for j in np.flatnonzero(live < limit):
            if success[j]:
                event = "transplant_success"
            elif failed[j]:
                event = "transplant_failure"
            else:
                event = "death" if new_outcome[j] == DEATH else "wait"
            self.records.append((
                self.start + int(live[j]), epoch, int(hl[j]) + 1, int(kl[j]) + 1, int(ml[j]) + 1,
                "T" if act[j] else "W", event, float(reward[j]),
            ))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def simulate(spec: ModelSpec, policy: Policy, cfg: SimConfig = SimConfig()) -> SimResult:
    """Estimate the discounted return of ``policy`` from ``cfg.start_state``."""
    policy.check_dims(spec.dims)
    H, K, M = spec.dims.H, spec.dims.K, spec.dims.M
    s = cfg.start_state
    if isinstance(s, (int, np.integer)):
        if not 1 <= s <= H + 1:
            raise ValueError(f"start patient state {s} out of range")
    elif not (1 <= s[0] <= H + 1 and 1 <= s[1] <= K + 1 and 1 <= s[2] <= M):
        raise ValueError(f"start state {s} out of range")
    if cfg.n_trajectories < 1:
        raise ValueError("need at least one trajectory")

    blocks = [
        _Block(spec, policy, cfg, start, min(BLOCK_SIZE, cfg.n_trajectories - start))
        for start in range(0, cfg.n_trajectories, BLOCK_SIZE)
    ]
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(_Block.run, blocks))
    else:
        results = [b.run() for b in blocks]

    returns = np.concatenate([r[0] for r in results])
    outcomes = np.concatenate([r[1] for r in results])
    n = returns.size
    se = float(returns.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    if cfg.log_path is not None:
        with open(cfg.log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trajectory", "epoch", "h", "k", "m", "action", "event", "reward"])
            for b in blocks:
                w.writerows(b.records)

    bias = truncation_bias(spec, cfg.horizon_cap)
    if bias > DEFAULT_BIAS_BOUND:
        log.warning("horizon cap %d leaves a truncation bias up to %.3g", cfg.horizon_cap, bias)
    return SimResult(
        mean=float(returns.mean()),
        std_error=se,
        n=n,
        success_fraction=float(np.mean(outcomes == SUCCESS)),
        death_fraction=float(np.mean(outcomes == DEATH)),
        capped_fraction=float(np.mean(outcomes == CAPPED)),
        bias_bound=bias,
        returns=returns,
    )
