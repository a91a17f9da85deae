"""Random model generators for property tests.

``random_model`` draws an unconstrained valid model. ``random_structured_model``
draws one satisfying A1-A6 by construction: IFR kernels come from tail-sum
profiles that are nonincreasing in the target state and nondecreasing in the
current state, and the failure kernel's tails are pushed up from the wait
kernel's so that H dominates Q.
"""

from __future__ import annotations

import numpy as np

from .model import Dimensions, ModelSpec
from .structure import tail_sums


def _stochastic_rows(rng, n_rows, n_cols):
    P = rng.random((n_rows, n_cols)) ** 2
    return P / P.sum(axis=1, keepdims=True)


def _from_tails(T: np.ndarray) -> np.ndarray:
    """Row pmfs from tail sums T[:, t] = P(X >= t), T[:, 0] = 1."""
    padded = np.concatenate([T, np.zeros((T.shape[0], 1))], axis=1)
    P = padded[:, :-1] - padded[:, 1:]
    return np.clip(P, 0.0, None)


def random_ifr_tails(rng, n: int) -> np.ndarray:
    """Tail profile of an IFR kernel on n states whose last state is absorbing."""
    X = rng.random((n, n - 1))
    X = np.maximum.accumulate(X[:, ::-1], axis=1)[:, ::-1]   # nonincreasing in t
    X = np.maximum.accumulate(X, axis=0)                     # nondecreasing in i
    T = np.ones((n, n))
    T[:, 1:] = X
    T[-1] = 1.0
    return T


def push_tails(rng, T: np.ndarray, max_shift: float = 0.5) -> np.ndarray:
    """Tails of a stochastically larger IFR kernel: T' = b + (1 - b) T, b nondecreasing in i."""
    b = np.sort(rng.random(T.shape[0]) * max_shift)
    out = b[:, None] + (1.0 - b[:, None]) * T
    out[:, 0] = 1.0
    out[-1] = 1.0
    return out


def _offers(rng, dims: Dimensions, structured: bool) -> np.ndarray:
    H, K = dims.H, dims.K
    out = np.zeros((H + 1, K + 1))
    if structured:
        base = rng.dirichlet(np.ones(K + 1))[:K] * rng.uniform(0.2, 1.0)
        scale = np.minimum.accumulate(rng.uniform(0.5, 1.0, H))
        real = base[None, :] * scale[:, None]
        out[:H, :K] = real
        out[:H, K] = 1.0 - real.sum(axis=1)
    else:
        out[:H] = _stochastic_rows(rng, H, K + 1)
    out[H, K] = 1.0
    return out


def _reverse_cumsum(X, axes):
    for ax in axes:
        X = np.flip(np.cumsum(np.flip(X, ax), axis=ax), ax)
    return X


def random_model(rng, dims: Dimensions, discount: float = 0.9) -> ModelSpec:
    """Any valid model, no structural assumptions."""
    H, K, M = dims.H, dims.K, dims.M
    kernel = np.zeros((2, H + 1, H + 1))
    for i in range(2):
        kernel[i, :H] = _stochastic_rows(rng, H, H + 1)
        kernel[i, H, H] = 1.0
    c = rng.uniform(0.0, 2.0, H + 1)
    c[H] = 0.0
    r = rng.uniform(0.0, 20.0, (H + 1, K, M))
    r[H] = 0.0
    return ModelSpec(
        dims=dims,
        discount=discount,
        wait_kernel=kernel[0],
        fail_kernel=kernel[1],
        offer_pmf=_offers(rng, dims, False),
        mismatch_pmf=rng.dirichlet(np.ones(M)),
        fail_prob=rng.uniform(0.0, 0.9, (H + 1, K, M)),
        wait_reward=c,
        transplant_reward=r,
    )


def random_structured_model(rng, dims: Dimensions, discount: float = 0.9) -> ModelSpec:
    """A model satisfying A1-A6 by construction."""
    H, K, M = dims.H, dims.K, dims.M
    n = H + 1
    T_wait = random_ifr_tails(rng, n)
    T_fail = push_tails(rng, T_wait)

    c = _reverse_cumsum(rng.exponential(0.3, H), [0])
    r = _reverse_cumsum(rng.exponential(1.0, (H, K, M)), [0, 1, 2])
    F = np.cumsum(np.cumsum(np.cumsum(rng.exponential(1.0, (H, K, M)), 0), 1), 2)
    F = F / F.max() * rng.uniform(0.0, 0.9)
    fail_prob = np.concatenate([F, F[-1:]], axis=0)
    return ModelSpec(
        dims=dims,
        discount=discount,
        wait_kernel=_from_tails(T_wait),
        fail_kernel=_from_tails(T_fail),
        offer_pmf=_offers(rng, dims, True),
        mismatch_pmf=rng.dirichlet(np.ones(M)),
        fail_prob=fail_prob,
        wait_reward=np.append(c, 0.0),
        transplant_reward=np.concatenate([r, np.zeros((1, K, M))]),
    )


def offer_dominated_pair(rng, dims: Dimensions, discount: float = 0.9) -> tuple[ModelSpec, ModelSpec]:
    """(model 1, model 2) where model 2 sees fewer offers: K1 dominates K2."""
    s1 = random_structured_model(rng, dims, discount)
    keep = rng.uniform(0.2, 1.0)
    K = dims.K
    offers = s1.offer_pmf.copy()
    offers[:dims.H, :K] *= keep
    offers[:dims.H, K] = 1.0 - offers[:dims.H, :K].sum(axis=1)
    return s1, s1.replace(offer_pmf=offers)


def transition_dominated_pair(rng, dims: Dimensions, discount: float = 0.9) -> tuple[ModelSpec, ModelSpec]:
    """(model 1, model 2) where model 2's patient worsens faster under both kernels."""
    s1 = random_structured_model(rng, dims, discount)
    b = np.sort(rng.random(dims.H + 1) * 0.5)

    def worsen(P):
        T = tail_sums(P)
        T2 = b[:, None] + (1.0 - b[:, None]) * T
        T2[:, 0] = 1.0
        T2[-1] = 1.0
        return _from_tails(T2)

    return s1, s1.replace(wait_kernel=worsen(s1.wait_kernel), fail_kernel=worsen(s1.fail_kernel))
