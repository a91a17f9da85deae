"""Data model for the kidney acceptance MDP.

Index convention
----------------
External formats (JSON, CSV, reports) use 1-based indices. Internally every
array is 0-based, so patient state ``h`` lives at row ``h - 1``; the death
state ``H + 1`` is the last row, and the no-offer state ``K + 1`` is the last
column of ``offer_pmf`` and of value tensors.

Array shapes for ``Dimensions(H, K, M)``::

    wait_kernel        (H+1, H+1)   row = current h, column = next h
    fail_kernel        (H+1, H+1)
    offer_pmf          (H+1, K+1)   row = h, column = k
    mismatch_pmf       (M,)
    fail_prob          (H+1, K, M)
    wait_reward        (H+1,)
    transplant_reward  (H+1, K, M)
    value tensors      (H+1, K+1, M)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

ROW_SUM_TOL = 1e-9

WAIT = 0
TRANSPLANT = 1
ACTION_LABELS = ("W", "T")


class SchemaError(ValueError):
    """Raised when a serialized model does not match the ModelSpec schema."""


@dataclass(frozen=True)
class Dimensions:
    H: int
    K: int
    M: int

    def __post_init__(self):
        for name in ("H", "K", "M"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def value_shape(self) -> tuple[int, int, int]:
        return (self.H + 1, self.K + 1, self.M)

    @property
    def decision_shape(self) -> tuple[int, int, int]:
        return (self.H, self.K, self.M)

    def to_dict(self) -> dict:
        return {"H": self.H, "K": self.K, "M": self.M}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full description of one kidney acceptance MDP (0-based arrays)."""

    dims: Dimensions
    discount: float
    wait_kernel: np.ndarray
    fail_kernel: np.ndarray
    offer_pmf: np.ndarray
    mismatch_pmf: np.ndarray
    fail_prob: np.ndarray
    wait_reward: np.ndarray
    transplant_reward: np.ndarray

    def __post_init__(self):
        d = self.dims
        expected = {
            "wait_kernel": (d.H + 1, d.H + 1),
            "fail_kernel": (d.H + 1, d.H + 1),
            "offer_pmf": (d.H + 1, d.K + 1),
            "mismatch_pmf": (d.M,),
            "fail_prob": (d.H + 1, d.K, d.M),
            "wait_reward": (d.H + 1,),
            "transplant_reward": (d.H + 1, d.K, d.M),
        }
        for name, shape in expected.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise SchemaError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    def replace(self, **changes) -> "ModelSpec":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return ModelSpec(**fields)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": self.dims.to_dict(),
            "discount": self.discount,
            "wait_kernel": self.wait_kernel.tolist(),
            "fail_kernel": self.fail_kernel.tolist(),
            "offer_pmf": self.offer_pmf.tolist(),
            "mismatch_pmf": self.mismatch_pmf.tolist(),
            "fail_prob": self.fail_prob.tolist(),
            "wait_reward": self.wait_reward.tolist(),
            "transplant_reward": self.transplant_reward.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelSpec":
        """Build a spec from its JSON form, rejecting anything off-schema.

        Row sums are checked on load, so a returned spec is always usable by
        the solver; the remaining invariants are reported by
        :func:`validate_model`.
        """
        required = (
            "dims", "discount", "wait_kernel", "fail_kernel", "offer_pmf",
            "mismatch_pmf", "fail_prob", "wait_reward", "transplant_reward",
        )
        if not isinstance(data, dict):
            raise SchemaError("model document must be a JSON object")
        missing = [key for key in required if key not in data]
        if missing:
            raise SchemaError(f"missing fields: {', '.join(missing)}")
        try:
            dims = Dimensions(**{k: int(data["dims"][k]) for k in ("H", "K", "M")})
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad dims: {exc}") from exc
        arrays = {}
        for key in required[2:]:
            try:
                arrays[key] = np.array(data[key], dtype=float)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{key} is not a numeric array: {exc}") from exc
            if not np.all(np.isfinite(arrays[key])):
                raise SchemaError(f"{key} contains non-finite entries")
        try:
            discount = float(data["discount"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad discount: {exc}") from exc
        spec = cls(dims=dims, discount=discount, **arrays)
        bad = [v for v in validate_model(spec).violations if v.code == "row_sum"]
        if bad:
            raise SchemaError("; ".join(v.message for v in bad))
        return spec

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    index: tuple = ()


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check every ModelSpec invariant and list the violated ones.

    Indices in the returned messages are 1-based.
    """
    d = spec.dims
    out: list[Violation] = []

    def add(code, message, index=()):
        out.append(Violation(code, message, tuple(int(i) for i in index)))

    if not 0.0 <= spec.discount <= 1.0:
        add("discount", f"discount {spec.discount} outside [0, 1]")

    for name in ("wait_kernel", "fail_kernel", "offer_pmf"):
        arr = getattr(spec, name)
        for i in np.argwhere(arr < 0):
            add("negative", f"{name}[{i[0] + 1}, {i[1] + 1}] is negative", i + 1)
        for i, s in enumerate(arr.sum(axis=1)):
            if abs(s - 1.0) > ROW_SUM_TOL:
                add("row_sum", f"{name} row {i + 1} sums to {s!r}, not 1", (i + 1,))
    if np.any(spec.mismatch_pmf < 0):
        add("negative", "mismatch_pmf has negative entries")
    s = spec.mismatch_pmf.sum()
    if abs(s - 1.0) > ROW_SUM_TOL:
        add("row_sum", f"mismatch_pmf sums to {s!r}, not 1")

    H, K = d.H, d.K
    if np.any(spec.wait_kernel[H, :H] != 0) or spec.wait_kernel[H, H] != 1:
        add("death_absorbing", "death state is not absorbing in wait_kernel", (H + 1,))
    if spec.offer_pmf[H, K] != 1:
        add("offer_after_death", "offer_pmf must put all mass on no-offer after death", (H + 1,))
    if spec.wait_reward[H] != 0:
        add("death_wait_reward", "wait reward at death nonzero", (H + 1,))
    if np.any(spec.transplant_reward[H] != 0):
        add("death_terminal_reward", "terminal reward at death nonzero", (H + 1,))

    for i in np.argwhere((spec.fail_prob < 0) | (spec.fail_prob >= 1)):
        add("fail_prob", f"fail_prob{tuple(int(x) + 1 for x in i)} outside [0, 1)", i + 1)
    for i in np.argwhere(spec.wait_reward < 0):
        add("negative", f"wait_reward[{i[0] + 1}] is negative", i + 1)
    for i in np.argwhere(spec.transplant_reward < 0):
        add("negative", f"transplant_reward{tuple(int(x) + 1 for x in i)} is negative", i + 1)
    return ValidationReport(out)


@dataclass(eq=False)
class Policy:
    """Stationary acceptance policy over the decision states.

    ``accept[h-1, k-1, m-1]`` is True when the action at (h, k, m) is T.
    States with k = K+1 or h = H+1 are not stored: only W is feasible there.
    ``ties`` marks states where both actions are optimal (A* = {W, T}).
    """

    accept: np.ndarray
    ties: np.ndarray | None = None

    def __post_init__(self):
        self.accept = np.asarray(self.accept, dtype=bool)
        if self.accept.ndim != 3:
            raise ValueError(f"accept table must be 3-d (H, K, M), got shape {self.accept.shape}")
        if self.ties is not None:
            self.ties = np.asarray(self.ties, dtype=bool)
            if self.ties.shape != self.accept.shape:
                raise ValueError("ties table shape differs from accept table")

    @property
    def dims(self) -> Dimensions:
        return Dimensions(*self.accept.shape)

    @classmethod
    def always_wait(cls, dims: Dimensions) -> "Policy":
        return cls(np.zeros(dims.decision_shape, dtype=bool))

    @classmethod
    def always_transplant(cls, dims: Dimensions) -> "Policy":
        return cls(np.ones(dims.decision_shape, dtype=bool))

    def action(self, h: int, k: int, m: int) -> str:
        """Action label at a 1-based state."""
        H, K, _ = self.accept.shape
        if h > H or k > K:
            return "W"
        return ACTION_LABELS[int(self.accept[h - 1, k - 1, m - 1])]

    def optimal_actions(self, h: int, k: int, m: int) -> set[str]:
        a = self.action(h, k, m)
        H, K, _ = self.accept.shape
        if self.ties is not None and h <= H and k <= K and self.ties[h - 1, k - 1, m - 1]:
            return {"W", "T"}
        return {a}

    def check_dims(self, dims: Dimensions) -> None:
        if self.accept.shape != dims.decision_shape:
            raise ValueError(
                f"policy shape {self.accept.shape} does not match model {dims.decision_shape}"
            )

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return np.array_equal(self.accept, other.accept)


@dataclass(eq=False)
class Solution:
    """Output of value iteration.

    ``Q_fn`` has shape (H+1, K+1, M, 2) with the last axis (W, T); T entries
    are NaN where transplanting is infeasible.
    """

    spec: ModelSpec
    V: np.ndarray
    v: np.ndarray
    U: np.ndarray
    W_agg: np.ndarray
    Q_fn: np.ndarray
    policy: Policy
    iterations: int
    residual: float
    error_bound: float
    converged: bool
    residuals: list[float] = field(default_factory=list, repr=False)


def aggregates(spec: ModelSpec, V: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (v, U, W) for a value tensor.

    U(h,k) averages over mismatch, W(h,m) over offers, and v(h) over both.
    """
    U = V @ spec.mismatch_pmf
    W = np.einsum("hk,hkm->hm", spec.offer_pmf, V)
    v = np.einsum("hk,hk->h", spec.offer_pmf, U)
    return v, U, W
