"""Low-rank NDPP kernels and the determinant evaluations used everywhere else.

The kernel is L = V^T V + B^T C B with V, B of shape (d, n) and C a
skew-symmetric (d, d) matrix. Nothing in this module ever forms the n x n
kernel; principal minors are built from the selected columns only and the
normalizer log det(L + I) is evaluated at d-scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "NdppError",
    "ShapeError",
    "SingularCError",
    "SingularSubsetError",
    "InvalidModelError",
    "ZERO_TOL",
    "SKEW_TOL",
    "NdppModel",
    "DetCounter",
    "as_subset",
    "det_columns",
    "f_det",
    "f_det_batch",
    "logdet_normalizer",
    "logdet_normalizer_factored",
    "validate_model",
    "block_skew",
    "random_model",
    "save_model",
    "load_model",
]

# Relative threshold below which a minor is reported as exactly zero.
ZERO_TOL = 1e-12
SKEW_TOL = 1e-12
# Condition number beyond which C is treated as singular.
C_COND_LIMIT = 1e12


class NdppError(Exception):
    """Base class for kernel-level failures."""


class ShapeError(NdppError, ValueError):
    pass


class SingularCError(NdppError):
    pass


class SingularSubsetError(NdppError):
    def __init__(self, message: str, cond: float = math.inf):
        super().__init__(f"{message} (cond={cond:.3g})")
        self.cond = cond


class InvalidModelError(NdppError, ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass
class NdppModel:
    """The triple (V, B, C).

    Arrays are copied to float64 on construction. Structural problems
    (wrong ndim, mismatched shapes) raise immediately; softer invariants
    such as skew-symmetry are reported by :func:`validate_model` so that
    broken models can still be inspected.
    """

    V: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.V = np.array(self.V, dtype=np.float64, ndmin=2)
        self.B = np.array(self.B, dtype=np.float64, ndmin=2)
        self.C = np.array(self.C, dtype=np.float64, ndmin=2)
        if self.V.ndim != 2 or self.B.ndim != 2 or self.C.ndim != 2:
            raise ShapeError("V, B and C must be 2-d arrays")
        if self.V.shape != self.B.shape:
            raise ShapeError(f"V {self.V.shape} and B {self.B.shape} differ in shape")
        d = self.V.shape[0]
        if self.C.shape != (d, d):
            raise ShapeError(f"C has shape {self.C.shape}, expected {(d, d)}")

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    def copy(self) -> "NdppModel":
        return NdppModel(self.V.copy(), self.B.copy(), self.C.copy())

    def columns(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        idx = list(indices)
        return self.V[:, idx], self.B[:, idx]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "V": self.V.ravel().tolist(),
            "B": self.B.ravel().tolist(),
            "C": self.C.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NdppModel":
        try:
            d, n = int(doc["d"]), int(doc["n"])
            V = np.asarray(doc["V"], dtype=np.float64)
            B = np.asarray(doc["B"], dtype=np.float64)
            C = np.asarray(doc["C"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidModelError([f"malformed model document: {exc}"]) from exc
        if V.size != d * n or B.size != d * n or C.size != d * d:
            raise ShapeError(f"array sizes do not match d={d}, n={n}")
        model = cls(V.reshape(d, n), B.reshape(d, n), C.reshape(d, d))
        problems = validate_model(model)
        if problems:
            raise InvalidModelError(problems)
        return model


@dataclass
class DetCounter:
    """Counts determinant evaluations within one run."""

    evaluations: int = 0

    def tick(self, amount: int = 1) -> None:
        self.evaluations += amount


def _skew_residual(C: np.ndarray) -> float:
    return float(np.max(np.abs(C + C.T))) if C.size else 0.0


def validate_model(model: NdppModel) -> list[str]:
    """Return a list of invariant violations; empty when the model is valid."""
    problems = []
    for name in ("V", "B", "C"):
        arr = getattr(model, name)
        if not np.all(np.isfinite(arr)):
            problems.append(f"{name} contains non-finite entries")
    if model.V.shape != model.B.shape:
        problems.append(f"shape mismatch: V {model.V.shape} vs B {model.B.shape}")
    if model.C.shape != (model.d, model.d):
        problems.append(f"C has shape {model.C.shape}, expected {(model.d, model.d)}")
    elif np.all(np.isfinite(model.C)):
        resid = _skew_residual(model.C)
        scale = float(np.max(np.abs(model.C))) if model.C.size else 0.0
        if resid > SKEW_TOL * (1.0 + scale):
            problems.append(f"C is not skew-symmetric (residual {resid:.3g})")
    return problems


def as_subset(indices: Iterable[int], n: int | None = None) -> list[int]:
    """Normalize to a strictly increasing list of distinct item ids."""
    out = sorted(int(i) for i in indices)
    for a, b in zip(out, out[1:]):
        if a == b:
            raise ValueError(f"duplicate item {a} in subset")
    if out and out[0] < 0:
        raise IndexError(f"negative item id {out[0]}")
    if n is not None and out and out[-1] >= n:
        raise IndexError(f"item id {out[-1]} out of range for n={n}")
    return out


def _kernel_minor(Vs: np.ndarray, Bs: np.ndarray, C: np.ndarray) -> np.ndarray:
    return Vs.T @ Vs + Bs.T @ (C @ Bs)


def _hadamard_scale(M: np.ndarray) -> float:
    # |det M| <= prod of column norms, so this is a natural magnitude reference.
    return float(np.prod(np.linalg.norm(M, axis=0)))


def det_columns(
    Vs: np.ndarray, Bs: np.ndarray, C: np.ndarray, counter: DetCounter | None = None
) -> float:
    """det(Vs^T Vs + Bs^T C Bs) for already-gathered columns.

    Values whose magnitude falls below ``ZERO_TOL`` times the Hadamard bound
    of the minor are returned as exactly 0.0.
    """
    if Vs.shape != Bs.shape or Vs.ndim != 2:
        raise ShapeError(f"column blocks have shapes {Vs.shape} and {Bs.shape}")
    if C.shape != (Vs.shape[0], Vs.shape[0]):
        raise ShapeError(f"C has shape {C.shape} but columns have d={Vs.shape[0]}")
    if counter is not None:
        counter.tick()
    if Vs.shape[1] == 0:
        return 1.0
    M = _kernel_minor(Vs, Bs, C)
    value = float(np.linalg.det(M))
    if abs(value) <= ZERO_TOL * _hadamard_scale(M):
        return 0.0
    return value


def f_det(model: NdppModel, S: Sequence[int], counter: DetCounter | None = None) -> float:
    """Principal minor det(L_S) of the low-rank kernel."""
    S = as_subset(S, model.n)
    Vs, Bs = model.columns(S)
    return det_columns(Vs, Bs, model.C, counter)


def f_det_batch(
    model: NdppModel, subsets: np.ndarray, counter: DetCounter | None = None
) -> np.ndarray:
    """Vectorized :func:`f_det` over an (m, s) integer array of subsets."""
    subsets = np.asarray(subsets, dtype=np.intp)
    if subsets.ndim != 2:
        raise ShapeError("subsets must be a 2-d array of item ids")
    m, s = subsets.shape
    if counter is not None:
        counter.tick(m)
    if s == 0:
        return np.ones(m)
    Vs = model.V.T[subsets]  # (m, s, d)
    Bs = model.B.T[subsets]
    # Rows of Vs/Bs are items: M[i, j] = v_i . v_j + b_i^T C b_j.
    M = Vs @ Vs.transpose(0, 2, 1) + (Bs @ model.C) @ Bs.transpose(0, 2, 1)
    values = np.linalg.det(M)
    scale = np.prod(np.linalg.norm(M, axis=1), axis=1)
    values[np.abs(values) <= ZERO_TOL * scale] = 0.0
    return values


def _check_C(C: np.ndarray) -> None:
    if C.shape[0] == 0:
        return
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > C_COND_LIMIT:
        raise SingularCError(f"C is singular or ill-conditioned (cond={cond:.3g})")


def logdet_normalizer_factored(V_sub: np.ndarray, B_sub: np.ndarray, C: np.ndarray) -> float:
    """log det(V^T V + B^T C B + I_s) evaluated with d x d factorizations only.

    Uses log det(I_d + V V^T) + log[det(C) det(C^{-1} + B X B^T)] where
    X = I_s - V^T (I_d + V V^T)^{-1} V. The product det(C) det(C^{-1} + ...)
    is combined in sign/log-magnitude form so that neither factor has to be
    positive on its own. X itself is never formed.
    """
    V_sub = np.asarray(V_sub, dtype=np.float64)
    B_sub = np.asarray(B_sub, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if V_sub.shape != B_sub.shape or C.shape != (V_sub.shape[0],) * 2:
        raise ShapeError("inconsistent shapes for factored normalizer")
    _check_C(C)
    d = V_sub.shape[0]
    inner = np.eye(d) + V_sub @ V_sub.T
    sign_v, logdet_v = np.linalg.slogdet(inner)
    BV = B_sub @ V_sub.T
    BXB = B_sub @ B_sub.T - BV @ np.linalg.solve(inner, BV.T)
    sign_c, logdet_c = np.linalg.slogdet(C)
    sign_w, logdet_w = np.linalg.slogdet(np.linalg.inv(C) + BXB)
    if sign_v <= 0 or sign_c * sign_w <= 0:
        raise NdppError("normalizer determinant is not positive")
    return float(logdet_v + logdet_c + logdet_w)


def logdet_normalizer(model: NdppModel) -> float:
    """log det(L + I_n) for the whole ground set, at O(n d^2) cost."""
    if model.n == 0:
        return 0.0
    return logdet_normalizer_factored(model.V, model.B, model.C)


def block_skew(d: int, rng: np.random.Generator, low: float = 0.5, high: float = 1.5) -> np.ndarray:
    """Block-diagonal skew matrix with 2x2 blocks [[0, l], [-l, 0]], l ~ U[low, high]."""
    if d % 2:
        raise ValueError(f"d must be even for an invertible skew C, got {d}")
    C = np.zeros((d, d))
    for j in range(0, d, 2):
        lam = rng.uniform(low, high)
        C[j, j + 1] = lam
        C[j + 1, j] = -lam
    return C


def random_model(
    n: int,
    d: int,
    rng: np.random.Generator,
    scale: float = 1.0,
    c_range: tuple[float, float] = (0.5, 1.5),
) -> NdppModel:
    std = scale / math.sqrt(d)
    V = rng.normal(0.0, std, size=(d, n))
    B = rng.normal(0.0, std, size=(d, n))
    C = block_skew(d, rng, *c_range)
    return NdppModel(V, B, C)


def save_model(model: NdppModel, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write model to {path}: {exc}") from exc


def load_model(path: str | Path) -> NdppModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read model from {path}: {exc}") from exc
    return NdppModel.from_dict(doc)
