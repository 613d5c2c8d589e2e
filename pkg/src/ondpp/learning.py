"""Single-pass online learning of (V, B, C) from a stream of baskets.

Each arriving basket S_t contributes the per-step objective

    psi_t = log det(M) - log det(M + I) - alpha_R sum ||v_i||^2 - beta_R sum ||b_i||^2

with M = V_S^T V_S + B_S^T C B_S restricted to the basket's columns. Only
those columns and C are touched by an update, and all temporaries are
|S_t| x |S_t| or d x d, so a step costs O(d^3 + |S_t|^3) regardless of how
many baskets came before.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import (
    C_COND_LIMIT,
    InvalidModelError,
    NdppModel,
    ShapeError,
    SingularCError,
    SingularSubsetError,
    as_subset,
    block_skew,
    f_det_batch,
    logdet_normalizer,
    validate_model,
)

logger = logging.getLogger(__name__)

MAX_EXACT_N = 15


@dataclass
class LearningConfig:
    d: int
    eta: float = 1e-3
    reg_alpha: float = 0.01
    reg_beta: float = 0.01
    init_scale: float = 1.0
    c_block_range: tuple[float, float] = (0.5, 1.5)
    decay: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ValueError(f"embedding dimension d must be a positive even integer, got {self.d}")
        for name in ("eta", "reg_alpha", "reg_beta", "init_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        low, high = self.c_block_range
        if not 0 < low <= high:
            raise ValueError(f"invalid C block range {self.c_block_range}")


@dataclass
class GradientTriple:
    dV: np.ndarray
    dB: np.ndarray
    dC: np.ndarray

    def __add__(self, other: "GradientTriple") -> "GradientTriple":
        return GradientTriple(self.dV + other.dV, self.dB + other.dB, self.dC + other.dC)

    def __sub__(self, other: "GradientTriple") -> "GradientTriple":
        return GradientTriple(self.dV - other.dV, self.dB - other.dB, self.dC - other.dC)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.dV)) and np.all(np.isfinite(self.dB))
                    and np.all(np.isfinite(self.dC)))


def _minor(Vs: np.ndarray, Bs: np.ndarray, C: np.ndarray) -> np.ndarray:
    return Vs.T @ Vs + Bs.T @ C @ Bs


def _checked_inverse(M: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > C_COND_LIMIT:
        raise SingularSubsetError(f"{what} is singular", cond)
    return np.linalg.inv(M)


def grad_first_term(Vs: np.ndarray, Bs: np.ndarray, C: np.ndarray) -> GradientTriple:
    """Gradient of log det(Vs^T Vs + Bs^T C Bs).

    M is not symmetric, so both M^{-1} and M^{-T} appear; the familiar
    2 V M^{-1} form only holds when the skew part vanishes.
    """
    M = _minor(Vs, Bs, C)
    if np.linalg.det(M) <= 0:
        raise SingularSubsetError("basket minor has non-positive determinant", np.linalg.cond(M))
    Mi = _checked_inverse(M, "basket minor")
    return GradientTriple(
        dV=Vs @ (Mi + Mi.T),
        dB=C @ Bs @ (Mi - Mi.T),
        dC=Bs @ Mi.T @ Bs.T,
    )


def grad_Z(Vs: np.ndarray, Bs: np.ndarray, C: np.ndarray) -> GradientTriple:
    """Gradient of Z = log det(Vs^T Vs + Bs^T C Bs + I) through its d-scale form.

    With P = (I_d + Vs Vs^T)^{-1}, X = I - Vs^T P Vs and W = C^{-1} + Bs X Bs^T:

        dV = 2 P Vs - Vs X Bs^T (W^{-1} + W^{-T}) Bs X
        dB = (W^{-1} + W^{-T}) Bs X
        dC = C^{-T} - C^{-T} W^{-T} C^{-T}

    Every block has the shape of its variable (d x s, d x s, d x d).
    """
    d, s = Vs.shape
    Ci = _c_inverse(C)
    P = np.linalg.inv(np.eye(d) + Vs @ Vs.T)
    X = np.eye(s) - Vs.T @ P @ Vs
    W = Ci + Bs @ X @ Bs.T
    Wi = _checked_inverse(W, "C^{-1} + B X B^T")
    G = Wi + Wi.T
    BX = Bs @ X
    return GradientTriple(
        dV=2.0 * P @ Vs - Vs @ BX.T @ G @ BX,
        dB=G @ BX,
        dC=Ci.T - Ci.T @ Wi.T @ Ci.T,
    )


def _c_inverse(C: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > C_COND_LIMIT:
        raise SingularCError(f"C is singular (cond={cond:.3g})")
    return np.linalg.inv(C)


def grad_regularizer(Vs: np.ndarray, Bs: np.ndarray, reg_alpha: float, reg_beta: float) -> GradientTriple:
    d = Vs.shape[0]
    return GradientTriple(2.0 * reg_alpha * Vs, 2.0 * reg_beta * Bs, np.zeros((d, d)))


def psi_value(Vs: np.ndarray, Bs: np.ndarray, C: np.ndarray, reg_alpha: float, reg_beta: float) -> float:
    """The per-basket objective psi_t on gathered columns."""
    M = _minor(Vs, Bs, C)
    sign, logdet_m = np.linalg.slogdet(M)
    if sign <= 0:
        return -math.inf
    _, z = np.linalg.slogdet(M + np.eye(M.shape[0]))
    reg = reg_alpha * float(np.sum(Vs * Vs)) + reg_beta * float(np.sum(Bs * Bs))
    return float(logdet_m - z - reg)


def psi_gradient(model: NdppModel, items: Sequence[int], config: LearningConfig) -> GradientTriple:
    """Ascent direction for psi_t with respect to (V_S, B_S, C)."""
    items = as_subset(items, model.n)
    if not items:
        raise ValueError("psi_gradient needs a non-empty basket")
    Vs, Bs = model.columns(items)
    return (grad_first_term(Vs, Bs, model.C) - grad_Z(Vs, Bs, model.C)
            - grad_regularizer(Vs, Bs, config.reg_alpha, config.reg_beta))


def apply_update(
    model: NdppModel,
    items: Sequence[int],
    grad: GradientTriple,
    eta: float,
    diagnostics: list[str] | None = None,
) -> NdppModel:
    """In-place ascent step on the basket's columns and on C.

    C is re-projected onto skew-symmetric matrices after the step. If that
    leaves C singular the C step is undone (the column steps are kept) and
    a message is appended to ``diagnostics``.
    """
    items = as_subset(items, model.n)
    if grad.dV.shape != (model.d, len(items)) or grad.dB.shape != grad.dV.shape:
        raise ShapeError(f"gradient blocks {grad.dV.shape}/{grad.dB.shape} do not match basket of {len(items)}")
    if grad.dC.shape != model.C.shape:
        raise ShapeError(f"dC has shape {grad.dC.shape}, expected {model.C.shape}")
    if eta == 0:
        return model
    model.V[:, items] += eta * grad.dV
    model.B[:, items] += eta * grad.dB
    C_new = model.C + eta * grad.dC
    C_new = 0.5 * (C_new - C_new.T)
    cond = np.linalg.cond(C_new)
    if np.isfinite(cond) and cond <= C_COND_LIMIT:
        model.C = C_new
    else:
        msg = f"C update rolled back: projected C singular (cond={cond:.3g})"
        logger.warning(msg)
        if diagnostics is not None:
            diagnostics.append(msg)
    problems = validate_model(model)
    if problems:
        raise InvalidModelError(problems)
    return model


def initial_model(n: int, config: LearningConfig) -> NdppModel:
    rng = np.random.default_rng(config.seed)
    std = config.init_scale / math.sqrt(config.d)
    C = block_skew(config.d, rng, *config.c_block_range)
    V = rng.normal(0.0, std, size=(config.d, n))
    B = rng.normal(0.0, std, size=(config.d, n))
    return NdppModel(V, B, C)


@dataclass
class LearnStep:
    step: int
    basket_size: int
    psi: float
    skipped: int


class OnlineLearner:
    """Holds the model being learned and consumes one basket per call.

    With ``n=None`` the item universe grows lazily: an unseen item id gets a
    freshly initialized column drawn from the learner's generator.
    """

    def __init__(self, config: LearningConfig, n: int | None = None):
        self.config = config
        self.lazy = n is None
        self.model = initial_model(0 if n is None else n, config)
        # Column draws for lazily added items continue the init stream.
        self._rng = np.random.default_rng([config.seed, 1])
        self.mu = np.zeros(self.model.n, dtype=np.int64)
        self.t = 0
        self.skipped = 0
        self.diagnostics: list[str] = []

    def _grow(self, new_n: int) -> None:
        extra = new_n - self.model.n
        std = self.config.init_scale / math.sqrt(self.config.d)
        V = self._rng.normal(0.0, std, size=(self.config.d, extra))
        B = self._rng.normal(0.0, std, size=(self.config.d, extra))
        self.model = NdppModel(np.hstack([self.model.V, V]), np.hstack([self.model.B, B]), self.model.C)
        self.mu = np.concatenate([self.mu, np.zeros(extra, dtype=np.int64)])

    def step(self, basket: Iterable[int]) -> LearnStep:
        items = as_subset(basket)
        if items and items[-1] >= self.model.n:
            if not self.lazy:
                raise IndexError(f"item id {items[-1]} out of range for n={self.model.n}")
            self._grow(items[-1] + 1)
        self.t += 1
        if not items:
            self.skipped += 1
            return LearnStep(self.t, 0, math.nan, self.skipped)
        self.mu[items] += 1
        cfg = self.config
        Vs, Bs = self.model.columns(items)
        psi = psi_value(Vs, Bs, self.model.C, cfg.reg_alpha, cfg.reg_beta)
        try:
            grad = psi_gradient(self.model, items, cfg)
        except SingularSubsetError:
            self.skipped += 1
            return LearnStep(self.t, len(items), psi, self.skipped)
        eta = cfg.eta / math.sqrt(self.t) if cfg.decay else cfg.eta
        apply_update(self.model, items, grad, eta, self.diagnostics)
        return LearnStep(self.t, len(items), psi, self.skipped)


def online_learn(
    baskets: Iterable[Iterable[int]],
    config: LearningConfig,
    n: int | None = None,
) -> tuple[NdppModel, list[LearnStep]]:
    """One pass over ``baskets``; returns the learned model and its trace."""
    learner = OnlineLearner(config, n)
    trace = [learner.step(b) for b in baskets]
    return learner.model, trace


def occurrence_counts(baskets: Iterable[Iterable[int]], n: int) -> np.ndarray:
    mu = np.zeros(n, dtype=np.int64)
    for basket in baskets:
        mu[as_subset(basket, n)] += 1
    return mu


@dataclass
class LikelihoodReport:
    value: float
    mean_logdet: float
    normalizer: float
    regularizer: float
    baskets: int
    singular: int


def log_likelihood_report(
    model: NdppModel,
    baskets: Iterable[Iterable[int]],
    mu: np.ndarray | None = None,
    reg_alpha: float = 0.0,
    reg_beta: float = 0.0,
) -> LikelihoodReport:
    """Regularized log-likelihood of a dataset with per-item 1/mu weights.

    Baskets whose minor is singular are counted in ``singular`` and left out
    of the average. Items with mu = 0 contribute no regularization.
    """
    baskets = [as_subset(b, model.n) for b in baskets]
    baskets = [b for b in baskets if b]
    if not baskets:
        raise ValueError("no baskets")
    if mu is None:
        mu = occurrence_counts(baskets, model.n)
    total, used, singular = 0.0, 0, 0
    for items in baskets:
        Vs, Bs = model.columns(items)
        sign, logdet = np.linalg.slogdet(_minor(Vs, Bs, model.C))
        if sign <= 0:
            singular += 1
            continue
        total += logdet
        used += 1
    mean_logdet = total / used if used else -math.inf
    normalizer = logdet_normalizer(model)
    mu = np.asarray(mu, dtype=np.float64)
    seen = mu > 0
    weights = np.zeros_like(mu)
    weights[seen] = 1.0 / mu[seen]
    reg = (reg_alpha * float(weights @ np.sum(model.V**2, axis=0))
           + reg_beta * float(weights @ np.sum(model.B**2, axis=0)))
    return LikelihoodReport(mean_logdet - normalizer - reg, mean_logdet, normalizer, reg, used, singular)


def full_log_likelihood(
    model: NdppModel,
    baskets: Iterable[Iterable[int]],
    mu: np.ndarray | None = None,
    reg_alpha: float = 0.0,
    reg_beta: float = 0.0,
) -> float:
    return log_likelihood_report(model, baskets, mu, reg_alpha, reg_beta).value


def mean_nll(model: NdppModel, baskets: Iterable[Iterable[int]]) -> float:
    """Average negative log-probability -log det(L_S) + log det(L + I)."""
    return -full_log_likelihood(model, baskets)


def _mask_items(mask: int, n: int) -> list[int]:
    return [i for i in range(n) if mask >> i & 1]


class ExactSampler:
    """Exact NDPP sampling by enumerating all 2^n subsets (n <= 15).

    The probability table is built once; ``probabilities[mask]`` is the
    probability of the subset whose members are the set bits of ``mask``.
    """

    def __init__(self, model: NdppModel):
        if model.n > MAX_EXACT_N:
            raise ValueError(f"exact sampling refused for n={model.n} > {MAX_EXACT_N}")
        self.n = model.n
        dets = np.zeros(1 << model.n)
        dets[0] = 1.0
        for size in range(1, model.n + 1):
            combos = list(itertools.combinations(range(model.n), size))
            masks = [sum(1 << i for i in c) for c in combos]
            dets[masks] = f_det_batch(model, np.array(combos))
        self.raw = dets
        dets = np.clip(dets, 0.0, None)
        self.normalizer = math.exp(logdet_normalizer(model))
        self.probabilities = dets / self.normalizer
        total = self.probabilities.sum()
        if abs(total - 1.0) > 1e-6:
            raise RuntimeError(f"subset probabilities sum to {total}, expected 1")
        self._p = self.probabilities / total

    def sample_masks(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self._p), size=size, p=self._p)

    def sample(self, rng: np.random.Generator) -> list[int]:
        return _mask_items(int(self.sample_masks(rng, 1)[0]), self.n)

    def iter_samples(self, rng: np.random.Generator, count: int) -> Iterator[list[int]]:
        for mask in self.sample_masks(rng, count):
            yield _mask_items(int(mask), self.n)


def sample_exact_small(model: NdppModel, rng: np.random.Generator) -> list[int]:
    return ExactSampler(model).sample(rng)
