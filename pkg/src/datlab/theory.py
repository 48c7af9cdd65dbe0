"""Discrete-support checks of the adversarial minimax behind gradient reversal.

For N domain distributions ``P_i`` on a finite support, the classifier that
maximizes ``sum_i E_{P_i} log C_i`` is ``C*_i = P_i / sum_j P_j``, and the
value at that classifier equals ``sum_i KL(P_i || M) - N ln N`` with ``M`` the
uniform mixture. Minimizing it over the distributions drives them together.

All logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TABLE_EPS = 1e-12


class TheoryValidationError(ValueError):
    pass


class DivergenceUndefinedError(ValueError):
    """KL divergence with ``q_s = 0`` where ``p_s > 0``."""


class OptimizationFailure(RuntimeError):
    pass


def as_distribution(p, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise TheoryValidationError("a distribution is a nonempty 1-D vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise TheoryValidationError(f"not a probability vector: {p}")
    return p


def _stack(dists) -> np.ndarray:
    rows = [as_distribution(d) for d in dists]
    if len({r.size for r in rows}) > 1:
        raise TheoryValidationError("distributions must share one support size")
    return np.vstack(rows)


def kld(p, q) -> float:
    p, q = as_distribution(p), as_distribution(q)
    if p.size != q.size:
        raise TheoryValidationError("support sizes differ")
    mask = p > 0
    if np.any(q[mask] == 0):
        raise DivergenceUndefinedError("q has zero mass where p is positive")
    return max(float(np.sum(p[mask] * np.log(p[mask] / q[mask]))), 0.0)


def mixture(dists) -> np.ndarray:
    return _stack(dists).mean(axis=0)


def jsd(dists) -> float:
    """Unnormalized generalized JSD: ``sum_i KL(P_i || M)``, no 1/N weight."""
    P = _stack(dists)
    if P.shape[0] < 2:
        raise TheoryValidationError("jsd needs at least two distributions")
    m = P.mean(axis=0)
    return float(sum(kld(p, m) for p in P))


def jsd_normalized(dists) -> float:
    """The conventional equal-weight generalized JSD, ``jsd / N``."""
    return jsd(dists) / len(dists)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def optimal_classifier(dists) -> np.ndarray:
    """Table ``[N x S]`` with ``C*_i(s) = P_i(s) / sum_j P_j(s)``.

    Entries are clamped into ``[eps, 1 - eps]`` and each column renormalized,
    keeping every probability strictly inside (0, 1).
    """
    P = _stack(dists)
    col = P.sum(axis=0)
    if np.any(col == 0):
        bad = np.flatnonzero(col == 0).tolist()
        raise TheoryValidationError(f"support points {bad} carry no mass in any distribution")
    return _clamp_table(P / col)


def _clamp_table(table: np.ndarray) -> np.ndarray:
    t = np.clip(table, TABLE_EPS, 1.0 - TABLE_EPS)
    return t / t.sum(axis=0, keepdims=True)


def value_function(dists, table) -> float:
    """``sum_i sum_s P_i(s) log C_i(s)`` with ``0 log x = 0``."""
    P = _stack(dists)
    C = np.asarray(table, dtype=np.float64)
    if C.shape != P.shape:
        raise TheoryValidationError(f"table shape {C.shape} != {P.shape}")
    mask = P > 0
    return float(np.sum(P[mask] * np.log(C[mask])))


def jsd_value_identity_gap(dists) -> float:
    """value(P, C*) - (jsd(P) - N ln N); zero up to rounding."""
    n = len(dists)
    return value_function(dists, optimal_classifier(dists)) - (jsd(dists) - n * np.log(n))


def _softmax_cols(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def verify_inner_max(dists, steps: int = 20_000, step_size: float = 0.5,
                     tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Maximize the value over classifier tables by gradient ascent.

    Each column of the table is the softmax of a column of free logits,
    started at zero (uniform). Returns the fitted table and its sup-norm
    distance to :func:`optimal_classifier`. Non-convergence shows up as a
    large distance; it is not raised.
    """
    P = _stack(dists)
    target = optimal_classifier(P)
    col_mass = P.sum(axis=0, keepdims=True)
    logits = np.zeros_like(P)
    for _ in range(steps):
        C = _softmax_cols(logits)
        grad = P - C * col_mass
        if np.max(np.abs(grad)) < tol:
            break
        logits += step_size * grad
    C = _softmax_cols(logits)
    return C, float(np.max(np.abs(C - target)))


@dataclass
class MinimaxTrace:
    values: np.ndarray
    jsds: np.ndarray
    final_dists: np.ndarray
    identity_gaps: np.ndarray

    @property
    def final_value(self) -> float:
        return float(self.values[-1])

    @property
    def final_jsd(self) -> float:
        return float(self.jsds[-1])

    def max_pairwise_tv(self) -> float:
        P = self.final_dists
        n = P.shape[0]
        return max(
            (total_variation(P[i], P[j]) for i in range(n) for j in range(i + 1, n)),
            default=0.0,
        )


def verify_minimax(n: int, s: int, seed: int = 0, steps: int = 20_000, step_size: float = 1.0,
                   init_logits: np.ndarray | None = None, patience: int = 100) -> MinimaxTrace:
    """Alternate the closed-form inner max with a gradient step on the generator.

    The generator is a table of logits, one row per domain. Each step refits
    the classifier in closed form, records (value, jsd), then moves the
    logits down the value gradient with the classifier held fixed. Raises
    :class:`OptimizationFailure` if the value rises for ``patience``
    consecutive steps.
    """
    if n < 2 or s < 2:
        raise TheoryValidationError("verify_minimax needs n >= 2 and s >= 2")
    if init_logits is None:
        logits = np.random.default_rng(seed).normal(size=(n, s))
    else:
        logits = np.array(init_logits, dtype=np.float64)
        if logits.shape != (n, s):
            raise TheoryValidationError(f"init_logits must have shape {(n, s)}")
    values = np.empty(steps + 1)
    jsds = np.empty(steps + 1)
    gaps = np.empty(steps + 1)
    rising = 0
    for t in range(steps + 1):
        P = _softmax_rows(logits)
        C = optimal_classifier(P)
        values[t] = value_function(P, C)
        jsds[t] = jsd(P)
        gaps[t] = values[t] - (jsds[t] - n * np.log(n))
        if t > 0 and values[t] > values[t - 1] + 1e-15:
            rising += 1
            if rising >= patience:
                raise OptimizationFailure(f"value increased for {patience} consecutive steps at step {t}")
        else:
            rising = 0
        if t == steps:
            break
        dv_dp = np.log(C)
        grad = P * (dv_dp - np.sum(P * dv_dp, axis=1, keepdims=True))
        logits -= step_size * grad
    return MinimaxTrace(values, jsds, _softmax_rows(logits), gaps)


def soft_label_mixture(soft_label, dists) -> np.ndarray:
    """``sum_i l_i P_i``: the per-record distribution a soft label induces."""
    label = np.asarray(soft_label, dtype=np.float64)
    if label.ndim != 1 or np.any(label < 0) or abs(label.sum() - 1.0) > 1e-9:
        raise TheoryValidationError("soft label must be a probability vector")
    P = _stack(dists)
    if label.size != P.shape[0]:
        raise TheoryValidationError("soft label length must equal number of distributions")
    out = label @ P
    return out / out.sum()


def random_distributions(rng: np.random.Generator, n: int, s: int, temperature: float = 1.0) -> np.ndarray:
    """``n`` strictly positive distributions on ``s`` points, softmax of normals."""
    return _softmax_rows(rng.normal(scale=temperature, size=(n, s)))
