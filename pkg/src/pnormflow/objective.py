"""The p-norm congestion cost, its diagonal quadratic model, and the
completed-square edge resistances used by the potential subproblem.

Signed loads enter through their absolute value, so ``cost`` is
``sum |I_m|**p`` and the gradient carries ``sign(I_m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_p(p: float) -> float:
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"p must be greater than 1, got {p}")
    return p


def cost(loads, p: float) -> float:
    p = _check_p(p)
    return float(np.sum(np.abs(np.asarray(loads, dtype=float)) ** p))


def gradient(loads, p: float) -> np.ndarray:
    p = _check_p(p)
    x = np.asarray(loads, dtype=float)
    return p * np.sign(x) * np.abs(x) ** (p - 1.0)


def hessian_diag(loads, p: float) -> np.ndarray:
    """Unregularized curvature ``p (p-1) |I_m|**(p-2)``.

    Infinite at zero load when ``p < 2``.
    """
    p = _check_p(p)
    x = np.abs(np.asarray(loads, dtype=float))
    with np.errstate(divide="ignore"):
        return p * (p - 1.0) * x ** (p - 2.0)


def default_regularization(loads) -> float:
    """Load floor ``1e-6 * (1 + max |I_m|)`` used by :func:`edge_weights`."""
    x = np.asarray(loads, dtype=float)
    return 1e-6 * (1.0 + (float(np.max(np.abs(x))) if x.size else 0.0))


def log_edge_weights(loads, p: float, eps: float | None = None) -> np.ndarray:
    """Natural log of :func:`edge_weights`, safe for very large ``p``."""
    p = _check_p(p)
    x = np.abs(np.asarray(loads, dtype=float))
    if eps is None:
        eps = default_regularization(x)
    if not eps > 0:
        raise ValueError(f"regularization must be positive, got {eps}")
    return np.log(0.5 * p * (p - 1.0)) + (p - 2.0) * np.log(np.maximum(x, eps))


def edge_weights(loads, p: float, eps: float | None = None) -> np.ndarray:
    """Resistances ``r_m = p (p-1) / 2 * max(|I_m|, eps)**(p-2)``.

    Args:
        loads: Current edge loads ``I``.
        p: Norm exponent, ``p > 1``.
        eps: Load floor keeping ``r_m`` positive and finite. Defaults to
            :func:`default_regularization` of ``loads``.
    """
    p = _check_p(p)
    x = np.abs(np.asarray(loads, dtype=float))
    if eps is None:
        eps = default_regularization(x)
    if not eps > 0:
        raise ValueError(f"regularization must be positive, got {eps}")
    return 0.5 * p * (p - 1.0) * np.maximum(x, eps) ** (p - 2.0)


def subproblem_rhs(traffic, p: float) -> np.ndarray:
    """Node injections ``T_n / (p-1)`` of the shifted-variable subproblem."""
    p = _check_p(p)
    return np.asarray(traffic, dtype=float) / (p - 1.0)


def model_cost(correction, grad, hess) -> float:
    """Change predicted by the quadratic model, ``0.5 i.Q.i + S.i``."""
    i = np.asarray(correction, dtype=float)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    if not (i.shape == grad.shape == hess.shape):
        raise ValueError(
            f"shape mismatch: correction {i.shape}, gradient {grad.shape}, "
            f"hessian {hess.shape}"
        )
    return float(0.5 * np.dot(hess * i, i) + np.dot(grad, i))


@dataclass(frozen=True)
class QuadraticModel:
    """Local model of the cost around a load vector.

    ``weights`` are the regularized resistances and ``offsets`` the shift
    ``I_m / (p-1)`` between the correction and the subproblem flow.
    """

    gradient: np.ndarray
    hessian_diag: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray


def quadratic_model(loads, p: float, eps: float | None = None) -> QuadraticModel:
    x = np.asarray(loads, dtype=float)
    r = edge_weights(x, p, eps)
    return QuadraticModel(
        gradient=gradient(x, p),
        hessian_diag=2.0 * r,
        weights=r,
        offsets=x / (p - 1.0),
    )


def cost_change(loads, step, p: float) -> float:
    """``cost(loads + step) - cost(loads)`` without cancellation.

    Each edge term ``|I + d|**p - |I|**p`` is evaluated as
    ``|I|**p * expm1(p * log1p(d / I))`` when ``-1/2 < d / I < 1``,
    and the terms are summed with :func:`math.fsum`. Near an optimum with
    large ``p`` the plain difference of two costs is dominated by rounding.
    """
    p = _check_p(p)
    x = np.asarray(loads, dtype=float)
    d = np.asarray(step, dtype=float)
    if x.shape != d.shape:
        raise ValueError(f"shape mismatch: loads {x.shape}, step {d.shape}")
    ax = np.abs(x)
    with np.errstate(over="ignore"):
        ratio = np.divide(d, x, out=np.full_like(d, -np.inf), where=ax > 0)
    smooth = (ratio > -0.5) & (ratio < 1.0)
    terms = np.empty_like(x)
    with np.errstate(over="ignore"):
        terms[smooth] = ax[smooth] ** p * np.expm1(p * np.log1p(ratio[smooth]))
        rough = ~smooth
        terms[rough] = np.abs(x[rough] + d[rough]) ** p - ax[rough] ** p
    return math.fsum(terms)
