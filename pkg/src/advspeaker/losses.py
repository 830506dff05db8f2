"""Attack objectives: cross-entropy, margin (CW), and the optimal-transport
feature-scattering distance, plus their weighted hybrid combination.

All three losses operate in logit space. The feature-scattering term treats
the clean and adversarial logit batches as two uniform discrete
distributions and measures the entropic-regularized OT distance between
them under a pairwise cosine cost. The converged transport plan is treated
as a constant, so the gradient of the distance with respect to the cost
matrix is the plan itself.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value


class SinkhornConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Coefficients for the hybrid objective: CE, feature-scattering, margin."""

    beta: float = 1.0
    gamma: float = 1.0
    zeta: float = 1.0

    def __post_init__(self):
        for name in ("beta", "gamma", "zeta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.beta, self.gamma, self.zeta)


@dataclass(frozen=True)
class SinkhornSettings:
    regularization: float = 0.01
    max_iters: int = 1000
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.regularization <= 0:
            raise ValueError("regularization must be > 0")
        if self.max_iters < 1 or self.tolerance <= 0:
            raise ValueError("max_iters must be >= 1 and tolerance > 0")


@dataclass
class TransportProblem:
    mu: np.ndarray
    nu: np.ndarray
    cost: Value | np.ndarray
    regularization: float = 0.01

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.nu = np.asarray(self.nu, dtype=np.float64)
        cost_data = self.cost.data if isinstance(self.cost, Value) else np.asarray(self.cost)
        n, m = cost_data.shape
        if self.mu.shape != (n,) or self.nu.shape != (m,):
            raise ValueError(f"marginals {self.mu.shape}/{self.nu.shape} do not match cost {cost_data.shape}")
        for name, w in (("mu", self.mu), ("nu", self.nu)):
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must be nonnegative and sum to 1")
        if self.regularization <= 0:
            raise ValueError("regularization must be > 0")


@dataclass
class TransportPlan:
    plan: np.ndarray
    distance: Value | float
    converged: bool
    iterations: int
    marginal_error: float       # violation of the final (rounded) plan
    scaling_residual: float = 0.0  # violation when the scaling loop stopped


def ce_loss(logits, labels) -> Value:
    """Mean negative log softmax probability of the true class."""
    logits = ad.as_value(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    log_probs = logits - ad.logsumexp(logits, axis=1, keepdims=True)
    return -ad.gather_rows(log_probs, labels).mean()


def margin_loss(logits, labels, margin: float = 50.0) -> Value:
    """Sum over the batch of -[f_true - max_other + margin]_+ (CW objective)."""
    logits = ad.as_value(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if k < 2:
        raise ValueError("margin loss needs at least 2 classes")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    true_logit = ad.gather_rows(logits, labels)
    # push the true class far down so the max runs over j != true only
    masked = logits - Value(ad.one_hot(labels, k) * 1e30)
    best_other = ad.reduce_max(masked, axis=1)
    return -ad.relu(true_logit - best_other + float(margin)).sum()


def cosine_cost_matrix(f_clean, f_adv) -> Value:
    """C[i, j] = 1 - cos(f_clean[i], f_adv[j]); values in [0, 2]."""
    f_clean, f_adv = ad.as_value(f_clean), ad.as_value(f_adv)
    if f_clean.ndim != 2 or f_adv.ndim != 2 or f_clean.shape[1] != f_adv.shape[1]:
        raise ad.ShapeError("cosine_cost_matrix",
                            f"need (n,k) and (m,k), got {f_clean.shape}, {f_adv.shape}")
    for name, f in (("f_clean", f_clean), ("f_adv", f_adv)):
        norms = np.sqrt((f.data ** 2).sum(axis=1))
        if (norms < 1e-12).any():
            raise ValueError(f"{name} has a zero-norm row (cosine cost undefined)")
    a = f_clean / ad.l2_norm(f_clean, axis=1, keepdims=True)
    b = f_adv / ad.l2_norm(f_adv, axis=1, keepdims=True)
    return 1.0 - ad.matmul(a, ad.permute(b, (1, 0)))


def _round_to_feasible(plan: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Project an almost-feasible plan onto exact marginals.

    Scale rows then columns down where they overshoot, then spread the
    remaining mass as a rank-one correction. The total plan mass moved is
    on the order of the incoming marginal violation, so the transport cost
    changes by at most that times max|cost|.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        row = plan.sum(axis=1)
        plan = plan * np.minimum(np.where(row > 0, mu / row, 1.0), 1.0)[:, None]
        col = plan.sum(axis=0)
        plan = plan * np.minimum(np.where(col > 0, nu / col, 1.0), 1.0)[None, :]
    missing_row = np.maximum(mu - plan.sum(axis=1), 0.0)
    missing_col = np.maximum(nu - plan.sum(axis=0), 0.0)
    total = missing_row.sum()
    if total > 0:
        plan = plan + np.outer(missing_row, missing_col) / total
    return plan


def sinkhorn_ot(problem: TransportProblem, max_iters: int = 1000,
                tolerance: float = 1e-6) -> TransportPlan:
    """Entropic-regularized OT via log-domain alternating scaling.

    The scaling loop runs until the marginal violation drops below
    ``tolerance`` or the budget is spent; the plan is then rounded onto
    exact marginals. The returned plan is a plain array; when the cost is
    a Value the distance is the differentiable <plan, cost> with the plan
    held constant. A loop that did not reach tolerance is reported via
    ``converged=False``, never as an exception.
    """
    cost_value = problem.cost if isinstance(problem.cost, Value) else None
    cost = problem.cost.data if cost_value is not None else np.asarray(problem.cost, dtype=np.float64)
    lam = problem.regularization
    with np.errstate(divide="ignore"):  # zero marginal weights are legal
        log_mu = np.log(problem.mu)
        log_nu = np.log(problem.nu)
    f = np.zeros_like(problem.mu)
    g = np.zeros_like(problem.nu)

    def lse(m, axis):
        peak = m.max(axis=axis, keepdims=True)
        return (peak + np.log(np.exp(m - peak).sum(axis=axis, keepdims=True))).squeeze(axis)

    err = np.inf
    it = 0
    plan = np.outer(problem.mu, problem.nu)
    for it in range(1, max_iters + 1):
        f = lam * (log_mu - lse((g[None, :] - cost) / lam, axis=1))
        g = lam * (log_nu - lse((f[:, None] - cost) / lam, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / lam)
        err = max(np.abs(plan.sum(axis=1) - problem.mu).max(),
                  np.abs(plan.sum(axis=0) - problem.nu).max())
        if err < tolerance:
            break
    converged = bool(err < tolerance)
    plan = _round_to_feasible(plan, problem.mu, problem.nu)
    final_err = max(np.abs(plan.sum(axis=1) - problem.mu).max(),
                    np.abs(plan.sum(axis=0) - problem.nu).max())
    if cost_value is not None:
        distance = (Value(plan) * cost_value).sum()
    else:
        distance = float((plan * cost).sum())
    return TransportPlan(plan=plan, distance=distance, converged=converged,
                         iterations=it, marginal_error=float(final_err),
                         scaling_residual=float(err))


def fs_loss(f_clean, f_adv, settings: SinkhornSettings = SinkhornSettings()) -> Value:
    """OT distance between clean and adversarial logit batches, uniform marginals."""
    f_clean, f_adv = ad.as_value(f_clean), ad.as_value(f_adv)
    n = f_clean.shape[0]
    if f_adv.shape[0] != n:
        raise ad.ShapeError("fs_loss", f"batch sizes differ: {f_clean.shape} vs {f_adv.shape}")
    cost = cosine_cost_matrix(f_clean, f_adv)
    uniform = np.full(n, 1.0 / n)
    problem = TransportProblem(uniform, uniform, cost, settings.regularization)
    result = sinkhorn_ot(problem, settings.max_iters, settings.tolerance)
    if not result.converged:
        # static message so the default warning filter collapses repeats
        warnings.warn(
            "sinkhorn scaling exhausted its iteration budget before reaching "
            "tolerance; the plan was rounded to exact marginals",
            SinkhornConvergenceWarning, stacklevel=2)
    return result.distance


def hybrid_loss(weights: LossWeights, logits_adv, logits_clean, labels,
                margin: float = 50.0,
                sinkhorn: SinkhornSettings = SinkhornSettings()) -> Value:
    """beta*CE + gamma*FS + zeta*margin, skipping zero-weight terms entirely."""
    terms = []
    if weights.beta != 0.0:
        terms.append(weights.beta * ce_loss(logits_adv, labels))
    if weights.gamma != 0.0:
        if logits_clean is None:
            raise ValueError("feature-scattering term requires clean logits")
        terms.append(weights.gamma * fs_loss(logits_clean, logits_adv, sinkhorn))
    if weights.zeta != 0.0:
        terms.append(weights.zeta * margin_loss(logits_adv, labels, margin))
    if not terms:
        raise ValueError("all loss weights are zero")
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total
