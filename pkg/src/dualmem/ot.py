"""Entropic optimal transport solver, exact 1-D oracle, and metric suite.

Distributions are plain 1-D numpy arrays on the probability simplex.
Cost matrices are square, non-negative, with zero diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_REG_FACTOR = 0.05
LOG_DOMAIN_RATIO = 0.01
SIMPLEX_TOL = 1e-9
MASS_FLOOR = 1e-8
ANNEAL_START_FACTOR = 0.5
ANNEAL_DIVISOR = 4.0
ANNEAL_LEVEL_TOL = 1e-2


@dataclass
class SinkhornConfig:
    """Solver knobs for the matrix-scaling iteration.

    reg is the entropic regularization strength. When None it is resolved
    per call to DEFAULT_REG_FACTOR * max(M). log_domain None means
    auto-select: stabilized iteration when reg / max(M) < LOG_DOMAIN_RATIO.
    """

    reg: float | None = None
    max_iters: int = 1000
    tol: float = 1e-6
    log_domain: bool | None = None
    anneal: bool = True

    def resolve_reg(self, cost_max: float) -> float:
        reg = self.reg if self.reg is not None else DEFAULT_REG_FACTOR * cost_max
        if reg <= 0:
            raise ValueError(f"reg must be positive, got {reg}")
        return float(reg)

    def use_log_domain(self, reg: float, cost_max: float) -> bool:
        if self.log_domain is not None:
            return self.log_domain
        return cost_max > 0 and reg / cost_max < LOG_DOMAIN_RATIO


@dataclass
class TransportResult:
    """Converged (or best-effort) coupling between two distributions.

    marginal_errors holds the max marginal violation after each full
    row/column scaling pass at the target regularization, so callers can
    audit convergence behavior. warmup_iterations counts passes spent in
    the annealed warm start, when one ran.
    """

    cost: float
    plan: np.ndarray
    converged: bool
    iterations: int
    marginal_errors: list[float] = field(repr=False, default_factory=list)
    warmup_iterations: int = 0


def to_distribution(v) -> np.ndarray:
    """Embed an arbitrary finite vector onto the probability simplex.

    Shifts by -min(v), adds a uniform floor so no coordinate carries
    exactly zero mass, then normalizes. An all-equal vector degenerates
    to the uniform distribution.
    """
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot embed an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    shifted = v - v.min() + MASS_FLOOR
    return shifted / shifted.sum()


def _check_distribution(a: np.ndarray, d: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size != d:
        raise ValueError(f"{name} has support size {a.size}, expected {d}")
    if np.any(a < 0):
        raise ValueError(f"{name} has negative mass")
    if abs(a.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{name} does not sum to 1 (got {a.sum()!r})")
    return a


def _check_cost(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {M.shape}")
    if np.any(M < 0):
        raise ValueError("cost matrix entries must be non-negative")
    return M


def _marginal_error(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return max(
        float(np.abs(P.sum(axis=1) - a).max()),
        float(np.abs(P.sum(axis=0) - b).max()),
    )


def sinkhorn_distance(a, b, M, cfg: SinkhornConfig | None = None) -> TransportResult:
    """Entropic transport cost <P, M> via alternating row/column scaling.

    Scales the kernel K = exp(-M / reg) until the max marginal violation
    drops below cfg.tol or cfg.max_iters passes elapse. Non-convergence
    returns the best iterate with converged=False rather than raising.

    Raises ValueError when the kernel underflows to an unusable state
    (remedy: increase reg or force cfg.log_domain=True).
    """
    cfg = cfg or SinkhornConfig()
    M = _check_cost(M)
    d = M.shape[0]
    a = _check_distribution(a, d, "a")
    b = _check_distribution(b, d, "b")
    cost_max = float(M.max())
    reg = cfg.resolve_reg(cost_max)

    if cfg.use_log_domain(reg, cost_max):
        P, errors, converged, iters, warmup = _sinkhorn_log(a, b, M, reg, cfg)
    else:
        P, errors, converged, iters = _sinkhorn_standard(a, b, M, reg, cfg)
        warmup = 0

    cost = float((P * M).sum())
    return TransportResult(cost, P, converged, iters, errors, warmup)


def _sinkhorn_standard(a, b, M, reg, cfg):
    K = np.exp(-M / reg)
    # rows of K for supported source atoms must keep some mass, else u blows up
    live = a > 0
    if np.any(K[live].sum(axis=1) == 0):
        raise ValueError(
            "kernel underflow at this regularization; "
            "increase reg or set log_domain=True"
        )
    u = np.ones_like(a)
    v = np.ones_like(b)
    errors: list[float] = []
    converged = False
    iters = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        for iters in range(1, cfg.max_iters + 1):
            u = np.where(live, a / (K @ v), 0.0)
            Ktu = K.T @ u
            v = np.where(b > 0, b / Ktu, 0.0)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise ValueError(
                    "numerical overflow in scaling vectors; "
                    "increase reg or set log_domain=True"
                )
            P = u[:, None] * K * v[None, :]
            errors.append(_marginal_error(P, a, b))
            if errors[-1] < cfg.tol:
                converged = True
                break
    return P, errors, converged, iters


def _logsumexp(X, axis):
    # max-shifted reduction that maps all -inf slices to -inf, not nan
    m = X.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(X - safe).sum(axis=axis, keepdims=True))
    out = np.where(np.isfinite(m), out, -np.inf)
    return out.squeeze(axis)


def _log_passes(log_a, log_b, a, b, log_K, f, g, tol, max_iters):
    errors: list[float] = []
    converged = False
    iters = 0
    P = np.exp(f[:, None] + log_K + g[None, :])
    for iters in range(1, max_iters + 1):
        f = log_a - _logsumexp(log_K + g[None, :], axis=1)
        g = log_b - _logsumexp(log_K + f[:, None], axis=0)
        P = np.exp(f[:, None] + log_K + g[None, :])
        errors.append(_marginal_error(P, a, b))
        if errors[-1] < tol:
            converged = True
            break
    return P, f, g, errors, converged, iters


def _sinkhorn_log(a, b, M, reg, cfg):
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    cost_max = float(M.max())

    # warm start: walk the regularization down from a coarse level so the
    # final iteration starts near its fixed point; initialization only,
    # the returned plan is still the fixed point at the requested reg
    warmup = 0
    if cfg.anneal:
        level = ANNEAL_START_FACTOR * cost_max
        while level > reg * (1.0 + 1e-9):
            _, f, g, _, _, used = _log_passes(
                log_a, log_b, a, b, -M / level, f, g,
                ANNEAL_LEVEL_TOL, cfg.max_iters)
            warmup += used
            level /= ANNEAL_DIVISOR

    P, f, g, errors, converged, iters = _log_passes(
        log_a, log_b, a, b, -M / reg, f, g, cfg.tol, cfg.max_iters)
    return P, errors, converged, iters, warmup


def exact_ot_1d(a, b, p: int = 2) -> float:
    """Exact transport cost on the ordered supports 0..d-1 with cost |i-j|^p.

    Walks the two cumulative mass profiles greedily; for costs convex in
    the index difference the monotone coupling this produces is optimal.
    """
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    a = np.asarray(a, dtype=float).ravel()
    a = _check_distribution(a, a.size, "a")
    b = _check_distribution(b, a.size, "b")
    i = j = 0
    ai, bj = a[0], b[0]
    cost = 0.0
    while i < a.size and j < b.size:
        moved = min(ai, bj)
        cost += moved * abs(i - j) ** p
        ai -= moved
        bj -= moved
        if ai <= 1e-15:
            i += 1
            if i < a.size:
                ai = a[i]
        if bj <= 1e-15:
            j += 1
            if j < b.size:
                bj = b[j]
    return cost


def pairwise_sq_dists(P, Q) -> np.ndarray:
    """Squared Euclidean distances between rows of P and rows of Q."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    diff = P[:, None, :] - Q[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def sinkhorn_point_clouds(P, Q, cfg: SinkhornConfig | None = None) -> float:
    """Entropic transport cost between two point clouds.

    Ground cost is the squared Euclidean distance between points, and
    both clouds carry uniform weights.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if P.size == 0 or Q.size == 0:
        raise ValueError("point clouds must be non-empty")
    if P.shape[1] != Q.shape[1]:
        raise ValueError(
            f"point dimensions differ: {P.shape[1]} vs {Q.shape[1]}"
        )
    C = pairwise_sq_dists(P, Q)
    # rectangular costs are fine for the solver; only the checks assume square
    a = np.full(P.shape[0], 1.0 / P.shape[0])
    b = np.full(Q.shape[0], 1.0 / Q.shape[0])
    return _sinkhorn_rect(a, b, C, cfg or SinkhornConfig())


def _sinkhorn_rect(a, b, C, cfg: SinkhornConfig) -> float:
    cost_max = float(C.max())
    if cost_max == 0.0:
        return 0.0
    reg = cfg.resolve_reg(cost_max)
    if cfg.use_log_domain(reg, cost_max):
        P = _sinkhorn_log(a, b, C, reg, cfg)[0]
    else:
        P = _sinkhorn_standard(a, b, C, reg, cfg)[0]
    return float((P * C).sum())


INDEX_COST_CACHE: dict[int, np.ndarray] = {}


def index_cost_matrix(d: int) -> np.ndarray:
    """Ground cost M[i, j] = (i - j)^2 over the index grid 0..d-1."""
    if d not in INDEX_COST_CACHE:
        idx = np.arange(d, dtype=float)
        M = (idx[:, None] - idx[None, :]) ** 2
        M.flags.writeable = False
        INDEX_COST_CACHE[d] = M
    return INDEX_COST_CACHE[d]


METRIC_KINDS = ("l1", "l2", "mmd_rbf", "sinkhorn")


def metric_distance(kind: str, x, y, sigma: float = 1.0,
                    cfg: SinkhornConfig | None = None) -> float:
    """Distance between two feature vectors under the selected metric.

    l1 and l2 are the usual norms of x - y. mmd_rbf is the kernel two-point
    form sqrt(2 - 2 exp(-||x-y||^2 / (2 sigma^2))). sinkhorn embeds both
    vectors onto the simplex via to_distribution and transports over the
    squared index ground cost.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    kind = kind.lower()
    if kind == "l1":
        return float(np.abs(x - y).sum())
    if kind == "l2":
        return float(np.linalg.norm(x - y))
    if kind == "mmd_rbf":
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        sq = float(((x - y) ** 2).sum())
        inner = max(2.0 - 2.0 * np.exp(-sq / (2.0 * sigma * sigma)), 0.0)
        return float(np.sqrt(inner))
    if kind == "sinkhorn":
        M = index_cost_matrix(x.size)
        return sinkhorn_distance(to_distribution(x), to_distribution(y),
                                 M, cfg).cost
    raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")
