"""1-Wasserstein distances between weighted point clouds.

``sinkhorn_w1`` is the entropic, differentiable estimate used inside training.
``exact_w1`` solves the discrete transport problem exactly and serves as the
oracle in tests and in the bound checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .errors import DimensionError, TransportError

logger = logging.getLogger(__name__)

EXACT_SIZE_CAP = 256


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise TransportError(f"point cloud needs shape (m >= 1, l), got {pts.shape}")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (pts.shape[0],):
                raise TransportError(f"weights shape {w.shape} does not match {pts.shape[0]} points")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise TransportError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


@dataclass(frozen=True)
class TransportResult:
    cost: float
    plan: Optional[np.ndarray] = None
    grad_p: Optional[np.ndarray] = None
    grad_q: Optional[np.ndarray] = None
    marginal_error: float = 0.0


def cost_matrix(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = p[:, None, :] - q[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _check_pair(p: PointCloud, q: PointCloud) -> None:
    if p.dim != q.dim:
        raise DimensionError(f"latent dimensions differ: {p.dim} vs {q.dim}")


def _cost_grad_to_points(dC: np.ndarray, p: np.ndarray, q: np.ndarray, C: np.ndarray):
    diff = p[:, None, :] - q[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(C[:, :, None] > 0, diff / C[:, :, None], 0.0)
    weighted = dC[:, :, None] * unit
    return weighted.sum(axis=1), -weighted.sum(axis=0)


def sinkhorn_w1(
    p: PointCloud,
    q: PointCloud,
    eps: float = 0.01,
    iters: int = 500,
    *,
    with_grad: bool = True,
) -> TransportResult:
    """Entropic W1 estimate <plan, C> after ``iters`` log-domain Sinkhorn sweeps.

    ``eps`` regularizes the raw Euclidean cost. Gradients wrt the point
    coordinates differentiate through the unrolled iterations.
    """
    _check_pair(p, q)
    if not eps > 0:
        raise TransportError(f"eps must be positive, got {eps}")
    if int(iters) < 1:
        raise TransportError(f"iters must be a positive integer, got {iters}")
    iters = int(iters)

    C = cost_matrix(p.points, q.points)
    if not C.any():
        plan = np.outer(p.weights, q.weights)
        zeros = (np.zeros_like(p.points), np.zeros_like(q.points)) if with_grad else (None, None)
        return TransportResult(0.0, plan, zeros[0], zeros[1], 0.0)

    K = -C / eps
    log_a = np.log(p.weights)
    log_b = np.log(q.weights)

    u = np.zeros(p.size)
    us = [u]
    vs = []
    for _ in range(iters):
        v = log_b - logsumexp(K + u[:, None], axis=0)
        u = log_a - logsumexp(K + v[None, :], axis=1)
        vs.append(v)
        us.append(u)

    logP = K + u[:, None] + v[None, :]
    plan = np.exp(logP)
    cost = float(np.sum(plan * C))
    marginal_error = float(np.abs(plan.sum(axis=0) - q.weights).sum())

    if not with_grad:
        return TransportResult(cost, plan, None, None, marginal_error)

    # reverse pass: cost = <P, C>, P = exp(K + u_T + v_T)
    dL = C * plan
    dK = dL.copy()
    du = dL.sum(axis=1)
    dv = dL.sum(axis=0)
    for k in range(iters, 0, -1):
        v_k = vs[k - 1]
        u_prev = us[k - 1]
        # u_k = log_a - LSE_j(K + v_k)
        row = K + v_k[None, :]
        S_u = np.exp(row - logsumexp(row, axis=1)[:, None])
        dK -= du[:, None] * S_u
        dv = dv - (du[:, None] * S_u).sum(axis=0)
        # v_k = log_b - LSE_i(K + u_{k-1})
        col = K + u_prev[:, None]
        S_v = np.exp(col - logsumexp(col, axis=0)[None, :])
        dK -= dv[None, :] * S_v
        du = -(dv[None, :] * S_v).sum(axis=1)
        dv = np.zeros_like(dv)

    dC = plan - dK / eps
    grad_p, grad_q = _cost_grad_to_points(dC, p.points, q.points, C)
    return TransportResult(cost, plan, grad_p, grad_q, marginal_error)


def exact_w1(p: PointCloud, q: PointCloud) -> TransportResult:
    """Exact discrete W1 with Euclidean ground cost.

    Equal-size uniform clouds reduce to an assignment problem; anything else
    is solved as the transport linear program.
    """
    _check_pair(p, q)
    if p.size > EXACT_SIZE_CAP or q.size > EXACT_SIZE_CAP:
        raise TransportError(f"exact W1 is capped at {EXACT_SIZE_CAP} points per cloud, got {p.size} and {q.size}")

    C = cost_matrix(p.points, q.points)
    m, n = C.shape

    if m == n and p.uniform and q.uniform:
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros_like(C)
        plan[rows, cols] = 1.0 / m
        cost = float(C[rows, cols].sum() / m)
        return TransportResult(cost, plan)

    # plan flattened row-major: x[i * n + j]
    row_sums = sparse.kron(sparse.eye(m), np.ones((1, n)))
    col_sums = sparse.kron(np.ones((1, m)), sparse.eye(n))
    A_eq = sparse.vstack([row_sums, col_sums]).tocsr()
    b_eq = np.concatenate([p.weights, q.weights])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise TransportError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(m, n)
    return TransportResult(float(np.sum(plan * C)), plan)
