"""Exact discrete mutual information between paired soft cluster assignments.

The top half works on plain numpy arrays in double precision. The bottom half
builds the same quantities as engine nodes for training; both follow one
order of operations: outer-product sum, symmetrize, normalize, clamp.
"""

from dataclasses import dataclass

import numpy as np

from .engine import autograd as ag

EPS64 = 1e-10
EPS32 = 1e-7


@dataclass(frozen=True)
class JointMatrix:
    values: np.ndarray
    clamp_eps: float = EPS64

    @property
    def row_marginal(self):
        return self.values.sum(axis=1)

    @property
    def col_marginal(self):
        return self.values.sum(axis=0)


@dataclass(frozen=True)
class MiBreakdown:
    mi: float
    h_z: float
    h_z_given_zt: float


def check_assignments(z, name="z", atol=1e-6):
    """Validate an n x C batch of simplex rows and return it as float64."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"{name} must be an n x C matrix, got shape {z.shape}")
    if z.shape[0] < 1:
        raise ValueError(f"{name} is empty (n = 0)")
    if z.shape[1] < 2:
        raise ValueError(f"{name} needs at least 2 clusters, got C = {z.shape[1]}")
    if np.any(z < -atol) or np.any(z > 1 + atol):
        raise ValueError(f"{name} has entries outside [0, 1]")
    if np.any(np.abs(z.sum(axis=1) - 1.0) > atol):
        raise ValueError(f"{name} rows do not sum to 1")
    return z


def joint_matrix(z, zt, clamp_eps=EPS64):
    z = check_assignments(z, "z")
    zt = check_assignments(zt, "zt")
    if z.shape != zt.shape:
        raise ValueError(f"shape mismatch: z {z.shape} vs zt {zt.shape}")
    P = z.T @ zt / z.shape[0]
    P = (P + P.T) / 2.0
    P = P / P.sum()
    # clamp after normalizing, no renormalization afterwards
    P = np.maximum(P, clamp_eps)
    return JointMatrix(P, clamp_eps)


def _xlogx(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def mutual_information(P):
    """MI of a joint matrix in nats, with marginal and conditional entropy.

    Marginals come from row and column sums of ``P`` as given; ``P`` is not
    renormalized, so finite differences treat every entry as a free variable.
    """
    P = np.asarray(P.values if isinstance(P, JointMatrix) else P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"joint matrix must be square, got shape {P.shape}")
    if np.any(P < 0):
        raise ValueError("joint matrix has negative entries")
    pi = P.sum(axis=1)
    pj = P.sum(axis=0)
    if np.any(pi <= 0) or np.any(pj <= 0):
        raise ValueError("joint matrix has an empty marginal")
    # sum P ln P - sum Pi ln Pi - sum Pj ln Pj, with 0 ln 0 = 0
    mi = _xlogx(P).sum() - _xlogx(pi).sum() - _xlogx(pj).sum()
    h_z = -_xlogx(pi).sum()
    return MiBreakdown(mi=float(mi), h_z=float(h_z), h_z_given_zt=float(h_z - mi))


def entropy(p):
    return float(-_xlogx(p).sum())


def information_lambda(P, lam=1.0):
    """I_lambda = I + (lam - 1) * (H(z) + H(z')) for a joint matrix."""
    P = np.asarray(P.values if isinstance(P, JointMatrix) else P, dtype=np.float64)
    br = mutual_information(P)
    return br.mi + (lam - 1.0) * (entropy(P.sum(axis=1)) + entropy(P.sum(axis=0)))


def iic_loss(z, zt, lam=1.0, clamp_eps=EPS64):
    """Negative I_lambda of the paired batches; minimize this."""
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    return -information_lambda(joint_matrix(z, zt, clamp_eps), lam)


def mi_gradient_oracle(P):
    """Analytic dI/dP_ab = ln(P_ab / (P_a P_b)) - 1, entries treated as free."""
    P = np.asarray(P.values if isinstance(P, JointMatrix) else P, dtype=np.float64)
    if np.any(P <= 0):
        raise ValueError("gradient oracle needs strictly positive (clamped) entries")
    pi = P.sum(axis=1, keepdims=True)
    pj = P.sum(axis=0, keepdims=True)
    return np.log(P / (pi * pj)) - 1.0


# ---------------------------------------------------------- differentiable path


def joint_node(z, zt):
    """Unnormalized joint z^T zt of two n x C assignment nodes (float64)."""
    z = ag.astype(ag.const(z), np.float64)
    zt = ag.astype(ag.const(zt), np.float64)
    return ag.matmul(ag.transpose(z), zt)


def information_node(P, lam=1.0, clamp_eps=EPS64):
    """I_lambda of one or more joints laid out as [C, C, ...].

    Each trailing-axis slice is symmetrized, normalized to unit mass and
    clamped independently; returns a node shaped like the trailing axes.
    """
    P = ag.astype(ag.const(P), np.float64)
    P = (P + ag.swapaxes(P, 0, 1)) * 0.5
    P = P / ag.sum_(P, axis=(0, 1), keepdims=True)
    P = ag.clamp_min(P, clamp_eps)
    pi = ag.sum_(P, axis=1, keepdims=True)
    pj = ag.sum_(P, axis=0, keepdims=True)
    terms = P * (ag.log(P) - lam * ag.log(pi) - lam * ag.log(pj))
    return ag.sum_(terms, axis=(0, 1))


def iic_loss_node(z, zt, lam=1.0, clamp_eps=EPS64):
    """Differentiable counterpart of :func:`iic_loss` for engine nodes."""
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    return -information_node(joint_node(z, zt), lam, clamp_eps)
