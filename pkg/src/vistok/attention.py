"""Single-layer scaled dot-product scores over rotary-encoded vectors.

No softmax, values or projections: raw scores are enough to check how
position IDs enter attention. Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .mrope import PositionPlan, RotaryConfig, rotary_angles, rotary_angles_1d, rotate_pairs


@dataclass(frozen=True, eq=False)
class AttentionCase:
    queries: np.ndarray
    keys: np.ndarray
    plan: PositionPlan
    cfg: RotaryConfig

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        k = np.asarray(self.keys, dtype=np.float64)
        n = len(self.plan)
        if q.ndim != 2 or k.ndim != 2:
            raise ShapeMismatch("queries and keys must be 2-D (tokens, head_dim)")
        if q.shape[0] != n or k.shape[0] != n:
            raise ShapeMismatch(f"plan has {n} tokens, got {q.shape[0]} queries / {k.shape[0]} keys")
        if q.shape[1] != self.cfg.head_dim or k.shape[1] != self.cfg.head_dim:
            raise ShapeMismatch(f"vectors must have length {self.cfg.head_dim}")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "keys", k)


def _rotated(case: AttentionCase):
    angles = rotary_angles(case.plan.ids, case.cfg)
    return rotate_pairs(case.queries, angles), rotate_pairs(case.keys, angles)


def score_matrix(case: AttentionCase) -> np.ndarray:
    """``S[i, j] = <R(p_i) q_i, R(p_j) k_j> / sqrt(head_dim)``."""
    q, k = _rotated(case)
    return q @ k.T / np.sqrt(case.cfg.head_dim)


def score_matrix_1d(queries, keys, positions, head_dim: int, theta: float = 10000.0) -> np.ndarray:
    """Same scores with plain 1D rotary at the given sequence positions."""
    angles = rotary_angles_1d(positions, head_dim, theta)
    q = rotate_pairs(np.asarray(queries, dtype=np.float64), angles)
    k = rotate_pairs(np.asarray(keys, dtype=np.float64), angles)
    return q @ k.T / np.sqrt(head_dim)


def score_grad_query(case: AttentionCase, i: int, j: int) -> np.ndarray:
    """Gradient of ``S[i, j]`` with respect to the unrotated query ``q_i``.

    The rotation is orthogonal, so the gradient is ``R(p_i)^T R(p_j) k_j / sqrt(d)``,
    i.e. the rotated key pulled back by the inverse rotation.
    """
    angles = rotary_angles(case.plan.ids[[i, j]], case.cfg)
    k_rot = rotate_pairs(case.keys[j], angles[1])
    return rotate_pairs(k_rot, -angles[0]) / np.sqrt(case.cfg.head_dim)


def score_grad_key(case: AttentionCase, i: int, j: int) -> np.ndarray:
    """Gradient of ``S[i, j]`` with respect to the unrotated key ``k_j``."""
    angles = rotary_angles(case.plan.ids[[i, j]], case.cfg)
    q_rot = rotate_pairs(case.queries[i], angles[0])
    return rotate_pairs(q_rot, -angles[1]) / np.sqrt(case.cfg.head_dim)


def extrapolation_probe(cfg: RotaryConfig, plan: PositionPlan, chunk: int = 65536) -> dict:
    """Largest position ID, largest rotary angle, and whether all rotations are finite."""
    max_abs_angle = 0.0
    finite = True
    for start in range(0, len(plan), chunk):
        angles = rotary_angles(plan.ids[start : start + chunk], cfg)
        finite &= bool(np.isfinite(angles).all())
        finite &= bool(np.isfinite(np.cos(angles)).all() and np.isfinite(np.sin(angles)).all())
        max_abs_angle = max(max_abs_angle, float(np.abs(angles).max()))
    return {
        "max_id": int(plan.ids.max()),
        "sequential_max_id": len(plan) - 1,
        "finite": finite,
        "max_abs_angle": max_abs_angle,
    }
