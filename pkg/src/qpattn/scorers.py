"""Attention score functions and weighted aggregation.

Seven interchangeable scorers share one contract: given per-head query/key
matrices ``Q, K`` of shape ``(..., N, d_h)`` they produce an ``(..., N, N)``
score matrix fed to a row softmax (the linear-attention variant skips the
softmax and returns outputs directly). The quantum scorers evaluate the
two-qubit circuit dimension-by-dimension and sum the first ``D`` per-dimension
scores, so their entries always lie in ``[0, D]`` with no extra scaling.

Each scorer with trainable parameters also exposes a ``*_backward`` companion
returning input and parameter gradients given the upstream score gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import circuit
from .circuit import QpaParams

SCORER_KINDS = ("qpa", "dot", "mlp49", "mlp585", "cosine", "linear", "qpa-ind")

COSINE_SCALE_CAP = 100.0
COSINE_NORM_EPS = 1e-12
LINEAR_ATTN_EPS = 1e-6


def _check_depth(d_h: int, depth: int) -> None:
    if not 1 <= depth <= d_h:
        raise ValueError(f"aggregation depth {depth} must satisfy 1 <= D <= head dim {d_h}")


def _pairwise(Q: np.ndarray, K: np.ndarray, depth: int):
    # (..., N, N, D) aligned scalar pairs over the first `depth` dimensions.
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    _check_depth(Q.shape[-1], depth)
    return Q[..., :, None, :depth], K[..., None, :, :depth]


def qpa_scores(Q: np.ndarray, K: np.ndarray, params: QpaParams, depth: int) -> np.ndarray:
    """Sum of per-dimension circuit scores: A[i, j] = sum_d mu(Q[i, d], K[j, d])."""
    qs, ks = _pairwise(Q, K, depth)
    return circuit.score_batch(qs, ks, params).sum(axis=-1)


def qpa_ind_scores(
    Q: np.ndarray, K: np.ndarray, params: QpaParams, depth: int
) -> np.ndarray:
    """Ablation scorer with single-parameter independent encoding, same circuit body."""
    qs, ks = _pairwise(Q, K, depth)
    return circuit.score_batch(qs, ks, params, independent=True).sum(axis=-1)


def quantum_scores_backward(
    Q: np.ndarray,
    K: np.ndarray,
    params: QpaParams,
    depth: int,
    d_scores: np.ndarray,
    independent: bool = False,
):
    """Backward pass of `qpa_scores` / `qpa_ind_scores`.

    Returns ``(dQ, dK, d_params)`` with ``d_params`` a length-5 array; the
    per-pair parameter gradients are reduced by deterministic-order summation.
    """
    qs, ks = _pairwise(Q, K, depth)
    _, d_q, d_k, d_params = circuit.score_grad_batch(qs, ks, params, independent)
    w = np.asarray(d_scores)[..., None]  # broadcast over the D per-dimension scores
    dQ = np.zeros_like(np.asarray(Q, dtype=float))
    dK = np.zeros_like(np.asarray(K, dtype=float))
    dQ[..., :depth] = (w * d_q).sum(axis=-2)
    dK[..., :depth] = (w * d_k).sum(axis=-3)
    d_theta = (d_params * w[None]).reshape(5, -1).sum(axis=1)
    return dQ, dK, d_theta


def dot_scores(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Classical scaled dot product A = Q K^T / sqrt(d_h)."""
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    return Q @ np.swapaxes(K, -1, -2) / np.sqrt(Q.shape[-1])


def dot_scores_backward(Q: np.ndarray, K: np.ndarray, d_scores: np.ndarray):
    scale = 1.0 / np.sqrt(Q.shape[-1])
    dQ = d_scores @ K * scale
    dK = np.swapaxes(d_scores, -1, -2) @ Q * scale
    return dQ, dK


# ---------------------------------------------------------------------------
# MLP scorers: per-dimension scalar pairs through a small tanh MLP with a
# sigmoid head, over the feature vector [q, k, q-k, q+k].
# ---------------------------------------------------------------------------


@dataclass
class MlpScorerParams:
    """Weights of the 49- or 585-parameter per-dimension MLP scorer.

    Two-layer variant: w1 (8, 4), b1 (8,), w_out (8,), b_out () -> 49 scalars.
    Three-layer variant: w1 (64, 4), b1 (64,), w2 (4, 64), b2 (4,), w_out (4,),
    b_out () -> 585 scalars.
    """

    w1: np.ndarray
    b1: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    w2: np.ndarray | None = None
    b2: np.ndarray | None = None

    @property
    def num_params(self) -> int:
        total = self.w1.size + self.b1.size + self.w_out.size + self.b_out.size
        if self.w2 is not None:
            total += self.w2.size + self.b2.size
        return int(total)

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {"w1": self.w1, "b1": self.b1, "w_out": self.w_out, "b_out": self.b_out}
        if self.w2 is not None:
            out["w2"] = self.w2
            out["b2"] = self.b2
        return out

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "MlpScorerParams":
        return cls(
            w1=d["w1"],
            b1=d["b1"],
            w_out=d["w_out"],
            b_out=d["b_out"],
            w2=d.get("w2"),
            b2=d.get("b2"),
        )


_MLP_SHAPES = {
    "mlp49": {"w1": (8, 4), "b1": (8,), "w_out": (8,), "b_out": ()},
    "mlp585": {
        "w1": (64, 4),
        "b1": (64,),
        "w2": (4, 64),
        "b2": (4,),
        "w_out": (4,),
        "b_out": (),
    },
}


def init_mlp_params(variant: str, rng: np.random.Generator) -> MlpScorerParams:
    """Uniform +-1/sqrt(fan_in) initialisation of an MLP scorer variant."""
    if variant not in _MLP_SHAPES:
        raise ValueError(f"unknown MLP scorer variant {variant!r}")
    arrays = {}
    for name, shape in _MLP_SHAPES[variant].items():
        fan_in = shape[-1] if name.startswith("w") and len(shape) > 1 else None
        if name == "w_out":
            fan_in = shape[0]
        if fan_in:
            bound = 1 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return MlpScorerParams.from_dict(arrays)


def _sigmoid(x):
    return 0.5 * (1 + np.tanh(x / 2))


def _mlp_features(q, k):
    return np.stack([q, k, q - k, q + k], axis=-1)


def mlp_scores(
    Q: np.ndarray, K: np.ndarray, params: MlpScorerParams, depth: int
) -> np.ndarray:
    """Per-dimension MLP scores summed over the first `depth` dimensions."""
    qs, ks = _pairwise(Q, K, depth)
    f = _mlp_features(*np.broadcast_arrays(qs, ks))
    h = np.tanh(f @ params.w1.T + params.b1)
    if params.w2 is not None:
        h = np.tanh(h @ params.w2.T + params.b2)
    return _sigmoid(h @ params.w_out + params.b_out).sum(axis=-1)


def mlp_score(q: float, k: float, params: MlpScorerParams) -> float:
    """Single scalar-pair score in (0, 1)."""
    q_arr = np.array([[q]])
    k_arr = np.array([[k]])
    return float(mlp_scores(q_arr, k_arr, params, 1)[0, 0])


def mlp_scores_backward(
    Q: np.ndarray,
    K: np.ndarray,
    params: MlpScorerParams,
    depth: int,
    d_scores: np.ndarray,
):
    """Backward pass of `mlp_scores`: returns (dQ, dK, grads-dict)."""
    qs, ks = _pairwise(Q, K, depth)
    f = _mlp_features(*np.broadcast_arrays(qs, ks))
    h1 = np.tanh(f @ params.w1.T + params.b1)
    if params.w2 is not None:
        h2 = np.tanh(h1 @ params.w2.T + params.b2)
        top = h2
    else:
        h2 = None
        top = h1
    s = _sigmoid(top @ params.w_out + params.b_out)

    ds = np.asarray(d_scores)[..., None] * s * (1 - s)  # (..., N, N, D)
    grads: dict[str, np.ndarray] = {
        "w_out": (ds[..., None] * top).reshape(-1, top.shape[-1]).sum(axis=0),
        "b_out": np.asarray(ds.sum()),
    }
    d_top = ds[..., None] * params.w_out
    if h2 is not None:
        d_pre2 = d_top * (1 - h2**2)
        grads["w2"] = d_pre2.reshape(-1, d_pre2.shape[-1]).T @ h1.reshape(-1, h1.shape[-1])
        grads["b2"] = d_pre2.reshape(-1, d_pre2.shape[-1]).sum(axis=0)
        d_h1 = d_pre2 @ params.w2
    else:
        d_h1 = d_top
    d_pre1 = d_h1 * (1 - h1**2)
    grads["w1"] = d_pre1.reshape(-1, d_pre1.shape[-1]).T @ f.reshape(-1, f.shape[-1])
    grads["b1"] = d_pre1.reshape(-1, d_pre1.shape[-1]).sum(axis=0)
    d_f = d_pre1 @ params.w1  # (..., N, N, D, 4)

    # f = [q, k, q-k, q+k]
    d_q = d_f[..., 0] + d_f[..., 2] + d_f[..., 3]
    d_k = d_f[..., 1] - d_f[..., 2] + d_f[..., 3]
    dQ = np.zeros_like(np.asarray(Q, dtype=float))
    dK = np.zeros_like(np.asarray(K, dtype=float))
    dQ[..., :depth] = d_q.sum(axis=-2)
    dK[..., :depth] = d_k.sum(axis=-3)
    return dQ, dK, grads


# ---------------------------------------------------------------------------
# Cosine scorer (bounded by construction, learnable temperature).
# ---------------------------------------------------------------------------


def _safe_norms(M: np.ndarray):
    n = np.linalg.norm(M, axis=-1, keepdims=True)
    return n, n + COSINE_NORM_EPS


def cosine_multiplier(tau) -> np.ndarray:
    """exp(min(log tau, log 100)): the temperature multiplier with its cap."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    return np.exp(np.minimum(np.log(tau), np.log(COSINE_SCALE_CAP)))


def cosine_scores(Q: np.ndarray, K: np.ndarray, tau) -> np.ndarray:
    """Cosine similarity of row pairs scaled by the capped temperature.

    ``tau`` is a positive scalar or an array that broadcasts against the score
    matrix (e.g. shape (H, 1, 1) for per-head temperatures).
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    _, qden = _safe_norms(Q)
    _, kden = _safe_norms(K)
    cos = (Q / qden) @ np.swapaxes(K / kden, -1, -2)
    return cos * cosine_multiplier(tau)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def cosine_scores_backward(Q: np.ndarray, K: np.ndarray, tau, d_scores: np.ndarray):
    """Backward pass of `cosine_scores`: returns (dQ, dK, d_log_tau).

    ``d_log_tau`` is the gradient w.r.t. log(tau) reduced to tau's shape; it
    vanishes wherever the cap is active.
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    qn, qden = _safe_norms(Q)
    kn, kden = _safe_norms(K)
    U = Q / qden
    V = K / kden
    cos = U @ np.swapaxes(V, -1, -2)
    mult = cosine_multiplier(tau)

    g = np.asarray(d_scores) * mult
    # Exact gradient of u = Q / (|Q| + eps): the |Q|-direction term carries a
    # 1/|Q| factor; it vanishes identically for zero rows.
    qn_safe = np.maximum(qn, COSINE_NORM_EPS)
    kn_safe = np.maximum(kn, COSINE_NORM_EPS)
    gV = g @ V
    dQ = gV / qden - Q * (Q * gV).sum(axis=-1, keepdims=True) / (qden**2 * qn_safe)
    gU = np.swapaxes(g, -1, -2) @ U
    dK = gU / kden - K * (K * gU).sum(axis=-1, keepdims=True) / (kden**2 * kn_safe)

    tau_arr = np.asarray(tau, dtype=float)
    uncapped = (tau_arr < COSINE_SCALE_CAP).astype(float)
    d_log_tau = _unbroadcast(np.asarray(d_scores) * cos * mult, tau_arr.shape) * uncapped
    if tau_arr.ndim == 0:
        d_log_tau = float(d_log_tau)
    return dQ, dK, d_log_tau


# ---------------------------------------------------------------------------
# Linear attention (kernelised, no learnable parameters, no softmax).
# ---------------------------------------------------------------------------


def elu_plus_one(x: np.ndarray) -> np.ndarray:
    """Kernel feature map phi(x) = elu(x) + 1, strictly positive."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def _elu_plus_one_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def linear_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Kernelised attention phi(Q)(phi(K)^T V) / (phi(Q) . sum_j phi(k_j) + eps).

    Exploits matrix associativity, so the cost is O(N d_h^2) instead of
    O(N^2 d_h); equals explicit normalised kernel attention row by row.
    """
    P = elu_plus_one(Q)
    R = elu_plus_one(K)
    context = np.swapaxes(R, -1, -2) @ np.asarray(V, dtype=float)
    num = P @ context
    den = (P * R.sum(axis=-2, keepdims=True)).sum(axis=-1, keepdims=True) + LINEAR_ATTN_EPS
    return num / den


def linear_attention_backward(
    Q: np.ndarray, K: np.ndarray, V: np.ndarray, d_out: np.ndarray
):
    """Backward pass of `linear_attention`: returns (dQ, dK, dV)."""
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    V = np.asarray(V, dtype=float)
    P = elu_plus_one(Q)
    R = elu_plus_one(K)
    context = np.swapaxes(R, -1, -2) @ V  # (..., d, d)
    s = R.sum(axis=-2, keepdims=True)  # (..., 1, d)
    num = P @ context
    den = (P * s).sum(axis=-1, keepdims=True) + LINEAR_ATTN_EPS
    out = num / den

    d_num = np.asarray(d_out) / den
    d_den = -(np.asarray(d_out) * out).sum(axis=-1, keepdims=True) / den

    dP = d_num @ np.swapaxes(context, -1, -2) + d_den * s
    d_context = np.swapaxes(P, -1, -2) @ d_num
    d_s = (d_den * P).sum(axis=-2, keepdims=True)
    dR = V @ np.swapaxes(d_context, -1, -2) + d_s
    dV = R @ d_context

    return dP * _elu_plus_one_grad(Q), dR * _elu_plus_one_grad(K), dV


def softmax_weighted_sum(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise softmax of the score matrix followed by the value aggregation."""
    return row_softmax(A) @ np.asarray(V, dtype=float)


def row_softmax(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    shifted = A - A.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def row_softmax_backward(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """Gradient through a row softmax given its output P and upstream dP."""
    inner = (dP * P).sum(axis=-1, keepdims=True)
    return P * (dP - inner)
