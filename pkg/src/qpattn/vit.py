"""Minimal trainable vision transformer with pluggable attention scorers.

Pre-Norm encoder blocks (x <- x + MHSA(LN(x)); x <- x + FFN(LN(x))) over a
convolutional patch embedding, a learnable CLS token and positional table,
and a linear head on the CLS representation. Forward and backward are written
directly in numpy; the quantum scorer enters backpropagation as a primitive
whose exact partials come from the parameter-shift rule.

Parameters live in a flat ``{name: ndarray}`` dict (gradient dicts mirror it),
which keeps the optimizer, checkpointing and finite-difference checks simple.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import ndtr

from . import circuit, scorers
from .circuit import QpaParams

CHECKPOINT_SCHEMA_VERSION = 1
LN_EPS = 1e-12


@dataclass(frozen=True)
class VitConfig:
    image_size: int
    channels: int
    patch_size: int
    num_layers: int
    heads: int
    hidden_size: int
    mlp_hidden: int
    num_classes: int
    scorer: str = "qpa"
    depth: int = 16

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )
        if self.hidden_size % self.heads != 0:
            raise ValueError(
                f"hidden size {self.hidden_size} not divisible by head count {self.heads}"
            )
        if self.scorer not in scorers.SCORER_KINDS:
            raise ValueError(
                f"unknown scorer {self.scorer!r}; expected one of {scorers.SCORER_KINDS}"
            )
        if self.uses_depth and not 1 <= self.depth <= self.head_dim:
            raise ValueError(
                f"aggregation depth {self.depth} must satisfy 1 <= D <= head dim {self.head_dim}"
            )

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.heads

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1  # CLS prepended

    @property
    def uses_depth(self) -> bool:
        return self.scorer in ("qpa", "qpa-ind", "mlp49", "mlp585")


@dataclass
class VitModel:
    config: VitConfig
    params: dict[str, np.ndarray]


def _scorer_param_shapes(config: VitConfig) -> dict[str, tuple]:
    if config.scorer in ("qpa", "qpa-ind"):
        return {"scorer.qpa": (5,)}
    if config.scorer in ("mlp49", "mlp585"):
        return {
            f"scorer.{name}": shape
            for name, shape in scorers._MLP_SHAPES[config.scorer].items()
        }
    if config.scorer == "cosine":
        return {"scorer.log_tau": (config.heads,)}
    return {}


def param_spec(config: VitConfig) -> dict[str, tuple]:
    """Parameter names and shapes in deterministic order."""
    hd, c, p = config.hidden_size, config.channels, config.patch_size
    spec: dict[str, tuple] = {
        "patch.w": (hd, c * p * p),
        "patch.b": (hd,),
        "cls": (hd,),
        "pos": (config.num_tokens, hd),
    }
    for layer in range(config.num_layers):
        prefix = f"layers.{layer}."
        spec[prefix + "ln1.g"] = (hd,)
        spec[prefix + "ln1.b"] = (hd,)
        for name in ("wq", "wk", "wv", "wo"):
            spec[prefix + "attn." + name] = (hd, hd)
        for name in ("bq", "bk", "bv", "bo"):
            spec[prefix + "attn." + name] = (hd,)
        for name, shape in _scorer_param_shapes(config).items():
            spec[prefix + name] = shape
        spec[prefix + "ln2.g"] = (hd,)
        spec[prefix + "ln2.b"] = (hd,)
        spec[prefix + "ffn.w1"] = (config.mlp_hidden, hd)
        spec[prefix + "ffn.b1"] = (config.mlp_hidden,)
        spec[prefix + "ffn.w2"] = (hd, config.mlp_hidden)
        spec[prefix + "ffn.b2"] = (hd,)
    spec["head.w"] = (config.num_classes, hd)
    spec["head.b"] = (config.num_classes,)
    return spec


def _trunc_normal(rng: np.random.Generator, shape: tuple, std: float = 0.02) -> np.ndarray:
    # Resample draws outside +-2 std.
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def init_model(config: VitConfig, seed: int = 0) -> VitModel:
    """Seeded initialisation.

    Projections and tables use truncated-normal std 0.02, biases and LayerNorm
    offsets zero, LayerNorm gains one, CLS zero. Scorer parameters draw from a
    separate stream so the classical initialisation is identical across scorer
    kinds for a given seed (paired-run methodology).
    """
    ss_model, ss_scorer = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss_model)
    rng_scorer = np.random.default_rng(ss_scorer)

    params: dict[str, np.ndarray] = {}
    for name, shape in param_spec(config).items():
        base = name.rsplit(".", 1)[-1]
        if ".scorer." in name:
            continue  # filled below from the scorer stream
        if base in ("w", "wq", "wk", "wv", "wo", "w1", "w2") or name == "pos":
            params[name] = _trunc_normal(rng, shape)
        elif base == "g":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)

    for layer in range(config.num_layers):
        prefix = f"layers.{layer}.scorer."
        if config.scorer in ("qpa", "qpa-ind"):
            params[prefix + "qpa"] = QpaParams.init_random(rng_scorer).to_array()
        elif config.scorer in ("mlp49", "mlp585"):
            mlp = scorers.init_mlp_params(config.scorer, rng_scorer)
            for name, arr in mlp.to_dict().items():
                params[prefix + name] = arr
        elif config.scorer == "cosine":
            params[prefix + "log_tau"] = np.zeros(config.heads)

    # Re-order to match param_spec exactly.
    ordered = {name: params[name] for name in param_spec(config)}
    return VitModel(config=config, params=ordered)


def count_params(model: VitModel) -> int:
    return int(sum(p.size for p in model.params.values()))


def scorer_param_count(model: VitModel) -> int:
    return int(
        sum(p.size for name, p in model.params.items() if ".scorer." in name)
    )


# ---------------------------------------------------------------------------
# Layer primitives.
# ---------------------------------------------------------------------------


def patch_embed(images: np.ndarray, config: VitConfig, w: np.ndarray, b: np.ndarray):
    """Non-overlapping patch extraction + linear map (conv with kernel = stride)."""
    images = np.asarray(images, dtype=float)
    B, C, Him, Wim = images.shape
    if C != config.channels or Him != config.image_size or Wim != config.image_size:
        raise ValueError(
            f"image batch shape {images.shape[1:]} does not match config "
            f"({config.channels}, {config.image_size}, {config.image_size})"
        )
    p = config.patch_size
    g = Him // p
    patches = (
        images.reshape(B, C, g, p, g, p)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(B, g * g, C * p * p)
    )
    return patches @ w.T + b, patches


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dout, g, cache):
    xhat, inv = cache
    dxhat = dout * g
    dg = (dout * xhat).reshape(-1, dout.shape[-1]).sum(axis=0)
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


def _gelu(x: np.ndarray):
    phi = ndtr(x)
    return x * phi, phi


def _gelu_backward(dout, x, phi):
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
    return dout * (phi + x * pdf)


def _linear(x, w, b):
    return x @ w.T + b


def _linear_backward(dout, x, w):
    do2 = dout.reshape(-1, dout.shape[-1])
    dw = do2.T @ x.reshape(-1, x.shape[-1])
    db = do2.sum(axis=0)
    dx = dout @ w
    return dx, dw, db


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    B, N, hd = x.shape
    return x.reshape(B, N, heads, hd // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


# ---------------------------------------------------------------------------
# Scorer dispatch inside a layer.
# ---------------------------------------------------------------------------


def _layer_scorer_params(model: VitModel, layer: int):
    prefix = f"layers.{layer}.scorer."
    cfg = model.config
    if cfg.scorer in ("qpa", "qpa-ind"):
        return QpaParams.from_array(model.params[prefix + "qpa"])
    if cfg.scorer in ("mlp49", "mlp585"):
        return scorers.MlpScorerParams.from_dict(
            {k.removeprefix(prefix): v for k, v in model.params.items() if k.startswith(prefix)}
        )
    if cfg.scorer == "cosine":
        return model.params[prefix + "log_tau"]
    return None


def _attention_scores(model, layer, qh, kh, noise):
    cfg = model.config
    sp = _layer_scorer_params(model, layer)
    if cfg.scorer in ("qpa", "qpa-ind"):
        independent = cfg.scorer == "qpa-ind"
        qs, ks = scorers._pairwise(qh, kh, cfg.depth)
        if noise is not None:
            channel, gamma = noise
            mu = circuit.score_noisy_batch(qs, ks, sp, channel, gamma, independent)
        else:
            mu = circuit.score_batch(qs, ks, sp, independent)
        return mu.sum(axis=-1), mu
    if noise is not None:
        raise ValueError("noise injection requires a quantum scorer")
    if cfg.scorer == "dot":
        return scorers.dot_scores(qh, kh), None
    if cfg.scorer in ("mlp49", "mlp585"):
        return scorers.mlp_scores(qh, kh, sp, cfg.depth), None
    if cfg.scorer == "cosine":
        tau = np.exp(sp)[:, None, None]
        return scorers.cosine_scores(qh, kh, tau), None
    raise AssertionError(f"unreachable scorer {cfg.scorer}")


# ---------------------------------------------------------------------------
# Forward / backward.
# ---------------------------------------------------------------------------


def _forward(model: VitModel, images: np.ndarray, noise=None, collect_mu=False):
    cfg = model.config
    P = model.params
    tokens, patches = patch_embed(images, cfg, P["patch.w"], P["patch.b"])
    B = tokens.shape[0]
    cls = np.broadcast_to(P["cls"], (B, 1, cfg.hidden_size))
    x = np.concatenate([cls, tokens], axis=1) + P["pos"]

    caches = {"patches": patches, "layers": []}
    mu_sum, mu_count = 0.0, 0
    for layer in range(cfg.num_layers):
        pre = f"layers.{layer}."
        lc: dict = {"x_in": x}
        h, lc["ln1"] = _layernorm(x, P[pre + "ln1.g"], P[pre + "ln1.b"])
        lc["h"] = h
        q = _linear(h, P[pre + "attn.wq"], P[pre + "attn.bq"])
        k = _linear(h, P[pre + "attn.wk"], P[pre + "attn.bk"])
        v = _linear(h, P[pre + "attn.wv"], P[pre + "attn.bv"])
        qh, kh, vh = (_split_heads(t, cfg.heads) for t in (q, k, v))
        lc.update(qh=qh, kh=kh, vh=vh)

        if cfg.scorer == "linear":
            if noise is not None:
                raise ValueError("noise injection requires a quantum scorer")
            ctx = scorers.linear_attention(qh, kh, vh)
            lc.update(A=None, attn_probs=None)
        else:
            A, mu = _attention_scores(model, layer, qh, kh, noise)
            if collect_mu and mu is not None:
                mu_sum += float(mu.sum())
                mu_count += mu.size
            probs = scorers.row_softmax(A)
            ctx = probs @ vh
            lc.update(A=A, attn_probs=probs)

        merged = _merge_heads(ctx)
        lc["merged"] = merged
        attn_out = _linear(merged, P[pre + "attn.wo"], P[pre + "attn.bo"])
        x = x + attn_out

        lc["x_mid"] = x
        h2, lc["ln2"] = _layernorm(x, P[pre + "ln2.g"], P[pre + "ln2.b"])
        lc["h2"] = h2
        f1 = _linear(h2, P[pre + "ffn.w1"], P[pre + "ffn.b1"])
        a1, phi = _gelu(f1)
        lc.update(f1=f1, gelu_phi=phi, a1=a1)
        x = x + _linear(a1, P[pre + "ffn.w2"], P[pre + "ffn.b2"])
        caches["layers"].append(lc)

    caches["x_final"] = x
    logits = _linear(x[:, 0], P["head.w"], P["head.b"])
    extras = {
        "mu_sum": mu_sum,
        "mu_count": mu_count,
        "mean_mu": mu_sum / mu_count if mu_count else None,
    }
    return logits, caches, extras


def forward(model: VitModel, images: np.ndarray, noise=None) -> np.ndarray:
    """Class logits for a batch of images, deterministic given model and input.

    ``noise`` optionally injects a quantum channel ``(name, gamma)`` into the
    scoring circuit (quantum scorers only).
    """
    logits, _, _ = _forward(model, images, noise=noise)
    return logits


def forward_with_stats(model: VitModel, images: np.ndarray, noise=None):
    """Logits plus the mean per-dimension circuit score over all scored pairs."""
    logits, _, extras = _forward(model, images, noise=noise, collect_mu=True)
    return logits, extras


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and the logit gradient."""
    labels = np.asarray(labels)
    B, C = logits.shape
    if (
        labels.shape != (B,)
        or labels.dtype.kind not in "iu"
        or labels.min() < 0
        or labels.max() >= C
    ):
        raise ValueError("labels must be integers in [0, num_classes) matching the batch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logprobs = shifted - logsumexp
    loss = float(-logprobs[np.arange(B), labels].mean())
    dlogits = np.exp(logprobs)
    dlogits[np.arange(B), labels] -= 1.0
    return loss, dlogits / B


def backward(model: VitModel, images: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and gradients for every parameter."""
    cfg = model.config
    P = model.params
    logits, caches, _ = _forward(model, images)
    loss, dlogits = cross_entropy(logits, labels)

    grads = {name: np.zeros_like(p) for name, p in P.items()}

    dx_cls, grads["head.w"], grads["head.b"] = _linear_backward(
        dlogits, caches["x_final"][:, 0], P["head.w"]
    )
    dx = np.zeros_like(caches["x_final"])
    dx[:, 0] = dx_cls

    for layer in reversed(range(cfg.num_layers)):
        pre = f"layers.{layer}."
        lc = caches["layers"][layer]

        # FFN branch.
        da1, grads[pre + "ffn.w2"], grads[pre + "ffn.b2"] = _linear_backward(
            dx, lc["a1"], P[pre + "ffn.w2"]
        )
        df1 = _gelu_backward(da1, lc["f1"], lc["gelu_phi"])
        dh2, grads[pre + "ffn.w1"], grads[pre + "ffn.b1"] = _linear_backward(
            df1, lc["h2"], P[pre + "ffn.w1"]
        )
        dx_mid, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _layernorm_backward(
            dh2, P[pre + "ln2.g"], lc["ln2"]
        )
        dx = dx + dx_mid

        # Attention branch.
        dmerged, grads[pre + "attn.wo"], grads[pre + "attn.bo"] = _linear_backward(
            dx, lc["merged"], P[pre + "attn.wo"]
        )
        dctx = _split_heads(dmerged, cfg.heads)
        qh, kh, vh = lc["qh"], lc["kh"], lc["vh"]

        sp = _layer_scorer_params(model, layer)
        if cfg.scorer == "linear":
            dqh, dkh, dvh = scorers.linear_attention_backward(qh, kh, vh, dctx)
        else:
            probs = lc["attn_probs"]
            dprobs = dctx @ np.swapaxes(vh, -1, -2)
            dvh = np.swapaxes(probs, -1, -2) @ dctx
            dA = scorers.row_softmax_backward(probs, dprobs)
            if cfg.scorer in ("qpa", "qpa-ind"):
                dqh, dkh, dtheta = scorers.quantum_scores_backward(
                    qh, kh, sp, cfg.depth, dA, independent=cfg.scorer == "qpa-ind"
                )
                grads[pre + "scorer.qpa"] += dtheta
            elif cfg.scorer == "dot":
                dqh, dkh = scorers.dot_scores_backward(qh, kh, dA)
            elif cfg.scorer in ("mlp49", "mlp585"):
                dqh, dkh, mlp_grads = scorers.mlp_scores_backward(qh, kh, sp, cfg.depth, dA)
                for name, g in mlp_grads.items():
                    grads[pre + "scorer." + name] += g
            elif cfg.scorer == "cosine":
                tau = np.exp(sp)[:, None, None]
                dqh, dkh, dlt = scorers.cosine_scores_backward(qh, kh, tau, dA)
                grads[pre + "scorer.log_tau"] += dlt.reshape(cfg.heads)

        dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
        dh = np.zeros_like(lc["h"])
        for dt, wname in ((dq, "wq"), (dk, "wk"), (dv, "wv")):
            dpart, grads[pre + f"attn.{wname}"], grads[pre + f"attn.b{wname[1]}"] = (
                _linear_backward(dt, lc["h"], P[pre + f"attn.{wname}"])
            )
            dh += dpart
        dx_in, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _layernorm_backward(
            dh, P[pre + "ln1.g"], lc["ln1"]
        )
        dx = dx + dx_in

    # Token assembly: x = concat(cls, tokens) + pos.
    grads["pos"] = dx.sum(axis=0)
    grads["cls"] = dx[:, 0].sum(axis=0)
    dtokens = dx[:, 1:]
    _, grads["patch.w"], grads["patch.b"] = _linear_backward(
        dtokens, caches["patches"], P["patch.w"]
    )
    return loss, grads


# ---------------------------------------------------------------------------
# Checkpointing.
# ---------------------------------------------------------------------------


def save_checkpoint(model: VitModel, path) -> None:
    """Write config + flat parameter arrays to a versioned .npz blob."""
    payload = {f"param:{name}": arr for name, arr in model.params.items()}
    payload["config_json"] = np.array(json.dumps(asdict(model.config)))
    payload["schema_version"] = np.array(CHECKPOINT_SCHEMA_VERSION)
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path) -> VitModel:
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["schema_version"])
        if version != CHECKPOINT_SCHEMA_VERSION:
            raise ValueError(f"unsupported checkpoint schema version {version}")
        config = VitConfig(**json.loads(str(blob["config_json"])))
        params = {
            key.removeprefix("param:"): blob[key]
            for key in blob.files
            if key.startswith("param:")
        }
    ordered = {name: params[name] for name in param_spec(config)}
    return VitModel(config=config, params=ordered)
