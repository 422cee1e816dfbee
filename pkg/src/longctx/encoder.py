"""Minimal bidirectional transformer encoder producing unit-norm mean-pooled embeddings.

Position information enters either through a learned absolute table added to
token embeddings, or through rotary rotation of per-head query/key vectors at
every layer. Architecture constants: pre-norm blocks, tanh-approximated GELU,
bidirectional (full) attention, all tensors float64. Weight matrices (including
the position table) are drawn uniform in [-1/sqrt(d), 1/sqrt(d)] from a seeded
generator; biases start at zero and layer norms at identity, so two models
built from equal configs are bit-identical.

The forward pass can record a cache from which ``backward_batch`` produces
exact analytic gradients for every parameter (checked against finite
differences in the test suite). Models are immutable during inference; encode
and forward are pure in the model.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    EmptyInputError,
    LengthError,
    NumericError,
    PositionError,
)
from .positions import (
    ExtensionSpec,
    ResolvedExtension,
    RoPEFrequencies,
    Strategy,
    attention_scale,
    build_interpolated_matrix,
    ntk_frequencies,
    resolve_extension,
    se_remap_deltas,
    standard_frequencies,
)

ABSOLUTE = "absolute"
ROTARY = "rotary"

_LN_EPS = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and initialization seed for one encoder."""

    hidden_size: int
    n_layers: int
    n_heads: int
    vocab_size: int
    original_context: int
    position_mode: str = ABSOLUTE
    ffn_multiplier: int = 4
    init_seed: int = 0
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.hidden_size < 2 or self.hidden_size % 2 != 0:
            raise ConfigurationError(
                f"hidden_size must be a positive even integer, got {self.hidden_size}"
            )
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.hidden_size % self.n_heads != 0:
            raise ConfigurationError(
                f"n_heads {self.n_heads} must divide hidden_size {self.hidden_size}"
            )
        if (self.hidden_size // self.n_heads) % 2 != 0:
            raise ConfigurationError(
                f"per-head dimension {self.hidden_size // self.n_heads} must be even "
                "(rotary rotation pairs dimensions)"
            )
        if self.vocab_size < 1:
            raise ConfigurationError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.original_context < 1:
            raise ConfigurationError(
                f"original_context must be >= 1, got {self.original_context}"
            )
        if self.position_mode not in (ABSOLUTE, ROTARY):
            raise ConfigurationError(f"unknown position mode {self.position_mode!r}")
        if self.ffn_multiplier < 1:
            raise ConfigurationError(f"ffn_multiplier must be >= 1, got {self.ffn_multiplier}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    @property
    def ffn_size(self) -> int:
        return self.hidden_size * self.ffn_multiplier


@dataclass(frozen=True)
class PosExtension:
    """Marker for a position table that was extended (and possibly tuned)."""

    mode: str  # "pi_anchored" | "rp_suffix"
    l_orig: int
    l_target: int


@dataclass
class Model:
    """Parameter store plus config; treat as immutable during inference."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    pos_frozen: np.ndarray | None = None  # per-row flags for the position table
    extension: PosExtension | None = None

    def copy(self) -> "Model":
        return Model(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            pos_frozen=None if self.pos_frozen is None else self.pos_frozen.copy(),
            extension=self.extension,
        )

    @property
    def table_length(self) -> int:
        """Row count of the active absolute position table."""
        if "pos_table" not in self.params:
            raise ConfigurationError("rotary-mode models have no position table")
        return self.params["pos_table"].shape[0]


def init_model(config: ModelConfig) -> Model:
    """Build a model with seeded deterministic weights.

    Two calls with equal configs produce bit-identical parameter tensors.
    """
    rng = np.random.default_rng(config.init_seed)
    d = config.hidden_size
    bound = 1.0 / math.sqrt(d)

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {}
    params["tok_emb"] = draw(config.vocab_size, d)
    if config.position_mode == ABSOLUTE:
        params["pos_table"] = draw(config.original_context, d)
    for i in range(config.n_layers):
        p = f"layers.{i}"
        params[f"{p}.attn.wq"] = draw(d, d)
        params[f"{p}.attn.wk"] = draw(d, d)
        params[f"{p}.attn.wv"] = draw(d, d)
        params[f"{p}.attn.wo"] = draw(d, d)
        params[f"{p}.ffn.w1"] = draw(d, config.ffn_size)
        params[f"{p}.ffn.w2"] = draw(config.ffn_size, d)
        for name, shape in (
            (f"{p}.attn.bq", (d,)), (f"{p}.attn.bk", (d,)), (f"{p}.attn.bv", (d,)),
            (f"{p}.attn.bo", (d,)), (f"{p}.ffn.b1", (config.ffn_size,)),
            (f"{p}.ffn.b2", (d,)),
        ):
            params[name] = np.zeros(shape)
        params[f"{p}.ln1.g"] = np.ones(d)
        params[f"{p}.ln1.b"] = np.zeros(d)
        params[f"{p}.ln2.g"] = np.ones(d)
        params[f"{p}.ln2.b"] = np.zeros(d)
    params["final_ln.g"] = np.ones(d)
    params["final_ln.b"] = np.zeros(d)
    return Model(config=config, params=params)


def model_checksum(model: Model) -> str:
    """sha256 over all parameter bytes in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(model.params[name].tobytes())
    return h.hexdigest()


def model_frequencies(model: Model, ntk_lambda: float | None = None) -> RoPEFrequencies:
    cfg = model.config
    if ntk_lambda is None:
        return standard_frequencies(cfg.head_dim, base=cfg.rope_base)
    return ntk_frequencies(cfg.head_dim, base=cfg.rope_base, lam=ntk_lambda)


# ---------------------------------------------------------------------------
# rotary rotation and the attention-score primitive


def apply_rope(h: np.ndarray, m: float, freqs: RoPEFrequencies) -> np.ndarray:
    """Rotate consecutive pairs of ``h`` by angles m * theta_j. Norm-preserving."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.size % 2 != 0:
        raise DimensionError(f"expected an even-length vector, got shape {h.shape}")
    if h.size != freqs.dim:
        raise DimensionError(f"vector length {h.size} does not match freqs dim {freqs.dim}")
    ang = m * freqs.theta
    c, s = np.cos(ang), np.sin(ang)
    out = np.empty_like(h)
    h1, h2 = h[0::2], h[1::2]
    out[0::2] = h1 * c - h2 * s
    out[1::2] = h1 * s + h2 * c
    return out


def attention_score(
    q: np.ndarray, k: np.ndarray, m: float, n: float,
    freqs: RoPEFrequencies | None = None,
) -> float:
    """Rotary attention logit between q at position m and k at position n.

    Equals the dot product of the rotated vectors and depends on positions
    only through m - n.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape:
        raise DimensionError(f"q and k must have equal shapes, got {q.shape} vs {k.shape}")
    if q.ndim != 1 or q.size % 2 != 0:
        raise DimensionError(f"expected even-length vectors, got shape {q.shape}")
    if freqs is None:
        freqs = standard_frequencies(q.size)
    return float(apply_rope(q, m, freqs) @ apply_rope(k, n, freqs))


def _rotate_batch(x: np.ndarray, phases: np.ndarray, theta: np.ndarray):
    """Rotate (B,H,L,Dh) queries/keys by per-token phases (B,L)."""
    ang = phases[:, None, :, None] * theta[None, None, None, :]
    c, s = np.cos(ang), np.sin(ang)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x1 * c - x2 * s
    out[..., 1::2] = x1 * s + x2 * c
    return out, (c, s)


def _rotate_batch_backward(dy: np.ndarray, rot) -> np.ndarray:
    c, s = rot
    dy1, dy2 = dy[..., 0::2], dy[..., 1::2]
    dx = np.empty_like(dy)
    dx[..., 0::2] = dy1 * c + dy2 * s
    dx[..., 1::2] = -dy1 * s + dy2 * c
    return dx


def _relative_scores(q: np.ndarray, k: np.ndarray, rel: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Attention logits when each (i, j) pair carries its own relative position.

    score_p(i,j) = (q1 k1 + q2 k2) cos(r theta_p) + (q1 k2 - q2 k1) sin(r theta_p),
    summed over pairs p; identical to rotating q by rel[i,j] and dotting with k.
    """
    B, H, L, Dh = q.shape
    q1, q2 = q[..., 0::2], q[..., 1::2]
    k1, k2 = k[..., 0::2], k[..., 1::2]
    rel = rel.astype(np.float64)
    scores = np.zeros((B, H, L, L))
    buf1 = np.empty((B, L, L))
    buf2 = np.empty((B, L, L))
    for p in range(Dh // 2):
        ang = rel * theta[p]
        c, s = np.cos(ang), np.sin(ang)
        for h in range(H):
            np.multiply(q1[:, h, :, p, None], k1[:, h, None, :, p], out=buf1)
            np.multiply(q2[:, h, :, p, None], k2[:, h, None, :, p], out=buf2)
            buf1 += buf2
            buf1 *= c
            scores[:, h] += buf1
            np.multiply(q1[:, h, :, p, None], k2[:, h, None, :, p], out=buf1)
            np.multiply(q2[:, h, :, p, None], k1[:, h, None, :, p], out=buf2)
            buf1 -= buf2
            buf1 *= s
            scores[:, h] += buf1
    return scores


# ---------------------------------------------------------------------------
# layer pieces


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)

def _layer_norm_backward(dy, ctx, g):
    xhat, inv = ctx
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(-1, keepdims=True) - xhat * (dxh * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.multiply(x, x)
    t *= x
    t *= _GELU_A
    t += x
    t *= _GELU_C
    np.tanh(t, out=t)
    out = t + 1.0
    out *= x
    out *= 0.5
    return out, t

def _gelu_backward(dy, x, t):
    du = np.multiply(x, x)
    du *= 3.0 * _GELU_A
    du += 1.0
    du *= _GELU_C
    dx = np.multiply(t, t)
    np.subtract(1.0, dx, out=dx)
    dx *= du
    dx *= x
    dx += 1.0
    dx += t
    dx *= 0.5
    dx *= dy
    return dx


def _split_heads(x, n_heads):
    B, L, D = x.shape
    return x.reshape(B, L, n_heads, D // n_heads).transpose(0, 2, 1, 3)

def _merge_heads(x):
    B, H, L, Dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * Dh)


# ---------------------------------------------------------------------------
# forward / backward over a padded batch


def forward_batch(
    model: Model,
    token_ids: np.ndarray,
    mask: np.ndarray,
    *,
    abs_ids: np.ndarray | None = None,
    phases: np.ndarray | None = None,
    rel: np.ndarray | None = None,
    attn_scale: np.ndarray | None = None,
    freqs: RoPEFrequencies | None = None,
    pos_table: np.ndarray | None = None,
    want_cache: bool = False,
):
    """Hidden states (B, L, d) for a padded batch.

    Exactly one of ``abs_ids`` (absolute mode) or ``phases``/``rel`` (rotary
    mode) applies. ``attn_scale`` multiplies pre-softmax logits per sequence.
    ``pos_table`` overrides the model's own table (used by the plug-and-play
    interpolation strategy, which builds its table on the fly). Padded key
    positions are masked out of attention; padded rows still carry (ignored)
    values.
    """
    cfg = model.config
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.ndim != 2:
        raise DimensionError(f"token batch must be 2-D, got shape {token_ids.shape}")
    B, L = token_ids.shape
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise EmptyInputError("each sequence needs at least one active token")
    if np.min(token_ids) < 0 or np.max(token_ids) >= cfg.vocab_size:
        raise ConfigurationError("token ids outside the vocabulary")
    if attn_scale is None:
        attn_scale = np.ones(B)

    x = model.params["tok_emb"][token_ids]
    if cfg.position_mode == ABSOLUTE:
        if abs_ids is None:
            raise ConfigurationError("absolute-mode forward needs position ids")
        table = model.params["pos_table"] if pos_table is None else pos_table
        active = abs_ids[mask]
        if active.size and (active.min() < 0 or active.max() >= table.shape[0]):
            raise PositionError(
                f"position id {int(active.max())} outside table of length {table.shape[0]}"
            )
        x = x + table[abs_ids]
        theta = None
    else:
        if phases is None and rel is None:
            raise ConfigurationError("rotary-mode forward needs phases or a relative-position matrix")
        if freqs is None:
            freqs = model_frequencies(model)
        theta = freqs.theta

    inv_sqrt = 1.0 / math.sqrt(cfg.head_dim)
    scale_b = (attn_scale * inv_sqrt)[:, None, None, None]
    mask_bias = np.where(mask, 0.0, -np.inf)[:, None, None, :]
    h = x
    layers_cache = []

    for i in range(cfg.n_layers):
        p = model.params
        pre = f"layers.{i}"
        h_in = h
        a, ln1 = _layer_norm(h, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        q = _split_heads(a @ p[f"{pre}.attn.wq"] + p[f"{pre}.attn.bq"], cfg.n_heads)
        k = _split_heads(a @ p[f"{pre}.attn.wk"] + p[f"{pre}.attn.bk"], cfg.n_heads)
        v = _split_heads(a @ p[f"{pre}.attn.wv"] + p[f"{pre}.attn.bv"], cfg.n_heads)

        rot_q = rot_k = rot_ctx = None
        if cfg.position_mode == ROTARY:
            if rel is not None:
                scores = _relative_scores(q, k, rel, theta)
                qr, kr = q, k  # rotation folded into the pairwise scores
            else:
                qr, rot_ctx = _rotate_batch(q, phases, theta)
                kr, _rot_k_ctx = _rotate_batch(k, phases, theta)
                rot_q, rot_k = rot_ctx, _rot_k_ctx
                scores = qr @ kr.swapaxes(-1, -2)
        else:
            qr, kr = q, k
            scores = qr @ kr.swapaxes(-1, -2)

        scores *= scale_b
        scores += mask_bias
        smax = scores.max(-1, keepdims=True)
        scores -= smax
        np.exp(scores, out=scores)
        scores /= scores.sum(-1, keepdims=True)
        w = scores
        ctx = w @ v
        merged = _merge_heads(ctx)
        out = merged @ p[f"{pre}.attn.wo"] + p[f"{pre}.attn.bo"]
        h = h_in + out

        h_mid = h
        a2, ln2 = _layer_norm(h, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        f = a2 @ p[f"{pre}.ffn.w1"] + p[f"{pre}.ffn.b1"]
        gact, tanh_u = _gelu(f)
        h = h_mid + gact @ p[f"{pre}.ffn.w2"] + p[f"{pre}.ffn.b2"]

        if want_cache:
            layers_cache.append({
                "a": a, "ln1": ln1, "q": q, "k": k, "v": v,
                "qr": qr, "kr": kr, "rot_q": rot_q, "rot_k": rot_k,
                "w": w, "merged": merged, "a2": a2, "ln2": ln2,
                "f": f, "tanh_u": tanh_u, "gact": gact,
            })

    out, final_ln = _layer_norm(h, model.params["final_ln.g"], model.params["final_ln.b"])
    if not want_cache:
        return out
    cache = {
        "token_ids": token_ids, "mask": mask, "abs_ids": abs_ids, "phases": phases,
        "attn_scale": attn_scale, "theta": theta, "layers": layers_cache,
        "final_ln": final_ln, "scale_b": scale_b,
    }
    return out, cache


def backward_batch(
    model: Model,
    cache: dict,
    d_out: np.ndarray,
    *,
    needed: set[str] | None = None,
) -> dict[str, np.ndarray]:
    """Analytic gradients of a scalar loss w.r.t. every parameter.

    ``d_out`` is the loss gradient at the final hidden states. Token and
    position gradients are scatter-added over the ids that produced them.
    ``needed`` restricts which parameter gradients are accumulated (the
    backward chain itself always runs in full); None computes all. Only
    separable position assignments are supported (training never uses the
    pairwise relative path).
    """
    cfg = model.config
    p = model.params
    grads = {
        name: np.zeros_like(arr) for name, arr in p.items()
        if needed is None or name in needed
    }

    def want(name):
        return needed is None or name in needed

    dh, dg, db = _layer_norm_backward(d_out, cache["final_ln"], p["final_ln.g"])
    if want("final_ln.g"):
        grads["final_ln.g"] += dg
        grads["final_ln.b"] += db

    scale_b = cache["scale_b"]

    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}"
        c = cache["layers"][i]

        # FFN block
        d_ffn_out = dh
        if want(f"{pre}.ffn.w2"):
            grads[f"{pre}.ffn.w2"] += c["gact"].reshape(-1, c["gact"].shape[-1]).T @ d_ffn_out.reshape(-1, d_ffn_out.shape[-1])
            grads[f"{pre}.ffn.b2"] += d_ffn_out.sum(axis=(0, 1))
        d_gact = d_ffn_out @ p[f"{pre}.ffn.w2"].T
        d_f = _gelu_backward(d_gact, c["f"], c["tanh_u"])
        if want(f"{pre}.ffn.w1"):
            grads[f"{pre}.ffn.w1"] += c["a2"].reshape(-1, c["a2"].shape[-1]).T @ d_f.reshape(-1, d_f.shape[-1])
            grads[f"{pre}.ffn.b1"] += d_f.sum(axis=(0, 1))
        d_a2 = d_f @ p[f"{pre}.ffn.w1"].T
        dx, dg, db = _layer_norm_backward(d_a2, c["ln2"], p[f"{pre}.ln2.g"])
        if want(f"{pre}.ln2.g"):
            grads[f"{pre}.ln2.g"] += dg
            grads[f"{pre}.ln2.b"] += db
        dh = dh + dx  # residual + layer-norm path into h_mid

        # attention block
        d_attn_out = dh
        if want(f"{pre}.attn.wo"):
            grads[f"{pre}.attn.wo"] += c["merged"].reshape(-1, c["merged"].shape[-1]).T @ d_attn_out.reshape(-1, d_attn_out.shape[-1])
            grads[f"{pre}.attn.bo"] += d_attn_out.sum(axis=(0, 1))
        d_merged = d_attn_out @ p[f"{pre}.attn.wo"].T
        B, L, D = d_merged.shape
        d_ctx = d_merged.reshape(B, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)

        w = c["w"]
        d_w = d_ctx @ c["v"].swapaxes(-1, -2)
        d_v = w.swapaxes(-1, -2) @ d_ctx
        d_w -= (d_w * w).sum(-1, keepdims=True)
        d_w *= w
        d_w *= scale_b
        d_scores = d_w
        d_qr = d_scores @ c["kr"]
        d_kr = d_scores.swapaxes(-1, -2) @ c["qr"]

        if cfg.position_mode == ROTARY:
            d_q = _rotate_batch_backward(d_qr, c["rot_q"])
            d_k = _rotate_batch_backward(d_kr, c["rot_k"])
        else:
            d_q, d_k = d_qr, d_kr

        d_q = _merge_heads(d_q)
        d_k = _merge_heads(d_k)
        d_v = _merge_heads(d_v)
        if want(f"{pre}.attn.wq"):
            a_flat = c["a"].reshape(-1, D)
            grads[f"{pre}.attn.wq"] += a_flat.T @ d_q.reshape(-1, D)
            grads[f"{pre}.attn.wk"] += a_flat.T @ d_k.reshape(-1, D)
            grads[f"{pre}.attn.wv"] += a_flat.T @ d_v.reshape(-1, D)
            grads[f"{pre}.attn.bq"] += d_q.sum(axis=(0, 1))
            grads[f"{pre}.attn.bk"] += d_k.sum(axis=(0, 1))
            grads[f"{pre}.attn.bv"] += d_v.sum(axis=(0, 1))
        d_a = d_q @ p[f"{pre}.attn.wq"].T + d_k @ p[f"{pre}.attn.wk"].T + d_v @ p[f"{pre}.attn.wv"].T
        dx, dg, db = _layer_norm_backward(d_a, c["ln1"], p[f"{pre}.ln1.g"])
        if want(f"{pre}.ln1.g"):
            grads[f"{pre}.ln1.g"] += dg
            grads[f"{pre}.ln1.b"] += db
        dh = dh + dx

    if want("tok_emb"):
        np.add.at(grads["tok_emb"], cache["token_ids"], dh)
    if cfg.position_mode == ABSOLUTE and want("pos_table"):
        np.add.at(grads["pos_table"], cache["abs_ids"], dh)
    return grads


# ---------------------------------------------------------------------------
# pooling and the single-sequence surface


def pool_and_normalize(hidden: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Mean over active rows, then L2 normalization."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2:
        raise DimensionError(f"hidden states must be 2-D, got shape {hidden.shape}")
    if mask is None:
        mask = np.ones(hidden.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyInputError("cannot pool an empty sequence")
    v = hidden[mask].mean(axis=0)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not math.isfinite(norm):
        raise NumericError("pooled vector cannot be normalized")
    return v / norm


def pool_and_normalize_backward(hidden, mask, d_emb):
    """Gradient of pool_and_normalize back to the hidden rows."""
    v = hidden[mask].mean(axis=0)
    norm = float(np.linalg.norm(v))
    e = v / norm
    d_v = (d_emb - e * float(e @ d_emb)) / norm
    d_h = np.zeros_like(hidden)
    d_h[mask] = d_v / int(mask.sum())
    return d_h


def forward(
    model: Model,
    token_ids: np.ndarray,
    positions: np.ndarray,
    attn_scale: float = 1.0,
    *,
    freqs: RoPEFrequencies | None = None,
) -> np.ndarray:
    """Per-token hidden states for one sequence.

    ``positions`` are integer row indices in absolute mode and real-valued
    phases in rotary mode.
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.ndim != 1 or token_ids.size == 0:
        raise EmptyInputError("token sequence must be non-empty and 1-D")
    positions = np.asarray(positions)
    if positions.shape != token_ids.shape:
        raise DimensionError("positions must align with the token sequence")
    mask = np.ones((1, token_ids.size), dtype=bool)
    if model.config.position_mode == ABSOLUTE:
        return forward_batch(
            model, token_ids[None, :], mask,
            abs_ids=positions.astype(np.int64)[None, :],
            attn_scale=np.array([attn_scale]),
        )[0]
    return forward_batch(
        model, token_ids[None, :], mask,
        phases=positions.astype(np.float64)[None, :],
        attn_scale=np.array([attn_scale]), freqs=freqs,
    )[0]


# ---------------------------------------------------------------------------
# strategy dispatch


def _check_extension_compat(model: Model, resolved: ResolvedExtension) -> None:
    spec = resolved.spec
    if spec.l_orig != model.config.original_context:
        raise ConfigurationError(
            f"spec l_orig {spec.l_orig} does not match the model's original "
            f"context {model.config.original_context}"
        )
    tuned = spec.strategy in (Strategy.TUNED_PI, Strategy.TUNED_RP)
    if tuned:
        want = "pi_anchored" if spec.strategy is Strategy.TUNED_PI else "rp_suffix"
        if model.extension is None:
            raise ConfigurationError(
                f"strategy {spec.strategy.value} needs a model with an installed "
                "position extension"
            )
        if model.extension.mode != want or model.extension.l_target < spec.l_target:
            raise ConfigurationError(
                f"model extension {model.extension} incompatible with {spec.strategy.value} "
                f"to {spec.l_target}"
            )
    elif model.extension is not None:
        raise ConfigurationError(
            "model carries an extended position table; evaluate it with "
            "tuned_pi/tuned_rp or use the base checkpoint"
        )


def _absolute_assignment(model: Model, resolved: ResolvedExtension, n: int, table: np.ndarray):
    """Row indices into ``table`` for one sequence of length n."""
    spec = resolved.spec
    idx = np.arange(n, dtype=np.int64)
    st = resolved.strategy
    if st is Strategy.NONE:
        return idx
    if st is Strategy.GP:
        return idx // resolved.scale
    if st is Strategy.RP:
        return idx % spec.l_orig
    if st in (Strategy.PI, Strategy.TUNED_PI):
        if n <= spec.l_orig:
            return idx * resolved.scale
        return idx
    if st is Strategy.TUNED_RP:
        return idx
    raise ConfigurationError(f"strategy {st.value} has no absolute position assignment")


def _rotary_assignment(resolved: ResolvedExtension, n: int) -> np.ndarray:
    """Real-valued phase positions for one sequence of length n."""
    spec = resolved.spec
    idx = np.arange(n, dtype=np.float64)
    st = resolved.strategy
    if st in (Strategy.NONE, Strategy.NTK):
        return idx
    if st is Strategy.GP:
        return np.floor(idx / resolved.scale)
    if st is Strategy.PI:
        if n <= spec.l_orig:
            return idx
        return idx / resolved.scale
    raise ConfigurationError(f"strategy {st.value} has no rotary phase assignment")


def position_assignment(model: Model, n: int, spec: ExtensionSpec):
    """Effective positions for an n-token input under ``spec``.

    Returns integer row indices (absolute mode) or float phases (rotary);
    SelfExtend returns the full relative-position matrix instead.
    """
    resolved = resolve_extension(spec, model.config.position_mode)
    if model.config.position_mode == ABSOLUTE:
        table = _strategy_table(model, resolved)
        return _absolute_assignment(model, resolved, n, table)
    if resolved.strategy is Strategy.SE:
        idx = np.arange(n, dtype=np.int64)
        return se_remap_deltas(idx[:, None] - idx[None, :], resolved.group_size, resolved.window)
    return _rotary_assignment(resolved, n)


def _strategy_table(model: Model, resolved: ResolvedExtension) -> np.ndarray:
    """The absolute position table a strategy reads from (built if needed)."""
    st = resolved.strategy
    if st is Strategy.PI:
        return build_interpolated_matrix(model.params["pos_table"], resolved.scale).rows
    return model.params["pos_table"]


def encode_many(
    model: Model,
    sequences: list[np.ndarray],
    spec: ExtensionSpec,
    *,
    attn_scaling: bool = True,
    batch_size: int = 16,
) -> np.ndarray:
    """Embeddings (N, d) for a list of token sequences under one strategy.

    Sequences are processed in fixed consecutive batches, so results are
    deterministic for a given input list. Raises LengthError as soon as any
    sequence exceeds the target window.
    """
    cfg = model.config
    resolved = resolve_extension(spec, cfg.position_mode)
    _check_extension_compat(model, resolved)
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    for s in seqs:
        if s.ndim != 1 or s.size == 0:
            raise EmptyInputError("token sequences must be non-empty and 1-D")
        if s.size > spec.l_target:
            raise LengthError(
                f"sequence of {s.size} tokens exceeds the target window {spec.l_target}"
            )
    if not seqs:
        return np.zeros((0, cfg.hidden_size))

    if resolved.strategy is Strategy.PCW:
        from .chunking import pcw_encode

        return np.stack([
            pcw_encode(model, s, spec.l_orig, batch_size=batch_size) for s in seqs
        ])

    table = None
    if cfg.position_mode == ABSOLUTE:
        table = _strategy_table(model, resolved)
    freqs = None
    if cfg.position_mode == ROTARY:
        freqs = model_frequencies(model, ntk_lambda=resolved.ntk_lambda)

    out = np.empty((len(seqs), cfg.hidden_size))
    for start in range(0, len(seqs), batch_size):
        group = seqs[start:start + batch_size]
        L = max(s.size for s in group)
        B = len(group)
        tokens = np.zeros((B, L), dtype=np.int64)
        mask = np.zeros((B, L), dtype=bool)
        scale = np.ones(B)
        abs_ids = np.zeros((B, L), dtype=np.int64) if cfg.position_mode == ABSOLUTE else None
        phases = np.zeros((B, L)) if cfg.position_mode == ROTARY else None
        rel = None
        for bi, s in enumerate(group):
            n = s.size
            tokens[bi, :n] = s
            mask[bi, :n] = True
            if attn_scaling:
                scale[bi] = attention_scale(n, spec.l_orig)
            if abs_ids is not None:
                abs_ids[bi, :n] = _absolute_assignment(model, resolved, n, table)
            elif resolved.strategy is not Strategy.SE:
                phases[bi, :n] = _rotary_assignment(resolved, n)
        if resolved.strategy is Strategy.SE:
            idx = np.arange(L, dtype=np.int64)
            rel = se_remap_deltas(
                idx[:, None] - idx[None, :], resolved.group_size, resolved.window
            )
            phases = None
        hidden = forward_batch(
            model, tokens, mask,
            abs_ids=abs_ids, phases=phases, rel=rel,
            attn_scale=scale, freqs=freqs, pos_table=table,
        )
        for bi in range(B):
            out[start + bi] = pool_and_normalize(hidden[bi], mask[bi])
    return out


def encode(
    model: Model,
    token_ids: np.ndarray,
    spec: ExtensionSpec,
    *,
    attn_scaling: bool = True,
) -> np.ndarray:
    """Embedding for a single token sequence under ``spec``."""
    return encode_many(model, [token_ids], spec, attn_scaling=attn_scaling)[0]
