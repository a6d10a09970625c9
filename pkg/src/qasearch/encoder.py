"""Transformer encoder over placeholder tokens, with manual backprop.

The encoder reads the architecture matrix (p placeholders x l pool
operations), embeds each row as a token, applies post-norm
self-attention layers, and projects back to p x l.  Variant F1 feeds
the cubic transform alpha @ alpha.T @ alpha; variant F2 feeds alpha
itself.  The output head starts at zero, so the enrichment is exactly
zero until the weights move.

Training signal is self-distance: the max-abs elementwise difference
between the current output and the output from m steps earlier.  Its
subgradient is routed through the single argmax entry (ties break to
the lowest row-major index).  All gradients are exact reverse-mode,
implemented by hand on numpy arrays; everything is float64.

Weights live in a flat dict keyed "embed.w", "l0.wq", ..., "out.b".
Updates are functional: a step returns new arrays, never mutating the
old ones, so a forward cache stays consistent with the weights that
produced it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LN_EPS = 1e-12

VARIANTS = ("F1", "F2")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class EncoderConfig:
    """Hyperparameters; defaults keep desk-scale runs fast."""

    d_encoder: int = 16
    h: int = 2
    n_layers: int = 2
    d_ff: int = 32
    m: int = 1
    eta: float = 1e-3
    variant: str = "F1"
    use_pe: bool = True
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.d_encoder < 2 or self.d_encoder % 2:
            raise ValueError("d_encoder must be even and >= 2")
        if self.h < 1 or self.d_encoder % self.h:
            raise ValueError(
                f"head count {self.h} must divide d_encoder {self.d_encoder}"
            )
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.d_ff < 1:
            raise ValueError("d_ff must be >= 1")
        if self.m < 1:
            raise ValueError("loss lag m must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    @property
    def d_k(self) -> int:
        return self.d_encoder // self.h


@dataclass
class EncoderState:
    """Weights plus optimizer moments and the lagged-output buffer."""

    weights: dict
    cfg: EncoderConfig
    moments: dict | None = None
    history: deque = field(default_factory=deque)
    step: int = 0


def transform_alpha(alpha: np.ndarray) -> np.ndarray:
    """Cubic mixing alpha @ alpha.T @ alpha; couples rows before embedding."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"alpha must be 2-D, got shape {a.shape}")
    return a @ a.T @ a


def positional_encoding(p: int, d: int) -> np.ndarray:
    """Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)), odd cols cos."""
    if d % 2:
        raise ValueError("positional encoding needs even width")
    pos = np.arange(p, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.empty((p, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# =============================================================================
# Initialization
# =============================================================================


def weight_shapes(cfg: EncoderConfig, p: int, l: int) -> dict:
    """Name -> shape for every trainable tensor, in canonical order."""
    del p
    d, f = cfg.d_encoder, cfg.d_ff
    shapes = {"embed.w": (l, d), "embed.b": (d,)}
    for i in range(cfg.n_layers):
        shapes.update({
            f"l{i}.wq": (d, d), f"l{i}.bq": (d,),
            f"l{i}.wk": (d, d), f"l{i}.bk": (d,),
            f"l{i}.wv": (d, d), f"l{i}.bv": (d,),
            f"l{i}.wo": (d, d), f"l{i}.bo": (d,),
            f"l{i}.ln1.g": (d,), f"l{i}.ln1.b": (d,),
            f"l{i}.w1": (d, f), f"l{i}.b1": (f,),
            f"l{i}.w2": (f, d), f"l{i}.b2": (d,),
            f"l{i}.ln2.g": (d,), f"l{i}.ln2.b": (d,),
        })
    shapes.update({"out.w": (d, l), "out.b": (l,)})
    return shapes


def init_encoder(
    cfg: EncoderConfig, p: int, l: int, rng: np.random.Generator
) -> EncoderState:
    """Scaled-uniform init for matrices, ones for norm gains, zeros for
    biases and for the whole output head (so the first forward output is
    exactly zero).  Matrices draw from rng in canonical name order;
    vectors consume no draws, keeping the stream layout stable."""
    weights = {}
    for name, shape in weight_shapes(cfg, p, l).items():
        if name.startswith("out."):
            weights[name] = np.zeros(shape)
        elif name.endswith(".g"):
            weights[name] = np.ones(shape)
        elif len(shape) == 1:
            weights[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-limit, limit, size=shape)
    moments = None
    if cfg.optimizer == "adam":
        moments = {
            "m": {k: np.zeros_like(v) for k, v in weights.items()},
            "v": {k: np.zeros_like(v) for k, v in weights.items()},
            "t": 0,
        }
    return EncoderState(weights=weights, cfg=cfg, moments=moments,
                        history=deque(maxlen=cfg.m))


# =============================================================================
# Forward
# =============================================================================


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, xhat, inv


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    p, d = x.shape
    return x.reshape(p, h, d // h).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, p, dk = x.shape
    return x.transpose(1, 0, 2).reshape(p, h * dk)


def encoder_forward(w: dict, cfg: EncoderConfig, alpha: np.ndarray):
    """Full forward pass; returns (output p x l, cache for backward).

    The variant transform and positional encoding are applied here, so
    callers always pass the raw architecture matrix.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ValueError(f"alpha must be 2-D, got shape {alpha.shape}")
    p, l = alpha.shape
    if w["embed.w"].shape[0] != l:
        raise ValueError(
            f"alpha has {l} columns but embedding expects {w['embed.w'].shape[0]}"
        )
    x0 = transform_alpha(alpha) if cfg.variant == "F1" else alpha
    x = x0 @ w["embed.w"] + w["embed.b"]
    if cfg.use_pe:
        x = x + positional_encoding(p, cfg.d_encoder)
    cache = {"w": w, "cfg": cfg, "p": p, "l": l, "x0": x0, "layers": []}
    scale = 1.0 / np.sqrt(cfg.d_k)
    for i in range(cfg.n_layers):
        pre = f"l{i}."
        q = x @ w[pre + "wq"] + w[pre + "bq"]
        k = x @ w[pre + "wk"] + w[pre + "bk"]
        v = x @ w[pre + "wv"] + w[pre + "bv"]
        qh, kh, vh = (_split_heads(t, cfg.h) for t in (q, k, v))
        scores = (qh @ kh.transpose(0, 2, 1)) * scale
        attn = _softmax_rows(scores)
        ctx = attn @ vh
        merged = _merge_heads(ctx)
        proj = merged @ w[pre + "wo"] + w[pre + "bo"]
        a = proj + x
        n1, xhat1, inv1 = _layernorm(a, w[pre + "ln1.g"], w[pre + "ln1.b"])
        hpre = n1 @ w[pre + "w1"] + w[pre + "b1"]
        hrelu = np.maximum(hpre, 0.0)
        ffn = hrelu @ w[pre + "w2"] + w[pre + "b2"]
        a2 = n1 + ffn
        n2, xhat2, inv2 = _layernorm(a2, w[pre + "ln2.g"], w[pre + "ln2.b"])
        cache["layers"].append({
            "x": x, "qh": qh, "kh": kh, "vh": vh, "attn": attn,
            "merged": merged, "xhat1": xhat1, "inv1": inv1, "n1": n1,
            "hpre": hpre, "hrelu": hrelu, "xhat2": xhat2, "inv2": inv2,
        })
        x = n2
    cache["final"] = x
    out = x @ w["out.w"] + w["out.b"]
    return out, cache


def encoder_loss(f_t: np.ndarray, f_prev: np.ndarray) -> float:
    """Self-distance: max over entries of |f_prev - f_t|."""
    f_t = np.asarray(f_t, dtype=np.float64)
    f_prev = np.asarray(f_prev, dtype=np.float64)
    if f_t.shape != f_prev.shape:
        raise ValueError(f"shape mismatch {f_t.shape} vs {f_prev.shape}")
    return float(np.abs(f_prev - f_t).max())


def encoder_loss_grad(f_t: np.ndarray, f_prev: np.ndarray) -> np.ndarray:
    """Subgradient of encoder_loss w.r.t. f_t: +-1 at the argmax entry
    (first in row-major order on ties), zero elsewhere."""
    diff = np.asarray(f_t, dtype=np.float64) - np.asarray(f_prev, dtype=np.float64)
    flat = int(np.argmax(np.abs(diff)))
    g = np.zeros_like(diff)
    g.flat[flat] = np.sign(diff.flat[flat])
    return g


# =============================================================================
# Backward
# =============================================================================


def _layernorm_backward(dy, xhat, inv, g):
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def encoder_backward(cache: dict, d_output: np.ndarray) -> dict:
    """Exact reverse-mode gradients for every weight tensor.

    d_output is the cotangent of the p x l output (for the self-distance
    loss this is encoder_loss_grad; any other cotangent works, which is
    what the joint search-gradient path and the gradient checks use).
    """
    for key in ("w", "cfg", "layers", "final", "x0"):
        if key not in cache:
            raise ValueError("stale or foreign cache: missing intermediates")
    w, cfg = cache["w"], cache["cfg"]
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != (cache["p"], cache["l"]):
        raise ValueError(
            f"d_output shape {d_output.shape} does not match "
            f"({cache['p']}, {cache['l']})"
        )
    if len(cache["layers"]) != cfg.n_layers:
        raise ValueError("stale or foreign cache: layer count mismatch")
    grads = {}
    x_final = cache["final"]
    grads["out.w"] = x_final.T @ d_output
    grads["out.b"] = d_output.sum(axis=0)
    dx = d_output @ w["out.w"].T
    scale = 1.0 / np.sqrt(cfg.d_k)
    for i in reversed(range(cfg.n_layers)):
        pre = f"l{i}."
        c = cache["layers"][i]
        da2, dg2, db2 = _layernorm_backward(dx, c["xhat2"], c["inv2"], w[pre + "ln2.g"])
        grads[pre + "ln2.g"], grads[pre + "ln2.b"] = dg2, db2
        dn1 = da2.copy()
        dffn = da2
        grads[pre + "w2"] = c["hrelu"].T @ dffn
        grads[pre + "b2"] = dffn.sum(axis=0)
        dhrelu = dffn @ w[pre + "w2"].T
        dhpre = dhrelu * (c["hpre"] > 0.0)
        grads[pre + "w1"] = c["n1"].T @ dhpre
        grads[pre + "b1"] = dhpre.sum(axis=0)
        dn1 += dhpre @ w[pre + "w1"].T
        da, dg1, db1 = _layernorm_backward(dn1, c["xhat1"], c["inv1"], w[pre + "ln1.g"])
        grads[pre + "ln1.g"], grads[pre + "ln1.b"] = dg1, db1
        dproj = da
        dx = da.copy()
        grads[pre + "wo"] = c["merged"].T @ dproj
        grads[pre + "bo"] = dproj.sum(axis=0)
        dmerged = dproj @ w[pre + "wo"].T
        dctx = _split_heads(dmerged, cfg.h)
        dattn = dctx @ c["vh"].transpose(0, 2, 1)
        dvh = c["attn"].transpose(0, 2, 1) @ dctx
        dscores = c["attn"] * (dattn - (dattn * c["attn"]).sum(axis=-1, keepdims=True))
        dqh = (dscores @ c["kh"]) * scale
        dkh = (dscores.transpose(0, 2, 1) @ c["qh"]) * scale
        dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
        x_in = c["x"]
        for nm, dt in (("wq", dq), ("wk", dk), ("wv", dv)):
            grads[pre + nm] = x_in.T @ dt
            grads[pre + "b" + nm[1]] = dt.sum(axis=0)
            dx += dt @ w[pre + nm].T
    grads["embed.w"] = cache["x0"].T @ dx
    grads["embed.b"] = dx.sum(axis=0)
    return grads


# =============================================================================
# Optimizer and step
# =============================================================================


def apply_update(state: EncoderState, grads: dict) -> tuple[dict, dict | None]:
    """One optimizer step; returns (new weights, new moments)."""
    cfg = state.cfg
    w = state.weights
    if cfg.optimizer == "sgd":
        new_w = {k: v - cfg.eta * grads[k] if k in grads else v.copy()
                 for k, v in w.items()}
        return new_w, None
    mnt = state.moments
    t = mnt["t"] + 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    new_m, new_v, new_w = {}, {}, {}
    for k, v in w.items():
        g = grads.get(k)
        if g is None:
            new_m[k], new_v[k], new_w[k] = mnt["m"][k], mnt["v"][k], v.copy()
            continue
        new_m[k] = b1 * mnt["m"][k] + (1 - b1) * g
        new_v[k] = b2 * mnt["v"][k] + (1 - b2) * g * g
        mhat = new_m[k] / (1 - b1**t)
        vhat = new_v[k] / (1 - b2**t)
        new_w[k] = v - cfg.eta * mhat / (np.sqrt(vhat) + eps)
    return new_w, {"m": new_m, "v": new_v, "t": t}


def encoder_step(
    state: EncoderState, cfg: EncoderConfig, alpha: np.ndarray,
    extra_d_output: np.ndarray | None = None,
):
    """One self-supervised update.

    Forward at the current weights, loss against the output stored m
    steps ago (zero matrix before any history exists), backward, one
    optimizer step, push the output into the lag buffer.  Returns
    (new state, pre-update output, loss): the output handed back is the
    one the current weights produced, so enrichment this step never sees
    the update it triggered.

    extra_d_output, when given, is added to the loss cotangent before
    backprop; the search loop uses it to route its own gradient into the
    encoder when the joint path is enabled.
    """
    if cfg is not state.cfg and cfg != state.cfg:
        raise ValueError("config does not match the one the state was built with")
    out, cache = encoder_forward(state.weights, cfg, alpha)
    if len(state.history) == cfg.m:
        f_prev = state.history[0]
    else:
        f_prev = np.zeros_like(out)
    loss = encoder_loss(out, f_prev)
    d_out = encoder_loss_grad(out, f_prev)
    if extra_d_output is not None:
        d_out = d_out + np.asarray(extra_d_output, dtype=np.float64)
    grads = encoder_backward(cache, d_out)
    new_w, new_m = apply_update(state, grads)
    for k, v in new_w.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values in {k} after update")
    hist = deque(state.history, maxlen=cfg.m)
    hist.append(out.copy())
    new_state = EncoderState(weights=new_w, cfg=state.cfg, moments=new_m,
                             history=hist, step=state.step + 1)
    return new_state, out, loss


# =============================================================================
# Checkpointing
# =============================================================================


def save_weights(weights: dict, prefix) -> None:
    """Flat little-endian float64 blob at prefix.bin plus a text manifest
    (name, shape, byte offset) at prefix.manifest."""
    prefix = Path(prefix)
    offset = 0
    lines = []
    chunks = []
    for name in sorted(weights):
        arr = np.ascontiguousarray(weights[name], dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name} {shape} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    Path(str(prefix) + ".bin").write_bytes(b"".join(chunks))
    Path(str(prefix) + ".manifest").write_text("\n".join(lines) + "\n")


def load_weights(prefix) -> dict:
    blob = Path(str(prefix) + ".bin").read_bytes()
    weights = {}
    manifest = Path(str(prefix) + ".manifest").read_text()
    for lineno, line in enumerate(manifest.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            name, shape_s, offset_s = line.split()
            shape = () if shape_s == "scalar" else tuple(
                int(s) for s in shape_s.split("x")
            )
            offset = int(offset_s)
        except ValueError:
            raise ValueError(f"{prefix}.manifest:{lineno}: malformed entry") from None
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blob, dtype="<f8", count=count, offset=offset
        ).reshape(shape)
        weights[name] = arr.astype(np.float64)
    return weights
