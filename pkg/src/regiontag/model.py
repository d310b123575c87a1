"""Compact convolutional tagger with hand-written gradients.

The network is three blocks of (3x3 convolution, bias, ReLU, 2x2 average
pool) widening the input planes to 16, 32 and 64 channels, a global mean
pool over time and frequency, and an affine map to 13 class logits read
out through a sigmoid.  Queries enter either as a learned angle-bucket
embedding row or through a tiny distance MLP; the embedding vector is
broadcast to a plane and appended to the input stack.

Everything runs in float64: forward, analytic backward, Adam updates and
the checkpoint payload, so gradients check against finite differences and
a save/load round trip reproduces forward outputs bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dsp import DEFAULT_HOP, DEFAULT_N_FFT
from .features import DEFAULT_GCC_MAX_LAG, FeatureRecipe, FeatureStack, embedding_plane
from .geometry import DEFAULT_PAIRS
from .regionfeat import AngularRegion, DistanceQuery
from .scenesim import N_CLASSES

CONV_WIDTHS = (16, 32, 64)
EMBED_DIM = 16
ANGLE_RESOLUTION_DEG = 5.0
PROB_CLAMP = 1e-7

QUERY_MODES = ("angular", "distance", "omni")


@dataclass(repr=False)
class CompactCnn:
    """Model parameters plus the configuration they were built for."""

    params: dict[str, np.ndarray]
    recipe: FeatureRecipe
    query_mode: str
    n_classes: int = N_CLASSES
    embed_dim: int = EMBED_DIM
    angle_resolution_deg: float = ANGLE_RESOLUTION_DEG
    dist_mean: float = 0.0
    dist_std: float = 1.0
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    gcc_max_lag: int = DEFAULT_GCC_MAX_LAG
    pairs: tuple = DEFAULT_PAIRS

    @property
    def n_input_planes(self) -> int:
        return self.recipe.n_model_planes(len(self.pairs))

    @property
    def n_angle_buckets(self) -> int:
        return int(round(360.0 / self.angle_resolution_deg))

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def __repr__(self) -> str:
        return (
            f"CompactCnn(recipe={str(self.recipe)!r}, "
            f"query_mode={self.query_mode!r}, "
            f"n_parameters={self.n_parameters()})"
        )


def init_model(
    recipe: FeatureRecipe,
    query_mode: str,
    seed: int = 0,
    n_classes: int = N_CLASSES,
    pairs=DEFAULT_PAIRS,
    dist_mean: float = 0.0,
    dist_std: float = 1.0,
) -> CompactCnn:
    """Build a model with He-style random weights and zero biases."""
    if query_mode not in QUERY_MODES:
        raise ValueError(f"query_mode must be one of {QUERY_MODES}, got {query_mode!r}")
    if recipe.needs_angular_query and query_mode != "angular":
        raise ValueError(
            f"recipe {recipe} has directional planes; query_mode must be 'angular'"
        )
    if recipe.wants_embedding and query_mode == "omni":
        raise ValueError(f"recipe {recipe} has an embedding plane; needs a query mode")

    rng = np.random.default_rng(seed)
    k_in = recipe.n_model_planes(len(pairs))
    widths = (k_in,) + CONV_WIDTHS
    params: dict[str, np.ndarray] = {}
    for layer in range(3):
        c_in, c_out = widths[layer], widths[layer + 1]
        scale = np.sqrt(2.0 / (c_in * 9))
        params[f"conv{layer + 1}_w"] = rng.standard_normal((c_out, c_in, 3, 3)) * scale
        params[f"conv{layer + 1}_b"] = np.zeros(c_out)
    params["head_w"] = rng.standard_normal((n_classes, CONV_WIDTHS[-1])) * np.sqrt(
        1.0 / CONV_WIDTHS[-1]
    )
    params["head_b"] = np.zeros(n_classes)

    if recipe.wants_embedding:
        if query_mode == "angular":
            n_buckets = int(round(360.0 / ANGLE_RESOLUTION_DEG))
            params["angle_emb"] = rng.standard_normal((n_buckets, EMBED_DIM)) * 0.5
        else:
            params["dist_w1"] = rng.standard_normal((EMBED_DIM, 1))
            params["dist_b1"] = np.zeros(EMBED_DIM)
            params["dist_w2"] = rng.standard_normal((EMBED_DIM, EMBED_DIM)) * np.sqrt(
                2.0 / EMBED_DIM
            )
            params["dist_b2"] = np.zeros(EMBED_DIM)

    return CompactCnn(
        params=params,
        recipe=recipe,
        query_mode=query_mode,
        n_classes=n_classes,
        pairs=tuple(pairs),
        dist_mean=dist_mean,
        dist_std=dist_std,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Binary cross-entropy averaged over classes, probabilities clamped
    to [1e-7, 1 - 1e-7]."""
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.asarray(targets, dtype=float)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))


def _angle_bucket(model: CompactCnn, azimuth_deg: float) -> int:
    res = model.angle_resolution_deg
    return int(((azimuth_deg + 180.0) % 360.0) // res) % model.n_angle_buckets


def _embed_vectors(model: CompactCnn, queries) -> tuple[np.ndarray, dict]:
    """Embedding vector per query plus the intermediates backward needs."""
    B = len(queries)
    h = model.embed_dim
    vecs = np.zeros((B, h))
    aux: dict = {"mode": model.query_mode}
    if model.query_mode == "angular":
        idx = np.empty(B, dtype=int)
        for b, q in enumerate(queries):
            if not isinstance(q, AngularRegion):
                raise ValueError(f"angular model got query {q!r}")
            idx[b] = _angle_bucket(model, q.middle_deg)
            vecs[b] = model.params["angle_emb"][idx[b]]
        aux["idx"] = idx
    else:
        z = np.empty(B)
        for b, q in enumerate(queries):
            if not isinstance(q, DistanceQuery):
                raise ValueError(f"distance model got query {q!r}")
            z[b] = (q.distance_m - model.dist_mean) / max(model.dist_std, 1e-6)
        a1 = z[:, None] * model.params["dist_w1"][:, 0][None, :] + model.params["dist_b1"]
        h1 = np.maximum(a1, 0.0)
        vecs = h1 @ model.params["dist_w2"].T + model.params["dist_b2"]
        aux.update(z=z, a1=a1, h1=h1)
    return vecs, aux


def forward_batch(
    model: CompactCnn,
    planes: np.ndarray,
    queries=None,
    want_cache: bool = False,
):
    """Run the network on a batch.

    Parameters
    ----------
    planes : np.ndarray
        Static feature planes, shape (B, k_static, T, F).
    queries : sequence or None
        One query per example when the recipe has an embedding plane.

    Returns probabilities (B, n_classes), plus a cache when requested.
    """
    x = np.asarray(planes, dtype=float)
    if x.ndim != 4:
        raise ValueError(f"planes must be (B, k, T, F), got {x.shape}")
    B, _, T, F = x.shape
    aux = None
    if model.recipe.wants_embedding:
        if queries is None or len(queries) != B:
            raise ValueError("embedding recipe needs one query per example")
        vecs, aux = _embed_vectors(model, queries)
        emb = np.zeros((B, 1, T, F))
        emb[:, 0, :, : model.embed_dim] = vecs[:, None, :]
        x = np.concatenate([x, emb], axis=1)
    if x.shape[1] != model.n_input_planes:
        raise ValueError(
            f"model expects {model.n_input_planes} input planes, got {x.shape[1]}"
        )

    p = model.params
    acts = [x]
    cur = x
    for layer in range(3):
        c = kernels.conv3x3_forward(cur, p[f"conv{layer + 1}_w"], p[f"conv{layer + 1}_b"])
        r = np.maximum(c, 0.0)
        pool = kernels.avgpool2_forward(r)
        acts.append((c, r.shape, pool))
        cur = pool
    g = cur.mean(axis=(2, 3))
    logits = g @ p["head_w"].T + p["head_b"]
    probs = _sigmoid(logits)
    if not want_cache:
        return probs
    cache = {
        "x": x,
        "acts": acts,
        "g": g,
        "probs": probs,
        "aux": aux,
        "pool_shape": cur.shape,
    }
    return probs, cache


def backward_batch(
    model: CompactCnn, cache: dict, targets: np.ndarray
) -> tuple[float, dict]:
    """Loss and analytic gradients of the mean-over-batch BCE loss.

    Returns ``(loss, grads)`` where grads holds one array per parameter,
    shapes matching ``model.params``.  Parameters untouched by the batch
    (for example unused angle-embedding rows) get exact zeros.
    """
    p = model.params
    probs = cache["probs"]
    t = np.asarray(targets, dtype=float)
    B, n_classes = probs.shape
    pc = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    dpc = (pc - t) / (pc * (1.0 - pc)) / (n_classes * B)
    dlogits = dpc * inside * probs * (1.0 - probs)

    grads: dict[str, np.ndarray] = {}
    g = cache["g"]
    grads["head_w"] = dlogits.T @ g
    grads["head_b"] = dlogits.sum(axis=0)
    dg = dlogits @ p["head_w"]

    _, _, Tp, Fp = cache["pool_shape"]
    dcur = np.broadcast_to(
        dg[:, :, None, None] / (Tp * Fp), cache["pool_shape"]
    ).copy()
    for layer in range(3, 0, -1):
        c, r_shape, _ = cache["acts"][layer]
        dr = kernels.avgpool2_backward(dcur, r_shape[2], r_shape[3])
        dc = dr * (c > 0.0)
        x_in = cache["acts"][layer - 1]
        if layer > 1:
            x_in = x_in[2]
        dx, dw, db = kernels.conv3x3_backward(x_in, p[f"conv{layer}_w"], dc)
        grads[f"conv{layer}_w"] = dw
        grads[f"conv{layer}_b"] = db
        dcur = dx

    if model.recipe.wants_embedding:
        aux = cache["aux"]
        dplane = dcur[:, -1]
        dvec = dplane[:, :, : model.embed_dim].sum(axis=1)
        if aux["mode"] == "angular":
            demb = np.zeros_like(p["angle_emb"])
            np.add.at(demb, aux["idx"], dvec)
            grads["angle_emb"] = demb
        else:
            grads["dist_b2"] = dvec.sum(axis=0)
            grads["dist_w2"] = dvec.T @ aux["h1"]
            dh1 = dvec @ p["dist_w2"]
            da1 = dh1 * (aux["a1"] > 0.0)
            grads["dist_b1"] = da1.sum(axis=0)
            grads["dist_w1"] = (da1 * aux["z"][:, None]).sum(axis=0)[:, None]

    with np.errstate(divide="ignore"):
        loss = float(
            np.mean(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))
        )
    return loss, grads


def batch_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over the batch of the per-example class-averaged BCE."""
    return float(np.mean([bce_loss(pr, tg) for pr, tg in zip(probs, targets)]))


def predict(model: CompactCnn, stack: FeatureStack, query=None) -> np.ndarray:
    """Probabilities for one feature stack."""
    queries = [query] if model.recipe.wants_embedding else None
    return forward_batch(model, stack.data[None], queries)[0]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        step=0,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"RTCK"
CHECKPOINT_VERSION = 1


def save_model(path, model: CompactCnn) -> None:
    """Write a named-tensor checkpoint.

    Layout: magic ``RTCK``, uint32 version, uint32 JSON-metadata length,
    the metadata, uint32 tensor count, then per tensor a uint32 name
    length, the name, uint32 rank, uint32 shape entries and the raw
    little-endian float64 payload.  Tensors are written in sorted name
    order so files for the same model are identical.
    """
    meta = {
        "recipe": str(model.recipe),
        "query_mode": model.query_mode,
        "n_classes": model.n_classes,
        "embed_dim": model.embed_dim,
        "angle_resolution_deg": model.angle_resolution_deg,
        "dist_mean": model.dist_mean,
        "dist_std": model.dist_std,
        "n_fft": model.n_fft,
        "hop": model.hop,
        "gcc_max_lag": model.gcc_max_lag,
        "pairs": [list(p) for p in model.pairs],
        "dtype": "<f8",
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.array([CHECKPOINT_VERSION, len(meta_raw)], dtype="<u4").tobytes())
        fh.write(meta_raw)
        names = model.parameter_names()
        fh.write(np.array([len(names)], dtype="<u4").tobytes())
        for name in names:
            raw = name.encode("utf-8")
            tensor = np.ascontiguousarray(model.params[name], dtype="<f8")
            fh.write(np.array([len(raw)], dtype="<u4").tobytes())
            fh.write(raw)
            fh.write(np.array([tensor.ndim], dtype="<u4").tobytes())
            fh.write(np.array(tensor.shape, dtype="<u4").tobytes())
            fh.write(tensor.tobytes())


def load_model(path) -> CompactCnn:
    """Read a checkpoint written by :func:`save_model`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (magic {magic!r})")
        version, meta_len = np.frombuffer(fh.read(8), dtype="<u4")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(fh.read(int(meta_len)).decode("utf-8"))
        (n_tensors,) = np.frombuffer(fh.read(4), dtype="<u4")
        params: dict[str, np.ndarray] = {}
        for _ in range(int(n_tensors)):
            (name_len,) = np.frombuffer(fh.read(4), dtype="<u4")
            name = fh.read(int(name_len)).decode("utf-8")
            (rank,) = np.frombuffer(fh.read(4), dtype="<u4")
            shape = tuple(np.frombuffer(fh.read(4 * int(rank)), dtype="<u4").astype(int))
            count = int(np.prod(shape)) if shape else 1
            payload = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if payload.size != count:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            params[name] = payload.reshape(shape).copy()
    return CompactCnn(
        params=params,
        recipe=FeatureRecipe.parse(meta["recipe"]),
        query_mode=meta["query_mode"],
        n_classes=int(meta["n_classes"]),
        embed_dim=int(meta["embed_dim"]),
        angle_resolution_deg=float(meta["angle_resolution_deg"]),
        dist_mean=float(meta["dist_mean"]),
        dist_std=float(meta["dist_std"]),
        n_fft=int(meta["n_fft"]),
        hop=int(meta["hop"]),
        gcc_max_lag=int(meta["gcc_max_lag"]),
        pairs=tuple(tuple(p) for p in meta["pairs"]),
    )
