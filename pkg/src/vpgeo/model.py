"""Geometry-aware transformer: geometric positional encoding, fused
temporal-geometric attention, a frozen geometry head decoding per-frame
vanishing directions, EMA residuals, and a FiLM-modulated classifier."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .errors import ShapeMismatch, TooShort
from .features import FEATURE_DIM
from .tensor import Tensor

GEO_PREFIX = "geo."
FROZEN_GEO = "geometry_head"


@dataclass
class ModelConfig:
    d_model: int = 64
    layers: int = 4
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    use_gpe: bool = True
    use_ga: bool = True
    use_ema: bool = True
    ema_alpha: float = 0.3
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def softplus_inverse(y: float) -> float:
    return math.log(math.expm1(y))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fan-in uniform matrices, zero biases, unit LN scales; the softplus
    pre-images put the gate at ~0.1 and the temperature at 1.0."""
    rng = np.random.default_rng(seed)
    d = config.d_model
    dff = d * config.ffn_mult
    params: dict[str, Tensor] = {}

    def mat(name, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def vec(name, n, value=0.0):
        params[name] = Tensor(np.full(n, value))

    def scalar(name, value):
        params[name] = Tensor(np.asarray(value, dtype=float))

    mat("input.w", FEATURE_DIM, d)
    vec("input.b", d)
    mat("gpe.w", FEATURE_DIM, d)
    vec("gpe.b", d)
    vec("gpe.ln_g", d, 1.0)
    vec("gpe.ln_b", d)
    scalar("gpe.alpha_raw", softplus_inverse(0.1))

    for i in range(config.layers):
        p = f"layer{i}."
        vec(p + "ln1_g", d, 1.0)
        vec(p + "ln1_b", d)
        for nm in ("wq", "wk", "wv", "wo"):
            mat(p + nm, d, d)
            vec(p + nm.replace("w", "b"), d)
        mat(p + "ga_w", FEATURE_DIM, d)
        vec(p + "ga_b", d)
        scalar(p + "tau_raw", softplus_inverse(1.0))
        scalar(p + "lam", 0.5)
        vec(p + "ln2_g", d, 1.0)
        vec(p + "ln2_b", d)
        mat(p + "ffn_w1", d, dff)
        vec(p + "ffn_b1", dff)
        mat(p + "ffn_w2", dff, d)
        vec(p + "ffn_b2", d)

    mat("geo.w1", d, d)
    vec("geo.b1", d)
    mat("geo.w2", d, 9)
    vec("geo.b2", 9)

    mat("film.wr", 4, 2 * d)
    vec("film.br", 2 * d)
    mat("cls.w1", d, d)
    vec("cls.b1", d)
    mat("cls.w2", d, 2)
    vec("cls.b2", 2)
    return params


def geometry_head_names(params: dict[str, Tensor]) -> list[str]:
    return [k for k in params if k.startswith(GEO_PREFIX)]


def trainable_names(params: dict[str, Tensor], config: ModelConfig,
                    frozen: set[str] | None = None) -> list[str]:
    """Parameter names that actually receive gradients under the given
    config: frozen modules and ablated branches are excluded."""
    frozen = frozen or set()
    out = []
    for name in params:
        if FROZEN_GEO in frozen and name.startswith(GEO_PREFIX):
            continue
        if not config.use_gpe and name.startswith("gpe."):
            continue
        if not config.use_ga and (".ga_" in name or name.endswith(".tau_raw") or name.endswith(".lam")):
            continue
        if not config.use_ema and name.startswith("film."):
            continue
        out.append(name)
    return out


@dataclass
class ModelOutput:
    logits: Tensor              # (1, 2)
    U: Tensor                   # (T, 9): three unit 3-vectors per frame
    U_hat: Tensor               # (T, 9) EMA-smoothed
    R: Tensor                   # (T, 4) residuals
    attention: list[np.ndarray] | None = None  # per layer: (heads, T, T)

    @property
    def logits_np(self) -> np.ndarray:
        return self.logits.data[0]

    @property
    def score(self) -> float:
        """P(generated): complement of the real-class confidence."""
        z = self.logits.data[0]
        e = np.exp(z - z.max())
        return float(e[1] / e.sum())

    @property
    def U3(self) -> np.ndarray:
        return self.U.data.reshape(-1, 3, 3)

    @property
    def R_np(self) -> np.ndarray:
        return self.R.data


def _ln_affine(x: Tensor, params, prefix: str, eps: float) -> Tensor:
    normed = tt.layer_norm(x, eps=eps)
    return tt.add(tt.mul(normed, params[prefix + "_g"]), params[prefix + "_b"])


def sinusoidal_encoding(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d // 2)[None, :]
    rates = 1.0 / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return pe


_DIFF_CACHE: dict[int, np.ndarray] = {}


def _first_difference_matrix(T: int) -> np.ndarray:
    """D @ F produces rows [0, f_2 - f_1, ..., f_T - f_{T-1}]."""
    m = _DIFF_CACHE.get(T)
    if m is None:
        m = np.zeros((T, T))
        idx = np.arange(1, T)
        m[idx, idx] = 1.0
        m[idx, idx - 1] = -1.0
        _DIFF_CACHE[T] = m
    return m


def gpe_encode(F: Tensor, params, config: ModelConfig) -> Tensor:
    """X_t = W_f f_t + alpha * LN(W_g (f_t - f_{t-1})), with a zero first
    difference. The gpe-off ablation swaps in sinusoidal positions."""
    T = F.shape[0]
    if T < 2:
        raise TooShort(f"need T >= 2, got {T}")
    base = tt.affine(F, params["input.w"], params["input.b"])
    if not config.use_gpe:
        return tt.add(base, tt.constant(sinusoidal_encoding(T, config.d_model)))
    delta = tt.matmul(tt.constant(_first_difference_matrix(T)), F)
    e = tt.affine(delta, params["gpe.w"], params["gpe.b"])
    e = tt.layer_norm(e, eps=config.ln_eps)
    e = tt.add(tt.mul(e, params["gpe.ln_g"]), params["gpe.ln_b"])
    alpha = tt.softplus(params["gpe.alpha_raw"])
    return tt.add(base, tt.mul(alpha, e))


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return tt.mul(x, tt.constant(mask))


def gat_layer(X: Tensor, F: Tensor, params, layer: int, config: ModelConfig,
              rng: np.random.Generator | None = None,
              attn_sink: list | None = None) -> Tensor:
    """One temporal-geometric attention block (pre-LN).

    The temporal branch is standard multi-head self-attention; the geometric
    branch turns projected per-frame features into a cosine-similarity map,
    softmaxed at a learnable temperature. The two maps fuse additively
    (A_t + lambda * A_g, left unrenormalized) before multiplying the values.
    """
    p = f"layer{layer}."
    T, d = X.shape
    if F.shape[0] != T:
        raise ShapeMismatch(f"features T={F.shape[0]} vs activations T={T}")
    heads = config.heads
    dh = d // heads

    x1 = _ln_affine(X, params, p + "ln1", config.ln_eps)
    q = tt.affine(x1, params[p + "wq"], params[p + "bq"])
    k = tt.affine(x1, params[p + "wk"], params[p + "bk"])
    v = tt.affine(x1, params[p + "wv"], params[p + "bv"])

    a_g = None
    if config.use_ga:
        fbar = tt.unit_rows(tt.affine(F, params[p + "ga_w"], params[p + "ga_b"]))
        g = tt.matmul(fbar, tt.transpose(fbar))
        tau = tt.softplus(params[p + "tau_raw"])
        a_g = tt.row_softmax(tt.div(g, tau))

    head_outs = []
    maps = []
    for hi in range(heads):
        qh = tt.slice_cols(q, hi * dh, (hi + 1) * dh)
        kh = tt.slice_cols(k, hi * dh, (hi + 1) * dh)
        vh = tt.slice_cols(v, hi * dh, (hi + 1) * dh)
        a_t = tt.row_softmax(tt.smul(tt.matmul(qh, tt.transpose(kh)), 1.0 / math.sqrt(dh)))
        a = tt.add(a_t, tt.mul(params[p + "lam"], a_g)) if a_g is not None else a_t
        if attn_sink is not None:
            maps.append(a.data.copy())
        head_outs.append(tt.matmul(a, vh))
    if attn_sink is not None:
        attn_sink.append(np.stack(maps))

    attn = tt.affine(tt.concat(head_outs, axis=1), params[p + "wo"], params[p + "bo"])
    X = tt.add(X, _dropout(attn, config.dropout, rng))

    h = _ln_affine(X, params, p + "ln2", config.ln_eps)
    h = tt.relu(tt.affine(h, params[p + "ffn_w1"], params[p + "ffn_b1"]))
    h = _dropout(h, config.dropout, rng)
    h = tt.affine(h, params[p + "ffn_w2"], params[p + "ffn_b2"])
    return tt.add(X, h)


def geometry_head(X: Tensor, params) -> Tensor:
    """Decode backbone features to three unit, sign-canonical 3-vectors per
    frame, returned as a (T, 9) tensor."""
    h = tt.relu(tt.affine(X, params["geo.w1"], params["geo.b1"]))
    raw = tt.affine(h, params["geo.w2"], params["geo.b2"])
    blocks = []
    for i in range(3):
        b = tt.slice_cols(raw, 3 * i, 3 * i + 3)
        blocks.append(tt.sign_canonical_rows(tt.unit_rows(b)))
    return tt.concat(blocks, axis=1)


_EMA_CACHE: dict[tuple[int, float], np.ndarray] = {}


def ema_matrix(T: int, alpha: float) -> np.ndarray:
    """Lower-triangular operator L with (L @ U)_t = the stateless EMA
    recurrence U_hat_1 = U_1, U_hat_t = a U_t + (1-a) U_hat_{t-1}."""
    key = (T, alpha)
    m = _EMA_CACHE.get(key)
    if m is None:
        m = np.zeros((T, T))
        m[0, 0] = 1.0
        for t in range(1, T):
            m[t] = (1.0 - alpha) * m[t - 1]
            m[t, t] = alpha
        _EMA_CACHE[key] = m
    return m


def ema_smooth(U: Tensor, alpha: float) -> Tensor:
    return tt.matmul(tt.constant(ema_matrix(U.shape[0], alpha)), U)


def residual_features(U: Tensor, U_hat: Tensor) -> Tensor:
    """Per-frame instability statistics (T, 4):
    angular drift of each direction against the previous smoothed estimate,
    velocity and acceleration Frobenius norms of the smoothed track, and the
    distance of the smoothed direction Gram matrix from identity."""
    T = U.shape[0]
    zero1 = tt.constant(np.zeros((1, 1)))

    angs = []
    for i in range(3):
        cur = tt.slice_cols(tt.slice_rows(U, 1, T), 3 * i, 3 * i + 3)
        prev = tt.slice_cols(tt.slice_rows(U_hat, 0, T - 1), 3 * i, 3 * i + 3)
        angs.append(tt.row_angle(cur, prev))
    r_ang = tt.concat([zero1, tt.smul(tt.add(tt.add(angs[0], angs[1]), angs[2]), 1.0 / 3.0)], axis=0)

    vel = tt.sub(tt.slice_rows(U_hat, 1, T), tt.slice_rows(U_hat, 0, T - 1))
    r_vel = tt.concat([zero1, tt.row_norm(vel)], axis=0)

    if T > 2:
        acc = tt.sub(tt.slice_rows(vel, 1, T - 1), tt.slice_rows(vel, 0, T - 2))
        r_acc = tt.concat([tt.constant(np.zeros((2, 1))), tt.row_norm(acc)], axis=0)
    else:
        r_acc = tt.constant(np.zeros((T, 1)))

    blocks = [tt.slice_cols(U_hat, 3 * i, 3 * i + 3) for i in range(3)]
    gram_terms = []
    for i in range(3):
        gii = tt.sum_(tt.mul(blocks[i], blocks[i]), axis=1, keepdims=True)
        dev = tt.sub(gii, tt.constant(np.ones((T, 1))))
        gram_terms.append(tt.mul(dev, dev))
        for j in range(i + 1, 3):
            gij = tt.sum_(tt.mul(blocks[i], blocks[j]), axis=1, keepdims=True)
            gram_terms.append(tt.smul(tt.mul(gij, gij), 2.0))
    total = gram_terms[0]
    for term in gram_terms[1:]:
        total = tt.add(total, term)
    r_ort = tt.sqrt(total)

    return tt.concat([r_ang, r_vel, r_acc, r_ort], axis=1)


def film_classify(F_backbone: Tensor, R: Tensor, params, config: ModelConfig) -> Tensor:
    """FiLM-modulate backbone features by the residual projection, mean-pool
    over time, and classify. The ema-off ablation bypasses the modulation."""
    d = config.d_model
    if config.use_ema:
        gamma_beta = tt.affine(R, params["film.wr"], params["film.br"])
        gamma = tt.slice_cols(gamma_beta, 0, d)
        beta = tt.slice_cols(gamma_beta, d, 2 * d)
        h = tt.add(tt.mul(F_backbone, tt.add(tt.constant(np.ones(d)), gamma)), beta)
    else:
        h = F_backbone
    pooled = tt.mean(h, axis=0, keepdims=True)
    z = tt.relu(tt.affine(pooled, params["cls.w1"], params["cls.b1"]))
    return tt.affine(z, params["cls.w2"], params["cls.b2"])


def forward(F: np.ndarray | Tensor, params, config: ModelConfig,
            rng: np.random.Generator | None = None,
            return_attention: bool = False) -> ModelOutput:
    """Full sequence pass. ``rng`` enables dropout (training); evaluation is
    deterministic with rng=None."""
    Ft = F if isinstance(F, Tensor) else tt.constant(np.asarray(F, dtype=float))
    if Ft.ndim != 2 or Ft.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"expected (T, {FEATURE_DIM}) features, got {Ft.shape}")
    attn_sink: list | None = [] if return_attention else None
    X = gpe_encode(Ft, params, config)
    for i in range(config.layers):
        X = gat_layer(X, Ft, params, i, config, rng=rng, attn_sink=attn_sink)
    U = geometry_head(X, params)
    U_hat = ema_smooth(U, config.ema_alpha)
    R = residual_features(U, U_hat)
    logits = film_classify(X, R, params, config)
    return ModelOutput(logits=logits, U=U, U_hat=U_hat, R=R, attention=attn_sink)


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor], config: ModelConfig,
                    frozen: list[str] | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "frozen": sorted(frozen or []),
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path) -> tuple[dict[str, Tensor], ModelConfig, list[str]]:
    """Load and shape-validate a checkpoint against its embedded config."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    config = ModelConfig.from_dict(payload["config"])
    reference = init_params(config, seed=0)
    params: dict[str, Tensor] = {}
    for name, rec in payload["params"].items():
        shape = tuple(rec["shape"])
        if name not in reference:
            raise ValueError(f"unknown parameter {name!r} in checkpoint")
        if reference[name].data.shape != shape:
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {shape}, "
                f"config requires {reference[name].data.shape}")
        params[name] = Tensor(np.asarray(rec["data"], dtype=float).reshape(shape))
    missing = set(reference) - set(params)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    return params, config, list(payload["frozen"])
