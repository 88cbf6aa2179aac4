"""A small pre-LN transformer over sentence pairs.

Classification reads the pair jointly: both sentences share one attention
group, positions restart at zero for the second sentence, and a segment
embedding marks which sentence a token came from. The token-similarity matrix
instead comes from encoding each sentence on its own (first-sentence role for
both), so identical sentences get identical contextual vectors. Both passes
run as one stacked forward.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ValidationError
from .lora import adapter_forward

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 2048
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    max_seq_len: int = 32
    ffn_dim: int = 128
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "num_heads", "num_layers", "max_seq_len", "ffn_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.num_classes != 2:
            raise ConfigError("only binary classification is supported (num_classes = 2)")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    def to_dict(self):
        return asdict(self)


def _layer_names(i):
    p = f"layers.{i}"
    return [f"{p}.attn.query", f"{p}.attn.key", f"{p}.attn.value", f"{p}.attn.output", f"{p}.ffn.up", f"{p}.ffn.down"]


def init_params(config: EncoderConfig, rng) -> dict[str, np.ndarray]:
    d, f = config.embed_dim, config.ffn_dim
    gauss = lambda *shape: rng.normal(0.0, INIT_STD, size=shape)
    p = {
        "tok_emb": gauss(config.vocab_size, d),
        "pos_emb": gauss(config.max_seq_len, d),
        "seg_emb": gauss(2, d),
    }
    for i in range(config.num_layers):
        pre = f"layers.{i}"
        p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"] = np.ones(d), np.zeros(d)
        for name in ("query", "key", "value", "output"):
            p[f"{pre}.attn.{name}"] = gauss(d, d)
        p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"] = np.ones(d), np.zeros(d)
        p[f"{pre}.ffn.up"], p[f"{pre}.ffn.up_bias"] = gauss(d, f), np.zeros(f)
        p[f"{pre}.ffn.down"], p[f"{pre}.ffn.down_bias"] = gauss(f, d), np.zeros(d)
    p["ln_f.gain"], p["ln_f.bias"] = np.ones(d), np.zeros(d)
    p["head"], p["head_bias"] = gauss(2 * d, config.num_classes), np.zeros(config.num_classes)
    return p


class PairEncoder:
    """Parameters plus optional adapters; see :func:`forward_batch` for the math."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.adapters = {}
        self.merged_weights = {}

    def linear_names(self):
        names = [n for i in range(self.config.num_layers) for n in _layer_names(i)]
        return names + ["head"]

    def linear(self, name, x):
        adapter = self.adapters.get(name)
        if adapter is None:
            return ad.matmul(x, self.params[name])
        if adapter.merged:
            return ad.matmul(x, self.merged_weights[name])
        return adapter_forward(adapter, x)

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False
        return self

    def unfreeze(self, names=None):
        for name in self.params if names is None else names:
            self.params[name].requires_grad = True
        return self

    def base_state(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def trainable(self):
        out = [p for p in self.params.values() if p.requires_grad]
        for a in self.adapters.values():
            if not a.merged:
                out += [a.A, a.B]
        return out


def build_encoder(config: EncoderConfig, rng=None) -> PairEncoder:
    """Seeded Gaussian init (std 0.02) for matrices, unit gains and zero biases for the rest.

    Every parameter comes back frozen; pre-training unfreezes explicitly.
    """
    if not isinstance(config, EncoderConfig):
        raise ConfigError("build_encoder needs an EncoderConfig")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    params = {k: Tensor(v, name=k) for k, v in init_params(config, rng).items()}
    return PairEncoder(config, params)


def _check_tokens(model, tokens, which):
    cfg = model.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValidationError(f"sentence {which} has no tokens")
    if tokens.size > cfg.max_seq_len:
        raise ValidationError(f"sentence {which} has {tokens.size} tokens, max is {cfg.max_seq_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValidationError(f"sentence {which} has a token id outside [0, {cfg.vocab_size})")
    return tokens


@dataclass
class BatchOutput:
    logits: Tensor
    hidden: np.ndarray | None
    spans: list

    def sim_matrix(self, i):
        if self.hidden is None:
            raise ValidationError("similarities were not requested for this batch")
        (a0, a1), (b0, b1) = self.spans[i]
        return cosine_matrix(self.hidden[a0:a1], self.hidden[b0:b1])


def cosine_matrix(ha, hb):
    na = ha / np.maximum(np.linalg.norm(ha, axis=1, keepdims=True), 1e-12)
    nb = hb / np.maximum(np.linalg.norm(hb, axis=1, keepdims=True), 1e-12)
    return np.clip(na @ nb.T, -1.0, 1.0)


def encode_tokens(model: PairEncoder, ids, pos, roles, groups) -> Tensor:
    """Final-layer token vectors; tokens attend within equal ``groups`` only."""
    cfg, P = model.config, model.params
    x = ad.add(ad.gather_rows(P["tok_emb"], ids), ad.gather_rows(P["pos_emb"], pos))
    x = ad.add(x, ad.gather_rows(P["seg_emb"], roles))
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        h = ad.layer_norm(x, P[f"{pre}.ln1.gain"], P[f"{pre}.ln1.bias"])
        q = model.linear(f"{pre}.attn.query", h)
        k = model.linear(f"{pre}.attn.key", h)
        v = model.linear(f"{pre}.attn.value", h)
        att = ad.segment_attention(q, k, v, groups, cfg.num_heads)
        x = ad.add(x, model.linear(f"{pre}.attn.output", att))
        h = ad.layer_norm(x, P[f"{pre}.ln2.gain"], P[f"{pre}.ln2.bias"])
        h = ad.relu(ad.add_bias(model.linear(f"{pre}.ffn.up", h), P[f"{pre}.ffn.up_bias"]))
        x = ad.add(x, ad.add_bias(model.linear(f"{pre}.ffn.down", h), P[f"{pre}.ffn.down_bias"]))
    return ad.layer_norm(x, P["ln_f.gain"], P["ln_f.bias"])


def forward_batch(model: PairEncoder, pairs, with_sims=True) -> BatchOutput:
    """Encode a list of (tokens_a, tokens_b) pairs in one stacked pass.

    Logits are m×2. With ``with_sims`` the per-sentence encodings are appended
    to the stack and ``hidden``/``spans`` locate pair i's two sentences in it.
    """
    checked = [(_check_tokens(model, a, "a"), _check_tokens(model, b, "b")) for a, b in pairs]
    if not checked:
        raise ValidationError("forward_batch needs at least one pair")
    m = len(checked)
    ids, pos, roles, groups = [], [], [], []
    joint = []
    start = 0
    for e, (a, b) in enumerate(checked):
        la, lb = a.size, b.size
        ids += [a, b]
        pos += [np.arange(la), np.arange(lb)]
        roles += [np.zeros(la, np.int64), np.ones(lb, np.int64)]
        groups.append(np.full(la + lb, e))
        joint.append(((start, start + la), (start + la, start + la + lb)))
        start += la + lb
    spans = []
    if with_sims:
        for e, (a, b) in enumerate(checked):
            span = []
            for g, t in enumerate((a, b)):
                ids.append(t)
                pos.append(np.arange(t.size))
                roles.append(np.zeros(t.size, np.int64))
                groups.append(np.full(t.size, m + 2 * e + g))
                span.append((start, start + t.size))
                start += t.size
            spans.append(tuple(span))
    h = encode_tokens(model, *(np.concatenate(v) for v in (ids, pos, roles, groups)))

    pool_a, pool_b = np.zeros((m, start)), np.zeros((m, start))
    for e, ((a0, a1), (b0, b1)) in enumerate(joint):
        pool_a[e, a0:a1] = 1.0 / (a1 - a0)
        pool_b[e, b0:b1] = 1.0 / (b1 - b0)
    z = ad.concat_cols([ad.matmul(Tensor(pool_a), h), ad.matmul(Tensor(pool_b), h)])
    logits = ad.add_bias(model.linear("head", z), model.params["head_bias"])
    return BatchOutput(logits, h.data if with_sims else None, spans)


def forward_pair(model: PairEncoder, tokens_a, tokens_b):
    """Logits (shape (2,)) and the len_a×len_b cosine matrix for one pair."""
    out = forward_batch(model, [(tokens_a, tokens_b)])
    return ad.reshape(out.logits, (2,)), Tensor(out.sim_matrix(0))


def classification_score(logits) -> float:
    """Softmax probability of the duplicate class."""
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=float)
    x = x.reshape(-1)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise ValidationError("classification_score needs two finite logits")
    z = x[0] - x[1]
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))
