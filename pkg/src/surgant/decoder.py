"""Word-level vocabulary and a small causal transformer decoder.

The decoder consumes a prefix of fused embeddings followed by answer-token
embeddings. Every position attends causally; only answer positions produce
logits. The output projection reuses the token-embedding table.
"""
from __future__ import annotations

import math
import re

import numpy as np

from . import lora as lora_mod
from . import tensor as T
from .errors import LengthError
from .fusion import LayerNorm
from .module import Module, parameter
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?|\w+|[^\w\s]")
_NO_SPACE_BEFORE = set(",.;:?!)%")
_NO_SPACE_AFTER = set("(")


def tokenize_words(text):
    return _TOKEN_RE.findall(text.lower())


def detokenize_words(words):
    out = []
    for w in words:
        if out and w not in _NO_SPACE_BEFORE and out[-1] not in _NO_SPACE_AFTER:
            out.append(" ")
        out.append(w)
    return "".join(out)


def normalize(text):
    """Lowercase and re-space ``text`` the way a tokenizer round trip would."""
    return detokenize_words(tokenize_words(text))


class Vocab:
    """Reserved ids first, then corpus words in lexicographic order."""

    def __init__(self, words=()):
        words = sorted(set(words) - set(RESERVED))
        self.itos = list(RESERVED) + words
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, texts):
        words = set()
        for text in texts:
            words.update(tokenize_words(text))
        return cls(words)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, word):
        return self.stoi.get(word, UNK)

    def encode(self, text):
        return [self.id(w) for w in tokenize_words(text)]

    def decode(self, ids):
        words = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self.itos[i] if 0 <= i < len(self.itos) else RESERVED[UNK])
        return detokenize_words(words)


def tokenize(vocab, text):
    return vocab.encode(text)


def detokenize(vocab, ids):
    return vocab.decode(ids)


class SelfAttention(Module):
    def __init__(self, dim, n_heads, rng, lora_cfg):
        self.n_heads = n_heads
        self.c_attn = _projection(dim, 3 * dim, rng, lora_cfg, "c_attn")
        self.c_proj = _projection(dim, dim, rng, lora_cfg, "c_proj")

    def __call__(self, x, bias):
        b, s, d = x.shape
        h, dk = self.n_heads, d // self.n_heads
        qkv = T.transpose(T.reshape(self.c_attn(x), (b, s, 3, h, dk)), (2, 0, 3, 1, 4))
        q, k, v = (T.take(qkv, i, axis=0) for i in range(3))
        scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dk)) + bias
        out = T.matmul(T.softmax(scores), v)
        return self.c_proj(T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, s, d)))


class MLP(Module):
    def __init__(self, dim, rng, lora_cfg, expansion=4):
        self.c_fc = lora_mod.Linear(dim, expansion * dim, rng)
        self.c_proj = _projection(expansion * dim, dim, rng, lora_cfg, "c_proj")

    def __call__(self, x):
        return self.c_proj(T.tanh(self.c_fc(x)))


class Block(Module):
    def __init__(self, dim, n_heads, rng, lora_cfg):
        self.ln_1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads, rng, lora_cfg)
        self.ln_2 = LayerNorm(dim)
        self.mlp = MLP(dim, rng, lora_cfg)

    def __call__(self, x, bias):
        x = x + self.attn(self.ln_1(x), bias)
        return x + self.mlp(self.ln_2(x))


def _projection(in_dim, out_dim, rng, lora_cfg, name):
    layer = lora_mod.Linear(in_dim, out_dim, rng)
    if lora_cfg is None:
        return layer
    return lora_mod.wrap(layer, rng=rng, layer_id=name, **lora_cfg)


class DecoderLM(Module):
    """Pre-norm causal decoder; ``lora_cfg=None`` leaves every layer dense.

    The final LayerNorm gain starts at zero, so the untrained head emits
    uniform logits while the output projection stays tied to ``tok_emb``.
    """

    def __init__(self, vocab_size, dim=64, n_blocks=2, n_heads=4, max_len=128, rng=None,
                 lora_cfg=None, zero_head=True):
        rng = np.random.default_rng(0) if rng is None else rng
        self.vocab_size, self.dim, self.max_len = vocab_size, dim, max_len
        self.tok_emb = parameter(rng.normal(0.0, 0.5, (vocab_size, dim)))
        self.pos_emb = parameter(rng.normal(0.0, 0.1, (max_len, dim)))
        self.blocks = [Block(dim, n_heads, rng, lora_cfg) for _ in range(n_blocks)]
        self.ln_f = LayerNorm(dim)
        if zero_head:
            self.ln_f.gain.data[:] = 0.0

    def adapters(self):
        return [m for m in self.modules() if isinstance(m, lora_mod.LoraAdapter)]

    def embed_tokens(self, ids, positions):
        return T.embedding(self.tok_emb, ids) + T.embedding(self.pos_emb, positions)

    def embed_text(self, ids):
        """Token plus position embeddings for (B, L) ids starting at position 0."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[-1] > self.max_len:
            raise LengthError(f"text of length {ids.shape[-1]} exceeds max_len {self.max_len}")
        pos = np.broadcast_to(np.arange(ids.shape[-1]), ids.shape)
        return self.embed_tokens(ids, pos)

    def __call__(self, prefix, answer_ids, prefix_lengths=None):
        return forward(self, prefix, answer_ids, prefix_lengths)


def attention_bias(prefix_len, prefix_lengths, answer_len):
    """Additive (B, 1, S, S) mask: causal, and padded prefix slots hidden."""
    s = prefix_len + answer_len
    causal = np.tril(np.ones((s, s), dtype=bool))
    keys = np.ones((len(prefix_lengths), s), dtype=bool)
    for b, n in enumerate(prefix_lengths):
        keys[b, n:prefix_len] = False
    allowed = causal[None] & keys[:, None, :]
    return np.where(allowed, 0.0, -np.inf)[:, None]


def forward(model, prefix, answer_ids, prefix_lengths=None):
    """Logits for every answer position, shape (B, n, V) (or (n, V) unbatched).

    Answer token j sits at position ``prefix_lengths[b] + j`` so padding in
    the prefix does not shift positions.
    """
    prefix = T.as_tensor(prefix)
    answer_ids = np.asarray(answer_ids, dtype=np.int64)
    squeeze = prefix.ndim == 2
    if squeeze:
        prefix = T.reshape(prefix, (1,) + prefix.shape)
        answer_ids = answer_ids[None]
    bsz, lp, _ = prefix.shape
    n = answer_ids.shape[1]
    lengths = np.full(bsz, lp) if prefix_lengths is None else np.asarray(prefix_lengths)
    if int(lengths.max()) + n > model.max_len:
        raise LengthError(f"sequence of length {int(lengths.max()) + n} exceeds "
                          f"max_len {model.max_len}")
    pos = lengths[:, None] + np.arange(n)[None]
    x = T.concat([prefix, model.embed_tokens(answer_ids, pos)], axis=1)
    bias = Tensor(attention_bias(lp, lengths, n))
    for block in model.blocks:
        x = block(x, bias)
    h = model.ln_f(T.take(x, np.arange(lp, lp + n), axis=1))
    logits = T.matmul(h, T.transpose(model.tok_emb))
    return T.reshape(logits, logits.shape[1:]) if squeeze else logits


def generate_greedy(model, prefix, max_new, stop=EOS, prefix_lengths=None):
    """Argmax decoding (lowest id wins ties); returns one id list per sample.

    Each list ends with ``stop`` if it was produced within ``max_new`` tokens.
    """
    if max_new < 1:
        raise ValueError("max_new must be >= 1")
    prefix = T.as_tensor(prefix)
    squeeze = prefix.ndim == 2
    if squeeze:
        prefix = T.reshape(prefix, (1,) + prefix.shape)
    bsz = prefix.shape[0]
    seq = np.full((bsz, 1), BOS, dtype=np.int64)
    done = np.zeros(bsz, dtype=bool)
    outputs = [[] for _ in range(bsz)]
    for _ in range(max_new):
        logits = forward(model, prefix, seq, prefix_lengths).data[:, -1]
        nxt = np.argmax(logits, axis=-1)
        for b in range(bsz):
            if not done[b]:
                outputs[b].append(int(nxt[b]))
                done[b] = nxt[b] == stop
        if done.all():
            break
        seq = np.concatenate([seq, nxt[:, None]], axis=1)
    return outputs[0] if squeeze else outputs
