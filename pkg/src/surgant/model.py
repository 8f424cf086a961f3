"""The full anticipation model: frame features + question -> answer tokens."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .decoder import BOS, EOS, PAD, DecoderLM, generate_greedy
from .errors import ConfigError
from .fusion import GATE_MODES, GatedFusion
from .module import Module
from .temporal import BiGRU

TEMPORAL_MODES = ("bigru", "meanpool")


@dataclass
class ModelConfig:
    feature_dim: int = 32
    hidden_dim: int = 0  # 0 means "same as feature_dim"
    model_dim: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    fusion_heads: int = 4
    ffn_expansion: int = 4
    max_len: int = 128
    lora: bool = True
    lora_r: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.1
    gate_mode: str = "learned"
    temporal: str = "bigru"

    def __post_init__(self):
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"gate_mode must be one of {GATE_MODES}")
        if self.temporal not in TEMPORAL_MODES:
            raise ConfigError(f"temporal must be one of {TEMPORAL_MODES}")

    @property
    def context_dim(self):
        if self.temporal == "meanpool":
            return self.feature_dim
        return self.hidden_dim or self.feature_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Batch:
    q_ids: np.ndarray
    q_len: np.ndarray
    feats: np.ndarray
    ans_in: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    keys: list

    def __len__(self):
        return len(self.keys)


def pad_rows(rows, fill=PAD):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def make_batch(items, vocab, store):
    q = [vocab.encode(it.question) for it in items]
    a = [vocab.encode(it.answer) for it in items]
    feats = np.stack([store.clip(it.video, it.t_end, it.k) for it in items])
    ans_in = pad_rows([[BOS] + x for x in a])
    targets = pad_rows([x + [EOS] for x in a])
    mask = np.zeros(targets.shape, dtype=bool)
    for i, x in enumerate(a):
        mask[i, :len(x) + 1] = True
    return Batch(q_ids=pad_rows(q), q_len=np.array([len(x) for x in q]), feats=feats,
                 ans_in=ans_in, targets=targets, mask=mask, keys=[it.key for it in items])


class SurgAntModel(Module):
    def __init__(self, vocab_size, config=None, seed=0):
        cfg = ModelConfig() if config is None else config
        self.config = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        if cfg.temporal == "bigru":
            self.temporal = BiGRU(cfg.feature_dim, cfg.context_dim, rng)
        self.fusion = GatedFusion(cfg.model_dim, cfg.context_dim, cfg.fusion_heads,
                                  cfg.ffn_expansion, rng, gate_mode=cfg.gate_mode)
        lora_cfg = (dict(r=cfg.lora_r, alpha=cfg.lora_alpha, dropout=cfg.lora_dropout)
                    if cfg.lora else None)
        self.decoder = DecoderLM(vocab_size, cfg.model_dim, cfg.n_blocks, cfg.n_heads,
                                 cfg.max_len, rng, lora_cfg=lora_cfg)

    def set_step(self, step):
        """Re-seed adapter dropout so masks are a pure function of (seed, step)."""
        for i, adapter in enumerate(self.decoder.adapters()):
            adapter.dropout_seed = [self.seed, int(step), i]

    def context(self, feats):
        feats = T.as_tensor(feats)
        if self.config.temporal == "meanpool":
            return T.mean(feats, axis=1, keepdims=True)
        return self.temporal(feats)

    def fuse(self, q_ids, feats, q_len=None):
        q_ids = np.asarray(q_ids)
        X_t = self.decoder.embed_text(q_ids)
        state = self.fusion(X_t, self.context(feats))
        return state

    def logits(self, batch):
        state = self.fuse(batch.q_ids, batch.feats)
        return self.decoder(state.Z, batch.ans_in, batch.q_len)

    def loss(self, batch):
        return T.cross_entropy(self.logits(batch), batch.targets, batch.mask)

    def generate(self, q_ids, q_len, feats, max_new=32):
        state = self.fuse(q_ids, feats)
        return generate_greedy(self.decoder, state.Z, max_new, prefix_lengths=q_len)
