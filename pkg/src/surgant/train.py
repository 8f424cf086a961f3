"""Training loop, Adam, config files and checkpoint sidecars."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .dataset import FeatureStore, read_jsonl
from .decoder import Vocab
from .errors import ConfigError, NumericError, TrainingDiverged
from .model import ModelConfig, SurgAntModel, make_batch

log = logging.getLogger(__name__)

FRAME_BUDGETS = (8, 16, 32)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 1
    batch_size: int = 8
    lr: float = 2e-5
    k: int = 8
    max_steps: int = 0  # 0 means "run every epoch to completion"
    feature_dim: int = 32
    hidden_dim: int = 0
    model_dim: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    fusion_heads: int = 4
    max_len: int = 128
    lora: bool = True
    lora_r: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.1
    gate_mode: str = "learned"
    temporal: str = "bigru"
    data: str = ""
    features: str = ""
    checkpoint: str = "model.antf"
    loss_csv: str = "loss.csv"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "feature_dim", "model_dim", "n_blocks",
                     "n_heads", "fusion_heads", "max_len", "lora_r"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr > 0 or not self.lora_alpha > 0:
            raise ConfigError("lr and lora_alpha must be positive")
        if self.hidden_dim < 0 or self.max_steps < 0:
            raise ConfigError("hidden_dim and max_steps must be >= 0")
        if self.k not in FRAME_BUDGETS:
            raise ConfigError(f"k must be one of {FRAME_BUDGETS}, got {self.k}")
        self.model_config()

    def model_config(self):
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self):
        return asdict(self)


def _coerce(name, value, kind):
    if kind is bool or kind == "bool":
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    try:
        return {"int": int, "float": float, "str": str}.get(kind, kind)(value)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_pairs(pairs, base=None):
    """Apply ``key=value`` overrides; unknown keys raise ConfigError."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = asdict(base or TrainConfig())
    for key, value in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value, types[key])
    return TrainConfig(**values)


def parse_config_text(text):
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides=None):
    pairs = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    pairs.update(overrides or {})
    return config_from_pairs(pairs)


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def build_vocab(items):
    return Vocab.build([it.question for it in items] + [it.answer for it in items])


# ------------------------------------------------------------- checkpoints

def sidecar_path(path):
    return Path(str(path) + ".json")


def save_model(path, model, vocab, extra=None):
    ckpt.save(path, model.state_dict())
    meta = {"model": model.config.to_dict(), "seed": model.seed, "vocab": vocab.itos}
    meta.update(extra or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")


def load_model(path):
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    vocab = Vocab()
    vocab.itos = list(meta["vocab"])
    vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
    model = SurgAntModel(len(vocab), ModelConfig.from_dict(meta["model"]), seed=meta["seed"])
    model.load_state_dict(ckpt.load(path))
    model.eval()
    return model, vocab, meta


# ------------------------------------------------------------------- loop

@dataclass
class TrainResult:
    model: SurgAntModel
    vocab: Vocab
    losses: list
    steps: int


def _check_k(items, k):
    ks = {it.k for it in items}
    if ks - {k}:
        raise ConfigError(f"config k={k} but dataset clips have k={sorted(ks)}")


def train(config, items=None, store=None, vocab=None, write=True):
    """Train on ``items`` (or ``config.data``); returns the model and loss curve.

    With ``write`` the loss CSV and an ANTF1 checkpoint (plus ``.json``
    sidecar) are written after every epoch.
    """
    if items is None:
        if not config.data:
            raise ConfigError("no training data: set data=<jsonl>")
        items = read_jsonl(config.data)
    if store is None:
        if not config.features:
            raise ConfigError("no features: set features=<dir>")
        store = FeatureStore(config.features)
    if not items:
        raise ConfigError("training set is empty")
    _check_k(items, config.k)
    vocab = build_vocab(items) if vocab is None else vocab
    model = SurgAntModel(len(vocab), config.model_config(), seed=config.seed)
    opt = Adam(model.parameters(), config.lr)
    order_rng = np.random.default_rng([config.seed, 1])
    losses = []
    step = 0
    csv_fh = None
    if write:
        csv_fh = open(config.loss_csv, "w", encoding="utf-8", newline="")
        writer = csv.writer(csv_fh, lineterminator="\n")
        writer.writerow(["step", "epoch", "loss", "lr"])
    try:
        for epoch in range(config.epochs):
            order = order_rng.permutation(len(items))
            for start in range(0, len(order), config.batch_size):
                if config.max_steps and step >= config.max_steps:
                    break
                batch_items = [items[i] for i in order[start:start + config.batch_size]]
                batch = make_batch(batch_items, vocab, store)
                model.train()
                model.set_step(step)
                with T.Graph() as graph:
                    try:
                        loss = model.loss(batch)
                    except NumericError as exc:
                        raise TrainingDiverged(f"{exc} at step {step}", batch.keys) from exc
                    value = float(loss.data)
                    if not math.isfinite(value):
                        raise TrainingDiverged(
                            f"non-finite loss {value} at step {step}", batch.keys)
                    graph.backward(loss)
                opt.step()
                model.zero_grad()
                losses.append(value)
                if csv_fh is not None:
                    writer.writerow([step, epoch, repr(value), repr(config.lr)])
                step += 1
            if write:
                csv_fh.flush()
                save_model(config.checkpoint, model, vocab, {"epoch": epoch, "step": step})
            if config.max_steps and step >= config.max_steps:
                break
    except TrainingDiverged as exc:
        if write:
            dump = Path(str(config.checkpoint) + ".diverged.json")
            dump.write_text(json.dumps({"message": str(exc),
                                        "batch": [list(k) for k in exc.batch_ids]}, indent=2),
                            encoding="utf-8")
            log.error("training diverged; batch ids written to %s", dump)
        raise
    finally:
        if csv_fh is not None:
            csv_fh.close()
    model.eval()
    return TrainResult(model, vocab, losses, step)


# -------------------------------------------------------------- inference

def predict_items(model, vocab, items, store, max_new=32, batch_size=64):
    """Greedy answers for ``items``; returns copies with ``answer`` replaced."""
    from dataclasses import replace
    model.eval()
    out = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        batch = make_batch(chunk, vocab, store)
        ids = model.generate(batch.q_ids, batch.q_len, batch.feats, max_new)
        out.extend(replace(it, answer=vocab.decode(seq)) for it, seq in zip(chunk, ids))
    return out


def answer_token_accuracy(model, vocab, items, store, batch_size=64):
    """Teacher-forced argmax accuracy over answer tokens (EOS included)."""
    model.eval()
    hit = total = 0
    for start in range(0, len(items), batch_size):
        batch = make_batch(items[start:start + batch_size], vocab, store)
        pred = np.argmax(model.logits(batch).data, axis=-1)
        hit += int(((pred == batch.targets) & batch.mask).sum())
        total += int(batch.mask.sum())
    return hit / total
