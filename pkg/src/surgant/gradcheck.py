"""Central finite-difference checks for every trainable block.

The error for a block is ``max |analytic - numeric| / max |numeric|`` over
the checked entries, i.e. relative to the block's own gradient scale, so a
block whose gradients are all tiny is not judged on round-off.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import ModelConfig, SurgAntModel, make_batch

FD_STEP = 1e-5
TOLERANCE = 1e-4
SCALE_FLOOR = 1e-8


@dataclass
class BlockResult:
    block: str
    n_params: int
    checked: int
    max_rel_error: float

    @property
    def passed(self):
        return self.max_rel_error <= TOLERANCE


def _entries(shape, rng, max_entries):
    size = int(np.prod(shape))
    flat = np.arange(size) if size <= max_entries else np.sort(
        rng.choice(size, max_entries, replace=False))
    return [np.unravel_index(i, shape) for i in flat]


def check_tensors(loss_fn, tensors, max_entries=40, h=FD_STEP, seed=0):
    """Compare backward against central differences for ``tensors``.

    ``loss_fn`` builds a scalar Tensor from the current tensor values. Returns
    ``(max_rel_error, checked_entries)``.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    with T.Graph() as g:
        loss = loss_fn()
        g.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    num_all, ana_all = [], []
    for t, a in zip(tensors, analytic):
        for idx in _entries(t.shape, rng, max_entries):
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = float(loss_fn().data)
            t.data[idx] = orig - h
            down = float(loss_fn().data)
            t.data[idx] = orig
            num_all.append((up - down) / (2 * h))
            ana_all.append(a[idx])
    num, ana = np.array(num_all), np.array(ana_all)
    scale = max(np.abs(num).max(initial=0.0), SCALE_FLOOR)
    return float(np.abs(ana - num).max(initial=0.0) / scale), len(num)


def parameter_blocks(model):
    """Trainable tensors grouped into named blocks."""
    named = model.named_parameters()
    rules = [
        ("temporal.fwd", lambda n: n.startswith("temporal.fwd.")),
        ("temporal.bwd", lambda n: n.startswith("temporal.bwd.")),
        ("fusion.W_Q", lambda n: n.startswith("fusion.attn.W_Q")),
        ("fusion.W_K", lambda n: n.startswith("fusion.attn.W_K")),
        ("fusion.W_V", lambda n: n.startswith("fusion.attn.W_V")),
        ("fusion.W_O", lambda n: n.startswith("fusion.attn.W_O")),
        ("fusion.gate", lambda n: n.startswith("fusion.gate.")),
        ("fusion.ffn", lambda n: n.startswith("fusion.ffn.")),
        ("fusion.layernorm", lambda n: n.startswith("fusion.norm")),
        ("decoder.lora", lambda n: ".lora." in n),
        ("decoder.layernorm", lambda n: n.startswith("decoder.") and ".ln_" in f".{n}"),
        ("decoder.embeddings", lambda n: n in ("decoder.tok_emb", "decoder.pos_emb")),
        ("decoder.blocks", lambda n: n.startswith("decoder.blocks.")),
    ]
    blocks, taken = {}, set()
    for block, match in rules:
        for name, t in named:
            if name not in taken and match(name):
                blocks.setdefault(block, []).append((name, t))
                taken.add(name)
    leftover = [n for n, _ in named if n not in taken]
    if leftover:
        blocks["other"] = [(n, t) for n, t in named if n in leftover]
    return blocks


def tiny_problem(seed=7):
    """A small model and batch whose zero-initialised tensors are randomised."""
    from .dataset import FeatureStore, QAItem
    from .decoder import Vocab

    rng = np.random.default_rng(seed)
    words = "the next phase will be sellar closure ends in about 4 minutes what is ?".split()
    vocab = Vocab(words)
    cfg = ModelConfig(feature_dim=5, hidden_dim=4, model_dim=8, n_blocks=1, n_heads=2,
                      fusion_heads=2, ffn_expansion=2, max_len=16, lora=True, lora_r=2,
                      lora_alpha=4.0, lora_dropout=0.1)
    model = SurgAntModel(len(vocab), cfg, seed=seed)
    for name, t in model.named_tensors():
        if name.endswith("lora.B") or name.endswith("gain") or name.endswith("b_g"):
            t.data[...] = rng.normal(0.0, 0.5, t.shape) + (1.0 if name.endswith("gain") else 0.0)
    store = FeatureStore(arrays={"01": rng.normal(size=(6, cfg.feature_dim))})
    items = [
        QAItem("01", 3, 3, "future-phase", "what is the next phase?",
               "the next phase will be sellar", "sellar"),
        QAItem("01", 5, 3, "time", "what is the next phase?",
               "closure ends in about 4 minutes", 4.0, "phase"),
    ]
    model.eval()
    return model, make_batch(items, vocab, store)


def gradcheck_all(seed=7, max_entries=40, model=None, batch=None):
    """Per-block results for the full model at tiny dims (eval mode, float64)."""
    if model is None:
        model, batch = tiny_problem(seed)
    results = []
    for block, members in parameter_blocks(model).items():
        tensors = [t for _, t in members]
        err, checked = check_tensors(lambda: model.loss(batch), tensors, max_entries, seed=seed)
        results.append(BlockResult(block, sum(t.data.size for t in tensors), checked, err))
    return results


def format_table(results, elapsed=None):
    lines = [f"{'block':<22}{'params':>8}{'checked':>9}{'max rel err':>14}  status"]
    for r in results:
        lines.append(f"{r.block:<22}{r.n_params:>8}{r.checked:>9}{r.max_rel_error:>14.3e}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    if elapsed is not None:
        lines.append(f"elapsed {elapsed:.1f}s")
    return "\n".join(lines)


def run(seed=7):
    t0 = time.perf_counter()
    results = gradcheck_all(seed)
    return results, time.perf_counter() - t0
