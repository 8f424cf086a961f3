import numpy as np
import pytest

from surgant import dataset as ds
from surgant.decoder import Vocab
from surgant.model import ModelConfig, SurgAntModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_world():
    """Three short synthetic videos with QA items at k=8."""
    cfg = ds.SynthConfig(seed=3, n_videos=3, minutes_per_video=4.0, feature_dim=8)
    frames, store = ds.synth_in_memory(cfg)
    items, train, test, stats = ds.build_dataset(frames, ds.load_templates(), k=8,
                                                 test_videos=["02"])
    vocab = Vocab.build([it.question for it in items] + [it.answer for it in items])
    return {"frames": frames, "store": store, "items": items, "train": train, "test": test,
            "stats": stats, "vocab": vocab}


@pytest.fixture
def small_model(small_world):
    cfg = ModelConfig(feature_dim=8, model_dim=16, n_blocks=1, n_heads=2, fusion_heads=2,
                      max_len=48, lora_r=4, lora_alpha=8.0)
    return SurgAntModel(len(small_world["vocab"]), cfg, seed=5)
