import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from surgant import tensor as T
from surgant.decoder import (BOS, EOS, PAD, UNK, DecoderLM, Vocab, attention_bias,
                             detokenize, forward, generate_greedy, normalize, tokenize,
                             tokenize_words)
from surgant.errors import LengthError
from surgant.tensor import Graph
from surgant.train import Adam


@pytest.fixture
def vocab():
    return Vocab.build(["Sellar phase", "the next step needs suction, cottle",
                        "ends in about 12.5 minutes (roughly)"])


class TestVocab:
    def test_reserved_ids(self, vocab):
        assert vocab.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)

    def test_lexicographic(self, vocab):
        assert vocab.itos[4:] == sorted(vocab.itos[4:])

    def test_direct_lookup(self, vocab):
        assert tokenize(vocab, "Sellar phase") == [vocab.id("sellar"), vocab.id("phase")]

    def test_unknown_word(self, vocab):
        assert tokenize(vocab, "tumour") == [UNK]

    @pytest.mark.parametrize("text", ["Sellar phase", "the next step needs suction, cottle",
                                      "ends in about 12.5 minutes (roughly)"])
    def test_round_trip(self, vocab, text):
        assert detokenize(vocab, tokenize(vocab, text)) == normalize(text)

    @given(st.lists(st.sampled_from(["a", "bc", "12", "3.5", ",", ".", "(", ")", "?", "%"]),
                    max_size=12))
    def test_normalize_is_idempotent(self, words):
        text = " ".join(words)
        assert normalize(normalize(text)) == normalize(text)
        assert tokenize_words(normalize(text)) == tokenize_words(text)

    def test_decode_stops_at_eos(self, vocab):
        ids = tokenize(vocab, "sellar phase") + [EOS] + tokenize(vocab, "suction")
        assert vocab.decode(ids) == "sellar phase"


def tiny_decoder(vocab_size=12, zero_head=False, lora_cfg=None, seed=0):
    return DecoderLM(vocab_size, 8, 2, 2, 24, np.random.default_rng(seed), lora_cfg=lora_cfg,
                     zero_head=zero_head)


class TestForward:
    def test_zero_head_gives_uniform_logits(self, rng):
        dec = tiny_decoder(zero_head=True)
        logits = dec(rng.normal(size=(3, 8)), [1, 5, 7]).data
        np.testing.assert_array_equal(logits, np.zeros_like(logits))
        loss = T.cross_entropy(dec(rng.normal(size=(3, 8)), [1, 5, 7]), [5, 7, 2])
        assert float(loss.data) == pytest.approx(math.log(12), abs=1e-6)

    def test_causality(self, rng):
        dec = tiny_decoder()
        prefix = rng.normal(size=(4, 8))
        ids = rng.integers(0, 12, 6)
        base = dec(prefix, ids).data
        for j in range(6):
            changed = ids.copy()
            changed[j + 1:] = rng.integers(0, 12, 5 - j)
            np.testing.assert_array_equal(dec(prefix, changed).data[:j + 1], base[:j + 1])

    def test_padded_prefix_is_invisible(self, rng):
        dec = tiny_decoder()
        prefix = rng.normal(size=(3, 8))
        ids = rng.integers(0, 12, 4)
        padded = np.concatenate([prefix, rng.normal(size=(2, 8))])[None]
        a = forward(dec, prefix[None], ids[None], [3]).data
        b = forward(dec, padded, ids[None], [3]).data
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_output_tied_to_embeddings(self, rng):
        dec = tiny_decoder()
        h = rng.normal(size=(3, 8))
        dec.tok_emb.data[5] += 1.0
        logits = dec(h, [1, 2, 3]).data
        dec.tok_emb.data[5] -= 1.0
        assert np.abs(logits - dec(h, [1, 2, 3]).data)[:, 5].max() > 0

    def test_length_overflow(self, rng):
        dec = tiny_decoder()
        with pytest.raises(LengthError):
            dec(rng.normal(size=(20, 8)), np.ones(5, dtype=int))

    def test_attention_bias(self):
        bias = attention_bias(3, [2, 3], 2)
        assert bias.shape == (2, 1, 5, 5)
        allowed = np.isfinite(bias[:, 0])
        assert not allowed[0][:, 2].any() and allowed[1][4, :].all()
        assert not allowed[1][0, 1:].any()

    def test_gradcheck_through_block(self, rng):
        from .oracles import numeric_grad, rel_error
        dec = tiny_decoder(lora_cfg=dict(r=2, alpha=4.0, dropout=0.0))
        for a in dec.adapters():
            a.lora.B.data[...] = rng.normal(size=a.lora.B.shape)
        dec.eval()
        prefix, ids, targets = rng.normal(size=(2, 8)), [1, 4, 6], [4, 6, 2]
        with Graph() as g:
            loss = T.cross_entropy(dec(prefix, ids), targets)
        g.backward(loss)
        for name, t in dec.named_parameters():
            num = numeric_grad(
                lambda: float(T.cross_entropy(dec(prefix, ids), targets).data), t.data)
            assert rel_error(t.grad, num) < 1e-4, name


class TestGenerate:
    def test_max_new_one(self, rng):
        out = generate_greedy(tiny_decoder(), rng.normal(size=(2, 8)), 1)
        assert len(out) == 1

    def test_ties_break_to_lowest_id(self, rng):
        assert generate_greedy(tiny_decoder(zero_head=True), rng.normal(size=(2, 8)), 3) == [0] * 3

    def test_deterministic(self, rng):
        dec, prefix = tiny_decoder(), rng.normal(size=(2, 8))
        assert generate_greedy(dec, prefix, 6) == generate_greedy(dec, prefix, 6)

    def test_bad_max_new(self, rng):
        with pytest.raises(ValueError):
            generate_greedy(tiny_decoder(), rng.normal(size=(2, 8)), 0)

    def test_batched_matches_single(self, rng):
        dec = tiny_decoder()
        prefix = rng.normal(size=(2, 3, 8))
        both = generate_greedy(dec, prefix, 5, prefix_lengths=[3, 3])
        assert both == [generate_greedy(dec, prefix[i], 5) for i in range(2)]

    def test_learns_to_copy_single_token(self, rng):
        dec = tiny_decoder(zero_head=True, seed=1)
        prefixes = rng.normal(size=(2, 3, 8))
        answers = [7, 9]
        opt = Adam(dec.parameters(), 1e-2)
        for _ in range(150):
            with Graph() as g:
                logits = forward(dec, prefixes, [[BOS, 7], [BOS, 9]])
                loss = T.cross_entropy(logits, [[7, EOS], [9, EOS]])
            g.backward(loss)
            opt.step()
            dec.zero_grad()
        for p, a in zip(prefixes, answers):
            assert generate_greedy(dec, p, 5) == [a, EOS]
