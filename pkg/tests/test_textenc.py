"""
Tests for the vocabulary, tokenizer, frozen text encoder and the textual bypass.
"""
import numpy as np
import pytest

from config.errors import ConditioningError, ShapeError, TokenizationError
from textenc.text_encoder import FrozenTextEncoder, causal_mask, encode_prompt, mix_bypass
from textenc.vocabulary import build_vocabulary, init_token_table, load_vocabulary, save_vocabulary, tokenize

CAPTION = "a photo of a red circle on a white background"


@pytest.fixture(scope="module")
def vocab():
    return build_vocabulary()


@pytest.fixture(scope="module")
def encoder(vocab):
    return FrozenTextEncoder.initialize(vocab, context_length=12, embed_dim=16, num_blocks=2, ffn_dim=32,
                                        seed=0, dtype=np.float64)


def test_vocabulary_layout(vocab):
    assert len(vocab) == 22
    assert vocab.tokens[0] == "<pad>"
    assert vocab.tokens[-1] == "S*"
    assert vocab.pad_id == 0
    assert vocab.placeholder_id == 21


def test_tokenize_examples(vocab):
    tokens = tokenize("a photo of S*", vocab, 12)
    assert tokens.placeholder_pos == 3
    assert len(tokens.ids) == 12
    assert tokens.ids[3] == vocab.placeholder_id

    empty = tokenize("", vocab, 12)
    assert empty.ids == [vocab.pad_id] * 12
    assert not empty.has_placeholder

    caption = tokenize(CAPTION, vocab, 12)
    assert caption.placeholder_pos is None
    assert all(i != vocab.pad_id for i in caption.ids[:10])
    assert caption.ids[10:] == [vocab.pad_id] * 2


def test_tokenize_errors(vocab):
    with pytest.raises(TokenizationError):
        tokenize("a photo of a dog", vocab, 12)
    with pytest.raises(TokenizationError):
        tokenize(" ".join(["a"] * 13), vocab, 12)
    with pytest.raises(TokenizationError):
        tokenize("S* on S*", vocab, 12)


def test_token_norms_form_a_narrow_band():
    table = init_token_table(22, 64, seed=3)
    norms = np.linalg.norm(table, axis=1)
    median = np.median(norms)
    assert np.all(norms >= 0.8 * median)
    assert np.all(norms <= 1.2 * median)


def test_vocabulary_round_trip(tmp_path, vocab):
    save_vocabulary(tmp_path / "vocab.txt", vocab)
    assert load_vocabulary(tmp_path / "vocab.txt").tokens == vocab.tokens


def test_causal_mask():
    mask = causal_mask(4)
    assert np.all(mask[np.tril_indices(4)] == 0)
    assert np.all(mask[np.triu_indices(4, k=1)] < -1e8)


def test_substitution_identity(vocab, encoder):
    literal = encoder.encode(tokenize(CAPTION, vocab, 12)).mat.data
    placeholder = tokenize("a photo of a S* circle on a white background", vocab, 12)
    injected = encode_prompt(placeholder, encoder.token_embedding("red"), encoder).mat.data
    assert np.array_equal(literal, injected)


def test_plain_prompt_matches_plain_encoding(vocab, encoder):
    tokens = tokenize(CAPTION, vocab, 12)
    assert np.array_equal(encode_prompt(tokens, None, encoder).mat.data, encoder.encode(tokens).mat.data)


def test_perturbing_injection_only_changes_later_positions(vocab, encoder):
    tokens = tokenize("a photo of S* on a white background", vocab, 12)
    v = np.random.default_rng(0).standard_normal(16)
    base = encoder.encode(tokens, v).mat.data
    moved = encoder.encode(tokens, v + 0.5).mat.data
    pos = tokens.placeholder_pos
    assert np.array_equal(base[:pos], moved[:pos])
    assert not np.allclose(base[pos], moved[pos])


def test_injection_contract(vocab, encoder):
    with_placeholder = tokenize("a photo of S*", vocab, 12)
    without = tokenize(CAPTION, vocab, 12)
    with pytest.raises(ConditioningError):
        encoder.encode(with_placeholder, None)
    with pytest.raises(ConditioningError):
        encoder.encode(without, np.ones(16))
    with pytest.raises(ConditioningError):
        encoder.encode(with_placeholder, np.ones(8))
    with pytest.raises(ConditioningError):
        encoder.encode(with_placeholder, np.ones((2, 16)))


def test_encoder_round_trips_through_sections(vocab, encoder):
    restored = FrozenTextEncoder.from_sections(vocab, encoder.sections())
    tokens = tokenize(CAPTION, vocab, 12)
    assert restored.num_blocks == 2
    assert np.array_equal(restored.encode(tokens).mat.data, encoder.encode(tokens).mat.data)


# ---------------------------------------------------------------------------
# Textual bypass
# ---------------------------------------------------------------------------

def _sequence(vocab, encoder):
    tokens = tokenize("a photo of S* on a white background", vocab, 12)
    return encoder.encode(tokens, np.random.default_rng(1).standard_normal(16)), tokens.placeholder_pos


def test_zero_alpha_leaves_sequence_unchanged(vocab, encoder):
    seq, pos = _sequence(vocab, encoder)
    mixed = mix_bypass(seq, pos, np.ones(16), alpha=0.0)
    assert np.array_equal(mixed.mat.data, seq.mat.data)


def test_bypass_residual_norm(vocab, encoder):
    seq, pos = _sequence(vocab, encoder)
    v_pass = np.random.default_rng(2).standard_normal(16)
    mixed = mix_bypass(seq, pos, v_pass, alpha=0.2).mat.data
    residual = mixed[pos] - seq.mat.data[pos]
    np.testing.assert_allclose(np.linalg.norm(residual), 0.2 * np.linalg.norm(seq.mat.data[pos]), rtol=1e-6)
    others = [i for i in range(12) if i != pos]
    assert np.array_equal(mixed[others], seq.mat.data[others])


def test_collinear_bypass_scales_the_row(vocab, encoder):
    seq, pos = _sequence(vocab, encoder)
    row = seq.mat.data[pos]
    mixed = mix_bypass(seq, pos, 3.0 * row, alpha=0.2).mat.data
    np.testing.assert_allclose(np.linalg.norm(mixed[pos]), 1.2 * np.linalg.norm(row), rtol=1e-9)


def test_bypass_shape_check(vocab, encoder):
    seq, pos = _sequence(vocab, encoder)
    with pytest.raises(ShapeError):
        mix_bypass(seq, pos, np.ones(8), alpha=0.2)
