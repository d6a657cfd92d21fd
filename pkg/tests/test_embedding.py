import numpy as np
import pytest
import torch

from fci_forecast.embedding import (
    N_TIME_FEATURES,
    STFDecoderEmbedding,
    STFEncoderEmbedding,
    TSTEmbedding,
    temporal_features,
)
from fci_forecast.errors import ShapeError


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def hours(*hs):
    return np.datetime64("2022-03-07T00", "h") + np.array(hs)


def test_hour_encoding_quarter_points():
    tf = temporal_features(hours(0, 6, 12))
    np.testing.assert_allclose(tf[0, :2], [0, 1], atol=1e-12)
    np.testing.assert_allclose(tf[1, :2], [1, 0], atol=1e-12)
    np.testing.assert_allclose(tf[2, :2], [0, -1], atol=1e-12)


def test_time_features_are_on_the_unit_circle():
    tf = temporal_features(np.datetime64("2021-01-01T00", "h") + np.arange(24 * 400))
    assert tf.shape[1] == N_TIME_FEATURES
    radius = tf[:, 0::2] ** 2 + tf[:, 1::2] ** 2
    np.testing.assert_allclose(radius, 1.0, atol=1e-12)


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed))


@pytest.mark.parametrize("d_t,expected", [(1, 24), (3, 72)])
def test_encoder_token_count(d_t, expected):
    emb = STFEncoderEmbedding(d_t, 2, 24, 128)
    out = emb(rand(5, 24, d_t), rand(5, 24, 2), rand(5, 24, 8))
    assert out.shape == (5, expected, 128)


def test_encoder_zero_weights_give_positions():
    emb = zero_(STFEncoderEmbedding(2, 3, 6, 16))
    with torch.no_grad():
        emb.pos.copy_(rand(6, 16, seed=1))
    out = emb(torch.zeros(1, 6, 2), torch.zeros(1, 6, 3), torch.zeros(1, 6, 8))
    np.testing.assert_array_equal(out[0, :6].detach().numpy(), emb.pos.detach().numpy())
    np.testing.assert_array_equal(out[0, 6:].detach().numpy(), emb.pos.detach().numpy())


def test_encoder_variable_permutation_permutes_blocks():
    torch.manual_seed(0)
    emb = STFEncoderEmbedding(3, 2, 5, 8)
    x, c, t = rand(2, 5, 3, seed=1), rand(2, 5, 2, seed=2), rand(2, 5, 8, seed=3)
    base = emb(x, c, t).reshape(2, 3, 5, 8)
    perm = emb(x[..., [2, 1, 0]], c, t).reshape(2, 3, 5, 8)
    torch.testing.assert_close(perm, base[:, [2, 1, 0]], rtol=0, atol=0)


def test_decoder_token_count_and_positions():
    emb = STFDecoderEmbedding(1, 4, 24, 32)
    assert emb(rand(3, 24, 4), rand(3, 24, 8)).shape == (3, 24, 32)
    zero_(emb)
    with torch.no_grad():
        emb.pos.copy_(rand(24, 32, seed=5))
    out = emb(torch.zeros(1, 24, 4), torch.zeros(1, 24, 8))
    np.testing.assert_array_equal(out[0].detach().numpy(), emb.pos.detach().numpy())


def test_decoder_without_future_context_uses_time_and_position_only():
    torch.manual_seed(0)
    emb = STFDecoderEmbedding(1, 4, 6, 16)
    t = rand(2, 6, 8, seed=1)
    a = emb(torch.zeros(2, 6, 4), t)
    # with C_f zeroed, the context branch reduces to its bias: a constant
    with torch.no_grad():
        emb.context.weight.normal_()
    b = emb(torch.zeros(2, 6, 4), t)
    torch.testing.assert_close(a, b, rtol=0, atol=0)
    c = emb(torch.zeros(2, 6, 4), rand(2, 6, 8, seed=2))
    assert not torch.allclose(a, c)


def test_decoder_blocks_differ_per_variable():
    emb = STFDecoderEmbedding(2, 3, 4, 8)
    with torch.no_grad():
        emb.variable.normal_()
    out = emb(rand(1, 4, 3), rand(1, 4, 8)).reshape(1, 2, 4, 8)
    torch.testing.assert_close(out[0, 1] - out[0, 0], (emb.variable[1] - emb.variable[0]).expand(4, 8))


def test_tst_token_shape():
    emb = TSTEmbedding(1, 2, 24, 128)
    assert emb(rand(2, 24, 1), rand(2, 24, 2), rand(2, 24, 8)).shape == (2, 24, 128)


def test_tst_identity_kernel():
    emb = zero_(TSTEmbedding(1, 0, 7, 4))
    with torch.no_grad():
        emb.values.weight[:, 0, 1] = 1.0  # centre tap
        emb.pos.copy_(rand(7, 4, seed=3))
    x = rand(1, 7, 1, seed=4)
    out = emb(x, None, torch.zeros(1, 7, 8))
    np.testing.assert_allclose(out[0].detach().numpy(), x[0].detach().numpy() + emb.pos.detach().numpy(), atol=1e-15)


def test_tst_constant_input_interior_tokens_equal():
    torch.manual_seed(0)
    emb = TSTEmbedding(1, 0, 10, 8)
    with torch.no_grad():
        emb.pos.zero_()
    out = emb(torch.full((1, 10, 1), 2.5), None, torch.zeros(1, 10, 8))[0]
    for s in range(2, 9):
        torch.testing.assert_close(out[s], out[1])
    assert not torch.allclose(out[0], out[1])  # zero padding shows at the edge


def test_wrong_shape_is_reported():
    emb = STFEncoderEmbedding(1, 2, 24, 16)
    with pytest.raises(ShapeError):
        emb(rand(2, 23, 1), rand(2, 23, 2), rand(2, 23, 8))
