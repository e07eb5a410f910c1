import dataclasses

import numpy as np
import pytest

from motok.lfq import LfqCodebook, codebook_utilization
from motok.motion import FRAME_DIM
from motok.synth import make_corpus
from motok.vae import (
    SEGMENT_LEN,
    _PARAM_NAMES,
    ToyVaeConfig,
    ToyVaeParams,
    TrainingDiverged,
    VaeError,
    dataset_segments,
    decode,
    encode,
    init_params,
    loss_and_grads,
    pad_frames,
    reconstruct,
    reconstruction_mse,
    segment_frames,
    tokenize_frames,
    train,
)

SMALL = ToyVaeConfig(vocab_size=16, hidden_width=5, lambda_commit=0.05,
                     lambda_entropy=0.01, learning_rate=0.05, epochs=5, seed=3)


def small_batch(rng, segments=4):
    return rng.normal(0.0, 0.5, size=(segments, SEGMENT_LEN, FRAME_DIM))


def finite_difference_grads(params, segments, config, quantize, eps=1e-6):
    grads = {}
    for name in _PARAM_NAMES:
        tensor = params.tensors[name]
        grad = np.zeros_like(tensor)
        for i in range(tensor.size):
            plus = {k: v.copy() for k, v in params.tensors.items()}
            minus = {k: v.copy() for k, v in params.tensors.items()}
            plus[name].reshape(-1)[i] += eps
            minus[name].reshape(-1)[i] -= eps
            up = ToyVaeParams(plus, params.vocab_size, params.hidden_width)
            down = ToyVaeParams(minus, params.vocab_size, params.hidden_width)
            lp, _, _ = loss_and_grads(up, segments, config, quantize=quantize)
            lm, _, _ = loss_and_grads(down, segments, config, quantize=quantize)
            grad.reshape(-1)[i] = (lp - lm) / (2 * eps)
        grads[name] = grad
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        diff = np.abs(analytic[name] - numeric[name])
        denom = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(numeric[name])), 1e-6)
        worst = max(worst, float((diff / denom).max()))
    return worst


class TestConfig:
    def test_downsample_factor_pinned(self):
        with pytest.raises(VaeError):
            ToyVaeConfig(downsample_layers=2)

    def test_zero_entropy_weight_allowed(self):
        ToyVaeConfig(lambda_entropy=0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(VaeError):
            ToyVaeConfig(lambda_commit=-1.0)


class TestShapes:
    def test_single_segment(self, rng):
        params = init_params(SMALL)
        z = encode(params, rng.normal(size=(8, FRAME_DIM)))
        assert z.shape == (1, SMALL.num_dims)

    def test_max_length_pads_to_38_segments(self, rng):
        params = init_params(SMALL)
        z = encode(params, rng.normal(size=(300, FRAME_DIM)))
        assert z.shape == (38, SMALL.num_dims)

    def test_zero_params_give_zero_latents(self, rng):
        params = init_params(SMALL)
        tensors = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        tensors["in_scale"] = np.ones(FRAME_DIM)
        zeroed = ToyVaeParams(tensors, SMALL.vocab_size, SMALL.hidden_width)
        z = encode(zeroed, rng.normal(size=(16, FRAME_DIM)))
        np.testing.assert_array_equal(z, 0.0)

    def test_decode_one_code_gives_eight_frames(self):
        params = init_params(SMALL)
        frames = decode(params, np.ones((1, SMALL.num_dims)))
        assert frames.shape == (8, FRAME_DIM)

    def test_zero_decoder_gives_zero_frames(self):
        params = init_params(SMALL)
        tensors = dict(params.tensors)
        for name in ("dec_w", "dec_b", "up3_w", "up3_b", "up2_w", "up2_b", "up1_w", "up1_b"):
            tensors[name] = np.zeros_like(tensors[name])
        zeroed = ToyVaeParams(tensors, SMALL.vocab_size, SMALL.hidden_width)
        np.testing.assert_array_equal(decode(zeroed, np.ones((2, SMALL.num_dims))), 0.0)

    def test_padding_repeats_final_frame(self, rng):
        frames = rng.normal(size=(45, FRAME_DIM))
        padded = pad_frames(frames)
        assert padded.shape == (48, FRAME_DIM)
        for row in range(45, 48):
            np.testing.assert_array_equal(padded[row], frames[44])

    def test_segment_count_is_ceil(self, rng):
        assert segment_frames(rng.normal(size=(17, FRAME_DIM))).shape[0] == 3


class TestGradients:
    def test_identity_bottleneck_matches_finite_differences(self, rng):
        segments = small_batch(rng)
        params = init_params(SMALL)
        _, _, analytic = loss_and_grads(params, segments, SMALL, quantize=False)
        numeric = finite_difference_grads(params, segments, SMALL, quantize=False)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_decoder_grads_match_fd_with_quantization_on(self, rng):
        # the decoder side sees a locally constant code, so true finite
        # differences of the quantized loss apply to its parameters
        segments = small_batch(rng)
        params = init_params(SMALL)
        _, _, analytic = loss_and_grads(params, segments, SMALL, quantize=True)
        numeric = finite_difference_grads(params, segments, SMALL, quantize=True)
        decoder = ("dec_w", "dec_b", "up3_w", "up3_b", "up2_w", "up2_b", "up1_w", "up1_b")
        worst = max_relative_error({k: analytic[k] for k in decoder},
                                   {k: numeric[k] for k in decoder})
        assert worst < 1e-4

    def test_straight_through_contract_on_encoder(self, rng):
        # encoder gradients of the quantized reconstruction must equal finite
        # differences of the surrogate where the code offset (bits - z) is
        # frozen at its base value
        segments = small_batch(rng)
        config = dataclasses.replace(SMALL, lambda_commit=0.0, lambda_entropy=0.0)
        params = init_params(config)
        _, _, analytic = loss_and_grads(params, segments, config, quantize=True)

        frames = segments.reshape(-1, FRAME_DIM)
        z0 = encode(params, frames)
        shift = np.where(z0 > 0.0, 1.0, -1.0) - z0

        def surrogate(tensors):
            p = ToyVaeParams(tensors, config.vocab_size, config.hidden_width)
            y = decode(p, encode(p, frames) + shift)
            resid = y - frames
            return float((resid * resid).sum() / frames.size)

        eps = 1e-6
        encoder = ("enc1_w", "enc1_b", "enc2_w", "enc2_b", "enc3_w", "enc3_b", "lat_w", "lat_b")
        for name in encoder:
            numeric = np.zeros_like(params.tensors[name])
            for i in range(numeric.size):
                plus = {k: v.copy() for k, v in params.tensors.items()}
                minus = {k: v.copy() for k, v in params.tensors.items()}
                plus[name].reshape(-1)[i] += eps
                minus[name].reshape(-1)[i] -= eps
                numeric.reshape(-1)[i] = (surrogate(plus) - surrogate(minus)) / (2 * eps)
            diff = np.abs(analytic[name] - numeric)
            denom = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(numeric)), 1e-6)
            assert float((diff / denom).max()) < 1e-4


class TestTraining:
    def test_constant_dataset_reconstructs(self, rng):
        pose = rng.normal(0.0, 0.4, size=FRAME_DIM)
        frames = np.tile(pose, (32, 1))
        config = ToyVaeConfig(vocab_size=64, hidden_width=16, lambda_commit=1e-2,
                              lambda_entropy=0.0, learning_rate=0.5, epochs=200, seed=0)
        params, history = train(config, [frames])
        assert reconstruction_mse(params, frames) < 1e-3
        assert history[-1]["total"] <= history[0]["total"]

    def test_entropy_term_raises_usage_entropy(self):
        dataset = make_corpus(1, 96, seed=5)
        base = ToyVaeConfig(vocab_size=64, hidden_width=16, lambda_commit=1e-2,
                            lambda_entropy=0.0, learning_rate=0.3, epochs=150, seed=7)
        with_entropy = dataclasses.replace(base, lambda_entropy=1e-4)
        params_plain, _ = train(base, dataset)
        params_ent, _ = train(with_entropy, dataset)
        cb = LfqCodebook.from_vocab_size(64)
        tokens_plain = tokenize_frames(params_plain, dataset[0].frames)
        tokens_ent = tokenize_frames(params_ent, dataset[0].frames)
        _, ent_plain = codebook_utilization(tokens_plain, cb)
        _, ent_ent = codebook_utilization(tokens_ent, cb)
        assert ent_ent > ent_plain

    def test_bit_reproducible(self):
        dataset = make_corpus(2, 48, seed=2)
        config = dataclasses.replace(SMALL, epochs=20)
        params_a, hist_a = train(config, dataset)
        params_b, hist_b = train(config, dataset)
        for name in params_a.tensors:
            np.testing.assert_array_equal(params_a.tensors[name], params_b.tensors[name])
        assert hist_a == hist_b

    def test_recon_loss_matches_loop_oracle(self, rng):
        segments = small_batch(rng, segments=3)
        params = init_params(SMALL)
        _, parts, _ = loss_and_grads(params, segments, SMALL, quantize=True)
        z = encode(params, segments.reshape(-1, FRAME_DIM))
        bits = np.where(z > 0.0, 1.0, -1.0)
        recon = decode(params, bits).reshape(segments.shape)
        total = 0.0
        count = 0
        for s in range(segments.shape[0]):
            for t in range(SEGMENT_LEN):
                for c in range(FRAME_DIM):
                    total += (segments[s, t, c] - recon[s, t, c]) ** 2
                    count += 1
        assert abs(parts["recon"] - total / count) < 1e-10

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_raises(self):
        dataset = make_corpus(1, 32, seed=0)
        config = ToyVaeConfig(vocab_size=16, hidden_width=8, learning_rate=1e12,
                              epochs=50, seed=0)
        with pytest.raises(TrainingDiverged):
            train(config, dataset)

    def test_empty_dataset_rejected(self):
        with pytest.raises(VaeError):
            dataset_segments([])

    def test_reconstruct_round_trip_shapes(self, rng):
        params = init_params(SMALL)
        recon, tokens = reconstruct(params, rng.normal(size=(20, FRAME_DIM)))
        assert recon.shape == (24, FRAME_DIM)
        assert tokens.shape == (3,)
        assert np.all((tokens >= 0) & (tokens < SMALL.vocab_size))
