import numpy as np
import pytest

from config.settings import StdpConfig
from services.data_pipeline import MnistImage, build_subset
from services.encodings import EncodingTable, similarity_report
from services.spike_codec import RateCodingParams, SpikeTrain, adaptive_encode
from services.stdp_encoder import (
    StdpNetworkState, encode_image, encode_images, image_stream, load_network, normalize_columns, rest,
    save_network, simulate_presentation, stdp_step, train_unsupervised,
)
from utils.exceptions import EncodingFailureError, ImmutabilityError

def silent_train(n_steps: int) -> SpikeTrain:
    return SpikeTrain(counts=np.zeros(784, dtype=np.int64), total=0, effective_k=2.0,
                      delta_t=n_steps * 0.001, times=[np.zeros(0)] * 784)

def small_network(n_exc=4, seed=0, **overrides) -> StdpNetworkState:
    return StdpNetworkState.initial(StdpConfig(n_exc=n_exc, **overrides), np.random.default_rng(seed))

def one_step_train(count: int) -> SpikeTrain:
    return SpikeTrain(counts=np.array([count]), total=count, effective_k=2.0, delta_t=0.001,
                      times=[np.zeros(count)])

def test_hand_stepped_trace_stdp():
    cfg = StdpConfig(n_input=1, n_exc=1, column_sum=0.5)
    state = StdpNetworkState.at_rest(cfg, np.array([[0.5]]), np.zeros(1))
    decay = np.exp(-1.0 / 20.0)

    stdp_step(state, np.array([True]), np.array([False]))
    assert state.weights[0, 0] == 0.5
    assert state.x_pre[0] == 1.0

    stdp_step(state, np.array([False]), np.array([True]))
    w = 0.5 + 0.01 * decay * (1.0 - 0.5)
    assert state.weights[0, 0] == pytest.approx(w, rel=1e-12)
    assert state.x_post[0] == 1.0

    stdp_step(state, np.array([True]), np.array([False]))
    w -= 0.0001 * decay * w
    assert state.weights[0, 0] == pytest.approx(w, rel=1e-12)
    assert state.x_pre[0] == 1.0

def test_weights_stay_bounded_under_aggressive_learning(rng):
    cfg = StdpConfig(n_input=5, n_exc=3, column_sum=1.0, eta_post=3.0, eta_pre=3.0)
    state = StdpNetworkState.initial(cfg, rng)
    for _ in range(300):
        stdp_step(state, rng.random(5) < 0.5, rng.random(3) < 0.5)
        assert state.weights.min() >= 0.0
        assert state.weights.max() <= cfg.w_max

def test_normalization_pins_and_redistributes():
    w = np.array([[0.9, 0.0], [0.1, 0.0], [0.1, 0.0], [0.1, 0.0]])
    out = normalize_columns(w, column_sum=2.5, w_max=1.0)
    np.testing.assert_allclose(out[:, 0], [1.0, 0.5, 0.5, 0.5])
    np.testing.assert_allclose(out[:, 1], [0.625] * 4)

def test_normalization_hits_the_column_sum(rng):
    out = normalize_columns(rng.uniform(0.003, 0.303, size=(784, 6)), 78.4, 1.0)
    np.testing.assert_allclose(out.sum(axis=0), 78.4)
    assert out.max() <= 1.0

def test_inhibition_reaches_only_the_other_neurons():
    state = small_network(n_exc=2)
    state.pending_inhibition = np.array([True, False])
    state, vector = simulate_presentation(state, silent_train(1), learning=False)
    assert state.v_exc[0] == pytest.approx(-65.0)
    assert state.v_exc[1] == pytest.approx(-65.0 - 17.0)
    assert vector.counts.sum() == 0

def test_hand_stepped_membrane_trace():
    cfg = StdpConfig(n_input=1, n_exc=1)
    state = StdpNetworkState.at_rest(cfg, np.array([[0.25]]), np.zeros(1))
    decay = np.exp(-1.0 / 100.0)
    v = -65.0
    for step in range(20):
        count = 1 if step % 5 == 0 else 0
        state, vector = simulate_presentation(state, one_step_train(count), learning=False)
        v = -65.0 + (v + 65.0) * decay
        if count:
            v += 8.0 * 0.25
        assert state.v_exc[0] == pytest.approx(v, rel=1e-12)
        assert vector.counts[0] == 0
    assert state.v_inh[0] == -60.0
    assert state.theta[0] == 0.0

def test_silent_window_only_relaxes_toward_rest():
    state = small_network(n_exc=2)
    weights = state.weights.copy()
    state.v_exc[:] = [-55.0, -70.0]
    state.theta[:] = [0.2, 0.0]
    state, vector = simulate_presentation(state, silent_train(50), learning=False)
    assert vector.counts.sum() == 0
    np.testing.assert_allclose(state.v_exc, -65.0 + np.array([10.0, -5.0]) * np.exp(-0.5), rtol=1e-12)
    np.testing.assert_array_equal(state.theta, [0.2, 0.0])
    np.testing.assert_array_equal(state.weights, weights)

def test_refractory_neuron_waits_before_spiking():
    state = small_network(n_exc=1)
    state.v_exc[:] = -50.0
    state.refractory_exc[:] = 3
    state, vector = simulate_presentation(state, silent_train(3), learning=False)
    assert vector.counts[0] == 0
    assert state.v_exc[0] == -50.0
    state, vector = simulate_presentation(state, silent_train(1), learning=False)
    assert vector.counts[0] == 1
    assert state.v_exc[0] == -60.0
    assert state.refractory_exc[0] == 5

def test_rest_relaxes_in_closed_form():
    state = small_network(n_exc=2)
    state.v_exc[:] = [-55.0, -70.0]
    rest(state, 150.0, learning=False)
    np.testing.assert_allclose(state.v_exc, -65.0 + np.array([10.0, -5.0]) * np.exp(-1.5))

def test_homeostasis_raises_thresholds_of_spiking_neurons(rng):
    state = small_network(n_exc=6)
    image = MnistImage(pixels=np.ones(784), label=1, index=0)
    train = adaptive_encode(image, RateCodingParams(), rng, with_times=True)
    state, vector = simulate_presentation(state, train, learning=True)
    fired = vector.counts > 0
    assert fired.any()
    assert np.all(state.theta[fired] > 0)
    assert np.all(state.theta[~fired] == 0)
    assert np.all(state.theta >= 0)

def test_frozen_network_is_pure(images):
    state = small_network(n_exc=5).freeze()
    checksum = state.checksum()
    codec = RateCodingParams()
    first = encode_image(state, images[0], codec, image_stream(1, images[0]))
    second = encode_image(state, images[0], codec, image_stream(1, images[0]))
    np.testing.assert_array_equal(first.counts, second.counts)
    assert state.checksum() == checksum
    with pytest.raises(ImmutabilityError):
        simulate_presentation(state, silent_train(1), learning=True)
    with pytest.raises(ImmutabilityError):
        stdp_step(state, np.zeros(784, dtype=bool), np.zeros(5, dtype=bool))

def test_blank_image_propagates_codec_failure(blank_image):
    with pytest.raises(EncodingFailureError):
        encode_image(small_network().freeze(), blank_image, RateCodingParams(), np.random.default_rng(0))

def test_zero_epochs_returns_the_initial_network(images):
    subset = build_subset(images, 2, seed=1)
    cfg = StdpConfig(n_exc=4)
    trained = train_unsupervised(subset, 0, cfg, RateCodingParams(), np.random.default_rng(5))
    initial = StdpNetworkState.initial(cfg, np.random.default_rng(5))
    assert trained.checksum() == initial.checksum()

def test_training_keeps_weights_bounded_and_normalized(images):
    subset = build_subset(images, 2, seed=1)
    cfg = StdpConfig(n_exc=8, input_gain_mv=40.0)
    state = train_unsupervised(subset, 1, cfg, RateCodingParams(), np.random.default_rng(3))
    assert state.weights.min() >= 0.0 and state.weights.max() <= cfg.w_max
    np.testing.assert_allclose(state.weights.sum(axis=0), cfg.column_sum)
    assert np.all(state.theta >= 0) and state.theta.max() > 0

def test_parallel_encoding_matches_sequential(images):
    state = small_network(n_exc=4)
    codec = RateCodingParams()
    sequential = encode_images(state, images[:4], codec, seed=2, workers=1)
    parallel = encode_images(state, images[:4], codec, seed=2, workers=2)
    for a, b in zip(sequential, parallel):
        assert a.image_index == b.image_index
        np.testing.assert_array_equal(a.counts, b.counts)

def test_checkpoint_loads_frozen(tmp_path):
    state = small_network(n_exc=3)
    state.theta[:] = [0.1, 0.0, 0.3]
    loaded = load_network(save_network(state, tmp_path / "stdp.ckpt", {"seed": 1}))
    assert loaded.frozen
    assert loaded.checksum() == state.checksum()
    assert loaded.config.n_exc == 3

def test_one_epoch_separates_the_classes(images):
    subset = build_subset(images, 20, seed=1)
    codec = RateCodingParams()
    state = train_unsupervised(subset, 1, StdpConfig(), codec, np.random.default_rng(1))
    vectors = encode_images(state, subset.images, codec, seed=1)
    report = similarity_report(EncodingTable.from_vectors("snn_classifier", vectors))
    assert report.n_zero < len(vectors)
    assert report.gap > 0
