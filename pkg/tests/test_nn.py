"""Unit tests for the neural kernel: layers, ADAM, training loop, weights file."""

import numpy as np
import pytest

from hydrobid import nn


def _zero_gru(d_in, d_out, out_activation="identity"):
    z = lambda *s: np.zeros(s)
    return nn.GruLayer(z(d_out, d_in), z(d_out, d_in), z(d_out, d_in),
                       z(d_out, d_out), z(d_out, d_out), z(d_out, d_out),
                       z(d_out), z(d_out), z(d_out), out_activation)


# ---- mse -------------------------------------------------------------------

def test_mse_zero_on_equal():
    assert nn.mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0


def test_mse_is_mean_over_all_elements():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.array([[0.0, 0.0], [0.0, 0.0]])
    assert nn.mse_loss(pred, target) == pytest.approx((1 + 4 + 9 + 16) / 4)


def test_mse_shape_mismatch_raises():
    with pytest.raises(nn.NeuralError):
        nn.mse_loss(np.zeros(3), np.zeros(4))


def test_mse_matches_reversed_order_summation():
    rng = np.random.default_rng(100)
    pred = rng.normal(0, 1, (7, 3))
    target = rng.normal(0, 1, (7, 3))
    sq = [(p - t) ** 2 for p, t in zip(pred.ravel(), target.ravel())]
    by_hand = sum(reversed(sq)) / len(sq)
    assert nn.mse_loss(pred, target) == pytest.approx(by_hand, abs=1e-12)


# ---- layers ----------------------------------------------------------------

def test_dense_forward_values():
    layer = nn.DenseLayer(np.array([[2.0, 0.0], [0.0, -1.0]]),
                          np.array([1.0, 1.0]), "relu")
    y, _ = layer.step(np.array([3.0, 5.0]), train=False)
    assert np.allclose(y, [7.0, 0.0])


def test_dense_identity_map():
    chain = nn.NetworkChain([nn.DenseLayer(np.eye(2), np.zeros(2), "identity")])
    assert np.array_equal(nn.forward(chain, np.array([3.0, -2.0])), [3.0, -2.0])


def test_dense_relu_clamps_negatives():
    chain = nn.NetworkChain([nn.DenseLayer(np.eye(2), np.zeros(2), "relu")])
    assert np.array_equal(nn.forward(chain, np.array([-1.0, 2.0])), [0.0, 2.0])


def test_dense_rejects_bad_activation():
    with pytest.raises(nn.NeuralError):
        nn.DenseLayer(np.zeros((1, 1)), np.zeros(1), "tanh")


def test_dense_chain_gradient_closed_form():
    # single identity-activation dense layer: dL/dW = gy x^T, dL/db = gy
    rng = np.random.default_rng(101)
    layer = nn.xavier_dense(rng, 3, 2, "identity")
    chain = nn.NetworkChain([layer])
    x = rng.normal(0, 1, 3)
    gy = rng.normal(0, 1, 2)
    nn.forward(chain, x, "train")
    nn.backward(chain, [gy])
    assert np.allclose(layer.gW, np.outer(gy, x), atol=1e-14)
    assert np.allclose(layer.gb, gy, atol=1e-14)


def test_zero_loss_gradient_gives_zero_parameter_gradients():
    rng = np.random.default_rng(102)
    chain = nn.NetworkChain([nn.orthogonal_gru(rng, 2, 3),
                             nn.xavier_dense(rng, 3, 2, "relu")])
    nn.forward(chain, np.ones(2), "train")
    nn.forward(chain, -np.ones(2), "train")
    nn.backward(chain, [np.zeros(2), np.zeros(2)])
    assert all(np.all(g == 0.0) for g in chain.grads())


def test_zero_weight_gru_outputs_zero():
    layer = _zero_gru(3, 4)
    x = np.ones(3)
    for _ in range(5):
        y, _ = layer.step(x, train=False)
        assert np.allclose(y, 0.0)
    assert np.allclose(layer.h, 0.0)


def test_gru_hidden_state_stays_bounded():
    # h is a convex combination of the previous state and tanh output, so
    # from a zero start every coordinate stays inside (-1, 1) forever.
    rng = np.random.default_rng(11)
    big = lambda *s: rng.normal(0.0, 3.0, s)
    layer = nn.GruLayer(big(4, 2), big(4, 2), big(4, 2),
                        big(4, 4), big(4, 4), big(4, 4),
                        big(4), big(4), big(4))
    for _ in range(200):
        layer.step(rng.normal(0.0, 5.0, 2), train=False)
        assert np.max(np.abs(layer.h)) <= 1.0  # tanh saturates to 1.0 exactly


def test_reset_state_zeroes_memory_and_tape():
    rng = np.random.default_rng(12)
    chain = nn.NetworkChain([nn.orthogonal_gru(rng, 2, 3)])
    x = np.array([1.0, -1.0])
    y1 = nn.forward(chain, x, "train")
    nn.forward(chain, x, "train")
    nn.reset_state(chain)
    assert np.allclose(chain.layers[0].h, 0.0)
    assert np.array_equal(nn.forward(chain, x, "eval"), y1)
    nn.reset_state(chain)
    with pytest.raises(nn.NeuralError):
        nn.backward(chain, [np.zeros(3)])


def test_reset_between_interleaved_sequences_matches_fresh_chains():
    rng = np.random.default_rng(103)
    seqs = [rng.normal(0, 1, (3, 2)), rng.normal(0, 1, (3, 2))]

    def make_chain():
        r = np.random.default_rng(104)
        return nn.NetworkChain([nn.orthogonal_gru(r, 2, 4),
                                nn.xavier_dense(r, 4, 1, "identity")])

    shared = make_chain()
    interleaved = []
    for seq in seqs:
        nn.reset_state(shared)
        interleaved.append([nn.forward(shared, x) for x in seq])
    for seq, outs in zip(seqs, interleaved):
        fresh = make_chain()
        expect = [nn.forward(fresh, x) for x in seq]
        for a, b in zip(outs, expect):
            assert np.array_equal(a, b)


def test_eval_mode_is_pure_without_gru():
    rng = np.random.default_rng(105)
    chain = nn.NetworkChain([nn.xavier_dense(rng, 2, 4, "relu"),
                             nn.DropoutLayer(0.5),
                             nn.xavier_dense(rng, 4, 1, "identity")])
    x = np.array([0.4, -1.2])
    outs = [nn.forward(chain, x, "eval") for _ in range(5)]
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])


def test_gru_hidden_norm_bound():
    # from a zero start the state norm can never exceed sqrt(hidden)
    rng = np.random.default_rng(106)
    layer = nn.orthogonal_gru(rng, 2, 9)
    for _ in range(50):
        layer.step(rng.normal(0.0, 10.0, 2), train=False)
        assert np.linalg.norm(layer.h) <= np.sqrt(9.0)


def test_forward_rejects_unknown_mode():
    chain = nn.NetworkChain([nn.DenseLayer(np.eye(2), np.zeros(2))])
    with pytest.raises(nn.NeuralError):
        nn.forward(chain, np.zeros(2), "predict")


def test_eval_mode_records_no_tape():
    chain = nn.NetworkChain([nn.DenseLayer(np.eye(2), np.zeros(2))])
    nn.forward(chain, np.ones(2), "eval")
    with pytest.raises(nn.NeuralError):
        nn.backward(chain, [np.ones(2)])


def test_backward_gradient_count_must_match_tape():
    chain = nn.NetworkChain([nn.DenseLayer(np.eye(2), np.zeros(2))])
    nn.forward(chain, np.ones(2), "train")
    with pytest.raises(nn.NeuralError):
        nn.backward(chain, [np.ones(2), np.ones(2)])


# ---- dropout ---------------------------------------------------------------

def test_dropout_eval_is_identity():
    layer = nn.DropoutLayer(0.7)
    x = np.linspace(-1, 1, 9)
    y, _ = layer.step(x, train=False)
    assert np.array_equal(y, x)


def test_dropout_rate_zero_is_identity_in_train():
    layer = nn.DropoutLayer(0.0)
    x = np.linspace(-1, 1, 9)
    y, _ = layer.step(x, train=True)
    assert np.array_equal(y, x)


def test_dropout_train_statistics():
    layer = nn.DropoutLayer(0.4, np.random.default_rng(13))
    x = np.ones(100_000)
    y, _ = layer.step(x, train=True)
    dropped = np.mean(y == 0.0)
    assert dropped == pytest.approx(0.4, abs=0.01)
    # inverted scaling keeps the expectation: surviving entries are 1/(1-rate)
    assert np.mean(y) == pytest.approx(1.0, abs=0.01)
    assert np.allclose(y[y != 0.0], 1.0 / 0.6)


def test_dropout_invalid_rate_raises():
    with pytest.raises(nn.NeuralError):
        nn.DropoutLayer(1.0)
    with pytest.raises(nn.NeuralError):
        nn.DropoutLayer(-0.1)


def test_set_rng_reaches_every_dropout_layer():
    chain = nn.NetworkChain([
        nn.DropoutLayer(0.5), nn.DenseLayer(np.eye(2), np.zeros(2)),
        nn.DropoutLayer(0.5),
    ])
    rng = np.random.default_rng(14)
    chain.set_rng(rng)
    assert chain.layers[0].rng is rng
    assert chain.layers[2].rng is rng


# ---- ADAM ------------------------------------------------------------------

def test_adam_first_step_frozen_value():
    # unit gradient, default settings: -lr * 1 / sqrt(1 + eps)
    chain = nn.NetworkChain([nn.DenseLayer(np.array([[1.0]]), np.array([0.0]))])
    state = nn.AdamState.for_chain(chain)
    chain.layers[0].gW[0, 0] = 1.0
    nn.adam_update(chain, state)
    delta = chain.layers[0].W[0, 0] - 1.0
    assert delta == pytest.approx(-1e-3 / np.sqrt(1.0 + 1e-8), abs=1e-15)
    assert delta == pytest.approx(-9.99999995e-4, abs=1e-12)


def test_adam_epsilon_sits_inside_the_root():
    # small gradient separates the two placements: with g = 1e-4 the update
    # is lr*g/sqrt(g^2 + eps), not lr*g/(sqrt(g^2) + eps)
    chain = nn.NetworkChain([nn.DenseLayer(np.array([[1.0]]), np.array([0.0]))])
    state = nn.AdamState.for_chain(chain)
    chain.layers[0].gW[0, 0] = 1e-4
    nn.adam_update(chain, state)
    delta = chain.layers[0].W[0, 0] - 1.0
    assert delta == pytest.approx(-1e-3 * 1e-4 / np.sqrt(1e-8 + 1e-8), rel=1e-12)


def test_adam_second_step_bias_correction():
    chain = nn.NetworkChain([nn.DenseLayer(np.array([[1.0]]), np.array([0.0]))])
    state = nn.AdamState.for_chain(chain)
    w0 = 1.0
    m = v = 0.0
    for t in (1, 2):
        g = 1.0
        chain.layers[0].gW[0, 0] = g
        nn.adam_update(chain, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w0 -= 1e-3 * (m / (1 - 0.9 ** t)) / np.sqrt(v / (1 - 0.999 ** t) + 1e-8)
    assert chain.layers[0].W[0, 0] == pytest.approx(w0, abs=1e-15)
    assert state.t == 2


def test_adam_update_clears_gradients():
    chain = nn.NetworkChain([nn.DenseLayer(np.ones((2, 2)), np.zeros(2))])
    state = nn.AdamState.for_chain(chain)
    chain.layers[0].gW[...] = 3.0
    nn.adam_update(chain, state)
    assert np.all(chain.layers[0].gW == 0.0)


def test_adam_zero_gradient_leaves_parameters_unchanged():
    chain = nn.NetworkChain([nn.DenseLayer(np.full((2, 2), 0.7), np.ones(2))])
    state = nn.AdamState.for_chain(chain)
    nn.adam_update(chain, state)
    assert np.array_equal(chain.layers[0].W, np.full((2, 2), 0.7))
    assert np.array_equal(chain.layers[0].b, np.ones(2))


def test_adam_identical_gradients_give_identical_updates():
    chain = nn.NetworkChain([nn.DenseLayer(np.array([[1.0]]), np.array([1.0]))])
    state = nn.AdamState.for_chain(chain)
    chain.layers[0].gW[...] = 2.5
    chain.layers[0].gb[...] = 2.5
    nn.adam_update(chain, state)
    assert chain.layers[0].W[0, 0] == chain.layers[0].b[0]


# ---- initializers ----------------------------------------------------------

def test_xavier_dense_bounds_and_zero_bias():
    rng = np.random.default_rng(15)
    layer = nn.xavier_dense(rng, 30, 20, "relu")
    lim = np.sqrt(6.0 / 50.0)
    assert np.max(np.abs(layer.W)) <= lim
    assert np.all(layer.b == 0.0)
    assert layer.activation == "relu"


def test_orthogonal_gru_recurrent_matrices():
    rng = np.random.default_rng(16)
    layer = nn.orthogonal_gru(rng, 3, 8)
    for U in (layer.Uz, layer.Ur, layer.Uh):
        assert np.allclose(U @ U.T, np.eye(8), atol=1e-10)
    for W in (layer.Wz, layer.Wr, layer.Wh):
        assert np.allclose(W.T @ W, np.eye(3), atol=1e-10)
    for b in (layer.bz, layer.br, layer.bh):
        assert np.all(b == 0.0)


# ---- training --------------------------------------------------------------

def _toy_dataset(rng, n_chunks, T, d_in, target_value):
    chunks = []
    for _ in range(n_chunks):
        x = rng.normal(0.0, 1.0, (T, d_in))
        y = np.full((T, 1), target_value)
        chunks.append(nn.TrainingChunk(x, y))
    return chunks


def _toy_chain(rng):
    return nn.NetworkChain([
        nn.xavier_dense(rng, 2, 8, "relu"),
        nn.xavier_dense(rng, 8, 1, "identity"),
    ])


def test_training_reaches_constant_target():
    rng = np.random.default_rng(17)
    chain = _toy_chain(rng)
    data = _toy_dataset(rng, 12, 2, 2, 0.7)
    opts = nn.TrainOptions(epochs=200, seed=5, val_fraction=0.0)
    report = nn.train(chain, data, opts)
    losses = np.array(report.train_losses)
    assert losses[-1] < 1e-3
    # quadratic-in-the-limit objective: epoch averages slide downhill
    assert np.all(np.diff(losses) <= np.maximum(1e-8, 0.05 * losses[:-1]))


def test_training_is_deterministic():
    results = []
    for _ in range(2):
        rng = np.random.default_rng(18)
        chain = _toy_chain(rng)
        data = _toy_dataset(rng, 8, 2, 2, 0.3)
        report = nn.train(chain, data, nn.TrainOptions(epochs=20, seed=7))
        results.append((report.train_losses, report.val_points,
                        [p.copy() for p in chain.params()]))
    assert results[0][0] == results[1][0]
    assert results[0][1] == results[1][1]
    for a, b in zip(results[0][2], results[1][2]):
        assert np.array_equal(a, b)


def test_validation_split_sizes():
    rng = np.random.default_rng(19)
    chain = _toy_chain(rng)
    data = _toy_dataset(rng, 10, 1, 2, 0.0)
    report = nn.train(chain, data, nn.TrainOptions(epochs=5, seed=1))
    assert report.n_train == 9
    assert report.n_val == 1
    assert [e for e, _ in report.val_points] == [0, 5]


def test_early_stopping_on_validation_increase():
    rng = np.random.default_rng(20)
    chain = _toy_chain(rng)
    x = rng.normal(0.0, 1.0, (1, 2))
    train_chunks = [nn.TrainingChunk(x.copy(), np.full((1, 1), 0.5))
                    for _ in range(6)]
    val_chunks = [nn.TrainingChunk(x.copy(), np.full((1, 1), -5.0))]
    opts = nn.TrainOptions(epochs=100, seed=2)
    report = nn.train(chain, train_chunks, opts, val_chunks=val_chunks)
    assert report.stopped_epoch is not None
    assert report.epochs_run < 100
    assert report.epochs_run == report.stopped_epoch
    # validation rose between the last two checkpoints while training fell
    (e0, v0), (e1, v1) = report.val_points[-2:]
    assert v1 > v0 * 1.001
    prev_train = np.inf if e0 == 0 else report.train_losses[e0 - 1]
    assert report.train_losses[e1 - 1] < prev_train


def test_no_early_stop_when_validation_equals_training():
    rng = np.random.default_rng(27)
    chain = _toy_chain(rng)
    chunks = _toy_dataset(rng, 6, 1, 2, 0.4)
    report = nn.train(chain, chunks, nn.TrainOptions(epochs=30, seed=6),
                      val_chunks=chunks)
    assert report.stopped_epoch is None
    assert report.epochs_run == 30


def test_pair_training_updates_both_chains():
    # chunks carry a one-shot initializer example plus a generator sequence
    rng = np.random.default_rng(28)
    init = nn.NetworkChain([nn.xavier_dense(rng, 2, 6, "relu"),
                            nn.xavier_dense(rng, 6, 1, "identity")])
    gen = nn.NetworkChain([nn.orthogonal_gru(rng, 2, 6),
                           nn.xavier_dense(rng, 6, 1, "identity")])
    before = [p.copy() for p in init.params() + gen.params()]
    chunks = []
    for _ in range(8):
        xs = rng.normal(0.0, 1.0, (4, 2))
        ys = np.full((4, 1), 0.6)
        chunks.append(nn.TrainingChunk(xs, ys,
                                       init_input=rng.normal(0.0, 1.0, 2),
                                       init_target=np.array([0.6])))
    report = nn.train((init, gen), chunks,
                      nn.TrainOptions(epochs=150, seed=8, val_fraction=0.0))
    after = init.params() + gen.params()
    assert any(not np.array_equal(a, b) for a, b in zip(before, after))
    assert report.train_losses[-1] < report.train_losses[0] / 5
    assert report.train_losses[-1] < 2e-2


def test_training_divergence_raises():
    rng = np.random.default_rng(21)
    chain = _toy_chain(rng)
    data = [nn.TrainingChunk(np.ones((1, 2)), np.full((1, 1), 1e200))]
    with pytest.raises(nn.TrainingDivergedError):
        nn.train(chain, data, nn.TrainOptions(epochs=3, seed=3, val_fraction=0.0))


def test_single_step_chunks_train():
    rng = np.random.default_rng(22)
    chain = _toy_chain(rng)
    data = _toy_dataset(rng, 6, 1, 2, 0.25)
    report = nn.train(chain, data, nn.TrainOptions(epochs=40, seed=4,
                                                   val_fraction=0.0))
    assert report.train_losses[-1] < report.train_losses[0]


def test_report_csv_layout():
    report = nn.TrainingReport(train_losses=[0.5, 0.25, 0.125],
                               val_points=[(2, 0.375)], epochs_run=3)
    lines = report.to_csv().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss"
    assert len(lines) == 4
    assert lines[1] == "1,0.5,"
    assert lines[2] == "2,0.25,0.375"


# ---- weights file ----------------------------------------------------------

def _mixed_chains(rng):
    return {
        "alpha": nn.NetworkChain([
            nn.xavier_dense(rng, 3, 5, "relu"),
            nn.DropoutLayer(0.4),
            nn.xavier_dense(rng, 5, 2, "identity"),
        ]),
        "beta": nn.NetworkChain([
            nn.orthogonal_gru(rng, 2, 4, "relu"),
            nn.xavier_dense(rng, 4, 1, "identity"),
        ]),
    }


def test_weights_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(23)
    chains = _mixed_chains(rng)
    path = tmp_path / "w.bin"
    nn.save_weights(path, chains)
    loaded = nn.load_weights(path)
    assert set(loaded) == {"alpha", "beta"}
    for name, chain in chains.items():
        other = loaded[name]
        assert len(other.layers) == len(chain.layers)
        for a, b in zip(chain.layers, other.layers):
            assert type(a) is type(b)
            if isinstance(a, nn.DropoutLayer):
                assert b.rate == a.rate
                continue
            for pa, pb in zip(a.params(), b.params()):
                assert pa.tobytes() == pb.tobytes()
        if isinstance(chain.layers[0], nn.DenseLayer):
            assert loaded[name].layers[0].activation == chain.layers[0].activation
    path2 = tmp_path / "w2.bin"
    nn.save_weights(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_weights_corrupt_magic_rejected(tmp_path):
    rng = np.random.default_rng(24)
    path = tmp_path / "w.bin"
    nn.save_weights(path, _mixed_chains(rng))
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(nn.NeuralError, match="magic"):
        nn.load_weights(path)


def test_weights_unknown_version_rejected(tmp_path):
    rng = np.random.default_rng(25)
    path = tmp_path / "w.bin"
    nn.save_weights(path, _mixed_chains(rng))
    raw = bytearray(path.read_bytes())
    raw[4] = 0xFE
    path.write_bytes(bytes(raw))
    with pytest.raises(nn.NeuralError, match="version"):
        nn.load_weights(path)


def test_loaded_chain_runs_forward():
    rng = np.random.default_rng(26)
    chain = nn.NetworkChain([nn.orthogonal_gru(rng, 2, 3)])
    import tempfile, os
    fd, path = tempfile.mkstemp()
    os.close(fd)
    try:
        nn.save_weights(path, {"m": chain})
        loaded = nn.load_weights(path)["m"]
        x = np.array([0.5, -0.5])
        assert np.array_equal(nn.forward(loaded, x), nn.forward(chain, x))
    finally:
        os.unlink(path)
