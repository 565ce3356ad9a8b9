import math

import numpy as np
import pytest

from batlab import tensor as T
from batlab.errors import ConfigError, UsageError
from batlab.model import Model, ModelConfig, collate, init_params
from batlab.params import Adam
from batlab.tensor import Tensor, backward
from oracles import central_difference, max_relative_error
from toys import ae_example, asc_example, random_batch, tiny


def _params64(params):
    for t in params.values():
        t.data = t.data.astype(np.float64)
    return params


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            ModelConfig(30, hidden=10, heads=3)

    @pytest.mark.parametrize("kw", [{"dropout": 1.0}, {"task": "xyz"}, {"vocab_size": 3}, {"max_len": 2}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**{"vocab_size": 30, **kw})

    def test_dict_round_trip(self):
        cfg = ModelConfig(30, hidden=16, task="asc")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestEmbedding:
    def test_zero_tables_give_zero(self):
        model, params = tiny()
        for name in ("emb.token", "emb.segment", "emb.position"):
            params[name].data[:] = 0
        batch = random_batch("ae", np.random.default_rng(0))
        np.testing.assert_array_equal(model.embedding_sum(batch, params).data, 0.0)

    def test_one_hot_tables_add_up(self):
        model, params = tiny()
        for name in ("emb.token", "emb.segment", "emb.position"):
            params[name].data[:] = 0
        params["emb.token"].data[5, 0] = 1.0
        params["emb.segment"].data[0, 1] = 2.0
        params["emb.position"].data[1, 2] = 3.0
        batch = collate([ae_example(np.random.default_rng(0), 3)])
        batch.input_ids[0, 1] = 5
        out = model.embedding_sum(batch, params).data[0]
        np.testing.assert_array_equal(out[1, :3], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(out[0, :3], [0.0, 2.0, 0.0])

    def test_token_out_of_range(self):
        model, params = tiny()
        batch = random_batch("ae", np.random.default_rng(0))
        batch.input_ids[0, 1] = 999
        with pytest.raises(IndexError):
            model.embed(batch, params)


class TestForward:
    def test_shapes(self):
        rng = np.random.default_rng(0)
        for task, shape in (("ae", (3, None, 3)), ("asc", (3, 3))):
            model, params = tiny(task)
            batch = random_batch(task, rng)
            out = model.logits(batch, params)
            assert out.shape[0] == 3 and out.shape[-1] == 3 and out.ndim == len(shape)
            if task == "ae":
                assert out.shape[1] == batch.input_ids.shape[1]

    def test_collate_trims_to_longest(self):
        rng = np.random.default_rng(0)
        batch = collate([ae_example(rng, 3), ae_example(rng, 5)])
        assert batch.input_ids.shape == (2, 7)
        assert batch.padding[0].tolist() == [False] * 5 + [True] * 2

    def test_mixed_tasks_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(UsageError):
            collate([ae_example(rng, 3), asc_example(rng, 3)])

    def test_task_mismatch(self):
        model, params = tiny("ae")
        with pytest.raises(UsageError):
            model.task_loss(random_batch("asc", np.random.default_rng(0)), params)

    def test_padding_does_not_change_real_positions(self):
        rng = np.random.default_rng(1)
        model, params = _tiny64("ae")
        short, long = ae_example(rng, 3), ae_example(rng, 9)
        with T.precision(np.float64):
            alone = model.logits(collate([short]), params)
            padded = model.logits(collate([short, long]), params)
        n = short.example.length
        np.testing.assert_allclose(padded[0, :n], alone[0], atol=1e-10)

    def test_permutation_equivariance_without_positions(self):
        model, params = _tiny64("ae", layers=2)
        params["emb.position"].data[:] = 0
        rng = np.random.default_rng(2)
        batch = collate([ae_example(rng, 6)])
        perm = rng.permutation(batch.input_ids.shape[1])
        shuffled = collate([ae_example(rng, 6)])
        shuffled.input_ids[:] = batch.input_ids[:, perm]
        shuffled.segment_ids[:] = batch.segment_ids[:, perm]
        with T.precision(np.float64):
            a = model.logits(batch, params)
            b = model.logits(shuffled, params)
        np.testing.assert_allclose(b, a[:, perm], atol=1e-10)

    def test_deterministic_init(self):
        _, a = tiny(seed=4)
        _, b = tiny(seed=4)
        assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)

    def test_init_statistics(self):
        _, params = tiny(hidden=64, ff=256)
        w = params["layer0.ff.in.weight"].data
        assert abs(w.std() - 0.02 * 0.88) < 2e-3 and np.abs(w).max() <= 0.04
        np.testing.assert_array_equal(params["emb.ln.gamma"].data, 1.0)
        np.testing.assert_array_equal(params["head.bias"].data, 0.0)


def _tiny64(task, **kw):
    model, params = tiny(task, **kw)
    return model, _params64(params)


class TestLoss:
    @pytest.mark.parametrize("task", ["ae", "asc"])
    def test_zero_head_gives_log3(self, task):
        model, params = tiny(task)
        params["head.weight"].data[:] = 0
        loss, _ = model.task_loss(random_batch(task, np.random.default_rng(0)), params)
        assert loss.item() == pytest.approx(math.log(3), abs=1e-6)

    def test_unscored_logits_do_not_matter(self):
        model, params = tiny("ae")
        batch = random_batch("ae", np.random.default_rng(3))
        logits = np.random.default_rng(4).standard_normal(batch.input_ids.shape + (3,))
        base = model.loss_from_logits(Tensor(logits), batch).item()
        logits[~batch.score_mask] = 100.0
        assert model.loss_from_logits(Tensor(logits), batch).item() == base

    def test_asc_reads_only_cls(self):
        model, params = tiny("asc")
        enc = np.random.default_rng(5).standard_normal((2, 6, 8))
        a = model.asc_head(Tensor(enc), params).data
        enc[:, 1:] = 7.0
        np.testing.assert_array_equal(model.asc_head(Tensor(enc), params).data, a)

    def test_asc_gradient_reaches_cls_row(self):
        model, params = tiny("asc")
        batch = random_batch("asc", np.random.default_rng(6))
        emb = model.embed(batch, params.detached())
        x = Tensor(emb.x.data, requires_grad=True)
        loss, _ = model.loss_from_embeddings(x, batch, params.detached())
        backward(loss)
        assert np.all(np.abs(x.grad[:, 0]).sum(axis=-1) > 0)

    def test_input_gradient_matches_finite_differences(self):
        model, params = _tiny64("ae")
        batch = random_batch("ae", np.random.default_rng(7), size=2, high=4)
        with T.precision(np.float64):
            x0 = model.embed(batch, params).x.data.copy()
            x = Tensor(x0.copy(), requires_grad=True)
            loss, _ = model.loss_from_embeddings(x, batch, params.detached())
            backward(loss)

            def f():
                with T.no_grad():
                    return model.loss_from_embeddings(Tensor(x0), batch, params)[0].item()

            numeric = central_difference(f, x0)
        assert max_relative_error(x.grad, numeric) < 1e-4

    @pytest.mark.parametrize("task", ["ae", "asc"])
    def test_loss_decreases_when_overfitting(self, task):
        model, params = tiny(task, hidden=16, ff=32)
        batch = random_batch(task, np.random.default_rng(8), size=4)
        opt = Adam(params, lr=1e-3)
        losses = []
        for _ in range(50):
            loss, _ = model.task_loss(batch, params)
            backward(loss)
            opt.step()
            losses.append(loss.item())
        assert all(b < a for a, b in zip(losses, losses[1:]))


def test_full_parameter_gradients_match_finite_differences():
    model, params = _tiny64("ae", layers=1, hidden=8, heads=2, ff=8)
    batch = random_batch("ae", np.random.default_rng(9), size=2, high=3)
    with T.precision(np.float64):
        loss, _ = model.task_loss(batch, params)
        backward(loss)
        grads = {k: t.grad.copy() for k, t in params.items()}
        for name, t in params.items():
            def f():
                with T.no_grad():
                    return model.task_loss(batch, params)[0].item()

            numeric = central_difference(f, t.data)
            assert max_relative_error(grads[name], numeric, floor=1e-8) < 1e-3, name


def test_embedding_is_sum_of_lookups_for_any_ids():
    model, params = tiny()
    rng = np.random.default_rng(10)
    batch = random_batch("ae", rng, size=4)
    batch.input_ids[:] = rng.integers(0, 20, batch.input_ids.shape)
    batch.segment_ids[:] = rng.integers(0, 2, batch.segment_ids.shape)
    expected = (params["emb.token"].data[batch.input_ids] + params["emb.segment"].data[batch.segment_ids]
                + params["emb.position"].data[batch.position_ids])
    np.testing.assert_array_equal(model.embedding_sum(batch, params).data, expected)


def test_padded_rows_do_not_reach_real_outputs():
    model, params = _tiny64("ae", layers=2)
    rng = np.random.default_rng(11)
    batch = collate([ae_example(rng, 2), ae_example(rng, 7), ae_example(rng, 4)])
    assert batch.padding.any()
    with T.precision(np.float64), T.no_grad():
        x = model.embed(batch, params).x.data.copy()
        a = model.encode(Tensor(x), batch.attention_mask, params).data
        x[batch.padding] = rng.normal(0, 10, x[batch.padding].shape)
        b = model.encode(Tensor(x), batch.attention_mask, params).data
        loss_a = model.loss_from_embeddings(Tensor(x), batch, params)[0].item()
    real = ~batch.padding
    np.testing.assert_array_equal(a[real], b[real])
    with T.precision(np.float64), T.no_grad():
        x = model.embed(batch, params).x.data
        assert model.loss_from_embeddings(Tensor(x), batch, params)[0].item() == loss_a


def test_confident_correct_logits_give_zero_loss():
    model, _ = tiny("ae")
    batch = random_batch("ae", np.random.default_rng(12))
    logits = np.zeros(batch.input_ids.shape + (3,))
    np.put_along_axis(logits, batch.labels[..., None], 60.0, axis=-1)
    assert model.loss_from_logits(Tensor(logits), batch).item() < 1e-12


def test_loss_trace_is_deterministic():
    def trace():
        model, params = tiny("asc", dropout=0.2, seed=3)
        batch = random_batch("asc", np.random.default_rng(13), size=4)
        opt, rng = Adam(params, lr=1e-3), np.random.default_rng(14)
        out = []
        for _ in range(5):
            loss, _ = model.task_loss(batch, params, rng, training=True)
            backward(loss)
            opt.step()
            out.append(loss.item())
        return out

    assert trace() == trace()


def test_load_model_rejects_shape_mismatch(tmp_path):
    from batlab.checkpoint import save_checkpoint
    from batlab.experiment import load_model

    model, params = tiny()
    arrays = dict(params.arrays())
    arrays["head.weight"] = np.zeros((8, 4), np.float32)
    save_checkpoint(tmp_path / "bad.bin", arrays, {"model": model.cfg.to_dict()})
    with pytest.raises(ConfigError, match="head.weight"):
        load_model(tmp_path / "bad.bin")
    del arrays["head.weight"]
    save_checkpoint(tmp_path / "missing.bin", arrays, {"model": model.cfg.to_dict()})
    with pytest.raises(ConfigError, match="lacks"):
        load_model(tmp_path / "missing.bin")
