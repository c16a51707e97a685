import logging

import numpy as np
import pytest

from xmodal.errors import CapacityError, NumericError
from xmodal.store import Corpus, EmbeddingRecord, filter_corpus, write_corpus
from xmodal.synth import SynthConfig, generate
from xmodal.trainer import (
    Batch,
    TrainConfig,
    TrainHistory,
    sample_minibatch,
    steps_per_epoch,
    train,
    train_step,
)
from xmodal.twobranch import init_model, save_model


def _corpus(n_ids, per_mod, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    return Corpus.from_records(
        EmbeddingRecord(f"{m[0]}{i}_{k}", f"id{i}", m, "E", tuple(rng.standard_normal(dim)))
        for i in range(n_ids)
        for m in ("face", "voice")
        for k in range(per_mod)
    )


def _params(model):
    return [a.copy() for a in (*model.face.arrays(), *model.voice.arrays())]


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


SMALL = dict(hidden_dim=16, out_dim=4)


class TestSampling:
    def test_forced_full_corpus(self):
        c = _corpus(2, 1)
        b = sample_minibatch(c, TrainConfig(P=2, K=1, **SMALL), np.random.default_rng(0))
        assert sorted(b.face_labels) == ["id0", "id1"]
        assert sorted(b.voice_labels) == ["id0", "id1"]
        assert b.face_labels == b.voice_labels
        assert b.face_x.shape == (2, 3)

    def test_deterministic(self):
        c = _corpus(6, 5)
        cfg = TrainConfig(P=3, K=2, **SMALL)
        a = sample_minibatch(c, cfg, np.random.default_rng(42))
        b = sample_minibatch(c, cfg, np.random.default_rng(42))
        assert a.face_labels == b.face_labels
        assert np.array_equal(a.face_x, b.face_x) and np.array_equal(a.voice_x, b.voice_x)

    def test_records_without_replacement(self):
        c = _corpus(4, 3)
        b = sample_minibatch(c, TrainConfig(P=4, K=3, **SMALL), np.random.default_rng(1))
        assert len({row.tobytes() for row in b.face_x}) == 12

    def test_identity_frequencies_uniform(self):
        c = _corpus(4, 1)
        cfg = TrainConfig(P=2, K=1, **SMALL)
        rng = np.random.default_rng(7)
        n = 10_000
        counts = {f"id{i}": 0 for i in range(4)}
        for _ in range(n):
            for label in sample_minibatch(c, cfg, rng).face_labels:
                counts[label] += 1
        # each identity is in a draw with probability 1/2
        sd = np.sqrt(n * 0.5 * 0.5)
        assert all(abs(v - n / 2) <= 3 * sd for v in counts.values())

    def test_capacity_error_names_identity(self):
        records = list(_corpus(3, 2).records)
        records = [r for r in records if r.sample_id != "v2_1"]
        with pytest.raises(CapacityError, match="id2"):
            sample_minibatch(Corpus.from_records(records), TrainConfig(P=3, K=2, **SMALL), np.random.default_rng(0))

    @pytest.mark.parametrize(
        "kwargs", [{"P": 1}, {"K": 0}, {"learning_rate": -1.0}, {"momentum": 1.0}, {"epochs": -1}]
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def _toy_batch():
    # two identities, separable but initially mixed in output space
    face = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    voice = np.array([[0.0, 1.0], [0.2, 0.8], [1.0, 0.0], [0.8, 0.2]])
    labels = ["a", "a", "b", "b"]
    return Batch(face, labels, voice, list(labels))


class TestTrainStep:
    def test_zero_learning_rate(self):
        m = init_model(2, 2, 8, 3, seed=0)
        before = _params(m)
        _, _, step = train_step(m, _toy_batch(), TrainConfig(learning_rate=0.0, **SMALL))
        assert step.loss > 0
        assert _same(before, _params(m))

    def test_single_identity_batch(self):
        m = init_model(2, 2, 8, 3, seed=0)
        before = _params(m)
        b = _toy_batch()
        single = Batch(b.face_x[:2], ["a", "a"], b.voice_x[:2], ["a", "a"])
        _, _, step = train_step(m, single, TrainConfig(learning_rate=0.1, **SMALL))
        assert step.loss == 0.0
        assert _same(before, _params(m))

    def test_fifty_steps_lower_loss(self):
        m = init_model(2, 2, 8, 3, seed=0)
        cfg = TrainConfig(learning_rate=0.1, **SMALL)
        velocity = None
        losses = []
        for _ in range(51):
            _, velocity, step = train_step(m, _toy_batch(), cfg, velocity)
            losses.append(step.loss)
        assert losses[-1] < losses[0]

    def test_non_finite_input_leaves_model_untouched(self):
        m = init_model(2, 2, 8, 3, seed=0)
        before = _params(m)
        b = _toy_batch()
        b.face_x[0, 0] = np.nan
        with pytest.raises(NumericError):
            train_step(m, b, TrainConfig(**SMALL))
        assert _same(before, _params(m))


@pytest.fixture(scope="module")
def synth_train():
    return filter_corpus(generate(SynthConfig(n_identities=8, samples_per_cell=6)), by_language="E")


class TestTrain:
    def test_zero_epochs(self, synth_train):
        cfg = TrainConfig(epochs=0, seed=3, **SMALL)
        model, history = train(synth_train, cfg)
        assert history.mean_loss == [] and history.active_fraction == []
        ref = init_model(64, 64, 16, 4, seed=3)
        assert save_model(model) == save_model(ref)

    def test_deterministic(self, synth_train):
        cfg = TrainConfig(epochs=2, seed=5, **SMALL)
        a, ha = train(synth_train, cfg)
        b, hb = train(synth_train, cfg)
        assert save_model(a) == save_model(b)
        assert ha.to_csv() == hb.to_csv()

    def test_zero_lr_equals_init(self, synth_train):
        model, history = train(synth_train, TrainConfig(epochs=2, learning_rate=0.0, seed=1, **SMALL))
        assert save_model(model) == save_model(init_model(64, 64, 16, 4, seed=1))
        assert len(history.mean_loss) == 2

    def test_corpus_not_mutated(self, synth_train):
        before = write_corpus(synth_train)
        train(synth_train, TrainConfig(epochs=1, **SMALL))
        assert write_corpus(synth_train) == before

    def test_step_count_and_callback(self, synth_train):
        cfg = TrainConfig(P=4, K=2, epochs=3, **SMALL)
        assert steps_per_epoch(synth_train, cfg) == int(np.ceil(len(synth_train) / 8))
        seen = []
        train(synth_train, cfg, on_epoch_end=lambda e, m, h: seen.append((e, len(h.mean_loss))))
        assert seen == [(1, 1), (2, 2), (3, 3)]

    def test_k1_warns(self, synth_train, caplog):
        with caplog.at_level(logging.WARNING, logger="xmodal.trainer"):
            train(synth_train, TrainConfig(K=1, epochs=0, **SMALL))
        assert "K=1" in caplog.text

    def test_history_csv(self):
        h = TrainHistory([1.5, 0.25], [1.0, 0.5])
        assert h.to_csv() == "epoch,mean_loss,active_fraction\n1,1.5,1\n2,0.25,0.5\n"

    def test_default_config_halves_loss(self):
        corpus = filter_corpus(generate(SynthConfig()), by_language="E")
        _, history = train(corpus, TrainConfig())
        assert history.mean_loss[-1] <= 0.5 * history.mean_loss[0]
