import numpy as np
import pytest
import torch

from asap_joint.corpus import Dataset
from asap_joint.errors import CheckpointError, SplitLeak, TaxonomyMismatch
from asap_joint.joint_model import ASPECT_HEAD_PARAMS, RATING_HEAD_PARAMS, joint_forward_loss
from asap_joint.synthetic import synthetic_reviews
from asap_joint.taxonomy import AspectTaxonomy
from asap_joint.training import (
    Checkpoint,
    TrainConfig,
    build_tiny,
    dev_metrics,
    make_optimizer,
    predict,
    train,
)

import oracles
from helpers import small_taxonomy


def toy_grad(x):
    # f = (x0 - 1)^2 + 3 (x1 + 2)^2 + x2^4 + x0 x2
    return [2 * (x[0] - 1) + x[2], 6 * (x[1] + 2), 4 * x[2] ** 3 + x[0]]


def toy_loss(x):
    return (x[0] - 1) ** 2 + 3 * (x[1] + 2) ** 2 + x[2] ** 4 + x[0] * x[2]


def adam_vs_oracle(lr=0.05, steps=50):
    x0 = [0.5, -0.3, 0.8]
    x = torch.tensor(x0, dtype=torch.float64, requires_grad=True)
    opt = make_optimizer([x], TrainConfig(learning_rate=lr))
    ours = []
    for _ in range(steps):
        opt.zero_grad()
        toy_loss(x).backward()
        opt.step()
        ours.append(x.detach().tolist())
    expected = oracles.adam(toy_grad, x0, lr, 0.9, 0.999, 1e-8, steps)
    return np.array(ours), np.array(expected)


def small_setup(n=12, n_aspects=4, seed=0, **kw):
    tax = small_taxonomy(n_aspects)
    ds = synthetic_reviews(n, seed=seed, taxonomy=tax, split="train")
    model, tok = build_tiny([r.text for r in ds], tax, d=16, layers=1, heads=2, max_len=96, seed=seed,
                            dtype=torch.float64, **kw)
    return ds, model, tok


def quick_cfg(**kw):
    base = dict(batch_size=4, epochs=1, learning_rate=1e-3, max_len=96, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.epochs, cfg.adam_beta1, cfg.adam_beta2, cfg.max_len) == (16, 3, 0.9, 0.999, 512)
        assert (cfg.lambda_acsa, cfg.lambda_rp) == (1.0, 1.0)

    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(epochs=0), dict(learning_rate=0.0),
                                    dict(adam_beta1=1.0), dict(lambda_acsa=0.0, lambda_rp=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_fingerprint_ignores_output_dir(self):
        assert TrainConfig(checkpoint_dir="a").fingerprint() == TrainConfig(checkpoint_dir="b").fingerprint()
        assert TrainConfig(seed=1).fingerprint() != TrainConfig(seed=2).fingerprint()


class TestAdam:
    def test_matches_oracle(self):
        ours, expected = adam_vs_oracle()
        assert np.max(np.abs(ours - expected)) < 1e-10

    def test_decreases_toy_loss(self):
        ours, _ = adam_vs_oracle(steps=200)
        assert toy_loss(ours[-1]) < toy_loss([0.5, -0.3, 0.8])


class TestTrain:
    def test_deterministic(self):
        runs = []
        for _ in range(2):
            ds, model, tok = small_setup()
            runs.append(train(ds, None, quick_cfg(epochs=2), model, tok).step_losses)
        assert runs[0] == runs[1]
        assert all(np.isfinite(runs[0]))

    def test_records(self):
        ds, model, tok = small_setup()
        records = []
        train(ds, ds, quick_cfg(), model, tok, on_record=records.append)
        steps = [r for r in records if r["event"] == "step"]
        assert len(steps) == 3
        assert [r["step"] for r in steps] == [1, 2, 3]
        assert records[-1]["event"] == "epoch" and "acsa_macro_f1" in records[-1]["dev"]

    def test_max_steps(self):
        ds, model, tok = small_setup()
        res = train(ds, None, quick_cfg(epochs=5, max_steps=4), model, tok)
        assert len(res.step_losses) == 4

    @pytest.mark.parametrize("flag, frozen", [("lambda_rp", RATING_HEAD_PARAMS), ("lambda_acsa", ASPECT_HEAD_PARAMS)])
    def test_ablation_freezes_unused_head(self, flag, frozen):
        ds, model, tok = small_setup()
        before = {n: getattr(model.heads, n).detach().clone() for n in frozen}
        grads = []

        def watch(rec):
            if rec["event"] == "step":
                grads.append([getattr(model.heads, n).grad for n in frozen])

        train(ds, None, quick_cfg(**{flag: 0.0}), model, tok, on_record=watch)
        assert grads
        for step in grads:
            assert all(g is None or not g.any() for g in step)
        for n in frozen:
            assert torch.equal(getattr(model.heads, n), before[n])

    def test_split_leak(self):
        ds, model, tok = small_setup()
        with pytest.raises(SplitLeak):
            train(ds.with_split("test"), None, quick_cfg(), model, tok)
        with pytest.raises(SplitLeak):
            train(ds, ds.with_split("test"), quick_cfg(), model, tok)

    def test_taxonomy_mismatch(self):
        ds, model, tok = small_setup()
        other = Dataset(ds.reviews, taxonomy=AspectTaxonomy.from_names(["A#a", "B#b", "C#c", "D#d"]))
        with pytest.raises(TaxonomyMismatch):
            train(ds, other, quick_cfg(), model, tok)
        _, model5, _ = small_setup(n_aspects=5)
        with pytest.raises(TaxonomyMismatch):
            train(ds, None, quick_cfg(), model5, tok)

    def test_writes_checkpoints(self, tmp_path):
        ds, model, tok = small_setup()
        train(ds, ds, quick_cfg(epochs=2, checkpoint_dir=str(tmp_path)), model, tok)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["best_f1.pt", "best_mae.pt", "epoch1.pt", "epoch2.pt", "final.pt"]


class TestCheckpoint:
    @pytest.fixture
    def trained(self, tmp_path):
        ds, model, tok = small_setup()
        res = train(ds, ds, quick_cfg(epochs=2, checkpoint_dir=str(tmp_path)), model, tok)
        return ds, res, tmp_path

    def test_reload_reproduces_dev_metrics(self, trained):
        ds, res, path = trained
        ckpt = Checkpoint.load(path / "final.pt")
        model, tok = ckpt.build()
        again = dev_metrics(ds, model, tok, 4, 96)
        assert again == ckpt.dev_metrics == res.final.dev_metrics
        assert ckpt.optimizer_state["state"]
        assert (ckpt.epoch, ckpt.step) == (2, 6)

    def test_not_a_checkpoint(self, tmp_path):
        torch.save({"format": "other"}, tmp_path / "x.pt")
        with pytest.raises(CheckpointError):
            Checkpoint.load(tmp_path / "x.pt")

    def test_predict_empty(self, trained):
        ds, res, _ = trained
        assert predict(Dataset((), taxonomy=ds.taxonomy), res.final) == []

    def test_predict_taxonomy_mismatch(self, trained):
        ds, res, _ = trained
        with pytest.raises(TaxonomyMismatch):
            predict(Dataset(ds.reviews, taxonomy=AspectTaxonomy.from_names(["A#a", "B#b", "C#c", "D#d"])), res.final)

    def test_predict_is_pure(self, trained):
        ds, res, _ = trained
        state = {k: v.clone() for k, v in res.final.model_state.items()}
        a = predict(ds, res.final, trace=True)
        b = predict(ds, res.final, trace=True)
        for p, q in zip(a, b):
            assert np.array_equal(p.class_probs, q.class_probs)
            assert p.predicted_rating == q.predicted_rating
            assert np.array_equal(p.attention, q.attention)
        assert all(torch.equal(v, res.final.model_state[k]) for k, v in state.items())

    def test_predict_matches_loss_path(self, trained):
        ds, res, _ = trained
        preds = predict(ds, res.final, batch_size=5)
        model, tok = res.final.build()
        with torch.no_grad():
            loss_preds = joint_forward_loss(list(ds), model, tok, max_len=96).predictions
        for p, q in zip(preds, loss_preds):
            assert p.review_id == q.review_id
            np.testing.assert_allclose(p.class_probs, q.class_probs, rtol=0, atol=1e-12)
            assert p.predicted_rating == pytest.approx(q.predicted_rating, abs=1e-12)
