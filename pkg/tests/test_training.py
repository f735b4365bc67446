"""Training objective and loop tests.

The per-example loss is checked against hand-computed values and a
dict-based reimplementation; the differentiable batch objective is checked
to decompose into the per-example scalar losses and to send exactly zero
gradient to prompt and padding positions.  Loop tests run tiny models for
a handful of steps and only assert directional improvement.
"""

import warnings

import numpy as np
import pytest

import demask.tensor as T
from demask.data import Example
from demask.denoiser import TransformerConfig, TransformerDenoiser
from demask.length import LengthHeadConfig
from demask.nn import load_checkpoint, save_checkpoint
from demask.schedule import build_schedule, loss_weight
from demask.training import (Batch, MetricsRow, TrainConfig, batch_loss_graph,
                             checkpoint_config, diffusive_adapt,
                             make_diffusion_batch, make_mlm_batch, mlm_loss,
                             mlm_pretrain, model_from_checkpoint, prune_vocab,
                             rdm_loss, resolve_label_smoothing, write_metrics)
from demask.vocab import Vocab

VOCAB = Vocab.from_symbols("abcd")
A, B, C, D = (VOCAB.id_of(s) for s in "abcd")
MASK, PAD, SEP = VOCAB.mask_id, VOCAB.pad_id, VOCAB.sep_id


def log_rows(rows):
    """Rows of probabilities over the vocabulary -> float64 log matrix."""
    p = np.asarray(rows, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(p)


def uniform_row(targets_and_probs):
    row = np.zeros(len(VOCAB))
    for tok, p in targets_and_probs:
        row[tok] = p
    return row


class TestRdmLoss:
    def test_frozen_midpoint_example(self):
        # weight at t=26, T=50 is 1 - 25/50 = 0.5; two masked positions each
        # carrying a target log-probability of -1 sum to 2, so the loss is 1
        sched = build_schedule(50, "linear")
        p = np.exp(-1.0)
        rest = (1.0 - p) / 3.0
        lp = log_rows([uniform_row([(A, p), (B, rest), (C, rest), (D, rest)]),
                       uniform_row([(B, p), (A, rest), (C, rest), (D, rest)])])
        x0 = np.array([A, B])
        x_t = np.array([MASK, MASK])
        got = rdm_loss(lp, x0, x_t, t=26, schedule=sched, mask_id=MASK)
        assert abs(got - 1.0) < 1e-12

    def test_matches_dict_reimplementation(self):
        rng = np.random.default_rng(11)
        sched = build_schedule(7, "cosine")
        for trial in range(20):
            n = int(rng.integers(1, 6))
            probs = rng.dirichlet(np.ones(len(VOCAB) - 1), size=n)
            lp = np.full((n, len(VOCAB)), -np.inf)
            cols = [i for i in range(len(VOCAB)) if i != MASK]
            lp[:, cols] = np.log(probs)
            x0 = rng.choice([A, B, C, D], size=n)
            masked = rng.random(n) < 0.6
            x_t = np.where(masked, MASK, x0)
            t = int(rng.integers(1, sched.T + 1))
            want = (1.0 - (t - 1) / sched.T) * sum(
                -lp[i, x0[i]] for i in range(n) if masked[i])
            got = rdm_loss(lp, x0, x_t, t=t, schedule=sched, mask_id=MASK)
            assert abs(got - want) < 1e-12

    def test_unmasked_positions_do_not_contribute(self):
        sched = build_schedule(5, "linear")
        lp = log_rows([uniform_row([(A, 0.7), (B, 0.3)]),
                       uniform_row([(A, 0.2), (B, 0.8)])])
        x0 = np.array([A, B])
        base = rdm_loss(lp, x0, np.array([MASK, B]), t=2, schedule=sched, mask_id=MASK)
        lp2 = lp.copy()
        lp2[1] = log_rows([uniform_row([(C, 1.0)])])[0]
        again = rdm_loss(lp2, x0, np.array([MASK, B]), t=2, schedule=sched, mask_id=MASK)
        assert base == again

    def test_nothing_masked_gives_exact_zero(self):
        sched = build_schedule(5, "linear")
        lp = log_rows([uniform_row([(A, 1.0)])])
        assert rdm_loss(lp, np.array([A]), np.array([A]), t=3,
                        schedule=sched, mask_id=MASK) == 0.0

    def test_label_smoothing_hand_value(self):
        sched = build_schedule(4, "linear")
        probs = np.full(len(VOCAB) - 1, 1.0 / (len(VOCAB) - 1))
        lp = np.full((1, len(VOCAB)), -np.inf)
        cols = np.arange(len(VOCAB)) != MASK
        lp[0, cols] = np.log(probs)
        eps = 0.3
        # picked and smoothed terms coincide on a uniform row
        want = loss_weight(2, 4) * -np.log(1.0 / (len(VOCAB) - 1))
        got = rdm_loss(lp, np.array([A]), np.array([MASK]), t=2, schedule=sched,
                       mask_id=MASK, label_smoothing=eps)
        assert abs(got - want) < 1e-12

    def test_label_smoothing_mixes_target_and_mean(self):
        sched = build_schedule(4, "linear")
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(len(VOCAB) - 1))
        lp = np.full((1, len(VOCAB)), -np.inf)
        cols = [i for i in range(len(VOCAB)) if i != MASK]
        lp[0, cols] = np.log(probs)
        eps = 0.1
        picked = lp[0, B]
        smooth = np.mean([lp[0, i] for i in cols])
        want = loss_weight(3, 4) * -((1 - eps) * picked + eps * smooth)
        got = rdm_loss(lp, np.array([B]), np.array([MASK]), t=3, schedule=sched,
                       mask_id=MASK, label_smoothing=eps)
        assert abs(got - want) < 1e-12

    def test_weight_declines_linearly_in_t(self):
        sched = build_schedule(10, "linear")
        lp = log_rows([uniform_row([(A, 0.5), (B, 0.5)])])
        x0, x_t = np.array([A]), np.array([MASK])
        losses = [rdm_loss(lp, x0, x_t, t=t, schedule=sched, mask_id=MASK)
                  for t in range(1, 11)]
        base = -np.log(0.5)
        for t, got in zip(range(1, 11), losses):
            assert abs(got - (1.0 - (t - 1) / 10) * base) < 1e-12

    def test_rejects_masked_clean_tokens(self):
        sched = build_schedule(4, "linear")
        lp = log_rows([uniform_row([(A, 1.0)])])
        with pytest.raises(ValueError, match="clean"):
            rdm_loss(lp, np.array([MASK]), np.array([MASK]), t=1, schedule=sched, mask_id=MASK)

    def test_rejects_inconsistent_corruption(self):
        sched = build_schedule(4, "linear")
        lp = log_rows([uniform_row([(A, 1.0)])])
        with pytest.raises(ValueError, match="neither clean nor mask"):
            rdm_loss(lp, np.array([A]), np.array([B]), t=1, schedule=sched, mask_id=MASK)

    def test_rejects_bad_smoothing(self):
        sched = build_schedule(4, "linear")
        lp = log_rows([uniform_row([(A, 1.0)])])
        with pytest.raises(ValueError, match="label_smoothing"):
            rdm_loss(lp, np.array([A]), np.array([MASK]), t=1, schedule=sched,
                     mask_id=MASK, label_smoothing=1.0)

    def test_rejects_shape_mismatch(self):
        sched = build_schedule(4, "linear")
        lp = log_rows([uniform_row([(A, 1.0)])])
        with pytest.raises(ValueError, match="shape"):
            rdm_loss(lp, np.array([A, B]), np.array([MASK, MASK]), t=1,
                     schedule=sched, mask_id=MASK)


class TestMlmLoss:
    def test_equals_rdm_loss_at_t_one(self):
        sched = build_schedule(6, "cosine")
        rng = np.random.default_rng(5)
        probs = rng.dirichlet(np.ones(len(VOCAB) - 1), size=3)
        lp = np.full((3, len(VOCAB)), -np.inf)
        cols = [i for i in range(len(VOCAB)) if i != MASK]
        lp[:, cols] = np.log(probs)
        x0 = np.array([A, C, D])
        x_t = np.array([MASK, C, MASK])
        assert abs(mlm_loss(lp, x0, x_t, MASK) -
                   rdm_loss(lp, x0, x_t, t=1, schedule=sched, mask_id=MASK)) < 1e-15

    def test_rdm_is_weighted_mlm(self):
        sched = build_schedule(8, "linear")
        lp = log_rows([uniform_row([(A, 0.25), (B, 0.75)])] * 2)
        x0 = np.array([A, B])
        x_t = np.array([MASK, MASK])
        base = mlm_loss(lp, x0, x_t, MASK)
        for t in range(1, 9):
            got = rdm_loss(lp, x0, x_t, t=t, schedule=sched, mask_id=MASK)
            assert abs(got - loss_weight(t, 8) * base) < 1e-12


def toy_examples(n=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p_len = int(rng.integers(1, 3))
        r_len = int(rng.integers(1, 4))
        prompt = np.concatenate([rng.choice([A, B, C, D], size=p_len), [SEP]])
        response = rng.choice([A, B, C, D], size=r_len)
        out.append(Example(prompt=prompt, response=response))
    return out


class TestBatchLossGraph:
    def build_batch(self, eps_seed=0, T_steps=5):
        sched = build_schedule(T_steps, "linear")
        exs = toy_examples(6, seed=eps_seed)
        rng = np.random.default_rng(eps_seed + 1)
        batch = make_diffusion_batch(exs, np.arange(len(exs)), sched, VOCAB, rng)
        return sched, exs, batch

    def leaf_log_probs(self, batch, seed=9):
        rng = np.random.default_rng(seed)
        B, L = batch.tokens.shape
        logits = rng.normal(size=(B, L, len(VOCAB)))
        logits[:, :, MASK] = -1e30
        x = T.Tensor(logits.astype(np.float64))
        return x, T.log_softmax(x)

    @pytest.mark.parametrize("eps", [0.0, 0.1])
    def test_decomposes_into_scalar_losses(self, eps):
        sched, exs, batch = self.build_batch()
        _, lp = self.leaf_log_probs(batch)
        graph_val = float(batch_loss_graph(lp, batch, MASK, eps).data)
        total = 0.0
        for i, ex in enumerate(exs):
            p_len = ex.prompt.shape[0]
            r = slice(p_len, p_len + ex.response.shape[0])
            total += rdm_loss(lp.data[i, r], batch.clean[i, r], batch.tokens[i, r],
                              t=int(batch.t[i]), schedule=sched, mask_id=MASK,
                              label_smoothing=eps)
        assert abs(graph_val - total / len(exs)) < 1e-9

    def test_prompt_and_padding_gradients_are_exactly_zero(self):
        _, exs, batch = self.build_batch()
        x, lp = self.leaf_log_probs(batch)
        loss = batch_loss_graph(lp, batch, MASK, 0.1)
        loss.backward()
        g = x.grad
        for i, ex in enumerate(exs):
            p_len = ex.prompt.shape[0]
            assert np.all(g[i, :p_len, :] == 0.0), "prompt positions must get zero gradient"
            assert np.all(g[i, ex.total_len:, :] == 0.0), "padding must get zero gradient"

    def test_unmasked_response_gradients_are_exactly_zero(self):
        _, exs, batch = self.build_batch()
        x, lp = self.leaf_log_probs(batch)
        loss = batch_loss_graph(lp, batch, MASK, 0.0)
        loss.backward()
        g = x.grad
        survivors = batch.real & ~batch.loss_mask
        assert np.all(g[survivors] == 0.0)


class TestMakeDiffusionBatch:
    def test_invariants(self):
        sched = build_schedule(9, "cosine")
        exs = toy_examples(10, seed=4)
        rng = np.random.default_rng(7)
        batch = make_diffusion_batch(exs, np.arange(len(exs)), sched, VOCAB, rng)
        for i, ex in enumerate(exs):
            p_len = ex.prompt.shape[0]
            tot = ex.total_len
            assert np.array_equal(batch.tokens[i, :p_len], ex.prompt)
            assert np.all(batch.real[i, :tot])
            assert np.all(~batch.real[i, tot:])
            assert np.all(batch.tokens[i, tot:] == PAD)
            assert not batch.loss_mask[i, :p_len].any()
            assert not batch.loss_mask[i, tot:].any()
        masked = batch.loss_mask
        assert np.all(batch.tokens[masked] == MASK)
        assert np.array_equal(batch.clean[batch.real & ~masked], batch.tokens[batch.real & ~masked])
        assert np.all((batch.t >= 1) & (batch.t <= sched.T))
        for i in range(len(exs)):
            assert batch.weights[i] == loss_weight(int(batch.t[i]), sched.T)

    def test_fixed_t_is_honored(self):
        sched = build_schedule(9, "linear")
        exs = toy_examples(4, seed=2)
        fixed = np.array([9, 1, 5, 9])
        batch = make_diffusion_batch(exs, np.arange(4), sched, VOCAB,
                                     np.random.default_rng(0), fixed_t=fixed)
        assert np.array_equal(batch.t, fixed)

    def test_deterministic_under_seed(self):
        sched = build_schedule(6, "linear")
        exs = toy_examples(5, seed=1)
        a = make_diffusion_batch(exs, np.arange(5), sched, VOCAB, np.random.default_rng(42))
        b = make_diffusion_batch(exs, np.arange(5), sched, VOCAB, np.random.default_rng(42))
        assert np.array_equal(a.tokens, b.tokens) and np.array_equal(a.t, b.t)

    def test_t_equal_T_masks_everything(self):
        sched = build_schedule(5, "linear")
        exs = toy_examples(3, seed=3)
        batch = make_diffusion_batch(exs, np.arange(3), sched, VOCAB,
                                     np.random.default_rng(0), fixed_t=np.full(3, 5))
        for i, ex in enumerate(exs):
            p_len = ex.prompt.shape[0]
            assert np.all(batch.tokens[i, p_len:ex.total_len] == MASK)


class TestMakeMlmBatch:
    def test_always_masks_at_least_one_position(self):
        seqs = [np.array([A, B, C]), np.array([D]), np.array([A, A, A, A])]
        rng = np.random.default_rng(0)
        batch = make_mlm_batch(seqs, np.arange(3), 1e-9, VOCAB, rng)
        assert np.all(batch.loss_mask.sum(axis=1) >= 1)

    def test_masking_respects_padding(self):
        seqs = [np.array([A, B, C, D]), np.array([A])]
        batch = make_mlm_batch(seqs, np.arange(2), 0.9, VOCAB, np.random.default_rng(1))
        assert not batch.loss_mask[1, 1:].any()
        assert np.all(batch.tokens[1, 1:] == PAD)
        assert np.all(batch.weights == 1.0)

    def test_unselected_positions_unchanged(self):
        rng = np.random.default_rng(3)
        seqs = [rng.choice([A, B, C, D], size=rng.integers(2, 9)) for _ in range(20)]
        batch = make_mlm_batch(seqs, np.arange(20), 0.3, VOCAB, rng)
        untouched = batch.real & ~batch.loss_mask
        assert np.array_equal(batch.tokens[untouched], batch.clean[untouched])

    def test_corruption_split_fractions(self):
        # 80% mask / 10% random / 10% keep at selected cells; a random draw
        # can coincide with the clean token, so with 4 data symbols the
        # observable rates are 0.8 mask, 0.075 changed, 0.125 unchanged.
        rng = np.random.default_rng(4)
        seqs = [rng.choice([A, B, C, D], size=20) for _ in range(400)]
        batch = make_mlm_batch(seqs, np.arange(400), 0.5, VOCAB, rng)
        sel = batch.loss_mask
        n = sel.sum()
        masked = (batch.tokens == MASK) & sel
        changed = sel & ~masked & (batch.tokens != batch.clean)
        kept = sel & ~masked & (batch.tokens == batch.clean)
        assert abs(masked.sum() / n - 0.8) < 0.03
        assert abs(changed.sum() / n - 0.075) < 0.02
        assert abs(kept.sum() / n - 0.125) < 0.025
        assert not np.any((batch.tokens == PAD) & sel)
        assert not np.any((batch.tokens == SEP) & sel)


class TestTrainConfig:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError, match="steps"):
            TrainConfig(steps=-1)
        with pytest.raises(ValueError, match="family"):
            TrainConfig(steps=1, family="bogus")
        with pytest.raises(ValueError, match="T must"):
            TrainConfig(steps=1, T=0)
        with pytest.raises(ValueError, match="label_smoothing"):
            TrainConfig(steps=1, label_smoothing=1.0)
        with pytest.raises(ValueError, match="holdout"):
            TrainConfig(steps=1, holdout_fraction=1.0)

    def test_smoothing_resolution(self):
        assert resolve_label_smoothing(TrainConfig(steps=1), from_pretrained=False) == 0.1
        assert resolve_label_smoothing(TrainConfig(steps=1), from_pretrained=True) == 0.0
        explicit = TrainConfig(steps=1, label_smoothing=0.05)
        assert resolve_label_smoothing(explicit, from_pretrained=True) == 0.05


def small_model_config(max_positions=12):
    return TransformerConfig(vocab_size=len(VOCAB), dim=16, n_heads=2, n_layers=1,
                             ff_dim=32, max_positions=max_positions)


class TestMlmPretrain:
    def corpus(self, n=24):
        seq = np.array([A, B, C, D, A, B], dtype=np.int64)
        return [seq.copy() for _ in range(n)]

    def test_zero_steps_returns_untrained_model(self):
        model, history = mlm_pretrain(self.corpus(), VOCAB, small_model_config(),
                                      TrainConfig(steps=0, seed=1))
        assert history == []
        assert model.vocab_size == len(VOCAB)

    def test_loss_improves_on_constant_corpus(self):
        cfg = TrainConfig(steps=30, batch_size=8, lr=3e-3, seed=0, log_interval=5)
        model, history = mlm_pretrain(self.corpus(), VOCAB, small_model_config(), cfg)
        assert len(history) == 6
        assert history[-1].holdout_loss < history[0].holdout_loss
        assert history[-1].extra["holdout_acc"] >= history[0].extra["holdout_acc"]
        assert all(r.tokens_per_sec > 0 for r in history)

    def test_rejects_empty_corpus(self):
        with pytest.raises(ValueError, match="empty"):
            mlm_pretrain([], VOCAB, small_model_config(), TrainConfig(steps=1))

    def test_rejects_overlong_sequence_by_index(self):
        seqs = [np.array([A]), np.full(40, B)]
        with pytest.raises(ValueError, match="sequence 1"):
            mlm_pretrain(seqs, VOCAB, small_model_config(), TrainConfig(steps=1))

    def test_rejects_control_tokens(self):
        with pytest.raises(ValueError, match="control"):
            mlm_pretrain([np.array([A, MASK])], VOCAB, small_model_config(), TrainConfig(steps=1))

    def test_rejects_bad_mask_ratio(self):
        with pytest.raises(ValueError, match="mask_ratio"):
            mlm_pretrain(self.corpus(), VOCAB, small_model_config(),
                         TrainConfig(steps=1), mask_ratio=0.0)


class TestDiffusiveAdapt:
    def corpus(self, n=16):
        # constant mapping: prompt "a SEP" -> response "b c"
        ex = Example(prompt=np.array([A, SEP]), response=np.array([B, C]))
        return [Example(prompt=ex.prompt.copy(), response=ex.response.copy()) for _ in range(n)]

    def test_holdout_loss_improves(self):
        cfg = TrainConfig(steps=30, batch_size=8, lr=3e-3, T=4, seed=0, log_interval=5)
        model, head, history = diffusive_adapt(self.corpus(), VOCAB, small_model_config(), cfg)
        assert head is None
        assert history[-1].holdout_loss < history[0].holdout_loss

    def test_joint_length_head_trains(self):
        length_cfg = LengthHeadConfig(dim=16, n_heads=2, ff_dim=32, mlp_dim=16, n_classes=4)
        cfg = TrainConfig(steps=12, batch_size=8, lr=3e-3, T=4, seed=0, log_interval=6)
        model, head, history = diffusive_adapt(self.corpus(), VOCAB, small_model_config(),
                                               cfg, length_config=length_cfg)
        assert head is not None
        assert 0.0 <= history[-1].extra["length_acc"] <= 1.0

    def test_warm_start_uses_checkpoint_arrays(self):
        cfg0 = TrainConfig(steps=0, T=4, seed=5)
        model, _, _ = diffusive_adapt(self.corpus(), VOCAB, small_model_config(), cfg0)
        donor = {k: v.copy() for k, v in model.store.state_dict().items()}
        model2, _, _ = diffusive_adapt(self.corpus(), VOCAB, small_model_config(),
                                       TrainConfig(steps=0, T=4, seed=99), init_params=donor)
        got = model2.store.state_dict()
        assert all(np.array_equal(donor[k], got[k]) for k in donor)

    def test_init_with_unknown_params_rejected(self):
        donor = {"denoiser.bogus": np.zeros(3)}
        with pytest.raises(ValueError, match="do not fit"):
            diffusive_adapt(self.corpus(), VOCAB, small_model_config(),
                            TrainConfig(steps=0, T=4), init_params=donor)

    def test_init_with_shape_mismatch_rejected(self):
        cfg0 = TrainConfig(steps=0, T=4, seed=5)
        model, _, _ = diffusive_adapt(self.corpus(), VOCAB, small_model_config(), cfg0)
        donor = model.store.state_dict()
        donor["denoiser.head.b"] = np.zeros(3)
        with pytest.raises(ValueError, match="shape mismatch"):
            diffusive_adapt(self.corpus(), VOCAB, small_model_config(),
                            TrainConfig(steps=0, T=4), init_params=donor)

    def test_stray_length_params_dropped_with_warning(self):
        cfg0 = TrainConfig(steps=0, T=4, seed=5)
        model, _, _ = diffusive_adapt(self.corpus(), VOCAB, small_model_config(), cfg0)
        donor = model.store.state_dict()
        donor["length.mlp1.w"] = np.zeros((16, 8))
        with pytest.warns(UserWarning, match="length-head"):
            diffusive_adapt(self.corpus(), VOCAB, small_model_config(),
                            TrainConfig(steps=0, T=4), init_params=donor)

    def test_rejects_empty_corpus(self):
        with pytest.raises(ValueError, match="empty"):
            diffusive_adapt([], VOCAB, small_model_config(), TrainConfig(steps=1))

    def test_rejects_overlong_example_by_index(self):
        exs = self.corpus(2)
        exs.append(Example(prompt=np.array([A, SEP]), response=np.full(20, B)))
        with pytest.raises(ValueError, match="example 2"):
            diffusive_adapt(exs, VOCAB, small_model_config(), TrainConfig(steps=1, T=4))

    def test_rejects_response_beyond_length_classes(self):
        exs = self.corpus(2)
        length_cfg = LengthHeadConfig(dim=16, n_heads=2, ff_dim=32, mlp_dim=16, n_classes=1)
        with pytest.raises(ValueError, match="length-head classes"):
            diffusive_adapt(exs, VOCAB, small_model_config(), TrainConfig(steps=1, T=4),
                            length_config=length_cfg)

    def test_rejects_length_head_dim_mismatch(self):
        length_cfg = LengthHeadConfig(dim=8, n_heads=2, ff_dim=32, mlp_dim=16, n_classes=4)
        with pytest.raises(ValueError, match="must match model dim"):
            diffusive_adapt(self.corpus(2), VOCAB, small_model_config(),
                            TrainConfig(steps=1, T=4), length_config=length_cfg)


class TestPruneVocab:
    def build(self):
        big_vocab = Vocab.from_symbols("abcdefgh")
        cfg = TransformerConfig(vocab_size=len(big_vocab), dim=16, n_heads=2,
                                n_layers=1, ff_dim=32, max_positions=12)
        model = TransformerDenoiser(big_vocab, cfg, rng=np.random.default_rng(8))
        config = checkpoint_config(cfg, big_vocab, tokenizer_mode="char", T=4, family="linear")
        return big_vocab, model, config

    def corpus(self, vocab):
        a, b = vocab.id_of("a"), vocab.id_of("b")
        return [Example(prompt=np.array([a, vocab.sep_id]), response=np.array([b, a]))]

    def test_keeps_only_used_and_special_tokens(self):
        vocab, model, config = self.build()
        new_config, new_arrays = prune_vocab(config, model.store.state_dict(), self.corpus(vocab))
        new_tokens = new_config["vocab"]["tokens"]
        assert set(new_tokens) == {"[MASK]", "[PAD]", "[SEP]", "a", "b"}
        assert new_config["model"]["vocab_size"] == len(new_tokens)
        remap = new_config["vocab_remap"]["retained_old_ids"]
        assert remap == sorted(remap)
        assert new_arrays["denoiser.tok_embed"].shape[0] == len(new_tokens)
        assert new_arrays["denoiser.head.w"].shape[1] == len(new_tokens)

    def test_pruned_model_distribution_is_renormalized_restriction(self):
        vocab, model, config = self.build()
        new_config, new_arrays = prune_vocab(config, model.store.state_dict(), self.corpus(vocab))
        pruned, _, new_vocab, _, _ = model_from_checkpoint(new_config, new_arrays)
        retained = new_config["vocab_remap"]["retained_old_ids"]
        old_of_new = {new: old for new, old in enumerate(retained)}

        a = vocab.id_of("a")
        toks_old = np.array([[a, vocab.sep_id, vocab.mask_id]])
        toks_new = np.array([[new_vocab.id_of("a"), new_vocab.sep_id, new_vocab.mask_id]])
        old_p = np.exp(model.forward_batch(toks_old)[0].data[0])
        new_p = np.exp(pruned.forward_batch(toks_new)[0].data[0])
        restricted = old_p[:, retained]
        restricted = restricted / restricted.sum(axis=1, keepdims=True)
        assert np.max(np.abs(new_p - restricted)) < 1e-6
        assert old_of_new[new_vocab.id_of("b")] == vocab.id_of("b")

    def test_rejects_empty_corpus(self):
        vocab, model, config = self.build()
        with pytest.raises(ValueError, match="empty"):
            prune_vocab(config, model.store.state_dict(), [])


class TestCheckpointGlue:
    def test_roundtrip_through_file_preserves_scores(self, tmp_path):
        exs = [Example(prompt=np.array([A, SEP]), response=np.array([B, C]))] * 4
        cfg = TrainConfig(steps=4, batch_size=4, T=4, seed=0, log_interval=4)
        model, head, _ = diffusive_adapt(exs, VOCAB, small_model_config(), cfg,
                                         length_config=LengthHeadConfig(
                                             dim=16, n_heads=2, ff_dim=32, mlp_dim=16, n_classes=4))
        config = checkpoint_config(model.config, VOCAB, tokenizer_mode="char",
                                   T=4, family="linear", length_config=head.config,
                                   length_trained=True)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, config, model.store)
        config2, arrays = load_checkpoint(path)
        model2, head2, vocab2, sched2, tok_mode = model_from_checkpoint(config2, arrays)
        assert head2 is not None and tok_mode == "char" and sched2.T == 4
        toks = np.array([[A, SEP, MASK, MASK]])
        assert np.array_equal(model.forward_batch(toks)[0].data,
                              model2.forward_batch(toks)[0].data)

    def test_rejects_wrong_kind(self):
        with pytest.raises(ValueError, match="kind"):
            model_from_checkpoint({"kind": "optimizer"}, {})


class TestWriteMetrics:
    def test_file_format(self, tmp_path):
        rows = [MetricsRow(step=5, train_loss=1.25, holdout_loss=2.5, tokens_per_sec=100.0),
                MetricsRow(step=10, train_loss=0.5, holdout_loss=1.0, tokens_per_sec=200.0)]
        path = tmp_path / "metrics.tsv"
        write_metrics(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "5\t1.250000\t2.500000"
        assert lines[1] == "10\t0.500000\t1.000000"
