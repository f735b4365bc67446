"""Length prediction and length-beam decoding."""

import warnings

import numpy as np
import pytest

import demask.length as length_mod
from demask.denoiser import (OracleDenoiser, TokenDistribution, TransformerConfig,
                             TransformerDenoiser)
from demask.length import (LengthDistribution, LengthHead, LengthHeadConfig,
                           length_beam_generate, predict_length)
from demask.schedule import build_schedule
from demask.vocab import Vocab

VOCAB = Vocab.from_symbols("abc")
A, B, C = (VOCAB.id_of(s) for s in "abc")
MASK = VOCAB.mask_id


def tiny_pair(max_positions=10, n_classes=4, seed=5):
    cfg = TransformerConfig(vocab_size=len(VOCAB), dim=8, n_heads=2, n_layers=1,
                            ff_dim=16, max_positions=max_positions)
    den = TransformerDenoiser(VOCAB, cfg, rng=np.random.default_rng(seed))
    head_cfg = LengthHeadConfig(dim=8, n_heads=2, ff_dim=16, mlp_dim=16, n_classes=n_classes)
    head = LengthHead(head_cfg, rng=np.random.default_rng(seed + 1), store=den.store)
    return den, head


class TestLengthDistribution:
    def test_top_k_orders_by_probability(self):
        lp = np.log(np.array([0.1, 0.4, 0.2, 0.3]))
        dist = LengthDistribution(log_probs=lp, trained=True)
        assert [n for n, _ in dist.top_k(4)] == [2, 4, 3, 1]

    def test_top_k_breaks_ties_toward_shorter(self):
        lp = np.log(np.full(5, 0.2))
        dist = LengthDistribution(log_probs=lp, trained=True)
        assert [n for n, _ in dist.top_k(3)] == [1, 2, 3]

    def test_top_k_mixed_ties(self):
        lp = np.log(np.array([0.2, 0.3, 0.2, 0.3]))
        dist = LengthDistribution(log_probs=lp, trained=True)
        assert [n for n, _ in dist.top_k(4)] == [2, 4, 1, 3]

    def test_top_k_caps_at_n_classes(self):
        lp = np.log(np.full(3, 1.0 / 3.0))
        dist = LengthDistribution(log_probs=lp, trained=True)
        assert len(dist.top_k(10)) == 3

    def test_rejects_nonpositive_k(self):
        dist = LengthDistribution(log_probs=np.log(np.full(3, 1.0 / 3.0)), trained=True)
        with pytest.raises(ValueError):
            dist.top_k(0)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="normalize"):
            LengthDistribution(log_probs=np.log(np.array([0.5, 0.9])), trained=True)

    def test_rejects_2d(self):
        with pytest.raises(ValueError, match="1-D"):
            LengthDistribution(log_probs=np.zeros((2, 2)), trained=True)


class TestLengthHeadConfig:
    def test_roundtrip(self):
        cfg = LengthHeadConfig(dim=8, n_heads=2, ff_dim=16, mlp_dim=12, n_classes=7)
        assert LengthHeadConfig.from_dict(cfg.to_dict()) == cfg

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ValueError, match="divisible"):
            LengthHeadConfig(dim=9, n_heads=2, ff_dim=16, mlp_dim=12, n_classes=7)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="positive"):
            LengthHeadConfig(dim=8, n_heads=2, ff_dim=16, mlp_dim=12, n_classes=0)


class TestPredictLength:
    def test_distribution_shape_and_normalization(self):
        den, head = tiny_pair(n_classes=6)
        dist = predict_length(np.array([A, B]), den, head)
        assert dist.n_classes == 6
        assert abs(np.exp(dist.log_probs).sum() - 1.0) < 1e-5
        assert dist.trained

    def test_trained_flag_passthrough(self):
        den, head = tiny_pair()
        dist = predict_length(np.array([A]), den, head, trained=False)
        assert not dist.trained

    def test_deterministic(self):
        den, head = tiny_pair()
        p = np.array([A, C, B])
        a = predict_length(p, den, head).log_probs
        b = predict_length(p, den, head).log_probs
        assert np.array_equal(a, b)

    def test_rejects_empty_prompt(self):
        den, head = tiny_pair()
        with pytest.raises(ValueError, match="non-empty"):
            predict_length(np.array([], dtype=np.int64), den, head)

    def test_rejects_prompt_at_capacity(self):
        den, head = tiny_pair(max_positions=4)
        with pytest.raises(ValueError, match="no room"):
            predict_length(np.array([A, B, C, A]), den, head)

    def test_feature_width_mismatch_rejected(self):
        den, _ = tiny_pair()
        head = LengthHead(LengthHeadConfig(dim=16, n_heads=2, ff_dim=16, mlp_dim=8, n_classes=3))
        with pytest.raises(ValueError, match="feature width"):
            predict_length(np.array([A]), den, head)

    def test_mean_pool_matches_all_real_mask(self):
        den, head = tiny_pair()
        toks = np.array([[A, B, MASK]])
        _, features = den.forward_batch(toks)
        bare = head.forward(features).data
        marked = head.forward(features, real=np.ones((1, 3), dtype=bool)).data
        assert np.max(np.abs(bare - marked)) < 1e-5


def fixed_length_dist(probs):
    def fake(prompt, denoiser, head, trained=True):
        return LengthDistribution(log_probs=np.log(np.asarray(probs, dtype=np.float64)),
                                  trained=trained)
    return fake


class TestLengthBeam:
    def test_oracle_length_bypasses_head(self):
        dist = TokenDistribution(((A, B),), (1.0,))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=16)
        sched = build_schedule(4, "linear")
        winner, cands = length_beam_generate(np.array([C]), den, sched, head=None,
                                             oracle_length=2)
        assert winner.length == 2
        assert list(winner.response) == [A, B]
        assert len(cands) == 1

    def test_rejects_missing_head_without_oracle(self):
        dist = TokenDistribution(((A,),), (1.0,))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=8)
        with pytest.raises(ValueError, match="length head"):
            length_beam_generate(np.array([C]), den, build_schedule(2, "linear"), head=None)

    def test_rejects_nonpositive_oracle_length(self):
        dist = TokenDistribution(((A,),), (1.0,))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=8)
        with pytest.raises(ValueError, match="positive"):
            length_beam_generate(np.array([C]), den, build_schedule(2, "linear"),
                                 head=None, oracle_length=0)

    def test_winner_is_best_scoring_candidate(self, monkeypatch):
        # length 1 decodes to a 60/40 marginal (mean committed score log 0.6),
        # length 2 decodes deterministically (score 0); the beam must pick 2
        dist = TokenDistribution(((A,), (B,), (C, C)), (0.3, 0.2, 0.5))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=16)
        monkeypatch.setattr(length_mod, "predict_length", fixed_length_dist([0.5, 0.5]))
        winner, cands = length_beam_generate(np.array([A]), den, build_schedule(3, "linear"),
                                             head=object(), n_beams=2)
        assert winner.length == 2
        assert list(winner.response) == [C, C]
        assert [c.length for c in cands] == [2, 1]
        assert abs(cands[1].score - np.log(0.6)) < 1e-12

    def test_exact_score_tie_prefers_shorter(self, monkeypatch):
        # both lengths decode deterministically, so both score exactly 0
        dist = TokenDistribution(((A,), (B, B)), (0.5, 0.5))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=16)
        monkeypatch.setattr(length_mod, "predict_length", fixed_length_dist([0.5, 0.5]))
        winner, cands = length_beam_generate(np.array([A]), den, build_schedule(3, "linear"),
                                             head=object(), n_beams=2)
        assert cands[0].score == cands[1].score == 0.0
        assert winner.length == 1

    def test_candidates_sorted_best_first(self, monkeypatch):
        dist = TokenDistribution(((A,), (B, B), (C, C, C)), (1 / 3, 1 / 3, 1 / 3))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=16)
        monkeypatch.setattr(length_mod, "predict_length", fixed_length_dist([0.2, 0.3, 0.5]))
        _, cands = length_beam_generate(np.array([A]), den, build_schedule(2, "linear"),
                                        head=object(), n_beams=3)
        scores = [c.score for c in cands]
        assert scores == sorted(scores, reverse=True)
        assert [c.length for c in cands] == [1, 2, 3]

    def test_over_capacity_candidates_warned_and_dropped(self, monkeypatch):
        dist = TokenDistribution(((A,), (B, B), (C, C, C)), (1 / 3, 1 / 3, 1 / 3))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=3)
        monkeypatch.setattr(length_mod, "predict_length", fixed_length_dist([0.1, 0.2, 0.7]))
        with pytest.warns(UserWarning, match="exceeds position capacity"):
            winner, cands = length_beam_generate(np.array([A]), den, build_schedule(2, "linear"),
                                                 head=object(), n_beams=3)
        assert {c.length for c in cands} == {1, 2}
        assert winner.length <= 2

    def test_all_candidates_over_capacity_rejected(self):
        dist = TokenDistribution(((A, B),), (1.0,))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=2)
        with pytest.raises(ValueError, match="capacity"), \
                warnings.catch_warnings():
            warnings.simplefilter("ignore")
            length_beam_generate(np.array([A, B]), den, build_schedule(2, "linear"),
                                 head=None, oracle_length=2)

    def test_candidate_fields_are_consistent(self):
        dist = TokenDistribution(((A, B), (B, A)), (0.7, 0.3))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=16)
        sched = build_schedule(4, "cosine")
        winner, _ = length_beam_generate(np.array([C]), den, sched, head=None,
                                         oracle_length=2)
        assert winner.response.shape == (winner.length,)
        assert len(winner.trace.steps) == sched.T + 1
        assert winner.trace.final_token_scores.shape == (winner.length,)
        assert winner.length_log_prob == 0.0

    def test_ancestral_mode_deterministic_under_seed(self):
        dist = TokenDistribution(((A, B), (B, A)), (0.5, 0.5))
        den = OracleDenoiser(dist, vocab_size=len(VOCAB), mask_id=MASK, max_positions=16)
        sched = build_schedule(6, "linear")
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(99)
            winner, _ = length_beam_generate(np.array([C]), den, sched, head=None,
                                             oracle_length=2, mode="ancestral", rng=rng)
            outs.append(list(winner.response))
        assert outs[0] == outs[1]
