import numpy as np
import pytest

from gmlm.tokens import CodecParams, SemanticSeq, TokenGrid
from gmlm.world import (
    DependencyMaskedError,
    WorldSpec,
    base_token,
    generate_corpus,
    generate_utterance,
    load_corpus,
    oracle_as_model,
    oracle_posterior,
    save_corpus,
)


def spec_with(p_noise=0.0, C=16, seed=0, G=2, N_q=2, S_v=16, P=8):
    params = CodecParams(groups=G, levels=N_q, codebook_size=C, latent_dim=G)
    return WorldSpec(params=params, semantic_vocab=S_v, speakers=P,
                     p_noise=p_noise, seed=seed)


def expected_tokens(spec, speaker, sem_ids, grid_tokens):
    """Base-token chain recomputed from emitted dependencies."""
    p = spec.params
    T = len(sem_ids)
    out = np.zeros((T, p.groups, p.levels), dtype=np.int32)
    for t in range(T):
        s = int(sem_ids[t])
        coarse = [int(grid_tokens[t, g, 0]) for g in range(p.groups)]
        for g in range(p.groups):
            out[t, g, 0] = base_token(spec, s, speaker, g, 0, tuple(coarse[:g]))
            for j in range(1, p.levels):
                out[t, g, j] = base_token(spec, s, speaker, g, j, tuple(coarse))
    return out


class TestGeneration:
    def test_noiseless_tokens_equal_base(self):
        spec = spec_with(p_noise=0.0, seed=3)
        utt = generate_utterance(spec, 20, np.random.default_rng(1))
        bases = expected_tokens(spec, utt.speaker, utt.sem.ids, utt.grid.tokens)
        assert np.array_equal(utt.grid.tokens, bases)

    def test_seed_determinism(self):
        spec = spec_with(p_noise=0.3, seed=5)
        a = generate_corpus(spec, 8, (4, 20))
        b = generate_corpus(spec, 8, (4, 20))
        for ua, ub in zip(a, b):
            assert ua.speaker == ub.speaker
            assert np.array_equal(ua.sem.ids, ub.sem.ids)
            assert np.array_equal(ua.grid.tokens, ub.grid.tokens)

    def test_seed_override_changes_corpus(self):
        spec = spec_with(p_noise=0.0, seed=5)
        a = generate_corpus(spec, 4, (10, 10))
        b = generate_corpus(spec, 4, (10, 10), seed=77)
        assert any(
            not np.array_equal(ua.grid.tokens, ub.grid.tokens) for ua, ub in zip(a, b)
        )

    def test_noise_rate_matches_model(self):
        # P(token == base) = (1 - p) + p/C = 0.5 + 0.5/4 = 0.625
        spec = spec_with(p_noise=0.5, C=4, seed=9)
        match = total = 0
        for utt in generate_corpus(spec, 320, (80, 80)):
            bases = expected_tokens(spec, utt.speaker, utt.sem.ids, utt.grid.tokens)
            match += (utt.grid.tokens == bases).sum()
            total += bases.size
        assert total >= 10**5
        assert abs(match / total - 0.625) < 0.01

    def test_bad_ranges(self):
        spec = spec_with()
        with pytest.raises(ValueError):
            generate_corpus(spec, 0, (4, 8))
        with pytest.raises(ValueError):
            generate_corpus(spec, 1, (1, 8))


class TestEntanglement:
    def test_group0_flip_changes_group1_base(self):
        spec = spec_with(C=16, seed=2)
        changed = 0
        trials = 1000
        rng = np.random.default_rng(0)
        for _ in range(trials):
            s = int(rng.integers(16))
            spk = int(rng.integers(8))
            a, b = rng.choice(16, size=2, replace=False)
            if base_token(spec, s, spk, 1, 0, (int(a),)) != base_token(
                spec, s, spk, 1, 0, (int(b),)
            ):
                changed += 1
        assert changed / trials > 0.5

    def test_group1_never_feeds_group0(self):
        # group 0's base takes no dependency argument at all
        spec = spec_with(C=16, seed=2)
        rng = np.random.default_rng(1)
        for _ in range(200):
            s, spk = int(rng.integers(16)), int(rng.integers(8))
            assert base_token(spec, s, spk, 0, 0, ()) == base_token(spec, s, spk, 0, 0, ())

    def test_fine_depends_on_both_coarse(self):
        spec = spec_with(C=16, seed=4)
        rng = np.random.default_rng(2)
        hits = 0
        for _ in range(500):
            s, spk = int(rng.integers(16)), int(rng.integers(8))
            c0, c1 = int(rng.integers(16)), int(rng.integers(16))
            alt = (c1 + 1) % 16
            if base_token(spec, s, spk, 0, 1, (c0, c1)) != base_token(
                spec, s, spk, 0, 1, (c0, alt)
            ):
                hits += 1
        assert hits / 500 > 0.5


class TestOracle:
    def test_point_mass_when_noiseless(self):
        spec = spec_with(p_noise=0.0, seed=7)
        utt = generate_utterance(spec, 6, np.random.default_rng(3))
        grid = utt.grid.copy()
        grid.mask[2, 1, 1] = True
        vec = oracle_posterior(spec, utt.speaker, utt.sem, grid, (2, 1, 1))
        assert vec[utt.grid.tokens[2, 1, 1]] == 1.0
        assert vec.sum() == pytest.approx(1.0)

    def test_noisy_posterior_shape(self):
        spec = spec_with(p_noise=0.5, C=4, seed=8)
        utt = generate_utterance(spec, 6, np.random.default_rng(4))
        grid = utt.grid.copy()
        grid.mask[0, 0, 0] = True
        vec = oracle_posterior(spec, utt.speaker, utt.sem, grid, (0, 0, 0))
        assert sorted(vec.tolist()) == pytest.approx([0.125, 0.125, 0.125, 0.625])

    def test_unmasked_query_rejected(self):
        spec = spec_with()
        utt = generate_utterance(spec, 4, np.random.default_rng(5))
        with pytest.raises(ValueError):
            oracle_posterior(spec, utt.speaker, utt.sem, utt.grid, (0, 0, 0))

    def test_masked_dependency_rejected(self):
        spec = spec_with()
        utt = generate_utterance(spec, 4, np.random.default_rng(6))
        grid = utt.grid.copy()
        grid.mask[1, 0, 0] = True  # coarse dependency of the fine cell
        grid.mask[1, 0, 1] = True
        with pytest.raises(DependencyMaskedError):
            oracle_posterior(spec, utt.speaker, utt.sem, grid, (1, 0, 1))

    def test_calibration_within_3_sigma(self):
        # empirical frequency of token==base under resolved dependencies
        spec = spec_with(p_noise=0.3, C=8, seed=10)
        p_match = 0.7 + 0.3 / 8
        match = total = 0
        for utt in generate_corpus(spec, 60, (40, 40)):
            grid = utt.grid.copy()
            for t in range(0, grid.T, 5):
                cell = (t, 1, 1)
                grid.mask[cell] = True
                vec = oracle_posterior(spec, utt.speaker, utt.sem, grid, cell)
                base = int(np.argmax(vec))
                match += int(utt.grid.tokens[cell] == base)
                total += 1
                grid.mask[cell] = False
        sigma = (p_match * (1 - p_match) / total) ** 0.5
        assert abs(match / total - p_match) < 3 * sigma


class TestOracleModel:
    def test_resolved_cells_match_posterior(self):
        spec = spec_with(p_noise=0.4, C=8, seed=11)
        utt = generate_utterance(spec, 5, np.random.default_rng(7))
        model = oracle_as_model(spec, utt.speaker)
        grid = utt.grid.copy()
        grid.mask[:, :, 1:] = True  # fine masked, coarse resolved
        cache = model.encode_prompt(utt.grid)
        logits = model.forward(utt.sem, grid, cache)
        for t in range(5):
            vec = oracle_posterior(spec, utt.speaker, utt.sem, grid, (t, 0, 1))
            assert np.allclose(np.exp(logits[t, 0, 1]), vec)

    def test_fully_masked_group0_is_marginal(self):
        spec = spec_with(p_noise=0.2, C=8, seed=12)
        utt = generate_utterance(spec, 4, np.random.default_rng(8))
        model = oracle_as_model(spec, utt.speaker)
        grid = utt.grid.copy()
        grid.mask[:] = True
        logits = model.forward(utt.sem, grid, model.encode_prompt(utt.grid))
        for t in range(4):
            base = base_token(spec, int(utt.sem.ids[t]), utt.speaker, 0, 0, ())
            vec = np.exp(logits[t, 0, 0])
            assert vec[base] == pytest.approx(0.8 + 0.2 / 8)

    def test_marginalization_matches_enumeration(self):
        # masked-dependency cells: compare against brute-force enumeration
        spec = spec_with(p_noise=0.25, C=4, seed=13)
        utt = generate_utterance(spec, 3, np.random.default_rng(9))
        model = oracle_as_model(spec, utt.speaker)
        grid = utt.grid.copy()
        grid.mask[:] = True
        logits = model.forward(utt.sem, grid, model.encode_prompt(utt.grid))
        C, p = 4, 0.25
        for t in range(3):
            s = int(utt.sem.ids[t])
            # group-1 coarse: sum over group-0 values
            base0 = base_token(spec, s, utt.speaker, 0, 0, ())
            dist0 = np.full(C, p / C)
            dist0[base0] += 1 - p
            expect = np.zeros(C)
            for v in range(C):
                b = base_token(spec, s, utt.speaker, 1, 0, (v,))
                d = np.full(C, p / C)
                d[b] += 1 - p
                expect += dist0[v] * d
            assert np.allclose(np.exp(logits[t, 1, 0]), expect)

    def test_rows_softmax_to_distributions(self):
        spec = spec_with(p_noise=0.1, seed=14)
        utt = generate_utterance(spec, 6, np.random.default_rng(10))
        model = oracle_as_model(spec, utt.speaker)
        grid = utt.grid.copy()
        grid.mask[:] = True
        logits = model.forward(utt.sem, grid, model.encode_prompt(utt.grid))
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        probs = e / e.sum(axis=-1, keepdims=True)
        assert np.all(np.isfinite(probs))
        assert np.allclose(probs.sum(axis=-1), 1.0)

    def test_counters(self):
        spec = spec_with(seed=15)
        utt = generate_utterance(spec, 4, np.random.default_rng(11))
        model = oracle_as_model(spec, utt.speaker)
        cache = model.encode_prompt(utt.grid)
        grid = utt.grid.copy()
        grid.mask[:] = True
        model.forward(utt.sem, grid, cache)
        model.forward(utt.sem, grid, cache)
        assert model.prompt_encodes == 1 and model.forwards == 2


class TestCorpusIO:
    def test_round_trip(self, tmp_path):
        spec = spec_with(p_noise=0.2, seed=16)
        corpus = generate_corpus(spec, 6, (4, 12))
        save_corpus(tmp_path / "corpus", corpus)
        manifest = (tmp_path / "corpus" / "manifest.txt").read_text().splitlines()
        assert len(manifest) == 6
        back = load_corpus(tmp_path / "corpus")
        for a, b in zip(corpus, back):
            assert a.speaker == b.speaker
            assert np.array_equal(a.sem.ids, b.sem.ids)
            assert np.array_equal(a.grid.tokens, b.grid.tokens)
