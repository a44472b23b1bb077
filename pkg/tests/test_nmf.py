import numpy as np
import pytest

from topicchat.corpus import build_vocabulary
from topicchat.nmf import (
    TopicCode,
    TopicModel,
    align_topics,
    load_topic_model,
    nmf_factorize,
    save_topic_model,
    sparse_code,
    top_words,
    topic_code,
)


def make_model(W, tokens=None, k=100):
    V = W.shape[0]
    if tokens is None:
        tokens = ["<pad>", "<unk>", "<sos>", "<eos>"] + [
            f"word{i}" for i in range(V - 4)
        ]
    return TopicModel(W=W, tokens=tokens, membership_k=k)


class TestFactorize:
    def test_exact_rank_one(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(0.1, 2.0, size=12)
        v = rng.uniform(0.1, 2.0, size=9)
        X = np.outer(u, v)
        W, H, trace = nmf_factorize(X, r=1, max_iters=500, tol=0.0, seed=1)
        rel = np.linalg.norm(X - W @ H) / np.linalg.norm(X)
        assert rel <= 1e-6

    def test_zero_matrix(self):
        X = np.zeros((5, 4))
        W, H, trace = nmf_factorize(X, r=2, max_iters=10, tol=0.0, seed=0)
        assert all(t == 0.0 for t in trace)
        assert np.all(W @ H == 0)

    def test_planted_rank_four(self):
        # oracle: the planted factorization W0 @ H0 is an exact rank-4
        # nonnegative decomposition, so the optimum value is 0
        rng = np.random.default_rng(42)
        W0 = rng.uniform(0, 1, size=(20, 4))
        H0 = rng.uniform(0, 1, size=(4, 30))
        X = W0 @ H0
        W, H, trace = nmf_factorize(X, r=4, max_iters=2000, tol=0.0, seed=3)
        rel = np.linalg.norm(X - W @ H) / np.linalg.norm(X)
        assert rel <= 1e-3

    def test_monotone_objective(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(0, 1, size=(15, 10))
        _, _, trace = nmf_factorize(X, r=3, max_iters=300, tol=0.0, seed=5)
        diffs = np.diff(trace)
        assert np.all(diffs <= 1e-10)

    def test_nonnegative_after_every_update(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(0, 1, size=(12, 8))

        seen = []

        def check(it, W, H, obj):
            seen.append(it)
            assert np.all(W >= 0)
            assert np.all(H >= 0)

        nmf_factorize(X, r=3, max_iters=50, tol=0.0, seed=2, callback=check)
        assert len(seen) == 50

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0, 1, size=(10, 6))
        W1, H1, _ = nmf_factorize(X, r=2, max_iters=40, tol=0.0, seed=11)
        W2, H2, _ = nmf_factorize(X, r=2, max_iters=40, tol=0.0, seed=11)
        assert np.array_equal(W1, W2) and np.array_equal(H1, H2)

    def test_rejects_negative_input(self):
        X = np.array([[1.0, -0.1], [0.5, 2.0]])
        with pytest.raises(ValueError, match="nonnegative"):
            nmf_factorize(X, r=1)

    def test_rejects_bad_rank(self):
        X = np.ones((3, 4))
        with pytest.raises(ValueError, match="out of range"):
            nmf_factorize(X, r=5)
        with pytest.raises(ValueError, match="out of range"):
            nmf_factorize(X, r=0)


class TestTopWords:
    def test_single_support(self):
        W = np.zeros((8, 2))
        W[5, 0] = 3.0
        tokens = ["<pad>", "<unk>", "<sos>", "<eos>", "x", "flight", "y", "z"]
        model = make_model(W, tokens)
        assert top_words(model, 0, 10) == ["flight"]

    def test_truncates_to_support(self):
        W = np.zeros((6, 1))
        W[4, 0] = 1.0
        W[5, 0] = 2.0
        model = make_model(W)
        assert len(top_words(model, 0, 10)) == 2

    def test_descending_with_id_ties(self):
        W = np.zeros((7, 1))
        W[[4, 5, 6], 0] = [2.0, 3.0, 2.0]
        model = make_model(W)
        words = top_words(model, 0, 3)
        assert words == [model.tokens[5], model.tokens[4], model.tokens[6]]

    def test_out_of_range(self):
        model = make_model(np.ones((5, 2)))
        with pytest.raises(ValueError):
            top_words(model, 2, 3)


class TestTopicCode:
    def test_zero_question(self):
        model = make_model(np.random.default_rng(0).uniform(0, 1, (6, 3)))
        code = topic_code(np.zeros(6), model)
        assert np.all(code.k == 0)

    def test_orthogonal_single_word_topics(self):
        W = np.zeros((8, 4))
        for j in range(4):
            W[4 + j, j] = 0.5 + j
        model = make_model(W)
        q = np.zeros(8)
        q[6] = 2.0  # two occurrences of topic-2's word
        code = topic_code(q, model, normalize=False)
        expected = np.zeros(4)
        expected[2] = 2.0 * W[6, 2]
        np.testing.assert_allclose(code.k, expected)

    def test_hand_matvec_oracle(self):
        W = np.array([
            [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0],
            [1.0, 2.0],
        ])
        tokens = ["<pad>", "<unk>", "<sos>", "<eos>", "w"]
        model = TopicModel(W=W, tokens=tokens, membership_k=3)
        q = np.array([0.0, 0.0, 0.0, 0.0, 3.0])
        code = topic_code(q, model, normalize=False)
        # by hand: k = W^T q = [1*3, 2*3]
        np.testing.assert_allclose(code.k, [3.0, 6.0])
        normed = topic_code(q, model, normalize=True)
        np.testing.assert_allclose(normed.k, [3.0 / 9.0, 6.0 / 9.0])
        assert normed.k.sum() == pytest.approx(1.0)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        model = make_model(rng.uniform(0, 1, (10, 4)))
        q1 = rng.uniform(0, 2, 10)
        q2 = rng.uniform(0, 2, 10)
        a, b = 0.7, 1.3
        lhs = topic_code(a * q1 + b * q2, model, normalize=False).k
        rhs = a * topic_code(q1, model, normalize=False).k \
            + b * topic_code(q2, model, normalize=False).k
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_length_mismatch(self):
        model = make_model(np.ones((5, 2)))
        with pytest.raises(ValueError):
            topic_code(np.zeros(6), model)


class TestSparseCode:
    def test_unregularized_exact(self):
        # square invertible W with q in its nonnegative cone
        rng = np.random.default_rng(1)
        base = rng.uniform(0.2, 1.0, size=(4, 4))
        W = base + 4.0 * np.eye(4)  # diagonally dominant, well conditioned
        k_true = rng.uniform(0.3, 1.5, size=4)
        q = W @ k_true
        model = TopicModel(
            W=W, tokens=["<pad>", "<unk>", "<sos>", "<eos>"], membership_k=2,
        )
        k = sparse_code(q, model, lam=0.0, max_iters=2000, tol=1e-16)
        assert np.linalg.norm(q - W @ k) <= 1e-8

    def test_large_lambda_kills_everything(self):
        rng = np.random.default_rng(2)
        W = rng.uniform(0, 1, size=(6, 3))
        q = rng.uniform(0, 1, size=6)
        model = make_model(W)
        lam = 2.0 * np.max(np.abs(W.T @ q)) + 1e-9
        k = sparse_code(q, model, lam=lam)
        assert np.all(k == 0)

    def test_grid_search_oracle(self):
        rng = np.random.default_rng(5)
        W = rng.uniform(0, 1, size=(6, 2))
        q = rng.uniform(0, 1, size=6)
        lam = 0.1
        model = make_model(W)
        k = sparse_code(q, model, lam=lam, max_iters=2000, tol=1e-16)

        # brute-force oracle: evaluate the objective on a fine grid over
        # [0, 2]^2 using the expanded quadratic form
        grid = np.arange(0.0, 2.0 + 1e-12, 1e-3)
        G = W.T @ W
        c = W.T @ q
        qq = q @ q
        K1, K2 = np.meshgrid(grid, grid, indexing="ij")
        obj = (
            qq - 2 * (c[0] * K1 + c[1] * K2)
            + G[0, 0] * K1**2 + 2 * G[0, 1] * K1 * K2 + G[1, 1] * K2**2
            + lam * (K1 + K2)
        )
        best = obj.min()
        achieved = float(np.sum((q - W @ k) ** 2) + lam * np.abs(k).sum())
        assert achieved <= best + 1e-6

    def test_objective_never_increases(self):
        rng = np.random.default_rng(8)
        W = rng.uniform(0, 1, size=(10, 5))
        q = rng.uniform(0, 3, size=10)
        model = make_model(W)
        _, trace = sparse_code(q, model, lam=0.3, max_iters=100, tol=0.0,
                               return_trace=True)
        assert np.all(np.diff(trace) <= 1e-12)

    def test_negative_lambda_rejected(self):
        model = make_model(np.ones((5, 2)))
        with pytest.raises(ValueError):
            sparse_code(np.zeros(5), model, lam=-0.1)


class TestAlignTopics:
    def test_identity(self):
        vocab = build_vocabulary([["apple", "pear", "plum"]], cap=10)
        rng = np.random.default_rng(0)
        W = np.vstack([np.zeros((4, 2)), rng.uniform(0, 1, (3, 2))])
        model = TopicModel(W=W, tokens=list(vocab.tokens), membership_k=2)
        aligned = align_topics(model, vocab)
        np.testing.assert_array_equal(aligned.W, model.W)

    def test_disjoint_vocabularies_warn(self, caplog):
        topic_vocab = build_vocabulary([["xx", "yy"]], cap=10)
        chat_vocab = build_vocabulary([["aa", "bb"]], cap=10)
        W = np.vstack([np.zeros((4, 2)), np.ones((2, 2))])
        model = TopicModel(W=W, tokens=list(topic_vocab.tokens), membership_k=3)
        with caplog.at_level("WARNING"):
            aligned = align_topics(model, chat_vocab)
        assert np.all(aligned.W == 0)
        assert all(len(s) == 0 for s in aligned.topic_word_sets)
        assert any("no words" in rec.message for rec in caplog.records)

    def test_partial_overlap_mapping_oracle(self):
        topic_vocab = build_vocabulary([["ant", "bee", "cat", "dog"]], cap=10)
        chat_vocab = build_vocabulary([["bee", "dog", "emu"]], cap=10)
        rng = np.random.default_rng(1)
        W = np.vstack([np.zeros((4, 2)), rng.uniform(0.1, 1, (4, 2))])
        model = TopicModel(W=W, tokens=list(topic_vocab.tokens), membership_k=4)
        aligned = align_topics(model, chat_vocab)
        # explicit expected index map: token -> (old row, new row)
        mapping = {
            t: (topic_vocab.id_of(t), chat_vocab.id_of(t))
            for t in ["bee", "dog"]
        }
        expected = np.zeros((len(chat_vocab), 2))
        for old, new in mapping.values():
            expected[new] = W[old]
        np.testing.assert_array_equal(aligned.W, expected)
        assert aligned.tokens == chat_vocab.tokens


class TestTopicModelInvariants:
    def test_word_sets_subset_of_support(self):
        rng = np.random.default_rng(12)
        W = rng.uniform(0, 1, size=(20, 3))
        W[rng.random((20, 3)) < 0.5] = 0.0
        model = make_model(W, k=5)
        for j, word_set in enumerate(model.topic_word_sets):
            support = set(np.flatnonzero(W[:, j] > 0).tolist())
            assert word_set <= support
            assert len(word_set) == min(5, len(support))

    def test_rejects_negative_dictionary(self):
        with pytest.raises(ValueError):
            make_model(np.array([[1.0, -1.0]] * 5))

    def test_topic_code_type_rejects_negative(self):
        with pytest.raises(ValueError):
            TopicCode(k=np.array([0.1, -0.2]), normalized=False)


class TestTopicModelFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        W = rng.uniform(0, 1, size=(10, 4))
        W[rng.random((10, 4)) < 0.3] = 0.0
        model = make_model(W, k=3)
        model.source = "unit-test"
        path = tmp_path / "tm.json"
        save_topic_model(model, path)
        loaded = load_topic_model(path)
        assert np.array_equal(loaded.W, model.W)
        assert loaded.tokens == model.tokens
        assert loaded.topic_word_sets == model.topic_word_sets
        assert loaded.membership_k == model.membership_k
        assert loaded.source == "unit-test"

    def test_rejects_bad_version(self, tmp_path):
        import json

        path = tmp_path / "tm.json"
        model = make_model(np.ones((5, 1)))
        save_topic_model(model, path)
        payload = json.loads(path.read_text())
        payload["version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="version"):
            load_topic_model(path)
