"""Nonnegative matrix factorization of the document-term matrix, topic
word sets, and topic codes for questions."""

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import persist
from .corpus import NUM_RESERVED

logger = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass
class TopicModel:
    """Nonnegative dictionary over a vocabulary plus per-topic word sets.

    `W` has one row per vocabulary word and one column per topic; the
    word set of topic j holds the ids of the top `membership_k`
    positive-weight entries of column j. `tokens` is the row vocabulary,
    needed to re-index the model onto a different vocabulary.
    """

    W: np.ndarray
    tokens: list
    membership_k: int
    source: str = ""
    topic_word_sets: list = field(default_factory=list)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be a 2-d matrix")
        if self.W.shape[0] != len(self.tokens):
            raise ValueError("W row count must match the token list")
        if np.any(self.W < 0):
            raise ValueError("W must be nonnegative")
        if not self.topic_word_sets:
            self.topic_word_sets = [
                top_weighted_ids(self.W[:, j], self.membership_k)
                for j in range(self.r)
            ]

    @property
    def r(self):
        return self.W.shape[1]

    @property
    def vocab_size(self):
        return self.W.shape[0]

    def membership_matrix(self):
        """Binary (V, r) matrix M with M[w, j] = 1 iff w is in topic set j."""
        M = np.zeros_like(self.W)
        for j, ids in enumerate(self.topic_word_sets):
            M[list(ids), j] = 1.0
        return M

    def content_hash(self):
        payload = {
            "tokens": self.tokens,
            "membership_k": self.membership_k,
            "source": self.source,
            "W": hashlib.sha256(np.ascontiguousarray(self.W).tobytes()).hexdigest(),
            "sets": [sorted(int(i) for i in s) for s in self.topic_word_sets],
        }
        return hashlib.sha256(
            json.dumps(payload, ensure_ascii=False).encode("utf-8")
        ).hexdigest()


@dataclass
class TopicCode:
    """Nonnegative topic-correlation vector for one question."""

    k: np.ndarray
    normalized: bool

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if np.any(self.k < 0):
            raise ValueError("topic code must be nonnegative")


def top_weighted_ids(column, k):
    """Ids of the k largest positive entries of `column`, ties by id."""
    column = np.asarray(column)
    nonzero = np.flatnonzero(column > 0)
    order = sorted(nonzero, key=lambda i: (-column[i], i))
    return set(int(i) for i in order[:k])


def nmf_factorize(X, r, max_iters=200, tol=1e-6, seed=0, callback=None):
    """Factorize a nonnegative matrix X ~ W @ H by multiplicative updates.

    Minimizes the squared Frobenius reconstruction error with the
    Lee-Seung update rules. Both factors start Uniform(0, 1) scaled by
    sqrt(mean(X) / r), so the run is deterministic for a given seed.

    Returns (W, H, trace) where trace[i] is the objective ||X - WH||_F^2
    before iteration i (trace[0] is the initial objective); the trace is
    nonincreasing up to tiny float slack. Stops early once the relative
    objective decrease falls below `tol`.
    """
    if sp.issparse(X):
        X = np.asarray(X.todense(), dtype=np.float64)
    else:
        X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    if np.any(X < 0):
        raise ValueError("X must be nonnegative entrywise")
    m, n = X.shape
    if not (1 <= r <= min(m, n)):
        raise ValueError(f"r={r} out of range [1, {min(m, n)}]")

    rng = np.random.default_rng(seed)
    scale = np.sqrt(X.mean() / r)
    W = rng.uniform(0.0, 1.0, size=(m, r)) * scale
    H = rng.uniform(0.0, 1.0, size=(r, n)) * scale

    def objective():
        diff = X - W @ H
        return float(np.sum(diff * diff))

    trace = [objective()]
    for it in range(max_iters):
        H *= (W.T @ X) / (W.T @ W @ H + _EPS)
        W *= (X @ H.T) / (W @ (H @ H.T) + _EPS)
        obj = objective()
        trace.append(obj)
        if callback is not None:
            callback(it, W, H, obj)
        prev = trace[-2]
        if prev <= 0.0 or (prev - obj) / prev < tol:
            break
    return W, H, trace


def build_topic_model(tfidf_dtm, vocab, r, membership_k=100, seed=0,
                      max_iters=500, tol=1e-7, source=""):
    """Run NMF on a TF-IDF document-term matrix and wrap the dictionary."""
    W, _, _ = nmf_factorize(tfidf_dtm.counts, r, max_iters=max_iters, tol=tol, seed=seed)
    return TopicModel(W=W, tokens=list(vocab.tokens), membership_k=membership_k,
                      source=source)


def top_words(model, j, k, vocab=None):
    """The k heaviest words of topic j, descending weight, ties by id."""
    if not (0 <= j < model.r):
        raise ValueError(f"topic index {j} out of range [0, {model.r})")
    tokens = vocab.tokens if vocab is not None else model.tokens
    column = model.W[:, j]
    nonzero = np.flatnonzero(column > 0)
    order = sorted(nonzero, key=lambda i: (-column[i], i))
    return [tokens[i] for i in order[:k]]


def topic_code(q_bow, model, normalize=True):
    """Correlation of a question bag-of-words with every topic column."""
    q_bow = np.asarray(q_bow, dtype=np.float64)
    if q_bow.shape != (model.vocab_size,):
        raise ValueError(
            f"bag-of-words length {q_bow.shape} does not match vocabulary "
            f"size {model.vocab_size}"
        )
    if np.any(q_bow < 0):
        raise ValueError("bag-of-words must be nonnegative")
    k = model.W.T @ q_bow
    if normalize:
        total = k.sum()
        if total > 0:
            k = k / total
    return TopicCode(k=k, normalized=normalize)


def sparse_code(q, model, lam, max_iters=500, tol=1e-12, return_trace=False):
    """L1-regularized nonnegative coding of `q` against the dictionary.

    Minimizes ||q - W k||^2 + lam * ||k||_1 over k >= 0 by cyclic
    coordinate descent with soft thresholding; the objective never
    increases across sweeps. Returns the coefficient vector (and the
    per-sweep objective trace when `return_trace` is set).
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    q = np.asarray(q, dtype=np.float64)
    W = model.W
    if q.shape != (W.shape[0],):
        raise ValueError("q length does not match dictionary rows")
    r = W.shape[1]
    col_sq = np.einsum("ij,ij->j", W, W)
    k = np.zeros(r)
    residual = q.copy()

    def objective():
        return float(residual @ residual + lam * np.abs(k).sum())

    trace = [objective()]
    for _ in range(max_iters):
        for j in range(r):
            if col_sq[j] == 0.0:
                continue
            wj = W[:, j]
            rho = wj @ residual + col_sq[j] * k[j]
            new_kj = max(0.0, (rho - lam / 2.0) / col_sq[j])
            if new_kj != k[j]:
                residual += wj * (k[j] - new_kj)
                k[j] = new_kj
        trace.append(objective())
        if trace[-2] - trace[-1] < tol:
            break
    if return_trace:
        return k, trace
    return k


def align_topics(model, chat_vocab):
    """Re-index a topic model's rows onto the chatbot vocabulary.

    Words absent from the topic corpus get zero rows; word sets are
    recomputed in the new id space.
    """
    V = len(chat_vocab)
    W_aligned = np.zeros((V, model.r))
    overlap = 0
    for row, token in enumerate(model.tokens):
        if row < NUM_RESERVED:
            continue
        new_row = chat_vocab.index.get(token)
        if new_row is not None and new_row >= NUM_RESERVED:
            W_aligned[new_row] = model.W[row]
            overlap += 1
    if overlap == 0:
        logger.warning(
            "topic model %r shares no words with the chatbot vocabulary; "
            "all topic rows are zero", model.source,
        )
    return TopicModel(
        W=W_aligned,
        tokens=list(chat_vocab.tokens),
        membership_k=model.membership_k,
        source=model.source,
    )


TOPIC_FILE_VERSION = 1


def save_topic_model(model, path):
    vocab_hash = hashlib.sha256(
        json.dumps(model.tokens, ensure_ascii=False).encode("utf-8")
    ).hexdigest()
    payload = {
        "version": TOPIC_FILE_VERSION,
        "V": model.vocab_size,
        "r": model.r,
        "K": model.membership_k,
        "source": model.source,
        "vocab_hash": vocab_hash,
        "tokens": model.tokens,
        "W": persist.array_to_blob(model.W),
        "topic_word_sets": [sorted(int(i) for i in s) for s in model.topic_word_sets],
    }
    persist.dump_json_file(payload, path)


def load_topic_model(path):
    payload = persist.load_json_file(path)
    if payload.get("version") != TOPIC_FILE_VERSION:
        raise ValueError(
            f"{path}: unsupported topic model version {payload.get('version')!r}"
        )
    model = TopicModel(
        W=persist.array_from_blob(payload["W"]),
        tokens=payload["tokens"],
        membership_k=payload["K"],
        source=payload.get("source", ""),
        topic_word_sets=[set(ids) for ids in payload["topic_word_sets"]],
    )
    if model.r != payload["r"] or model.vocab_size != payload["V"]:
        raise ValueError(f"{path}: header dimensions disagree with the stored matrix")
    return model
