"""Corpus ingestion: tokenization, vocabulary construction, padded
question-answer datasets, and document-term matrices with TF-IDF."""

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PAD, UNK, SOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<sos>", "<eos>")
NUM_RESERVED = len(RESERVED_TOKENS)

# words are runs of alphanumerics (apostrophes kept inside); every other
# non-space character becomes its own token
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*|[^\sa-z0-9]")


def tokenize(text):
    """Lowercase `text` and split it into word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bidirectional token<->id map with reserved PAD/UNK/SOS/EOS ids."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:NUM_RESERVED] != list(RESERVED_TOKENS):
            raise ValueError("vocabulary must start with the reserved tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self):
        return len(self.tokens)

    def id_of(self, token):
        return self.index.get(token, UNK)

    def token_of(self, idx):
        return self.tokens[idx]

    def content_hash(self):
        payload = json.dumps(self.tokens, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path):
        Path(path).write_text(
            json.dumps(self.tokens, ensure_ascii=False, indent=0), encoding="utf-8"
        )

    @classmethod
    def load(cls, path):
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocabulary(token_streams, cap):
    """Build a Vocabulary from the `cap` most frequent tokens.

    `cap` counts the four reserved tokens, so at most ``cap - 4`` corpus
    tokens are kept. Frequency ties break lexicographically, which makes
    the id assignment deterministic for a given corpus.
    """
    if cap < NUM_RESERVED:
        raise ValueError(f"cap must be >= {NUM_RESERVED}, got {cap}")
    counts = Counter()
    for stream in token_streams:
        counts.update(stream)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: cap - NUM_RESERVED]]
    return Vocabulary(list(RESERVED_TOKENS) + kept)


def encode_sentence(tokens, vocab, max_len, append_eos=True):
    """Encode tokens as ids padded to exactly `max_len`.

    Out-of-vocabulary tokens map to UNK. When `append_eos` is set one
    slot is reserved for the EOS terminator, so at most ``max_len - 1``
    tokens survive truncation.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    capacity = max_len - 1 if append_eos else max_len
    ids = [vocab.id_of(t) for t in tokens[:capacity]]
    if append_eos:
        ids.append(EOS)
    ids.extend([PAD] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def decode_ids(ids, vocab):
    """Strip PAD/SOS and everything from EOS on; return the tokens."""
    out = []
    for idx in np.asarray(ids).ravel():
        idx = int(idx)
        if idx == EOS:
            break
        if idx in (PAD, SOS):
            continue
        out.append(vocab.token_of(idx))
    return out


def bag_of_words(tokens, vocab):
    """Occurrence counts over the vocabulary; reserved ids stay zero."""
    counts = np.zeros(len(vocab), dtype=np.float64)
    for tok in tokens:
        idx = vocab.index.get(tok)
        if idx is not None and idx >= NUM_RESERVED:
            counts[idx] += 1.0
    return counts


@dataclass
class DocTermMatrix:
    """Sparse word-by-document count matrix (rows follow the vocabulary)."""

    counts: sp.csc_matrix
    doc_ids: list

    def __post_init__(self):
        if (self.counts < 0).nnz:
            raise ValueError("document-term matrix must be nonnegative")


def build_doc_term_matrix(documents, vocab, doc_ids=None, stop_words=()):
    """Stack bag-of-words columns for `documents` (token sequences)."""
    stop = set(stop_words)
    cols = []
    for doc in documents:
        tokens = [t for t in doc if t not in stop]
        cols.append(sp.csc_matrix(bag_of_words(tokens, vocab)).T)
    if cols:
        counts = sp.hstack(cols, format="csc")
    else:
        counts = sp.csc_matrix((len(vocab), 0))
    if doc_ids is None:
        doc_ids = list(range(counts.shape[1]))
    return DocTermMatrix(counts=counts, doc_ids=list(doc_ids))


def tfidf_transform(dtm):
    """Reweight counts by smoothed idf and L2-normalize each document.

    entry(w, d) = tf(w, d) * (ln((1 + n) / (1 + df(w))) + 1), then each
    column is scaled to unit L2 norm (all-zero columns stay zero).
    """
    X = dtm.counts.tocsc().astype(np.float64)
    n_docs = X.shape[1]
    if n_docs < 1:
        raise ValueError("need at least one document")
    df = (X > 0).sum(axis=1).A.ravel()
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    weighted = sp.diags(idf) @ X
    norms = np.sqrt(weighted.multiply(weighted).sum(axis=0)).A.ravel()
    norms[norms == 0.0] = 1.0
    weighted = weighted @ sp.diags(1.0 / norms)
    return DocTermMatrix(counts=weighted.tocsc(), doc_ids=list(dtm.doc_ids))


@dataclass
class QAPair:
    """One padded question/answer id pair."""

    question: np.ndarray
    answer: np.ndarray
    question_len: int
    answer_len: int


@dataclass
class QADataset:
    pairs: list
    vocab: Vocabulary
    question_max: int
    answer_max: int
    questions: np.ndarray = field(init=False)
    answers: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.pairs:
            self.questions = np.stack([p.question for p in self.pairs])
            self.answers = np.stack([p.answer for p in self.pairs])
        else:
            self.questions = np.zeros((0, self.question_max), dtype=np.int64)
            self.answers = np.zeros((0, self.answer_max), dtype=np.int64)

    def __len__(self):
        return len(self.pairs)


def make_qa_pair(q_text, a_text, vocab, q_max, a_max):
    q_tokens = tokenize(q_text)
    a_tokens = tokenize(a_text)
    question = encode_sentence(q_tokens, vocab, q_max, append_eos=True)
    answer = encode_sentence(a_tokens, vocab, a_max, append_eos=True)
    return QAPair(
        question=question,
        answer=answer,
        question_len=min(len(q_tokens), q_max - 1),
        answer_len=min(len(a_tokens), a_max - 1),
    )


def load_qa_pairs(path, vocab, q_max, a_max):
    """Read a JSONL file of {"q": ..., "a": ...} objects into a QADataset."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(record, dict) or "q" not in record or "a" not in record:
                raise ValueError(f"{path}: line {lineno} must be an object with 'q' and 'a'")
            pairs.append(make_qa_pair(record["q"], record["a"], vocab, q_max, a_max))
    return QADataset(pairs=pairs, vocab=vocab, question_max=q_max, answer_max=a_max)


def iter_qa_texts(path):
    """Yield (question, answer) text pairs from a QA JSONL file."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(record, dict) or "q" not in record or "a" not in record:
                raise ValueError(f"{path}: line {lineno} must be an object with 'q' and 'a'")
            yield record["q"], record["a"]


def load_topic_documents(path):
    """Load a topic corpus: a text file (one document per line) or a
    directory of .txt files (one document each). Returns (texts, doc_ids)."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.txt"))
        return [f.read_text(encoding="utf-8") for f in files], [f.name for f in files]
    texts = [ln for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return texts, list(range(len(texts)))
