"""Response generation: greedy decoding, the Metropolis-Hastings word
sampler over unnormalized scores, and the corpus-marginal proposal
distributions the chain draws from."""

from dataclasses import dataclass, field

import numpy as np

from . import seq2seq
from .corpus import EOS, NUM_RESERVED, PAD, SOS, decode_ids, encode_sentence, tokenize
from .nmf import topic_code


@dataclass
class ProposalTable:
    """Per-position word marginals of the answer corpus, add-one smoothed
    so every word has positive proposal probability."""

    rows: np.ndarray  # (answer_len, V)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if np.any(self.rows <= 0):
            raise ValueError("proposal rows must be strictly positive")
        sums = self.rows.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("proposal rows must each sum to 1")


def build_proposal_table(answers, vocab, answer_len):
    """Position-wise add-one-smoothed marginals from padded answer rows."""
    if hasattr(answers, "answers"):
        answers = answers.answers
    answers = np.asarray(answers, dtype=np.int64)
    if answers.size == 0:
        raise ValueError("answer corpus is empty")
    V = len(vocab)
    counts = np.zeros((answer_len, V))
    for row in answers:
        for i in range(min(len(row), answer_len)):
            if row[i] != PAD:
                counts[i, row[i]] += 1.0
    smoothed = counts + 1.0
    return ProposalTable(rows=smoothed / smoothed.sum(axis=1, keepdims=True))


@dataclass
class GenerationResult:
    token_ids: list
    text: str
    topic_attention: list
    message_attention: list
    code: np.ndarray | None
    topic_word_flags: list = field(default_factory=list)

    def topic_words_used(self, vocab):
        seen, words = set(), []
        for idx, flag in zip(self.token_ids, self.topic_word_flags):
            if flag and idx not in seen:
                seen.add(idx)
                words.append(vocab.token_of(idx))
        return words


def mh_chain(psi, proposal, steps, rng, init=None):
    """Run a Metropolis-Hastings independence chain over word ids.

    Proposals are drawn from `proposal`; a move from w to w' is accepted
    with lambda = min(psi(w') p(w) / (psi(w) p(w')), 1), which needs only
    the unnormalized scores psi. Returns the state after every step.
    """
    psi = np.asarray(psi, dtype=np.float64)
    proposal = np.asarray(proposal, dtype=np.float64)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if np.any(proposal <= 0):
        raise ValueError("proposal must be strictly positive everywhere")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    state = int(np.argmax(psi)) if init is None else int(init)
    candidates = rng.choice(len(psi), size=steps, p=proposal / proposal.sum())
    uniforms = rng.random(steps)
    states = np.empty(steps, dtype=np.int64)
    for i in range(steps):
        cand = int(candidates[i])
        den = psi[state] * proposal[cand]
        num = psi[cand] * proposal[state]
        lam = 1.0 if den <= 0.0 else min(num / den, 1.0)
        assert 0.0 <= lam <= 1.0
        if uniforms[i] < lam:
            state = cand
        states[i] = state
    return states


def mh_sample_word(target, proposal, steps, seed, init=None):
    """Final state of an MH chain targeting the given distribution.

    `target` is a PredictedDistribution; the chain uses its unnormalized
    scores, so the normalization constant is never computed. The chain
    starts at `init` (default: the argmax word).
    """
    psi = np.asarray(target.unnormalized, dtype=np.float64).ravel()
    states = mh_chain(psi, proposal, steps, seed, init=init)
    return int(states[-1])


def _question_code(q_ids, topic):
    counts = np.zeros(topic.vocab_size)
    for idx in q_ids:
        if idx >= NUM_RESERVED:
            counts[idx] += 1.0
    return topic_code(counts, topic, normalize=True).k


def _decode_loop(bundle, question, choose_word, max_steps=None):
    """Shared forward loop; `choose_word` maps (step, PredictedDistribution)
    to a word id."""
    config, params, vocab = bundle.config, bundle.params, bundle.vocab
    topic = bundle.topic_model
    p = params.values

    q_tokens = tokenize(question)
    q_ids = encode_sentence(q_tokens, vocab, config.question_len, append_eos=True)
    enc_states, _ = seq2seq._encode_forward(q_ids[None, :], p, config)
    h_last = enc_states[:, -1]

    code = bias = None
    active = False
    Wcols = proj = None
    if topic is not None:
        code = _question_code(q_ids, topic)
        active = bool(code.sum() > 0)
        bias = (code @ topic.membership_matrix().T)[None, :]
        Wcols = topic.W.T
        proj = Wcols @ p["atto_proj"]

    pad_mask = (q_ids[None, :] != PAD) if config.mask_pad_attention else None
    steps = max_steps or config.answer_len
    s = h_last
    prev_ids = np.array([SOS], dtype=np.int64)
    prev_vec = None
    token_ids, flags, msg_att, top_att = [], [], [], []

    for t in range(steps):
        prev = prev_vec if (config.feed_distribution and prev_vec is not None) else prev_ids
        c, alpha_c, _ = seq2seq._attn_c_forward(s, enc_states, p, pad_mask=pad_mask)
        if topic is not None and active:
            o, alpha_o, _ = seq2seq._attn_o_forward(s, proj, Wcols, h_last, p)
        else:
            o = np.zeros((1, config.vocab_size))
            alpha_o = None
        s_new, _ = seq2seq._dec_state_forward(prev, s, c, o, p)
        psi, probs, _ = seq2seq._output_forward(
            s_new, prev, c, o, bias, p,
            sigmoid_scores=config.sigmoid_scores,
            with_topic=topic is not None and active,
        )
        dist = seq2seq.PredictedDistribution(probs=probs[0], unnormalized=psi[0])
        chosen = int(choose_word(t, dist))
        if chosen in (EOS, PAD, SOS):
            break
        token_ids.append(chosen)
        flags.append(bool(bias is not None and bias[0, chosen] > 0))
        msg_att.append(alpha_c[0].tolist())
        top_att.append(alpha_o[0].tolist() if alpha_o is not None else [])
        prev_ids = np.array([chosen], dtype=np.int64)
        prev_vec = probs
        s = s_new

    text = " ".join(decode_ids(token_ids, vocab))
    return GenerationResult(
        token_ids=token_ids, text=text, topic_attention=top_att,
        message_attention=msg_att, code=code, topic_word_flags=flags,
    )


def generate_greedy(question, bundle, max_steps=None):
    """Deterministic decode: the most probable word at every step, ties
    resolved toward the lowest id; stops at the first EOS."""
    return _decode_loop(
        bundle, question,
        lambda t, dist: int(np.argmax(dist.probs)),
        max_steps=max_steps,
    )


def generate_mh(question, bundle, proposal_table=None, steps=50, seed=0,
                max_steps=None):
    """Decode by running an MH chain at every position, initialized at
    the greedy word and proposing from the position's corpus marginal."""
    table = proposal_table if proposal_table is not None else bundle.proposal
    rng = np.random.default_rng(seed)

    def choose(t, dist):
        row = table.rows[min(t, len(table.rows) - 1)]
        greedy = int(np.argmax(dist.probs))
        return mh_sample_word(dist, row, steps, rng, init=greedy)

    return _decode_loop(bundle, question, choose, max_steps=max_steps)
