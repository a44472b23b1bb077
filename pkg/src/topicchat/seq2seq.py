"""GRU encoder-decoder with message attention, topic attention, and a
topic-biased output distribution.

Forward operations come in two layers: public functions matching the
model equations (accepting single vectors or batches), and cached
``_*_forward`` / ``_*_backward`` pairs used by the training loop. All
gradients are hand-derived reverse mode and validated against central
finite differences (see numkernel.fd_gradient_check).

Array layout: weights are (in, out) so activations compute as
``x @ W + b``; lookup matrices are indexed by token id row.
"""

from dataclasses import dataclass, field

import numpy as np

from .corpus import PAD, SOS
from .nmf import TopicCode
from .numkernel import check_finite, init_params, sigmoid, softmax


@dataclass
class ModelConfig:
    vocab_size: int
    hidden_dim: int = 64
    question_len: int = 25
    answer_len: int = 25
    num_topics: int = 0
    attention_dim: int = 64
    dropout: float = 0.1
    membership_k: int = 100
    feed_distribution: bool = False
    mask_pad_attention: bool = False
    sigmoid_scores: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "hidden_dim", "question_len", "answer_len",
                     "attention_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_topics < 0:
            raise ValueError("num_topics must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "question_len": self.question_len,
            "answer_len": self.answer_len,
            "num_topics": self.num_topics,
            "attention_dim": self.attention_dim,
            "dropout": self.dropout,
            "membership_k": self.membership_k,
            "feed_distribution": self.feed_distribution,
            "mask_pad_attention": self.mask_pad_attention,
            "sigmoid_scores": self.sigmoid_scores,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_spec(config):
    """Names and shapes of every trainable tensor.

    The layout is independent of the topic count, so topic-aware and
    non-topic models built from the same seed share identical initial
    parameters (the non-topic model simply never touches the topic
    attention and topic output tensors).
    """
    V, d, a = config.vocab_size, config.hidden_dim, config.attention_dim
    spec = [("embed", (V, d))]
    for gate in ("z", "r", "h"):
        spec += [(f"enc_W{gate}", (d, d)), (f"enc_U{gate}", (d, d)),
                 (f"enc_b{gate}", (d,))]
    spec += [("attc_Ws", (d, a)), ("attc_Wh", (d, a)), ("attc_b", (a,)),
             ("attc_v", (a,))]
    spec += [("atto_proj", (V, a)), ("atto_Ws", (d, a)), ("atto_Wt", (a, a)),
             ("atto_Wl", (d, a)), ("atto_b", (a,)), ("atto_v", (a,))]
    spec += [("dec_Wp", (V, d)), ("dec_Ws", (d, d)), ("dec_Wc", (d, d)),
             ("dec_Wo", (V, d)), ("dec_b", (d,))]
    spec += [("outc_Ws", (d, V)), ("outc_Wp", (V, V)), ("outc_Wc", (d, V)),
             ("outc_b", (V,))]
    spec += [("outo_Ws", (d, V)), ("outo_Wp", (V, V)), ("outo_Wo", (V, V)),
             ("outo_b", (V,))]
    return spec


def build_params(config, seed):
    return init_params(param_spec(config), seed)


@dataclass
class EncoderOutput:
    """Hidden states h_1..h_l of the encoder, batch-last-state handy."""

    states: np.ndarray  # (..., l, d)

    @property
    def last(self):
        return self.states[..., -1, :]


@dataclass
class DecoderState:
    s: np.ndarray
    t: int
    prev_output: np.ndarray | None = None

    @classmethod
    def initial(cls, encoder_output):
        # s_0 is the last encoder hidden state by construction
        return cls(s=np.array(encoder_output.last, copy=True), t=0)


@dataclass
class PredictedDistribution:
    """Normalized word distribution plus the unnormalized psi scores."""

    probs: np.ndarray
    unnormalized: np.ndarray

    def validate(self, atol=1e-9):
        sums = self.probs.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=atol):
            raise AssertionError(f"probabilities sum to {sums}, expected 1")
        if np.any(self.probs < 0):
            raise AssertionError("negative probability entry")


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _unbatch(x, was_1d):
    return x[0] if was_1d else x


# ----------------------------------------------------------------------
# GRU cell
# ----------------------------------------------------------------------

def _gru_forward(x, h_prev, p, pfx="enc"):
    z = sigmoid(x @ p[f"{pfx}_Wz"] + h_prev @ p[f"{pfx}_Uz"] + p[f"{pfx}_bz"])
    r = sigmoid(x @ p[f"{pfx}_Wr"] + h_prev @ p[f"{pfx}_Ur"] + p[f"{pfx}_br"])
    g = np.tanh(x @ p[f"{pfx}_Wh"] + (h_prev * r) @ p[f"{pfx}_Uh"] + p[f"{pfx}_bh"])
    h = (1.0 - z) * g + z * h_prev
    return h, (x, h_prev, z, r, g)


def _gru_backward(dh, cache, p, grads, pfx="enc"):
    x, h_prev, z, r, g = cache
    dz = dh * (h_prev - g)
    dg = dh * (1.0 - z)
    dh_prev = dh * z

    dg_pre = dg * (1.0 - g * g)
    grads[f"{pfx}_Wh"] += x.T @ dg_pre
    grads[f"{pfx}_bh"] += dg_pre.sum(axis=0)
    dx = dg_pre @ p[f"{pfx}_Wh"].T
    dhr = dg_pre @ p[f"{pfx}_Uh"].T
    grads[f"{pfx}_Uh"] += (h_prev * r).T @ dg_pre
    dh_prev += dhr * r
    dr = dhr * h_prev

    dr_pre = dr * r * (1.0 - r)
    grads[f"{pfx}_Wr"] += x.T @ dr_pre
    grads[f"{pfx}_Ur"] += h_prev.T @ dr_pre
    grads[f"{pfx}_br"] += dr_pre.sum(axis=0)
    dx += dr_pre @ p[f"{pfx}_Wr"].T
    dh_prev += dr_pre @ p[f"{pfx}_Ur"].T

    dz_pre = dz * z * (1.0 - z)
    grads[f"{pfx}_Wz"] += x.T @ dz_pre
    grads[f"{pfx}_Uz"] += h_prev.T @ dz_pre
    grads[f"{pfx}_bz"] += dz_pre.sum(axis=0)
    dx += dz_pre @ p[f"{pfx}_Wz"].T
    dh_prev += dz_pre @ p[f"{pfx}_Uz"].T
    return dx, dh_prev


def gru_step(x, h_prev, params):
    """One GRU step: update/reset gates, candidate state, interpolation."""
    x, was_1d = _as_batch(x)
    h_prev, _ = _as_batch(h_prev)
    if x.shape != h_prev.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs h_prev {h_prev.shape}")
    h, _ = _gru_forward(x, h_prev, params.values)
    check_finite("gru_step", h)
    return _unbatch(h, was_1d)


# ----------------------------------------------------------------------
# Encoder
# ----------------------------------------------------------------------

def _encode_forward(q_ids, p, config, emb_dropout_mask=None):
    B, length = q_ids.shape
    X = p["embed"][q_ids]
    if emb_dropout_mask is not None:
        X = X * emb_dropout_mask
    h = np.zeros((B, config.hidden_dim))
    states = np.empty((B, length, config.hidden_dim))
    caches = []
    for i in range(length):
        h, cache = _gru_forward(X[:, i], h, p)
        states[:, i] = h
        caches.append(cache)
    return states, caches


def _encode_backward(dstates, caches, q_ids, p, grads, config,
                     emb_dropout_mask=None):
    B, length = q_ids.shape
    dX = np.empty((B, length, config.hidden_dim))
    dh = np.zeros((B, config.hidden_dim))
    for i in reversed(range(length)):
        dh = dh + dstates[:, i]
        dx, dh = _gru_backward(dh, caches[i], p, grads)
        dX[:, i] = dx
    if emb_dropout_mask is not None:
        dX = dX * emb_dropout_mask
    np.add.at(grads["embed"], q_ids.reshape(-1), dX.reshape(-1, config.hidden_dim))


def encode(question_ids, params, config):
    """Run the encoder over a padded question; h_0 = 0, PAD positions
    advance the recurrence."""
    q_ids = np.asarray(question_ids, dtype=np.int64)
    was_1d = q_ids.ndim == 1
    if was_1d:
        q_ids = q_ids[None, :]
    if q_ids.shape[1] != config.question_len:
        raise ValueError(
            f"question length {q_ids.shape[1]} != configured {config.question_len}"
        )
    if q_ids.min() < 0 or q_ids.max() >= config.vocab_size:
        raise ValueError("token id out of vocabulary range")
    states, _ = _encode_forward(q_ids, params.values, config)
    return EncoderOutput(states=states[0] if was_1d else states)


# ----------------------------------------------------------------------
# Message attention
# ----------------------------------------------------------------------

def _attn_c_forward(s_prev, H, p, pad_mask=None):
    a1 = s_prev @ p["attc_Ws"]                       # (B, a)
    a2 = H @ p["attc_Wh"]                            # (B, l, a)
    u = np.tanh(a1[:, None, :] + a2 + p["attc_b"])
    xi = u @ p["attc_v"]                             # (B, l)
    if pad_mask is not None:
        xi = np.where(pad_mask, xi, -1e30)
    alpha = softmax(xi, axis=1)
    c = np.einsum("bl,bld->bd", alpha, H)
    return c, alpha, (s_prev, H, u, alpha)


def _attn_c_backward(dc, cache, p, grads):
    s_prev, H, u, alpha = cache
    dalpha = np.einsum("bd,bld->bl", dc, H)
    dH = alpha[:, :, None] * dc[:, None, :]
    dxi = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
    grads["attc_v"] += np.einsum("bla,bl->a", u, dxi)
    du = dxi[:, :, None] * p["attc_v"]
    du_pre = du * (1.0 - u * u)
    da1 = du_pre.sum(axis=1)
    grads["attc_Ws"] += s_prev.T @ da1
    ds_prev = da1 @ p["attc_Ws"].T
    grads["attc_Wh"] += np.einsum("bld,bla->da", H, du_pre)
    dH += du_pre @ p["attc_Wh"].T
    grads["attc_b"] += du_pre.sum(axis=(0, 1))
    return ds_prev, dH


def message_attention(s_prev, enc_states, params, pad_mask=None):
    """Additive attention over encoder states; returns (c_t, weights)."""
    s_prev, was_1d = _as_batch(s_prev)
    H = np.asarray(enc_states, dtype=np.float64)
    if H.ndim == 2:
        H = H[None, :, :]
    c, alpha, _ = _attn_c_forward(s_prev, H, params.values, pad_mask=pad_mask)
    check_finite("message_attention", c, alpha)
    return _unbatch(c, was_1d), _unbatch(alpha, was_1d)


# ----------------------------------------------------------------------
# Topic attention
# ----------------------------------------------------------------------

def _attn_o_forward(s_prev, proj, Wcols, h_last, p):
    a1 = s_prev @ p["atto_Ws"]                       # (B, a)
    a2 = proj @ p["atto_Wt"]                         # (r, a)
    a3 = h_last @ p["atto_Wl"]                       # (B, a)
    u = np.tanh(a1[:, None, :] + a2[None, :, :] + a3[:, None, :] + p["atto_b"])
    xi = u @ p["atto_v"]                             # (B, r)
    alpha = softmax(xi, axis=1)
    o = alpha @ Wcols                                # (B, V)
    return o, alpha, (s_prev, proj, Wcols, h_last, u, alpha)


def _attn_o_backward(do, cache, p, grads):
    s_prev, proj, Wcols, h_last, u, alpha = cache
    dalpha = do @ Wcols.T
    dxi = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
    grads["atto_v"] += np.einsum("bra,br->a", u, dxi)
    du = dxi[:, :, None] * p["atto_v"]
    du_pre = du * (1.0 - u * u)
    da = du_pre.sum(axis=1)
    grads["atto_Ws"] += s_prev.T @ da
    ds_prev = da @ p["atto_Ws"].T
    grads["atto_Wl"] += h_last.T @ da
    dh_last = da @ p["atto_Wl"].T
    da2 = du_pre.sum(axis=0)                         # (r, a)
    grads["atto_Wt"] += proj.T @ da2
    dproj = da2 @ p["atto_Wt"].T
    grads["atto_b"] += du_pre.sum(axis=(0, 1))
    return ds_prev, dh_last, dproj


def topic_attention(s_prev, topic_matrix, h_last, params):
    """Attention over topic columns conditioned on the decoder state and
    the last encoder state; returns (o_t in word space, weights)."""
    s_prev, was_1d = _as_batch(s_prev)
    h_last, _ = _as_batch(h_last)
    W = np.asarray(topic_matrix, dtype=np.float64)
    Wcols = W.T                                      # (r, V)
    proj = Wcols @ params.values["atto_proj"]
    o, alpha, _ = _attn_o_forward(s_prev, proj, Wcols, h_last, params.values)
    check_finite("topic_attention", o, alpha)
    return _unbatch(o, was_1d), _unbatch(alpha, was_1d)


# ----------------------------------------------------------------------
# Decoder state update
# ----------------------------------------------------------------------

def _prev_is_ids(prev):
    return np.asarray(prev).ndim == 1 and np.issubdtype(np.asarray(prev).dtype, np.integer)


def _dec_state_forward(prev, s_prev, c, o, p):
    if _prev_is_ids(prev):
        base = p["dec_Wp"][prev]
    else:
        base = prev @ p["dec_Wp"]
    pre = base + s_prev @ p["dec_Ws"] + c @ p["dec_Wc"] + o @ p["dec_Wo"] + p["dec_b"]
    s = sigmoid(pre)
    return s, (prev, s_prev, c, o, s)


def _dec_state_backward(ds, cache, p, grads):
    prev, s_prev, c, o, s = cache
    dpre = ds * s * (1.0 - s)
    if _prev_is_ids(prev):
        np.add.at(grads["dec_Wp"], prev, dpre)
    else:
        grads["dec_Wp"] += prev.T @ dpre
    grads["dec_Ws"] += s_prev.T @ dpre
    ds_prev = dpre @ p["dec_Ws"].T
    grads["dec_Wc"] += c.T @ dpre
    dc = dpre @ p["dec_Wc"].T
    grads["dec_Wo"] += o.T @ dpre
    do = dpre @ p["dec_Wo"].T
    grads["dec_b"] += dpre.sum(axis=0)
    return ds_prev, dc, do


def decoder_step(prev_output, s_prev, c_t, o_t, params):
    """Next decoder hidden state from the previous prediction, previous
    state, message attention, and topic attention."""
    prev_output, _ = _as_batch(prev_output)
    s_prev, was_1d = _as_batch(s_prev)
    c_t, _ = _as_batch(c_t)
    o_t, _ = _as_batch(o_t)
    s, _ = _dec_state_forward(prev_output, s_prev, c_t, o_t, params.values)
    check_finite("decoder_step", s)
    return _unbatch(s, was_1d)


# ----------------------------------------------------------------------
# Predicted distribution
# ----------------------------------------------------------------------

def _output_forward(s_out, prev, c, o, bias, p, sigmoid_scores=True,
                    with_topic=True):
    if _prev_is_ids(prev):
        prev_c = p["outc_Wp"][prev]
        prev_o = p["outo_Wp"][prev] if with_topic else None
    else:
        prev_c = prev @ p["outc_Wp"]
        prev_o = prev @ p["outo_Wp"] if with_topic else None
    pre_c = s_out @ p["outc_Ws"] + prev_c + c @ p["outc_Wc"] + p["outc_b"]
    psi_c = sigmoid(pre_c) if sigmoid_scores else pre_c
    if with_topic:
        pre_o = s_out @ p["outo_Ws"] + prev_o + o @ p["outo_Wo"] + p["outo_b"]
        psi_o = sigmoid(pre_o) if sigmoid_scores else pre_o
    else:
        pre_o = psi_o = None
    if sigmoid_scores:
        shift = None
        exp_c = np.exp(psi_c)
        exp_o = np.exp(psi_o) if with_topic else None
    else:
        # raw-logit ablation: shift per row for stability; the shift scales
        # psi uniformly, so probabilities and score ratios are unaffected
        shift = psi_c.max(axis=1, keepdims=True)
        if with_topic:
            shift = np.maximum(shift, psi_o.max(axis=1, keepdims=True))
        exp_c = np.exp(psi_c - shift)
        exp_o = np.exp(psi_o - shift) if with_topic else None
    psi = exp_c + bias * exp_o if with_topic else exp_c
    total = psi.sum(axis=1, keepdims=True)
    probs = psi / total
    cache = (prev, s_out, c, o, bias, psi_c, psi_o, exp_c, exp_o, psi, total,
             sigmoid_scores, with_topic)
    return psi, probs, cache


def _output_backward(dpsi, cache, p, grads):
    (prev, s_out, c, o, bias, psi_c, psi_o, exp_c, exp_o, psi, total,
     sigmoid_scores, with_topic) = cache
    dpsi_c_score = dpsi * exp_c
    dpre_c = dpsi_c_score * psi_c * (1.0 - psi_c) if sigmoid_scores else dpsi_c_score
    grads["outc_Ws"] += s_out.T @ dpre_c
    ds_out = dpre_c @ p["outc_Ws"].T
    if _prev_is_ids(prev):
        np.add.at(grads["outc_Wp"], prev, dpre_c)
    else:
        grads["outc_Wp"] += prev.T @ dpre_c
    grads["outc_Wc"] += c.T @ dpre_c
    dc = dpre_c @ p["outc_Wc"].T
    grads["outc_b"] += dpre_c.sum(axis=0)
    if not with_topic:
        return ds_out, dc, None
    dpsi_o_score = dpsi * bias * exp_o
    dpre_o = dpsi_o_score * psi_o * (1.0 - psi_o) if sigmoid_scores else dpsi_o_score
    grads["outo_Ws"] += s_out.T @ dpre_o
    ds_out += dpre_o @ p["outo_Ws"].T
    if _prev_is_ids(prev):
        np.add.at(grads["outo_Wp"], prev, dpre_o)
    else:
        grads["outo_Wp"] += prev.T @ dpre_o
    grads["outo_Wo"] += o.T @ dpre_o
    do = dpre_o @ p["outo_Wo"].T
    grads["outo_b"] += dpre_o.sum(axis=0)
    return ds_out, dc, do


def topic_bias(codes, model):
    """bias(w) = sum_j k_j * 1(w in topic word set j), batched."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    return codes @ model.membership_matrix().T


def predict_distribution(s_t, prev_output, c_t, o_t, code, model, params,
                         sigmoid_scores=True):
    """Word distribution with the topic-code bias applied.

    psi(w) = exp(Psi_c(w)) + bias(w) * exp(Psi_o(w)), normalized over the
    vocabulary. `code` may be a TopicCode, an (r,) vector, or a batch;
    `model` may be None for the non-topic path (bias identically zero).
    """
    s_t, was_1d = _as_batch(s_t)
    prev_output, _ = _as_batch(prev_output)
    c_t, _ = _as_batch(c_t)
    if isinstance(code, TopicCode):
        code = code.k
    with_topic = model is not None and code is not None
    if with_topic:
        o_t, _ = _as_batch(o_t)
        bias = topic_bias(code, model)
    else:
        o_t, bias = None, None
    psi, probs, _ = _output_forward(
        s_t, prev_output, c_t, o_t, bias, params.values,
        sigmoid_scores=sigmoid_scores, with_topic=with_topic,
    )
    check_finite("predict_distribution", psi, probs)
    return PredictedDistribution(
        probs=_unbatch(probs, was_1d), unnormalized=_unbatch(psi, was_1d)
    )


# ----------------------------------------------------------------------
# Full teacher-forced unroll
# ----------------------------------------------------------------------

@dataclass
class ForwardCaches:
    q_ids: np.ndarray
    a_ids: np.ndarray
    mask: np.ndarray
    n_tokens: float
    enc_caches: list
    enc_states: np.ndarray
    step_caches: list
    with_topic: bool
    active: np.ndarray | None
    Wcols: np.ndarray | None
    proj: np.ndarray | None
    emb_dropout_mask: np.ndarray | None
    probs: list = field(default_factory=list)


def teacher_forced_loss(params, config, q_ids, a_ids, topic=None, codes=None,
                        dropout=0.0, rng=None, tf_rate=1.0):
    """Mean negative log-likelihood of the answers under teacher forcing.

    Returns (loss, caches); pass the caches to `backward` for gradients.
    PAD answer positions are excluded from the loss. `codes` is the
    (B, r) matrix of topic codes; samples with an all-zero code run with
    the topic pathway disabled so they match the non-topic model exactly.
    """
    p = params.values
    q_ids = np.asarray(q_ids, dtype=np.int64)
    a_ids = np.asarray(a_ids, dtype=np.int64)
    B = q_ids.shape[0]
    if dropout > 0.0 and rng is None:
        raise ValueError("dropout requires an RNG")

    emb_mask = None
    if dropout > 0.0:
        keep = 1.0 - dropout
        emb_mask = (rng.random((B, q_ids.shape[1], config.hidden_dim)) < keep) / keep

    enc_states, enc_caches = _encode_forward(q_ids, p, config, emb_mask)
    h_last = enc_states[:, -1]

    with_topic = topic is not None and codes is not None
    if with_topic:
        codes = np.asarray(codes, dtype=np.float64)
        active = (codes.sum(axis=1) > 0).astype(np.float64)
        Wcols = topic.W.T
        proj = Wcols @ p["atto_proj"]
        bias = (codes @ topic.membership_matrix().T)
    else:
        active = Wcols = proj = bias = None

    pad_mask = (q_ids != PAD) if config.mask_pad_attention else None
    mask = (a_ids != PAD).astype(np.float64)
    n_tokens = float(mask.sum())

    caches = ForwardCaches(
        q_ids=q_ids, a_ids=a_ids, mask=mask, n_tokens=n_tokens,
        enc_caches=enc_caches, enc_states=enc_states, step_caches=[],
        with_topic=with_topic, active=active, Wcols=Wcols, proj=proj,
        emb_dropout_mask=emb_mask,
    )

    s = h_last
    total_nll = 0.0
    prev_probs = None
    for t in range(a_ids.shape[1]):
        if t == 0:
            prev = np.full(B, SOS, dtype=np.int64)
        elif tf_rate >= 1.0 or rng is None or rng.random() < tf_rate:
            prev = a_ids[:, t - 1]
        else:
            prev = np.argmax(prev_probs, axis=1).astype(np.int64)

        c, _, cache_c = _attn_c_forward(s, enc_states, p, pad_mask=pad_mask)
        if with_topic:
            o_raw, _, cache_o = _attn_o_forward(s, proj, Wcols, h_last, p)
            o = o_raw * active[:, None]
        else:
            o = np.zeros((B, config.vocab_size))
            cache_o = None

        s_new, cache_s = _dec_state_forward(prev, s, c, o, p)

        s_mask = None
        s_out = s_new
        if dropout > 0.0:
            keep = 1.0 - dropout
            s_mask = (rng.random(s_new.shape) < keep) / keep
            s_out = s_new * s_mask

        psi, probs, cache_out = _output_forward(
            s_out, prev, c, o, bias, p,
            sigmoid_scores=config.sigmoid_scores, with_topic=with_topic,
        )
        targets = a_ids[:, t]
        picked = np.maximum(probs[np.arange(B), targets], 1e-300)
        total_nll -= float(np.sum(mask[:, t] * np.log(picked)))

        caches.step_caches.append((cache_c, cache_o, cache_s, cache_out, s_mask))
        caches.probs.append(probs)
        prev_probs = probs
        s = s_new

    return total_nll / n_tokens, caches


def backward(params, config, caches):
    """Gradients of the teacher-forced loss for every parameter."""
    p = params.values
    grads = params.zero_grads()
    B = caches.q_ids.shape[0]
    mask, n_tokens = caches.mask, caches.n_tokens
    a_ids = caches.a_ids

    ds_carry = np.zeros((B, config.hidden_dim))
    dstates = np.zeros_like(caches.enc_states)
    dh_last = np.zeros((B, config.hidden_dim))
    dproj = None
    if caches.with_topic:
        dproj = np.zeros_like(caches.proj)

    for t in reversed(range(a_ids.shape[1])):
        cache_c, cache_o, cache_s, cache_out, s_mask = caches.step_caches[t]
        psi_raw, total = cache_out[9], cache_out[10]
        targets = a_ids[:, t]
        w = (mask[:, t] / n_tokens)[:, None]
        dpsi = np.broadcast_to(w / total, psi_raw.shape).copy()
        dpsi[np.arange(B), targets] -= (
            w[:, 0] / np.maximum(psi_raw[np.arange(B), targets], 1e-300)
        )

        ds_out, dc, do = _output_backward(dpsi, cache_out, p, grads)
        if s_mask is not None:
            ds_out = ds_out * s_mask
        ds_total = ds_carry + ds_out

        ds_prev, dc2, do2 = _dec_state_backward(ds_total, cache_s, p, grads)
        dc += dc2
        if caches.with_topic:
            do = (do if do is not None else 0.0) + do2
            do = do * caches.active[:, None]
            ds_prev_o, dh_last_o, dproj_t = _attn_o_backward(do, cache_o, p, grads)
            ds_prev += ds_prev_o
            dh_last += dh_last_o
            dproj += dproj_t

        ds_prev_c, dH = _attn_c_backward(dc, cache_c, p, grads)
        ds_prev += ds_prev_c
        dstates += dH
        ds_carry = ds_prev

    # s_0 = h_l: the remaining carry lands on the last encoder state
    dh_last += ds_carry
    dstates[:, -1] += dh_last

    if caches.with_topic:
        grads["atto_proj"] += caches.Wcols.T @ dproj

    _encode_backward(dstates, caches.enc_caches, caches.q_ids, p, grads,
                     config, caches.emb_dropout_mask)
    return grads


# ----------------------------------------------------------------------
# Checkpoint files
# ----------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(params, config, path, vocab_hash="", topic_model_hash=None,
                    seed=0, iteration=None):
    """Single-file checkpoint: JSON manifest plus named parameter blobs.
    Round trips are bit-exact."""
    from . import persist

    payload = {
        "manifest": {
            "version": CHECKPOINT_VERSION,
            "config": config.to_dict(),
            "vocab_hash": vocab_hash,
            "topic_model_hash": topic_model_hash,
            "seed": seed,
            "iteration": iteration,
        },
        "params": {
            name: persist.array_to_blob(arr)
            for name, arr in params.values.items()
        },
    }
    persist.dump_json_file(payload, path)


def load_checkpoint(path):
    from . import persist
    from .numkernel import ParamStore

    payload = persist.load_json_file(path)
    manifest = payload["manifest"]
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {manifest.get('version')!r} not supported"
        )
    config = ModelConfig.from_dict(manifest["config"])
    params = ParamStore(seed=manifest.get("seed", 0))
    for name, blob in payload["params"].items():
        params.add(name, persist.array_from_blob(blob))
    return params, config, manifest
