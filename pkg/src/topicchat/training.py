"""Teacher-forced training: KL-divergence loss over answer words, BPTT
gradients, global-norm clipping, and Adagrad updates."""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import seq2seq
from .corpus import NUM_RESERVED
from .nmf import topic_code


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int = 64
    learning_rate: float = 0.01
    adagrad_eps: float = 1e-10
    dropout: float = 0.1
    teacher_forcing: float = 1.0
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ValueError("teacher_forcing must lie in [0, 1]")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self):
        return {
            "iterations": self.iterations, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate, "adagrad_eps": self.adagrad_eps,
            "dropout": self.dropout, "teacher_forcing": self.teacher_forcing,
            "seed": self.seed, "clip_norm": self.clip_norm,
        }


@dataclass
class LossReport:
    iteration_losses: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    final_loss: float = float("nan")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration, batch_index, value):
        super().__init__(
            f"non-finite loss {value} at iteration {iteration} "
            f"(batch index {batch_index})"
        )
        self.iteration = iteration
        self.batch_index = batch_index


def kl_loss(p_true, p_hat):
    """D(p || p_hat) for a one-hot p: the negative log-likelihood of the
    target word. Guarded with a 1e-300 floor (p_hat is strictly positive
    by construction, so the floor never fires in normal operation)."""
    p_true = np.asarray(p_true, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    target = int(np.argmax(p_true))
    return -math.log(max(p_hat[target], 1e-300))


def clip_global_norm(grads, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adagrad_update(params, grads, lr, eps):
    """theta <- theta - lr * g / sqrt(G + eps), G accumulating g^2."""
    for name, g in grads.items():
        acc = params.sq_grad[name]
        acc += g * g
        params.values[name] -= lr * g / np.sqrt(acc + eps)


def dataset_codes(dataset, topic):
    """Topic code of every question: normalized W^T bag-of-words."""
    if topic is None:
        return None
    counts = np.zeros((len(dataset), topic.vocab_size))
    for i, q_row in enumerate(dataset.questions):
        for idx in q_row:
            if idx >= NUM_RESERVED:
                counts[i, idx] += 1.0
    codes = np.empty((len(dataset), topic.r))
    for i in range(len(dataset)):
        codes[i] = topic_code(counts[i], topic, normalize=True).k
    return codes


def _iter_batches(n, batch_size, iterations, rng):
    done = 0
    while done < iterations:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if done >= iterations:
                return
            yield done, order[start:start + batch_size]
            done += 1


def train(dataset, topic, model_config, train_config, params=None,
          metrics_path=None, checkpoint_every=None, checkpoint_fn=None):
    """Fit the model and return (params, LossReport).

    One iteration consumes one batch; batch order reshuffles every epoch
    from the seeded RNG, so identical configs and seeds produce
    bit-identical parameters. The report's final loss is a full
    teacher-forced evaluation pass with dropout disabled.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if params is None:
        params = seq2seq.build_params(model_config, train_config.seed)
    rng = np.random.default_rng(train_config.seed)
    codes = dataset_codes(dataset, topic)

    report = LossReport()
    start = time.monotonic()
    metrics = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for it, batch_idx in _iter_batches(
            len(dataset), train_config.batch_size, train_config.iterations, rng
        ):
            q = dataset.questions[batch_idx]
            a = dataset.answers[batch_idx]
            batch_codes = codes[batch_idx] if codes is not None else None
            loss, caches = seq2seq.teacher_forced_loss(
                params, model_config, q, a, topic, batch_codes,
                dropout=train_config.dropout, rng=rng,
                tf_rate=train_config.teacher_forcing,
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(it, int(batch_idx[0]), loss)
            grads = seq2seq.backward(params, model_config, caches)
            clip_global_norm(grads, train_config.clip_norm)
            if train_config.learning_rate != 0.0:
                adagrad_update(params, grads, train_config.learning_rate,
                               train_config.adagrad_eps)
            report.iteration_losses.append(loss)
            if metrics is not None:
                elapsed = time.monotonic() - start
                metrics.write(json.dumps(
                    {"iter": it, "loss": loss, "elapsed_s": elapsed}) + "\n")
            if checkpoint_every and checkpoint_fn and (it + 1) % checkpoint_every == 0:
                checkpoint_fn(it + 1, params)
    finally:
        if metrics is not None:
            metrics.close()

    report.wall_clock_s = time.monotonic() - start
    report.final_loss = evaluate(dataset, params, topic, model_config)
    return params, report


def evaluate(dataset, params, topic, model_config, batch_size=64):
    """Teacher-forced mean loss per non-PAD answer word, dropout off."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    codes = dataset_codes(dataset, topic)
    total_nll = 0.0
    total_tokens = 0.0
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        q = dataset.questions[idx]
        a = dataset.answers[idx]
        batch_codes = codes[idx] if codes is not None else None
        loss, caches = seq2seq.teacher_forced_loss(
            params, model_config, q, a, topic, batch_codes, dropout=0.0,
        )
        total_nll += loss * caches.n_tokens
        total_tokens += caches.n_tokens
    return total_nll / total_tokens
