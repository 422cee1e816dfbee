"""Frozen-anchor fine-tuning of absolute-position models over simulated long positions.

The position table is extended by interpolation (anchors frozen, interleaved
rows learnable) or by recurrent suffix copies (original prefix frozen), and
only the learnable rows receive gradient updates. Long positions are simulated
by shifting every training sequence's ids with a per-sequence skipping bias
drawn uniformly from {0, ..., l_target - l_orig}, so short contrastive triples
cover the whole target window. Because everything except the new rows is
frozen, behavior on short inputs is preserved exactly.

The same machinery trains toy base models from scratch (all parameters
learnable, no position shifting); both paths share one InfoNCE objective and
one Adagrad-with-warmup optimizer, and the analytic gradients are validated
against central finite differences by grad_check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import (
    ABSOLUTE,
    Model,
    PosExtension,
    backward_batch,
    forward_batch,
    pool_and_normalize,
    pool_and_normalize_backward,
)
from .errors import ConfigurationError, NumericError, ValidationError
from .positions import build_interpolated_matrix
from .synth import RetrievalTask
from .tokenizer import tokenize

PI_ANCHORED = "pi_anchored"
RP_SUFFIX = "rp_suffix"


@dataclass(frozen=True)
class TuneConfig:
    mode: str
    l_orig: int
    l_target: int
    learning_rate: float = 5e-4
    batch_size: int = 512
    epochs: int = 3
    warmup_steps: int = 100
    temperature: float = 0.01
    n_negatives: int = 7
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.mode not in (PI_ANCHORED, RP_SUFFIX):
            raise ConfigurationError(f"unknown tuning mode {self.mode!r}")
        if self.l_target <= self.l_orig:
            raise ConfigurationError(
                f"l_target {self.l_target} must exceed l_orig {self.l_orig}"
            )
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_steps < 0:
            raise ConfigurationError("batch_size >= 1, epochs >= 0, warmup_steps >= 0 required")
        if self.n_negatives < 1:
            raise ConfigurationError("need at least one negative per example")

    @property
    def scale(self) -> int:
        return math.ceil(self.l_target / self.l_orig)


@dataclass
class TrainingPair:
    """One contrastive triple: query, positive document, hard negatives."""

    query: np.ndarray
    positive: np.ndarray
    negatives: list[np.ndarray]

    def __post_init__(self):
        if not self.negatives:
            raise ValidationError("a training pair needs at least one negative")

    def sequences(self) -> list[np.ndarray]:
        return [self.query, self.positive, *self.negatives]


def freeze_mask(mode: str, l_orig: int, l_target: int, s: int) -> np.ndarray:
    """Per-row frozen flags over the extended table (True = not trainable)."""
    if mode == PI_ANCHORED:
        idx = np.arange(l_orig * s)
        return idx % s == 0
    if mode == RP_SUFFIX:
        return np.arange(l_target) < l_orig
    raise ConfigurationError(f"unknown tuning mode {mode!r}")


def sample_skip_bias(l_target: int, l_orig: int, rng: np.random.Generator) -> int:
    """Uniform skipping bias u over {0, ..., l_target - l_orig}.

    Shifting a sequence's position ids from {0..len-1} to {u..u+len-1} makes
    short training data exercise the full target position range.
    """
    if l_target < l_orig:
        raise ConfigurationError(f"l_target {l_target} must be >= l_orig {l_orig}")
    return int(rng.integers(0, l_target - l_orig + 1))


def contrastive_loss(
    query_emb: np.ndarray,
    positive_emb: np.ndarray,
    negative_embs: list[np.ndarray],
    temperature: float,
) -> float:
    """InfoNCE over cosine logits: -log p(positive | query)."""
    loss, _ = _contrastive_loss_grads(query_emb, positive_emb, negative_embs, temperature)
    return loss


def _contrastive_loss_grads(q, p, negs, temperature):
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    cands = [p, *negs]
    logits = np.array([float(q @ c) for c in cands]) / temperature
    m = logits.max()
    exps = np.exp(logits - m)
    z = exps.sum()
    loss = float(math.log(z) + m - logits[0])
    probs = exps / z
    d_logits = probs.copy()
    d_logits[0] -= 1.0
    d_q = sum(d_logits[i] * cands[i] for i in range(len(cands))) / temperature
    d_cands = [d_logits[i] * q / temperature for i in range(len(cands))]
    return loss, (d_q, d_cands[0], d_cands[1:])


# ---------------------------------------------------------------------------
# table extension


def extend_for_tuning(model: Model, config: TuneConfig) -> Model:
    """Install the extended position table and its frozen flags on a copy."""
    if model.config.position_mode != ABSOLUTE:
        raise ConfigurationError("further tuning requires absolute-position mode")
    if model.extension is not None:
        raise ConfigurationError("model already carries an extended position table")
    if config.l_orig != model.config.original_context:
        raise ConfigurationError(
            f"tune l_orig {config.l_orig} does not match the model's original "
            f"context {model.config.original_context}"
        )
    table = model.params["pos_table"]
    if config.mode == PI_ANCHORED:
        pem = build_interpolated_matrix(table, config.scale)
        rows, frozen = pem.rows, pem.frozen
    else:
        suffix = table[np.arange(config.l_orig, config.l_target) % config.l_orig]
        rows = np.concatenate([table, suffix], axis=0)
        frozen = freeze_mask(RP_SUFFIX, config.l_orig, config.l_target, config.scale)
    out = model.copy()
    out.params["pos_table"] = rows
    out.pos_frozen = frozen
    out.extension = PosExtension(
        mode=config.mode, l_orig=config.l_orig, l_target=config.l_target
    )
    return out


# ---------------------------------------------------------------------------
# optimizer and training loop


class Adagrad:
    """Momentum-free adaptive optimizer with linear warmup."""

    def __init__(self, learning_rate: float, warmup_steps: int, eps: float = 1e-10):
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.eps = eps
        self.t = 0
        self.accum: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        lr = self.learning_rate
        if self.warmup_steps > 0:
            lr *= min(1.0, self.t / self.warmup_steps)
        for name, g in grads.items():
            if name not in self.accum:
                self.accum[name] = np.zeros_like(g)
            self.accum[name] += g * g
            params[name] -= lr * g / (np.sqrt(self.accum[name]) + self.eps)


@dataclass
class TrainResult:
    model: Model
    log: list[tuple[int, float]] = field(default_factory=list)
    diverged: bool = False

    @property
    def losses(self) -> list[float]:
        return [loss for _, loss in self.log]


def _batch_forward_cache(model: Model, seqs: list[np.ndarray], positions: list[np.ndarray]):
    B = len(seqs)
    L = max(s.size for s in seqs)
    tokens = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    pos = np.zeros((B, L), dtype=np.int64 if model.config.position_mode == ABSOLUTE else np.float64)
    for i, (s, p) in enumerate(zip(seqs, positions)):
        tokens[i, :s.size] = s
        mask[i, :s.size] = True
        pos[i, :s.size] = p
    if model.config.position_mode == ABSOLUTE:
        hidden, cache = forward_batch(model, tokens, mask, abs_ids=pos, want_cache=True)
    else:
        hidden, cache = forward_batch(model, tokens, mask, phases=pos, want_cache=True)
    return hidden, cache, mask


def _batch_loss_and_grads(model: Model, pairs: list[TrainingPair],
                          positions: list[np.ndarray], temperature: float,
                          needed: set[str] | None = None):
    """Mean InfoNCE over the batch plus gradients for every parameter.

    ``positions`` carries one position array per flattened sequence, in pair
    order (query, positive, negatives...). ``needed`` limits which parameter
    gradients are accumulated.
    """
    seqs: list[np.ndarray] = []
    for pair in pairs:
        seqs.extend(pair.sequences())
    hidden, cache, mask = _batch_forward_cache(model, seqs, positions)

    embs = [pool_and_normalize(hidden[i], mask[i]) for i in range(len(seqs))]
    d_embs = [np.zeros_like(e) for e in embs]
    total = 0.0
    row = 0
    inv_b = 1.0 / len(pairs)
    for pair in pairs:
        n_seq = 2 + len(pair.negatives)
        q, p, negs = embs[row], embs[row + 1], embs[row + 2:row + n_seq]
        loss, (dq, dp, dnegs) = _contrastive_loss_grads(q, p, negs, temperature)
        total += loss * inv_b
        d_embs[row] += dq * inv_b
        d_embs[row + 1] += dp * inv_b
        for k, dn in enumerate(dnegs):
            d_embs[row + 2 + k] += dn * inv_b
        row += n_seq

    d_hidden = np.zeros_like(hidden)
    for i in range(len(seqs)):
        d_hidden[i] = pool_and_normalize_backward(hidden[i], mask[i], d_embs[i])
    grads = backward_batch(model, cache, d_hidden, needed=needed)
    return total, grads


def _run_training(
    model: Model,
    pairs: list[TrainingPair],
    config: TuneConfig,
    *,
    shift_positions: bool,
    trainable: dict[str, np.ndarray | None] | None,
) -> TrainResult:
    """Shared loop: shuffle, batch, shift (optionally), step, watch for NaN.

    ``trainable`` maps parameter names to row masks (None = whole tensor);
    parameters absent from it are untouched. None trains everything.
    """
    if config.epochs == 0 or config.max_steps == 0 or not pairs:
        return TrainResult(model=model.copy())
    work = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = Adagrad(config.learning_rate, config.warmup_steps)
    log: list[tuple[int, float]] = []
    good = {k: v.copy() for k, v in work.params.items()}
    step = 0
    max_len = config.l_orig

    for seq in (s for pair in pairs for s in pair.sequences()):
        if seq.size > max_len:
            raise ValidationError(
                f"training sequence of {seq.size} tokens exceeds l_orig {max_len}"
            )

    for _epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            positions = []
            for pair in batch:
                for seq in pair.sequences():
                    if shift_positions:
                        u = sample_skip_bias(config.l_target, config.l_orig, rng)
                        positions.append(u + np.arange(seq.size, dtype=np.int64))
                    elif work.config.position_mode == ABSOLUTE:
                        positions.append(np.arange(seq.size, dtype=np.int64))
                    else:
                        positions.append(np.arange(seq.size, dtype=np.float64))
            try:
                loss, grads = _batch_loss_and_grads(
                    work, batch, positions, config.temperature,
                    needed=None if trainable is None else set(trainable),
                )
            except NumericError:
                loss = math.nan
            step += 1
            if not math.isfinite(loss):
                work.params = good
                return TrainResult(model=work, log=log, diverged=True)
            if trainable is not None:
                for name, row_mask in trainable.items():
                    if row_mask is not None:
                        grads[name] = grads[name] * (~row_mask)[:, None]
            opt.step(work.params, grads)
            log.append((step, loss))
            good = {k: v.copy() for k, v in work.params.items()}
            if config.max_steps is not None and step >= config.max_steps:
                return TrainResult(model=work, log=log)
    return TrainResult(model=work, log=log)


def tune(model: Model, pairs: list[TrainingPair], config: TuneConfig) -> TrainResult:
    """Train only the learnable rows of the extended position table.

    The model must already carry the extension for ``config.mode`` (see
    extend_for_tuning). All transformer weights, token embeddings, and frozen
    rows are bit-identical before and after. Attention scaling stays off
    during training. A NaN loss aborts with the last finite-loss parameters.
    """
    if model.config.position_mode != ABSOLUTE:
        raise ConfigurationError("further tuning requires absolute-position mode")
    if model.extension is None or model.extension.mode != config.mode:
        raise ConfigurationError(
            f"model must carry a {config.mode} extension; call extend_for_tuning first"
        )
    if model.extension.l_target != config.l_target:
        raise ConfigurationError(
            f"extension targets {model.extension.l_target}, config targets {config.l_target}"
        )
    trainable = {"pos_table": model.pos_frozen}
    return _run_training(model, pairs, config, shift_positions=True, trainable=trainable)


def train_model(model: Model, pairs: list[TrainingPair], config: TuneConfig) -> TrainResult:
    """Contrastive training of every parameter, with identity positions.

    Used to fit toy base encoders from scratch (either position mode); the
    tuning-specific position shift is off.
    """
    if model.extension is not None:
        raise ConfigurationError("base training expects an unextended model")
    return _run_training(model, pairs, config, shift_positions=False, trainable=None)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    model: Model,
    pair: TrainingPair,
    config: TuneConfig,
    *,
    eps: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Compares d(loss)/d(row) over the learnable position rows for one tuning
    batch with fixed position shifts. Intended for tiny models only.
    """
    cfg = model.config
    if cfg.hidden_size > 32 or cfg.n_layers > 2:
        raise ConfigurationError("grad_check is for tiny models (d <= 32, <= 2 layers)")
    if model.extension is None or model.pos_frozen is None:
        raise ConfigurationError("grad_check needs a model extended for tuning")
    rng = np.random.default_rng(0) if rng is None else rng

    seqs = pair.sequences()
    positions = []
    for seq in seqs:
        u = sample_skip_bias(config.l_target, config.l_orig, rng)
        positions.append(u + np.arange(seq.size, dtype=np.int64))

    def loss_at(m: Model) -> float:
        loss, _ = _batch_loss_and_grads(m, [pair], positions, config.temperature)
        return loss

    _, grads = _batch_loss_and_grads(model, [pair], positions, config.temperature)
    analytic = grads["pos_table"]

    work = model.copy()
    table = work.params["pos_table"]
    learnable_rows = np.flatnonzero(~model.pos_frozen)
    worst = 0.0
    for r in learnable_rows:
        for c in range(cfg.hidden_size):
            orig = table[r, c]
            table[r, c] = orig + eps
            up = loss_at(work)
            table[r, c] = orig - eps
            down = loss_at(work)
            table[r, c] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(analytic[r, c] - fd) / max(abs(analytic[r, c]), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst


def masked_position_gradient(model: Model, pairs: list[TrainingPair],
                             config: TuneConfig, rng: np.random.Generator) -> np.ndarray:
    """One tuning step's position-table gradient with frozen rows zeroed."""
    positions = []
    for pair in pairs:
        for seq in pair.sequences():
            u = sample_skip_bias(config.l_target, config.l_orig, rng)
            positions.append(u + np.arange(seq.size, dtype=np.int64))
    _, grads = _batch_loss_and_grads(model, pairs, positions, config.temperature)
    g = grads["pos_table"]
    if model.pos_frozen is not None:
        g = g * (~model.pos_frozen)[:, None]
    return g


# ---------------------------------------------------------------------------
# training data from retrieval tasks


def training_pairs_from_task(
    task: RetrievalTask,
    vocab_size: int,
    n_negatives: int,
    rng: np.random.Generator,
    *,
    max_len: int | None = None,
) -> list[TrainingPair]:
    """Contrastive triples from a retrieval task's judged pairs.

    Negatives are other candidate documents; when the pool runs short, the
    remainder are word-shuffled copies of the positive. Sequences are
    truncated to ``max_len`` tokens when given.
    """
    doc_ids = sorted(task.docs)
    toks = {d: tokenize(task.docs[d], vocab_size) for d in doc_ids}

    def clip(ids: np.ndarray) -> np.ndarray:
        return ids if max_len is None else ids[:max_len]

    pairs = []
    for qid in sorted(task.queries):
        rels = task.qrels.get(qid)
        if not rels:
            raise ValidationError(f"query {qid!r} has no relevant document")
        gold = sorted(rels)[0]
        others = [d for d in doc_ids if d not in rels]
        take = min(n_negatives, len(others))
        chosen = [others[i] for i in rng.choice(len(others), size=take, replace=False)] if take else []
        negatives = [clip(toks[d]) for d in chosen]
        while len(negatives) < n_negatives:
            negatives.append(rng.permutation(clip(toks[gold])))
        pairs.append(TrainingPair(
            query=clip(tokenize(task.queries[qid], vocab_size)),
            positive=clip(toks[gold]),
            negatives=negatives,
        ))
    return pairs
