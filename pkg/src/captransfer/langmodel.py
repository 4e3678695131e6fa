"""GRU language model: next-word distributions, training with early stopping,
and standard / vocabulary-fairness-corrected perplexity."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, ShapeError
from .nn import (InitSpec, ParamStore, dropout, embedding_lookup, gru_params_view,
                 gru_step, init_tensor, make_gru_params)
from .rng import Rng
from .tensor import Tensor
from .text import Corpus, Vocabulary, encode_sentence
from .train import TrainConfig, TrainHistory, run_training

GRU_PARAM_KEYS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_c", "U_c", "b_c")
PREFIX_PARAM_NAMES = ("embedding",) + tuple(f"gru.{k}" for k in GRU_PARAM_KEYS)


class LanguageModel:
    """Embedding + GRU prefix encoder + softmax over the model vocabulary."""

    def __init__(self, vocab: Vocabulary, embed_size: int, state_size: int,
                 init: InitSpec, dtype=np.float32):
        if embed_size <= 0 or state_size <= 0:
            raise ShapeError("embed/state sizes must be positive")
        self.vocab = vocab
        self.embed_size = embed_size
        self.state_size = state_size
        self.init = init
        self.dtype = dtype
        self.params = ParamStore()
        V = len(vocab)
        self.params.add("embedding", init_tensor([V, embed_size], init.for_param("embedding"), dtype))
        make_gru_params(self.params, "gru", embed_size, state_size, init, dtype)
        self.params.add("softmax.W", init_tensor([state_size, V], init.for_param("softmax.W"), dtype))
        self.params.add("softmax.b", np.zeros(V, dtype=dtype))

    def initial_state(self, batch: int | None = None) -> Tensor:
        shape = (self.state_size,) if batch is None else (batch, self.state_size)
        return Tensor(np.zeros(shape, dtype=self.dtype))

    def step_state(self, token_indices, h: Tensor, emb_rng: Rng | None = None,
                   drop_embedding: float = 0.0, training: bool = False) -> Tensor:
        x = embedding_lookup(token_indices, self.params["embedding"])
        if training and drop_embedding > 0.0:
            x = dropout(x, drop_embedding, emb_rng, training)
        return gru_step(x, h, gru_params_view(self.params, "gru"))

    def state_logits(self, h: Tensor) -> Tensor:
        return T.add(T.matmul(h, self.params["softmax.W"]), self.params["softmax.b"])

    def config_dict(self) -> dict:
        return {
            "model_type": "language_model",
            "embed_size": self.embed_size,
            "state_size": self.state_size,
            "init": {"method": self.init.method, "max_abs": self.init.max_abs,
                     "seed": self.init.seed},
            "vocabulary": self.vocab.tokens,
            "min_count": self.vocab.min_count,
        }


def lm_batch_loss(model: LanguageModel, batch: list[list[int]], rng: Rng,
                  config: TrainConfig, training: bool = True) -> Tensor:
    """Summed next-token cross-entropy over every prefix position in the batch.

    Sentences are right-padded; padded positions are masked out of the loss.
    """
    B = len(batch)
    T_max = max(len(seq) for seq in batch) - 1
    inputs = np.zeros((B, T_max), dtype=np.int64)
    targets = np.zeros((B, T_max), dtype=np.int64)
    mask = np.zeros((B, T_max), dtype=np.float64)
    for i, seq in enumerate(batch):
        n = len(seq) - 1
        inputs[i, :n] = seq[:-1]
        targets[i, :n] = seq[1:]
        mask[i, :n] = 1.0

    h = model.initial_state(B)
    losses = []
    for t in range(T_max):
        h = model.step_state(inputs[:, t], h, rng, config.dropout_embedding, training)
        h_read = dropout(h, config.dropout_rnn, rng, training) \
            if training and config.dropout_rnn > 0.0 else h
        logits = model.state_logits(h_read)
        loss_t, _ = T.softmax_cross_entropy(logits, targets[:, t], mask[:, t])
        losses.append(loss_t)
    return T.add_scalars(losses)


def _logits64(model: LanguageModel, h_data: np.ndarray) -> np.ndarray:
    """Softmax projection computed in float64 for evaluation paths."""
    return (h_data.astype(np.float64) @ model.params["softmax.W"].data.astype(np.float64)
            + model.params["softmax.b"].data.astype(np.float64))


def corpus_logprobs(model: LanguageModel, corpus: list[list[int]],
                    batch_size: int = 64) -> list[np.ndarray]:
    """Per-sentence float64 log-probabilities of every next token."""
    out: list[np.ndarray] = []
    edge = model.vocab.edge_index
    with T.no_grad():
        for start in range(0, len(corpus), batch_size):
            batch = corpus[start:start + batch_size]
            if any(not seq or seq[0] != edge for seq in batch):
                raise DataError("encoded sentences must start with EDGE")
            B = len(batch)
            T_max = max(len(seq) for seq in batch) - 1
            inputs = np.zeros((B, T_max), dtype=np.int64)
            targets = np.zeros((B, T_max), dtype=np.int64)
            for i, seq in enumerate(batch):
                n = len(seq) - 1
                inputs[i, :n] = seq[:-1]
                targets[i, :n] = seq[1:]
            h = model.initial_state(B)
            logps = np.zeros((B, T_max))
            arange = np.arange(B)
            for t in range(T_max):
                h = model.step_state(inputs[:, t], h)
                logits = _logits64(model, h.data)
                logits -= logits.max(axis=1, keepdims=True)
                lse = np.log(np.exp(logits).sum(axis=1))
                logps[:, t] = logits[arange, targets[:, t]] - lse
            for i, seq in enumerate(batch):
                out.append(logps[i, :len(seq) - 1].copy())
    return out


def sequence_logprobs(model: LanguageModel, seq: list[int]) -> np.ndarray:
    """Float64 log-probability of each next token along one encoded sentence."""
    return corpus_logprobs(model, [seq])[0]


def lm_next_distribution(model: LanguageModel, prefix: list[int]) -> np.ndarray:
    """Probability vector over the vocabulary after consuming the prefix."""
    if not prefix or prefix[0] != model.vocab.edge_index:
        raise DataError("prefix must start with EDGE")
    with T.no_grad():
        h = model.initial_state()
        for idx in prefix:
            h = model.step_state(np.int64(idx), h)
        logits = _logits64(model, h.data)
    logits -= logits.max()
    ex = np.exp(logits)
    return ex / ex.sum()


def _perplexity_from_logprobs(per_sentence_logps: list[np.ndarray],
                              per_sentence: bool) -> float:
    if any(np.isneginf(lp).any() for lp in per_sentence_logps):
        return math.inf
    if per_sentence:
        vals = [-lp.sum() / lp.size for lp in per_sentence_logps]
        return float(np.exp(np.mean(vals)))
    total = sum(lp.sum() for lp in per_sentence_logps)
    count = sum(lp.size for lp in per_sentence_logps)
    return float(np.exp(-total / count))


def perplexity_geometric(model: LanguageModel, corpus: list[list[int]],
                         per_sentence: bool = False) -> float:
    """exp of the mean negative log-probability per predicted position
    (including the closing EDGE). per_sentence=True applies the geometric
    mean over per-sentence perplexities instead of over tokens."""
    if not corpus:
        raise DataError("cannot evaluate perplexity on an empty corpus")
    return _perplexity_from_logprobs(corpus_logprobs(model, corpus), per_sentence)


def fair_perplexity(model: LanguageModel, corpus: list[list[int]],
                    eval_vocab_types: int, per_sentence: bool = False) -> float:
    """Perplexity with each UNKNOWN occurrence charged p/U, where U is the
    number of word types the unknown token stands for on this corpus."""
    known = len(model.vocab.content_tokens())
    if eval_vocab_types < known:
        raise ValueError(
            f"eval_vocab_types {eval_vocab_types} < known content types {known}")
    U = eval_vocab_types - known
    if not corpus:
        raise DataError("cannot evaluate perplexity on an empty corpus")
    unk = model.vocab.unknown_index
    penalty = math.log(U) if U > 0 else 0.0
    logps = []
    for seq, lp in zip(corpus, corpus_logprobs(model, corpus)):
        if U > 0:
            lp = lp - penalty * (np.asarray(seq[1:]) == unk)
        logps.append(lp)
    return _perplexity_from_logprobs(logps, per_sentence)


def encode_corpus(corpus: Corpus, vocab: Vocabulary) -> list[list[int]]:
    return [encode_sentence(s, vocab) for s in corpus]


def train_lm(corpus: list[list[int]], val_corpus: list[list[int]],
             model: LanguageModel, config: TrainConfig,
             val_metric_fn=None) -> tuple[LanguageModel, TrainHistory]:
    """Train with per-epoch validation perplexity early stopping.

    corpus/val_corpus are already encoded against the model vocabulary.
    val_metric_fn overrides the validation metric (test hook); default is
    perplexity_geometric on val_corpus.
    """
    if val_metric_fn is None:
        val_metric_fn = lambda: perplexity_geometric(model, val_corpus)

    def batch_loss(batch, rng, epoch):
        return lm_batch_loss(model, batch, rng, config, training=True)

    history = run_training(corpus, model.params, config, batch_loss, val_metric_fn)
    return model, history


def save_lm(model: LanguageModel, directory, extra_config: dict | None = None) -> None:
    cfg = model.config_dict()
    if extra_config:
        cfg.update(extra_config)
    save_checkpoint(directory, model.params, cfg)


def load_lm(directory) -> LanguageModel:
    weights, cfg = load_checkpoint(directory)
    if cfg.get("model_type") != "language_model":
        raise DataError(f"{directory} is not a language model checkpoint")
    vocab = Vocabulary(cfg["vocabulary"], cfg.get("min_count", 5))
    init = InitSpec(**cfg["init"])
    model = LanguageModel(vocab, cfg["embed_size"], cfg["state_size"], init)
    model.params.load_state_dict(weights)
    for name, trainable in cfg.get("trainable", {}).items():
        model.params.set_trainable(name, trainable)
    return model
