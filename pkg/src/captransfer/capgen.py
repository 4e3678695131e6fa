"""Merge-architecture caption generator: prefix encoder (transferable from a
language model), post-image projection, concatenation, softmax; plus beam
search and training."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import CaptionDataset
from .errors import ConfigError, DataError, ShapeError
from .langmodel import (GRU_PARAM_KEYS, LanguageModel, _perplexity_from_logprobs,
                        load_lm)
from .nn import (InitSpec, ParamStore, dense, dropout, embedding_lookup,
                 gru_params_view, gru_step, init_tensor, make_gru_params)
from .rng import Rng
from .tensor import Tensor
from .text import Sentence, Vocabulary, encode_sentence
from .train import TrainConfig, TrainHistory, run_training

logger = logging.getLogger(__name__)

TRANSFER_MODES = ("none", "frozen", "fine-tuned")
PREFIX_PARAM_NAMES = ("embedding",) + tuple(f"gru.{k}" for k in GRU_PARAM_KEYS)


@dataclass(frozen=True)
class TransferSpec:
    mode: str = "none"
    source: str | None = None  # LM checkpoint path, when driven from disk

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ConfigError(f"unknown transfer mode {self.mode!r}")


@dataclass(frozen=True)
class GenerationConfig:
    beam_width: int = 3
    max_length: int = 50

    def __post_init__(self):
        if not (1 <= self.beam_width <= 5):
            raise ConfigError(f"beam width {self.beam_width} outside [1, 5]")
        if self.max_length < 1:
            raise ConfigError("max_length must be >= 1")


class CaptionGenerator:
    """Prefix encoder + post-image dense layer + softmax over [state ∥ post]."""

    def __init__(self, vocab: Vocabulary, embed_size: int, state_size: int,
                 post_image_size: int, init: InitSpec, feature_size: int = 4096,
                 post_image_activation: str = "relu", normalize_image: bool = False,
                 dtype=np.float32):
        if post_image_activation not in ("relu", "none"):
            raise ConfigError(f"unknown post-image activation {post_image_activation!r}")
        if min(embed_size, state_size, post_image_size, feature_size) <= 0:
            raise ShapeError("all layer sizes must be positive")
        self.vocab = vocab
        self.embed_size = embed_size
        self.state_size = state_size
        self.post_image_size = post_image_size
        self.feature_size = feature_size
        self.post_image_activation = post_image_activation
        self.normalize_image = normalize_image
        self.init = init
        self.dtype = dtype
        V = len(vocab)
        self.params = ParamStore()
        self.params.add("embedding", init_tensor([V, embed_size], init.for_param("embedding"), dtype))
        make_gru_params(self.params, "gru", embed_size, state_size, init, dtype)
        self.params.add("post_image.W",
                        init_tensor([feature_size, post_image_size], init.for_param("post_image.W"), dtype))
        self.params.add("post_image.b", np.zeros(post_image_size, dtype=dtype))
        self.params.add("softmax.W",
                        init_tensor([state_size + post_image_size, V], init.for_param("softmax.W"), dtype))
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

    def normalized_features(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=self.dtype)
        if features.shape[-1] != self.feature_size:
            raise ShapeError(
                f"feature length {features.shape[-1]} != {self.feature_size}")
        if not self.normalize_image:
            return features
        norms = np.linalg.norm(features.astype(np.float64), axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            logger.warning("zero image feature vector left unnormalized")
            norms = np.where(norms == 0.0, 1.0, norms)
        return (features / norms).astype(self.dtype)

    def post_image_tensor(self, features: np.ndarray, rng: Rng | None = None,
                          config: TrainConfig | None = None,
                          training: bool = False) -> Tensor:
        """Dense projection of (optionally normalized) features, with the
        image and post-image dropout sites applied when training."""
        x = Tensor(self.normalized_features(features))
        if training and config is not None and config.dropout_image > 0.0:
            x = dropout(x, config.dropout_image, rng, training)
        post = dense(x, self.params["post_image.W"], self.params["post_image.b"],
                     self.post_image_activation)
        if training and config is not None and config.dropout_post_image > 0.0:
            post = dropout(post, config.dropout_post_image, rng, training)
        return post

    def merged_logits(self, h: Tensor, post: Tensor) -> Tensor:
        merged = T.concat([h, post], axis=-1)
        return T.add(T.matmul(merged, self.params["softmax.W"]), self.params["softmax.b"])

    def config_dict(self) -> dict:
        return {
            "model_type": "caption_generator",
            "embed_size": self.embed_size,
            "state_size": self.state_size,
            "post_image_size": self.post_image_size,
            "feature_size": self.feature_size,
            "post_image_activation": self.post_image_activation,
            "normalize_image": self.normalize_image,
            "init": {"method": self.init.method, "max_abs": self.init.max_abs,
                     "seed": self.init.seed},
            "vocabulary": self.vocab.tokens,
            "min_count": self.vocab.min_count,
        }


def project_image(features: np.ndarray, model: CaptionGenerator) -> np.ndarray:
    """Post-image vector for one feature vector (evaluation path)."""
    with T.no_grad():
        return project_image_tensor(features, model).data.copy()


def project_image_tensor(features: np.ndarray, model: CaptionGenerator) -> Tensor:
    return model.post_image_tensor(features)


def transfer_prefix_params(lm: LanguageModel, cg: CaptionGenerator,
                           spec: TransferSpec) -> CaptionGenerator:
    """Copy the LM's embedding rows (via the vocabulary remap) and GRU weights
    into the caption generator; frozen mode clears their trainable flags.

    The softmax and post-image parameters keep the generator's own fresh
    initialization: the softmax input width changes from H to H+P.
    """
    if spec.mode == "none":
        return cg
    if (lm.embed_size, lm.state_size) != (cg.embed_size, cg.state_size):
        raise ShapeError(
            f"prefix encoder dims differ: lm ({lm.embed_size},{lm.state_size}) "
            f"vs cg ({cg.embed_size},{cg.state_size})")
    missing = set(cg.vocab.content_tokens()) - set(lm.vocab.content_tokens())
    if missing:
        raise ConfigError(
            f"caption vocabulary has tokens unknown to the language model: "
            f"{sorted(missing)[:5]}...")
    lm_emb = lm.params["embedding"].data
    cg_emb = cg.params["embedding"].data
    for token in cg.vocab.tokens:
        cg_emb[cg.vocab.index[token]] = lm_emb[lm.vocab.index[token]]
    for key in GRU_PARAM_KEYS:
        name = f"gru.{key}"
        cg.params[name].data = lm.params[name].data.astype(cg.dtype, copy=True)
    trainable = spec.mode == "fine-tuned"
    for name in PREFIX_PARAM_NAMES:
        cg.params.set_trainable(name, trainable)
    return cg


def cg_next_distribution(model: CaptionGenerator, image_features: np.ndarray,
                         prefix: list[int]) -> np.ndarray:
    """Probability vector over the caption vocabulary given image and prefix."""
    if not prefix or prefix[0] != model.vocab.edge_index:
        raise DataError("prefix must start with EDGE")
    with T.no_grad():
        post = model.post_image_tensor(image_features)
        h = model.initial_state()
        for idx in prefix:
            h = model.step_state(np.int64(idx), h)
        logits = _merged_logits64(model, h.data, post.data)
    logits -= logits.max()
    ex = np.exp(logits)
    return ex / ex.sum()


def _merged_logits64(model: CaptionGenerator, h_data, post_data) -> np.ndarray:
    merged = np.concatenate([h_data, post_data], axis=-1).astype(np.float64)
    return (merged @ model.params["softmax.W"].data.astype(np.float64)
            + model.params["softmax.b"].data.astype(np.float64))


def cg_batch_loss(model: CaptionGenerator, batch: list[tuple[np.ndarray, list[int]]],
                  rng: Rng, config: TrainConfig, training: bool = True) -> Tensor:
    """Summed cross-entropy over all caption positions, image vector joining
    every position's prediction."""
    feats = np.stack([f for f, _ in batch])
    seqs = [seq for _, seq in batch]
    B = len(batch)
    T_max = max(len(seq) for seq in seqs) - 1
    inputs = np.zeros((B, T_max), dtype=np.int64)
    targets = np.zeros((B, T_max), dtype=np.int64)
    mask = np.zeros((B, T_max), dtype=np.float64)
    for i, seq in enumerate(seqs):
        n = len(seq) - 1
        inputs[i, :n] = seq[:-1]
        targets[i, :n] = seq[1:]
        mask[i, :n] = 1.0

    post = model.post_image_tensor(feats, rng, config, training)
    h = model.initial_state(B)
    losses = []
    for t in range(T_max):
        h = model.step_state(inputs[:, t], h, rng, config.dropout_embedding, training)
        h_read = dropout(h, config.dropout_rnn, rng, training) \
            if training and config.dropout_rnn > 0.0 else h
        logits = model.merged_logits(h_read, post)
        loss_t, _ = T.softmax_cross_entropy(logits, targets[:, t], mask[:, t])
        losses.append(loss_t)
    return T.add_scalars(losses)


def caption_pairs(dataset: CaptionDataset, features: np.ndarray, vocab: Vocabulary,
                  split: str) -> list[tuple[np.ndarray, list[int]]]:
    """(feature row, encoded caption) training pairs for one split."""
    pairs = []
    for item in dataset.split_items(split):
        feat = features[item.row]
        for caption in item.captions:
            pairs.append((feat, encode_sentence(caption, vocab)))
    return pairs


def caption_logprobs(model: CaptionGenerator,
                     pairs: list[tuple[np.ndarray, list[int]]],
                     batch_size: int = 64) -> list[np.ndarray]:
    """Per-caption float64 log-probabilities of each next token."""
    out: list[np.ndarray] = []
    edge = model.vocab.edge_index
    with T.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            if any(not seq or seq[0] != edge for _, seq in chunk):
                raise DataError("encoded captions must start with EDGE")
            B = len(chunk)
            T_max = max(len(seq) for _, seq in chunk) - 1
            inputs = np.zeros((B, T_max), dtype=np.int64)
            targets = np.zeros((B, T_max), dtype=np.int64)
            for i, (_, seq) in enumerate(chunk):
                n = len(seq) - 1
                inputs[i, :n] = seq[:-1]
                targets[i, :n] = seq[1:]
            feats = np.stack([f for f, _ in chunk])
            post = model.post_image_tensor(feats)
            h = model.initial_state(B)
            logps = np.zeros((B, T_max))
            arange = np.arange(B)
            for t in range(T_max):
                h = model.step_state(inputs[:, t], h)
                logits = _merged_logits64(model, h.data, post.data)
                logits -= logits.max(axis=1, keepdims=True)
                lse = np.log(np.exp(logits).sum(axis=1))
                logps[:, t] = logits[arange, targets[:, t]] - lse
            for i, (_, seq) in enumerate(chunk):
                out.append(logps[i, :len(seq) - 1].copy())
    return out


def caption_perplexity(model: CaptionGenerator,
                       pairs: list[tuple[np.ndarray, list[int]]],
                       per_sentence: bool = False) -> float:
    if not pairs:
        raise DataError("cannot evaluate perplexity on an empty caption set")
    return _perplexity_from_logprobs(caption_logprobs(model, pairs), per_sentence)


def train_capgen(dataset: CaptionDataset, features: np.ndarray,
                 model: CaptionGenerator, config: TrainConfig,
                 transfer: TransferSpec | None = None,
                 val_metric_fn=None) -> tuple[CaptionGenerator, TrainHistory]:
    """Same loop and stopping rule as train_lm, with image conditioning.

    If `transfer` names a source checkpoint, the prefix parameters are
    copied (and possibly frozen) before training starts.
    """
    if transfer is not None and transfer.mode != "none" and transfer.source:
        transfer_prefix_params(load_lm(transfer.source), model, transfer)
    train_pairs = caption_pairs(dataset, features, model.vocab, "train")
    val_pairs = caption_pairs(dataset, features, model.vocab, "val")
    if val_metric_fn is None:
        if not val_pairs:
            raise DataError("caption dataset has no validation items")
        val_metric_fn = lambda: caption_perplexity(model, val_pairs)

    def batch_loss(batch, rng, epoch):
        return cg_batch_loss(model, batch, rng, config, training=True)

    history = run_training(train_pairs, model.params, config, batch_loss, val_metric_fn)
    return model, history


@dataclass
class _Hypothesis:
    seq: tuple[int, ...]     # token indices after the initial EDGE
    score: float             # summed log-probability
    state: np.ndarray        # GRU state after consuming EDGE + seq
    completed: bool = False


def _step_logprobs(model: CaptionGenerator, state: np.ndarray,
                   post_data: np.ndarray) -> np.ndarray:
    logits = _merged_logits64(model, state, post_data)
    logits -= logits.max()
    return logits - np.log(np.exp(logits).sum())


def _advance(model: CaptionGenerator, state: np.ndarray, token: int) -> np.ndarray:
    with T.no_grad():
        return model.step_state(np.int64(token), Tensor(state)).data


def _start_state(model: CaptionGenerator) -> np.ndarray:
    with T.no_grad():
        return model.step_state(np.int64(model.vocab.edge_index),
                                model.initial_state()).data


def _greedy_rollout(model: CaptionGenerator, post_data: np.ndarray,
                    max_length: int) -> _Hypothesis:
    """Argmax decoding: emit tokens until EDGE or the length cap."""
    edge = model.vocab.edge_index
    state = _start_state(model)
    seq: tuple[int, ...] = ()
    score = 0.0
    for _ in range(max_length):
        logp = _step_logprobs(model, state, post_data)
        tok = int(np.argmax(logp))  # ties resolve to the smallest index
        score += float(logp[tok])
        if tok == edge:
            return _Hypothesis(seq, score, state, True)
        seq = seq + (tok,)
        state = _advance(model, state, tok)
    return _Hypothesis(seq, score, state, False)


def _beam_pool(model: CaptionGenerator, post_data: np.ndarray, width: int,
               max_length: int) -> list[_Hypothesis]:
    """Beam expansion; pools every EDGE completion plus length-capped hypotheses."""
    edge = model.vocab.edge_index
    active = [_Hypothesis((), 0.0, _start_state(model))]
    pool: list[_Hypothesis] = []
    while active:
        extensions: list[_Hypothesis] = []
        for hyp in active:
            logp = _step_logprobs(model, hyp.state, post_data)
            pool.append(_Hypothesis(hyp.seq, hyp.score + float(logp[edge]),
                                    hyp.state, True))
            if len(hyp.seq) >= max_length:
                pool.append(hyp)
                continue
            # only the top `width` per hypothesis can survive the global cut
            order = np.argsort(-logp, kind="stable")[:width + 1]
            for tok in order:
                if tok == edge:
                    continue
                extensions.append(_Hypothesis(hyp.seq + (int(tok),),
                                              hyp.score + float(logp[tok]),
                                              hyp.state))
        extensions.sort(key=lambda c: (-c.score, c.seq))
        active = [
            _Hypothesis(c.seq, c.score, _advance(model, c.state, c.seq[-1]))
            for c in extensions[:width]
        ]
    return pool


def beam_search_scored(model: CaptionGenerator, image_features: np.ndarray,
                       gen: GenerationConfig) -> tuple[Sentence, float]:
    """Best caption by summed log-probability, plus that score.

    Width 1 is greedy decoding by definition. Wider beams pick the maximum
    raw-score hypothesis out of the pool (ties: completed first, then the
    lexicographically smallest token-index sequence); the greedy rollout is
    seeded into the pool so the winning score never falls below greedy's.
    """
    with T.no_grad():
        post = model.post_image_tensor(image_features)
    greedy = _greedy_rollout(model, post.data, gen.max_length)
    if gen.beam_width == 1:
        best = greedy
    else:
        pool = _beam_pool(model, post.data, gen.beam_width, gen.max_length)
        pool.append(greedy)
        best = min(pool, key=lambda h: (-h.score, not h.completed, h.seq))
    tokens = [model.vocab.token_at(i) for i in best.seq]
    return tokens, best.score


def beam_search(model: CaptionGenerator, image_features: np.ndarray,
                gen: GenerationConfig) -> Sentence:
    return beam_search_scored(model, image_features, gen)[0]


def save_capgen(model: CaptionGenerator, directory,
                transfer: TransferSpec | None = None,
                source_hash: str | None = None,
                extra_config: dict | None = None) -> None:
    cfg = model.config_dict()
    if extra_config:
        cfg.update(extra_config)
    save_checkpoint(directory, model.params, cfg)
    if transfer is not None:
        with open(Path(directory) / "transfer.json", "w", encoding="utf-8") as fh:
            json.dump({"mode": transfer.mode, "source_hash": source_hash},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_capgen(directory) -> CaptionGenerator:
    weights, cfg = load_checkpoint(directory)
    if cfg.get("model_type") != "caption_generator":
        raise DataError(f"{directory} is not a caption generator checkpoint")
    vocab = Vocabulary(cfg["vocabulary"], cfg.get("min_count", 5))
    init = InitSpec(**cfg["init"])
    model = CaptionGenerator(
        vocab, cfg["embed_size"], cfg["state_size"], cfg["post_image_size"], init,
        feature_size=cfg["feature_size"],
        post_image_activation=cfg["post_image_activation"],
        normalize_image=cfg["normalize_image"])
    model.params.load_state_dict(weights)
    for name, trainable in cfg.get("trainable", {}).items():
        model.params.set_trainable(name, trainable)
    return model
