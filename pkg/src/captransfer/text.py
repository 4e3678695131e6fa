"""Corpus preprocessing, vocabularies, and corpus subsampling.

Preprocessing: lowercase, each maximal ASCII digit run becomes the ⟨num⟩
pseudo-word, every other non-alphanumeric character (Unicode letters +
ASCII digits count as alphanumeric) is dropped, then whitespace-tokenize.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError, SubsampleSizeError
from .rng import Rng

NUM_TOKEN = "⟨num⟩"      # ⟨num⟩; serialized as <num> in text/JSONL files
NUM_TOKEN_SERIALIZED = "<num>"
EDGE_TOKEN = "⟨edge⟩"    # sentence start and end marker
UNKNOWN_TOKEN = "⟨unk⟩"
RESERVED_TOKENS = (EDGE_TOKEN, UNKNOWN_TOKEN)

_SENTINEL = ""
_DIGIT_RUN = re.compile(r"[0-9]+")
_NUM_SPELLINGS = re.compile(re.escape(NUM_TOKEN) + "|" + re.escape(NUM_TOKEN_SERIALIZED))

Sentence = list[str]


def preprocess_sentence(raw: str) -> Sentence:
    """Clean one raw sentence into tokens; [] marks a sentence that emptied out.

    Idempotent on its own space-joined output (existing ⟨num⟩/<num>
    spellings are protected before the digit and punctuation passes).
    """
    text = _NUM_SPELLINGS.sub(_SENTINEL, raw.lower())
    text = _DIGIT_RUN.sub(f" {_SENTINEL} ", text)
    kept = []
    for ch in text:
        if ch.isalpha() or ch in "0123456789" or ch == _SENTINEL:
            kept.append(ch)
        elif ch.isspace():
            kept.append(" ")
    return [NUM_TOKEN if tok == _SENTINEL else tok for tok in "".join(kept).split()]


@dataclass
class Corpus:
    sentences: list[Sentence]
    tag: str = "other"

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


def preprocess_corpus(lines, tag: str = "other", max_tokens: int | None = None) -> tuple[Corpus, int]:
    """Preprocess raw lines; returns (corpus, count of dropped-empty sentences)."""
    sentences = []
    dropped = 0
    for line in lines:
        tokens = preprocess_sentence(line)
        if not tokens:
            dropped += 1
            continue
        sentences.append(tokens)
    corpus = Corpus(sentences, tag)
    if max_tokens is not None:
        corpus = filter_by_length(corpus, max_tokens)
    return corpus, dropped


def filter_by_length(corpus: Corpus, max_tokens: int = 50) -> Corpus:
    """Drop sentences with more than max_tokens tokens, order preserved."""
    return Corpus([s for s in corpus.sentences if len(s) <= max_tokens], corpus.tag)


@dataclass
class Vocabulary:
    """Bidirectional token-index mapping; EDGE and UNKNOWN always present."""

    tokens: list[str]
    min_count: int = 5
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.tokens[:2]) != list(RESERVED_TOKENS):
            raise ConfigError("vocabulary must start with the reserved tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def edge_index(self) -> int:
        return 0

    @property
    def unknown_index(self) -> int:
        return 1

    def content_tokens(self) -> list[str]:
        return self.tokens[2:]

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.unknown_index)

    def token_at(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocabulary(corpus: Corpus, min_count: int = 5) -> Vocabulary:
    """Tokens occurring at least min_count times, reserved tokens first."""
    counts = Counter(tok for sentence in corpus for tok in sentence)
    content = sorted(tok for tok, c in counts.items() if c >= min_count)
    return Vocabulary(list(RESERVED_TOKENS) + content, min_count)


def intersect_vocabulary(lm_vocab: Vocabulary, caption_vocab: Vocabulary) -> Vocabulary:
    """Content intersection with fresh contiguous indices; used by the caption
    generator only (the language model keeps its full vocabulary)."""
    shared = sorted(set(lm_vocab.content_tokens()) & set(caption_vocab.content_tokens()))
    if not shared:
        raise ConfigError("vocabulary intersection is empty; caption generator untrainable")
    return Vocabulary(list(RESERVED_TOKENS) + shared, caption_vocab.min_count)


def encode_sentence(sentence: Sentence, vocab: Vocabulary) -> list[int]:
    """EDGE + token indices (unknowns to UNKNOWN) + EDGE."""
    edge = vocab.edge_index
    return [edge] + [vocab.lookup(tok) for tok in sentence] + [edge]


def decode_indices(indices, vocab: Vocabulary) -> Sentence:
    """Tokens for the given indices with boundary EDGE markers stripped."""
    toks = [vocab.token_at(i) for i in indices]
    while toks and toks[0] == EDGE_TOKEN:
        toks = toks[1:]
    while toks and toks[-1] == EDGE_TOKEN:
        toks = toks[:-1]
    return toks


def subsample_size(multiple_exponent: float, base: int = 30000) -> int:
    return int(round((10.0 ** multiple_exponent) * base))


def subsample_corpus(corpus: Corpus, multiple_exponent: float, base: int = 30000,
                     seed: int = 0) -> Corpus:
    """Uniform sample without replacement of round(10^x * base) sentences."""
    k = subsample_size(multiple_exponent, base)
    if k > len(corpus):
        raise SubsampleSizeError(
            f"subsample of {k} sentences exceeds corpus of {len(corpus)}")
    rng = Rng(seed)
    picked = rng.sample_indices(len(corpus), k)
    return Corpus([corpus.sentences[i] for i in picked], corpus.tag)


def count_word_types(corpus: Corpus) -> int:
    """Distinct token types in a preprocessed corpus."""
    return len({tok for sentence in corpus for tok in sentence})


def serialize_tokens(tokens: Sentence) -> str:
    """Space-joined tokens with the pseudo-word in its <num> file spelling."""
    return " ".join(NUM_TOKEN_SERIALIZED if t == NUM_TOKEN else t for t in tokens)
