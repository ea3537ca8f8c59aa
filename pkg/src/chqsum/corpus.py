"""Example packing, attention visibility, Cloze masking, entity tagging,
and heuristic question-type labeling.

An encoded example is ``[CLS] question [SEP] summary [SEP]`` with segment id 0
over the question part (including [CLS] and the first [SEP]) and 1 over the
summary part (including the final [SEP]), so its length is always
``len(question) + len(summary) + 3``. The additive visibility matrix lets the
question block attend bidirectionally to itself while each summary position
sees the whole question plus its own left context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Sequence

import numpy as np

from .autodiff import NEG_INF
from .tokenizer import CLS_ID, MASK_ID, NUM_RESERVED, SEP_ID, Vocab, pretokenize

DEFAULT_MAX_QUESTION = 100
DEFAULT_MAX_SUMMARY = 20
S2S_SELECT_RATE = 0.15
ENTITY_MASK_PROB = 0.5
MAX_NGRAM = 3


class QuestionType(IntEnum):
    """Closed set of question intents; the ordinal indexes the type-embedding row."""

    INFORMATION = 0
    TREATMENT = 1
    TESTING = 2
    CAUSE = 3
    PHYSICIAN = 4
    INGREDIENTS = 5
    OTHER = 6

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "QuestionType":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown question type {label!r}") from None


NUM_QUESTION_TYPES = len(QuestionType)

DEFAULT_KEYWORDS: dict[QuestionType, tuple[str, ...]] = {
    QuestionType.TREATMENT: ("treat", "treatment", "therapy", "cure"),
    QuestionType.TESTING: ("test", "testing", "diagnose", "diagnosis", "screening"),
    QuestionType.CAUSE: ("cause",),
    QuestionType.PHYSICIAN: ("doctor", "physician", "specialist"),
    QuestionType.INGREDIENTS: ("ingredient",),
    QuestionType.INFORMATION: ("information", "find", "what is"),
}


@dataclass
class EncodedExample:
    """Packed token ids plus masking bookkeeping for one (question, summary) pair."""

    ids: list[int]
    segments: list[int]
    mask_positions: list[int] = field(default_factory=list)
    mask_labels: list[int] = field(default_factory=list)
    qtype: QuestionType | None = None

    @property
    def q_span(self) -> int:
        return self.segments.index(1) if 1 in self.segments else len(self.segments)

    @property
    def s_span(self) -> int:
        return len(self.segments) - self.q_span

    @property
    def summary_token_positions(self) -> range:
        """Positions of the real summary tokens (the final [SEP] excluded)."""
        return range(self.q_span, len(self.ids) - 1)


def pack(q_ids: Sequence[int], s_ids: Sequence[int],
         max_q: int = DEFAULT_MAX_QUESTION, max_s: int = DEFAULT_MAX_SUMMARY,
         qtype: QuestionType | None = None) -> EncodedExample:
    """Truncate and join a question/summary pair into one input sequence."""
    if not q_ids:
        raise ValueError("question encodes to no tokens")
    if not s_ids:
        raise ValueError("summary encodes to no tokens")
    q = list(q_ids)[:max_q]
    s = list(s_ids)[:max_s]
    ids = [CLS_ID] + q + [SEP_ID] + s + [SEP_ID]
    segments = [0] * (len(q) + 2) + [1] * (len(s) + 1)
    return EncodedExample(ids=ids, segments=segments, qtype=qtype)


def pack_question(q_ids: Sequence[int],
                  max_q: int = DEFAULT_MAX_QUESTION,
                  qtype: QuestionType | None = None) -> EncodedExample:
    """Encoding-only packing (no summary side): ``[CLS] question [SEP]``."""
    if not q_ids:
        raise ValueError("question encodes to no tokens")
    q = list(q_ids)[:max_q]
    ids = [CLS_ID] + q + [SEP_ID]
    return EncodedExample(ids=ids, segments=[0] * len(ids), qtype=qtype)


def build_mask_matrix(q_span: int, s_span: int) -> np.ndarray:
    """Additive attention-visibility matrix with 0 (visible) / -inf (hidden).

    Rows are queries, columns keys. Question rows see every question column
    and no summary column; summary row ``j`` sees the question plus summary
    columns up to and including itself.
    """
    if q_span < 1:
        raise ValueError("q_span must be at least 1")
    if s_span < 0:
        raise ValueError("s_span must be non-negative")
    n = q_span + s_span
    m = np.zeros((n, n), dtype=np.float64)
    if s_span:
        m[:q_span, q_span:] = NEG_INF
        summary = np.arange(s_span)
        hidden = summary[:, None] < summary[None, :]
        m[q_span:, q_span:][hidden] = NEG_INF
    return m


def _require_maskable(example: EncodedExample) -> list[int]:
    maskable = list(example.summary_token_positions)
    if not maskable:
        raise ValueError("example has no maskable summary tokens")
    return maskable


def mask_s2s(example: EncodedExample, rng: np.random.Generator, vocab_size: int,
             select_rate: float = S2S_SELECT_RATE) -> EncodedExample:
    """Token-level Cloze masking of the summary.

    Each summary token is independently selected with ``select_rate`` (at
    least one selection is forced). A selected token becomes [MASK] 80% of
    the time, a random non-reserved vocabulary token 10% of the time, and
    stays unchanged otherwise; the original token is always recorded as the
    prediction label.
    """
    maskable = _require_maskable(example)
    selected = [p for p in maskable if rng.random() < select_rate]
    if not selected:
        selected = [maskable[rng.integers(len(maskable))]]
    ids = list(example.ids)
    labels = []
    for p in selected:
        labels.append(example.ids[p])
        u = rng.random()
        if u < 0.8:
            ids[p] = MASK_ID
        elif u < 0.9:
            ids[p] = int(rng.integers(NUM_RESERVED, vocab_size))
        # else: keep the original token
    return replace(example, ids=ids, mask_positions=selected, mask_labels=labels)


def mask_ngram(example: EncodedExample, rng: np.random.Generator,
               max_n: int = MAX_NGRAM) -> EncodedExample:
    """Mask one contiguous n-gram of the summary, n drawn uniformly from 1..max_n."""
    maskable = _require_maskable(example)
    n = min(int(rng.integers(1, max_n + 1)), len(maskable))
    start = int(rng.integers(0, len(maskable) - n + 1))
    span = maskable[start:start + n]
    ids = list(example.ids)
    labels = [example.ids[p] for p in span]
    for p in span:
        ids[p] = MASK_ID
    return replace(example, ids=ids, mask_positions=list(span), mask_labels=labels)


class Gazetteer:
    """Plain list of lowercase entity surface strings, matched longest-first."""

    def __init__(self, entries: Sequence[str]):
        self.entries: list[tuple[str, ...]] = []
        seen = set()
        for entry in entries:
            words = tuple(pretokenize(entry))
            if not words:
                raise ValueError("gazetteer entries must be non-empty")
            if words not in seen:
                seen.add(words)
                self.entries.append(words)
        self._by_first: dict[str, list[tuple[str, ...]]] = {}
        for words in self.entries:
            self._by_first.setdefault(words[0], []).append(words)
        for options in self._by_first.values():
            options.sort(key=len, reverse=True)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path: str) -> "Gazetteer":
        with open(path, encoding="utf-8") as f:
            return cls([line.strip().lower() for line in f if line.strip()])

    def longest_match(self, words: Sequence[str], start: int) -> int:
        """Number of words matched by the longest entry starting at ``start``."""
        for candidate in self._by_first.get(words[start], ()):
            end = start + len(candidate)
            if end <= len(words) and tuple(words[start:end]) == candidate:
                return len(candidate)
        return 0


def _group_words(tokens: Sequence[str]) -> tuple[list[str], list[list[int]]]:
    """Group subword pieces into words, remembering each word's token indexes."""
    words: list[str] = []
    spans: list[list[int]] = []
    for i, token in enumerate(tokens):
        if token.startswith("##") and words:
            words[-1] += token[2:]
            spans[-1].append(i)
        else:
            words.append(token)
            spans.append([i])
    return words, spans


def tag_entities(tokens: Sequence[str], gazetteer: Gazetteer) -> list[tuple[int, int]]:
    """Left-to-right longest-match entity spans, as half-open subword ranges."""
    if not tokens or len(gazetteer) == 0:
        return []
    words, spans = _group_words(tokens)
    result: list[tuple[int, int]] = []
    w = 0
    while w < len(words):
        matched = gazetteer.longest_match(words, w)
        if matched:
            result.append((spans[w][0], spans[w + matched - 1][-1] + 1))
            w += matched
        else:
            w += 1
    return result


def mask_entities(example: EncodedExample, spans: Sequence[tuple[int, int]],
                  rng: np.random.Generator, vocab_size: int,
                  p: float = ENTITY_MASK_PROB) -> EncodedExample:
    """Mask each summary-side entity span independently with probability ``p``.

    Selection is redrawn until at least one span is chosen, so the objective
    is never vacuous; with no spans at all this falls back to token-level
    Cloze masking.
    """
    maskable = set(example.summary_token_positions)
    spans = [s for s in spans if all(pos in maskable for pos in range(s[0], s[1]))]
    if not spans:
        return mask_s2s(example, rng, vocab_size)
    if p <= 0.0:
        chosen = [spans[int(rng.integers(len(spans)))]]
    else:
        while True:
            chosen = [s for s in spans if rng.random() < p]
            if chosen:
                break
    ids = list(example.ids)
    positions: list[int] = []
    labels: list[int] = []
    for start, end in chosen:
        for pos in range(start, end):
            positions.append(pos)
            labels.append(example.ids[pos])
            ids[pos] = MASK_ID
    return replace(example, ids=ids, mask_positions=positions, mask_labels=labels)


_STRIP_SUFFIXES = ("ing", "es", "ed", "s")


def lemma_candidates(word: str) -> tuple[str, ...]:
    """The word itself plus each plausible suffix-stripped form."""
    cands = [word]
    for suffix in _STRIP_SUFFIXES:
        if word.endswith(suffix) and len(word) > len(suffix) + 1:
            stem = word[: -len(suffix)]
            if stem not in cands:
                cands.append(stem)
    return tuple(cands)


def load_keyword_table(path: str) -> dict[QuestionType, tuple[str, ...]]:
    """Read a JSON object mapping type labels to keyword lists."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    table: dict[QuestionType, tuple[str, ...]] = {}
    for label, keywords in raw.items():
        qtype = QuestionType.from_label(label)
        table[qtype] = tuple(str(k).lower() for k in keywords)
    return table


def label_qtype(summary_text: str,
                keyword_table: dict[QuestionType, tuple[str, ...]] | None = None
                ) -> QuestionType:
    """Assign the question type whose keyword occurs earliest in the summary.

    Words are matched against keywords both as written and suffix-stripped
    (s/es/ed/ing); multi-word keywords must match consecutively. With no
    keyword hit at all the type is Other.
    """
    table = keyword_table if keyword_table is not None else DEFAULT_KEYWORDS
    words = pretokenize(summary_text)
    candidates = [lemma_candidates(w) for w in words]

    def phrase_matches(at: int, phrase: tuple[str, ...]) -> bool:
        if at + len(phrase) > len(words):
            return False
        return all(phrase[k] in candidates[at + k] for k in range(len(phrase)))

    keyword_phrases = [
        (qtype, tuple(keyword.split()))
        for qtype in sorted(table, key=lambda t: t.value)
        for keyword in table[qtype]
    ]
    for at in range(len(words)):
        best: QuestionType | None = None
        best_len = 0
        for qtype, phrase in keyword_phrases:
            if len(phrase) > best_len and phrase_matches(at, phrase):
                best = qtype
                best_len = len(phrase)
        if best is not None:
            return best
    return QuestionType.OTHER


def encode_pair(question: str, summary: str, vocab: Vocab,
                max_q: int = DEFAULT_MAX_QUESTION,
                max_s: int = DEFAULT_MAX_SUMMARY,
                qtype: QuestionType | None = None) -> EncodedExample:
    """Tokenize and pack one raw (question, summary) pair."""
    return pack(vocab.encode(question), vocab.encode(summary),
                max_q=max_q, max_s=max_s, qtype=qtype)


def summary_entity_spans(example: EncodedExample, vocab: Vocab,
                         gazetteer: Gazetteer | None) -> list[tuple[int, int]]:
    """Entity spans over the summary side of a packed example."""
    if gazetteer is None or len(gazetteer) == 0:
        return []
    positions = list(example.summary_token_positions)
    tokens = [vocab.id_to_token[example.ids[p]] for p in positions]
    offset = example.q_span
    return [(s + offset, e + offset) for s, e in tag_entities(tokens, gazetteer)]
