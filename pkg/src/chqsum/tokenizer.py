"""Subword vocabulary: frequency-pair merge training, greedy longest-match encoding.

Continuation pieces carry the ``##`` prefix. Five reserved tokens occupy the
first ids and are never produced by vocabulary training. Text is always
lowercased; punctuation splits into single-character tokens.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_RESERVED = len(RESERVED)


def pretokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation becomes its own token."""
    words: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if current:
                words.append("".join(current))
                current = []
        elif ch.isalnum():
            current.append(ch)
        else:
            if current:
                words.append("".join(current))
                current = []
            words.append(ch)
    if current:
        words.append("".join(current))
    return words


class Vocab:
    """Bijective token/id mapping with fixed reserved ids 0-4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:NUM_RESERVED] != list(RESERVED):
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.id_to_token: list[str] = tokens
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_pieces(cls, pieces: Iterable[str]) -> "Vocab":
        return cls(list(RESERVED) + list(pieces))

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for token in self.id_to_token:
                f.write(token + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])

    def encode_word(self, word: str) -> list[int]:
        """Greedy longest-match segmentation of a single word.

        A word with any unmatchable remainder collapses to a single [UNK].
        """
        whole = self.token_to_id.get(word)
        if whole is not None:
            return [whole]
        ids: list[int] = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = "##" + piece
                tid = self.token_to_id.get(piece)
                if tid is not None:
                    found = tid
                    break
                end -= 1
            if found is None:
                return [UNK_ID]
            ids.append(found)
            start = end
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in pretokenize(text):
            ids.extend(self.encode_word(word))
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Join pieces back into words, dropping [PAD]/[CLS]/[SEP]."""
        words: list[str] = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise ValueError(f"token id {i} out of range for |V|={len(self)}")
            token = self.id_to_token[i]
            if token in (PAD, CLS, SEP):
                continue
            if token.startswith("##") and words:
                words[-1] += token[2:]
            else:
                words.append(token)
        return " ".join(words)


def _word_to_pieces(word: str) -> tuple[str, ...]:
    return tuple(word[0:1]) + tuple("##" + c for c in word[1:])


def build_vocab(corpus: Iterable[str], target_size: int) -> Vocab:
    """Train a subword vocabulary by merging frequent adjacent piece pairs.

    Starting from single characters (continuations prefixed ``##``), the
    highest-frequency adjacent pair is merged repeatedly until the vocabulary
    reaches ``target_size``. Ties break lexicographically on the pair, so the
    result is deterministic for a given corpus.
    """
    if target_size <= NUM_RESERVED:
        raise ValueError(f"target_size must exceed {NUM_RESERVED} reserved tokens")
    word_freq: Counter[str] = Counter()
    for line in corpus:
        word_freq.update(pretokenize(line))
    if not word_freq:
        raise ValueError("empty corpus")
    segmentations = {w: _word_to_pieces(w) for w in word_freq}
    pieces = {p for seg in segmentations.values() for p in seg}
    while len(pieces) + NUM_RESERVED < target_size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for word, seg in segmentations.items():
            n = word_freq[word]
            for a, b in zip(seg, seg[1:]):
                pair_freq[(a, b)] += n
        if not pair_freq:
            break
        best = min(pair_freq, key=lambda p: (-pair_freq[p], p))
        merged = best[0] + best[1][2:]
        pieces.add(merged)
        for word, seg in segmentations.items():
            if len(seg) < 2:
                continue
            out: list[str] = []
            i = 0
            while i < len(seg):
                if i + 1 < len(seg) and (seg[i], seg[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seg[i])
                    i += 1
            segmentations[word] = tuple(out)
    return Vocab.from_pieces(sorted(pieces))
