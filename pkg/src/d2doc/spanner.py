"""Sentence splitting, candidate entity/number spans and distantly supervised IE examples."""
from __future__ import annotations

import json
from dataclasses import dataclass

from .numwords import DEFAULT_BLOCKLIST, text2num
from .records import EPS, Vocab

SENTENCE_END = frozenset({".", "!", "?"})
ABBREVIATIONS = frozenset({"Jr", "Sr", "St", "vs", "Mr", "Mrs", "Dr", "Mt", "Ft"})
MAX_DIST = 40
MAX_NUMBER_SPAN = 7


def split_sentences(tokens):
    """Sentence bounds ``[(start, end), ...]`` partitioning ``range(len(tokens))``."""
    bounds = []
    start = 0
    for i, tok in enumerate(tokens):
        if tok in SENTENCE_END:
            if tok == "." and i > start and tokens[i - 1] in ABBREVIATIONS:
                continue
            bounds.append((start, i + 1))
            start = i + 1
    if start < len(tokens):
        bounds.append((start, len(tokens)))
    return bounds


@dataclass(frozen=True)
class Span:
    sentence_index: int
    start: int
    end: int
    surface: tuple

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")

    def overlaps(self, other):
        return self.start < other.end and other.start < self.end


def _surface_index(db):
    index = {}
    for surface, canon in db.entities.items():
        index[tuple(surface.split())] = canon
    return index, max((len(k) for k in index), default=0)


def entity_spans(sentence, db, sentence_index=0):
    """Greedy longest-match of roster surface forms, left to right.

    An ambiguous surface (e.g. a last name shared by two players) yields one
    entry per candidate entity, all with the same span.
    """
    index, longest = _surface_index(db)
    out = []
    i = 0
    n = len(sentence)
    while i < n:
        for L in range(min(longest, n - i), 0, -1):
            key = tuple(sentence[i:i + L])
            if key in index:
                span = Span(sentence_index, i, i + L, key)
                out.extend((span, canon) for canon in index[key])
                i += L
                break
        else:
            i += 1
    return out


def number_spans(sentence, sentence_index=0, blocklist=DEFAULT_BLOCKLIST):
    """Maximal non-overlapping numeric spans, left to right, with their values."""
    out = []
    lowered = [t.lower() for t in sentence]
    blocked = sorted((tuple(p.split()) for p in blocklist), key=len, reverse=True)
    i = 0
    n = len(sentence)
    while i < n:
        skip = 0
        for phrase in blocked:
            if tuple(lowered[i:i + len(phrase)]) == phrase:
                skip = len(phrase)
                break
        if skip:
            i += skip
            continue
        found = None
        for j in range(min(n, i + MAX_NUMBER_SPAN), i, -1):
            v = text2num(sentence[i:j], blocklist)
            if v is not None:
                found = (j, v)
                break
        if found:
            j, v = found
            out.append((Span(sentence_index, i, j, tuple(sentence[i:j])), v))
            i = j
        else:
            i += 1
    return out


def span_distances(length, span, max_dist=MAX_DIST):
    """Signed offset of each position from ``span``: 0 inside, clipped outside."""
    out = []
    for i in range(length):
        if i < span.start:
            d = i - span.start
        elif i >= span.end:
            d = i - span.end + 1
        else:
            d = 0
        out.append(max(-max_dist, min(max_dist, d)))
    return out


@dataclass(frozen=True)
class IEExample:
    tokens: tuple
    ent: Span
    num: Span
    value: int
    entity: str
    labels: frozenset
    game_id: str = ""
    sent_start: int = 0

    @property
    def sentence_index(self):
        return self.ent.sentence_index

    @property
    def ent_dists(self):
        return span_distances(len(self.tokens), self.ent)

    @property
    def num_dists(self):
        return span_distances(len(self.tokens), self.num)

    def to_json(self, vocab: Vocab):
        return {
            "tokens": vocab.encode(self.tokens),
            "ent": [self.ent.start, self.ent.end],
            "num": [self.num.start, self.num.end],
            "value": self.value,
            "labels": sorted(int(x) for x in self.labels),
            "entity": self.entity,
            "game": self.game_id,
            "sent": self.sentence_index,
            "offset": self.sent_start,
        }

    @classmethod
    def from_json(cls, obj, vocab: Vocab):
        toks = tuple(vocab.decode(obj["tokens"]))
        s = obj.get("sent", 0)
        ent = Span(s, obj["ent"][0], obj["ent"][1], toks[obj["ent"][0]:obj["ent"][1]])
        num = Span(s, obj["num"][0], obj["num"][1], toks[obj["num"][0]:obj["num"][1]])
        return cls(toks, ent, num, int(obj["value"]), obj["entity"], frozenset(obj["labels"]),
                   obj.get("game", ""), obj.get("offset", 0))


def value_index(db):
    """``(entity, value) -> set of numeric record types`` for label lookup."""
    index = {}
    for r in db.records:
        if r.type.is_string:
            continue
        index.setdefault((r.entity, r.value), set()).add(int(r.type))
    return index


def candidate_pairs(tokens, bounds, db, blocklist=DEFAULT_BLOCKLIST):
    """Yield ``(sentence_index, sentence_start, sentence, ent_span, entity, num_span, value)``."""
    for si, (s, e) in enumerate(bounds):
        sent = tuple(tokens[s:e])
        ents = entity_spans(sent, db, si)
        if not ents:
            continue
        nums = number_spans(sent, si, blocklist)
        for espan, canon in ents:
            for nspan, value in nums:
                if espan.overlaps(nspan):
                    continue
                yield si, s, sent, espan, canon, nspan, value


def build_ie_examples(pair, blocklist=DEFAULT_BLOCKLIST):
    """One example per co-occurring (entity span, number span) pair, labelled by lexical match."""
    index = value_index(pair.db)
    doc = pair.summary
    out = []
    for _, start, sent, espan, canon, nspan, value in candidate_pairs(
            doc.tokens, doc.sentence_bounds, pair.db, blocklist):
        labels = frozenset(index.get((canon, value), ())) or frozenset({EPS})
        out.append(IEExample(sent, espan, nspan, value, canon, labels, pair.game_id, start))
    return out


def write_ie_file(path, examples, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(vocab), separators=(",", ":")) + "\n")


def read_ie_file(path, vocab):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(IEExample.from_json(json.loads(line), vocab))
    return out
