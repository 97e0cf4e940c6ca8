"""Extraction-based content metrics (RG, CS, CO), edit distance and corpus BLEU."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .records import RelationKey  # noqa: F401  (re-exported for callers)


def _pct(num, den):
    return None if den == 0 else 100.0 * num / den


def _keys(items):
    return {getattr(x, "key", x) for x in items}


def rg(extracted, db):
    """``(precision, count)`` of unique extracted relations that appear in ``db``.

    Precision is ``None`` when nothing was extracted.
    """
    keys = _keys(extracted)
    hit = len(keys & db.numeric_keys())
    return _pct(hit, len(keys)), hit


def cs(gen_keys, gold_keys):
    """Precision and recall of ``gen_keys`` against ``gold_keys`` (``None`` on an empty denominator)."""
    gen, gold = set(gen_keys), set(gold_keys)
    hit = len(gen & gold)
    return _pct(hit, len(gen)), _pct(hit, len(gold))


def dld(a, b):
    """Optimal-string-alignment Damerau-Levenshtein distance between two sequences."""
    a, b = list(a), list(b)
    m = len(b)
    prev2 = None
    prev = list(range(m + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            bj = b[j - 1]
            best = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ai != bj))
            if i > 1 and j > 1 and ai == b[j - 2] and a[i - 2] == bj and prev2[j - 2] + 1 < best:
                best = prev2[j - 2] + 1
            cur[j] = best
        prev2, prev = prev, cur
    return prev[m]


def co(gen_seq, gold_seq):
    """Content ordering score ``100 * (1 - dld / max(len))`` over extracted record sequences."""
    gen, gold = [getattr(x, "key", x) for x in gen_seq], [getattr(x, "key", x) for x in gold_seq]
    if not gen and not gold:
        return 100.0
    if not gen or not gold:
        return 0.0
    return 100.0 * (1.0 - dld(gen, gold) / max(len(gen), len(gold)))


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4):
    """Corpus BLEU-4 in percent, one reference per candidate, no smoothing."""
    if len(candidates) != len(references):
        raise ValueError(f"bleu: {len(candidates)} candidates vs {len(references)} references")
    match = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = list(cand), list(ref)
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cc, rc = _ngrams(cand, n), _ngrams(ref, n)
            match[n - 1] += sum(min(c, rc[g]) for g, c in cc.items())
            total[n - 1] += max(len(cand) - n + 1, 0)
    if c_len == 0 or min(match) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(match, total)) / max_n
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(log_p)


@dataclass
class DocScores:
    game_id: str
    rg_precision: float | None
    rg_count: int
    cs_precision: float | None
    cs_recall: float | None
    co_score: float


@dataclass
class MetricsReport:
    rg_precision: float | None
    rg_count: float
    cs_precision: float | None
    cs_recall: float | None
    co_score: float
    bleu: float
    n_documents: int
    perplexity: float | None = None
    undefined: dict = field(default_factory=dict)
    documents: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def row(self, name="system"):
        """One fixed-width line in the order RG P%, RG #, CS P%, CS R%, CO, PPL, BLEU."""
        def f(v, w=7, p=2):
            return f"{'-':>{w}}" if v is None else f"{v:>{w}.{p}f}"
        return (f"{name:<12}" + f(self.rg_precision) + f(self.rg_count) + f(self.cs_precision)
                + f(self.cs_recall) + f(self.co_score) + f(self.perplexity) + f(self.bleu))


TABLE_HEADER = f"{'':<12}{'RG P%':>7}{'RG #':>7}{'CS P%':>7}{'CS R%':>7}{'CO':>7}{'PPL':>7}{'BLEU':>7}"


def _mean(values):
    vals = [v for v in values if v is not None]
    return (sum(vals) / len(vals) if vals else None), len(values) - len(vals)


def evaluate_system(gen_docs, pairs, ens, perplexity=None):
    """Score generated documents against gold summaries using ``ens`` as the extractor.

    ``gen_docs`` are :class:`Document` objects or token lists aligned with ``pairs``.
    Document-level values are averaged; undefined values are left out of
    their mean and counted in ``report.undefined``.
    """
    from .extractor import extract_sequence
    from .records import Document

    if len(gen_docs) != len(pairs):
        raise ValueError(f"evaluate_system: {len(gen_docs)} documents for {len(pairs)} games")
    docs = []
    for gen, pair in zip(gen_docs, pairs):
        if not isinstance(gen, Document):
            gen = Document.from_tokens(list(gen))
        gen_ext = extract_sequence(gen, pair.db, ens)
        gold_ext = extract_sequence(pair.summary, pair.db, ens)
        p, n = rg(gen_ext, pair.db)
        cp, cr = cs(_keys(gen_ext), _keys(gold_ext))
        docs.append(DocScores(pair.game_id, p, n, cp, cr, co(gen_ext, gold_ext)))
    undefined = {}
    means = {}
    for name in ("rg_precision", "cs_precision", "cs_recall", "co_score"):
        means[name], undefined[name] = _mean([getattr(d, name) for d in docs])
    cands = [list(g.tokens) if isinstance(g, Document) else list(g) for g in gen_docs]
    return MetricsReport(
        rg_precision=means["rg_precision"],
        rg_count=sum(d.rg_count for d in docs) / len(docs) if docs else 0.0,
        cs_precision=means["cs_precision"],
        cs_recall=means["cs_recall"],
        co_score=means["co_score"] if means["co_score"] is not None else 0.0,
        bleu=bleu(cands, [list(p.summary.tokens) for p in pairs]) if docs else 0.0,
        n_documents=len(docs),
        perplexity=perplexity,
        undefined=undefined,
        documents=[asdict(d) for d in docs],
    )
