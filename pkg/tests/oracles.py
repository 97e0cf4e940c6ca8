"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache


@lru_cache(maxsize=None)
def osa_distance(a: tuple, b: tuple) -> int:
    """Restricted edit distance by exhaustive recursion over the first symbols.

    Each step deletes a[0], inserts b[0], matches/substitutes a[0] with b[0],
    or swaps an adjacent pair; no symbol takes part in two operations.
    """
    if not a:
        return len(b)
    if not b:
        return len(a)
    options = [
        1 + osa_distance(a[1:], b),
        1 + osa_distance(a, b[1:]),
        (a[0] != b[0]) + osa_distance(a[1:], b[1:]),
    ]
    if len(a) > 1 and len(b) > 1 and a[0] == b[1] and a[1] == b[0]:
        options.append(1 + osa_distance(a[2:], b[2:]))
    return min(options)


def reference_bleu(cands, refs):
    """Textbook corpus BLEU-4 (clipped counts, brevity penalty), in percent."""
    num = [0] * 4
    den = [0] * 4
    clen = rlen = 0
    for c, r in zip(cands, refs):
        clen += len(c)
        rlen += len(r)
        for n in range(1, 5):
            cg = Counter(zip(*[c[i:] for i in range(n)]))
            rg = Counter(zip(*[r[i:] for i in range(n)]))
            num[n - 1] += sum((cg & rg).values())
            den[n - 1] += sum(cg.values())
    if 0 in num:
        return 0.0
    bp = min(1.0, math.exp(1 - rlen / clen))
    return 100 * bp * math.exp(sum(math.log(x / y) for x, y in zip(num, den)) / 4)
