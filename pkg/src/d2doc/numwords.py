"""English number-word parsing (0..999) for candidate value spans."""
from __future__ import annotations

from importlib import resources

UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9,
}
TEENS = {
    "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
}
TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50, "sixty": 60,
    "seventy": 70, "eighty": 80, "ninety": 90,
}
NUMBER_WORDS = frozenset(UNITS) | frozenset(TEENS) | frozenset(TENS) | {"hundred"}


def _below_hundred(words):
    if not words:
        return None
    if len(words) == 1:
        w = words[0]
        for table in (UNITS, TEENS, TENS):
            if w in table:
                return table[w]
        return None
    if len(words) == 2 and words[0] in TENS and words[1] in UNITS and words[1] != "zero":
        return TENS[words[0]] + UNITS[words[1]]
    return None


def parse_number_words(words):
    """Value of a lower-cased number-word sequence, or None if it is not one."""
    if "hundred" in words:
        i = words.index("hundred")
        head, tail = words[:i], words[i + 1:]
        if len(head) != 1 or head[0] not in UNITS or head[0] == "zero":
            return None
        value = UNITS[head[0]] * 100
        if tail and tail[0] == "and":
            tail = tail[1:]
            if not tail:
                return None
        if not tail:
            return value
        rest = _below_hundred(tail)
        return None if rest is None or rest == 0 else value + rest
    return _below_hundred(words)


def text2num(tokens, blocklist=None):
    """Parse a token span into an int, or return None.

    A single digit-string token parses directly.  Otherwise the span must be
    English number words up to 999; ``-`` tokens and hyphens inside tokens
    join words ("twenty - three").  Spans listed in ``blocklist`` (phrases as
    produced by :func:`load_blocklist`) return None.
    """
    tokens = [t for t in tokens]
    if not tokens:
        return None
    if len(tokens) == 1 and tokens[0].isdigit() and tokens[0].isascii():
        return int(tokens[0])
    if blocklist and " ".join(t.lower() for t in tokens) in blocklist:
        return None
    if tokens[0] == "-" or tokens[-1] == "-":
        return None
    words = []
    prev_dash = False
    for t in tokens:
        if t == "-":
            if prev_dash:
                return None
            prev_dash = True
            continue
        prev_dash = False
        parts = t.lower().split("-")
        if any(not p for p in parts):
            return None
        words.extend(parts)
    if not all(w in NUMBER_WORDS or w == "and" for w in words):
        return None
    return parse_number_words(words)


def load_blocklist(path=None):
    """Read one phrase per line into a set of lower-cased, space-joined phrases."""
    if path is None:
        text = resources.files("d2doc.data").joinpath("number_blocklist.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(" ".join(line.lower().split()) for line in text.splitlines() if line.strip())


DEFAULT_BLOCKLIST = load_blocklist()
