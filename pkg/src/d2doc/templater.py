"""Rule-based summary writer: an intro sentence, six player sentences, a fixed closer.

Besides the tokens, :func:`render_summary` returns the oracle alignment: the
relation behind every numeric slot, in surface order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .records import PLAYER_FIELDS, Document, RecordType as RT, RelationKey

N_PLAYERS = 6
CLOSING_HOME_OPP = ("Dallas", "Mavericks")
CLOSING_ROAD_OPP = ("Bulls",)

_FIELD_OF = {v: k for k, v in PLAYER_FIELDS.items()}
_SHOT_FRAGMENTS = (
    (RT.FGM, RT.FGA, "FG"),
    (RT.FG3M, RT.FG3A, "3PT"),
    (RT.FTM, RT.FTA, "FT"),
)


@dataclass(frozen=True)
class TemplateOutput:
    document: Document
    realized: tuple
    # (start, end) token range of each realized slot, parallel to ``realized``
    slots: tuple = ()

    @property
    def tokens(self):
        return self.document.tokens


class _Writer:
    """Token buffer that records the relation behind each numeric slot."""

    def __init__(self, number_style=None):
        self.tokens = []
        self.realized = []
        self.slots = []
        self.number_style = number_style

    def words(self, *toks):
        for t in toks:
            self.tokens.extend(t.split())

    def number(self, entity, value, rtype):
        text = str(value) if self.number_style is None else self.number_style(value, rtype)
        start = len(self.tokens)
        self.tokens.extend(text.split())
        self.realized.append(RelationKey(entity, value, rtype))
        self.slots.append((start, len(self.tokens)))


def top_scorers(db, k):
    """Player entities by descending points; ties keep database order."""
    if k <= 0:
        return []
    scored = [(i, p) for i, p in enumerate(db.players) if isinstance(p.stats.get("pts"), int)]
    scored.sort(key=lambda ip: (-ip[1].stats["pts"], ip[0]))
    return [p.entity for _, p in scored[:k]]


def winner_loser(db):
    hp, vp = db.home.stats.get("pts"), db.vis.stats.get("pts")
    if hp is None or vp is None:
        raise ValueError(f"game {db.game_id}: team points missing")
    if hp == vp:
        raise ValueError(f"game {db.game_id}: tied team points {hp}-{vp}")
    return (db.home, db.vis) if hp > vp else (db.vis, db.home)


def _intro(w, db, lex):
    t1, t2 = winner_loser(db)
    w.words("The", t1.entity)
    _record(w, t1)
    w.words(lex("defeated"), "the", t2.entity)
    _record(w, t2)
    w.number(t1.entity, t1.stats["pts"], RT.TEAM_PTS)
    w.words("-")
    w.number(t2.entity, t2.stats["pts"], RT.TEAM_PTS)
    w.words(".")


def _record(w, team):
    wins, losses = team.stats.get("wins"), team.stats.get("losses")
    if wins is None or losses is None:
        return
    w.words("(")
    w.number(team.entity, wins, RT.TEAM_WINS)
    w.words("-")
    w.number(team.entity, losses, RT.TEAM_LOSSES)
    w.words(")")


def _player(w, db, entity, lex):
    p = next(p for p in db.players if p.entity == entity)
    st = p.stats
    w.words(entity, lex("scored"))
    w.number(entity, st["pts"], RT.PTS)
    w.words("points")
    frags = [(made, att, label) for made, att, label in _SHOT_FRAGMENTS
             if st.get(_FIELD_OF[made]) is not None and st.get(_FIELD_OF[att]) is not None]
    if frags:
        w.words("(")
        for i, (made, att, label) in enumerate(frags):
            if i:
                w.words(",")
            w.number(entity, st[_FIELD_OF[made]], made)
            w.words("-")
            w.number(entity, st[_FIELD_OF[att]], att)
            w.words(label)
        w.words(")")
    if st.get("reb") is not None:
        w.words(lex("to go with"))
        w.number(entity, st["reb"], RT.REB)
        w.words(lex("rebounds"))
    w.words(".")


def _closing(w, db):
    t1, t2 = winner_loser(db)
    w.words("The", t1.entity, "'", "next game will be at home against the", *CLOSING_HOME_OPP,
            ",", "while the", t2.entity, "will travel to play the", *CLOSING_ROAD_OPP, ".")


def render_summary(db, lexicon=None, number_style=None, extra_sentences=None):
    """Template summary of ``db``.

    ``lexicon`` maps a template phrase to a replacement phrase,
    ``number_style(value, type)`` renders a slot value, and
    ``extra_sentences(index)`` may return token lists inserted after
    sentence ``index``.  The defaults give the plain template; the hooks exist
    for the synthetic corpus writer.
    """
    lex = lexicon or (lambda phrase: phrase)
    w = _Writer(number_style)
    sentences = [lambda: _intro(w, db, lex)]
    sentences += [lambda e=e: _player(w, db, e, lex) for e in top_scorers(db, N_PLAYERS)]
    sentences.append(lambda: _closing(w, db))
    for i, emit in enumerate(sentences):
        emit()
        if extra_sentences is not None:
            for toks in extra_sentences(i) or ():
                w.words(*toks)
    return TemplateOutput(Document.from_tokens(w.tokens), tuple(w.realized), tuple(w.slots))


def dumps_generations(ids, token_lists, alignments=None):
    """One JSON object per line: ``{"id", "tokens"}`` plus an optional ``realized`` list."""
    lines = []
    for i, (gid, toks) in enumerate(zip(ids, token_lists)):
        obj = {"id": gid, "tokens": list(toks)}
        if alignments is not None:
            obj["realized"] = [[k.entity, k.value, RT(k.type).name] for k in alignments[i]]
        lines.append(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


def loads_generations(text):
    out = []
    for line in text.splitlines():
        if line.strip():
            obj = json.loads(line)
            out.append((obj["id"], obj["tokens"]))
    return out
