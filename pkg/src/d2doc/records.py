"""Record/document data model, dataset files, value normalization, vocabularies."""
from __future__ import annotations

import enum
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import NamedTuple

SPLITS = ("train", "valid", "test")


class RecordType(enum.IntEnum):
    # player types
    POSN = 0
    MIN = 1
    PTS = 2
    FGM = 3
    FGA = 4
    FG_PCT = 5
    FG3M = 6
    FG3A = 7
    FG3_PCT = 8
    FTM = 9
    FTA = 10
    FT_PCT = 11
    OREB = 12
    DREB = 13
    REB = 14
    AST = 15
    TOV = 16
    STL = 17
    BLK = 18
    PF = 19
    FULL_NAME = 20
    NAME1 = 21
    NAME2 = 22
    CITY = 23
    # team types
    TEAM_PTS_QTR1 = 24
    TEAM_PTS_QTR2 = 25
    TEAM_PTS_QTR3 = 26
    TEAM_PTS_QTR4 = 27
    TEAM_PTS = 28
    TEAM_FG_PCT = 29
    TEAM_FG3_PCT = 30
    TEAM_FT_PCT = 31
    TEAM_REB = 32
    TEAM_AST = 33
    TEAM_TOV = 34
    TEAM_WINS = 35
    TEAM_LOSSES = 36
    TEAM_CITY = 37
    TEAM_NAME = 38

    @property
    def code(self):
        """Symbolic code as printed in box-score tables, e.g. ``FG-PCT``."""
        return self.name.removeprefix("TEAM_").replace("_", "-")

    @property
    def is_team(self):
        return self.value >= RecordType.TEAM_PTS_QTR1

    @property
    def is_string(self):
        return self in STRING_TYPES

    @property
    def is_percent(self):
        return self in PERCENT_TYPES


EPS = len(RecordType)  # 39: "no relation", classifier output only
N_CLASSES = EPS + 1

STRING_TYPES = frozenset({
    RecordType.POSN, RecordType.FULL_NAME, RecordType.NAME1, RecordType.NAME2,
    RecordType.CITY, RecordType.TEAM_CITY, RecordType.TEAM_NAME,
})
PERCENT_TYPES = frozenset({
    RecordType.FG_PCT, RecordType.FG3_PCT, RecordType.FT_PCT,
    RecordType.TEAM_FG_PCT, RecordType.TEAM_FG3_PCT, RecordType.TEAM_FT_PCT,
})

# file key -> record type, in schema order
TEAM_FIELDS = {
    "pts_qtr1": RecordType.TEAM_PTS_QTR1,
    "pts_qtr2": RecordType.TEAM_PTS_QTR2,
    "pts_qtr3": RecordType.TEAM_PTS_QTR3,
    "pts_qtr4": RecordType.TEAM_PTS_QTR4,
    "pts": RecordType.TEAM_PTS,
    "fg_pct": RecordType.TEAM_FG_PCT,
    "fg3_pct": RecordType.TEAM_FG3_PCT,
    "ft_pct": RecordType.TEAM_FT_PCT,
    "reb": RecordType.TEAM_REB,
    "ast": RecordType.TEAM_AST,
    "tov": RecordType.TEAM_TOV,
    "wins": RecordType.TEAM_WINS,
    "losses": RecordType.TEAM_LOSSES,
}
PLAYER_FIELDS = {
    "pos": RecordType.POSN,
    "min": RecordType.MIN,
    "pts": RecordType.PTS,
    "fgm": RecordType.FGM,
    "fga": RecordType.FGA,
    "fg_pct": RecordType.FG_PCT,
    "fg3m": RecordType.FG3M,
    "fg3a": RecordType.FG3A,
    "fg3_pct": RecordType.FG3_PCT,
    "ftm": RecordType.FTM,
    "fta": RecordType.FTA,
    "ft_pct": RecordType.FT_PCT,
    "oreb": RecordType.OREB,
    "dreb": RecordType.DREB,
    "reb": RecordType.REB,
    "ast": RecordType.AST,
    "tov": RecordType.TOV,
    "stl": RecordType.STL,
    "blk": RecordType.BLK,
    "pf": RecordType.PF,
}
TEAM_KEYS = frozenset(TEAM_FIELDS) | {"name", "city"}
PLAYER_KEYS = frozenset(PLAYER_FIELDS) | {"name", "first", "last", "city", "is_home"}


class DatasetError(ValueError):
    """Malformed dataset file or value."""


class SchemaError(DatasetError):
    """Unknown or missing key in a dataset file."""


def _ws(s):
    return " ".join(str(s).split())


def normalize_value(raw, rtype):
    """Normalize a raw box-score value for a record of type ``rtype``.

    Percent types accept fractions in [0, 1] (floats, scaled by 100 and
    rounded half-up) or integers in [0, 100].  Other numeric types need an
    integral value.  String types are whitespace-normalized.
    """
    rtype = RecordType(rtype)
    if rtype.is_string:
        if not isinstance(raw, str):
            raise DatasetError(f"{rtype.name} expects a string, got {raw!r}")
        return _ws(raw)
    if isinstance(raw, bool):
        raise DatasetError(f"{rtype.name} expects a number, got {raw!r}")
    if isinstance(raw, str):
        try:
            raw = float(raw) if "." in raw else int(raw)
        except ValueError:
            raise DatasetError(f"{rtype.name} expects a number, got {raw!r}") from None
    if rtype.is_percent:
        if isinstance(raw, float) and 0.0 <= raw <= 1.0:
            return int((Decimal(repr(raw)) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))
        if float(raw).is_integer() and 0 <= raw <= 100:
            return int(raw)
        raise DatasetError(f"{rtype.name} value {raw!r} is neither a fraction in [0,1] nor an integer percent in [0,100]")
    if isinstance(raw, float):
        if not raw.is_integer():
            raise DatasetError(f"{rtype.name} expects an integer, got {raw!r}")
        raw = int(raw)
    if not isinstance(raw, int):
        raise DatasetError(f"{rtype.name} expects an integer, got {raw!r}")
    return raw


class RelationKey(NamedTuple):
    """Comparable ``(entity, value, type)`` identity of a relation."""

    entity: str
    value: int
    type: RecordType


@dataclass(frozen=True)
class Record:
    type: RecordType
    entity: str
    value: int | str
    is_home: bool

    @property
    def key(self):
        return RelationKey(self.entity, self.value, self.type)


@dataclass(frozen=True)
class TeamInfo:
    name: str
    city: str
    stats: dict = field(default_factory=dict, compare=True)

    @property
    def entity(self):
        return f"{self.city} {self.name}"


@dataclass(frozen=True)
class PlayerInfo:
    name: str
    first: str
    last: str
    city: str
    is_home: bool
    stats: dict = field(default_factory=dict)

    @property
    def entity(self):
        return self.name


def _absent(v):
    return v is None or (isinstance(v, str) and v.strip().upper() in ("N/A", "NA", ""))


@dataclass(frozen=True)
class GameDatabase:
    """All records of one game plus the alias roster used for entity matching."""

    game_id: str
    home: TeamInfo
    vis: TeamInfo
    players: tuple
    records: tuple = field(init=False, compare=False, repr=False)
    entities: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        recs = []
        for team, home in ((self.home, True), (self.vis, False)):
            for key, rtype in TEAM_FIELDS.items():
                v = team.stats.get(key)
                if not _absent(v):
                    recs.append(Record(rtype, team.entity, v, home))
            recs.append(Record(RecordType.TEAM_CITY, team.entity, team.city, home))
            recs.append(Record(RecordType.TEAM_NAME, team.entity, team.name, home))
        for p in self.players:
            for key, rtype in PLAYER_FIELDS.items():
                v = p.stats.get(key)
                if not _absent(v):
                    recs.append(Record(rtype, p.entity, v, p.is_home))
            recs.append(Record(RecordType.FULL_NAME, p.entity, p.name, p.is_home))
            recs.append(Record(RecordType.NAME1, p.entity, p.first, p.is_home))
            recs.append(Record(RecordType.NAME2, p.entity, p.last, p.is_home))
        object.__setattr__(self, "records", tuple(recs))

        aliases: dict[str, list[str]] = {}

        def alias(surface, canon):
            surface = _ws(surface)
            if not surface:
                return
            lst = aliases.setdefault(surface, [])
            if canon not in lst:
                lst.append(canon)

        for team in (self.home, self.vis):
            alias(team.entity, team.entity)
            alias(team.name, team.entity)
            alias(team.city, team.entity)
        for p in self.players:
            alias(p.name, p.entity)
            alias(p.first, p.entity)
            alias(p.last, p.entity)
        object.__setattr__(self, "entities", {k: tuple(v) for k, v in aliases.items()})

    def __len__(self):
        return len(self.records)

    @property
    def teams(self):
        return (self.home, self.vis)

    def canonical_entities(self):
        return [t.entity for t in self.teams] + [p.entity for p in self.players]

    def value(self, entity, rtype):
        """Value of the record ``(entity, rtype)`` or None when absent."""
        for r in self.records:
            if r.entity == entity and r.type == rtype:
                return r.value
        return None

    def numeric_keys(self):
        """Set of ``(entity, value, type)`` for every integer-valued record."""
        return {r.key for r in self.records if not r.type.is_string}

    def to_json(self, summary=None):
        def team_obj(t):
            d = {"name": t.name, "city": t.city}
            d.update({k: t.stats.get(k) for k in TEAM_FIELDS})
            return d

        def player_obj(p):
            d = {"name": p.name, "first": p.first, "last": p.last, "city": p.city, "is_home": p.is_home}
            d.update({k: p.stats.get(k) for k in PLAYER_FIELDS})
            return d

        out = {
            "id": self.game_id,
            "home": team_obj(self.home),
            "vis": team_obj(self.vis),
            "players": [player_obj(p) for p in self.players],
        }
        if summary is not None:
            out["summary"] = list(summary)
        return out


@dataclass(frozen=True)
class Document:
    tokens: tuple
    sentence_bounds: tuple

    @classmethod
    def from_tokens(cls, tokens):
        from .spanner import split_sentences

        tokens = tuple(tokens)
        for t in tokens:
            if not t or any(ch.isspace() for ch in t):
                raise DatasetError(f"invalid token {t!r}")
        return cls(tokens, tuple(split_sentences(tokens)))

    def __len__(self):
        return len(self.tokens)

    def sentences(self):
        return [self.tokens[s:e] for s, e in self.sentence_bounds]


@dataclass(frozen=True)
class ExamplePair:
    db: GameDatabase
    summary: Document

    @property
    def game_id(self):
        return self.db.game_id


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.valid, self.test))

    def all(self):
        return self.train + self.valid + self.test

    def check_disjoint(self):
        seen = {}
        for name in SPLITS:
            for pair in getattr(self, name):
                prev = seen.setdefault(pair.game_id, name)
                if prev != name:
                    raise DatasetError(f"game {pair.game_id!r} appears in both {prev} and {name}")


# -- parsing -------------------------------------------------------------
def _parse_team(obj, where):
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected an object")
    unknown = set(obj) - TEAM_KEYS
    if unknown:
        raise SchemaError(f"{where}: unknown stat key {sorted(unknown)[0]!r}")
    for k in ("name", "city"):
        if not isinstance(obj.get(k), str):
            raise SchemaError(f"{where}: missing string field {k!r}")
    stats = {}
    for key, rtype in TEAM_FIELDS.items():
        raw = obj.get(key)
        try:
            stats[key] = None if _absent(raw) else normalize_value(raw, rtype)
        except DatasetError as e:
            raise DatasetError(f"{where}.{key}: {e}") from None
    return TeamInfo(_ws(obj["name"]), _ws(obj["city"]), stats)


def _parse_player(obj, where):
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected an object")
    unknown = set(obj) - PLAYER_KEYS
    if unknown:
        raise SchemaError(f"{where}: unknown stat key {sorted(unknown)[0]!r}")
    for k in ("name", "first", "last", "city"):
        if not isinstance(obj.get(k), str):
            raise SchemaError(f"{where}: missing string field {k!r}")
    if not isinstance(obj.get("is_home"), bool):
        raise SchemaError(f"{where}: missing boolean field 'is_home'")
    stats = {}
    for key, rtype in PLAYER_FIELDS.items():
        raw = obj.get(key)
        try:
            stats[key] = None if _absent(raw) else normalize_value(raw, rtype)
        except DatasetError as e:
            raise DatasetError(f"{where}.{key}: {e}") from None
    return PlayerInfo(_ws(obj["name"]), _ws(obj["first"]), _ws(obj["last"]), _ws(obj["city"]),
                      obj["is_home"], stats)


def parse_game(obj, where="game"):
    """Build an :class:`ExamplePair` from one game object of a dataset file."""
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected an object")
    unknown = set(obj) - {"id", "home", "vis", "players", "summary"}
    if unknown:
        raise SchemaError(f"{where}: unknown key {sorted(unknown)[0]!r}")
    if not isinstance(obj.get("id"), str):
        raise SchemaError(f"{where}: missing string field 'id'")
    where = f"{where}[id={obj['id']}]"
    home = _parse_team(obj.get("home"), f"{where}.home")
    vis = _parse_team(obj.get("vis"), f"{where}.vis")
    players = obj.get("players")
    if not isinstance(players, list):
        raise SchemaError(f"{where}: missing list field 'players'")
    plist = tuple(_parse_player(p, f"{where}.players[{i}]") for i, p in enumerate(players))
    summary = obj.get("summary", [])
    if not isinstance(summary, list) or not all(isinstance(t, str) for t in summary):
        raise DatasetError(f"{where}.summary: expected a list of token strings")
    db = GameDatabase(obj["id"], home, vis, plist)
    return ExamplePair(db, Document.from_tokens(summary))


def load_games(path):
    """Load one split file into a list of :class:`ExamplePair`."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict) or not isinstance(data.get("games"), list):
        raise SchemaError(f"{path}: top level must be an object with a 'games' list")
    return [parse_game(g, f"{path.name}:games[{i}]") for i, g in enumerate(data["games"])]


def load_dataset(path):
    """Load a :class:`DatasetSplit`.

    ``path`` is either a directory holding ``train.json``/``valid.json``/
    ``test.json`` (missing files give empty splits) or a single split file,
    which lands in the split named by its stem (``train`` otherwise).
    """
    path = Path(path)
    split = DatasetSplit()
    if path.is_dir():
        for name in SPLITS:
            f = path / f"{name}.json"
            if f.exists():
                setattr(split, name, load_games(f))
    elif path.exists():
        name = path.stem if path.stem in SPLITS else "train"
        setattr(split, name, load_games(path))
    else:
        raise FileNotFoundError(path)
    split.check_disjoint()
    return split


def dumps_games(pairs):
    games = [p.db.to_json(p.summary.tokens) for p in pairs]
    return json.dumps({"games": games}, indent=1, ensure_ascii=False) + "\n"


def write_atomic(path, text):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    mode = "wb" if isinstance(text, bytes) else "w"
    kw = {} if isinstance(text, bytes) else {"encoding": "utf-8"}
    with open(tmp, mode, **kw) as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_dataset(split, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_atomic(directory / f"{name}.json", dumps_games(getattr(split, name)))


# -- vocabulary ------------------------------------------------------------
PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


class Vocab:
    """Bidirectional token <-> id map with reserved PAD/UNK/BOS/EOS ids."""

    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def id(self, tok):
        return self.stoi.get(tok, UNK_ID)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def to_list(self):
        return self.itos[len(RESERVED):]

    @classmethod
    def from_list(cls, tokens):
        return cls(tokens)


def build_vocab(pairs, min_count=1):
    """Vocabulary over summary tokens; tokens seen fewer than ``min_count`` times map to UNK."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(t for p in pairs for t in p.summary.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept)
