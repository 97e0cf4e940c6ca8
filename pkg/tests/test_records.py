from __future__ import annotations

import json

import pytest

from d2doc.records import (
    EPS, N_CLASSES, UNK_ID, DatasetError, DatasetSplit, Document, RecordType, SchemaError,
    build_vocab, dumps_games, load_dataset, normalize_value, save_dataset,
)
from d2doc.synth import synth_corpus, synth_games


def test_record_types_fixed():
    assert len(RecordType) == 39
    assert [int(t) for t in RecordType] == list(range(39))
    assert EPS == 39 and N_CLASSES == 40
    assert RecordType.FG_PCT.code == "FG-PCT"
    assert RecordType.TEAM_PTS_QTR1.code == "PTS-QTR1"
    assert sum(t.is_team for t in RecordType) == 15


def _full_game(gid="g1", n_players=26):
    team_stats = {"pts_qtr1": 20, "pts_qtr2": 25, "pts_qtr3": 30, "pts_qtr4": 28, "pts": 103,
                  "fg_pct": 0.49, "fg3_pct": 35, "ft_pct": 0.8, "reb": 47, "ast": 27, "tov": 12,
                  "wins": 7, "losses": 15}
    players = []
    for i in range(n_players):
        p = {"name": f"P{i} Q{i}", "first": f"P{i}", "last": f"Q{i}", "city": "Atlanta",
             "is_home": i < n_players // 2, "pos": "G", "min": 30, "pts": 10, "fgm": 4, "fga": 9,
             "fg_pct": 0.444, "fg3m": 1, "fg3a": 3, "fg3_pct": 0.333, "ftm": 1, "fta": 2,
             "ft_pct": 0.5, "oreb": 1, "dreb": 3, "reb": 4, "ast": 2, "tov": 1, "stl": 1,
             "blk": 0, "pf": 2}
        players.append(p)
    return {"id": gid, "home": dict(team_stats, name="Hawks", city="Atlanta"),
            "vis": dict(team_stats, name="Heat", city="Miami", pts=95), "players": players,
            "summary": ["The", "Hawks", "won", "."]}


def test_full_game_has_628_records(tmp_path):
    f = tmp_path / "train.json"
    f.write_text(json.dumps({"games": [_full_game()]}))
    split = load_dataset(f)
    assert len(split.train) == 1
    assert len(split.train[0].db) == 628


def test_synthetic_game_has_628_records():
    pair, _ = synth_corpus(1, 0)[0]
    assert len(pair.db) == 628


def test_empty_games_list(tmp_path):
    (tmp_path / "train.json").write_text('{"games": []}')
    split = load_dataset(tmp_path)
    assert split.train == [] and split.valid == [] and split.test == []


def test_absent_field_drops_record(tmp_path):
    g = _full_game()
    g["players"][0]["blk"] = "N/A"
    f = tmp_path / "test.json"
    f.write_text(json.dumps({"games": [g]}))
    assert len(load_dataset(f).test[0].db) == 627


def test_unknown_key_is_schema_error(tmp_path):
    g = _full_game()
    g["players"][3]["dunks"] = 4
    f = tmp_path / "train.json"
    f.write_text(json.dumps({"games": [g]}))
    with pytest.raises(SchemaError, match="dunks"):
        load_dataset(f)


def test_malformed_file_reports_line(tmp_path):
    f = tmp_path / "train.json"
    f.write_text('{"games": [\n{"id": }\n]}')
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(f)


def test_overlapping_splits_rejected(tmp_path):
    for name in ("train", "test"):
        (tmp_path / f"{name}.json").write_text(json.dumps({"games": [_full_game("same")]}))
    with pytest.raises(DatasetError, match="same"):
        load_dataset(tmp_path)


def test_save_load_roundtrip(tmp_path):
    split = synth_games(10, 2)
    save_dataset(split, tmp_path)
    back = load_dataset(tmp_path)
    assert dumps_games(back.train) == dumps_games(split.train)
    assert [p.game_id for p in back.test] == [p.game_id for p in split.test]


@pytest.mark.parametrize("raw,rtype,expected", [
    (0.49, RecordType.FG_PCT, 49),
    (95, RecordType.PTS, 95),
    ("Miami", RecordType.CITY, "Miami"),
    ("  Miami   Heat ", RecordType.TEAM_NAME, "Miami Heat"),
    (1.0, RecordType.FT_PCT, 100),
    (0, RecordType.FT_PCT, 0),
    (0.125, RecordType.FG3_PCT, 13),
    (45, RecordType.FG_PCT, 45),
    ("12", RecordType.REB, 12),
])
def test_normalize_value(raw, rtype, expected):
    assert normalize_value(raw, rtype) == expected


@pytest.mark.parametrize("raw,rtype", [
    (150, RecordType.FG_PCT),
    (-0.2, RecordType.FG_PCT),
    (12.5, RecordType.FG_PCT),
    (3.5, RecordType.PTS),
    (7, RecordType.CITY),
    ("many", RecordType.AST),
])
def test_normalize_value_rejects(raw, rtype):
    with pytest.raises(DatasetError):
        normalize_value(raw, rtype)


def test_document_sentences():
    doc = Document.from_tokens("A b . C d".split())
    assert doc.sentence_bounds == ((0, 3), (3, 5))
    assert doc.sentences() == [("A", "b", "."), ("C", "d")]
    with pytest.raises(DatasetError):
        Document.from_tokens(["ok", "not ok"])


def _pairs_with(tokens):
    pair, _ = synth_corpus(1, 0)[0]
    return [type(pair)(pair.db, Document.from_tokens(tokens))]


def test_vocab_single_token():
    v = build_vocab(_pairs_with(["a"] * 5))
    assert v.to_list() == ["a"]
    assert len(v) == 5


def test_vocab_min_count():
    v = build_vocab(_pairs_with(["a", "a", "b"]), min_count=2)
    assert v.id("b") == UNK_ID
    assert v.id("a") != UNK_ID
    with pytest.raises(ValueError):
        build_vocab([], min_count=0)


def test_synth_deterministic():
    a = dumps_games(synth_games(1, 7).all())
    b = dumps_games(synth_games(1, 7).all())
    assert a == b


def test_synth_split_sizes():
    split = synth_games(10, 1)
    assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)
    split.check_disjoint()


def test_synth_team_points_sum_quarters():
    for pair, _ in synth_corpus(20, 4):
        for team in pair.db.teams:
            s = team.stats
            assert s["pts"] == s["pts_qtr1"] + s["pts_qtr2"] + s["pts_qtr3"] + s["pts_qtr4"]
            assert sum(p.stats["pts"] for p in pair.db.players if p.city == team.city) == s["pts"]


def test_default_noise_numbers_all_match_records():
    # every number mentioned in a sentence is a value of some record of an entity
    # named in that sentence (exhaustive scan)
    from d2doc.spanner import entity_spans, number_spans
    from d2doc.synth import NoiseConfig

    for pair, _ in synth_corpus(100, 3, NoiseConfig.default()):
        values = {}
        for r in pair.db.records:
            if not r.type.is_string:
                values.setdefault(r.entity, set()).add(r.value)
        for sent in pair.summary.sentences():
            nums = number_spans(sent)
            if not nums:
                continue
            ents = {e for _, e in entity_spans(sent, pair.db)}
            for _, v in nums:
                assert any(v in values[e] for e in ents), (sent, v)


def test_dataset_split_iter():
    s = DatasetSplit([1], [2], [3])
    assert list(s) == [[1], [2], [3]]
    assert s.all() == [1, 2, 3]
