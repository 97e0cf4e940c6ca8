from __future__ import annotations

import pytest

from d2doc.records import ExamplePair, GameDatabase, PlayerInfo, TeamInfo
from d2doc.synth import synth_corpus
from d2doc.templater import render_summary

# (name, first, last, city, home, ast, reb, pts, fgm, fga)
HAWKS_HEAT_PLAYERS = [
    ("Tyler Johnson", "Tyler", "Johnson", "Miami", False, 5, 2, 27, 8, 16),
    ("Dwight Howard", "Dwight", "Howard", "Atlanta", True, 4, 17, 23, 9, 11),
    ("Paul Millsap", "Paul", "Millsap", "Atlanta", True, 2, 9, 21, 8, 12),
    ("Goran Dragic", "Goran", "Dragic", "Miami", False, 4, 2, 21, 8, 17),
    ("Wayne Ellington", "Wayne", "Ellington", "Miami", False, 2, 3, 19, 7, 15),
    ("Dennis Schroder", "Dennis", "Schroder", "Atlanta", True, 7, 4, 17, 8, 15),
    ("Rodney McGruder", "Rodney", "McGruder", "Miami", False, 5, 5, 11, 3, 8),
    ("Thabo Sefolosha", "Thabo", "Sefolosha", "Atlanta", True, 5, 5, 10, 5, 11),
    ("Kyle Korver", "Kyle", "Korver", "Atlanta", True, 5, 3, 9, 3, 9),
]


def hawks_heat_db():
    """Hawks beat Heat, with a partial box score for nine players."""
    hawks = TeamInfo("Hawks", "Atlanta", {"pts": 103, "wins": 7, "losses": 15, "fg_pct": 49, "reb": 47, "ast": 27})
    heat = TeamInfo("Heat", "Miami", {"pts": 95, "wins": 11, "losses": 12, "fg_pct": 43, "reb": 33, "ast": 20})
    players = []
    for name, first, last, city, home, ast, reb, pts, fgm, fga in HAWKS_HEAT_PLAYERS:
        stats = {"ast": ast, "reb": reb, "pts": pts, "fgm": fgm, "fga": fga,
                 "fg3m": 1, "fg3a": 3, "ftm": 2, "fta": 2}
        players.append(PlayerInfo(name, first, last, city, home, stats))
    return GameDatabase("hawks-heat", hawks, heat, tuple(players))


@pytest.fixture
def hh_db():
    return hawks_heat_db()


@pytest.fixture
def hh_pair():
    db = hawks_heat_db()
    return ExamplePair(db, render_summary(db).document)


@pytest.fixture(scope="session")
def synth10():
    return synth_corpus(10, 5)


# -- acceptance reporting ----------------------------------------------------
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when not in ("setup", "call"):
        return
    n, title = mark.args
    failed = call.excinfo is not None
    prev = _CRITERIA.get(n)
    if call.when == "setup" and not failed:
        return
    detail = getattr(item, "criterion_detail", "")
    _CRITERIA[n] = (title, "FAIL" if failed or (prev and prev[1] == "FAIL") else "PASS", detail)


@pytest.fixture
def report(request):
    """Attach a short measurement string to the current criterion line."""
    def note(text):
        request.node.criterion_detail = text
    return note


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        line = f"criterion {n:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
