"""Synthetic box-score games with internally consistent stats and template summaries."""
from __future__ import annotations

import random
from dataclasses import dataclass

from .records import (
    DatasetSplit,
    ExamplePair,
    GameDatabase,
    PlayerInfo,
    RecordType as RT,
    TeamInfo,
)
from .templater import render_summary

TEAMS = [
    ("Atlanta", "Hawks"), ("Boston", "Celtics"), ("Brooklyn", "Nets"), ("Charlotte", "Hornets"),
    ("Chicago", "Bulls"), ("Cleveland", "Cavaliers"), ("Dallas", "Mavericks"), ("Denver", "Nuggets"),
    ("Detroit", "Pistons"), ("Golden State", "Warriors"), ("Houston", "Rockets"),
    ("Indiana", "Pacers"), ("Los Angeles", "Clippers"), ("Los Angeles", "Lakers"),
    ("Memphis", "Grizzlies"), ("Miami", "Heat"), ("Milwaukee", "Bucks"), ("Minnesota", "Timberwolves"),
    ("New Orleans", "Pelicans"), ("New York", "Knicks"), ("Oklahoma City", "Thunder"),
    ("Orlando", "Magic"), ("Philadelphia", "76ers"), ("Phoenix", "Suns"), ("Portland", "Trail Blazers"),
    ("Sacramento", "Kings"), ("San Antonio", "Spurs"), ("Toronto", "Raptors"), ("Utah", "Jazz"),
    ("Washington", "Wizards"),
]

FIRST_NAMES = [
    "Aaron", "Andre", "Anthony", "Avery", "Brandon", "Bradley", "Carlos", "Chris", "Damian",
    "Darius", "Derrick", "Dennis", "Dwight", "Elton", "Evan", "Gordon", "Goran", "Harrison",
    "Isaiah", "Jabari", "Jamal", "Jeff", "Jordan", "Julius", "Karl", "Kemba", "Kyle", "Lance",
    "Marcus", "Mario", "Markieff", "Mason", "Nikola", "Patrick", "Paul", "Reggie", "Rodney",
    "Rudy", "Serge", "Shabazz", "Terrence", "Thabo", "Tobias", "Trevor", "Tristan", "Tyler",
    "Victor", "Wayne", "Wesley", "Zach",
]
LAST_NAMES = [
    "Adams", "Aldridge", "Allen", "Barnes", "Beal", "Bogut", "Brooks", "Butler", "Carter",
    "Conley", "Crawford", "Davis", "Dragic", "Ellington", "Ellis", "Evans", "Favors", "Gasol",
    "Gibson", "Gordon", "Green", "Harris", "Hayward", "Hill", "Holiday", "Horford", "Howard",
    "Ibaka", "Jackson", "Johnson", "Jones", "Korver", "Lawson", "Lee", "Lopez", "Love",
    "Matthews", "McGruder", "Millsap", "Mills", "Monroe", "Morris", "Noel", "Parker", "Randle",
    "Robinson", "Rose", "Schroder", "Sefolosha", "Smith", "Teague", "Thompson", "Turner",
    "Walker", "Whiteside", "Williams", "Wright", "Young",
]

PLAYERS_PER_TEAM = 13
STARTERS = 5
STARTER_POS = ("G", "G", "F", "F", "C")

PARAPHRASES = {
    "defeated": ("beat", "topped", "defeated"),
    "scored": ("had", "finished with", "poured in"),
    "to go with": ("while adding", "and grabbed", "to go along with"),
    "rebounds": ("boards", "rebounds"),
}
NUMBER_WORDS = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
    "fifteen sixteen seventeen eighteen nineteen twenty"
).split()
# slots whose value may be spelled out without running into a following number
WORDABLE = frozenset({RT.REB, RT.FGM, RT.FG3M, RT.FTM})
DISTRACTORS = (
    "The {team} struggled to find a rhythm on the road .",
    "Defense was key for the {team} in this game .",
    "{player} provided a spark off the bench .",
    "It was a physical game from start to finish .",
)


@dataclass(frozen=True)
class NoiseConfig:
    """Per-opportunity probabilities of surface variation in synthetic summaries."""

    paraphrase: float = 0.0
    number_words: float = 0.0
    distractors: float = 0.0

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def default(cls):
        return cls(paraphrase=0.3, number_words=0.2, distractors=0.3)

    @property
    def is_clean(self):
        return self.paraphrase == 0 and self.number_words == 0 and self.distractors == 0


def _pct(made, att):
    # round-half-up of 100 * made / att in integer arithmetic
    return (200 * made + att) // (2 * att) if att else 0


def make_league(rng):
    """Fixed rosters: one list of (first, last) per team."""
    names = [(f, l) for f in FIRST_NAMES for l in LAST_NAMES]
    rng.shuffle(names)
    rosters = []
    for t in range(len(TEAMS)):
        rosters.append(names[t * PLAYERS_PER_TEAM:(t + 1) * PLAYERS_PER_TEAM])
    return rosters


def _player_stats(rng, starter, pos):
    minutes = rng.randint(24, 40) if starter else rng.randint(4, 24)
    fga = max(1, round(minutes * rng.uniform(0.15, 0.55)))
    fg3a = rng.randint(0, fga // 2)
    two_a = fga - fg3a
    fg3m = sum(rng.random() < 0.35 for _ in range(fg3a))
    fg2m = sum(rng.random() < 0.5 for _ in range(two_a))
    fta = rng.randint(0, minutes // 5)
    ftm = sum(rng.random() < 0.75 for _ in range(fta))
    oreb = rng.randint(0, minutes // 10)
    dreb = rng.randint(0, minutes // 5)
    return {
        "pos": pos, "min": minutes, "pts": 2 * fg2m + 3 * fg3m + ftm,
        "fgm": fg2m + fg3m, "fga": fga, "fg_pct": _pct(fg2m + fg3m, fga),
        "fg3m": fg3m, "fg3a": fg3a, "fg3_pct": _pct(fg3m, fg3a),
        "ftm": ftm, "fta": fta, "ft_pct": _pct(ftm, fta),
        "oreb": oreb, "dreb": dreb, "reb": oreb + dreb,
        "ast": rng.randint(0, minutes // 4), "tov": rng.randint(0, 4),
        "stl": rng.randint(0, 3), "blk": rng.randint(0, 3), "pf": rng.randint(0, 5),
    }


def _team_stats(rng, players):
    tot = {k: sum(p[k] for p in players) for k in ("pts", "fgm", "fga", "fg3m", "fg3a", "ftm", "fta", "reb", "ast", "tov")}
    pts = tot["pts"]
    qs = [max(0, pts // 4 + rng.randint(-6, 6)) for _ in range(3)]
    while sum(qs) > pts:
        qs[qs.index(max(qs))] -= 1
    qs.append(pts - sum(qs))
    games = rng.randint(5, 75)
    wins = rng.randint(0, games)
    return {
        "pts_qtr1": qs[0], "pts_qtr2": qs[1], "pts_qtr3": qs[2], "pts_qtr4": qs[3], "pts": pts,
        "fg_pct": _pct(tot["fgm"], tot["fga"]), "fg3_pct": _pct(tot["fg3m"], tot["fg3a"]),
        "ft_pct": _pct(tot["ftm"], tot["fta"]), "reb": tot["reb"], "ast": tot["ast"],
        "tov": tot["tov"], "wins": wins, "losses": games - wins,
    }


def make_game(rng, rosters, game_id):
    hi, vi = rng.sample(range(len(TEAMS)), 2)
    sides = []
    for ti in (hi, vi):
        stats = [_player_stats(rng, i < STARTERS, STARTER_POS[i] if i < STARTERS else rng.choice("GFC"))
                 for i in range(PLAYERS_PER_TEAM)]
        sides.append(stats)
    # no ties: give the home side's first starter an extra made free throw
    while sum(p["pts"] for p in sides[0]) == sum(p["pts"] for p in sides[1]):
        p = sides[0][0]
        p["fta"] += 1
        p["ftm"] += 1
        p["pts"] += 1
        p["ft_pct"] = _pct(p["ftm"], p["fta"])
    teams, players = [], []
    for (ti, stats), home in zip(((hi, sides[0]), (vi, sides[1])), (True, False)):
        city, name = TEAMS[ti]
        teams.append(TeamInfo(name, city, _team_stats(rng, stats)))
        for (first, last), st in zip(rosters[ti], stats):
            players.append(PlayerInfo(f"{first} {last}", first, last, city, home, st))
    return GameDatabase(game_id, teams[0], teams[1], tuple(players))


def _noisy_hooks(rng, db, noise):
    def lexicon(phrase):
        alts = PARAPHRASES.get(phrase)
        if alts and rng.random() < noise.paraphrase:
            return rng.choice(alts)
        return phrase

    def number_style(value, rtype):
        if rtype in WORDABLE and value < len(NUMBER_WORDS) and rng.random() < noise.number_words:
            return NUMBER_WORDS[value]
        return str(value)

    def extra(_index):
        if rng.random() < noise.distractors:
            team = rng.choice(db.teams).entity
            player = rng.choice(db.players).entity
            return [rng.choice(DISTRACTORS).format(team=team, player=player).split()]
        return None

    return lexicon, number_style, extra


def synth_corpus(n, seed, noise=None):
    """List of ``(ExamplePair, realized)`` for ``n`` synthetic games."""
    if n < 1:
        raise ValueError("n must be >= 1")
    noise = noise or NoiseConfig.none()
    rng = random.Random(seed)
    rosters = make_league(rng)
    out = []
    for i in range(n):
        db = make_game(rng, rosters, f"synth-{seed}-{i:05d}")
        if noise.is_clean:
            t = render_summary(db)
        else:
            t = render_summary(db, *_noisy_hooks(rng, db, noise))
        out.append((ExamplePair(db, t.document), t.realized))
    return out


def split_sizes(n):
    n_valid = n // 10
    n_test = n // 10
    return n - n_valid - n_test, n_valid, n_test


def synth_games(n, seed, noise=None):
    """Deterministic synthetic :class:`DatasetSplit`, divided 80/10/10 in generation order."""
    pairs = [p for p, _ in synth_corpus(n, seed, noise)]
    n_train, n_valid, _ = split_sizes(n)
    return DatasetSplit(pairs[:n_train], pairs[n_train:n_train + n_valid], pairs[n_train + n_valid:])
