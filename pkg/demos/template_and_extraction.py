"""Walk through one synthetic game: box score, template summary, candidate
pairs, extraction and the content metrics of a perturbed summary.

Run with ``python demos/template_and_extraction.py``.
"""
from d2doc.extractor import OracleEnsemble, extract_sequence
from d2doc.metrics import co, cs, rg
from d2doc.records import EPS, Document, RecordType
from d2doc.spanner import build_ie_examples
from d2doc.synth import synth_corpus
from d2doc.templater import render_summary

pair, realized = synth_corpus(1, seed=4)[0]
db = pair.db

print(f"game {db.game_id}: {len(db.records)} records")
for team in db.teams:
    print(f"  {team.entity:<28} pts={team.stats['pts']:>3} record {team.stats['wins']}-{team.stats['losses']}")

out = render_summary(db)
print("\ntemplate summary:")
for a, b in out.document.sentence_bounds:
    print("  " + " ".join(out.document.tokens[a:b]))

examples = build_ie_examples(pair)
print(f"\n{len(examples)} candidate (entity, number) pairs; first few with their distant labels:")
for ex in examples[:6]:
    labels = ",".join(sorted("EPS" if t == EPS else RecordType(t).name for t in ex.labels))
    print(f"  {ex.entity:<22} {ex.value:>4}  -> {labels}")

oracle = OracleEnsemble.from_template(out)
gold = extract_sequence(out.document, db, oracle)
print(f"\noracle extraction recovers {len(gold)} of {len(out.realized)} realized records")

# swap the first two sentences and drop the last player sentence, then score against the original
bounds = list(out.document.sentence_bounds)
order = [1, 0] + list(range(2, len(bounds) - 2)) + [len(bounds) - 1]
flat, new_start = [], {}
for i in order:
    a, b = bounds[i]
    new_start[i] = len(flat)
    flat.extend(out.document.tokens[a:b])
moved = {}
for (a, b), key in zip(out.slots, out.realized):
    i = next(k for k, (s0, s1) in enumerate(bounds) if s0 <= a < s1)
    if i in new_start:
        off = new_start[i] - bounds[i][0]
        moved[(a + off, b + off)] = key
gen = extract_sequence(Document.from_tokens(flat), db, OracleEnsemble(moved))
p, n = rg(gen, db)
cp, cr = cs({r.key for r in gen}, {r.key for r in gold})
print(f"edited summary: RG {p:.1f}% ({n} records), CS P {cp:.1f}% R {cr:.1f}%, CO {co(gen, gold):.1f}")
