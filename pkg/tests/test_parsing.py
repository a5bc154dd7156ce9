import json

import pytest

from misalign_bench.parsing import (
    BinaryOutcome,
    Lexicon,
    default_uncertainty_markers,
    parse_binary,
    parse_description,
    parse_safety,
    presence_union,
    tokenize,
    topk_selection,
)

from conftest import DATA_DIR


def load_corpus():
    with open(DATA_DIR / "parsing_corpus.json", encoding="utf-8") as f:
        return json.load(f)["cases"]


CORPUS = load_corpus()


def test_corpus_is_large_enough():
    assert len(CORPUS) >= 30
    kinds = {c["kind"] for c in CORPUS}
    assert kinds == {"description", "presence", "safety"}


@pytest.mark.parametrize("case", CORPUS, ids=[c["id"] for c in CORPUS])
def test_corpus_case(case, taxonomy, lexicon):
    if case["kind"] == "description":
        got = parse_description(case["text"], lexicon)
        assert sorted(taxonomy.name(i) for i in got) == sorted(case["expected"])
    elif case["kind"] == "presence":
        assert parse_binary(case["text"]) is BinaryOutcome(case["expected"])
    else:
        assert parse_safety(case["text"]) is BinaryOutcome(case["expected"])


# -- tokenizer and lexicon ---------------------------------------------------


def test_tokenize_boundaries():
    assert tokenize("The busy-road; isn't it?") == ["the", "busy", "road", "isn", "t", "it"]


def test_lexicon_rejects_cross_class_keyword(taxonomy):
    keywords = {i: [taxonomy.names[i]] for i in range(19)}
    keywords[0] = ["road", "car"]  # car belongs to class 13
    with pytest.raises(ValueError, match="maps to both"):
        Lexicon(keywords)


def test_lexicon_requires_all_classes(taxonomy):
    with pytest.raises(ValueError, match="missing classes"):
        Lexicon({0: ["road"]})


def test_lexicon_file_round_trip(tmp_path, taxonomy, lexicon):
    raw = {"classes": {taxonomy.name(i): list(ws) for i, ws in lexicon.keywords.items()}}
    p = tmp_path / "lex.json"
    p.write_text(json.dumps(raw), encoding="utf-8")
    loaded = Lexicon.from_file(p, taxonomy)
    assert loaded.keywords == lexicon.keywords


def test_parse_description_case_insensitive_idempotent(lexicon):
    text = "A Car AND two Pedestrians near A TRAFFIC Light."
    a = parse_description(text, lexicon)
    b = parse_description(text.lower(), lexicon)
    assert a == b
    assert parse_description(text, lexicon) == a


def test_parse_description_multiword_contiguity(lexicon, taxonomy):
    # "traffic" and "light" separated by other tokens must not match
    got = parse_description("The traffic was heavy and the light was red.", lexicon)
    assert taxonomy.class_id("traffic light") not in got


# -- binary parsing ----------------------------------------------------------


def test_parse_binary_decision_field_wins():
    # trailing markers in the free-text reason do not override the decision
    assert parse_binary("decision: YES, reason: there is no obstacle") is BinaryOutcome.POSITIVE


def test_parse_binary_conflict_unparsable():
    assert parse_binary("Yes. Wait, no.") is BinaryOutcome.UNPARSABLE


def test_parse_safety_not_safe_is_negative():
    assert parse_safety("This is not safe.") is BinaryOutcome.NEGATIVE


def test_parse_safety_marker_list_is_customizable():
    assert parse_safety("possibly risky", ["risky"]) is BinaryOutcome.UNPARSABLE
    assert parse_safety("yes", []) is BinaryOutcome.POSITIVE


def test_default_uncertainty_markers_loaded():
    markers = default_uncertainty_markers()
    assert "uncertain" in markers
    assert "not sure" in markers


def test_parse_safety_never_commits_without_marker():
    for text in ("", "Maybe.", "The scene shows a road."):
        assert parse_safety(text) is BinaryOutcome.UNPARSABLE


# -- top-k -------------------------------------------------------------------


def test_topk_unique_maximum():
    scores = [0.0] * 19
    scores[13] = 1.0
    assert topk_selection(scores, 1) == frozenset({13})


def test_topk_descending_scores():
    scores = [0.9 - 0.05 * i for i in range(19)]
    assert topk_selection(scores, 3) == frozenset({0, 1, 2})


def test_topk_tie_breaks_to_lower_id():
    scores = [0.0] * 19
    scores[3] = 1.0
    scores[5] = 0.5
    scores[6] = 0.5
    assert topk_selection(scores, 2) == frozenset({3, 5})


def test_topk_wrong_arity_rejected():
    with pytest.raises(ValueError, match="expected 19 scores, got 18"):
        topk_selection([0.1] * 18, 3)
    with pytest.raises(ValueError, match="k must be"):
        topk_selection([0.1] * 19, 0)


# -- presence union ----------------------------------------------------------


def test_presence_union_adds_positives(taxonomy):
    road = taxonomy.class_id("road")
    person = taxonomy.class_id("person")
    got = presence_union(frozenset({road}), {person: BinaryOutcome.POSITIVE})
    assert got == frozenset({road, person})


def test_presence_union_ignores_unparsable(taxonomy):
    base = frozenset({taxonomy.class_id("road")})
    answers = {c: BinaryOutcome.UNPARSABLE for c in taxonomy.critical}
    assert presence_union(base, answers) == base


def test_presence_union_from_empty(taxonomy):
    sign = taxonomy.class_id("traffic sign")
    light = taxonomy.class_id("traffic light")
    got = presence_union(frozenset(), {sign: BinaryOutcome.POSITIVE,
                                       light: BinaryOutcome.NEGATIVE})
    assert got == frozenset({sign})
