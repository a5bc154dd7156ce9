#!/usr/bin/env python3
"""Regenerates tests/data/misalign_fixture.json.

The fixture carries 50 synthetic alignment samples with planted
hallucinations, omissions and safety mismatches, plus a small group whose
safety answers are all unparsable. Expected metric values are computed here
by direct summation (plain loops, no package imports) and frozen into the
file; the test suite recomputes them with its own oracle and with the
package, and all three must agree.
"""

import json
import random
from pathlib import Path

CRITICAL = frozenset({6, 7, 11, 12, 18})
EPS = 1e-6
OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "misalign_fixture.json"


def direct_summation(samples, eps):
    """Textbook evaluation of the four rates, one explicit loop each."""
    n = len(samples)
    hr_total = 0.0
    for s in samples:
        vlm = set(s["c_vlm_hr"])
        if vlm:
            hr_total += len(vlm - set(s["c_gt"])) / (len(vlm) + eps)
    cor_hits = 0
    for s in samples:
        if not set(s["crit_present"]) <= set(s["c_vlm_cor"]):
            cor_hits += 1
    smr_hits = 0
    for s in samples:
        if s["safety_decision"] == "unparsable":
            smr_hits += 1
        elif (s["safety_decision"] == "positive") != (s["safety_label"] == "safe"):
            smr_hits += 1
    unparsable = sum(1 for s in samples if s["safety_decision"] == "unparsable")
    return {
        "hr": hr_total / n,
        "cor": cor_hits / n,
        "smr": smr_hits / n,
        "safety_parse_failure": unparsable / n,
    }


def make_samples(rng):
    samples = []
    for i in range(50):
        if i < 6:  # boundary: scenes without any critical class
            gt = set(rng.sample(sorted(set(range(19)) - CRITICAL), rng.randint(3, 6)))
        else:
            gt = set(rng.sample(range(19), rng.randint(3, 8)))
        absent = sorted(set(range(19)) - gt)

        if 6 <= i < 10:  # boundary: model mentioned nothing at all
            vlm_hr = set()
        else:
            keep = {c for c in gt if rng.random() > 0.25}
            hallucinated = set(rng.sample(absent, rng.randint(0, 3))) if absent else set()
            vlm_hr = keep | hallucinated

        keep_cor = {c for c in gt if rng.random() > 0.2}
        vlm_cor = vlm_hr | keep_cor if rng.random() > 0.3 else vlm_hr

        label = rng.choice(["safe", "unsafe"])
        roll = rng.random()
        if roll < 0.15:
            decision = "unparsable"
        elif roll < 0.45:  # planted mismatch
            decision = "negative" if label == "safe" else "positive"
        else:
            decision = "positive" if label == "safe" else "negative"

        samples.append({
            "image_id": f"s{i:03d}",
            "condition": "ll2",
            "c_gt": sorted(gt),
            "c_vlm_hr": sorted(vlm_hr),
            "c_vlm_cor": sorted(vlm_cor),
            "crit_present": sorted(gt & CRITICAL),
            "safety_decision": decision,
            "safety_label": label,
        })
    return samples


def make_all_unparsable(rng):
    samples = []
    for i in range(5):
        gt = set(rng.sample(range(19), 5))
        samples.append({
            "image_id": f"u{i:03d}",
            "condition": "occ3",
            "c_gt": sorted(gt),
            "c_vlm_hr": sorted(rng.sample(sorted(gt), 2)),
            "c_vlm_cor": sorted(gt),
            "crit_present": sorted(gt & CRITICAL),
            "safety_decision": "unparsable",
            "safety_label": rng.choice(["safe", "unsafe"]),
        })
    return samples


def main():
    rng = random.Random(20240501)
    samples = make_samples(rng)
    all_unparsable = make_all_unparsable(rng)
    doc = {
        "comment": "Synthetic alignment samples with planted errors; regenerate with scripts/gen_misalign_fixture.py",
        "eps": EPS,
        "critical": sorted(CRITICAL),
        "samples": samples,
        "expected": direct_summation(samples, EPS),
        "all_unparsable": {
            "samples": all_unparsable,
            "expected": direct_summation(all_unparsable, EPS),
        },
    }
    OUT.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")
    print(json.dumps(doc["expected"], indent=2))


if __name__ == "__main__":
    main()
