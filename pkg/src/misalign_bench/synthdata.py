"""Synthetic scenes, predictions and recorded responses for offline runs.

Everything here is seeded through the package RNG, so a fixture tree is
bit-reproducible. Scene text is built from class names that round-trip
through the default lexicon; planted hallucination, omission and safety
error rates grow with corruption severity so downstream tables show the
expected qualitative shape without any live model.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import corruption as corr
from .client import ScoreRecord, VlmRecord, encode_record
from .dataset import ClassTaxonomy, SampleEntry, SafetyLabel
from .pngio import IGNORE, N_CLASSES, save_label_map, save_rgb
from .rng import SplitMix64, mix64, stream

#: Per-condition planted error scale (omission prob, hallucination prob,
#: safety flip prob, safety uncertain prob).
_CONDITION_SEVERITY = {
    "clean": 0, "ll1": 1, "ll2": 2, "ll3": 3,
    "mb1": 1, "mb2": 2, "mb3": 3, "occ1": 1, "occ2": 2, "occ3": 3,
}


def _sub_seed(seed: int, *parts) -> int:
    h = seed
    for part in parts:
        for byte in str(part).encode("utf-8"):
            h = mix64(h ^ byte)
    return h


def synth_image(seed: int, height: int = 96, width: int = 128) -> np.ndarray:
    """Structured RGB scene: sky/ground gradient plus seeded colored blocks."""
    yy = np.linspace(40, 215, height, dtype=np.float64)[:, None] + np.zeros((1, width))
    xx = np.linspace(0, 40, width, dtype=np.float64)[None, :] + np.zeros((height, 1))
    base = np.stack([yy + xx, np.full((height, width), 120.0), 255 - yy], axis=-1)
    rng = SplitMix64(seed)
    for _ in range(6):
        h = 4 + rng.randbelow(height // 2)
        w = 4 + rng.randbelow(width // 2)
        y0 = rng.randbelow(height - h + 1)
        x0 = rng.randbelow(width - w + 1)
        color = [rng.randbelow(256) for _ in range(3)]
        base[y0:y0 + h, x0:x0 + w, :] = color
    return np.clip(base, 0, 255).astype(np.uint8)


def synth_label_map(seed: int, height: int = 96, width: int = 128,
                    cell: int = 16, ignore_band: bool = True) -> np.ndarray:
    """Blocky label map drawn from a per-scene palette of 5..12 classes."""
    gh = -(-height // cell)
    gw = -(-width // cell)
    rng = SplitMix64(seed)
    palette: list[int] = []
    size = 5 + rng.randbelow(8)
    while len(palette) < size:
        c = rng.randbelow(N_CLASSES)
        if c not in palette:
            palette.append(c)
    cells = [palette[rng.randbelow(size)] for _ in range(gh * gw)]
    grid = np.array(cells, dtype=np.uint8).reshape(gh, gw)
    labels = np.kron(grid, np.ones((cell, cell), dtype=np.uint8))[:height, :width]
    if ignore_band:
        labels = labels.copy()
        labels[:2, :] = IGNORE
    return labels


def degrade_prediction(gt: np.ndarray, error_rate: float, seed: int) -> np.ndarray:
    """Flip a seeded fraction of non-ignore pixels to other class ids."""
    flat = gt.ravel()
    bits = stream(seed, 2 * flat.size)
    flip = (bits[:flat.size] >> np.uint64(11)).astype(np.float64) * 2.0**-53 < error_rate
    flip &= flat != IGNORE
    shift = 1 + (bits[flat.size:] % np.uint64(N_CLASSES - 1)).astype(np.int64)
    out = flat.astype(np.int64)
    out[flip] = (out[flip] + shift[flip]) % N_CLASSES
    return out.astype(np.uint8).reshape(gt.shape)


def prediction_error_rate(condition: str) -> float:
    """Pixel-flip rate used for the fixture prediction trees."""
    return 0.02 + 0.11 * _CONDITION_SEVERITY[condition]


def scene_text(mentioned_names: list[str]) -> str:
    if not mentioned_names:
        return "An empty scene with nothing identifiable."
    listed = ", ".join(f"a {name}" for name in mentioned_names)
    return f"The image shows {listed}."


def synth_responses(
    entries: list[SampleEntry],
    gt_sets: dict[str, frozenset[int]],
    taxonomy: ClassTaxonomy,
    model_id: str,
    seed: int,
) -> list[VlmRecord]:
    """Generative records for every (image, condition, prompt).

    Planted behavior per condition severity s: each present class is omitted
    from the description with probability 0.05 + 0.1*s, an absent class is
    hallucinated with probability 0.04*s per slot (two slots), presence
    answers flip with probability 0.05*s, and the safety decision mismatches
    its label with probability 0.1 + 0.15*s (plus an UNCERTAIN answer with
    probability 0.05*s).
    """
    records = []
    for entry in entries:
        for condition in corr.ALL_CONDITIONS:
            s = _CONDITION_SEVERITY[condition]
            rng = SplitMix64(_sub_seed(seed, model_id, entry.image_id, condition))
            present = sorted(gt_sets[entry.image_id])
            absent = sorted(set(range(N_CLASSES)) - set(present))

            mentioned = [c for c in present if rng.uniform() >= 0.05 + 0.10 * s]
            for _ in range(2):
                if absent and rng.uniform() < 0.04 * s:
                    mentioned.append(absent[rng.randbelow(len(absent))])
            names = [taxonomy.name(c) for c in sorted(set(mentioned))]
            records.append(VlmRecord(entry.image_id, condition, "scene", model_id,
                                     scene_text(names)))

            for class_id in sorted(taxonomy.critical):
                truly_there = class_id in gt_sets[entry.image_id]
                answer = truly_there if rng.uniform() >= 0.05 * s else not truly_there
                slug = taxonomy.name(class_id).replace(" ", "_")
                text = "Yes, it is visible." if answer else "No, it is not visible."
                records.append(VlmRecord(entry.image_id, condition, f"presence_{slug}",
                                         model_id, text))

            if rng.uniform() < 0.05 * s:
                text = "decision: NO, reason: UNCERTAIN , visibility is too degraded."
            else:
                say_safe = entry.safety_label is SafetyLabel.SAFE
                if rng.uniform() < 0.10 + 0.15 * s:
                    say_safe = not say_safe
                text = ("decision: YES, reason: The path ahead is clear."
                        if say_safe else
                        "decision: NO, reason: Vulnerable road users are in the path.")
            records.append(VlmRecord(entry.image_id, condition, "safety", model_id, text))
    return records


def synth_scores(
    entries: list[SampleEntry],
    gt_sets: dict[str, frozenset[int]],
    model_id: str,
    seed: int,
) -> list[ScoreRecord]:
    """Contrastive score vectors biased toward present classes; bias decays
    with severity so Top-K selections drift off the scene content."""
    records = []
    for entry in entries:
        for condition in corr.ALL_CONDITIONS:
            s = _CONDITION_SEVERITY[condition]
            rng = SplitMix64(_sub_seed(seed, model_id, entry.image_id, condition))
            scores = []
            for class_id in range(N_CLASSES):
                bonus = (0.6 - 0.12 * s) if class_id in gt_sets[entry.image_id] else 0.0
                scores.append(round(rng.uniform() * 0.5 + bonus, 6))
            records.append(ScoreRecord(entry.image_id, condition, model_id, tuple(scores)))
    return records


def build_fixture(
    root,
    n_images: int = 10,
    height: int = 96,
    width: int = 128,
    seed: int = 7,
    gen_model: str = "gen-stub",
    score_model: str = "clip-stub",
    seg_model: str = "segnet",
    emit_per_image: bool = False,
) -> Path:
    """Write a complete offline fixture tree and return its config path.

    Layout: images/, gt/, manifest.csv, preds/<model>/<condition>/,
    responses.jsonl, scores.jsonl, config.json. The prediction trees mimic a
    segmentation model whose accuracy decays with severity; they are derived
    from ground truth by seeded pixel flips, not by running any model.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    taxonomy = ClassTaxonomy()

    entries: list[SampleEntry] = []
    gt_sets: dict[str, frozenset[int]] = {}
    rows = []
    for i in range(n_images):
        image_id = f"img{i:03d}"
        img = synth_image(_sub_seed(seed, "img", image_id), height, width)
        gt = synth_label_map(_sub_seed(seed, "gt", image_id), height, width)
        save_rgb(img, root / "images" / f"{image_id}.png")
        save_label_map(gt, root / "gt" / f"{image_id}.png")
        label = SafetyLabel.SAFE if i % 3 == 0 else SafetyLabel.UNSAFE
        entries.append(SampleEntry(image_id, root / "images" / f"{image_id}.png",
                                   root / "gt" / f"{image_id}.png", label))
        valid = gt[gt != IGNORE]
        counts = np.bincount(valid, minlength=N_CLASSES)[:N_CLASSES]
        gt_sets[image_id] = frozenset(int(c) for c in np.nonzero(counts)[0])
        rows.append([image_id, f"images/{image_id}.png", f"gt/{image_id}.png", label.value])

    with open(root / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_id", "image_path", "gt_path", "safety_label"])
        writer.writerows(rows)

    for condition in corr.ALL_CONDITIONS:
        for entry in entries:
            gt = synth_label_map(_sub_seed(seed, "gt", entry.image_id), height, width)
            pred = degrade_prediction(
                gt, prediction_error_rate(condition),
                _sub_seed(seed, "pred", seg_model, entry.image_id, condition))
            save_label_map(pred, root / "preds" / seg_model / condition / f"{entry.image_id}.png")

    responses = synth_responses(entries, gt_sets, taxonomy, gen_model, seed)
    with open(root / "responses.jsonl", "w", encoding="utf-8") as f:
        for rec in responses:
            f.write(encode_record(rec) + "\n")
    scores = synth_scores(entries, gt_sets, score_model, seed)
    with open(root / "scores.jsonl", "w", encoding="utf-8") as f:
        for rec in scores:
            f.write(encode_record(rec) + "\n")

    config = {
        "manifest": "manifest.csv",
        "out_dir": "out",
        "global_seed": seed,
        "recorded_responses": ["responses.jsonl", "scores.jsonl"],
        "seg_predictions": {
            seg_model: {c: f"preds/{seg_model}/{c}" for c in corr.ALL_CONDITIONS}
        },
        "emit_per_image": emit_per_image,
    }
    config_path = root / "config.json"
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")
    return config_path
