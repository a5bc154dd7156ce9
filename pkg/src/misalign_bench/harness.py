"""Pipeline stages and report emission.

Stages are file-mediated: each one reads and writes well-known names under
the run's output directory, so external toolchains (GPU segmentation,
hosted models) integrate by dropping files. Stage isolation is structural:
metric computation never opens an RGB image, segmentation scoring never
opens a response store.

Output layout::

    <out>/run_config.json                     frozen effective config
    <out>/corrupt/<condition>/<image_id>.png  degraded image tree
    <out>/corrupt/occlusions.json             rectangle audit trail
    <out>/segscore/<model>_*.csv|.json        quality tables
    <out>/responses/<model>.jsonl             live-fetched records
    <out>/parsed/parsed.jsonl|coverage.csv|provenance.json
    <out>/metrics/condition_metrics.csv|.json [per_image_metrics.csv]
    <out>/correlate/correlation_matrix.csv|scatter.csv
    <out>/report/...                          self-contained bundle
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import client as client_mod
from . import corruption as corr
from . import misalign as mis
from . import parsing
from . import pngio
from . import prompting
from . import segscore as seg
from . import stats
from .dataset import ClassTaxonomy, SampleEntry, critical_present, gt_class_set, load_manifest

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2

COR_MODES = ("union", "description_only")
CORRELATION_UNITS = ("condition", "image")

#: Synthetic prompt id used for class sets derived from contrastive scores.
TOPK_PROMPT_ID = "topk"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    manifest: Path
    out_dir: Path
    global_seed: int = 0
    jobs: int = 1
    taxonomy_file: Path | None = None
    prompt_file: Path | None = None
    lexicon_file: Path | None = None
    uncertainty_file: Path | None = None
    corruption: corr.CorruptionParams = field(default_factory=corr.CorruptionParams)
    recorded_responses: tuple[Path, ...] = ()
    endpoints: tuple[client_mod.EndpointConfig, ...] = ()
    seg_predictions: dict[str, dict[str, Path]] = field(default_factory=dict)
    seg_model_for_metrics: str | None = None
    cor_mode: str = "union"
    top_k: int = 5
    min_pixels: int = 1
    eps: float = 1e-6
    emit_per_image: bool = False
    correlation_unit: str = "condition"

    def __post_init__(self):
        if self.cor_mode not in COR_MODES:
            raise ConfigError(f"cor_mode must be one of {COR_MODES}, got {self.cor_mode!r}")
        if self.correlation_unit not in CORRELATION_UNITS:
            raise ConfigError(
                f"correlation_unit must be one of {CORRELATION_UNITS}, got {self.correlation_unit!r}"
            )
        if not 1 <= self.top_k <= pngio.N_CLASSES:
            raise ConfigError(f"top_k must be in 1..{pngio.N_CLASSES}, got {self.top_k}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON: {e}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        if "manifest" not in raw or "out_dir" not in raw:
            raise ConfigError(f"{path}: config requires 'manifest' and 'out_dir'")
        base = path.parent

        def respath(v):
            p = Path(v)
            return p if p.is_absolute() else (base / p)

        kwargs: dict = {"manifest": respath(raw["manifest"]), "out_dir": respath(raw["out_dir"])}
        for key in ("global_seed", "jobs", "cor_mode", "top_k", "min_pixels", "eps",
                    "emit_per_image", "correlation_unit", "seg_model_for_metrics"):
            if key in raw:
                kwargs[key] = raw[key]
        for key in ("taxonomy_file", "prompt_file", "lexicon_file", "uncertainty_file"):
            if raw.get(key) is not None:
                kwargs[key] = respath(raw[key])
        if raw.get("corruption"):
            c = dict(raw["corruption"])
            for tup in ("blur_lengths", "gammas", "noise_sigmas", "area_fractions"):
                if tup in c:
                    c[tup] = tuple(c[tup])
            try:
                kwargs["corruption"] = corr.CorruptionParams(**c)
            except TypeError as e:
                raise ConfigError(f"{path}: bad corruption overrides: {e}") from None
        if raw.get("recorded_responses"):
            kwargs["recorded_responses"] = tuple(respath(p) for p in raw["recorded_responses"])
        if raw.get("endpoints"):
            kwargs["endpoints"] = tuple(
                client_mod.EndpointConfig(**ep) for ep in raw["endpoints"]
            )
        if raw.get("seg_predictions"):
            kwargs["seg_predictions"] = {
                model: {cond: respath(d) for cond, d in dirs.items()}
                for model, dirs in raw["seg_predictions"].items()
            }
        return cls(**kwargs)

    def validate_paths(self) -> None:
        problems = []
        if not Path(self.manifest).is_file():
            problems.append(f"manifest: {self.manifest}")
        for name in ("taxonomy_file", "prompt_file", "lexicon_file", "uncertainty_file"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                problems.append(f"{name}: {p}")
        for p in self.recorded_responses:
            if not Path(p).is_file():
                problems.append(f"recorded_responses: {p}")
        for model, dirs in self.seg_predictions.items():
            for cond, d in dirs.items():
                if not Path(d).is_dir():
                    problems.append(f"seg_predictions[{model}][{cond}]: {d}")
        if problems:
            raise ConfigError("missing referenced paths:\n  " + "\n  ".join(problems))

    # -- resolved resources -------------------------------------------------

    def taxonomy(self) -> ClassTaxonomy:
        if self.taxonomy_file:
            return ClassTaxonomy.from_file(self.taxonomy_file)
        return ClassTaxonomy()

    def lexicon(self) -> parsing.Lexicon:
        tax = self.taxonomy()
        if self.lexicon_file:
            return parsing.Lexicon.from_file(self.lexicon_file, tax)
        return parsing.Lexicon.default(tax)

    def prompt_set(self) -> list[prompting.PromptSpec]:
        tax = self.taxonomy()
        if self.prompt_file:
            return prompting.load_prompt_set(self.prompt_file, tax)
        return prompting.default_prompt_set(tax)

    def uncertainty_markers(self) -> tuple[str, ...]:
        if self.uncertainty_file:
            return parsing.load_uncertainty_markers(self.uncertainty_file)
        return parsing.default_uncertainty_markers()

    def input_file_bytes(self) -> dict[str, bytes]:
        """Raw bytes of the versioned data inputs, for checksumming."""
        out: dict[str, bytes] = {}
        pairs = (
            ("lexicon", self.lexicon_file, "lexicon.json"),
            ("prompts", self.prompt_file, "prompts.json"),
            ("uncertainty", self.uncertainty_file, "uncertainty_markers.json"),
        )
        for name, override, packaged in pairs:
            if override:
                out[name] = Path(override).read_bytes()
            else:
                out[name] = resources.files("misalign_bench.data").joinpath(packaged).read_bytes()
        if self.taxonomy_file:
            out["taxonomy"] = Path(self.taxonomy_file).read_bytes()
        return out

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["manifest"] = str(self.manifest)
        raw["out_dir"] = str(self.out_dir)
        for key in ("taxonomy_file", "prompt_file", "lexicon_file", "uncertainty_file"):
            if raw[key] is not None:
                raw[key] = str(raw[key])
        raw["recorded_responses"] = [str(p) for p in self.recorded_responses]
        raw["endpoints"] = [asdict(ep) for ep in self.endpoints]
        raw["seg_predictions"] = {
            model: {cond: str(d) for cond, d in dirs.items()}
            for model, dirs in self.seg_predictions.items()
        }
        raw["corruption"] = asdict(self.corruption)
        raw["corruption"]["blur_lengths"] = list(self.corruption.blur_lengths)
        raw["corruption"]["gammas"] = list(self.corruption.gammas)
        raw["corruption"]["noise_sigmas"] = list(self.corruption.noise_sigmas)
        raw["corruption"]["area_fractions"] = list(self.corruption.area_fractions)
        return raw


# -- small shared helpers ---------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_csv(path, header: list[str], rows: list[list[str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt_full(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _fmt_2dec(v: float | None) -> str:
    return "" if v is None else f"{v:.2f}"


def _pct_int(v: float | None) -> str:
    return "" if v is None else str(int(math.floor(v * 100 + 0.5)))


def _snapshot_config(cfg: RunConfig) -> None:
    write_text(Path(cfg.out_dir) / "run_config.json", canonical_json(cfg.to_dict()))


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- stage 1: corrupt -------------------------------------------------------


def cmd_corrupt(cfg: RunConfig) -> int:
    """Materialize the degraded image tree plus a clean copy per image."""
    entries = load_manifest(cfg.manifest)
    out_root = Path(cfg.out_dir) / "corrupt"
    rect_audit: dict[str, dict[str, dict]] = {}

    def one(entry: SampleEntry):
        img = pngio.load_rgb(entry.image_path)
        pngio.save_rgb(img, out_root / corr.CLEAN / f"{entry.image_id}.png")
        rects = {}
        for kind in corr.CorruptionKind:
            for severity in corr.SEVERITIES:
                probe = corr.CorruptionSpec(kind, severity)
                seed = corr.derive_seed(cfg.global_seed, entry.image_id, probe)
                spec = corr.CorruptionSpec(kind, severity, seed)
                if kind is corr.CorruptionKind.OCCLUSION:
                    degraded, rect = corr.occlude(img, severity, seed, cfg.corruption)
                    rects[spec.condition] = {
                        "x0": rect.x0, "y0": rect.y0, "w": rect.w, "h": rect.h,
                    }
                else:
                    degraded = corr.corrupt(img, spec, cfg.corruption)
                pngio.save_rgb(degraded, out_root / spec.condition / f"{entry.image_id}.png")
        return entry.image_id, rects

    for image_id, rects in _pmap(one, entries, cfg.jobs):
        rect_audit[image_id] = rects
    write_text(out_root / "occlusions.json", canonical_json(rect_audit))
    _snapshot_config(cfg)
    log.info("corrupt: wrote %d conditions x %d images under %s",
             len(corr.ALL_CONDITIONS), len(entries), out_root)
    return EXIT_OK


# -- stage 2: seg-score -----------------------------------------------------


def cmd_seg_score(cfg: RunConfig) -> int:
    """Score prediction trees against ground truth, one table set per model."""
    if not cfg.seg_predictions:
        raise ConfigError("seg_predictions is empty; nothing to score")
    entries = load_manifest(cfg.manifest)
    tax = cfg.taxonomy()
    out_root = Path(cfg.out_dir) / "segscore"

    for model in sorted(cfg.seg_predictions):
        dirs = cfg.seg_predictions[model]
        missing = [c for c in corr.ALL_CONDITIONS if c not in dirs]
        if missing:
            raise ConfigError(f"seg_predictions[{model}] lacks conditions {missing}")
        per_cond: dict[str, seg.SegQuality] = {}
        per_image: dict[str, dict[str, float]] = {}

        for condition in corr.ALL_CONDITIONS:
            pred_dir = Path(dirs[condition])
            cm = seg.ConfusionMatrix()
            image_mious: dict[str, float] = {}
            for entry in entries:
                pred_path = pred_dir / f"{entry.image_id}.png"
                if not pred_path.is_file():
                    raise ConfigError(
                        f"missing prediction for ({model}, {condition}): {pred_path}"
                    )
                pred = pngio.load_label_map(pred_path)
                gt = pngio.load_label_map(entry.gt_path)
                if cfg.emit_per_image:
                    img_cm = seg.ConfusionMatrix().accumulate(pred, gt)
                    image_mious[entry.image_id] = seg.miou(seg.per_class_iou(img_cm))
                    cm.merge(img_cm)
                else:
                    cm.accumulate(pred, gt)
            per_cond[condition] = seg.evaluate(cm)
            if cfg.emit_per_image:
                per_image[condition] = image_mious

        clean_q = per_cond[corr.CLEAN]

        classwise_rows = []
        overall_rows = []
        long_rows = []
        for condition in corr.ALL_CONDITIONS:
            q = per_cond[condition]
            classwise_rows.append(
                [condition] + [_pct_int(v) for v in q.per_class_iou] + [_pct_int(q.miou)]
            )
            overall_rows.append([
                condition,
                _fmt_2dec(q.miou),
                _fmt_2dec(q.pixel_accuracy),
                _fmt_2dec(seg.delta_q(clean_q.miou, q.miou)),
            ])
            parsed = corr.parse_condition(condition)
            kind = "clean" if parsed is None else parsed[0].value
            severity = 0 if parsed is None else parsed[1]
            long_rows.append([condition, kind, str(severity), _fmt_full(q.miou)])

        write_csv(out_root / f"{model}_classwise.csv",
                  ["condition", *tax.names, "miou"], classwise_rows)
        write_csv(out_root / f"{model}_overall.csv",
                  ["condition", "miou", "pixel_accuracy", "delta_q"], overall_rows)
        write_csv(out_root / f"{model}_severity_long.csv",
                  ["condition", "kind", "severity", "miou"], long_rows)

        quality_doc = {
            "model": model,
            "conditions": {
                c: {
                    "miou": q.miou,
                    "pixel_accuracy": q.pixel_accuracy,
                    "per_class_iou": list(q.per_class_iou),
                }
                for c, q in per_cond.items()
            },
        }
        if cfg.emit_per_image:
            quality_doc["per_image"] = per_image
        write_text(out_root / f"{model}_quality.json", canonical_json(quality_doc))
        log.info("seg-score: %s clean mIoU %.4f", model, clean_q.miou)

    _snapshot_config(cfg)
    return EXIT_OK


# -- stage 3: eval-vlm ------------------------------------------------------


def _load_all_recorded(cfg: RunConfig) -> client_mod.ResponseStore:
    store = client_mod.ResponseStore()
    for path in cfg.recorded_responses:
        store.extend_from_file(path)
    return store


def _run_live_batches(cfg: RunConfig, store: client_mod.ResponseStore,
                      entries: list[SampleEntry]) -> int:
    corrupt_root = Path(cfg.out_dir) / "corrupt"
    if not corrupt_root.is_dir():
        raise ConfigError(f"live querying needs the corrupted image tree; run corrupt first "
                          f"(missing {corrupt_root})")
    tax = cfg.taxonomy()
    prompts = [(p.prompt_id, prompting.render(p, tax)) for p in cfg.prompt_set()]
    failed = 0
    for ep in cfg.endpoints:
        result = client_mod.run_batch(
            ep,
            [e.image_id for e in entries],
            list(corr.ALL_CONDITIONS),
            prompts,
            lambda image_id, condition: pngio.load_rgb(
                corrupt_root / condition / f"{image_id}.png"),
            Path(cfg.out_dir) / "responses" / f"{ep.model_id}.jsonl",
            jobs=cfg.jobs,
        )
        failed += result.failed
        for rec in result.store.records.values():
            if rec.key not in store.records:
                store.add(rec)
        log.info("eval-vlm: %s fetched=%d skipped=%d failed=%d",
                 ep.model_id, result.fetched, result.skipped, result.failed)
    return failed


def cmd_eval_vlm(cfg: RunConfig) -> int:
    """Parse every stored record into structured outcomes."""
    entries = load_manifest(cfg.manifest)
    tax = cfg.taxonomy()
    lexicon = cfg.lexicon()
    markers = cfg.uncertainty_markers()
    prompts = {p.prompt_id: p for p in cfg.prompt_set()}

    store = _load_all_recorded(cfg)
    live_failed = _run_live_batches(cfg, store, entries) if cfg.endpoints else 0
    if not store.records and not store.scores:
        raise ConfigError("no responses available: configure recorded_responses or endpoints")

    parsed_rows: list[dict] = []
    coverage: dict[tuple[str, str, str], dict[str, int]] = {}

    def cov(model, condition, category) -> dict[str, int]:
        return coverage.setdefault(
            (model, condition, category), {"count": 0, "unparsable": 0})

    skipped_unknown = 0
    for key in sorted(store.records):
        rec = store.records[key]
        spec = prompts.get(rec.prompt_id)
        if spec is None:
            skipped_unknown += 1
            log.warning("skipping record with unknown prompt_id %r: %s", rec.prompt_id, key)
            continue
        row = {
            "image_id": rec.image_id,
            "condition": rec.condition,
            "model_id": rec.model_id,
            "prompt_id": rec.prompt_id,
            "category": spec.category.value,
        }
        if rec.error:
            row["transport_error"] = rec.error
        c = cov(rec.model_id, rec.condition, spec.category.value)
        c["count"] += 1
        if spec.category is prompting.PromptCategory.SCENE_DESCRIPTION:
            mentioned = parsing.parse_description(rec.raw_text, lexicon)
            row["mentioned"] = [tax.name(i) for i in sorted(mentioned)]
        elif spec.category is prompting.PromptCategory.OBJECT_PRESENCE:
            outcome = parsing.parse_binary(rec.raw_text)
            row["class"] = tax.name(spec.class_slot)
            row["outcome"] = outcome.value
            c["unparsable"] += outcome is parsing.BinaryOutcome.UNPARSABLE
        else:
            outcome = parsing.parse_safety(rec.raw_text, markers)
            row["outcome"] = outcome.value
            c["unparsable"] += outcome is parsing.BinaryOutcome.UNPARSABLE
        parsed_rows.append(row)

    for key in sorted(store.scores):
        rec = store.scores[key]
        selected = parsing.topk_selection(rec.scores, cfg.top_k)
        parsed_rows.append({
            "image_id": rec.image_id,
            "condition": rec.condition,
            "model_id": rec.model_id,
            "prompt_id": TOPK_PROMPT_ID,
            "category": TOPK_PROMPT_ID,
            "mentioned": [tax.name(i) for i in sorted(selected)],
        })
        cov(rec.model_id, rec.condition, TOPK_PROMPT_ID)["count"] += 1

    parsed_rows.sort(key=lambda r: (r["model_id"], r["image_id"], r["condition"], r["prompt_id"]))
    out_root = Path(cfg.out_dir) / "parsed"
    write_text(out_root / "parsed.jsonl",
               "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n"
                       for r in parsed_rows))

    cov_rows = [
        [model, condition, category, str(v["count"]), str(v["unparsable"])]
        for (model, condition, category), v in sorted(coverage.items())
    ]
    write_csv(out_root / "coverage.csv",
              ["model", "condition", "category", "count", "unparsable"], cov_rows)

    # expected-vs-present accounting, per model kind
    missing: dict[str, list] = {}
    generative_models = {r.model_id for r in store.records.values()}
    contrastive_models = {r.model_id for r in store.scores.values()}
    ids = [e.image_id for e in entries]
    for model in sorted(generative_models):
        gaps = [
            [image_id, condition, prompt_id]
            for image_id in ids
            for condition in corr.ALL_CONDITIONS
            for prompt_id in prompts
            if (image_id, condition, prompt_id, model) not in store.records
        ]
        if gaps:
            missing[model] = gaps
    for model in sorted(contrastive_models):
        gaps = [
            [image_id, condition, TOPK_PROMPT_ID]
            for image_id in ids
            for condition in corr.ALL_CONDITIONS
            if (image_id, condition, model) not in store.scores
        ]
        if gaps:
            missing[model] = missing.get(model, []) + gaps

    inputs = cfg.input_file_bytes()
    provenance = {
        "lexicon_sha256": sha256_bytes(inputs["lexicon"]),
        "prompts_sha256": sha256_bytes(inputs["prompts"]),
        "uncertainty_sha256": sha256_bytes(inputs["uncertainty"]),
        "taxonomy_sha256": sha256_bytes(inputs["taxonomy"]) if "taxonomy" in inputs else None,
        "cor_mode": cfg.cor_mode,
        "top_k": cfg.top_k,
        "n_parsed": len(parsed_rows),
        "n_unknown_prompt": skipped_unknown,
        "missing": missing,
    }
    write_text(out_root / "provenance.json", canonical_json(provenance))
    _snapshot_config(cfg)

    if missing:
        log.warning("eval-vlm: missing records for %d model(s); metrics will use reduced n",
                    len(missing))
    return EXIT_PARTIAL if (missing or live_failed) else EXIT_OK


# -- stage 4: metrics -------------------------------------------------------


@dataclass
class ConditionMetrics:
    model_id: str
    condition: str
    n: int
    n_safety: int
    hr: float
    cor: float
    smr: float | None
    safety_parse_failure: float | None
    safety_parse_success: float | None
    miou: float | None = None
    pixel_accuracy: float | None = None
    per_class_iou: list[float | None] | None = None
    delta_q: float | None = None
    delta_hr: float | None = None
    delta_cor: float | None = None
    delta_smr: float | None = None


def _load_parsed_rows(cfg: RunConfig) -> list[dict]:
    path = Path(cfg.out_dir) / "parsed" / "parsed.jsonl"
    if not path.is_file():
        raise ConfigError(f"parsed store not found (run eval-vlm first): {path}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _load_seg_quality(cfg: RunConfig) -> dict | None:
    if not cfg.seg_predictions:
        return None
    model = cfg.seg_model_for_metrics or sorted(cfg.seg_predictions)[0]
    path = Path(cfg.out_dir) / "segscore" / f"{model}_quality.json"
    if not path.is_file():
        log.warning("metrics: no segmentation quality for %s (run seg-score); "
                    "Q columns will be empty", model)
        return None
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _sample_terms(sample: mis.SampleAlignment, eps: float) -> dict:
    """Per-sample metric terms for the optional per-image table."""
    hr_i = 0.0
    if sample.c_vlm_hr:
        hr_i = len(sample.c_vlm_hr - sample.c_gt) / (len(sample.c_vlm_hr) + eps)
    cor_i = float(not sample.crit_present <= sample.c_vlm_cor)
    smr_i = parse_fail_i = None
    if sample.safety_decision is not None and sample.safety_label is not None:
        smr_i = mis.safety_misinterpretation_rate([sample])
        parse_fail_i = mis.safety_parse_failure_rate([sample])
    return {"hr": hr_i, "cor": cor_i, "smr": smr_i, "parse_failure": parse_fail_i}


def cmd_metrics(cfg: RunConfig) -> int:
    """Join parsed outputs with scene truth into per-(model, condition) rows."""
    entries = load_manifest(cfg.manifest)
    tax = cfg.taxonomy()
    parsed_rows = _load_parsed_rows(cfg)
    quality = _load_seg_quality(cfg)

    gt_sets: dict[str, frozenset[int]] = {}
    crit_sets: dict[str, frozenset[int]] = {}
    labels = {}
    for entry in entries:
        gt = pngio.load_label_map(entry.gt_path)
        gt_sets[entry.image_id] = gt_class_set(gt, cfg.min_pixels)
        crit_sets[entry.image_id] = critical_present(gt_sets[entry.image_id], tax)
        labels[entry.image_id] = entry.safety_label

    # group parsed rows by (model, condition, image)
    grouped: dict[tuple[str, str, str], dict] = {}
    dropped_errors = 0
    for row in parsed_rows:
        if row.get("transport_error"):
            dropped_errors += 1
            continue
        key = (row["model_id"], row["condition"], row["image_id"])
        g = grouped.setdefault(key, {"scene": None, "topk": None, "presence": {}, "safety": None})
        category = row["category"]
        if category == prompting.PromptCategory.SCENE_DESCRIPTION.value:
            g["scene"] = frozenset(tax.class_id(n) for n in row["mentioned"])
        elif category == TOPK_PROMPT_ID:
            g["topk"] = frozenset(tax.class_id(n) for n in row["mentioned"])
        elif category == prompting.PromptCategory.OBJECT_PRESENCE.value:
            g["presence"][tax.class_id(row["class"])] = parsing.BinaryOutcome(row["outcome"])
        elif category == prompting.PromptCategory.SAFETY.value:
            g["safety"] = parsing.BinaryOutcome(row["outcome"])

    models = sorted({model for model, _, _ in grouped})
    if not models:
        raise ConfigError("parsed store contains no usable rows")

    partial = dropped_errors > 0
    table: list[ConditionMetrics] = []
    per_image_rows: list[list[str]] = []

    for model in models:
        model_rows: dict[str, ConditionMetrics] = {}
        for condition in corr.ALL_CONDITIONS:
            samples = []
            for entry in entries:
                g = grouped.get((model, condition, entry.image_id))
                if g is None:
                    partial = True
                    continue
                description = g["scene"] if g["scene"] is not None else g["topk"]
                if description is None:
                    partial = True
                    log.warning("metrics: %s/%s/%s has no scene or score data; skipped",
                                model, condition, entry.image_id)
                    continue
                if cfg.cor_mode == "union":
                    c_vlm_cor = parsing.presence_union(description, g["presence"])
                else:
                    c_vlm_cor = description
                sample = mis.SampleAlignment(
                    image_id=entry.image_id,
                    condition=condition,
                    c_gt=gt_sets[entry.image_id],
                    c_vlm_hr=description,
                    c_vlm_cor=c_vlm_cor,
                    crit_present=crit_sets[entry.image_id],
                    safety_decision=g["safety"],
                    safety_label=labels[entry.image_id] if g["safety"] is not None else None,
                )
                samples.append(sample)
                if cfg.emit_per_image:
                    terms = _sample_terms(sample, cfg.eps)
                    per_image_rows.append([
                        model, condition, entry.image_id,
                        _fmt_full(terms["hr"]), _fmt_full(terms["cor"]),
                        _fmt_full(terms["smr"]), _fmt_full(terms["parse_failure"]),
                    ])
            if not samples:
                log.warning("metrics: no usable samples for (%s, %s); row omitted",
                            model, condition)
                partial = True
                continue
            scores = mis.score_samples(samples, cfg.eps)
            row = ConditionMetrics(
                model_id=model, condition=condition,
                n=scores.n, n_safety=scores.n_safety,
                hr=scores.hr, cor=scores.cor, smr=scores.smr,
                safety_parse_failure=scores.safety_parse_failure,
                safety_parse_success=scores.safety_parse_success,
            )
            if quality is not None and condition in quality["conditions"]:
                qc = quality["conditions"][condition]
                row.miou = qc["miou"]
                row.pixel_accuracy = qc["pixel_accuracy"]
                row.per_class_iou = qc["per_class_iou"]
            model_rows[condition] = row

        clean = model_rows.get(corr.CLEAN)
        for condition, row in model_rows.items():
            if clean is None:
                continue
            if row.miou is not None and clean.miou is not None:
                row.delta_q = seg.delta_q(clean.miou, row.miou)
            row.delta_hr = mis.delta_l(clean.hr, row.hr)
            row.delta_cor = mis.delta_l(clean.cor, row.cor)
            if row.smr is not None and clean.smr is not None:
                row.delta_smr = mis.delta_l(clean.smr, row.smr)
        table.extend(model_rows[c] for c in corr.ALL_CONDITIONS if c in model_rows)

    out_root = Path(cfg.out_dir) / "metrics"
    header = ["model", "condition", "n", "n_safety", "miou", "pixel_accuracy", "delta_q",
              "hr", "cor", "smr", "safety_parse_failure", "safety_parse_success",
              "delta_hr", "delta_cor", "delta_smr"]
    csv_rows = [
        [
            r.model_id, r.condition, str(r.n), str(r.n_safety),
            _fmt_full(r.miou), _fmt_full(r.pixel_accuracy), _fmt_full(r.delta_q),
            _fmt_full(r.hr), _fmt_full(r.cor), _fmt_full(r.smr),
            _fmt_full(r.safety_parse_failure), _fmt_full(r.safety_parse_success),
            _fmt_full(r.delta_hr), _fmt_full(r.delta_cor), _fmt_full(r.delta_smr),
        ]
        for r in table
    ]
    write_csv(out_root / "condition_metrics.csv", header, csv_rows)
    write_text(out_root / "condition_metrics.json",
               canonical_json([asdict(r) for r in table]))
    if cfg.emit_per_image:
        seg_per_image = (quality or {}).get("per_image", {})
        enriched = []
        for model, condition, image_id, hr_i, cor_i, smr_i, pf_i in per_image_rows:
            miou_i = seg_per_image.get(condition, {}).get(image_id)
            enriched.append([model, condition, image_id, _fmt_full(miou_i),
                             hr_i, cor_i, smr_i, pf_i])
        write_csv(out_root / "per_image_metrics.csv",
                  ["model", "condition", "image_id", "miou", "hr", "cor", "smr",
                   "parse_failure"],
                  enriched)
    _snapshot_config(cfg)
    return EXIT_PARTIAL if partial else EXIT_OK


# -- stage 5: correlate -----------------------------------------------------


def cmd_correlate(cfg: RunConfig) -> int:
    """Correlate segmentation quality against the misalignment columns."""
    out_root = Path(cfg.out_dir) / "correlate"
    matrix_rows: list[list[str]] = []
    scatter_rows: list[list[str]] = []

    if cfg.correlation_unit == "condition":
        path = Path(cfg.out_dir) / "metrics" / "condition_metrics.json"
        if not path.is_file():
            raise ConfigError(f"metrics table not found (run metrics first): {path}")
        with open(path, encoding="utf-8") as f:
            rows = json.load(f)
        models = sorted({r["model_id"] for r in rows})
        for model in models:
            table = {
                r["condition"]: {
                    "miou": r["miou"], "hr": r["hr"], "cor": r["cor"], "smr": r["smr"],
                }
                for r in rows if r["model_id"] == model
            }
            l_metrics = [m for m in ("hr", "cor", "smr")
                         if any(row[m] is not None for row in table.values())]
            cells, points = stats.correlate_conditions(table, ("miou",), l_metrics)
            for cell in cells:
                matrix_rows.append([
                    "condition", model, cell.q_metric, cell.l_metric,
                    "undefined" if cell.pearson is None else repr(cell.pearson),
                    "undefined" if cell.spearman is None else repr(cell.spearman),
                    str(cell.n),
                ])
            scatter_rows.extend(
                ["condition", model, p.q_metric, p.l_metric, p.label,
                 _fmt_full(p.q), _fmt_full(p.l)]
                for p in points
            )
    else:
        path = Path(cfg.out_dir) / "metrics" / "per_image_metrics.csv"
        if not path.is_file():
            raise ConfigError(
                f"per-image metrics not found: {path} (set emit_per_image and rerun "
                f"seg-score and metrics)")
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        models = sorted({r["model"] for r in rows})
        for model in models:
            table = {}
            for r in rows:
                if r["model"] != model or not r["miou"]:
                    continue
                table[f"{r['condition']}/{r['image_id']}"] = {
                    "miou": float(r["miou"]),
                    "hr": float(r["hr"]) if r["hr"] else None,
                    "cor": float(r["cor"]) if r["cor"] else None,
                    "smr": float(r["smr"]) if r["smr"] else None,
                }
            if not table:
                raise ConfigError(f"per-image table has no rows with mIoU for {model}")
            l_metrics = [m for m in ("hr", "cor", "smr")
                         if any(row[m] is not None for row in table.values())]
            cells, points = stats.correlate_conditions(table, ("miou",), l_metrics)
            for cell in cells:
                matrix_rows.append([
                    "image", model, cell.q_metric, cell.l_metric,
                    "undefined" if cell.pearson is None else repr(cell.pearson),
                    "undefined" if cell.spearman is None else repr(cell.spearman),
                    str(cell.n),
                ])
            scatter_rows.extend(
                ["image", model, p.q_metric, p.l_metric, p.label,
                 _fmt_full(p.q), _fmt_full(p.l)]
                for p in points
            )

    write_csv(out_root / "correlation_matrix.csv",
              ["unit", "model", "q_metric", "l_metric", "pearson", "spearman", "n"],
              matrix_rows)
    write_csv(out_root / "scatter.csv",
              ["unit", "model", "q_metric", "l_metric", "label", "q", "l"],
              scatter_rows)
    _snapshot_config(cfg)
    return EXIT_OK


# -- stage 6: report --------------------------------------------------------

_REPORT_GLOBS = (
    "corrupt/occlusions.json",
    "segscore/*.csv",
    "segscore/*.json",
    "parsed/parsed.jsonl",
    "parsed/coverage.csv",
    "parsed/provenance.json",
    "metrics/*.csv",
    "metrics/*.json",
    "correlate/*.csv",
    "run_config.json",
)


def cmd_report(cfg: RunConfig) -> int:
    """Assemble the self-contained bundle: artifacts, checksums, summary."""
    out = Path(cfg.out_dir)
    report = out / "report"
    artifacts: list[Path] = []
    for pattern in _REPORT_GLOBS:
        artifacts.extend(sorted(out.glob(pattern)))
    artifacts = [p for p in artifacts if p.is_file()]
    if not artifacts:
        raise ConfigError(f"nothing to report under {out}; run the pipeline stages first")

    metrics_csv = out / "metrics" / "condition_metrics.csv"
    if not metrics_csv.is_file():
        raise ConfigError(f"metrics table missing (run metrics first): {metrics_csv}")

    if report.is_dir():
        shutil.rmtree(report)
    checksums: dict[str, str] = {}
    for src in artifacts:
        rel = src.relative_to(out)
        dst = report / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)
        checksums[str(rel)] = sha256_file(src)

    inputs = cfg.input_file_bytes()
    input_hashes = {name: sha256_bytes(data) for name, data in inputs.items()}

    # integrity: the hashes recorded at parse time must match the files now
    integrity_ok = True
    integrity_notes: list[str] = []
    prov_path = out / "parsed" / "provenance.json"
    if prov_path.is_file():
        with open(prov_path, encoding="utf-8") as f:
            prov = json.load(f)
        for name in ("lexicon", "prompts", "uncertainty"):
            recorded = prov.get(f"{name}_sha256")
            current = input_hashes.get(name)
            if recorded and current and recorded != current:
                integrity_ok = False
                integrity_notes.append(
                    f"{name} file changed since eval-vlm: recorded {recorded[:12]}..., "
                    f"now {current[:12]}...")
        if prov.get("missing"):
            integrity_notes.append(
                f"eval-vlm reported missing records for models: {sorted(prov['missing'])}")
    else:
        integrity_notes.append("no parse provenance found")

    bundle = {
        "artifacts": checksums,
        "inputs": input_hashes,
        "integrity_ok": integrity_ok,
        "notes": integrity_notes,
    }
    write_text(report / "checksums.json", canonical_json(bundle))
    write_text(report / "summary.md", _render_summary(cfg, out, integrity_ok, integrity_notes))
    log.info("report: %d artifacts bundled under %s", len(artifacts), report)
    return EXIT_OK if integrity_ok else EXIT_PARTIAL


def _render_summary(cfg: RunConfig, out: Path, integrity_ok: bool,
                    notes: list[str]) -> str:
    lines = ["# Run report", ""]
    lines.append(f"- global seed: {cfg.global_seed}")
    lines.append(f"- conditions: {', '.join(corr.ALL_CONDITIONS)}")
    lines.append(f"- critical-set mode for omissions: {cfg.cor_mode}; top_k: {cfg.top_k}")
    lines.append("")

    seg_dir = out / "segscore"
    overall = sorted(seg_dir.glob("*_overall.csv")) if seg_dir.is_dir() else []
    if overall:
        lines.append("## Segmentation quality")
        for path in overall:
            lines.append("")
            lines.append(f"### {path.name.removesuffix('_overall.csv')}")
            lines.append("")
            with open(path, newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
            lines.append("| " + " | ".join(rows[0]) + " |")
            lines.append("|" + "---|" * len(rows[0]))
            lines.extend("| " + " | ".join(r) + " |" for r in rows[1:])
        lines.append("")

    metrics_csv = out / "metrics" / "condition_metrics.csv"
    if metrics_csv.is_file():
        lines.append("## Language misalignment")
        lines.append("")
        with open(metrics_csv, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        cols = ["model", "condition", "n", "hr", "cor", "smr", "safety_parse_failure"]
        lines.append("| " + " | ".join(cols) + " |")
        lines.append("|" + "---|" * len(cols))
        for r in rows:
            disp = [r["model"], r["condition"], r["n"]]
            for c in cols[3:]:
                disp.append(f"{float(r[c]):.2f}" if r[c] else "")
            lines.append("| " + " | ".join(disp) + " |")
        lines.append("")

    matrix_csv = out / "correlate" / "correlation_matrix.csv"
    if matrix_csv.is_file():
        lines.append("## Quality vs misalignment correlation")
        lines.append("")
        with open(matrix_csv, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        lines.append("| " + " | ".join(rows[0]) + " |")
        lines.append("|" + "---|" * len(rows[0]))
        for r in rows[1:]:
            disp = list(r)
            for i in (4, 5):
                if disp[i] not in ("", "undefined"):
                    disp[i] = f"{float(disp[i]):+.3f}"
            lines.append("| " + " | ".join(disp) + " |")
        lines.append("")

    lines.append("## Integrity")
    lines.append("")
    lines.append(f"- input checksums: {'OK' if integrity_ok else 'MISMATCH'}")
    lines.extend(f"- {note}" for note in notes)
    lines.append("")
    return "\n".join(lines)
