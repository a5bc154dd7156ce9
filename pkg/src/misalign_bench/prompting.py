"""The fixed zero-shot prompt set, rendered identically for every condition.

Three categories of increasing semantic demand: free-form scene description,
per-class presence questions for the critical classes, and one safety
question. Templates are byte-stable across models, images and conditions; a
degraded image is always queried with exactly the same strings as its clean
counterpart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .dataset import ClassTaxonomy
from .pngio import N_CLASSES


class PromptCategory(str, Enum):
    SCENE_DESCRIPTION = "scene_description"
    OBJECT_PRESENCE = "object_presence"
    SAFETY = "safety_interpretation"


SCENE_PROMPT = "Describe the scene in this image."
PRESENCE_TEMPLATE = "Is there a [c] visible in this image? Answer yes or no."
SAFETY_PROMPT = "Based on this image, is it safe to proceed forward?"

# Presence questions use everyday words for two classes.
DISPLAY_NAMES = {"person": "pedestrian", "rider": "cyclist"}


@dataclass(frozen=True)
class PromptSpec:
    prompt_id: str
    category: PromptCategory
    template: str
    class_slot: int | None = None

    def __post_init__(self):
        if self.category is PromptCategory.OBJECT_PRESENCE:
            if self.class_slot is None:
                raise ValueError(f"presence prompt {self.prompt_id!r} needs a class_slot")
        elif self.class_slot is not None:
            raise ValueError(f"prompt {self.prompt_id!r} must not carry a class_slot")


def display_name(class_id: int, taxonomy: ClassTaxonomy) -> str:
    name = taxonomy.name(class_id)
    return DISPLAY_NAMES.get(name, name)


def default_prompt_set(taxonomy: ClassTaxonomy) -> list[PromptSpec]:
    """One scene prompt, one presence prompt per critical class, one safety prompt."""
    prompts = [PromptSpec("scene", PromptCategory.SCENE_DESCRIPTION, SCENE_PROMPT)]
    for class_id in sorted(taxonomy.critical):
        slug = taxonomy.name(class_id).replace(" ", "_")
        prompts.append(
            PromptSpec(f"presence_{slug}", PromptCategory.OBJECT_PRESENCE,
                       PRESENCE_TEMPLATE, class_slot=class_id)
        )
    prompts.append(PromptSpec("safety", PromptCategory.SAFETY, SAFETY_PROMPT))
    return prompts


def render(spec: PromptSpec, taxonomy: ClassTaxonomy) -> str:
    """Pure template substitution; byte-identical on every call."""
    if spec.category is PromptCategory.OBJECT_PRESENCE:
        if not 0 <= spec.class_slot < N_CLASSES:
            raise ValueError(f"class_slot out of range: {spec.class_slot}")
        return spec.template.replace("[c]", display_name(spec.class_slot, taxonomy))
    return spec.template


def load_prompt_set(path, taxonomy: ClassTaxonomy) -> list[PromptSpec]:
    """JSON list of {prompt_id, category, template, class} ("class" may be null)."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: prompt set file must be a JSON list")
    prompts = []
    seen = set()
    for i, item in enumerate(raw):
        missing = {"prompt_id", "category", "template"} - set(item)
        if missing:
            raise ValueError(f"{path}: entry {i} missing {sorted(missing)}")
        if item["prompt_id"] in seen:
            raise ValueError(f"{path}: duplicate prompt_id {item['prompt_id']!r}")
        seen.add(item["prompt_id"])
        cls = item.get("class")
        slot = None if cls is None else taxonomy.class_id(cls)
        prompts.append(
            PromptSpec(item["prompt_id"], PromptCategory(item["category"]),
                       item["template"], class_slot=slot)
        )
    return prompts


def save_prompt_set(prompts: list[PromptSpec], path, taxonomy: ClassTaxonomy) -> None:
    rows = [
        {
            "prompt_id": p.prompt_id,
            "category": p.category.value,
            "template": p.template,
            "class": None if p.class_slot is None else taxonomy.name(p.class_slot),
        }
        for p in prompts
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")
