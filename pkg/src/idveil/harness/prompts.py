"""Editing-prompt catalog: 25 default instructions in three categories
(facial feature modifications, accessory adjustments, background alterations),
plus optional descriptive captions used by the caption-similarity metric.

Descriptive captions are data, never generated: supply them as a third CSV
column when you want the clip_sd column populated.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

from idveil.core import ArgumentError

CATEGORIES = ("facial_feature", "accessory", "background")


@dataclass(frozen=True)
class PromptEntry:
    text: str
    category: str
    description: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ArgumentError("prompt text must be nonempty")
        if self.category not in CATEGORIES:
            raise ArgumentError(
                f"prompt category must be one of {CATEGORIES}, got {self.category!r}"
            )

    @property
    def prompt_id(self) -> str:
        """Stable content-derived identifier."""
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:8]


@dataclass(frozen=True)
class PromptCatalog:
    entries: tuple

    def __post_init__(self):
        ids = [e.prompt_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ArgumentError("duplicate prompts in catalog")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_category(self, category: str) -> tuple:
        return tuple(e for e in self.entries if e.category == category)

    def select(self, texts) -> "PromptCatalog":
        wanted = set(texts)
        picked = tuple(e for e in self.entries if e.text in wanted)
        missing = wanted - {e.text for e in picked}
        if missing:
            raise ArgumentError(f"prompts not in catalog: {sorted(missing)}")
        return PromptCatalog(picked)

    @staticmethod
    def from_csv(path: str | Path) -> "PromptCatalog":
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                entries.append(
                    PromptEntry(
                        text=row["text"].strip(),
                        category=row["category"].strip(),
                        description=(row.get("description") or "").strip() or None,
                    )
                )
        if not entries:
            raise ArgumentError(f"no prompts in {path}")
        return PromptCatalog(tuple(entries))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["text", "category", "description"])
            for e in self.entries:
                writer.writerow([e.text, e.category, e.description or ""])


_FACIAL = (
    "Turn the person's hair pink",
    "Let the person turn bald",
    "Let the person have a tattoo",
    "Let the person wear purple makeup",
    "Let the person grow a mustache",
    "Turn the person into a zombie",
    "Change the skin color to Avatar blue",
    "Add elf-like ears",
    "Add large vampire fangs",
    "Apply Goth style makeup",
)

_ACCESSORY = (
    "Let the person wear a police suit",
    "Let the person wear a bowtie",
    "Let the person wear a helmet",
    "Let the person wear sunglasses",
    "Let the person wear earrings",
    "Let the person smoke a cigar",
    "Place a headband in the hair",
    "Place a tiara on the top of the head",
)

_BACKGROUND = (
    "Let it be snowy",
    "Change the background to a beach",
    "Add a city skyline background",
    "Add a forest background",
    "Change the background to a desert",
    "Set the background in a library",
    "Let the person stand under the moon",
)

DEFAULT_CATALOG = PromptCatalog(
    tuple(PromptEntry(t, "facial_feature") for t in _FACIAL)
    + tuple(PromptEntry(t, "accessory") for t in _ACCESSORY)
    + tuple(PromptEntry(t, "background") for t in _BACKGROUND)
)
