"""Corpus manifest: the labeled sample inventory shared by all stages."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .util import dump_json, load_json

CATEGORIES = ("UB", "PB", "UM", "PM")
LABELS = ("benign", "malicious")


def categorize(label: str, packed: bool) -> str:
    """Four-way category from label and packing flag."""
    if label not in LABELS:
        raise ConfigError(f"unknown label {label!r}")
    if label == "benign":
        return "PB" if packed else "UB"
    return "PM" if packed else "UM"


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    path: str  # relative to the manifest's root directory
    sha256: str
    label: str
    packed: bool
    category: str


@dataclass
class CorpusManifest:
    root: Path
    entries: list[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self, sample_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.sample_id == sample_id:
                return e
        raise KeyError(sample_id)

    def ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]

    def categories(self) -> dict[str, str]:
        return {e.sample_id: e.category for e in self.entries}

    def labels(self) -> dict[str, str]:
        return {e.sample_id: e.label for e in self.entries}

    def pools(self) -> dict[str, list[str]]:
        """Sample ids per category, in manifest order."""
        out: dict[str, list[str]] = {c: [] for c in CATEGORIES}
        for e in self.entries:
            out[e.category].append(e.sample_id)
        return out

    def file_path(self, sample_id: str) -> Path:
        return self.root / self.by_id(sample_id).path

    def save(self, path: str | Path) -> None:
        dump_json([e.__dict__ for e in self.entries], path)

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        raw = load_json(path)
        entries = []
        for row in raw:
            entry = ManifestEntry(
                sample_id=row["sample_id"],
                path=row["path"],
                sha256=row["sha256"],
                label=row["label"],
                packed=bool(row["packed"]),
                category=row["category"],
            )
            if entry.category != categorize(entry.label, entry.packed):
                raise ConfigError(
                    f"manifest entry {entry.sample_id}: category {entry.category} "
                    f"does not match label/packed"
                )
            entries.append(entry)
        return cls(root=path.parent, entries=entries)
