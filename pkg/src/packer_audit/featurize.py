"""Static feature extraction over parsed PE files.

Nine feature families: PE header numerics, section statistics, DLL presence,
API import presence, Rich header, byte n-grams, opcode n-grams, strings, and
file generics. Numeric/structural features are always in the catalog;
presence families are vocabulary-selected by document frequency over a
corpus and capped per family.

Feature names carry their own payload (e.g. ngram_b'\\x01\\x05...' is the
repr of the matched bytes), so localization can recover the pattern from
the name alone.
"""

from __future__ import annotations

import ast
import csv
import re
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CatalogMismatchError, ConfigError, EmptyCorpusError, IoFailure, UnknownFeatureError
from .manifest import CorpusManifest
from .pecore import PeImage, parse_pe, rva_to_offset, shannon_entropy
from .util import dump_json, load_json
from .x86 import decode_opcodes, token_ngrams

FAMILIES = (
    "header", "section", "dll", "import", "rich",
    "byte_ngram", "opcode_ngram", "string", "file_generic",
)
PRESENCE_FAMILIES = ("dll", "import", "byte_ngram", "opcode_ngram", "string")

_ASCII_RUN = re.compile(rb"[\x20-\x7e]{4,}")
_UTF16_RUN = re.compile(rb"(?:[\x20-\x7e]\x00){4,}")

_BIT_FEATURES = tuple(
    f"pesectionProcessed_entrypointSectioncharacteristics_bit{b}" for b in range(32)
)
_HEADER_FEATURES = ("timestamp", "sectionCount", "entryPointRva", "optionalHeaderMagic")
_SECTION_FEATURES = ("sectionsMaxEntropy", "sectionsMeanEntropy") + _BIT_FEATURES
_RICH_FEATURES = ("richHeaderPresent", "richEntryCount")
_GENERIC_FEATURES = ("fileSize", "overlaySize", "certificatePresent")


@dataclass(frozen=True)
class FeaturizeParams:
    ngram_len: int = 6
    df_min: float = 0.05
    df_max: float = 0.95
    max_per_family: int = 256
    opcode_lens: tuple[int, ...] = (2, 3, 4)

    def validate(self) -> None:
        if not 4 <= self.ngram_len <= 8:
            raise ConfigError("ngram_len must be in [4, 8]")
        if not 0.0 <= self.df_min <= self.df_max <= 1.0:
            raise ConfigError("need 0 <= df_min <= df_max <= 1")
        if self.max_per_family < 1:
            raise ConfigError("max_per_family must be >= 1")

    def to_dict(self) -> dict:
        return {
            "ngram_len": self.ngram_len,
            "df_min": self.df_min,
            "df_max": self.df_max,
            "max_per_family": self.max_per_family,
            "opcode_lens": list(self.opcode_lens),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FeaturizeParams":
        p = cls(
            ngram_len=int(raw.get("ngram_len", 6)),
            df_min=float(raw.get("df_min", 0.05)),
            df_max=float(raw.get("df_max", 0.95)),
            max_per_family=int(raw.get("max_per_family", 256)),
            opcode_lens=tuple(int(x) for x in raw.get("opcode_lens", (2, 3, 4))),
        )
        p.validate()
        return p


class FeatureCatalog:
    """Immutable ordered vocabulary: name -> family, with index lookup."""

    def __init__(self, entries: list[tuple[str, str]], params: FeaturizeParams):
        self._entries = tuple(entries)
        self.params = params
        self.names: tuple[str, ...] = tuple(name for name, _ in self._entries)
        self.families: dict[str, str] = dict(self._entries)
        self.index: dict[str, int] = {name: i for i, (name, _) in enumerate(self._entries)}
        if len(self.index) != len(self._entries):
            raise ConfigError("duplicate feature names in catalog")

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def family_of(self, name: str) -> str:
        try:
            return self.families[name]
        except KeyError:
            raise UnknownFeatureError(name) from None

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "features": [{"name": n, "family": f} for n, f in self._entries],
        }

    def save(self, path: str | Path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "FeatureCatalog":
        raw = load_json(path)
        params = FeaturizeParams.from_dict(raw["params"])
        return cls([(row["name"], row["family"]) for row in raw["features"]], params)


class FeatureVector:
    """Sparse named feature values; absent means 0.0 and zeros are not stored."""

    def __init__(self, values: dict[str, float], catalog: FeatureCatalog):
        unknown = [k for k in values if k not in catalog]
        if unknown:
            raise CatalogMismatchError(f"features not in catalog: {unknown[:5]}")
        self.values = {k: float(v) for k, v in values.items() if v != 0.0}
        self.catalog = catalog

    def get(self, name: str) -> float:
        return self.values.get(name, 0.0)

    def __len__(self) -> int:
        return len(self.values)


def ngram_feature_name(pattern: bytes) -> str:
    return "ngram_" + repr(pattern)


def string_feature_name(token: bytes) -> str:
    return "string_" + repr(token)


def opcode_feature_name(grams: tuple[str, ...]) -> str:
    return "opcode_" + "_".join(grams)


def feature_pattern(name: str) -> bytes | tuple[str, ...] | None:
    """Recover the match payload encoded in a presence feature name.

    Returns bytes for ngram_/string_ features, a mnemonic tuple for opcode_
    features, bytes of the function/dll name for import/dll features, and
    None for numeric features.
    """
    if name.startswith("ngram_") or name.startswith("string_"):
        literal = name.split("_", 1)[1]
        try:
            value = ast.literal_eval(literal)
        except (ValueError, SyntaxError) as exc:
            raise UnknownFeatureError(f"cannot decode payload of {name!r}") from exc
        if not isinstance(value, bytes):
            raise UnknownFeatureError(f"payload of {name!r} is not bytes")
        return value
    if name.startswith("opcode_"):
        return tuple(name.split("_")[1:])
    if name.startswith("imp__"):
        return name[len("imp__"):].encode("ascii")
    if name.startswith("dll_"):
        return name[len("dll_"):].encode("ascii")
    return None


def _entry_point_file_offset(image: PeImage) -> int | None:
    return rva_to_offset(image, image.entry_point_rva)


def _opcode_streams(image: PeImage, data: bytes) -> list[tuple[int, list[str | None]]]:
    """Decode every executable section; the section holding the entry point
    is swept from the entry offset, others from their start. Returns
    (section raw_offset + start, tokens) pairs."""
    entry_off = _entry_point_file_offset(image)
    streams = []
    for sec in image.sections:
        if not sec.executable or sec.raw_size == 0:
            continue
        start = 0
        if entry_off is not None and sec.raw_offset <= entry_off < sec.raw_end():
            start = entry_off - sec.raw_offset
        body = data[sec.raw_offset : sec.raw_end()]
        streams.append((sec.raw_offset + start, decode_opcodes(body, start)))
    return streams


def collect_presence(image: PeImage, data: bytes, params: FeaturizeParams) -> dict[str, set[str]]:
    """Presence feature names this file exhibits, per family."""
    out: dict[str, set[str]] = {fam: set() for fam in PRESENCE_FAMILIES}
    for dll, funcs in image.imports:
        out["dll"].add("dll_" + dll.lower())
        for func in funcs:
            out["import"].add("imp__" + func.lower())
    n = params.ngram_len
    out["byte_ngram"] = {
        ngram_feature_name(data[i : i + n]) for i in range(len(data) - n + 1)
    }
    for match in _ASCII_RUN.finditer(data):
        out["string"].add(string_feature_name(match.group()))
    for match in _UTF16_RUN.finditer(data):
        out["string"].add(string_feature_name(match.group()[::2]))
    for _, tokens in _opcode_streams(image, data):
        for k in params.opcode_lens:
            for grams in token_ngrams(tokens, k):
                out["opcode_ngram"].add(opcode_feature_name(grams))
    return out


def numeric_features(image: PeImage, data: bytes) -> dict[str, float]:
    values: dict[str, float] = {
        "timestamp": float(image.timestamp),
        "sectionCount": float(image.section_count),
        "entryPointRva": float(image.entry_point_rva),
        "optionalHeaderMagic": float(image.optional_magic),
        "fileSize": float(image.file_length),
        "overlaySize": float(image.overlay[1]) if image.overlay else 0.0,
        "certificatePresent": 1.0 if image.certificate_range else 0.0,
        "richHeaderPresent": 1.0 if image.rich_header else 0.0,
        "richEntryCount": float(len(image.rich_header.entries)) if image.rich_header else 0.0,
    }
    entropies = [
        shannon_entropy(data[s.raw_offset : s.raw_end()])
        for s in image.sections
        if s.raw_size > 0
    ]
    values["sectionsMaxEntropy"] = max(entropies) if entropies else 0.0
    values["sectionsMeanEntropy"] = sum(entropies) / len(entropies) if entropies else 0.0
    entry_off = _entry_point_file_offset(image)
    entry_sec = image.section_at_offset(entry_off) if entry_off is not None else None
    if entry_sec is not None:
        for b in range(32):
            if entry_sec.characteristics & (1 << b):
                values[_BIT_FEATURES[b]] = 1.0
    return values


def _read_sample(manifest: CorpusManifest, sample_id: str) -> tuple[bytes, PeImage]:
    path = manifest.file_path(sample_id)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return data, parse_pe(data)


def build_catalog(
    manifest: CorpusManifest, params: FeaturizeParams, workers: int = 1
) -> FeatureCatalog:
    """Construct the vocabulary from a corpus.

    Presence families keep names whose document frequency lies in
    [df_min, df_max], ranked by descending frequency with lexicographic
    tie-break and capped at max_per_family. Numeric families are fixed.
    """
    params.validate()
    if len(manifest) == 0:
        raise EmptyCorpusError("cannot build a catalog from an empty corpus")

    def presence_of(sid: str) -> dict[str, set[str]]:
        data, image = _read_sample(manifest, sid)
        return collect_presence(image, data, params)

    ids = manifest.ids()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_file = list(pool.map(presence_of, ids))
    else:
        per_file = [presence_of(sid) for sid in ids]

    n_files = len(ids)
    entries: list[tuple[str, str]] = []
    entries += [(name, "header") for name in _HEADER_FEATURES]
    entries += [(name, "section") for name in _SECTION_FEATURES]
    for family in FAMILIES:
        if family not in PRESENCE_FAMILIES:
            continue
        df = Counter()
        for sets in per_file:
            df.update(sets[family])
        kept = [
            (name, count) for name, count in df.items()
            if params.df_min <= count / n_files <= params.df_max
        ]
        kept.sort(key=lambda item: (-item[1], item[0]))
        for name, _ in kept[: params.max_per_family]:
            entries.append((name, family))
    entries += [(name, "rich") for name in _RICH_FEATURES]
    entries += [(name, "file_generic") for name in _GENERIC_FEATURES]

    # Order families canonically: header, section, dll, import, rich,
    # byte_ngram, opcode_ngram, string, file_generic.
    rank = {fam: i for i, fam in enumerate(FAMILIES)}
    order = {name: i for i, (name, _) in enumerate(entries)}
    entries.sort(key=lambda item: (rank[item[1]], order[item[0]]))
    return FeatureCatalog(entries, params)


def extract_features(image: PeImage, data: bytes, catalog: FeatureCatalog) -> FeatureVector:
    """One file's sparse feature vector over the catalog vocabulary."""
    values = numeric_features(image, data)
    presence = collect_presence(image, data, catalog.params)
    for family in PRESENCE_FAMILIES:
        for name in presence[family]:
            if name in catalog and catalog.families[name] == family:
                values[name] = 1.0
    values = {k: v for k, v in values.items() if k in catalog}
    return FeatureVector(values, catalog)


@dataclass
class FeatureMatrix:
    ids: list[str]
    names: list[str]
    X: np.ndarray  # (n_samples, n_features) float64

    def row_of(self, sample_id: str) -> int:
        try:
            return self.ids.index(sample_id)
        except ValueError:
            raise KeyError(sample_id) from None

    def column(self, name: str) -> np.ndarray:
        try:
            return self.X[:, self.names.index(name)]
        except ValueError:
            raise UnknownFeatureError(name) from None

    def subset(self, sample_ids: list[str]) -> "FeatureMatrix":
        rows = [self.row_of(s) for s in sample_ids]
        return FeatureMatrix(ids=list(sample_ids), names=self.names, X=self.X[rows])


def build_matrix(manifest: CorpusManifest, catalog: FeatureCatalog, workers: int = 1) -> FeatureMatrix:
    def vector_of(sid: str) -> dict[str, float]:
        data, image = _read_sample(manifest, sid)
        return extract_features(image, data, catalog).values

    ids = manifest.ids()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(vector_of, ids))
    else:
        vectors = [vector_of(sid) for sid in ids]

    X = np.zeros((len(ids), len(catalog)), dtype=np.float64)
    for row, values in enumerate(vectors):
        for name, value in values.items():
            X[row, catalog.index[name]] = value
    return FeatureMatrix(ids=ids, names=list(catalog.names), X=X)


def write_dense_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id"] + matrix.names)
            for i, sid in enumerate(matrix.ids):
                writer.writerow([sid] + [repr(v) for v in matrix.X[i].tolist()])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_dense_csv(path: str | Path) -> FeatureMatrix:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(x) for x in row[1:]])
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    X = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(header) - 1))
    return FeatureMatrix(ids=ids, names=header[1:], X=X)


def write_triplets_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    """Sparse (sample_id, feature_name, value) rows for the nonzero entries."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "feature_name", "value"])
            for i, sid in enumerate(matrix.ids):
                row = matrix.X[i]
                for j in np.nonzero(row)[0]:
                    writer.writerow([sid, matrix.names[j], repr(float(row[j]))])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
