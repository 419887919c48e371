"""Byte-level localization and taxonomy labeling of top-ranked features.

For every feature a surrogate ranked as important, find where it lives in
the corpus files, attribute each occurrence to a PE region, tabulate how
many samples per category contain it, and run an ordered rule list that
assigns exactly one taxonomy verdict. The rules codify expert judgment as
explicit, configurable thresholds; first match wins.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .errors import MissingVerdictError, UnknownFeatureError
from .featurize import (
    FeatureCatalog,
    FeatureMatrix,
    feature_pattern,
)
from .manifest import CATEGORIES, CorpusManifest
from .pecore import PeImage, RegionKind, parse_pe, region_of_offset, shannon_entropy
from .x86 import decodes_fully, instruction_ngram_offsets, linear_sweep


class TaxonomyLabel(Enum):
    COMPILER_ARTIFACT = "CompilerArtifact"
    CERTIFICATE_METADATA = "CertificateMetadata"
    RESOURCE_STRING = "ResourceString"
    PACKING_INDICATOR = "PackingIndicator"
    HEADER_METADATA = "HeaderMetadata"
    IMPORT_ARTIFACT = "ImportArtifact"
    BEHAVIORAL_CANDIDATE = "BehavioralCandidate"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class AuditConfig:
    majority: float = 0.5           # strict > share of occurrences for region rules
    rich_cooccurrence: float = 0.8  # share of containing samples that carry a Rich header
    category_skew: float = 0.75     # max category share of containing samples
    context_bytes: int = 32

    def to_dict(self) -> dict:
        return {
            "majority": self.majority,
            "rich_cooccurrence": self.rich_cooccurrence,
            "category_skew": self.category_skew,
            "context_bytes": self.context_bytes,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AuditConfig":
        return cls(
            majority=float(raw.get("majority", 0.5)),
            rich_cooccurrence=float(raw.get("rich_cooccurrence", 0.8)),
            category_skew=float(raw.get("category_skew", 0.75)),
            context_bytes=int(raw.get("context_bytes", 32)),
        )


@dataclass(frozen=True)
class Occurrence:
    sample_id: str
    offset: int
    region: str  # str(RegionTag)
    context_hex: str
    section_executable: bool | None = None
    encoding: str | None = None  # how a text pattern matched: ascii / utf16

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "offset": self.offset,
            "region": self.region,
            "context_hex": self.context_hex,
            "section_executable": self.section_executable,
            "encoding": self.encoding,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Occurrence":
        return cls(
            sample_id=raw["sample_id"],
            offset=int(raw["offset"]),
            region=raw["region"],
            context_hex=raw["context_hex"],
            section_executable=raw.get("section_executable"),
            encoding=raw.get("encoding"),
        )


@dataclass
class AuditRecord:
    feature: str
    family: str
    occurrences: list[Occurrence]
    frequency: dict[str, int]  # per category, samples containing the feature
    verdict: TaxonomyLabel
    rule: str  # which rule fired

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "family": self.family,
            "verdict": self.verdict.value,
            "rule": self.rule,
            "frequency": self.frequency,
            "occurrences": [o.to_dict() for o in self.occurrences],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AuditRecord":
        return cls(
            feature=raw["feature"],
            family=raw["family"],
            occurrences=[Occurrence.from_dict(o) for o in raw["occurrences"]],
            frequency={k: int(v) for k, v in raw["frequency"].items()},
            verdict=TaxonomyLabel(raw["verdict"]),
            rule=raw["rule"],
        )


class AuditContext:
    """Parsed corpus plus the feature matrix, loaded once and reused across
    features. Localization fans out per (feature, file); everything here is
    read-only after construction."""

    def __init__(self, manifest: CorpusManifest, matrix: FeatureMatrix, catalog: FeatureCatalog):
        self.manifest = manifest
        self.matrix = matrix
        self.catalog = catalog
        self.samples: list[tuple[str, bytes, PeImage]] = []
        for entry in manifest.entries:
            data = manifest.file_path(entry.sample_id).read_bytes()
            self.samples.append((entry.sample_id, data, parse_pe(data)))
        self.categories = manifest.categories()
        self.category_sizes = {c: 0 for c in CATEGORIES}
        for cat in self.categories.values():
            self.category_sizes[cat] += 1

    def containing_rows(self, feature: str) -> list[int]:
        col = self.matrix.column(feature)
        return [i for i in range(len(col)) if col[i] != 0.0]


def _context(data: bytes, offset: int, length: int, width: int) -> str:
    lo = max(0, offset - width)
    hi = min(len(data), offset + length + width)
    return data[lo:hi].hex()


def _tag_at(image: PeImage, offset: int) -> tuple[str, bool | None]:
    tag = region_of_offset(image, offset)
    execu = None
    if tag.kind is RegionKind.SECTION:
        sec = image.section_at_offset(offset)
        execu = sec.executable if sec else None
    return str(tag), execu


def _find_all(data: bytes, pattern: bytes) -> list[int]:
    out = []
    at = data.find(pattern)
    while at >= 0:
        out.append(at)
        at = data.find(pattern, at + 1)
    return out


def _structural_offset(feature: str, image: PeImage, data: bytes) -> int | None:
    """File offset of the structure a numeric feature describes."""
    coff = image.lfanew + 4
    opt = coff + 20
    if feature == "timestamp":
        return coff + 4
    if feature == "sectionCount":
        return coff + 2
    if feature == "entryPointRva":
        return opt + 16
    if feature == "optionalHeaderMagic":
        return opt
    if feature == "sectionsMaxEntropy":
        best = None
        for sec in image.sections:
            if sec.raw_size == 0:
                continue
            h = shannon_entropy(data[sec.raw_offset : sec.raw_end()])
            if best is None or h > best[0]:
                best = (h, sec.header_offset)
        return best[1] if best else None
    if feature == "sectionsMeanEntropy":
        return image.sections[0].header_offset if image.sections else None
    if feature.startswith("pesectionProcessed_entrypointSectioncharacteristics_bit"):
        for sec in image.sections:
            span = max(sec.virtual_size, sec.raw_size)
            if span > 0 and sec.virtual_address <= image.entry_point_rva < sec.virtual_address + span:
                return sec.header_offset + 36  # characteristics field
        return None
    if feature in ("richHeaderPresent", "richEntryCount"):
        return image.rich_header.span[0] if image.rich_header else None
    if feature == "fileSize":
        return 0
    if feature == "overlaySize":
        return image.overlay[0] if image.overlay else None
    if feature == "certificatePresent":
        return image.certificate_range[0] if image.certificate_range else None
    return None


def locate_feature(feature: str, ctx: AuditContext, config: AuditConfig = AuditConfig()) -> list[Occurrence]:
    """All occurrences of a feature across the corpus, region-attributed.

    Byte n-grams and strings report every byte match (strings in both ASCII
    and UTF-16LE encodings); import/dll names match case-insensitively;
    opcode n-grams report decoded instruction-run offsets; numeric features
    get one synthetic occurrence per containing sample, pointing at the
    structure they describe.
    """
    if feature not in ctx.catalog:
        raise UnknownFeatureError(feature)
    family = ctx.catalog.family_of(feature)
    width = config.context_bytes
    containing = {ctx.matrix.ids[i] for i in ctx.containing_rows(feature)}
    out: list[Occurrence] = []

    if family in ("byte_ngram", "string"):
        pattern = feature_pattern(feature)
        searches: list[tuple[bytes, str | None]] = [(pattern, "ascii" if family == "string" else None)]
        if family == "string":
            utf16 = bytes(b for ch in pattern for b in (ch, 0))
            searches.append((utf16, "utf16"))
        for sid, data, image in ctx.samples:
            for needle, encoding in searches:
                for at in _find_all(data, needle):
                    region, execu = _tag_at(image, at)
                    out.append(Occurrence(
                        sample_id=sid, offset=at, region=region,
                        context_hex=_context(data, at, len(needle), width),
                        section_executable=execu, encoding=encoding,
                    ))
    elif family in ("import", "dll"):
        name = feature_pattern(feature)
        rx = re.compile(re.escape(name), re.IGNORECASE)
        for sid, data, image in ctx.samples:
            for match in rx.finditer(data):
                region, execu = _tag_at(image, match.start())
                out.append(Occurrence(
                    sample_id=sid, offset=match.start(), region=region,
                    context_hex=_context(data, match.start(), len(name), width),
                    section_executable=execu, encoding="ascii",
                ))
    elif family == "opcode_ngram":
        grams = feature_pattern(feature)
        for sid, data, image in ctx.samples:
            for sec in image.sections:
                if not sec.executable or sec.raw_size == 0:
                    continue
                body = data[sec.raw_offset : sec.raw_end()]
                sweep = list(linear_sweep(body))
                for rel in instruction_ngram_offsets(sweep, grams):
                    at = sec.raw_offset + rel
                    region, execu = _tag_at(image, at)
                    out.append(Occurrence(
                        sample_id=sid, offset=at, region=region,
                        context_hex=_context(data, at, 1, width),
                        section_executable=execu,
                    ))
    else:  # numeric/structural families
        for sid, data, image in ctx.samples:
            if sid not in containing:
                continue
            at = _structural_offset(feature, image, data)
            if at is None:
                continue
            region, execu = _tag_at(image, at)
            out.append(Occurrence(
                sample_id=sid, offset=at, region=region,
                context_hex=_context(data, at, 4, width),
                section_executable=execu,
            ))
    return out


def frequency_table(feature: str, ctx: AuditContext) -> dict[str, int]:
    """Samples per category (UB, PB, UM, PM) with a nonzero feature value."""
    counts = {c: 0 for c in CATEGORIES}
    for i in ctx.containing_rows(feature):
        counts[ctx.categories[ctx.matrix.ids[i]]] += 1
    return counts


_DER_TAGS = (0x30, 0x06, 0x13)


def _der_adjacent(context_hex: str) -> bool:
    """Heuristic: the window shows at least two distinct DER tag bytes each
    followed by a plausible short length byte."""
    window = bytes.fromhex(context_hex)
    seen = set()
    for i in range(len(window) - 1):
        if window[i] in _DER_TAGS and 0 < window[i + 1] <= 0x82:
            seen.add(window[i])
    return len(seen) >= 2


def _utf16_alternating(pattern: bytes) -> bool:
    if len(pattern) < 4 or len(pattern) % 2:
        return False
    return all(
        0x20 <= pattern[i] <= 0x7E and pattern[i + 1] == 0
        for i in range(0, len(pattern), 2)
    )


_SIZE_FEATURES = {"sectionsMaxEntropy", "sectionsMeanEntropy", "fileSize", "overlaySize"}
_HEADER_FIELD_FEATURES = {"timestamp", "sectionCount", "entryPointRva", "optionalHeaderMagic"}


def classify_feature(
    feature: str,
    occurrences: list[Occurrence],
    frequency: dict[str, int],
    ctx: AuditContext,
    config: AuditConfig = AuditConfig(),
) -> tuple[TaxonomyLabel, str]:
    """Ordered first-match taxonomy. Returns (verdict, rule note)."""
    family = ctx.catalog.family_of(feature)
    n_occ = len(occurrences)

    def share(predicate) -> float:
        if n_occ == 0:
            return 0.0
        return sum(1 for o in occurrences if predicate(o)) / n_occ

    # 1. entropy / section-statistic / size features
    if feature in _SIZE_FEATURES:
        return TaxonomyLabel.PACKING_INDICATOR, "rule1: entropy or size statistic"
    # 2. raw header fields and characteristics bits
    if feature in _HEADER_FIELD_FEATURES or feature.startswith(
        "pesectionProcessed_entrypointSectioncharacteristics_bit"
    ):
        return TaxonomyLabel.HEADER_METADATA, "rule2: header field or characteristics bit"
    # 3. certificate region or DER-tag context
    cert_share = share(lambda o: o.region == "CertificateTable")
    if cert_share > config.majority:
        return TaxonomyLabel.CERTIFICATE_METADATA, f"rule3: {cert_share:.2f} of occurrences in CertificateTable"
    if n_occ and share(lambda o: _der_adjacent(o.context_hex)) > config.majority and family in ("byte_ngram", "string"):
        return TaxonomyLabel.CERTIFICATE_METADATA, "rule3: DER tag adjacency in context"
    # 4. Rich header region
    rich_share = share(lambda o: o.region == "RichHeaderRegion")
    if n_occ and rich_share > config.majority:
        return TaxonomyLabel.COMPILER_ARTIFACT, f"rule4: {rich_share:.2f} of occurrences in Rich header"
    # 5. UTF-16 text in resource/data sections
    if family in ("byte_ngram", "string"):
        pattern = feature_pattern(feature)
        utf16_pattern = isinstance(pattern, bytes) and _utf16_alternating(pattern)
        utf16_matches = share(lambda o: o.encoding == "utf16") > config.majority
        rsrc_share = share(lambda o: o.region in ("Section(.rsrc)", "Section(.rdata)"))
        if (utf16_pattern or utf16_matches) and rsrc_share > config.majority:
            return TaxonomyLabel.RESOURCE_STRING, f"rule5: UTF-16 text, {rsrc_share:.2f} in .rsrc/.rdata"
    # 6. import families
    if family in ("import", "dll"):
        return TaxonomyLabel.IMPORT_ARTIFACT, "rule6: import-family feature"
    # 7. code patterns: compiler artifact vs behavioral candidate
    code_like = family == "opcode_ngram"
    if not code_like and family in ("byte_ngram", "string"):
        pattern = feature_pattern(feature)
        code_like = (
            isinstance(pattern, bytes)
            and decodes_fully(pattern)
            and share(lambda o: bool(o.section_executable)) > config.majority
        )
    if code_like:
        containing = [ctx.matrix.ids[i] for i in ctx.containing_rows(feature)]
        if containing:
            rich_col = ctx.matrix.column("richHeaderPresent")
            rich_carriers = sum(
                1 for sid in containing if rich_col[ctx.matrix.row_of(sid)] != 0.0
            )
            rich_rate = rich_carriers / len(containing)
            total = sum(frequency.values())
            skew = max(frequency.values()) / total if total else 0.0
            if rich_rate >= config.rich_cooccurrence and skew >= config.category_skew:
                return (
                    TaxonomyLabel.COMPILER_ARTIFACT,
                    f"rule7: code pattern, rich co-occurrence {rich_rate:.2f}, skew {skew:.2f}",
                )
        return TaxonomyLabel.BEHAVIORAL_CANDIDATE, "rule7: code pattern without compiler correlation"
    # 8. fallback
    return TaxonomyLabel.UNKNOWN, "rule8: no rule matched"


def audit_feature(feature: str, ctx: AuditContext, config: AuditConfig = AuditConfig()) -> AuditRecord:
    occurrences = locate_feature(feature, ctx, config)
    frequency = frequency_table(feature, ctx)
    verdict, rule = classify_feature(feature, occurrences, frequency, ctx, config)
    return AuditRecord(
        feature=feature,
        family=ctx.catalog.family_of(feature),
        occurrences=occurrences,
        frequency=frequency,
        verdict=verdict,
        rule=rule,
    )


def artifact_dominance(
    feature_sets: list, verdicts: dict[str, TaxonomyLabel]
) -> float:
    """Importance-weighted share of non-behavioral mass, averaged over the
    feature sets. Sets with no ranked features are skipped; every ranked
    feature must have a verdict."""
    shares = []
    for fs in feature_sets:
        total = 0.0
        artifact = 0.0
        for name, importance in fs.features:
            if name not in verdicts:
                raise MissingVerdictError(f"no verdict for ranked feature {name!r}")
            total += importance
            if verdicts[name] is not TaxonomyLabel.BEHAVIORAL_CANDIDATE:
                artifact += importance
        if total > 0:
            shares.append(artifact / total)
    if not shares:
        return 0.0
    return float(sum(shares) / len(shares))
