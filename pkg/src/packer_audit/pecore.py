"""Structural parsing of Windows PE images.

Parses headers, sections, imports, the Rich header, the certificate data
directory, and the overlay into an immutable PeImage, and attributes any
file offset to exactly one region. Parsing is read-only and total: malformed
input raises a typed error, it never crashes or reads out of bounds.

Only the structure needed for static featurization is modeled; there is no
loader semantics (relocations, TLS, resource trees) and no signature
verification.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .errors import (
    EmptyInputError,
    MalformedDosError,
    MalformedPeError,
    OffsetOutOfRangeError,
    SectionOutOfBoundsError,
)

DOS_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"
PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

DOS_HEADER_SIZE = 0x40
E_LFANEW_OFFSET = 0x3C

# Data directory indices used here. Index 4 is addressed by FILE OFFSET,
# not RVA, per the PE certificate-table convention.
DIR_IMPORT = 1
DIR_CERTIFICATE = 4

SCN_MEM_EXECUTE = 0x20000000
SCN_MEM_WRITE = 0x80000000

_MAX_SECTIONS = 96
_MAX_IMPORT_DLLS = 64
_MAX_IMPORT_FUNCS = 1024


class RegionKind(Enum):
    DOS_STUB = "DosStub"
    HEADERS = "Headers"
    RICH_HEADER = "RichHeaderRegion"
    SECTION = "Section"
    CERTIFICATE_TABLE = "CertificateTable"
    OVERLAY = "Overlay"
    GAP = "Gap"


@dataclass(frozen=True)
class RegionTag:
    """Attribution of a file offset. section_name is set only for SECTION."""

    kind: RegionKind
    section_name: str | None = None

    def __str__(self) -> str:
        if self.kind is RegionKind.SECTION:
            return f"Section({self.section_name})"
        return self.kind.value


@dataclass(frozen=True)
class SectionHeader:
    name: str
    virtual_size: int
    virtual_address: int
    raw_size: int
    raw_offset: int
    characteristics: int
    header_offset: int  # file offset of this 40-byte header entry

    @property
    def executable(self) -> bool:
        return bool(self.characteristics & SCN_MEM_EXECUTE)

    @property
    def writable(self) -> bool:
        return bool(self.characteristics & SCN_MEM_WRITE)

    def raw_end(self) -> int:
        return self.raw_offset + self.raw_size


@dataclass(frozen=True)
class RichHeader:
    xor_key: int
    entries: tuple[tuple[int, int], ...]  # (comp_id, use_count)
    span: tuple[int, int]  # (offset, length) in file


@dataclass(frozen=True)
class PeImage:
    dos_magic: bytes
    lfanew: int
    machine: int
    section_count: int
    timestamp: int
    optional_magic: int
    entry_point_rva: int
    data_directories: tuple[tuple[int, int], ...]  # 16 (address, size) pairs
    sections: tuple[SectionHeader, ...]
    rich_header: RichHeader | None
    imports: tuple[tuple[str, tuple[str, ...]], ...]
    overlay: tuple[int, int] | None  # (offset, length)
    file_length: int
    headers_end: int
    import_corrupt: bool = False

    @property
    def certificate_range(self) -> tuple[int, int] | None:
        """(file_offset, size) of the certificate table, when structurally valid."""
        off, size = self.data_directories[DIR_CERTIFICATE]
        if off > 0 and size > 0 and off + size <= self.file_length:
            return (off, size)
        return None

    def section_at_offset(self, offset: int) -> SectionHeader | None:
        for sec in self.sections:
            if sec.raw_size > 0 and sec.raw_offset <= offset < sec.raw_end():
                return sec
        return None


def _u16(data: bytes, off: int) -> int:
    if off < 0 or off + 2 > len(data):
        raise MalformedPeError(f"truncated read of 2 bytes at {off:#x}")
    return struct.unpack_from("<H", data, off)[0]


def _u32(data: bytes, off: int) -> int:
    if off < 0 or off + 4 > len(data):
        raise MalformedPeError(f"truncated read of 4 bytes at {off:#x}")
    return struct.unpack_from("<I", data, off)[0]


def shannon_entropy(data: bytes) -> float:
    """Byte-level Shannon entropy in bits, in [0, 8].

    H = -sum(p_v * log2(p_v)) over byte values v with frequency p_v.
    Exactly 0.0 for a constant buffer and exactly 8.0 for one copy of each
    byte value; permutation-invariant because only counts enter.
    """
    if len(data) == 0:
        raise EmptyInputError("entropy of empty buffer is undefined")
    n = len(data)
    counts = Counter(data)
    h = 0.0
    # Sum in byte-value order so the result is exactly permutation-invariant.
    for value in sorted(counts):
        p = counts[value] / n
        h -= p * math.log2(p)
    return h + 0.0  # normalize -0.0


def _parse_rich_header(data: bytes, lfanew: int) -> RichHeader | None:
    """Locate and decode the XOR-masked Rich header between the DOS stub and
    the PE signature. Returns None when absent or undecodable."""
    search_end = min(lfanew, len(data))
    rich_at = data.rfind(b"Rich", DOS_HEADER_SIZE, search_end)
    if rich_at < 0 or rich_at + 8 > len(data):
        return None
    key = struct.unpack_from("<I", data, rich_at + 4)[0]
    # Walk backwards in dwords, unmasking until the DanS marker appears.
    words: list[int] = []
    pos = rich_at - 4
    dans_at = -1
    while pos >= DOS_HEADER_SIZE:
        word = struct.unpack_from("<I", data, pos)[0] ^ key
        if word == struct.unpack("<I", b"DanS")[0]:
            dans_at = pos
            break
        words.append(word)
        pos -= 4
    if dans_at < 0:
        return None
    words.reverse()
    # DanS is followed by three zero padding dwords; entries are
    # (comp_id, use_count) pairs after those.
    if len(words) < 3 or any(words[:3]):
        return None
    body = words[3:]
    if len(body) % 2 != 0:
        return None
    entries = tuple((body[i], body[i + 1]) for i in range(0, len(body), 2))
    span = (dans_at, rich_at + 8 - dans_at)
    return RichHeader(xor_key=key, entries=entries, span=span)


def rva_to_offset(image: PeImage, rva: int) -> int | None:
    """Map a virtual address to its file offset, or None when the RVA has no
    raw backing (e.g. padding past a section's raw size)."""
    for sec in image.sections:
        span = max(sec.virtual_size, sec.raw_size)
        if span <= 0:
            continue
        if sec.virtual_address <= rva < sec.virtual_address + span:
            delta = rva - sec.virtual_address
            if delta < sec.raw_size:
                off = sec.raw_offset + delta
                if off < image.file_length:
                    return off
            return None
    return None


def _parse_imports(
    data: bytes, sections: tuple[SectionHeader, ...], rva: int, file_length: int
) -> tuple[tuple[str, tuple[str, ...]], ...]:
    """Walk the import directory. Raises MalformedPeError on any structural
    corruption; the caller converts that into the degraded empty-list form."""

    def map_rva(r: int) -> int:
        for sec in sections:
            span = max(sec.virtual_size, sec.raw_size)
            if span > 0 and sec.virtual_address <= r < sec.virtual_address + span:
                delta = r - sec.virtual_address
                if delta < sec.raw_size and sec.raw_offset + delta < file_length:
                    return sec.raw_offset + delta
                break
        raise MalformedPeError(f"unmappable import RVA {r:#x}")

    def c_string(off: int, limit: int = 256) -> str:
        end = data.find(b"\x00", off, min(len(data), off + limit))
        if end < 0:
            raise MalformedPeError(f"unterminated import string at {off:#x}")
        return data[off:end].decode("ascii", errors="replace")

    out: list[tuple[str, tuple[str, ...]]] = []
    desc_off = map_rva(rva)
    for _ in range(_MAX_IMPORT_DLLS):
        if desc_off + 20 > len(data):
            raise MalformedPeError("import descriptor table truncated")
        ilt_rva, _, _, name_rva, iat_rva = struct.unpack_from("<5I", data, desc_off)
        if ilt_rva == 0 and name_rva == 0 and iat_rva == 0:
            break
        dll_name = c_string(map_rva(name_rva))
        thunk_off = map_rva(ilt_rva or iat_rva)
        funcs: list[str] = []
        for idx in range(_MAX_IMPORT_FUNCS):
            ent_off = thunk_off + idx * 4
            if ent_off + 4 > len(data):
                raise MalformedPeError("import thunk table truncated")
            val = struct.unpack_from("<I", data, ent_off)[0]
            if val == 0:
                break
            if val & 0x80000000:
                funcs.append(f"ordinal#{val & 0xFFFF}")
            else:
                funcs.append(c_string(map_rva(val) + 2))
        out.append((dll_name, tuple(funcs)))
        desc_off += 20
    return tuple(out)


def parse_pe(data: bytes) -> PeImage:
    """Parse a PE file image from raw bytes.

    Raises MalformedDosError / MalformedPeError / SectionOutOfBoundsError on
    structural problems. A corrupt import table does not fail the parse: the
    image comes back with empty imports and import_corrupt set, because
    packed files routinely destroy their import tables yet must still be
    featurizable.
    """
    if len(data) < DOS_HEADER_SIZE:
        raise MalformedDosError(f"file too small for a DOS header ({len(data)} bytes)")
    if data[:2] != DOS_MAGIC:
        raise MalformedDosError("missing MZ magic")
    lfanew = struct.unpack_from("<I", data, E_LFANEW_OFFSET)[0]
    if lfanew + 4 > len(data):
        raise MalformedPeError(f"e_lfanew {lfanew:#x} points outside the file")
    if data[lfanew : lfanew + 4] != PE_SIGNATURE:
        raise MalformedPeError("missing PE signature")

    coff_off = lfanew + 4
    machine = _u16(data, coff_off)
    section_count = _u16(data, coff_off + 2)
    timestamp = _u32(data, coff_off + 4)
    opt_size = _u16(data, coff_off + 16)
    if section_count > _MAX_SECTIONS:
        raise MalformedPeError(f"implausible section count {section_count}")

    opt_off = coff_off + 20
    optional_magic = _u16(data, opt_off)
    if optional_magic not in (PE32_MAGIC, PE32PLUS_MAGIC):
        raise MalformedPeError(f"unknown optional header magic {optional_magic:#x}")
    entry_point_rva = _u32(data, opt_off + 16)

    # 16 data directory entries; count field precedes them.
    is_plus = optional_magic == PE32PLUS_MAGIC
    dd_count_off = opt_off + (0x6C if is_plus else 0x5C)
    dd_off = opt_off + (0x70 if is_plus else 0x60)
    dd_count = min(_u32(data, dd_count_off), 16)
    dirs = []
    for i in range(16):
        if i < dd_count and dd_off + (i + 1) * 8 <= opt_off + opt_size:
            dirs.append((_u32(data, dd_off + i * 8), _u32(data, dd_off + i * 8 + 4)))
        else:
            dirs.append((0, 0))

    sect_table_off = opt_off + opt_size
    sections: list[SectionHeader] = []
    for i in range(section_count):
        sh_off = sect_table_off + i * 40
        if sh_off + 40 > len(data):
            raise MalformedPeError(f"section header {i} truncated")
        name = data[sh_off : sh_off + 8].rstrip(b"\x00").decode("ascii", errors="replace")
        vsize, vaddr, rsize, roff = struct.unpack_from("<4I", data, sh_off + 8)
        chars = struct.unpack_from("<I", data, sh_off + 36)[0]
        if rsize > 0 and (roff + rsize > len(data) or roff > len(data)):
            raise SectionOutOfBoundsError(
                f"section {name!r} raw range [{roff:#x}, {roff + rsize:#x}) "
                f"exceeds file length {len(data):#x}"
            )
        sections.append(
            SectionHeader(
                name=name,
                virtual_size=vsize,
                virtual_address=vaddr,
                raw_size=rsize,
                raw_offset=roff,
                characteristics=chars,
                header_offset=sh_off,
            )
        )
    headers_end = sect_table_off + section_count * 40
    if headers_end > len(data):
        raise MalformedPeError("header region exceeds file length")

    rich = _parse_rich_header(data, lfanew)

    sections_t = tuple(sections)
    imports: tuple[tuple[str, tuple[str, ...]], ...] = ()
    import_corrupt = False
    import_rva = dirs[DIR_IMPORT][0]
    if import_rva:
        try:
            imports = _parse_imports(data, sections_t, import_rva, len(data))
        except MalformedPeError:
            imports = ()
            import_corrupt = True

    raw_ends = [s.raw_end() for s in sections_t if s.raw_size > 0]
    overlay_base = max(raw_ends) if raw_ends else headers_end
    overlay = (overlay_base, len(data) - overlay_base) if len(data) > overlay_base else None

    return PeImage(
        dos_magic=bytes(data[:2]),
        lfanew=lfanew,
        machine=machine,
        section_count=section_count,
        timestamp=timestamp,
        optional_magic=optional_magic,
        entry_point_rva=entry_point_rva,
        data_directories=tuple(dirs),
        sections=sections_t,
        rich_header=rich,
        imports=imports,
        overlay=overlay,
        file_length=len(data),
        headers_end=headers_end,
        import_corrupt=import_corrupt,
    )


def region_of_offset(image: PeImage, offset: int) -> RegionTag:
    """Attribute a file offset to exactly one region.

    Precedence: certificate table, then section raw data, then the Rich
    header span, then overlay, then header areas; anything left is a Gap
    (alignment padding between regions).
    """
    if offset < 0 or offset >= image.file_length:
        raise OffsetOutOfRangeError(f"offset {offset:#x} outside [0, {image.file_length:#x})")
    cert = image.certificate_range
    if cert is not None and cert[0] <= offset < cert[0] + cert[1]:
        return RegionTag(RegionKind.CERTIFICATE_TABLE)
    sec = image.section_at_offset(offset)
    if sec is not None:
        return RegionTag(RegionKind.SECTION, sec.name)
    if image.rich_header is not None:
        start, length = image.rich_header.span
        if start <= offset < start + length:
            return RegionTag(RegionKind.RICH_HEADER)
    if image.overlay is not None and offset >= image.overlay[0]:
        return RegionTag(RegionKind.OVERLAY)
    if offset < DOS_HEADER_SIZE:
        return RegionTag(RegionKind.HEADERS)
    if offset < image.lfanew:
        return RegionTag(RegionKind.DOS_STUB)
    if offset < image.headers_end:
        return RegionTag(RegionKind.HEADERS)
    return RegionTag(RegionKind.GAP)
