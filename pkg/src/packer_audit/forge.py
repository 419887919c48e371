"""Synthetic PE forging with planted, recorded artifacts.

Builds structurally valid PE32 files whose interesting content (code
templates, marker strings, certificate blobs, Rich headers, import tables,
packing transforms) is fully controlled and whose exact file offsets are
recorded, so downstream localization and taxonomy logic can be tested
without real malware.

Packing is simulated: an XOR keystream or high-entropy stuffing reproduces
the measurable effects of real packers (entropy rise, import destruction,
metadata loss) without shipping one.
"""

from __future__ import annotations

import random
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, IoFailure, LayoutOverflowError
from .manifest import CATEGORIES, CorpusManifest, ManifestEntry, categorize
from .pecore import shannon_entropy
from .util import derive_seed, dump_json, sha256_hex

FILE_ALIGN = 0x200
SECTION_ALIGN = 0x1000
IMAGE_BASE = 0x400000

CHAR_TEXT = 0x60000020  # CODE | EXECUTE | READ
CHAR_TEXT_PACKED = 0xE0000020  # packers leave the unpack target writable
CHAR_DATA = 0x40000040  # INITIALIZED_DATA | READ
CHAR_IDATA = 0xC0000040  # INITIALIZED_DATA | READ | WRITE

PACK_TRANSFORMS = ("none", "xor_stream", "byte_stuff_high_entropy")

# Entropy margins the template pool is tuned to guarantee: packed sections
# land at >= 7.0 bits, unpacked at <= 6.5.
PACKED_ENTROPY_MIN = 7.0
UNPACKED_ENTROPY_MAX = 6.5

STUB_IMPORTS = (("kernel32.dll", "LoadLibraryA"), ("kernel32.dll", "GetProcAddress"))

DEFAULT_IMPORT_POOL = (
    ("kernel32.dll", "CreateFileA"),
    ("kernel32.dll", "ReadFile"),
    ("kernel32.dll", "WriteFile"),
    ("kernel32.dll", "CloseHandle"),
    ("kernel32.dll", "GetModuleHandleA"),
    ("user32.dll", "MessageBoxA"),
    ("user32.dll", "EnableWindow"),
    ("user32.dll", "CreateWindowExA"),
    ("advapi32.dll", "RegOpenKeyExA"),
    ("gdi32.dll", "TextOutA"),
)

# Certificate attribute fragments planted verbatim into the DER blob.
# Fragments ending in 0x13 get a PrintableString payload appended; bare
# OIDs get a DER NULL. 2b 06 01 05 05 07 03 08 is id-kp-timeStamping.
DEFAULT_CERT_OIDS = (
    bytes.fromhex("060355040b13"),              # organizationalUnitName + string tag
    bytes.fromhex("060355040313"),              # commonName + string tag
    bytes.fromhex("060355040613025553"),        # countryName = "US"
    bytes.fromhex("06082b06010505070308"),      # extended key usage: timestamping
    bytes.fromhex("06092a864886f70d01010b"),    # sha256WithRSAEncryption
)

_CERT_NAMES = {
    bytes.fromhex("060355040b13"): b"Audit Code Signing",
    bytes.fromhex("060355040313"): b"Packer Audit Root CA",
}

# 64 bytes so the Rich header starts dword-aligned at 0x80.
_DOS_STUB_TEXT = b"\x0e\x1f\xba\x0e\x00\xb4\x09\xcd\x21\xb8\x01\x4c\xcd\x21" \
    b"This program cannot be run in DOS mode.\r\r\n$\x00\x00\x00\x00\x00\x00\x00"

# x86 code snippets for unpacked bodies. Every snippet decodes cleanly under
# the package decoder, uses a small byte alphabet (bounds section entropy),
# and never contains 4+ consecutive printable-ASCII bytes (no stray string
# tokens).
CODE_TEMPLATES = (
    bytes.fromhex("558bec"),          # push ebp; mov ebp, esp
    bytes.fromhex("5dc3"),            # pop ebp; ret
    bytes.fromhex("518bc185c0"),      # push ecx; mov eax, ecx; test eax, eax
    bytes.fromhex("e810000000"),      # call +0x10
    bytes.fromhex("eb0c"),            # jmp +12
    bytes.fromhex("7408"),            # je +8
    bytes.fromhex("0f84a0000000"),    # je +0xa0
    bytes.fromhex("8b4508"),          # mov eax, [ebp+8]
    bytes.fromhex("8945fc"),          # mov [ebp-4], eax
    bytes.fromhex("83f80a"),          # cmp eax, 10
    bytes.fromhex("75f0"),            # jne -16
    bytes.fromhex("b801000000"),      # mov eax, 1
    bytes.fromhex("33c9"),            # xor ecx, ecx
    bytes.fromhex("4001c34001c3"),    # inc eax; add ebx, eax (x2)
    bytes.fromhex("c1f802"),          # sar eax, 2
    bytes.fromhex("8d4df8"),          # lea ecx, [ebp-8]
    bytes.fromhex("6a00"),            # push 0
    bytes.fromhex("3bc87505"),        # cmp ecx, eax; jne +5
    bytes.fromhex("01d8"),            # add eax, ebx
    bytes.fromhex("8bf18bc6"),        # mov esi, ecx; mov eax, esi
    bytes.fromhex("84c07403"),        # test al, al; je +3
    bytes.fromhex("e9b0000000"),      # jmp +0xb0
    bytes.fromhex("83c004"),          # add eax, 4
    bytes.fromhex("90"),              # nop
)

_RICH_PRODUCTS = ((0x5D, 24123), (0x5E, 24123), (0x93, 26715), (0x84, 27905), (0xAA, 30034))


@dataclass(frozen=True)
class PlantedString:
    text: str
    region: str  # ".text", ".rdata" or ".rsrc"
    utf16: bool = False


@dataclass(frozen=True)
class ForgeSpec:
    """Fully resolved recipe for one synthetic PE file."""

    label: str
    packed: bool
    include_rich_header: bool = False
    planted_strings: tuple[PlantedString, ...] = ()
    planted_certificate: tuple[bytes, ...] | None = None
    import_set: tuple[tuple[str, str], ...] = DEFAULT_IMPORT_POOL[:4]
    code_template_seed: int = 0
    pack_transform: str = "none"
    seed: int = 0
    text_size: int = 4096
    rdata_size: int = 1024
    rsrc_size: int = 0
    overlay_extra: int = 0

    def validate(self) -> None:
        if self.label not in ("benign", "malicious"):
            raise ConfigError(f"unknown label {self.label!r}")
        if self.pack_transform not in PACK_TRANSFORMS:
            raise ConfigError(f"unknown pack transform {self.pack_transform!r}")
        if self.packed and self.pack_transform == "none":
            raise ConfigError("packed spec requires a pack transform")
        if not self.packed and self.pack_transform != "none":
            raise ConfigError("unpacked spec must use pack_transform 'none'")
        regions = {".text", ".rdata"} | ({".rsrc"} if self.rsrc_size > 0 else set())
        for ps in self.planted_strings:
            if ps.region not in regions:
                raise ConfigError(f"planted region {ps.region!r} not in emitted layout")


@dataclass
class ForgeRecord:
    """Exact offsets of everything the forge planted; the test oracle."""

    label: str
    packed: bool
    category: str
    seed: int
    pack_transform: str
    section_layout: list[dict]  # name, raw_offset, raw_size, virtual_address
    entry_point_rva: int
    entry_point_offset: int
    rich_span: tuple[int, int] | None
    rich_entry_count: int
    certificate_range: tuple[int, int] | None
    planted_strings: list[dict]  # text, region, utf16, offset, length
    planted_oids: list[dict]  # hex, offset, length
    import_set: list[tuple[str, str]]
    file_length: int = 0

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "packed": self.packed,
            "category": self.category,
            "seed": self.seed,
            "pack_transform": self.pack_transform,
            "section_layout": self.section_layout,
            "entry_point_rva": self.entry_point_rva,
            "entry_point_offset": self.entry_point_offset,
            "rich_span": list(self.rich_span) if self.rich_span else None,
            "rich_entry_count": self.rich_entry_count,
            "certificate_range": list(self.certificate_range) if self.certificate_range else None,
            "planted_strings": self.planted_strings,
            "planted_oids": self.planted_oids,
            "import_set": [list(x) for x in self.import_set],
            "file_length": self.file_length,
        }


def _align(value: int, alignment: int) -> int:
    return (value + alignment - 1) & ~(alignment - 1)


def _build_rich_header(rng: random.Random) -> tuple[bytes, int]:
    """Masked Rich header bytes and the entry count."""
    key = rng.getrandbits(32) or 0x1234ABCD
    n_entries = rng.randint(3, 6)
    entries = []
    for _ in range(n_entries):
        prod, build = _RICH_PRODUCTS[rng.randrange(len(_RICH_PRODUCTS))]
        entries.append(((prod << 16) | build, rng.randint(1, 400)))
    words = [struct.unpack("<I", b"DanS")[0], 0, 0, 0]
    for comp_id, count in entries:
        words.extend([comp_id, count])
    blob = b"".join(struct.pack("<I", w ^ key) for w in words)
    blob += b"Rich" + struct.pack("<I", key)
    return blob, n_entries


def _generate_code(rng: random.Random, size: int) -> bytearray:
    """Fill a code body from the template pool; remainder padded with nops."""
    body = bytearray()
    while len(body) < size:
        snippet = CODE_TEMPLATES[rng.randrange(len(CODE_TEMPLATES))]
        if len(body) + len(snippet) > size:
            break
        body += snippet
    body += b"\x90" * (size - len(body))
    return body


def _xor_stream(data: bytearray, rng: random.Random) -> bytearray:
    key = rng.randbytes(len(data))
    return bytearray(a ^ b for a, b in zip(data, key))


def _der_length(n: int) -> bytes:
    if n < 0x80:
        return bytes([n])
    return b"\x82" + struct.pack(">H", n)


def _build_certificate(rng: random.Random, oids: tuple[bytes, ...]) -> tuple[bytes, list[tuple[bytes, int]]]:
    """WIN_CERTIFICATE wrapper around a DER-like SignedData fragment.

    Structurally plausible (SEQUENCE/SET shells, OID and PrintableString
    tags), not a valid signature. Returns the blob and the offset of each
    planted fragment relative to the blob start.
    """
    body = bytearray()
    body += b"\x02\x08" + rng.randbytes(8)  # per-file serial INTEGER
    fragment_offsets: list[tuple[bytes, int]] = []
    for oid in oids:
        attr = bytearray()
        attr += oid
        if oid.endswith(b"\x13"):
            name = _CERT_NAMES.get(oid, b"Trust Services")
            attr += _der_length(len(name)) + name
        elif not oid.endswith(b"\x55\x53"):
            attr += b"\x05\x00"  # NULL parameters
        shell = bytearray()
        shell += b"\x31" + _der_length(len(attr) + 2)  # SET
        shell += b"\x30" + _der_length(len(attr))  # SEQUENCE
        offset_in_shell = len(shell)
        shell += attr
        fragment_offsets.append((oid, len(body) + offset_in_shell))
        body += shell
    der = b"\x30" + _der_length(len(body)) + bytes(body)
    der_shift = len(der) - len(body)
    fragments = [(oid, off + der_shift) for oid, off in fragment_offsets]
    # WIN_CERTIFICATE: dwLength, wRevision=0x0200, wCertificateType=2
    total = _align(8 + len(der), 8)
    blob = struct.pack("<IHH", total, 0x0200, 0x0002) + der
    blob += b"\x00" * (total - len(blob))
    return blob, [(oid, off + 8) for oid, off in fragments]


def _build_idata(imports: tuple[tuple[str, str], ...], idata_rva: int) -> bytes:
    """Import directory table, ILT/IAT thunks, hint/name entries, DLL names."""
    dlls: list[tuple[str, list[str]]] = []
    for dll, func in imports:
        for name, funcs in dlls:
            if name == dll:
                funcs.append(func)
                break
        else:
            dlls.append((dll, [func]))

    desc_size = (len(dlls) + 1) * 20
    cursor = desc_size
    ilt_rel, iat_rel = [], []
    for _, funcs in dlls:
        ilt_rel.append(cursor)
        cursor += (len(funcs) + 1) * 4
        iat_rel.append(cursor)
        cursor += (len(funcs) + 1) * 4
    hint_rel: list[list[int]] = []
    for _, funcs in dlls:
        rels = []
        for func in funcs:
            rels.append(cursor)
            entry_len = 2 + len(func) + 1
            cursor += entry_len + (entry_len & 1)
        hint_rel.append(rels)
    name_rel = []
    for dll, _ in dlls:
        name_rel.append(cursor)
        cursor += len(dll) + 1

    blob = bytearray(cursor)
    for i, (dll, funcs) in enumerate(dlls):
        struct.pack_into(
            "<5I", blob, i * 20,
            idata_rva + ilt_rel[i], 0, 0, idata_rva + name_rel[i], idata_rva + iat_rel[i],
        )
        for j, _ in enumerate(funcs):
            thunk = idata_rva + hint_rel[i][j]
            struct.pack_into("<I", blob, ilt_rel[i] + j * 4, thunk)
            struct.pack_into("<I", blob, iat_rel[i] + j * 4, thunk)
        for j, func in enumerate(funcs):
            off = hint_rel[i][j]
            blob[off : off + 2] = b"\x00\x00"
            blob[off + 2 : off + 2 + len(func)] = func.encode("ascii")
        blob[name_rel[i] : name_rel[i] + len(dll)] = dll.encode("ascii")
    return bytes(blob)


def _plant_in_code(
    body: bytearray, rng: random.Random, payload: bytes, used: list[tuple[int, int]]
) -> int:
    """Overwrite code with a nop-guarded payload at a seeded position so
    planted markers form exact string runs and still decode as instructions."""
    unit = b"\x90" + payload + b"\x90"
    if len(unit) > len(body):
        raise LayoutOverflowError("planted content exceeds .text size")
    for _ in range(64):
        pos = rng.randrange(0, len(body) - len(unit) + 1)
        if all(pos + len(unit) <= lo or pos >= hi for lo, hi in used):
            used.append((pos, pos + len(unit)))
            body[pos : pos + len(unit)] = unit
            return pos + 1
    raise LayoutOverflowError("could not place planted content without overlap")


def _plant_in_data(region: bytearray, cursor: int, payload: bytes) -> tuple[int, int]:
    """Append a NUL-separated payload at cursor; returns (offset, new cursor)."""
    end = cursor + len(payload) + 1
    if end > len(region):
        raise LayoutOverflowError("planted content exceeds data section size")
    region[cursor : cursor + len(payload)] = payload
    return cursor, end


def forge_pe(spec: ForgeSpec) -> tuple[bytes, ForgeRecord]:
    """Emit one PE32 file plus the record of everything planted in it."""
    spec.validate()
    rng = random.Random(spec.seed)
    code_rng = random.Random(spec.code_template_seed or derive_seed(spec.seed, "code"))

    # --- section contents ---
    for attempt in range(6):
        text = _generate_code(code_rng, spec.text_size)
        if spec.pack_transform == "xor_stream":
            text = _xor_stream(text, random.Random(derive_seed(spec.seed, "pack", attempt)))
        elif spec.pack_transform == "byte_stuff_high_entropy":
            text = bytearray(random.Random(derive_seed(spec.seed, "pack", attempt)).randbytes(spec.text_size))
        if spec.pack_transform == "none" or shannon_entropy(bytes(text)) >= PACKED_ENTROPY_MIN:
            break
    else:
        raise LayoutOverflowError("could not reach packed entropy floor")

    rdata = bytearray(spec.rdata_size)
    rsrc = bytearray(spec.rsrc_size)
    planted_strings: list[dict] = []
    rdata_cursor, rsrc_cursor = 0, 0
    used_code_spans: list[tuple[int, int]] = []
    text_plants: list[tuple[PlantedString, int, bytes]] = []
    for ps in spec.planted_strings:
        payload = ps.text.encode("utf-16le") if ps.utf16 else ps.text.encode("ascii")
        if ps.region == ".text":
            rel = _plant_in_code(text, rng, payload, used_code_spans)
            text_plants.append((ps, rel, payload))
        elif ps.region == ".rdata":
            rel, rdata_cursor = _plant_in_data(rdata, rdata_cursor, payload)
            planted_strings.append({"text": ps.text, "region": ".rdata", "utf16": ps.utf16,
                                    "rel_offset": rel, "length": len(payload)})
        else:
            rel, rsrc_cursor = _plant_in_data(rsrc, rsrc_cursor, payload)
            planted_strings.append({"text": ps.text, "region": ".rsrc", "utf16": ps.utf16,
                                    "rel_offset": rel, "length": len(payload)})

    import_set = STUB_IMPORTS if spec.packed else spec.import_set
    if not import_set:
        import_set = STUB_IMPORTS

    # --- virtual layout ---
    section_specs: list[tuple[str, bytearray | bytes, int]] = [(".text", text, CHAR_TEXT_PACKED if spec.packed else CHAR_TEXT)]
    section_specs.append((".rdata", rdata, CHAR_DATA))
    if spec.rsrc_size > 0:
        section_specs.append((".rsrc", rsrc, CHAR_DATA))

    rvas: dict[str, int] = {}
    next_rva = SECTION_ALIGN
    for name, content, _ in section_specs:
        rvas[name] = next_rva
        next_rva += _align(max(len(content), 1), SECTION_ALIGN)
    idata_rva = next_rva
    idata = _build_idata(import_set, idata_rva)
    section_specs.append((".idata", idata, CHAR_IDATA))
    rvas[".idata"] = idata_rva
    next_rva += _align(len(idata), SECTION_ALIGN)

    # --- headers ---
    rich_blob, rich_entries = (b"", 0)
    if spec.include_rich_header:
        rich_blob, rich_entries = _build_rich_header(rng)
    stub = _DOS_STUB_TEXT
    rich_at = 0x40 + len(stub)
    lfanew = _align(rich_at + len(rich_blob), 8)

    n_sections = len(section_specs)
    headers_end = lfanew + 4 + 20 + 0xE0 + n_sections * 40
    raw_cursor = _align(headers_end, FILE_ALIGN)
    raw_offsets: dict[str, int] = {}
    raw_sizes: dict[str, int] = {}
    for name, content, _ in section_specs:
        raw_offsets[name] = raw_cursor
        raw_sizes[name] = _align(max(len(content), 1), FILE_ALIGN)
        raw_cursor += raw_sizes[name]
    overlay_start = raw_cursor

    cert_blob, cert_fragments = b"", []
    if spec.planted_certificate is not None:
        cert_blob, cert_fragments = _build_certificate(rng, tuple(spec.planted_certificate))
    cert_range = (overlay_start, len(cert_blob)) if cert_blob else None
    file_length = overlay_start + len(cert_blob) + spec.overlay_extra

    entry_rva = rvas[".text"]
    timestamp = rng.randrange(1420070400, 1672531200)  # 2015..2023

    out = bytearray(file_length)
    # DOS header
    out[0:2] = b"MZ"
    struct.pack_into("<I", out, 0x3C, lfanew)
    out[0x40 : 0x40 + len(stub)] = stub
    if rich_blob:
        out[rich_at : rich_at + len(rich_blob)] = rich_blob
    # PE signature + COFF
    out[lfanew : lfanew + 4] = b"PE\x00\x00"
    struct.pack_into("<HHIIIHH", out, lfanew + 4, 0x014C, n_sections, timestamp, 0, 0, 0xE0, 0x0102)
    # Optional header (PE32)
    opt = lfanew + 24
    size_of_image = next_rva
    struct.pack_into("<HBB", out, opt, 0x10B, 9, 0)
    struct.pack_into("<III", out, opt + 4, raw_sizes[".text"], sum(raw_sizes.values()) - raw_sizes[".text"], 0)
    struct.pack_into("<III", out, opt + 16, entry_rva, rvas[".text"], rvas[".rdata"])
    struct.pack_into("<III", out, opt + 28, IMAGE_BASE, SECTION_ALIGN, FILE_ALIGN)
    struct.pack_into("<HHHHHH", out, opt + 40, 5, 1, 0, 0, 5, 1)
    struct.pack_into("<III", out, opt + 52, 0, size_of_image, _align(headers_end, FILE_ALIGN))
    struct.pack_into("<IHH", out, opt + 64, 0, 3, 0)
    struct.pack_into("<IIII", out, opt + 72, 0x100000, 0x1000, 0x100000, 0x1000)
    struct.pack_into("<II", out, opt + 88, 0, 16)
    dd = opt + 96
    struct.pack_into("<II", out, dd + 1 * 8, idata_rva, len(idata))
    if cert_range:
        struct.pack_into("<II", out, dd + 4 * 8, cert_range[0], cert_range[1])
    # Section table
    sect_table = opt + 0xE0
    for i, (name, content, chars) in enumerate(section_specs):
        off = sect_table + i * 40
        out[off : off + 8] = name.encode("ascii").ljust(8, b"\x00")
        struct.pack_into("<IIII", out, off + 8, len(content), rvas[name], raw_sizes[name], raw_offsets[name])
        struct.pack_into("<I", out, off + 36, chars)
    # Section raw data
    for name, content, _ in section_specs:
        out[raw_offsets[name] : raw_offsets[name] + len(content)] = content
    if cert_blob:
        out[overlay_start : overlay_start + len(cert_blob)] = cert_blob

    # Post-condition: the entropy margins hold.
    if not spec.packed:
        for name, content, _ in section_specs:
            if len(content) and shannon_entropy(bytes(content)) > UNPACKED_ENTROPY_MAX:
                raise LayoutOverflowError(f"unpacked section {name} too dense for the entropy margin")

    for ps, rel, payload in text_plants:
        planted_strings.append({"text": ps.text, "region": ".text", "utf16": ps.utf16,
                                "rel_offset": rel, "length": len(payload)})
    for row in planted_strings:
        row["offset"] = raw_offsets[row["region"]] + row.pop("rel_offset")

    record = ForgeRecord(
        label=spec.label,
        packed=spec.packed,
        category=categorize(spec.label, spec.packed),
        seed=spec.seed,
        pack_transform=spec.pack_transform,
        section_layout=[
            {"name": name, "raw_offset": raw_offsets[name], "raw_size": raw_sizes[name],
             "virtual_address": rvas[name], "content_size": len(content)}
            for name, content, _ in section_specs
        ],
        entry_point_rva=entry_rva,
        entry_point_offset=raw_offsets[".text"],
        rich_span=(rich_at, len(rich_blob)) if rich_blob else None,
        rich_entry_count=rich_entries,
        certificate_range=cert_range,
        planted_strings=planted_strings,
        planted_oids=[
            {"hex": oid.hex(), "offset": overlay_start + off, "length": len(oid)}
            for oid, off in cert_fragments
        ],
        import_set=list(import_set),
        file_length=file_length,
    )
    return bytes(out), record


@dataclass(frozen=True)
class CategoryProfile:
    """Per-category distribution over ForgeSpecs; resolved per sample seed."""

    include_rich_header: bool = False
    pack_transform: str = "none"
    planted_strings: tuple[dict, ...] = ()  # {text, region, utf16?, probability?}
    certificate_probability: float = 0.0
    certificate_oids: tuple[bytes, ...] = DEFAULT_CERT_OIDS
    import_pool: tuple[tuple[str, str], ...] = DEFAULT_IMPORT_POOL
    imports_min: int = 3
    imports_max: int = 6
    text_size: tuple[int, int] = (4096, 4096)
    rdata_size: tuple[int, int] = (1024, 1024)
    rsrc_size: tuple[int, int] = (0, 0)
    overlay_extra: tuple[int, int] = (0, 0)

    @classmethod
    def from_dict(cls, raw: dict) -> "CategoryProfile":
        def size(key: str, default: tuple[int, int]) -> tuple[int, int]:
            v = raw.get(key, default)
            if isinstance(v, int):
                return (v, v)
            return (int(v[0]), int(v[1]))

        return cls(
            include_rich_header=bool(raw.get("include_rich_header", False)),
            pack_transform=raw.get("pack_transform", "none"),
            planted_strings=tuple(raw.get("planted_strings", ())),
            certificate_probability=float(raw.get("certificate_probability", 0.0)),
            certificate_oids=tuple(
                bytes.fromhex(x) for x in raw["certificate_oids"]
            ) if "certificate_oids" in raw else DEFAULT_CERT_OIDS,
            import_pool=tuple(
                (d, f) for d, f in raw.get("import_pool", DEFAULT_IMPORT_POOL)
            ),
            imports_min=int(raw.get("imports_min", 3)),
            imports_max=int(raw.get("imports_max", 6)),
            text_size=size("text_size", (4096, 4096)),
            rdata_size=size("rdata_size", (1024, 1024)),
            rsrc_size=size("rsrc_size", (0, 0)),
            overlay_extra=size("overlay_extra", (0, 0)),
        )

    def resolve(self, label: str, packed: bool, seed: int) -> ForgeSpec:
        rng = random.Random(derive_seed(seed, "profile"))
        strings = []
        for row in self.planted_strings:
            if rng.random() < float(row.get("probability", 1.0)):
                strings.append(PlantedString(row["text"], row["region"], bool(row.get("utf16", False))))
        cert = None
        if rng.random() < self.certificate_probability:
            cert = self.certificate_oids
        hi = min(self.imports_max, len(self.import_pool))
        k = rng.randint(min(self.imports_min, hi), hi)
        idx = sorted(rng.sample(range(len(self.import_pool)), k))
        imports = tuple(self.import_pool[i] for i in idx)
        return ForgeSpec(
            label=label,
            packed=packed,
            include_rich_header=self.include_rich_header,
            planted_strings=tuple(strings),
            planted_certificate=cert,
            import_set=imports,
            code_template_seed=derive_seed(seed, "code"),
            pack_transform=self.pack_transform,
            seed=seed,
            text_size=rng.randint(*self.text_size),
            rdata_size=rng.randint(*self.rdata_size),
            rsrc_size=rng.randint(*self.rsrc_size),
            overlay_extra=rng.randint(*self.overlay_extra),
        )


@dataclass(frozen=True)
class CorpusSpec:
    counts: dict[str, int]  # per category
    profiles: dict[str, CategoryProfile]
    seed: int

    def validate(self) -> None:
        total = 0
        for cat, n in self.counts.items():
            if cat not in CATEGORIES:
                raise ConfigError(f"unknown category {cat!r}")
            if n < 0:
                raise ConfigError("category counts must be >= 0")
            total += n
            if n > 0 and cat not in self.profiles:
                raise ConfigError(f"no profile for category {cat}")
        if total < 1:
            raise ConfigError("corpus must contain at least one sample")

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusSpec":
        try:
            counts = {c: int(raw.get("counts", {}).get(c, 0)) for c in CATEGORIES}
            profiles = {
                cat: CategoryProfile.from_dict(p) for cat, p in raw.get("profiles", {}).items()
            }
            spec = cls(counts=counts, profiles=profiles, seed=int(raw["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad corpus spec: {exc}") from exc
        spec.validate()
        return spec


_CAT_FLAGS = {"UB": ("benign", False), "PB": ("benign", True),
              "UM": ("malicious", False), "PM": ("malicious", True)}


def build_corpus(spec: CorpusSpec, out_dir: str | Path, workers: int = 1) -> CorpusManifest:
    """Forge a corpus to disk: one file per sample, manifest.json, and
    forge_records.json with the planted-artifact offsets. Byte-identical
    output for a given master seed, regardless of worker count."""
    spec.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc

    jobs = []
    for cat in CATEGORIES:
        label, packed = _CAT_FLAGS[cat]
        for i in range(spec.counts.get(cat, 0)):
            sample_id = f"{cat.lower()}_{i:04d}"
            sample_seed = derive_seed(spec.seed, cat, i)
            jobs.append((sample_id, cat, label, packed, sample_seed))

    def forge_one(job: tuple) -> tuple[str, str, bytes, ForgeRecord]:
        sample_id, cat, label, packed, sample_seed = job
        fs = spec.profiles[cat].resolve(label, packed, sample_seed)
        data, record = forge_pe(fs)
        return sample_id, cat, data, record

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(forge_one, jobs))
    else:
        results = [forge_one(j) for j in jobs]

    entries = []
    records = {}
    for sample_id, cat, data, record in results:
        label, packed = _CAT_FLAGS[cat]
        rel_path = f"{sample_id}.exe"
        try:
            (out_dir / rel_path).write_bytes(data)
        except OSError as exc:
            raise IoFailure(f"cannot write {out_dir / rel_path}: {exc}") from exc
        entries.append(ManifestEntry(
            sample_id=sample_id, path=rel_path, sha256=sha256_hex(data),
            label=label, packed=packed, category=cat,
        ))
        records[sample_id] = record.to_dict()

    manifest = CorpusManifest(root=out_dir, entries=entries)
    manifest.save(out_dir / "manifest.json")
    dump_json(records, out_dir / "forge_records.json")
    return manifest
