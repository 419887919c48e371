"""Minimal 32-bit x86 linear-sweep decoder.

Covers just enough of the one-byte opcode map to turn section bytes into
mnemonic streams for n-gram features: push/pop, mov, jmp/call, cmp/test,
conditional jumps, lea, add, inc/dec, xor, sar, ret, nop. Anything else
advances one byte and emits a sequence break so n-grams never span
undecoded gaps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

# Single-byte opcodes with fixed total length (opcode + immediate).
_FIXED: dict[int, tuple[str, int]] = {
    0x68: ("push", 5),  # push imm32
    0x6A: ("push", 2),  # push imm8
    0xEB: ("jmp", 2),   # jmp rel8
    0xE9: ("jmp", 5),   # jmp rel32
    0xE8: ("call", 5),  # call rel32
    0x74: ("je", 2),
    0x75: ("jne", 2),
    0xC3: ("ret", 1),
    0x90: ("nop", 1),
}
for _r in range(8):
    _FIXED[0x40 + _r] = ("inc", 1)
    _FIXED[0x48 + _r] = ("dec", 1)
    _FIXED[0x50 + _r] = ("push", 1)
    _FIXED[0x58 + _r] = ("pop", 1)
    _FIXED[0xB8 + _r] = ("mov", 5)  # mov r32, imm32
del _r

# Opcodes followed by a ModRM byte (plus SIB/displacement as encoded).
_MODRM: dict[int, str] = {
    0x01: "add",
    0x03: "add",
    0x31: "xor",
    0x33: "xor",
    0x39: "cmp",
    0x3B: "cmp",
    0x84: "test",
    0x85: "test",
    0x88: "mov",
    0x89: "mov",
    0x8A: "mov",
    0x8B: "mov",
    0x8D: "lea",
}

# Group opcodes where the ModRM reg field selects the operation.
_GROUP_83 = {0: "add", 7: "cmp"}  # + imm8
_GROUP_C1 = {7: "sar"}  # + imm8


@dataclass(frozen=True)
class Instruction:
    offset: int
    mnemonic: str
    length: int


def _modrm_length(code: bytes, pos: int) -> int | None:
    """Total length of ModRM + SIB + displacement starting at pos, or None
    when the buffer is too short."""
    if pos >= len(code):
        return None
    modrm = code[pos]
    mod = modrm >> 6
    rm = modrm & 0x07
    length = 1
    if mod == 0b11:
        return length
    if rm == 0b100:  # SIB follows
        if pos + 1 >= len(code):
            return None
        length += 1
        if mod == 0b00 and (code[pos + 1] & 0x07) == 0b101:
            length += 4  # SIB with disp32 base
    if mod == 0b00 and rm == 0b101:
        length += 4
    elif mod == 0b01:
        length += 1
    elif mod == 0b10:
        length += 4
    if pos + length > len(code):
        return None
    return length


def _decode_at(code: bytes, pos: int) -> Instruction | None:
    """Decode one instruction at pos, or None when unsupported/truncated."""
    op = code[pos]
    fixed = _FIXED.get(op)
    if fixed is not None:
        mnemonic, length = fixed
        if pos + length <= len(code):
            return Instruction(pos, mnemonic, length)
        return None
    if op in _MODRM:
        mlen = _modrm_length(code, pos + 1)
        if mlen is not None:
            return Instruction(pos, _MODRM[op], 1 + mlen)
        return None
    if op in (0x83, 0xC1):
        if pos + 1 >= len(code):
            return None
        reg = (code[pos + 1] >> 3) & 0x07
        table = _GROUP_83 if op == 0x83 else _GROUP_C1
        mnemonic = table.get(reg)
        if mnemonic is None:
            return None
        mlen = _modrm_length(code, pos + 1)
        if mlen is not None and pos + 1 + mlen + 1 <= len(code):
            return Instruction(pos, mnemonic, 1 + mlen + 1)
        return None
    if op == 0xC7:  # mov rm32, imm32
        mlen = _modrm_length(code, pos + 1)
        if mlen is not None and pos + 1 + mlen + 4 <= len(code):
            return Instruction(pos, "mov", 1 + mlen + 4)
        return None
    if op == 0x0F:  # two-byte: only je/jne rel32
        if pos + 6 <= len(code) and code[pos + 1] in (0x84, 0x85):
            return Instruction(pos, "je" if code[pos + 1] == 0x84 else "jne", 6)
        return None
    return None


def linear_sweep(code: bytes, start: int = 0) -> Iterator[Instruction | None]:
    """Sweep from start, yielding Instructions; None marks a decode break
    (one undecodable byte skipped). Consecutive breaks collapse to one."""
    pos = start
    in_break = False
    while pos < len(code):
        ins = _decode_at(code, pos)
        if ins is None:
            if not in_break:
                yield None
                in_break = True
            pos += 1
        else:
            in_break = False
            yield ins
            pos += ins.length


def decode_opcodes(code: bytes, start: int = 0) -> list[str | None]:
    """Mnemonic stream with None entries marking sequence breaks."""
    return [ins.mnemonic if ins is not None else None for ins in linear_sweep(code, start)]


def decodes_fully(pattern: bytes) -> bool:
    """True when the pattern is wholly consumed by supported instructions,
    with no breaks and no trailing partial instruction."""
    if not pattern:
        return False
    pos = 0
    while pos < len(pattern):
        ins = _decode_at(pattern, pos)
        if ins is None:
            return False
        pos += ins.length
    return pos == len(pattern)


def token_ngrams(tokens: list[str | None], n: int) -> Iterator[tuple[str, ...]]:
    """Contiguous mnemonic n-grams, never spanning a break."""
    run: list[str] = []
    for tok in tokens:
        if tok is None:
            run.clear()
            continue
        run.append(tok)
        if len(run) >= n:
            yield tuple(run[-n:])


def instruction_ngram_offsets(
    instructions: list[Instruction | None], grams: tuple[str, ...]
) -> list[int]:
    """Offsets of the first instruction of every occurrence of a mnemonic
    n-gram in a sweep, respecting breaks."""
    n = len(grams)
    out: list[int] = []
    run: list[Instruction] = []
    for ins in instructions:
        if ins is None:
            run.clear()
            continue
        run.append(ins)
        if len(run) >= n and tuple(i.mnemonic for i in run[-n:]) == grams:
            out.append(run[-n].offset)
    return out
