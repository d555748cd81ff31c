"""ELF note section embedding for manifest identifiers.

The identifier of an output's input manifest travels inside the output
itself as a ``.note.omnibor`` section: type SHT_NOTE, flags SHF_ALLOC
(so strip keeps it), containing one standard note entry per hash
algorithm.  Each entry is the usual note wire format, 4-byte aligned:

    namesz=8 | descsz=20 or 32 | type | "OMNIBOR\\0" | digest bytes

with type 1 for sha1 and type 2 for sha256 and entries always in that
order.  The dual-algorithm payload is 40 + 52 = 92 bytes.

Embedding rewrites as little of the file as possible: the payload (and
a relocated .shstrtab when its tail cannot grow) is placed in file
regions covered by no header, section, or segment, and the section
header table extends in place when its tail is the end of the file.  On
linker output the usual cost is one section header's worth of growth.
Program headers are never touched, so runtime behavior is unchanged.

Only little-endian ELF32/ELF64 is supported.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .errors import ElfFormatError
from .gitoid import BOTH_ALGORITHMS, ArtifactId, HashAlgorithm

SECTION_NAME = ".note.omnibor"
NOTE_OWNER = b"OMNIBOR\x00"

NT_GITOID_SHA1 = 1
NT_GITOID_SHA256 = 2

SHT_NOTE = 7
SHT_NOBITS = 8
SHT_REL = 9
SHT_RELA = 4
SHT_GROUP = 17
SHF_ALLOC = 0x2

ET_REL = 1
ET_EXEC = 2
ET_DYN = 3

_NOTE_TYPE_OF_ALGO = {
    HashAlgorithm.SHA1: NT_GITOID_SHA1,
    HashAlgorithm.SHA256: NT_GITOID_SHA256,
}
_ALGO_OF_NOTE_TYPE = {v: k for k, v in _NOTE_TYPE_OF_ALGO.items()}


def _align4(value: int) -> int:
    return (value + 3) & ~3


def build_note_payload(ids: Mapping[HashAlgorithm, ArtifactId]) -> bytes:
    """Serialize note entries, sha1 first, one per supplied algorithm."""
    if not ids:
        raise ValueError("no identifiers to embed")
    out = bytearray()
    for algo in BOTH_ALGORITHMS:
        artifact_id = ids.get(algo)
        if artifact_id is None:
            continue
        if artifact_id.algorithm is not algo:
            raise ValueError("id under %s key has algorithm %s"
                             % (algo.value, artifact_id.algorithm.value))
        out += struct.pack("<III", len(NOTE_OWNER), len(artifact_id.digest),
                           _NOTE_TYPE_OF_ALGO[algo])
        out += NOTE_OWNER
        out += artifact_id.digest
        # owner is 8 bytes and digests are 20/32: already 4-byte aligned
    return bytes(out)


def parse_note_stream(data: bytes) -> Dict[HashAlgorithm, ArtifactId]:
    """Walk one note stream, returning OMNIBOR-owned entries.

    Unknown owners are skipped.  Unknown entry types under the OMNIBOR
    owner are admitted by descriptor size (20 -> sha1, 32 -> sha256) and
    skipped otherwise, keeping the stream extensible.  Truncation raises.
    """
    found: Dict[HashAlgorithm, ArtifactId] = {}
    offset = 0
    while offset < len(data):
        if offset + 12 > len(data):
            raise ElfFormatError("truncated note header at offset %d" % offset)
        namesz, descsz, ntype = struct.unpack_from("<III", data, offset)
        offset += 12
        name_end = offset + namesz
        desc_start = _align4(name_end)
        desc_end = desc_start + descsz
        if desc_end > len(data):
            raise ElfFormatError("truncated note entry at offset %d" % offset)
        name = data[offset:name_end]
        desc = data[desc_start:desc_end]
        offset = _align4(desc_end)
        if name != NOTE_OWNER:
            continue
        algo = _ALGO_OF_NOTE_TYPE.get(ntype)
        if algo is None:
            if descsz == 20:
                algo = HashAlgorithm.SHA1
            elif descsz == 32:
                algo = HashAlgorithm.SHA256
            else:
                continue
        if len(desc) != algo.digest_size:
            raise ElfFormatError(
                "note descriptor is %d bytes, expected %d for %s"
                % (len(desc), algo.digest_size, algo.value))
        found[algo] = ArtifactId(algo, bytes(desc))
    return found


# -- minimal ELF model ----------------------------------------------------


@dataclass
class _Section:
    name_off: int
    sh_type: int
    flags: int
    addr: int
    offset: int
    size: int
    link: int
    info: int
    addralign: int
    entsize: int
    name: str = ""


class _Elf:
    """Little-endian ELF image parsed just far enough for note surgery."""

    def __init__(self, data: bytes):
        if len(data) < 52 or data[:4] != b"\x7fELF":
            raise ElfFormatError("not an ELF image")
        ei_class, ei_data = data[4], data[5]
        if ei_data != 1:
            raise ElfFormatError("only little-endian ELF is supported")
        if ei_class == 1:
            self.is64 = False
            self.ehdr_fmt = "<16sHHIIIIIHHHHHH"
            self.shdr_fmt = "<IIIIIIIIII"
            self.phdr_layout = "<IIIIIIII"  # type, offset, vaddr, paddr, filesz, memsz, flags, align
        elif ei_class == 2:
            self.is64 = True
            self.ehdr_fmt = "<16sHHIQQQIHHHHHH"
            self.shdr_fmt = "<IIQQQQIIQQ"
            self.phdr_layout = "<IIQQQQQQ"  # type, flags, offset, vaddr, paddr, filesz, memsz, align
        else:
            raise ElfFormatError("bad EI_CLASS %d" % ei_class)
        self.data = bytearray(data)
        header = struct.unpack_from(self.ehdr_fmt, data, 0)
        (_, self.e_type, _, _, _, self.e_phoff, self.e_shoff, _, self.e_ehsize,
         self.e_phentsize, self.e_phnum, self.e_shentsize, self.e_shnum,
         self.e_shstrndx) = header
        if self.e_shoff == 0 or self.e_shnum == 0:
            raise ElfFormatError("no section header table")
        if self.e_shnum >= 0xff00 or self.e_shstrndx >= 0xff00:
            raise ElfFormatError("extended section numbering is not supported")
        if self.e_shstrndx >= self.e_shnum:
            raise ElfFormatError("e_shstrndx out of range")
        expected_entsize = 64 if self.is64 else 40
        if self.e_shentsize != expected_entsize:
            raise ElfFormatError("unexpected e_shentsize %d" % self.e_shentsize)
        table_end = self.e_shoff + self.e_shnum * self.e_shentsize
        if table_end > len(data):
            raise ElfFormatError("section header table extends past EOF")
        self.sections: List[_Section] = []
        for i in range(self.e_shnum):
            fields = struct.unpack_from(self.shdr_fmt, data, self.e_shoff + i * self.e_shentsize)
            self.sections.append(_Section(*fields))
        shstr = self.sections[self.e_shstrndx]
        if shstr.offset + shstr.size > len(data):
            raise ElfFormatError(".shstrtab extends past EOF")
        strtab = bytes(data[shstr.offset:shstr.offset + shstr.size])
        for section in self.sections:
            if section.name_off < len(strtab):
                end = strtab.find(b"\x00", section.name_off)
                if end == -1:
                    end = len(strtab)
                section.name = strtab[section.name_off:end].decode("latin-1")

    def shstrtab(self) -> _Section:
        return self.sections[self.e_shstrndx]

    def shstrtab_bytes(self) -> bytes:
        section = self.shstrtab()
        return bytes(self.data[section.offset:section.offset + section.size])

    def segments(self) -> List[Tuple[int, int]]:
        extents = []
        for i in range(self.e_phnum):
            fields = struct.unpack_from(self.phdr_layout, self.data,
                                        self.e_phoff + i * self.e_phentsize)
            if self.is64:
                offset, filesz = fields[2], fields[5]
            else:
                offset, filesz = fields[1], fields[4]
            if filesz:
                extents.append((offset, offset + filesz))
        return extents

    def pack_shdr(self, section: _Section) -> bytes:
        return struct.pack(self.shdr_fmt, section.name_off, section.sh_type,
                           section.flags, section.addr, section.offset,
                           section.size, section.link, section.info,
                           section.addralign, section.entsize)

    def write_shdr(self, index: int, section: _Section) -> None:
        self.data[self.e_shoff + index * self.e_shentsize:
                  self.e_shoff + (index + 1) * self.e_shentsize] = self.pack_shdr(section)

    def write_ehdr_counts(self) -> None:
        # e_shoff / e_shnum / e_shstrndx live at fixed offsets per class
        if self.is64:
            struct.pack_into("<Q", self.data, 0x28, self.e_shoff)
            struct.pack_into("<HH", self.data, 0x3C, self.e_shnum, self.e_shstrndx)
        else:
            struct.pack_into("<I", self.data, 0x20, self.e_shoff)
            struct.pack_into("<HH", self.data, 0x30, self.e_shnum, self.e_shstrndx)


class _Allocator:
    """Tracks used byte ranges of a file so new data can land in holes
    covered by no header, section, segment, or prior allocation."""

    def __init__(self, elf: _Elf):
        self.length = len(elf.data)
        used = [(0, elf.e_ehsize)]
        if elf.e_phnum:
            used.append((elf.e_phoff, elf.e_phoff + elf.e_phnum * elf.e_phentsize))
        used.append((elf.e_shoff, elf.e_shoff + elf.e_shnum * elf.e_shentsize))
        for section in elf.sections:
            if section.sh_type not in (0, SHT_NOBITS) and section.size:
                used.append((section.offset, section.offset + section.size))
        used.extend(elf.segments())
        self.used: List[Tuple[int, int]] = []
        for start, end in sorted(used):
            if self.used and start <= self.used[-1][1]:
                last_start, last_end = self.used[-1]
                self.used[-1] = (last_start, max(last_end, end))
            else:
                self.used.append((start, end))

    def is_free(self, start: int, size: int) -> bool:
        end = start + size
        for used_start, used_end in self.used:
            if used_start < end and start < used_end:
                return False
        return True

    def reserve(self, start: int, size: int) -> None:
        self.used.append((start, start + size))
        self.used.sort()
        self.length = max(self.length, start + size)

    def allocate(self, size: int, align: int) -> int:
        """First-fit: the lowest aligned hole inside the file, else the end
        of the file (possibly padded for alignment)."""
        candidates = [0] + [end for _, end in self.used]
        for candidate in sorted(candidates):
            start = -(-candidate // align) * align
            if start + size <= self.length and self.is_free(start, size):
                self.reserve(start, size)
                return start
        start = -(-self.length // align) * align
        while not self.is_free(start, size):
            start += align
        self.reserve(start, size)
        return start


def _splice(data: bytearray, offset: int, blob: bytes) -> None:
    if offset > len(data):
        data.extend(b"\x00" * (offset - len(data)))
    end = offset + len(blob)
    if end > len(data):
        data.extend(b"\x00" * (end - len(data)))
    data[offset:end] = blob


def _find_name_offset(strtab: bytes, name: bytes) -> Optional[int]:
    """Offset of `name` as a NUL-terminated string inside the table (a
    suffix of a longer entry works: sh_name may point mid-string)."""
    index = strtab.find(name + b"\x00")
    return None if index == -1 else index


def _remove_section(elf: _Elf, index: int) -> None:
    """Drop section header `index`, shifting later headers down and fixing
    every index-valued field that pointed past it."""
    del elf.sections[index]
    elf.e_shnum -= 1
    if elf.e_shstrndx > index:
        elf.e_shstrndx -= 1
    for section in elf.sections:
        if section.link > index:
            section.link -= 1
        elif section.link == index:
            section.link = 0
        if section.sh_type in (SHT_REL, SHT_RELA, SHT_GROUP) and section.info > index:
            section.info -= 1
    table = bytearray()
    for section in elf.sections:
        table += elf.pack_shdr(section)
    # stale trailing entry bytes are dead; zero them for tidiness
    _splice(elf.data, elf.e_shoff, bytes(table) + b"\x00" * elf.e_shentsize)
    elf.write_ehdr_counts()


def embed_elf(
    data: bytes,
    ids: Mapping[HashAlgorithm, ArtifactId],
    replace: bool = False,
) -> bytes:
    """Return a copy of `data` carrying a .note.omnibor section for `ids`.

    A pre-existing .note.omnibor section is an error unless `replace` is
    set; replacing a same-sized payload rewrites it in place, otherwise
    the old section header is removed and a fresh one added.
    """
    elf = _Elf(data)
    payload = build_note_payload(ids)

    existing = [i for i, s in enumerate(elf.sections) if s.name == SECTION_NAME]
    if existing and not replace:
        raise ElfFormatError("image already has a %s section" % SECTION_NAME)
    if existing and replace:
        same_size = [i for i in existing if elf.sections[i].size == len(payload)]
        if len(existing) == 1 and same_size:
            index = same_size[0]
            _splice(elf.data, elf.sections[index].offset, payload)
            return bytes(elf.data)
        for index in reversed(existing):
            _remove_section(elf, index)

    allocator = _Allocator(elf)

    # claim the table extension first: when the table tail is the end of
    # the file (the usual linker layout), growing it by one entry must
    # happen before anything else is appended there
    table_end = elf.e_shoff + elf.e_shnum * elf.e_shentsize
    extend_table = allocator.is_free(table_end, elf.e_shentsize)
    new_shoff = elf.e_shoff
    if extend_table:
        allocator.reserve(table_end, elf.e_shentsize)

    payload_off = allocator.allocate(len(payload), 4)

    strtab = elf.shstrtab_bytes()
    name_off = _find_name_offset(strtab, SECTION_NAME.encode("ascii"))
    shstr = elf.shstrtab()
    new_strtab: Optional[bytes] = None
    strtab_off = shstr.offset
    if name_off is None:
        name_off = len(strtab)
        new_strtab = strtab + SECTION_NAME.encode("ascii") + b"\x00"
        if allocator.is_free(shstr.offset + shstr.size, len(new_strtab) - len(strtab)):
            allocator.reserve(shstr.offset + shstr.size, len(new_strtab) - len(strtab))
        else:
            strtab_off = allocator.allocate(len(new_strtab), 1)

    if not extend_table:
        new_shoff = allocator.allocate((elf.e_shnum + 1) * elf.e_shentsize,
                                       8 if elf.is64 else 4)

    note = _Section(name_off=name_off, sh_type=SHT_NOTE, flags=SHF_ALLOC,
                    addr=0, offset=payload_off, size=len(payload),
                    link=0, info=0, addralign=4, entsize=0)

    _splice(elf.data, payload_off, payload)
    if new_strtab is not None:
        _splice(elf.data, strtab_off, new_strtab)
        shstr.offset = strtab_off
        shstr.size = len(new_strtab)
    elf.sections.append(note)
    elf.e_shnum += 1
    elf.e_shoff = new_shoff
    table = bytearray()
    for section in elf.sections:
        table += elf.pack_shdr(section)
    _splice(elf.data, new_shoff, bytes(table))
    elf.write_ehdr_counts()
    return bytes(elf.data)


def extract_elf(data: bytes) -> Dict[HashAlgorithm, ArtifactId]:
    """Collect OMNIBOR note entries from every SHT_NOTE section.

    Returns an empty mapping when none are present.  Images without a
    section table (or not ELF at all) raise ElfFormatError.
    """
    elf = _Elf(data)
    found: Dict[HashAlgorithm, ArtifactId] = {}
    for section in elf.sections:
        if section.sh_type != SHT_NOTE:
            continue
        if section.offset + section.size > len(elf.data):
            raise ElfFormatError("note section extends past EOF")
        stream = bytes(elf.data[section.offset:section.offset + section.size])
        found.update(parse_note_stream(stream))
    return found


def is_elf(data: bytes) -> bool:
    return len(data) >= 16 and data[:4] == b"\x7fELF"


def elf_file_type(data: bytes) -> Optional[int]:
    """e_type of an ELF image (ET_REL/ET_EXEC/ET_DYN...), None if not ELF."""
    if not is_elf(data) or len(data) < 18:
        return None
    return struct.unpack_from("<H", data, 16)[0]
