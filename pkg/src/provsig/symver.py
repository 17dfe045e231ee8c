"""GNU symbol-versioning extraction.

Reads the version-definition chain a shared library carries in its
``.gnu.version_d`` section and reports, for each recognized label such
as ``GLIBC`` or ``GLIBCXX``, the highest version the library defines.
Version components compare numerically, so 2.10 ranks above 2.9.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

from provsig import elf
from provsig.elf import ElfImage

# Labels used by the common adopters of the versioning scheme: the GNU
# C/C++/Fortran/OpenMP runtimes, Myrinet MX/DAPL and InfiniBand Verbs.
DEFAULT_LABELS = ("GLIBC", "GLIBCXX", "GCC", "GFORTRAN", "GOMP",
                  "MX", "DAPL", "IBVERBS")

VER_FLG_BASE = 0x1

_VERDEF_SIZE = 20
_VERDAUX_SIZE = 8


class MalformedVerdef(ValueError):
    """Version-definition records that cannot be walked safely."""


class LabelMismatch(ValueError):
    """Compared two versions of different labels."""


@dataclass(frozen=True)
class VersionDef:
    name: str
    is_base: bool


@dataclass(frozen=True)
class LabelVersion:
    label: str
    version: str
    numeric: tuple[int, ...]


def parse_verdef(image: ElfImage) -> list[VersionDef]:
    """Walk the .gnu.version_d record chain; [] when the section is absent.

    Iteration is bounded by the declared entry count (section sh_info,
    falling back to a size-derived cap) and revisited offsets abort, so
    a corrupt cyclic next-link raises instead of spinning.
    """
    section = elf.get_section(image, ".gnu.version_d")
    if section is None:
        return []
    data = section.data
    if not data:
        return []

    strtab = None
    link = section.sh_link
    if 0 < link < len(image.sections):
        strtab = image.sections[link].data
    if strtab is None:
        dynstr = elf.get_section(image, ".dynstr")
        if dynstr is None:
            raise MalformedVerdef("no string table for version names")
        strtab = dynstr.data

    declared = section.sh_info
    bound = declared if declared > 0 else len(data) // _VERDEF_SIZE
    defs: list[VersionDef] = []
    pos = 0
    for _ in range(bound):
        if pos + _VERDEF_SIZE > len(data):
            raise MalformedVerdef(f"truncated version definition at offset {pos}")
        _version, flags, _ndx, cnt, _hash, aux, nxt = struct.unpack_from("<HHHHIII", data, pos)
        if cnt < 1:
            raise MalformedVerdef(f"version definition at offset {pos} has no name record")
        aux_pos = pos + aux
        if aux_pos + _VERDAUX_SIZE > len(data):
            raise MalformedVerdef(f"bad auxiliary offset in definition at {pos}")
        name_off, _aux_next = struct.unpack_from("<II", data, aux_pos)
        if name_off >= len(strtab):
            raise MalformedVerdef(f"version name offset {name_off} out of range")
        end = strtab.find(b"\x00", name_off)
        if end == -1:
            end = len(strtab)
        name = strtab[name_off:end].decode("latin-1")
        defs.append(VersionDef(name=name, is_base=bool(flags & VER_FLG_BASE)))
        if nxt == 0:
            return defs
        pos += nxt
    raise MalformedVerdef("version definition chain exceeds declared entry count")


def split_label(def_name: str, known_labels: list[str]) -> LabelVersion | None:
    """Split ``LABEL_x.y.z`` into its parts, or None if the label is
    unknown or the version is not all-numeric."""
    for label in known_labels:
        prefix = label + "_"
        if not def_name.startswith(prefix):
            continue
        version = def_name[len(prefix):]
        components = version.split(".")
        if components and all(c.isdigit() for c in components):
            return LabelVersion(label=label, version=version,
                                numeric=tuple(int(c) for c in components))
    return None


def compare_versions(a: LabelVersion, b: LabelVersion) -> int:
    """-1/0/1 ordering of same-label versions, componentwise numeric;
    missing components count as zero (2.1 == 2.1.0)."""
    if a.label != b.label:
        raise LabelMismatch(f"{a.label} vs {b.label}")
    width = max(len(a.numeric), len(b.numeric))
    left = a.numeric + (0,) * (width - len(a.numeric))
    right = b.numeric + (0,) * (width - len(b.numeric))
    if left < right:
        return -1
    if left > right:
        return 1
    return 0


def library_versions(image: ElfImage, known_labels=DEFAULT_LABELS) -> list[LabelVersion]:
    """Highest defined version per known label, in known-label order."""
    best: dict[str, LabelVersion] = {}
    for vdef in parse_verdef(image):
        if vdef.is_base:
            continue
        parsed = split_label(vdef.name, known_labels)
        if parsed is None:
            continue
        current = best.get(parsed.label)
        if current is None or compare_versions(parsed, current) > 0:
            best[parsed.label] = parsed
    return [best[label] for label in known_labels if label in best]


def load_labels(path) -> list[str]:
    """Label list file: one label per line, blank lines and ``#`` comments
    ignored."""
    labels: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        labels.append(stripped)
    return labels
