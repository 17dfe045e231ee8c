"""elf module: parsing of ELF files, relocations, comments and archives."""

from __future__ import annotations

import shutil
import string
import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provsig import elf
from provsig.elf import (
    MalformedArchive,
    MalformedElf,
    UnsupportedElf,
    get_section,
    list_text_sections,
    parse_archive,
    parse_comment,
    parse_elf,
    parse_relocations,
)

from elfwriter import (
    EM_386,
    R_386_PC32,
    R_X86_64_64,
    R_X86_64_PC32,
    SHT_NOBITS,
    SHT_STRTAB,
    Sec,
    build_archive,
    build_elf,
    build_executable,
    build_object,
    build_shared_lib,
)

# 24-byte function body: prologue, a call whose 4 operand bytes the
# linker patches (offset 0xe), epilogue.
CALL_STUB_TEXT = bytes.fromhex(
    "554889e54883ec10bf0a000000e800000000488945f8c9c3")
CALL_STUB_RELOC_OFFSET = 0x0E


def test_magic_accepted_and_rejected():
    image = parse_elf(build_elf([Sec(".text", b"\x90" * 4)]))
    assert image.elf_class == "ELF64"
    with pytest.raises(MalformedElf):
        parse_elf(b"\x4d\x5a" + b"\x00" * 62)
    with pytest.raises(MalformedElf):
        parse_elf(b"")


def test_big_endian_and_unknown_class_rejected():
    data = bytearray(build_elf([Sec(".text", b"\x90" * 4)]))
    data[5] = 2  # big-endian
    with pytest.raises(UnsupportedElf):
        parse_elf(bytes(data))
    data[5] = 1
    data[4] = 9  # nonsense class
    with pytest.raises(UnsupportedElf):
        parse_elf(bytes(data))


def test_zero_sections():
    import struct
    header = struct.pack("<4sBBBBB7xHHIQQQIHHHHHH", b"\x7fELF", 2, 1, 1, 0, 0,
                         1, 62, 1, 0, 0, 0, 0, 64, 0, 0, 64, 0, 0)
    image = parse_elf(header)
    assert image.sections == ()


def test_truncated_section_table():
    data = build_elf([Sec(".text", b"\x90" * 4)])
    with pytest.raises(MalformedElf):
        parse_elf(data[:-10])


def test_shared_lib_sections_all_retrievable():
    data = build_shared_lib(text=b"\xcc" * 24, comment=b"vendor\x00",
                            versions=["GLIBC_2.0"])
    image = parse_elf(data)
    for name in (".text", ".comment", ".dynamic", ".gnu.version_d"):
        section = get_section(image, name)
        assert section is not None, name
    assert get_section(image, ".text").data == b"\xcc" * 24
    assert not image.is_relocatable


def test_get_section_missing_is_none():
    image = parse_elf(build_elf([Sec(".text", b"\x90" * 24)]))
    assert get_section(image, ".missing") is None


def test_dynamic_needed_empty_without_dynamic_section():
    image = parse_elf(build_elf([Sec(".text", b"\x90" * 24)]))
    assert image.dynamic_needed == ()
    linked = parse_elf(build_executable(b"\x90" * 8, needed=["libm.so.6", "libc.so.6"]))
    assert linked.dynamic_needed == ("libm.so.6", "libc.so.6")


def test_comment_survives_symtab_removal():
    stripped = build_executable(b"\x90" * 32, comment=b"CC 1.0\x00",
                                with_symtab=False)
    image = parse_elf(stripped)
    assert get_section(image, ".comment") is not None
    assert get_section(image, ".symtab") is None


def test_duplicate_section_names_first_wins_and_index_access():
    data = build_elf([Sec(".text", b"\xaa" * 8), Sec(".text", b"\xbb" * 8)])
    image = parse_elf(data)
    assert get_section(image, ".text").data == b"\xaa" * 8
    bodies = [s.data for s in image.sections if s.name == ".text"]
    assert bodies == [b"\xaa" * 8, b"\xbb" * 8]


def test_nobits_section_has_no_bytes():
    data = build_elf([Sec(".bss", sh_type=SHT_NOBITS, nobits_size=128),
                      Sec(".text", b"\x90" * 16)])
    image = parse_elf(data)
    assert get_section(image, ".bss").data == b""


def test_round_trip_section_names_sizes_bytes():
    specs = [(".text", b"\x11" * 5), (".data", b"\x22" * 9),
             (".comment", b"x\x00"), (".note.weird", b"")]
    image = parse_elf(build_elf([Sec(n, d) for n, d in specs]))
    recovered = [(s.name, s.data) for s in image.sections
                 if s.name not in ("", ".shstrtab")]
    assert recovered == specs


@settings(max_examples=100)
@given(st.lists(
    st.tuples(st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=10),
              st.binary(max_size=64)),
    min_size=0, max_size=8))
def test_round_trip_property(specs):
    names = [f".s{i}.{name}" for i, (name, _) in enumerate(specs)]
    image = parse_elf(build_elf([Sec(n, d) for n, (_, d) in zip(names, specs)]))
    got = [(s.name, s.data) for s in image.sections if s.name not in ("", ".shstrtab")]
    assert got == [(n, d) for n, (_, d) in zip(names, specs)]


def test_list_text_sections_order_and_filter():
    data = build_elf([Sec(".text.foo", b"\x90" * 4), Sec(".data", b"\x00" * 4),
                      Sec(".text.bar", b"\x90" * 4), Sec(".textual", b"\x90" * 4)])
    image = parse_elf(data)
    assert [s.name for s in list_text_sections(image)] == [".text.foo", ".text.bar"]


def test_list_text_sections_single_and_empty():
    single = parse_elf(build_elf([Sec(".text", b"\x90" * 4)]))
    assert [s.name for s in list_text_sections(single)] == [".text"]
    none = parse_elf(build_elf([Sec(".data", b"\x00" * 4)]))
    assert list_text_sections(none) == []


# -- relocations -----------------------------------------------------------

def test_call_stub_relocation():
    data = build_object(CALL_STUB_TEXT,
                        {".text": [(CALL_STUB_RELOC_OFFSET, R_X86_64_PC32, "malloc")]})
    image = parse_elf(data)
    entries = parse_relocations(image, ".text")
    assert len(entries) == 1
    entry = entries[0]
    assert entry.offset == 0x0E
    assert entry.reloc_type == R_X86_64_PC32
    assert entry.symbol_name == "malloc"
    assert entry.mask_len == 4
    assert not entry.clamped


def test_no_relocation_sections():
    image = parse_elf(build_object(b"\x90" * 32))
    assert parse_relocations(image, ".text") == []


def test_unknown_reloc_type_masks_eight_with_warning(caplog):
    data = build_object(b"\x90" * 32, {".text": [(4, 0x7FFF, "mystery")]})
    image = parse_elf(data)
    with caplog.at_level("WARNING", logger="provsig.elf"):
        entries = parse_relocations(image, ".text")
    assert entries[0].mask_len == 8
    assert any("unknown relocation type" in r.message for r in caplog.records)


def test_relocations_sorted_and_rel_plus_rela_merged():
    rela = build_object(b"\x90" * 64, {".text": [(40, R_X86_64_PC32, "b"),
                                                 (8, R_X86_64_64, "a")]})
    image = parse_elf(rela)
    offsets = [e.offset for e in parse_relocations(image, ".text")]
    assert offsets == sorted(offsets) == [8, 40]

    rel32 = build_object(b"\x90" * 64, {".text": [(12, R_386_PC32, "c")]},
                         bits=32, machine=EM_386, rela=False)
    image32 = parse_elf(rel32)
    entries = parse_relocations(image32, ".text")
    assert [(e.offset, e.mask_len) for e in entries] == [(12, 4)]


def test_reloc_mask_clamped_at_section_end(caplog):
    data = build_object(b"\x90" * 20, {".text": [(18, R_X86_64_PC32, "x")]})
    image = parse_elf(data)
    with caplog.at_level("WARNING", logger="provsig.elf"):
        entries = parse_relocations(image, ".text")
    assert entries[0].mask_len == 2
    assert entries[0].clamped


def test_reloc_beyond_section_dropped(caplog):
    data = build_object(b"\x90" * 20, {".text": [(64, R_X86_64_PC32, "x")]})
    image = parse_elf(data)
    with caplog.at_level("WARNING", logger="provsig.elf"):
        assert parse_relocations(image, ".text") == []


def test_reloc_type_none_skipped():
    data = build_object(b"\x90" * 32, {".text": [(4, 0, "")]})
    image = parse_elf(data)
    assert parse_relocations(image, ".text") == []


def test_reloc_masks_inside_section_property():
    data = build_object(b"\x90" * 40, {".text": [(36, R_X86_64_64, "a"),
                                                 (4, R_X86_64_PC32, "b"),
                                                 (20, R_X86_64_64, "c")]})
    image = parse_elf(data)
    entries = parse_relocations(image, ".text")
    assert [e.offset for e in entries] == sorted(e.offset for e in entries)
    for entry in entries:
        assert entry.offset + entry.mask_len <= 40


def test_relocations_require_relocatable():
    image = parse_elf(build_executable(b"\x90" * 16))
    with pytest.raises(ValueError):
        parse_relocations(image, ".text")


# -- .comment --------------------------------------------------------------

def test_comment_single_vendor_string():
    data = build_elf([Sec(".comment",
                          b"GCC: (GNU) 4.1.2 20080704 (Red Hat 4.1.2-50)\x00")])
    assert parse_comment(parse_elf(data)) == [
        "GCC: (GNU) 4.1.2 20080704 (Red Hat 4.1.2-50)"]


def test_comment_empty_strings_elided():
    data = build_elf([Sec(".comment", b"\x00\x00a\x00")])
    assert parse_comment(parse_elf(data)) == ["a"]


def test_comment_unterminated_tail_kept_and_flagged(caplog):
    data = build_elf([Sec(".comment", b"one\x00two")])
    with caplog.at_level("WARNING", logger="provsig.elf"):
        assert parse_comment(parse_elf(data)) == ["one", "two"]
    assert any("not NUL-terminated" in r.message for r in caplog.records)


def test_comment_absent_gives_empty():
    assert parse_comment(parse_elf(build_elf([Sec(".text", b"\x90")]))) == []


@settings(max_examples=100)
@given(st.lists(st.text(alphabet=string.printable.replace("\x00", ""),
                        min_size=1, max_size=20).map(lambda s: s.replace("\x00", "")),
                min_size=0, max_size=6))
def test_comment_split_round_trip(strings):
    body = b"".join(s.encode("latin-1") + b"\x00" for s in strings)
    data = build_elf([Sec(".comment", body)])
    assert parse_comment(parse_elf(data)) == strings


@pytest.mark.skipif(shutil.which("readelf") is None, reason="readelf not installed")
def test_comment_agrees_with_readelf(tmp_path):
    body = b"alpha compiler 1.0\x00beta linker 2.1\x00"
    data = build_elf([Sec(".comment", body), Sec(".text", b"\x90" * 4)])
    path = tmp_path / "sample.elf"
    path.write_bytes(data)
    output = subprocess.run(["readelf", "-p", ".comment", str(path)],
                            capture_output=True, text=True, check=True).stdout
    listed = [line.split("]", 1)[1].strip()
              for line in output.splitlines() if "]" in line]
    assert listed == parse_comment(parse_elf(data))


# -- archives ---------------------------------------------------------------

def test_archive_names_including_long_names():
    members = [("a.o", b"object-a"), ("verylongobjectfilename.o", b"object-b")]
    parsed = parse_archive(build_archive(members))
    assert [(m.name, m.data) for m in parsed] == members


def test_archive_empty():
    assert parse_archive(b"!<arch>\n") == []


def test_archive_bad_magic():
    with pytest.raises(MalformedArchive):
        parse_archive(b"!<arch>X" + b"\x00" * 8)


def test_archive_odd_size_padding():
    members = [("odd.o", b"12345"), ("next.o", b"678")]
    parsed = parse_archive(build_archive(members))
    assert [(m.name, m.data) for m in parsed] == members


def test_archive_symbol_index_skipped():
    raw = bytearray(b"!<arch>\n")
    index_body = b"\x00\x00\x00\x01junk"
    raw += ("/".ljust(16) + "0".ljust(12) + "0".ljust(6) + "0".ljust(6)
            + "0".ljust(8) + str(len(index_body)).ljust(10)).encode() + b"`\n"
    raw += index_body
    raw += build_archive([("m.o", b"body")])[8:]
    parsed = parse_archive(bytes(raw))
    assert [m.name for m in parsed] == ["m.o"]


def test_archive_truncated_member():
    data = build_archive([("a.o", b"0123456789")])
    with pytest.raises(MalformedArchive):
        parse_archive(data[:-4])


def test_archive_unresolvable_long_name():
    raw = bytearray(b"!<arch>\n")
    raw += ("/99".ljust(16) + "0".ljust(12) + "0".ljust(6) + "0".ljust(6)
            + "0".ljust(8) + "2".ljust(10)).encode() + b"`\n"
    raw += b"xy"
    with pytest.raises(MalformedArchive):
        parse_archive(bytes(raw))


def test_archive_bsd_long_names_rejected():
    raw = bytearray(b"!<arch>\n")
    raw += ("#1/20".ljust(16) + "0".ljust(12) + "0".ljust(6) + "0".ljust(6)
            + "0".ljust(8) + "24".ljust(10)).encode() + b"`\n"
    raw += b"a" * 24
    with pytest.raises(MalformedArchive):
        parse_archive(bytes(raw))


@pytest.mark.skipif(shutil.which("ar") is None, reason="ar not installed")
def test_archive_agrees_with_system_ar(tmp_path):
    contents = {"first.o": b"\x7fELF-ish", "second_object_with_long_name.o": b"abc",
                "odd.o": b"12345"}
    paths = []
    for name, data in contents.items():
        p = tmp_path / name
        p.write_bytes(data)
        paths.append(str(p))
    archive = tmp_path / "lib.a"
    subprocess.run(["ar", "rc", str(archive)] + paths, check=True,
                   capture_output=True)
    listed = subprocess.run(["ar", "t", str(archive)], check=True,
                            capture_output=True, text=True).stdout.split()
    parsed = parse_archive(archive.read_bytes())
    assert [m.name for m in parsed] == listed
    assert {m.name: m.data for m in parsed} == contents
