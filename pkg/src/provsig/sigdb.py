"""On-disk signature database.

A database is a directory of ``*.sig`` text files.  Each file binds a
package name and version to its signatures:

    provsig 1
    package GNU Compiler Collection
    version 4.4.3
    crtbegin.o:.text:text:hex:4883ec08??48{5}c3
    libfoo.so.1:.text:dynlib:md5:9e107d9d372bb6826bd81d3542a419d6:4096

Line 1 is the format magic.  Header lines are ``key value`` pairs;
``package`` and ``version`` are mandatory, unknown keys are ignored.
Every other non-blank, non-``#`` line is one signature:
``name:target:kind:payload`` with target in {text, comment, dynlib} and
kind in {hex, md5}.  A hex payload is lowercase hex pairs with ``??``
and ``{n}`` inline; an md5 payload is ``digest:textsize``.  Signature
lines are parsed right-anchored on the fixed kind/target vocabulary, so
generated names containing colons round-trip.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from provsig.siggen import (
    KIND_HEX,
    KIND_MD5,
    TARGET_COMMENT,
    TARGET_DYNLIB,
    TARGET_TEXT,
    PatternSyntaxError,
    Signature,
    parse_pattern_text,
    pattern_to_text,
)

MAGIC_LINE = "provsig 1"

_HEX_TARGETS = (TARGET_TEXT, TARGET_COMMENT)
_MD5_DIGEST_LEN = 32


class MalformedSigFile(ValueError):
    """Signature file that does not follow the format."""


class EmptyDatabase(ValueError):
    """Database directory from which nothing loaded."""


@dataclass(frozen=True)
class SignatureFile:
    """Signatures from one compiler/library, annotated with its identity."""

    package: str
    version: str
    signatures: tuple[Signature, ...]


@dataclass(frozen=True)
class Database:
    """All loaded signature files with dense, load-stable signature ids."""

    files: tuple[SignatureFile, ...]
    index: tuple[tuple[int, int], ...]  # signature_id -> (file idx, sig idx)
    warnings: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.index)

    def signature(self, signature_id: int) -> Signature:
        file_idx, sig_idx = self.index[signature_id]
        return self.files[file_idx].signatures[sig_idx]

    def owner(self, signature_id: int) -> SignatureFile:
        return self.files[self.index[signature_id][0]]

    def iter_signatures(self):
        for sig_id, (file_idx, sig_idx) in enumerate(self.index):
            yield sig_id, self.files[file_idx].signatures[sig_idx], self.files[file_idx]


def _check_writable(sf: SignatureFile) -> None:
    if not sf.package:
        raise ValueError("package name must be non-empty")
    for field in (sf.package, sf.version):
        if any(c in field for c in "\r\n") or ":" in field:
            raise ValueError(f"package/version may not contain colons or newlines: {field!r}")
    seen: set[str] = set()
    for sig in sf.signatures:
        if not sig.name or any(c in sig.name for c in "\r\n") or sig.name.startswith("#"):
            raise ValueError(f"bad signature name {sig.name!r}")
        if sig.name in seen:
            raise ValueError(f"duplicate signature name {sig.name!r}")
        seen.add(sig.name)
        if sig.kind == KIND_MD5 and sig.target != TARGET_DYNLIB:
            raise ValueError(f"md5 signature {sig.name!r} must target dynlib")
        if sig.kind == KIND_HEX and sig.target not in _HEX_TARGETS:
            raise ValueError(f"hex signature {sig.name!r} must target text or comment")


def write_sigfile(sf: SignatureFile, destination=None) -> bytes:
    """Serialize a signature file; optionally write it to ``destination``."""
    _check_writable(sf)
    lines = [MAGIC_LINE, f"package {sf.package}", f"version {sf.version}"]
    for sig in sf.signatures:
        if sig.kind == KIND_HEX:
            lines.append(f"{sig.name}:{sig.target}:hex:{pattern_to_text(sig.pattern)}")
        else:
            lines.append(f"{sig.name}:{sig.target}:md5:{sig.digest}:{sig.text_size}")
    blob = ("\n".join(lines) + "\n").encode("utf-8")
    if destination is not None:
        Path(destination).write_bytes(blob)
    return blob


def parse_sigfile(data: bytes) -> SignatureFile:
    """Inverse of :func:`write_sigfile`."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedSigFile("not UTF-8 text") from exc
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC_LINE:
        raise MalformedSigFile("missing 'provsig 1' magic line")

    package: str | None = None
    version: str | None = None
    signatures: list[Signature] = []
    names: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if ":" not in line:
            key, _, value = line.partition(" ")
            if key == "package":
                package = value
            elif key == "version":
                version = value
            continue  # unknown header keys are ignored
        sig = _parse_signature_line(line, lineno)
        if sig.name in names:
            raise MalformedSigFile(f"line {lineno}: duplicate signature name {sig.name!r}")
        names.add(sig.name)
        signatures.append(sig)

    if package is None or not package:
        raise MalformedSigFile("missing package key")
    if version is None:
        raise MalformedSigFile("missing version key")
    return SignatureFile(package=package, version=version, signatures=tuple(signatures))


def _parse_signature_line(line: str, lineno: int) -> Signature:
    fields = line.split(":")
    if len(fields) >= 4 and fields[-2] == KIND_HEX:
        name = ":".join(fields[:-3])
        target = fields[-3]
        if target not in _HEX_TARGETS:
            raise MalformedSigFile(f"line {lineno}: bad hex target {target!r}")
        try:
            pattern = parse_pattern_text(fields[-1])
        except PatternSyntaxError as exc:
            raise MalformedSigFile(f"line {lineno}: {exc}") from exc
        if not name:
            raise MalformedSigFile(f"line {lineno}: empty signature name")
        return Signature(name=name, target=target, kind=KIND_HEX, pattern=pattern)
    if len(fields) >= 5 and fields[-3] == KIND_MD5:
        name = ":".join(fields[:-4])
        target = fields[-4]
        digest = fields[-2]
        size_text = fields[-1]
        if target != TARGET_DYNLIB:
            raise MalformedSigFile(f"line {lineno}: bad md5 target {target!r}")
        if len(digest) != _MD5_DIGEST_LEN or any(c not in "0123456789abcdef" for c in digest):
            raise MalformedSigFile(f"line {lineno}: bad md5 digest {digest!r}")
        if not size_text.isdigit():
            raise MalformedSigFile(f"line {lineno}: bad text size {size_text!r}")
        if not name:
            raise MalformedSigFile(f"line {lineno}: empty signature name")
        return Signature(name=name, target=target, kind=KIND_MD5,
                         digest=digest, text_size=int(size_text))
    raise MalformedSigFile(f"line {lineno}: unrecognized signature line")


def load_db(directory) -> Database:
    """Load every ``*.sig`` file in the directory, sorted by file name.

    Corrupt files are skipped with a warning so one bad entry cannot
    take an audit down; the load fails only when nothing loads at all.
    """
    root = Path(directory)
    files: list[SignatureFile] = []
    warnings: list[str] = []
    for path in sorted(root.glob("*.sig"), key=lambda p: p.name):
        try:
            files.append(parse_sigfile(path.read_bytes()))
        except (MalformedSigFile, OSError) as exc:
            warnings.append(f"{path.name}: {exc}")
    if not files:
        detail = f" ({len(warnings)} file(s) failed to parse)" if warnings else ""
        raise EmptyDatabase(f"no signature files loaded from {root}{detail}")
    index = [(file_idx, sig_idx)
             for file_idx, sf in enumerate(files)
             for sig_idx in range(len(sf.signatures))]
    return Database(files=tuple(files), index=tuple(index), warnings=tuple(warnings))
