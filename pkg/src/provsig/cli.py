"""Command-line tools.

``siggen`` builds annotated signature files from compiler/library
inputs; ``sigscan`` scans program binaries against a signature database
and reports, per package, how many signatures matched and how many
bytes they covered:

    (3 times, 6992 bytes) Intel Compiler Suite 12.0
    (2 times, 200 bytes) GCC 4.4.3

Dynamic dependencies are resolved internally against ``--search-path``
directories plus the PROVSIG_PATH environment variable; the scanner
never executes loader code on the inputs it audits.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from provsig import elf, matcher, sigdb, siggen, symver
from provsig.elf import MalformedArchive, MalformedElf, UnsupportedElf

ENV_SEARCH_PATH = "PROVSIG_PATH"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2

METHOD_SYMVER = "symver"
METHOD_MD5 = "md5"
METHOD_UNKNOWN = "unknown"


@dataclass(frozen=True)
class PackageHit:
    package: str
    version: str
    count: int
    total_bytes: int


@dataclass(frozen=True)
class DynlibFinding:
    library: str
    method: str  # symver | md5 | unknown
    name: str    # version label or package name; empty when unknown
    version: str


@dataclass
class ScanReport:
    target: str
    package_hits: list[PackageHit] = field(default_factory=list)
    dynlib_findings: list[DynlibFinding] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "package_hits": [
                {"package": h.package, "version": h.version,
                 "count": h.count, "total_bytes": h.total_bytes}
                for h in self.package_hits
            ],
            "dynlib_findings": [
                {"library": f.library, "method": f.method,
                 "name": f.name, "version": f.version}
                for f in self.dynlib_findings
            ],
            "warnings": list(self.warnings),
        }


def format_report(report: ScanReport, fmt: str) -> str:
    """Render one target's report as human-readable lines or one JSON
    document."""
    if fmt == "json":
        return json.dumps(report.to_dict())
    lines = [f"({h.count} times, {h.total_bytes} bytes) {h.package} {h.version}"
             for h in report.package_hits]
    for finding in report.dynlib_findings:
        if finding.method == METHOD_UNKNOWN:
            lines.append(f"{finding.library}: unknown")
        else:
            lines.append(f"{finding.library}: {finding.name} {finding.version} "
                         f"[{finding.method}]")
    if not lines:
        lines.append("no matches")
    return "\n".join(lines) + "\n"


def resolve_dynamic(sonames, search_paths) -> list[tuple[str, str | None]]:
    """Resolve each soname against the ordered search paths; first hit
    wins, symlinks are followed, misses are recorded as None."""
    resolved: list[tuple[str, str | None]] = []
    for soname in sonames:
        found = None
        for directory in search_paths:
            candidate = os.path.join(directory, soname)
            if os.path.isfile(candidate):
                found = candidate
                break
        resolved.append((soname, found))
    return resolved


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exception (exit code 1)."""

    def error(self, message):
        raise _UsageError(message)


def _err(message: str) -> None:
    print(message, file=sys.stderr)


# --------------------------------------------------------------------------
# siggen
# --------------------------------------------------------------------------

def _siggen_parser() -> _Parser:
    parser = _Parser(prog="siggen",
                     description="Generate a signature file from compiler/library inputs.")
    parser.add_argument("mode", choices=("obj", "lib", "comment"),
                        help="obj: text patterns from .o/.a files; "
                             "lib: MD5-of-.text from shared libraries; "
                             "comment: string patterns from .comment sections")
    parser.add_argument("inputs", nargs="+", metavar="input", help="input files")
    parser.add_argument("--package", required=True, help="package name annotation")
    parser.add_argument("--version", required=True, help="package version annotation")
    parser.add_argument("-o", "--output", required=True, help="signature file to write")
    return parser


def _unique_origin(path: str, used: dict[str, int]) -> str:
    base = os.path.basename(path)
    count = used.get(base, 0)
    used[base] = count + 1
    return base if count == 0 else f"{base}#{count + 1}"


def siggen_main(argv=None) -> int:
    parser = _siggen_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _err(f"siggen: error: {exc}")
        return EXIT_USAGE

    signatures: list[siggen.Signature] = []
    reports: list[siggen.Rejection] = []
    used_origins: dict[str, int] = {}
    for input_path in args.inputs:
        try:
            data = Path(input_path).read_bytes()
        except OSError as exc:
            _err(f"siggen: cannot read {input_path}: {exc}")
            return EXIT_INPUT
        origin = _unique_origin(input_path, used_origins)
        try:
            if args.mode == "obj":
                if data.startswith(elf.AR_MAGIC):
                    members = elf.parse_archive(data)
                    sigs, rejects = siggen.sign_archive(members, origin)
                else:
                    image = elf.parse_elf(data)
                    if not image.is_relocatable:
                        _err(f"siggen: {input_path} is not a relocatable object or archive")
                        return EXIT_INPUT
                    sigs, rejects = siggen.sign_object(image, origin)
            elif args.mode == "lib":
                image = elf.parse_elf(data)
                try:
                    sigs, rejects = [siggen.sign_shared_lib(image, origin)], []
                except siggen.NoTextSection:
                    _err(f"siggen: {input_path} has no .text section; skipped")
                    continue
            else:  # comment
                image = elf.parse_elf(data)
                sigs = siggen.sign_comments(elf.parse_comment(image), origin)
                rejects = []
        except (MalformedElf, UnsupportedElf, MalformedArchive) as exc:
            _err(f"siggen: {input_path}: {exc}")
            return EXIT_INPUT
        signatures.extend(sigs)
        reports.extend(rejects)

    if args.mode == "comment":
        # identical vendor strings from different inputs would double-count
        unique: list[siggen.Signature] = []
        seen_patterns: set[tuple] = set()
        for sig in signatures:
            if sig.pattern.elements in seen_patterns:
                continue
            seen_patterns.add(sig.pattern.elements)
            unique.append(sig)
        signatures = unique

    for report in reports:
        _err(f"siggen: skipped {report.name}: {report.reason}")
    if not signatures:
        _err("siggen: no signatures generated")
        return EXIT_INPUT

    sig_file = sigdb.SignatureFile(package=args.package, version=args.version,
                                   signatures=tuple(signatures))
    try:
        sigdb.write_sigfile(sig_file, args.output)
    except OSError as exc:
        _err(f"siggen: cannot write {args.output}: {exc}")
        return EXIT_INPUT
    return EXIT_OK


# --------------------------------------------------------------------------
# sigscan
# --------------------------------------------------------------------------

def _sigscan_parser() -> _Parser:
    parser = _Parser(prog="sigscan",
                     description="Scan program binaries for build provenance.")
    parser.add_argument("--db", required=True, help="signature database directory")
    parser.add_argument("--search-path", action="append", default=[], metavar="DIR",
                        help="directory for resolving dynamic libraries (repeatable, "
                             f"ordered; ${ENV_SEARCH_PATH} entries are appended)")
    parser.add_argument("--no-dynamic", action="store_true",
                        help="skip dynamic-library resolution")
    parser.add_argument("--format", choices=("human", "json"), default="human")
    parser.add_argument("--labels", metavar="FILE",
                        help="symbol-versioning label list (one per line, replaces "
                             "the built-in list)")
    parser.add_argument("binaries", nargs="+", metavar="binary",
                        help="ELF executables or shared libraries to scan")
    return parser


def _compile_engine(db: sigdb.Database, target: str):
    """Compile all hex signatures of one target kind into an engine plus
    the engine-index -> database-id mapping."""
    ids: list[int] = []
    renamed: list[siggen.Signature] = []
    for sig_id, sig, _ in db.iter_signatures():
        if sig.kind != siggen.KIND_HEX or sig.target != target:
            continue
        ids.append(sig_id)
        # same object names can legitimately recur across packages
        renamed.append(siggen.Signature(name=f"{sig_id}:{sig.name}", target=sig.target,
                                        kind=sig.kind, pattern=sig.pattern))
    return matcher.compile(renamed), ids


def _scan_one(target_path: str, db: sigdb.Database, text_engine, text_ids,
              comment_engine, comment_ids, labels, search_paths,
              no_dynamic: bool) -> ScanReport:
    image = elf.parse_elf(Path(target_path).read_bytes())
    report = ScanReport(target=target_path)
    counts: dict[tuple[str, str], list[int]] = {}

    def accumulate(matches, id_map):
        for m in matches:
            owner = db.owner(id_map[m.signature_id])
            entry = counts.setdefault((owner.package, owner.version), [0, 0])
            entry[0] += 1
            entry[1] += m.span

    for section in elf.list_text_sections(image):
        accumulate(matcher.scan_all(text_engine, section.data), text_ids)
    comment = elf.get_section(image, ".comment")
    if comment is not None:
        accumulate(matcher.match_comment(comment_engine, comment.data), comment_ids)

    report.package_hits = sorted(
        (PackageHit(package=pkg, version=ver, count=c, total_bytes=b)
         for (pkg, ver), (c, b) in counts.items()),
        key=lambda h: (-h.count, -h.total_bytes, h.package, h.version))

    if not no_dynamic:
        for soname, resolved in resolve_dynamic(image.dynamic_needed, search_paths):
            if resolved is None:
                report.warnings.append(f"unresolved dynamic library: {soname}")
                continue
            try:
                lib = elf.parse_elf(Path(resolved).read_bytes())
            except (OSError, MalformedElf, UnsupportedElf) as exc:
                report.warnings.append(f"{resolved}: {exc}")
                continue
            versions = symver.library_versions(lib, labels)
            if versions:
                for lv in versions:
                    report.dynlib_findings.append(DynlibFinding(
                        library=resolved, method=METHOD_SYMVER,
                        name=lv.label, version=lv.version))
                continue
            report.dynlib_findings.append(_md5_lookup(db, lib, resolved))
    return report


def _md5_lookup(db: sigdb.Database, lib: elf.ElfImage, resolved: str) -> DynlibFinding:
    text = elf.get_section(lib, ".text")
    if text is not None:
        digest = hashlib.md5(text.data).hexdigest()
        for _, sig, owner in db.iter_signatures():
            if (sig.kind == siggen.KIND_MD5 and sig.digest == digest
                    and sig.text_size == len(text.data)):
                return DynlibFinding(library=resolved, method=METHOD_MD5,
                                     name=owner.package, version=owner.version)
    return DynlibFinding(library=resolved, method=METHOD_UNKNOWN, name="", version="")


def sigscan_main(argv=None) -> int:
    parser = _sigscan_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _err(f"sigscan: error: {exc}")
        return EXIT_USAGE

    try:
        db = sigdb.load_db(args.db)
    except (sigdb.EmptyDatabase, OSError) as exc:
        _err(f"sigscan: {exc}")
        return EXIT_INPUT
    for warning in db.warnings:
        _err(f"sigscan: warning: {warning}")

    if args.labels:
        try:
            labels = symver.load_labels(args.labels)
        except OSError as exc:
            _err(f"sigscan: cannot read labels file: {exc}")
            return EXIT_INPUT
    else:
        labels = list(symver.DEFAULT_LABELS)

    search_paths = list(args.search_path)
    env_paths = os.environ.get(ENV_SEARCH_PATH, "")
    search_paths.extend(p for p in env_paths.split(os.pathsep) if p)

    try:
        text_engine, text_ids = _compile_engine(db, siggen.TARGET_TEXT)
        comment_engine, comment_ids = _compile_engine(db, siggen.TARGET_COMMENT)
    except (matcher.UnanchorableSignature, matcher.DuplicateSignatureName) as exc:
        _err(f"sigscan: cannot compile database: {exc}")
        return EXIT_INPUT

    status = EXIT_OK
    show_target = len(args.binaries) > 1 and args.format == "human"
    for target in args.binaries:
        try:
            report = _scan_one(target, db, text_engine, text_ids,
                               comment_engine, comment_ids, labels,
                               search_paths, args.no_dynamic)
        except (OSError, MalformedElf, UnsupportedElf) as exc:
            _err(f"sigscan: {target}: {exc}")
            status = EXIT_INPUT
            continue
        if args.format == "json":
            print(format_report(report, "json"))
        else:
            if show_target:
                print(f"{target}:")
            print(format_report(report, "human"), end="")
            for warning in report.warnings:
                _err(f"sigscan: warning: {warning}")
    return status


def siggen_entry() -> None:
    sys.exit(siggen_main())


def sigscan_entry() -> None:
    sys.exit(sigscan_main())
