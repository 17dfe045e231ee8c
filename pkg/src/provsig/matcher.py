"""Multi-pattern scanning engine for hex signatures.

All signatures are compiled into a single Aho-Corasick automaton and a
buffer is scanned in one pass.  The automaton is keyed on each
signature's *anchor*: its longest wildcard-free byte run.  When an
anchor fires, the candidate start position is derived from the anchor's
offset inside the pattern and the full pattern is verified there
(literals must equal buffer bytes, ``??`` positions and gap ranges are
skipped).  Because pattern gaps have exact lengths, every pattern
occupies a fixed span, which keeps both the anchor arithmetic and the
verification trivial.

The trie mirrors the classic two-level 256-way layout: the root and
every depth-1 node carry a dense, failure-resolved 256-entry transition
row; deeper nodes keep sparse child maps and fall back through failure
links.  Anchors are at least two bytes, so every anchor terminates at
depth >= 2.

``scan_once`` reports every verified occurrence of every signature,
overlaps included.  ``scan_all`` repeats the scan on a private copy of
the buffer, zeroing out each newly found match, until a pass discovers
nothing new; with exact-span patterns this converges in at most one
pass per match.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from provsig.siggen import KIND_HEX, HexPattern, Signature


class UnanchorableSignature(ValueError):
    """Signature whose longest literal run is under two bytes."""


class DuplicateSignatureName(ValueError):
    """Two signatures in one engine share a name."""


@dataclass(frozen=True)
class Match:
    """One verified occurrence: which signature, where, how many bytes."""

    signature_id: int
    start: int
    span: int


@dataclass(frozen=True)
class MatchSet:
    """Matches deduplicated on (signature_id, start), sorted by
    (start, signature_id)."""

    matches: tuple[Match, ...]

    def __len__(self) -> int:
        return len(self.matches)

    def __iter__(self):
        return iter(self.matches)

    def pairs(self) -> set[tuple[int, int]]:
        return {(m.signature_id, m.start) for m in self.matches}


def _make_matchset(matches) -> MatchSet:
    unique: dict[tuple[int, int], Match] = {}
    for m in matches:
        unique.setdefault((m.signature_id, m.start), m)
    ordered = sorted(unique.values(), key=lambda m: (m.start, m.signature_id))
    return MatchSet(tuple(ordered))


class CompiledEngine:
    """Immutable compiled automaton; safe to share across threads.

    Build with :func:`compile`.  ``patterns`` and ``anchors`` expose,
    per signature, the source pattern and the chosen (anchor bytes,
    span offset) pair.
    """

    __slots__ = ("patterns", "anchors", "_dense", "_ndense", "_children",
                 "_fail", "_out", "_verify")

    def __init__(self, patterns, anchors, dense, ndense, children, fail, out, verify):
        self.patterns: tuple[HexPattern, ...] = patterns
        self.anchors: tuple[tuple[bytes, int], ...] = anchors
        self._dense = dense
        self._ndense = ndense
        self._children = children
        self._fail = fail
        self._out = out
        self._verify = verify


def compile(signatures: list[Signature]) -> CompiledEngine:
    """Build one engine from hex signatures.

    The anchor is the longest literal run, earliest run winning ties.
    Raises DuplicateSignatureName on a repeated name and
    UnanchorableSignature if a pattern has no 2+ byte literal run
    (generated patterns never do; this guards hand-written input).
    """
    names: set[str] = set()
    patterns: list[HexPattern] = []
    anchors: list[tuple[bytes, int]] = []
    verify: list[tuple[int, tuple[tuple[int, bytes], ...]]] = []
    for sig in signatures:
        if sig.kind != KIND_HEX or sig.pattern is None:
            raise ValueError(f"engine only accepts hex signatures, got {sig.kind!r}")
        if sig.name in names:
            raise DuplicateSignatureName(sig.name)
        names.add(sig.name)
        runs = sig.pattern.literal_runs()
        if not runs or max(len(r[1]) for r in runs) < 2:
            raise UnanchorableSignature(sig.name)
        anchor_off, anchor = max(runs, key=lambda r: len(r[1]))
        patterns.append(sig.pattern)
        anchors.append((anchor, anchor_off))
        verify.append((sig.pattern.fixed_span, tuple(runs)))

    # goto trie over the anchors
    children: list[dict[int, int]] = [{}]
    depth: list[int] = [0]
    payload: list[list[tuple[int, int, int]]] = [[]]
    for idx, (anchor, anchor_off) in enumerate(anchors):
        node = 0
        for byte in anchor:
            nxt = children[node].get(byte)
            if nxt is None:
                nxt = len(children)
                children[node][byte] = nxt
                children.append({})
                depth.append(depth[node] + 1)
                payload.append([])
            node = nxt
        payload[node].append((idx, len(anchor), anchor_off))

    # renumber breadth-first so dense states occupy the low ids
    order: list[int] = [0]
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for child in children[node].values():
            order.append(child)
            queue.append(child)
    old_to_new = {old: new for new, old in enumerate(order)}
    n = len(order)
    new_children: list[dict[int, int]] = [
        {b: old_to_new[c] for b, c in children[old].items()} for old in order]
    new_depth = [depth[old] for old in order]
    new_payload = [payload[old] for old in order]

    # failure links and output propagation, in BFS (= id) order
    fail = [0] * n
    out: list[tuple[tuple[int, int, int], ...]] = [()] * n
    parent_byte: list[tuple[int, int]] = [(-1, -1)] * n
    for node in range(n):
        for byte, child in new_children[node].items():
            parent_byte[child] = (node, byte)
    out[0] = tuple(new_payload[0])
    for node in range(1, n):
        parent, byte = parent_byte[node]
        if new_depth[node] == 1:
            fail[node] = 0
        else:
            f = fail[parent]
            while True:
                nxt = new_children[f].get(byte)
                if nxt is not None:
                    fail[node] = nxt
                    break
                if f == 0:
                    fail[node] = 0
                    break
                f = fail[f]
        out[node] = tuple(new_payload[node]) + out[fail[node]]

    # dense failure-resolved rows for the two top levels
    ndense = 1 + sum(1 for d in new_depth if d == 1)
    root_row = [new_children[0].get(b, 0) for b in range(256)]
    dense = [root_row]
    for node in range(1, ndense):
        row = new_children[node]
        dense.append([row.get(b) if b in row else root_row[b] for b in range(256)])

    return CompiledEngine(tuple(patterns), tuple(anchors), dense, ndense,
                          new_children, fail, out, tuple(verify))


def scan_once(engine: CompiledEngine, buffer) -> MatchSet:
    """All verified matches of all signatures in one pass over ``buffer``."""
    if not isinstance(buffer, (bytes, bytearray)):
        buffer = bytes(buffer)
    dense = engine._dense
    ndense = engine._ndense
    children = engine._children
    fail = engine._fail
    out = engine._out
    verify = engine._verify
    n = len(buffer)
    hits: dict[tuple[int, int], Match] = {}
    state = 0
    for pos, byte in enumerate(buffer):
        if state < ndense:
            state = dense[state][byte]
        else:
            while True:
                nxt = children[state].get(byte)
                if nxt is not None:
                    state = nxt
                    break
                state = fail[state]
                if state < ndense:
                    state = dense[state][byte]
                    break
        found = out[state]
        if found:
            for sig_idx, anchor_len, anchor_off in found:
                start = pos + 1 - anchor_len - anchor_off
                if start < 0:
                    continue
                span, chunks = verify[sig_idx]
                if start + span > n:
                    continue
                key = (sig_idx, start)
                if key in hits:
                    continue
                for chunk_off, literal in chunks:
                    if not buffer.startswith(literal, start + chunk_off):
                        break
                else:
                    hits[key] = Match(sig_idx, start, span)
    return _make_matchset(hits.values())


def scan_all(engine: CompiledEngine, buffer) -> MatchSet:
    """Find-all scan: accumulate matches, zero out each newly matched
    span in a private working copy, rescan until a pass adds nothing."""
    work = bytearray(buffer)
    accumulated: dict[tuple[int, int], Match] = {}
    while True:
        new = [m for m in scan_once(engine, work)
               if (m.signature_id, m.start) not in accumulated]
        if not new:
            break
        for m in new:
            accumulated[(m.signature_id, m.start)] = m
            work[m.start:m.start + m.span] = bytes(m.span)
    return _make_matchset(accumulated.values())


def match_comment(engine: CompiledEngine, comment_bytes) -> MatchSet:
    """Find-all scan over raw .comment bytes (same semantics as scan_all)."""
    return scan_all(engine, comment_bytes)
