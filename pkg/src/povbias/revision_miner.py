"""Mine POV-tagged single-statement edits from a MediaWiki revision-history dump.

The dump is consumed as a byte stream with expat, so memory stays flat in the
number of revisions. For every revision whose comment mentions "pov", the page
text is compared with its parent revision; revisions that touch exactly one
statement yield a :class:`StatementDiff`.
"""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator
from xml.parsers import expat

JACCARD_UPDATE_THRESHOLD = 0.7
CHUNK_SIZE = 1 << 16


class DumpParseError(ValueError):
    """Malformed XML in the dump; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TruncatedDumpError(DumpParseError):
    """The stream ended before the document was complete."""


class EditType(str, enum.Enum):
    DELETED = "deleted"
    MOVED = "moved"
    UPDATED = "updated"


@dataclass(frozen=True)
class RevisionRecord:
    page_id: str
    page_title: str
    revision_id: str
    parent_revision_id: str | None
    timestamp: str
    comment: str
    wikitext: str


_TOKEN_RE = re.compile(r"[^\W_]+")


def token_set(text: str) -> frozenset[str]:
    return frozenset(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Statement:
    text: str
    section: str = ""
    token_set: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "token_set", token_set(self.text))


@dataclass(frozen=True)
class StatementDiff:
    old_statement: Statement
    new_statement: Statement | None
    edit_type: EditType
    revision_id: str
    comment: str

    def __post_init__(self):
        if self.edit_type is EditType.DELETED and self.new_statement is not None:
            raise ValueError("a deleted statement has no replacement")
        if self.edit_type is not EditType.DELETED and self.new_statement is None:
            raise ValueError(f"{self.edit_type.value} edit needs the new statement")


# ---------------------------------------------------------------------------
# dump parsing


class _DumpHandler:
    def __init__(self):
        self.stack: list[str] = []
        self.buffer: list[str] | None = None
        self.page: dict[str, str] = {}
        self.rev: dict[str, str] | None = None
        self.done: list[RevisionRecord] = []

    def start(self, name, attrs):
        parent = self.stack[-1] if self.stack else None
        self.stack.append(name)
        if name == "page":
            self.page = {"id": "", "title": ""}
        elif name == "revision" and parent == "page":
            self.rev = {"comment": "", "text": "", "parentid": "", "id": "", "timestamp": ""}
        elif parent == "page" and name in ("id", "title"):
            self.buffer = []
        elif parent == "revision" and name in ("id", "parentid", "timestamp", "comment", "text"):
            self.buffer = []

    def end(self, name):
        self.stack.pop()
        parent = self.stack[-1] if self.stack else None
        if self.buffer is not None and parent in ("page", "revision"):
            value = "".join(self.buffer)
            self.buffer = None
            if parent == "page":
                self.page[name] = value
            elif self.rev is not None:
                self.rev[name] = value
        elif name == "revision" and self.rev is not None:
            r = self.rev
            self.done.append(
                RevisionRecord(
                    page_id=self.page.get("id", "").strip(),
                    page_title=self.page.get("title", ""),
                    revision_id=r["id"].strip(),
                    parent_revision_id=r["parentid"].strip() or None,
                    timestamp=r["timestamp"].strip(),
                    comment=r["comment"],
                    wikitext=r["text"],
                )
            )
            self.rev = None

    def chars(self, data):
        if self.buffer is not None:
            self.buffer.append(data)


def parse_dump(stream: BinaryIO) -> Iterator[RevisionRecord]:
    """Yield revisions from a pages-meta-history XML export in document order."""
    handler = _DumpHandler()
    parser = expat.ParserCreate()
    parser.buffer_text = True
    parser.StartElementHandler = handler.start
    parser.EndElementHandler = handler.end
    parser.CharacterDataHandler = handler.chars
    consumed = 0
    while True:
        chunk = stream.read(CHUNK_SIZE)
        final = not chunk
        try:
            parser.Parse(chunk, final)
        except expat.ExpatError as exc:
            offset = parser.ErrorByteIndex
            if offset < 0:
                offset = consumed
            yield from handler.done
            handler.done.clear()
            code = expat.ErrorString(exc.code)
            if final and consumed > 0:
                raise TruncatedDumpError(f"dump ended prematurely: {code}", offset) from None
            raise DumpParseError(f"malformed dump XML: {code}", offset) from None
        consumed += len(chunk)
        yield from handler.done
        handler.done.clear()
        if final:
            return


def is_pov_tagged(comment: str) -> bool:
    return "pov" in comment.lower()


# ---------------------------------------------------------------------------
# markup stripping and sentence segmentation

ABBREVIATIONS = frozenset(
    """
    mr. mrs. ms. dr. st. jr. sr. prof. rev. gen. col. lt. sgt. capt. gov. sen. rep. hon.
    mt. ft. no. vol. vs. inc. ltd. co. corp. jan. feb. mar. apr. jun. jul. aug. sep. sept.
    oct. nov. dec. u.s. u.k. u.n. e.g. i.e. a.m. p.m. ca. approx. cf. op. c.
    """.split()
)

_HEADING_RE = re.compile(r"^(={2,6})\s*(.*?)\s*\1\s*$")
_COMMENT_RE = re.compile(r"<!--.*?-->", re.S)
_REF_RE = re.compile(r"<ref\b[^>/]*/>|<ref\b[^>]*>.*?</ref\s*>", re.S | re.I)
_TAG_RE = re.compile(r"</?[a-zA-Z][^>]*>")
_LINK_RE = re.compile(r"\[\[([^\[\]]*)\]\]")
_EXTLINK_RE = re.compile(r"\[(?:https?|ftp)://[^\s\]]+(?:\s+([^\]]*))?\]")
_QUOTES_RE = re.compile(r"'{2,}")
_SPACE_RE = re.compile(r"[ \t]+")
_SPLIT_RE = re.compile(r"[.?!]+[\"')\]]*(?=\s+[\"'(\[]?[A-Z]|\s*$)")
_NON_PROSE = ("File:", "Image:", "Category:", "Media:")


def _drop_templates(text: str, diagnostics: Counter | None) -> str:
    """Remove nested ``{{...}}`` and ``{|...|}`` blocks; unbalanced openers drop the rest."""
    out = []
    depth = 0
    i = 0
    n = len(text)
    start = 0
    while i < n:
        pair = text[i : i + 2]
        line_start = i == 0 or text[i - 1] == "\n"
        if pair == "{{" or (pair == "{|" and line_start):
            if depth == 0:
                out.append(text[start:i])
            depth += 1
            i += 2
        elif depth > 0 and (pair == "}}" or (pair == "|}" and line_start)):
            depth -= 1
            i += 2
            if depth == 0:
                start = i
        else:
            i += 1
    if depth == 0:
        out.append(text[start:])
    elif diagnostics is not None:
        diagnostics["unbalanced_template"] += 1
    return "".join(out)


def _link_surface(match: re.Match) -> str:
    inner = match.group(1)
    if inner.startswith(_NON_PROSE):
        return ""
    return inner.rsplit("|", 1)[-1]


def strip_markup(wikitext: str, diagnostics: Counter | None = None) -> str:
    text = _COMMENT_RE.sub("", wikitext)
    text = _REF_RE.sub("", text)
    if "<ref" in text.lower():
        if diagnostics is not None:
            diagnostics["unclosed_ref"] += 1
        text = re.sub(r"<ref\b.*", "", text, flags=re.S | re.I)
    text = _drop_templates(text, diagnostics)
    # innermost links first so nested file captions collapse cleanly
    prev = None
    while prev != text:
        prev = text
        text = _LINK_RE.sub(_link_surface, text)
    text = _EXTLINK_RE.sub(lambda m: m.group(1) or "", text)
    text = _TAG_RE.sub("", text)
    text = _QUOTES_RE.sub("", text)
    return text


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by a capitalised word or end of text."""
    sentences = []
    start = 0
    for m in _SPLIT_RE.finditer(text):
        end = m.end()
        before = text[start : m.start() + 1]
        last_word = before.split()[-1].lower() if before.split() else ""
        if last_word in ABBREVIATIONS or re.fullmatch(r"[a-z]\.", last_word):
            continue
        piece = text[start:end].strip()
        if piece:
            sentences.append(piece)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def segment_statements(wikitext: str, diagnostics: Counter | None = None) -> list[Statement]:
    """Strip wiki markup and cut the page into sentences tagged with their section."""
    section = ""
    statements: list[Statement] = []
    prose: list[str] = []

    def flush():
        if prose:
            para = _SPACE_RE.sub(" ", " ".join(prose)).strip()
            statements.extend(Statement(s, section) for s in split_sentences(para))
            prose.clear()

    for line in strip_markup(wikitext, diagnostics).split("\n"):
        heading = _HEADING_RE.match(line.strip())
        if heading:
            flush()
            section = heading.group(2).strip()
            continue
        stripped = line.strip()
        if not stripped:
            flush()
            continue
        if stripped[0] in "*#:;":
            flush()
            prose.append(stripped.lstrip("*#:; "))
            flush()
            continue
        if stripped.startswith(("|", "!", "----", "__")):
            continue
        prose.append(stripped)
    flush()
    return statements


# ---------------------------------------------------------------------------
# diffing


def jaccard(a: Statement, b: Statement) -> float:
    sa, sb = a.token_set, b.token_set
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def _best_update(old_stmt: Statement, added: Iterable[Statement]) -> tuple[float, Statement | None]:
    best, best_stmt = -1.0, None
    for cand in added:
        score = jaccard(old_stmt, cand)
        if score > best:
            best, best_stmt = score, cand
    return best, best_stmt


def _find_moved(old_stmt: Statement, candidates: Iterable[Statement]) -> Statement | None:
    for cand in candidates:
        if cand.text == old_stmt.text and cand.section != old_stmt.section:
            return cand
    return None


def classify_edit(
    old_stmt: Statement,
    added_statements: list[Statement],
    retained_statements: Iterable[Statement] = (),
) -> EditType:
    """Moved beats Updated beats Deleted."""
    return _classify(old_stmt, added_statements, retained_statements)[0]


def _classify(old_stmt, added, retained=()):
    moved = _find_moved(old_stmt, list(added) + list(retained))
    if moved is not None:
        return EditType.MOVED, moved
    score, best = _best_update(old_stmt, added)
    if best is not None and score >= JACCARD_UPDATE_THRESHOLD:
        return EditType.UPDATED, best
    return EditType.DELETED, None


def diff_revisions(
    old: RevisionRecord, new: RevisionRecord, diagnostics: Counter | None = None
) -> StatementDiff | None:
    """Return the single-statement edit between two revisions, or ``None``."""
    old_stmts = segment_statements(old.wikitext, diagnostics)
    new_stmts = segment_statements(new.wikitext, diagnostics)
    old_keys = Counter((s.section, s.text) for s in old_stmts)
    new_keys = Counter((s.section, s.text) for s in new_stmts)
    removed_keys = old_keys - new_keys
    if sum(removed_keys.values()) != 1:
        return None
    (section, text), = removed_keys
    old_stmt = Statement(text, section)

    added_keys = new_keys - old_keys
    added, retained = [], []
    budget = dict(added_keys)
    for s in new_stmts:
        key = (s.section, s.text)
        if budget.get(key, 0) > 0:
            added.append(s)
            budget[key] -= 1
        else:
            retained.append(s)
    edit_type, new_stmt = _classify(old_stmt, added, retained)
    return StatementDiff(old_stmt, new_stmt, edit_type, new.revision_id, new.comment)


@dataclass
class MiningSummary:
    revisions: int = 0
    pov_revisions: int = 0
    counts: Counter = field(default_factory=Counter)
    diagnostics: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "revisions": self.revisions,
            "pov_revisions": self.pov_revisions,
            "edit_types": {t.value: self.counts.get(t.value, 0) for t in EditType},
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }


def mine(records: Iterable[RevisionRecord], summary: MiningSummary | None = None) -> Iterator[dict]:
    """Turn a revision stream into JSON-ready diff rows.

    Only the immediately preceding revision of a page is kept in memory; a
    POV-tagged revision whose parent is not that revision is skipped.
    """
    if summary is None:
        summary = MiningSummary()
    prev: RevisionRecord | None = None
    for rec in records:
        summary.revisions += 1
        if prev is not None and prev.page_id != rec.page_id:
            prev = None
        if is_pov_tagged(rec.comment):
            summary.pov_revisions += 1
            parent = prev
            if parent is not None and rec.parent_revision_id not in (None, parent.revision_id):
                summary.diagnostics["parent_not_adjacent"] += 1
                parent = None
            if parent is None:
                summary.diagnostics["no_parent"] += 1
            else:
                diff = diff_revisions(parent, rec, summary.diagnostics)
                if diff is None:
                    summary.diagnostics["not_single_statement"] += 1
                else:
                    summary.counts[diff.edit_type.value] += 1
                    yield diff_to_row(rec, diff)
        prev = rec


def diff_to_row(rec: RevisionRecord, diff: StatementDiff) -> dict:
    return {
        "page_id": rec.page_id,
        "page_title": rec.page_title,
        "revision_id": diff.revision_id,
        "comment": diff.comment,
        "edit_type": diff.edit_type.value,
        "old_text": diff.old_statement.text,
        "new_text": diff.new_statement.text if diff.new_statement else None,
        "section": diff.old_statement.section,
    }


def dump_row(row: dict) -> str:
    return json.dumps(row, ensure_ascii=False, separators=(", ", ": "))
