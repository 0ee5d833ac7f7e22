"""Separator-annotated token sequences that keep the 2D patch arrangement.

A sequence starts with the overview block and a newline, then the patch
blocks row by row: commas between horizontally adjacent patches, a newline
after the last patch of each row. Separators are symbolic markers here;
mapping them onto language-model embeddings is out of scope. ``parse`` is
the exact inverse of ``assemble``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .tensor import Array, as_tensor

OVERVIEW = "overview"
PATCH = "patch"
COMMA = "comma"
NEWLINE = "newline"


@dataclass(frozen=True)
class VisualBlock:
    source: str  # OVERVIEW or PATCH
    tokens: Array  # (M, D)
    row: int | None = None  # patch position; None for the overview
    col: int | None = None


@dataclass(frozen=True)
class Separator:
    kind: str  # COMMA or NEWLINE


Element = Union[VisualBlock, Separator]


@dataclass(frozen=True)
class TokenSequence:
    elements: tuple[Element, ...]

    def __len__(self) -> int:
        return len(self.elements)

    def visual_token_count(self) -> int:
        return sum(e.tokens.shape[0] for e in self.elements if isinstance(e, VisualBlock))

    def separator_count(self) -> dict[str, int]:
        kinds = [e.kind for e in self.elements if isinstance(e, Separator)]
        return {COMMA: kinds.count(COMMA), NEWLINE: kinds.count(NEWLINE)}


class SequenceParseError(ValueError):
    """Malformed token sequence; ``position`` is the offending element index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (element {position})")
        self.position = position


def assemble(overview: Array, patches: list[list[Array]]) -> TokenSequence:
    """Interleave the overview and a rows x cols patch grid with separators."""
    overview = as_tensor(overview)
    if overview.ndim != 2:
        raise ValueError(f"token blocks must be (M, D), got {overview.shape}")
    cols = len(patches[0]) if patches else 0
    elements: list[Element] = [
        VisualBlock(source=OVERVIEW, tokens=overview),
        Separator(NEWLINE),
    ]
    for r, row in enumerate(patches):
        if len(row) != cols:
            raise ValueError(f"ragged patch grid: row {r} has {len(row)} patches, row 0 has {cols}")
        for c, block in enumerate(row):
            block = as_tensor(block)
            if block.shape != overview.shape:
                raise ValueError(
                    f"patch ({r},{c}) shape {block.shape} differs from overview {overview.shape}"
                )
            if c > 0:
                elements.append(Separator(COMMA))
            elements.append(VisualBlock(source=PATCH, tokens=block, row=r, col=c))
        elements.append(Separator(NEWLINE))
    return TokenSequence(tuple(elements))


def token_count(rows: int, cols: int, tokens_per_block: int, with_overview: bool) -> dict:
    """Closed-form sequence arithmetic matching ``assemble``.

    visual = (rows * cols + overview) * tokens_per_block,
    separators = rows * (cols - 1) commas + (rows + overview) newlines.
    """
    if rows < 0 or cols < 0:
        raise ValueError("grid extents must be nonnegative")
    blocks = rows * cols + (1 if with_overview else 0)
    commas = rows * (cols - 1) if cols > 0 else 0
    newlines = rows + (1 if with_overview else 0)
    return {"visual": blocks * tokens_per_block, "separators": commas + newlines}


def parse(seq: TokenSequence) -> tuple[Array, list[list[Array]]]:
    """Invert ``assemble``: recover the overview block and the patch grid."""
    elems = seq.elements
    pos = 0

    def demand(kind) -> Element:
        nonlocal pos
        if pos >= len(elems):
            raise SequenceParseError(f"sequence ended, expected {kind}", pos)
        e = elems[pos]
        pos += 1
        return e

    head = demand("overview block")
    if not isinstance(head, VisualBlock) or head.source != OVERVIEW:
        raise SequenceParseError("expected the overview block first", 0)
    nl = demand("newline")
    if not isinstance(nl, Separator) or nl.kind != NEWLINE:
        raise SequenceParseError("expected a newline after the overview", pos - 1)

    rows: list[list[Array]] = []
    while pos < len(elems):
        row: list[Array] = []
        while True:
            e = demand("patch block")
            if not isinstance(e, VisualBlock) or e.source != PATCH:
                raise SequenceParseError("expected a patch block", pos - 1)
            row.append(e.tokens)
            e = demand("separator")
            if not isinstance(e, Separator):
                raise SequenceParseError("expected a separator after a patch", pos - 1)
            if e.kind == NEWLINE:
                break
            if e.kind != COMMA:
                raise SequenceParseError(f"unknown separator kind {e.kind!r}", pos - 1)
        if rows and len(row) != len(rows[0]):
            raise SequenceParseError(
                f"row {len(rows)} has {len(row)} patches, row 0 has {len(rows[0])}", pos - 1
            )
        rows.append(row)
    return head.tokens, rows


def sequence_manifest(seq: TokenSequence) -> dict:
    """JSON-ready description of the element order (tensor data lives elsewhere)."""
    entries = []
    for e in seq.elements:
        if isinstance(e, VisualBlock):
            entry = {"kind": "block", "source": e.source}
            if e.source == PATCH:
                entry["row"] = e.row
                entry["col"] = e.col
            entries.append(entry)
        else:
            entries.append({"kind": "separator", "separator": e.kind})
    return {"elements": entries}


def sequence_from_manifest(manifest: dict, blocks: Array) -> TokenSequence:
    """Rebuild a sequence from its manifest and the stacked (B, M, D) block tensor."""
    blocks = as_tensor(blocks)
    elements: list[Element] = []
    nxt = 0
    for i, entry in enumerate(manifest["elements"]):
        if entry["kind"] == "block":
            if nxt >= blocks.shape[0]:
                raise SequenceParseError("manifest references more blocks than stored", i)
            elements.append(
                VisualBlock(
                    source=entry["source"],
                    tokens=np.ascontiguousarray(blocks[nxt]),
                    row=entry.get("row"),
                    col=entry.get("col"),
                )
            )
            nxt += 1
        elif entry["kind"] == "separator":
            elements.append(Separator(entry["separator"]))
        else:
            raise SequenceParseError(f"unknown manifest entry kind {entry['kind']!r}", i)
    if nxt != blocks.shape[0]:
        raise SequenceParseError("stored blocks not all referenced by the manifest", nxt)
    return TokenSequence(tuple(elements))


def stack_blocks(seq: TokenSequence) -> Array:
    """All visual blocks stacked to (B, M, D), in sequence order."""
    return np.stack([e.tokens for e in seq.elements if isinstance(e, VisualBlock)], axis=0)
