"""Versioned text format for trained bounds, frequency tables and window bounds.

One header line, then one line per item, sorted lexicographically::

    # giby-store v1 digest=sha256:<hex> windows=5,10,25,50,100 quantize=none
    <kind>,<sensor>,<sb>,<lb>,<ub>,<count>
    ext,<sensor>,<sb>,<kind>,<value>,<freq>
    win,<sensor>,<sb>,<kind>,<len>,<min>,<max>

Floats are written with ``repr`` so a load reproduces them bit for bit.
Window lines for lengths above the log-space threshold hold natural-log
products.
"""

from __future__ import annotations

import hashlib
import io
from collections import defaultdict
from pathlib import Path
from typing import Optional, TextIO, Tuple, Union

from .core import BoundEntry, BoundStore
from .data_model import Dataset
from .extended import ExtendedStore, FrequencyTable, WindowBounds
from .switchboard import Kind

FORMAT_VERSION = "v1"
MAGIC = "# giby-store"


class StoreFormatError(ValueError):
    pass


def dataset_digest(dataset: Dataset) -> str:
    return "sha256:" + hashlib.sha256(dataset.to_csv().encode("utf-8")).hexdigest()


def dumps(core: BoundStore, extended: Optional[ExtendedStore] = None, digest: str = "") -> str:
    lines = []
    for e in core:
        lines.append(f"{e.kind.value},{e.sensor},{e.sb},{e.lb!r},{e.ub!r},{e.sample_count}")
    if extended is not None:
        for (kind, sensor, sb), t in extended.tables.items():
            for v, f in zip(t.values, t.freqs):
                lines.append(f"ext,{sensor},{sb},{kind.value},{v!r},{f}")
        for (kind, sensor, sb, L), wb in extended.windows.items():
            lines.append(f"win,{sensor},{sb},{kind.value},{L},{wb.lo!r},{wb.hi!r}")
    lines.sort()
    header = f"{MAGIC} {FORMAT_VERSION} digest={digest or 'none'}"
    if extended is not None:
        q = "none" if extended.quantize is None else str(extended.quantize)
        header += f" windows={','.join(map(str, extended.window_lens))} quantize={q}"
    return "\n".join([header, *lines]) + "\n"


def save(path: Union[str, Path], core: BoundStore, extended: Optional[ExtendedStore] = None,
         digest: str = "") -> None:
    Path(path).write_text(dumps(core, extended, digest), encoding="utf-8", newline="\n")


def loads(text: str) -> Tuple[BoundStore, Optional[ExtendedStore], str]:
    """Parse a store document into (core store, extended store or None, digest)."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise StoreFormatError("missing store header")
    fields = lines[0][len(MAGIC):].split()
    if not fields or fields[0] != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported store version {fields[:1]}")
    meta = dict(f.split("=", 1) for f in fields[1:] if "=" in f)
    digest = meta.get("digest", "none")
    digest = "" if digest == "none" else digest

    core = BoundStore(source=digest)
    extended = None
    if "windows" in meta:
        windows = tuple(int(x) for x in meta["windows"].split(",") if x)
        q = meta.get("quantize", "none")
        extended = ExtendedStore(windows, None if q == "none" else int(q))
    counts = defaultdict(list)
    try:
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            p = line.split(",")
            if p[0] in ("giant", "baby"):
                if len(p) != 6:
                    raise StoreFormatError(f"line {n}: expected 6 fields")
                core.add(BoundEntry(p[1], p[2], float(p[3]), float(p[4]), Kind(p[0]), int(p[5])))
            elif p[0] == "ext":
                if extended is None or len(p) != 6:
                    raise StoreFormatError(f"line {n}: unexpected ext line")
                counts[(Kind(p[3]), p[1], p[2])].append((float(p[4]), int(p[5])))
            elif p[0] == "win":
                if extended is None or len(p) != 7:
                    raise StoreFormatError(f"line {n}: unexpected win line")
                extended.add_window(WindowBounds(p[1], p[2], Kind(p[3]), int(p[4]), float(p[5]), float(p[6])))
            else:
                raise StoreFormatError(f"line {n}: unknown record type {p[0]!r}")
    except (ValueError, KeyError) as exc:
        if isinstance(exc, StoreFormatError):
            raise
        raise StoreFormatError(str(exc)) from exc
    for (kind, sensor, sb), pairs in counts.items():
        pairs.sort()
        extended.add_table(FrequencyTable(sensor, sb, kind, tuple(v for v, _ in pairs),
                                          tuple(f for _, f in pairs), extended.quantize))
    return core, extended, digest


def load(path: Union[str, Path]) -> Tuple[BoundStore, Optional[ExtendedStore], str]:
    return loads(Path(path).read_text(encoding="utf-8"))
