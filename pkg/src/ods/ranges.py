from __future__ import annotations

import bisect


class OverlapError(ValueError):
    pass


class RangeSet:
    """Sorted, disjoint, merged half-open byte intervals."""

    def __init__(self, ranges=()):
        self._starts: list[int] = []
        self._ends: list[int] = []
        for a, b in ranges:
            self.add(a, b)

    def __iter__(self):
        return iter(zip(self._starts, self._ends))

    def __len__(self) -> int:
        return len(self._starts)

    def __eq__(self, other) -> bool:
        return isinstance(other, RangeSet) and list(self) == list(other)

    def __repr__(self) -> str:
        return f"RangeSet({list(self)!r})"

    @property
    def total(self) -> int:
        return sum(b - a for a, b in self)

    def overlaps(self, start: int, end: int) -> bool:
        if end <= start:
            return False
        i = bisect.bisect_right(self._starts, start) - 1
        if i >= 0 and self._ends[i] > start:
            return True
        j = i + 1
        return j < len(self._starts) and self._starts[j] < end

    def add(self, start: int, end: int, strict: bool = False) -> None:
        """Insert ``[start, end)``; with ``strict`` an overlap raises OverlapError."""
        if start < 0 or end < start:
            raise ValueError(f"bad interval [{start}, {end})")
        if end == start:
            return
        if strict and self.overlaps(start, end):
            raise OverlapError(f"[{start}, {end}) overlaps an existing range")
        # touching neighbours merge too
        i = bisect.bisect_left(self._ends, start)
        j = bisect.bisect_right(self._starts, end)
        if i < j:
            start = min(start, self._starts[i])
            end = max(end, self._ends[j - 1])
        self._starts[i:j] = [start]
        self._ends[i:j] = [end]

    def covers(self, start: int, end: int) -> bool:
        if end <= start:
            return True
        i = bisect.bisect_right(self._starts, start) - 1
        return i >= 0 and self._ends[i] >= end

    def gaps(self, start: int, end: int) -> list[tuple[int, int]]:
        """Uncovered sub-intervals of ``[start, end)``."""
        out = []
        cur = start
        for a, b in self:
            if b <= cur:
                continue
            if a >= end:
                break
            if a > cur:
                out.append((cur, min(a, end)))
            cur = max(cur, b)
            if cur >= end:
                break
        if cur < end:
            out.append((cur, end))
        return out

    def contiguous_prefix(self, start: int = 0) -> int:
        """End of the covered run beginning at ``start`` (``start`` itself if uncovered)."""
        i = bisect.bisect_right(self._starts, start) - 1
        if i >= 0 and self._ends[i] >= start:
            return self._ends[i]
        return start

    def to_list(self) -> list[list[int]]:
        return [[a, b] for a, b in self]
