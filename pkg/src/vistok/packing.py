"""First-fit-decreasing packing of whole samples into fixed token budgets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, List, Tuple

from .errors import ItemExceedsBudget


@dataclass(frozen=True)
class PackItem:
    id: Hashable
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"item {self.id!r} has length {self.length} < 1")


@dataclass(frozen=True)
class PackedBatch:
    bins: Tuple[Tuple[PackItem, ...], ...]
    budget: int

    @property
    def bin_ids(self) -> List[List[Hashable]]:
        return [[it.id for it in b] for b in self.bins]

    @property
    def bin_lengths(self) -> List[List[int]]:
        return [[it.length for it in b] for b in self.bins]

    def loads(self) -> List[int]:
        return [sum(it.length for it in b) for b in self.bins]


def _sort_key(item: PackItem):
    # ids of mixed types still need a total order
    return (-item.length, type(item.id).__name__, item.id)


def pack(items: Iterable[PackItem], budget: int) -> PackedBatch:
    """Place items longest first into the lowest-index bin with room."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    ordered = sorted(items, key=_sort_key)
    for it in ordered:
        if it.length > budget:
            raise ItemExceedsBudget(it.id, it.length, budget)
    bins: List[List[PackItem]] = []
    free: List[int] = []
    for it in ordered:
        for b, room in enumerate(free):
            if it.length <= room:
                bins[b].append(it)
                free[b] -= it.length
                break
        else:
            bins.append([it])
            free.append(budget - it.length)
    return PackedBatch(tuple(tuple(b) for b in bins), budget)


def pack_lengths(lengths: Iterable[int], budget: int) -> PackedBatch:
    """Pack bare lengths, using their input position as the item id."""
    return pack([PackItem(i, n) for i, n in enumerate(lengths)], budget)


def bin_stats(batch: PackedBatch) -> dict:
    loads = batch.loads()
    n = len(loads)
    return {
        "bin_count": n,
        "fill_ratios": [load / batch.budget for load in loads],
        "waste": 1 - sum(loads) / (n * batch.budget) if n else 0.0,
    }
