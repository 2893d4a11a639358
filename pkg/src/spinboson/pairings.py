"""Chord-diagram combinatorics.

A pairing is stored as a tuple of sorted 2-tuples ordered by their minimum
element, e.g. ``((1, 3), (2, 4))``.  Index sets are sorted tuples of distinct
integers; an *interval* of an index set is a run of consecutive members of
that set (so ``(-1, 1)`` is an interval of ``(-2, -1, 1, 2)``).
"""
from __future__ import annotations

from collections import deque
from itertools import combinations
from typing import Iterable, Iterator, Sequence

Pair = tuple[int, int]
Pairing = tuple[Pair, ...]


def index_set(xs: Iterable[int]) -> tuple[int, ...]:
    """Return ``xs`` as a strictly increasing tuple, rejecting duplicates."""
    out = tuple(sorted(xs))
    if len(set(out)) != len(out):
        raise ValueError(f"index set has repeated elements: {out}")
    return out


def n_set(n: int) -> tuple[int, ...]:
    """``{1, ..., n}``."""
    return tuple(range(1, n + 1))


def mn_set(m: int, n: int) -> tuple[int, ...]:
    """``[m, n] ∩ Z`` with 0 removed."""
    return tuple(x for x in range(m, n + 1) if x != 0)


def canonical(pairs: Iterable[Sequence[int]]) -> Pairing:
    out = tuple(sorted(tuple(sorted(p)) for p in pairs))
    seen: set[int] = set()
    for p in out:
        if len(p) != 2 or p[0] == p[1]:
            raise ValueError(f"not a pair: {p}")
        if p[0] in seen or p[1] in seen:
            raise ValueError(f"pairs overlap: {out}")
        seen.update(p)
    return out


def support(P: Pairing) -> set[int]:
    return {x for p in P for x in p}


def double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


# -- enumeration -------------------------------------------------------------

def enumerate_pair_partitions(X: Sequence[int]) -> Iterator[Pairing]:
    """All pair partitions of ``X`` in lexicographic order.

    The smallest unpaired element is matched with each remaining element in
    increasing order.  Odd ``|X|`` yields nothing.
    """
    X = index_set(X)
    if len(X) % 2:
        return

    def rec(rest: tuple[int, ...]) -> Iterator[list[Pair]]:
        if not rest:
            yield []
            return
        a = rest[0]
        for i in range(1, len(rest)):
            b = rest[i]
            for tail in rec(rest[1:i] + rest[i + 1:]):
                yield [(a, b)] + tail

    for ps in rec(X):
        yield tuple(ps)


def enumerate_pairings(X: Sequence[int]) -> Iterator[Pairing]:
    """All pairings (pair partitions of subsets) of ``X``, the empty one first."""
    X = index_set(X)

    def rec(rest: tuple[int, ...]) -> Iterator[list[Pair]]:
        if not rest:
            yield []
            return
        a = rest[0]
        yield from rec(rest[1:])
        for i in range(1, len(rest)):
            for tail in rec(rest[1:i] + rest[i + 1:]):
                yield [(a, rest[i])] + tail

    for ps in rec(X):
        yield tuple(ps)


# -- relations ---------------------------------------------------------------

def crosses(p: Pair, q: Pair) -> bool:
    """Each pair has exactly one endpoint strictly inside the other's span."""
    (a, b), (c, d) = p, q
    return a < c < b < d or c < a < d < b


def overlaps(p: Pair, q: Pair) -> bool:
    """The closed spans intersect."""
    return max(p[0], q[0]) <= min(p[1], q[1])


def _classes(P: Pairing, rel) -> list[Pairing]:
    P = canonical(P)
    parent = list(range(len(P)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in combinations(range(len(P)), 2):
        if rel(P[i], P[j]):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[Pair]] = {}
    for i, p in enumerate(P):
        groups.setdefault(find(i), []).append(p)
    return sorted((tuple(g) for g in groups.values()), key=lambda g: g[0])


def linked_components(P: Pairing) -> list[Pairing]:
    """Classes of the transitive closure of the crossing relation."""
    return _classes(P, crosses)


def connected_components(P: Pairing) -> list[Pairing]:
    """Classes of the transitive closure of span overlap."""
    return _classes(P, overlaps)


def is_linked(P: Pairing) -> bool:
    return len(P) > 0 and len(linked_components(P)) == 1


def links(P: Pairing, x: int, y: int) -> bool:
    """True if some linked component of ``P`` covers both ``x`` and ``y``."""
    return any({x, y} <= support(c) for c in linked_components(P))


def span(P: Pairing) -> set[int]:
    """Integer points in the union of the closed pair spans."""
    out: set[int] = set()
    for a, b in P:
        out.update(range(a, b + 1))
    return out


# -- intervals ---------------------------------------------------------------

def is_interval_of(I: Sequence[int], carrier: Sequence[int]) -> bool:
    carrier = tuple(carrier)
    I = tuple(sorted(I))
    if not I or I[0] not in carrier:
        return False
    i = carrier.index(I[0])
    return carrier[i:i + len(I)] == I


def unpaired_intervals(P: Pairing, carrier: Sequence[int]) -> list[tuple[int, ...]]:
    """Maximal runs (in carrier order) of carrier elements not covered by ``P``."""
    carrier = index_set(carrier)
    used = support(P)
    if not used <= set(carrier):
        raise ValueError("pairing is not contained in the carrier")
    runs: list[tuple[int, ...]] = []
    cur: list[int] = []
    for x in carrier:
        if x in used:
            if cur:
                runs.append(tuple(cur))
            cur = []
        else:
            cur.append(x)
    if cur:
        runs.append(tuple(cur))
    return runs


def enumerate_interval_collections(
    carrier: Sequence[int],
    variant: str = "Q",
    exclude_full: bool = False,
) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Collections of disjoint nonempty intervals of ``carrier``.

    ``variant="Q0"`` drops every interval whose hull contains 0.  With
    ``exclude_full`` the single-interval collection ``{carrier}`` is skipped.
    Order: recursive over the first position (skip it, or start an interval of
    increasing length there).
    """
    carrier = index_set(carrier)
    if variant not in ("Q", "Q0"):
        raise ValueError(f"unknown variant {variant!r}")

    def ok(I):
        return variant == "Q" or not (I[0] <= 0 <= I[-1])

    def rec(start: int) -> Iterator[list[tuple[int, ...]]]:
        if start >= len(carrier):
            yield []
            return
        yield from rec(start + 1)
        for stop in range(start + 1, len(carrier) + 1):
            I = carrier[start:stop]
            if not ok(I):
                continue
            for tail in rec(stop):
                yield [I] + tail

    for coll in rec(0):
        if exclude_full and len(coll) == 1 and coll[0] == carrier:
            continue
        yield tuple(coll)


# -- pair removal keeping linkedness -----------------------------------------

def linked_distances(P: Pairing, p: Pair) -> dict[Pair, int]:
    """Breadth-first linked-path distance from ``p`` to every reachable pair."""
    P = canonical(P)
    dist = {p: 0}
    queue = deque([p])
    while queue:
        u = queue.popleft()
        for v in P:
            if v not in dist and crosses(u, v):
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def removal_candidates(P: Pairing) -> list[Pair]:
    """Pairs whose removal leaves a linked pairing."""
    P = canonical(P)
    return [q for q in P if is_linked(tuple(x for x in P if x != q))]


def removal_witness(P: Pairing, p: Pair) -> Pair:
    """A pair ``q != p`` with ``P \\ {q}`` still linked.

    Picks ``q`` at maximal linked distance from ``p``; ties go to the first
    maximiser in canonical order.  The choice is re-checked before return.
    """
    P = canonical(P)
    p = tuple(sorted(p))
    if len(P) < 2:
        raise ValueError("need at least two pairs (four points)")
    if p not in P:
        raise ValueError(f"{p} is not a pair of P")
    if not is_linked(P):
        raise ValueError("P is not linked")
    dist = linked_distances(P, p)
    far = max(dist.values())
    q = next(x for x in P if dist[x] == far)
    rest = tuple(x for x in P if x != q)
    if not is_linked(rest):  # pragma: no cover - a witness always exists
        raise RuntimeError(f"removal of {q} disconnects {P}")
    return q


# -- linked pairings used by the graph expansions -----------------------------

def linked_spanning_pairings(carrier: Sequence[int]) -> Iterator[Pairing]:
    """Linked pairings of ``carrier`` that pair both its endpoints."""
    carrier = index_set(carrier)
    if len(carrier) < 2:
        return
    lo, hi = carrier[0], carrier[-1]
    for P in enumerate_pairings(carrier):
        if P and {lo, hi} <= support(P) and is_linked(P):
            yield P
