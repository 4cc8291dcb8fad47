"""Finite filters, convergence structures and uniform convergence structures.

Everything here lives on small finite ground sets, where every filter is
principal: the upward closure of its least member.  Structures are
stored by their minimal (coarsest) filters; upward closure under
refinement is then automatic from the representation, and the checkers
report that axiom as holding by construction.

Caps keep exhaustive work feasible: plain ground sets up to
``MAX_GROUND`` points, ground sets carrying relation filters (uniform
convergence structures) up to ``MAX_RELATION_GROUND`` points.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

__all__ = [
    "MAX_GROUND",
    "MAX_RELATION_GROUND",
    "FiniteFilter",
    "UndefinedComposition",
    "ConvergenceTable",
    "UcsTable",
    "StructureCheck",
    "filter_from_base",
    "principal",
    "filter_image",
    "filter_product",
    "filter_intersection",
    "refines",
    "rel_inverse",
    "rel_compose",
    "rel_image",
    "relation_inverse",
    "relation_compose",
    "relation_apply",
    "relation_apply_point",
    "discrete_convergence",
    "indiscrete_convergence",
    "discrete_ucs",
    "indiscrete_ucs",
    "check_convergence_structure",
    "check_uniform_convergence",
    "induced_convergence",
    "initial_ucs",
    "initial_convergence",
    "product_ucs",
    "subspace_ucs",
    "check_initial_compat",
    "is_cauchy",
    "check_uniform_continuity",
    "close_to_ucs",
]

MAX_GROUND = 6
MAX_RELATION_GROUND = 4


class UndefinedComposition(ValueError):
    """Relation algebra result would contain the empty set."""


def _canon(s) -> frozenset:
    return frozenset(s)


@dataclass(frozen=True)
class FiniteFilter:
    """A filter on a finite set: all supersets of its least member."""

    ground: frozenset
    least: frozenset

    def __post_init__(self):
        if not self.least:
            raise ValueError("a filter has no empty member")
        if not self.least <= self.ground:
            raise ValueError("least member not within the ground set")
        if len(self.ground) > MAX_GROUND**2:
            raise ValueError(f"ground set too large (cap {MAX_GROUND**2})")

    @property
    def base(self) -> tuple[frozenset, ...]:
        """Canonical minimal base."""
        return (self.least,)

    def members(self) -> list[frozenset]:
        rest = sorted(self.ground - self.least, key=repr)
        out = []
        for r in range(len(rest) + 1):
            for extra in itertools.combinations(rest, r):
                out.append(self.least | frozenset(extra))
        return out

    def contains_set(self, s) -> bool:
        return self.least <= _canon(s) <= self.ground


def filter_from_base(ground, base) -> FiniteFilter:
    """The filter generated by a family of sets (closing under
    intersections and supersets); empty sets or an empty total
    intersection are rejected."""
    ground = _canon(ground)
    sets = [_canon(b) for b in base]
    if not sets:
        raise ValueError("empty base")
    if any(not b for b in sets):
        raise ValueError("empty set in base")
    least = sets[0]
    for b in sets[1:]:
        least &= b
    if not least:
        raise ValueError("base has empty intersection; no filter generated")
    return FiniteFilter(ground=ground, least=least)


def principal(ground, x) -> FiniteFilter:
    return FiniteFilter(ground=_canon(ground), least=frozenset([x]))


def filter_image(f: FiniteFilter, mapping: dict, ground_out) -> FiniteFilter:
    return FiniteFilter(
        ground=_canon(ground_out), least=frozenset(mapping[a] for a in f.least)
    )


def filter_product(f: FiniteFilter, g: FiniteFilter) -> FiniteFilter:
    ground = frozenset(itertools.product(f.ground, g.ground))
    least = frozenset(itertools.product(f.least, g.least))
    return FiniteFilter(ground=ground, least=least)


def filter_intersection(f: FiniteFilter, g: FiniteFilter) -> FiniteFilter:
    """Meet of two filters as collections of sets: [A] meet [B] = [A u B]."""
    if f.ground != g.ground:
        raise ValueError("filters on different ground sets")
    return FiniteFilter(ground=f.ground, least=f.least | g.least)


def refines(f: FiniteFilter, g: FiniteFilter) -> bool:
    """True iff f contains every member of g (f is finer than g)."""
    return f.ground == g.ground and f.least <= g.least


# ---------------------------------------------------------------------------
# relation algebra (relations are sets of ordered pairs)

def rel_inverse(r) -> frozenset:
    return frozenset((b, a) for a, b in r)


def rel_compose(u, v) -> frozenset:
    """u after v: pairs (x, y) with (x, z) in v and (z, y) in u for some z."""
    by_first = {}
    for z, y in u:
        by_first.setdefault(z, []).append(y)
    return frozenset((x, y) for x, z in v for y in by_first.get(z, ()))


def rel_image(r, a) -> frozenset:
    return frozenset(y for x, y in r if x in a)


def relation_inverse(u: FiniteFilter) -> FiniteFilter:
    return FiniteFilter(ground=rel_inverse(u.ground) | u.ground, least=rel_inverse(u.least))


def relation_compose(u: FiniteFilter, v: FiniteFilter) -> FiniteFilter:
    least = rel_compose(u.least, v.least)
    if not least:
        raise UndefinedComposition("composition of leasts is empty")
    return FiniteFilter(ground=u.ground | v.ground, least=least)


def relation_apply(u: FiniteFilter, f: FiniteFilter) -> FiniteFilter:
    """The filter generated by relation images U[F]."""
    least = rel_image(u.least, f.least)
    if not least:
        raise UndefinedComposition("relation image of least is empty")
    ground = frozenset(y for _, y in u.ground) | f.ground
    return FiniteFilter(ground=ground, least=least)


def relation_apply_point(u: FiniteFilter, x) -> FiniteFilter:
    ground = frozenset(a for a, _ in u.ground) | frozenset(b for _, b in u.ground)
    return relation_apply(u, principal(ground, x))


# ---------------------------------------------------------------------------
# structure tables

def _antichain_max(sets) -> tuple[frozenset, ...]:
    """Keep only the maximal sets, in a deterministic order."""
    uniq = sorted(set(sets), key=lambda s: (len(s), sorted(map(repr, s))))
    out = []
    for s in uniq:
        if not any(s < t for t in uniq):
            out.append(s)
    return tuple(out)


@dataclass
class ConvergenceTable:
    """Candidate convergence structure: per point, the minimal filters of
    lambda(x); the structure is their upward closure under refinement."""

    ground: frozenset
    minimal: dict

    def __post_init__(self):
        self.ground = _canon(self.ground)
        if len(self.ground) > MAX_GROUND:
            raise ValueError(f"ground set larger than cap {MAX_GROUND}")
        norm = {}
        for x in self.ground:
            filters = self.minimal.get(x, ())
            for f in filters:
                if f.ground != self.ground:
                    raise ValueError("listed filter on wrong ground set")
            norm[x] = tuple(
                FiniteFilter(self.ground, least)
                for least in _antichain_max([f.least for f in filters])
            )
        self.minimal = norm

    def converges(self, f: FiniteFilter, x) -> bool:
        return any(f.least <= g.least for g in self.minimal[x])


@dataclass
class UcsTable:
    """Candidate uniform convergence structure: minimal filters on X x X."""

    ground: frozenset
    minimal: tuple

    def __post_init__(self):
        self.ground = _canon(self.ground)
        if len(self.ground) > MAX_RELATION_GROUND:
            raise ValueError(f"relation ground set larger than cap {MAX_RELATION_GROUND}")
        pair_ground = frozenset(itertools.product(self.ground, self.ground))
        for f in self.minimal:
            if f.ground != pair_ground:
                raise ValueError("listed filter must live on X x X")
        self.minimal = tuple(
            FiniteFilter(pair_ground, least)
            for least in _antichain_max([f.least for f in self.minimal])
        )

    @property
    def pair_ground(self) -> frozenset:
        return frozenset(itertools.product(self.ground, self.ground))

    def contains(self, f: FiniteFilter) -> bool:
        return any(f.least <= g.least for g in self.minimal)


def discrete_convergence(ground) -> ConvergenceTable:
    ground = _canon(ground)
    return ConvergenceTable(ground, {x: (principal(ground, x),) for x in ground})


def indiscrete_convergence(ground) -> ConvergenceTable:
    ground = _canon(ground)
    full = FiniteFilter(ground, ground)
    return ConvergenceTable(ground, {x: (full,) for x in ground})


def discrete_ucs(ground) -> UcsTable:
    ground = _canon(ground)
    pg = frozenset(itertools.product(ground, ground))
    diag = frozenset((x, x) for x in ground)
    return UcsTable(ground, (FiniteFilter(pg, diag),))


def indiscrete_ucs(ground) -> UcsTable:
    ground = _canon(ground)
    pg = frozenset(itertools.product(ground, ground))
    return UcsTable(ground, (FiniteFilter(pg, pg),))


@dataclass
class StructureCheck:
    ok: bool
    failed_axiom: int | None = None
    witness: object = None
    hausdorff: bool | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)


def check_convergence_structure(t: ConvergenceTable) -> StructureCheck:
    """Axioms: (1) the point filter converges to its point, (2) closure
    under meets of convergent filters, (3) upward closure, which holds by
    the minimal-filter representation.  The Hausdorff flag is reported
    separately and does not affect the verdict."""
    notes = ("axiom (3) upward closure holds by representation",)
    for x in sorted(t.ground, key=repr):
        if not any(x in g.least for g in t.minimal[x]):
            return StructureCheck(False, 1, x, _hausdorff(t), notes)
    for x in sorted(t.ground, key=repr):
        gens = t.minimal[x]
        for g1, g2 in itertools.product(gens, repeat=2):
            meet = g1.least | g2.least
            if not any(meet <= g.least for g in gens):
                return StructureCheck(False, 2, (x, g1.least, g2.least), _hausdorff(t), notes)
    return StructureCheck(True, None, None, _hausdorff(t), notes)


def _hausdorff(t: ConvergenceTable) -> bool:
    for x, y in itertools.combinations(sorted(t.ground, key=repr), 2):
        for gx in t.minimal[x]:
            for gy in t.minimal[y]:
                if gx.least & gy.least:
                    return False
    return True


def check_uniform_convergence(t: UcsTable) -> StructureCheck:
    """Axioms on the family of relation filters: (1) point squares belong,
    (2) closure under meets, (3) upward closure by representation,
    (4) closure under inverse, (5) closure under composition whenever the
    composition exists."""
    notes = ("axiom (3) upward closure holds by representation",)
    gens = t.minimal
    for x in sorted(t.ground, key=repr):
        if not any((x, x) in g.least for g in gens):
            return StructureCheck(False, 1, x, None, notes)
    for g1, g2 in itertools.product(gens, repeat=2):
        meet = g1.least | g2.least
        if not any(meet <= g.least for g in gens):
            return StructureCheck(False, 2, (g1.least, g2.least), None, notes)
    for g1 in gens:
        inv = rel_inverse(g1.least)
        if not any(inv <= g.least for g in gens):
            return StructureCheck(False, 4, g1.least, None, notes)
    for g1, g2 in itertools.product(gens, repeat=2):
        comp = rel_compose(g1.least, g2.least)
        if comp and not any(comp <= g.least for g in gens):
            return StructureCheck(False, 5, (g1.least, g2.least), None, notes)
    return StructureCheck(True, None, None, None, notes)


def induced_convergence(t: UcsTable) -> ConvergenceTable:
    """A filter converges to x iff the square [x] x F belongs to the
    uniform structure; minimal filters come from the x-slices of the
    listed relations."""
    minimal = {}
    for x in t.ground:
        slices = []
        for g in t.minimal:
            sl = frozenset(y for (a, y) in g.least if a == x)
            if sl:
                slices.append(sl)
        minimal[x] = tuple(FiniteFilter(t.ground, s) for s in _antichain_max(slices))
    return ConvergenceTable(t.ground, minimal)


def initial_ucs(ground, maps, tables) -> UcsTable:
    """Initial structure along maps f_i into uniform convergence spaces:
    a relation filter belongs iff all its images do.  Minimal filters are
    the maximal relation preimages over one generator choice per factor."""
    ground = _canon(ground)
    pg = frozenset(itertools.product(ground, ground))
    choices = itertools.product(*(t.minimal for t in tables))
    leasts = []
    for choice in choices:
        r = set(pg)
        for fmap, gen in zip(maps, choice):
            r = {(a, b) for (a, b) in r if (fmap[a], fmap[b]) in gen.least}
        if r:
            leasts.append(frozenset(r))
    if not tables:
        leasts = [pg]
    return UcsTable(ground, tuple(FiniteFilter(pg, l) for l in _antichain_max(leasts)))


def initial_convergence(ground, maps, tables) -> ConvergenceTable:
    """Initial convergence structure along maps into convergence spaces."""
    ground = _canon(ground)
    minimal = {}
    for x in ground:
        choices = itertools.product(*(t.minimal[fmap[x]] for fmap, t in zip(maps, tables)))
        leasts = []
        for choice in choices:
            a = set(ground)
            for fmap, gen in zip(maps, choice):
                a = {p for p in a if fmap[p] in gen.least}
            if a:
                leasts.append(frozenset(a))
        if not tables:
            leasts = [frozenset(ground)]
        minimal[x] = tuple(FiniteFilter(ground, l) for l in _antichain_max(leasts))
    return ConvergenceTable(ground, minimal)


def product_ucs(t1: UcsTable, t2: UcsTable) -> UcsTable:
    ground = frozenset(itertools.product(t1.ground, t2.ground))
    proj1 = {p: p[0] for p in ground}
    proj2 = {p: p[1] for p in ground}
    return initial_ucs(ground, [proj1, proj2], [t1, t2])


def subspace_ucs(t: UcsTable, subset) -> UcsTable:
    subset = _canon(subset)
    if not subset <= t.ground:
        raise ValueError("subspace must be a subset of the ground set")
    incl = {x: x for x in subset}
    return initial_ucs(subset, [incl], [t])


def _tables_equal(a: ConvergenceTable, b: ConvergenceTable) -> bool:
    if a.ground != b.ground:
        return False
    for x in a.ground:
        la = {f.least for f in a.minimal[x]}
        lb = {f.least for f in b.minimal[x]}
        if la != lb:
            return False
    return True


def check_initial_compat(ground, maps, tables) -> bool:
    """Instance check: inducing the convergence structure of the initial
    uniform structure agrees with taking the initial convergence
    structure of the induced ones."""
    lhs = induced_convergence(initial_ucs(ground, maps, tables))
    rhs = initial_convergence(ground, maps, [induced_convergence(t) for t in tables])
    return _tables_equal(lhs, rhs)


def is_cauchy(f: FiniteFilter, t: UcsTable) -> bool:
    """F is Cauchy iff F x F belongs to the uniform structure."""
    square = frozenset(itertools.product(f.least, f.least))
    return any(square <= g.least for g in t.minimal)


def check_uniform_continuity(fmap: dict, t_from: UcsTable, t_to: UcsTable):
    """Returns (ok, witness): ok iff the double image of every minimal
    filter belongs to the target structure; quantifying over minimal
    filters suffices because both families are upward closed."""
    for g in t_from.minimal:
        img = frozenset((fmap[a], fmap[b]) for (a, b) in g.least)
        if not any(img <= h.least for h in t_to.minimal):
            return False, g
    return True, None


def close_to_ucs(ground, seed_relations) -> UcsTable:
    """Close seed relations into a valid uniform convergence structure:
    add the diagonal, then saturate under union, inverse and defined
    composition.  Only maximal generators are kept at every step; the
    generated family is unchanged by dropping dominated ones, and every
    axiom only ever consults the maximal generators."""
    ground = _canon(ground)
    diag = frozenset((x, x) for x in ground)
    family = list(_antichain_max([diag] + [frozenset(r) for r in seed_relations if r]))
    while True:
        additions = []

        def covered(rel):
            return any(rel <= m for m in family) or any(rel <= m for m in additions)

        for r1 in family:
            inv = rel_inverse(r1)
            if not covered(inv):
                additions.append(inv)
        for r1, r2 in itertools.product(family, repeat=2):
            for cand in (r1 | r2, rel_compose(r1, r2)):
                if cand and not covered(cand):
                    additions.append(cand)
        if not additions:
            break
        family = list(_antichain_max(family + additions))
    pg = frozenset(itertools.product(ground, ground))
    return UcsTable(ground, tuple(FiniteFilter(pg, l) for l in family))
