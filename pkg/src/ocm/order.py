"""Order comparison off skeletons, order convergence, and the refinement
driver that produces a Cauchy sequence of certified approximants.

Grid functions are compared only at nodes that avoid the given skeleton
and both masks: equality and order modulo a closed nowhere dense set.
The refinement driver fixes one partition (the one the finest step
needs) and re-solves every step on it, so the operator images rise
monotonically step over step with no repairs in exact arithmetic; the
running nodewise maximum enforces the invariant and counts any repairs
float wobble would introduce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .approx import PiecewisePoly, ResidualCertificate, global_approx
from .baire import GridFn, EnvelopePair, lattice_nodes, nlsc_regularize
from .domain import CellPartition, Skeleton

__all__ = [
    "OrderIntervalSeq",
    "StepRecord",
    "SolutionTrace",
    "le_off_skeleton",
    "operator_image",
    "pullback_le",
    "order_converges",
    "nested_interval_valid",
    "refine_solution",
    "cauchy_gap",
    "trace_csv_rows",
]


@dataclass
class OrderIntervalSeq:
    """A sequence of order intervals [lower_n, upper_n] of grid functions.

    Well-formed sequences have lower_n <= upper_n off the masks at every
    step; emptiness probes (lower exceeding upper) are allowed as inputs
    to nested_interval_valid, which detects them.
    """

    pairs: list[tuple[GridFn, GridFn]]

    def __len__(self) -> int:
        return len(self.pairs)


def _require_same_lattice(f: GridFn, g: GridFn) -> None:
    if not f.same_lattice(g):
        raise ValueError("grid functions live on different lattices")


def _off_mask(*fns: GridFn) -> np.ndarray:
    out = ~fns[0].mask_array()
    for f in fns[1:]:
        out &= ~f.mask_array()
    return out


def le_off_skeleton(f: GridFn, g: GridFn, gamma: Skeleton | None = None) -> bool:
    """True iff f <= g at every node off gamma and off both masks."""
    _require_same_lattice(f, g)
    sel = _off_mask(f, g)
    if gamma is not None:
        nodes = lattice_nodes(f.axes)
        sel &= ~gamma.contains_batch(nodes).reshape(f.shape)
    return bool(np.all(f.values[sel] <= g.values[sel]))


def operator_image(system: ex.PdeSystem, u: PiecewisePoly, axes) -> list[GridFn]:
    """The operator applied to u, embedded as regularized grid functions.

    Off-skeleton nodes carry T_i(x, D)u(x); skeleton nodes are masked,
    filled with 0 and regularized away.
    """
    if tuple(u.alphas) != system.alphas or u.K != system.K:
        raise ValueError("approximant jet layout does not match the system")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    nodes = lattice_nodes(axes)
    shape = tuple(len(a) for a in axes)
    mask_flat = u.skeleton.contains_batch(nodes)
    free = nodes[~mask_flat]
    if len(free):
        jets = u.jets(free)
        XI = jets.reshape(len(free), -1).T
        X = free.T
    out = []
    for i in range(system.K):
        vals = np.zeros(len(nodes))
        if len(free):
            vals[~mask_flat] = ex.eval_component_batch(system, i, X, XI)
        g = GridFn(axes, vals.reshape(shape), mask_flat.reshape(shape))
        out.append(nlsc_regularize(g))
    return out


def pullback_le(system: ex.PdeSystem, U: PiecewisePoly, V: PiecewisePoly, axes) -> bool:
    """Order on approximants pulled back through the operator:
    U <= V iff every component of the embedded image of U lies below
    the corresponding component for V off both skeleton masks."""
    img_u = operator_image(system, U, axes)
    img_v = operator_image(system, V, axes)
    return all(le_off_skeleton(a, b) for a, b in zip(img_u, img_v))


def order_converges(xs, x: GridFn, witnesses: OrderIntervalSeq, tol: float) -> bool:
    """Check the sandwich definition of order convergence on a finite prefix.

    Requires lower_n nondecreasing, upper_n nonincreasing, the sandwich
    lower_n <= x_n <= upper_n and lower_n <= x <= upper_n at every step,
    and a final witness gap below tol off the masks.
    """
    xs = list(xs)
    if len(xs) != len(witnesses.pairs) or not xs:
        raise ValueError("need equally long nonempty sequences")
    prev = None
    for x_n, (lo, up) in zip(xs, witnesses.pairs):
        for g in (x_n, lo, up):
            _require_same_lattice(x, g)
        sel = _off_mask(x_n, lo, up, x)
        if not np.all(lo.values[sel] <= x_n.values[sel]):
            return False
        if not np.all(x_n.values[sel] <= up.values[sel]):
            return False
        if not np.all(lo.values[sel] <= x.values[sel]):
            return False
        if not np.all(x.values[sel] <= up.values[sel]):
            return False
        if prev is not None:
            plo, pup = prev
            sel2 = _off_mask(lo, up, plo, pup)
            if not np.all(plo.values[sel2] <= lo.values[sel2]):
                return False
            if not np.all(up.values[sel2] <= pup.values[sel2]):
                return False
        prev = (lo, up)
    lo_N, up_N = witnesses.pairs[-1]
    sel = _off_mask(lo_N, up_N)
    return bool(np.all(up_N.values[sel] - lo_N.values[sel] <= tol))


def nested_interval_valid(seq: OrderIntervalSeq, subboxes, tol: float) -> bool:
    """Nesting plus a local singleton test.

    Condition 1: the intervals nest (lowers nondecreasing, uppers
    nonincreasing, off masks).  Condition 2: on every given subbox the
    final gap is at most tol, or the intersection has emptied there
    (final lower exceeds final upper somewhere in the subbox).  Subboxes
    containing no lattice nodes pass vacuously.
    """
    if not seq.pairs:
        raise ValueError("empty interval sequence")
    for (lo_a, up_a), (lo_b, up_b) in zip(seq.pairs, seq.pairs[1:]):
        sel = _off_mask(lo_a, up_a, lo_b, up_b)
        if not np.all(lo_a.values[sel] <= lo_b.values[sel]):
            return False
        if not np.all(up_b.values[sel] <= up_a.values[sel]):
            return False
    lo_N, up_N = seq.pairs[-1]
    nodes = lattice_nodes(lo_N.axes)
    sel = _off_mask(lo_N, up_N).ravel()
    for box in subboxes:
        inside = np.all(
            (nodes >= np.asarray(box.lo)) & (nodes <= np.asarray(box.hi)), axis=1
        ) & sel
        if not inside.any():
            continue
        gap = up_N.values.ravel()[inside] - lo_N.values.ravel()[inside]
        if np.max(gap) <= tol:
            continue
        if np.any(gap < 0):
            continue
        return False
    return True


@dataclass
class StepRecord:
    n: int
    eps: float
    approximant: PiecewisePoly
    images: list[GridFn]  # monotone-enforced operator image per component
    certificate: ResidualCertificate
    repairs: int
    sup_gap_to_rhs: float
    cauchy_gap_prev: float


@dataclass
class SolutionTrace:
    """A computable generalized solution: the Cauchy sequence of certified
    approximants together with its envelope.

    The lower envelope is the regularized final image; the upper partner
    stored here is the right-hand side itself, which certifies the band
    from above (no approximant sequence from above is constructed).
    """

    label: str
    axes: tuple[np.ndarray, ...]
    rhs_grid: list[GridFn]
    steps: list[StepRecord]
    envelope: list[EnvelopePair]
    upper_is_rhs_witness: bool = True

    @property
    def total_repairs(self) -> int:
        return sum(s.repairs for s in self.steps)

    @property
    def all_certified(self) -> bool:
        return all(s.certificate.passed for s in self.steps)


def _sup_gap(a: GridFn, b: GridFn) -> float:
    sel = _off_mask(a, b)
    if not sel.any():
        return 0.0
    return float(np.max(np.abs(a.values[sel] - b.values[sel])))


def refine_solution(system: ex.PdeSystem, rhs, p: CellPartition, n_max: int, axes, *,
                    eta: float = 1e-9, seed: int = 0, samples_per_cell: int | None = None,
                    margin: float = 0.05, workers: int = 1, label: str = "",
                    image_hook=None) -> SolutionTrace:
    """Run the band construction for eps = 1, 1/2, ..., 1/n_max.

    The partition is fixed to the one the finest step needs, so every
    step shares centers and skeleton and the image sequence increases
    pointwise; the running nodewise maximum makes that an invariant and
    repairs count any node where a raw image dropped below the running
    maximum by more than eta.  ``image_hook`` is a test seam that may
    replace the raw images of a step before monotonicity enforcement.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    U_fine, _ = global_approx(system, rhs, p, 1.0 / n_max, eta=eta,
                              samples_per_cell=samples_per_cell, margin=margin,
                              seed=seed, workers=workers)
    base = U_fine.partition
    shape = tuple(len(a) for a in axes)
    nodes = lattice_nodes(axes)
    fvals = rhs(nodes)
    rhs_grid = [GridFn(axes, fvals[i].reshape(shape)) for i in range(system.K)]

    steps: list[StepRecord] = []
    running: list[GridFn] | None = None
    for n in range(1, n_max + 1):
        eps = 1.0 / n
        U_n, cert = global_approx(system, rhs, base, eps, eta=eta,
                                  samples_per_cell=samples_per_cell, margin=margin,
                                  seed=seed, workers=workers)
        raw = operator_image(system, U_n, axes)
        if image_hook is not None:
            raw = image_hook(n, raw)
        repairs = 0
        if running is None:
            enforced = raw
        else:
            enforced = []
            for prev, cur in zip(running, raw):
                sel = _off_mask(prev, cur)
                repairs += int(np.sum(cur.values[sel] < prev.values[sel] - eta))
                merged = np.maximum(prev.values, cur.values)
                mask = prev.mask_array() & cur.mask_array()
                enforced.append(GridFn(cur.axes, merged, mask))
        gap = max(_sup_gap(img, fg) for img, fg in zip(enforced, rhs_grid))
        cprev = 0.0
        if running is not None:
            cprev = max(_sup_gap(a, b) for a, b in zip(enforced, running))
        steps.append(StepRecord(n=n, eps=eps, approximant=U_n, images=enforced,
                                certificate=cert, repairs=repairs,
                                sup_gap_to_rhs=gap, cauchy_gap_prev=cprev))
        running = enforced
    envelope = [
        EnvelopePair(lower=nlsc_regularize(img), upper=fg)
        for img, fg in zip(running, rhs_grid)
    ]
    return SolutionTrace(label=label, axes=axes, rhs_grid=rhs_grid, steps=steps,
                         envelope=envelope)


def cauchy_gap(trace: SolutionTrace, n1: int, n2: int) -> np.ndarray:
    """Per-component sup of |image_{n1} - image_{n2}| off the masks."""
    if not (1 <= n1 <= len(trace.steps) and 1 <= n2 <= len(trace.steps)):
        raise ValueError("step index out of range")
    a = trace.steps[n1 - 1].images
    b = trace.steps[n2 - 1].images
    return np.asarray([_sup_gap(x, y) for x, y in zip(a, b)])


def trace_csv_rows(trace: SolutionTrace) -> list[str]:
    rows = ["n,eps,max_residual,min_residual,gap,repairs"]
    for s in trace.steps:
        rows.append(
            f"{s.n},{repr(s.eps)},{repr(s.certificate.max_residual)},"
            f"{repr(s.certificate.min_residual)},{repr(s.cauchy_gap_prev)},{s.repairs}"
        )
    return rows
