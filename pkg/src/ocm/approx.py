"""One-sided piecewise polynomial approximation with residual certificates.

Given a system ``T u = f`` and a band width ``eps``, the construction
places one Taylor piece per subcell, with the jet at the subcell center
solved so that the residual there equals exactly ``-eps/2``.  Subcell
diameters come from a probe-and-halve search for a radius on which the
sampled residual stays inside ``[-eps - eta, eta]``.  A certificate then
re-checks the band on an independent off-skeleton sample set.

The jet solve is deterministic by construction: one designated pivot
slot per equation, a geometric bracket scan out to |t| = 1e6, and plain
bisection.  No randomness, no multi-start iterations.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import expr as ex
from .domain import Box, CellPartition, Skeleton, sample_points, skeleton_of, subdivide

__all__ = [
    "JetPoint",
    "TaylorPiece",
    "PiecewisePoly",
    "ComponentStats",
    "ResidualCertificate",
    "RangeViolation",
    "DeltaCollapse",
    "taylor_poly",
    "solve_jet",
    "default_pivots",
    "local_approx",
    "global_approx",
    "check_residual",
    "rhs_from_exprs",
    "certificate_csv_rows",
]

SOLVE_TOL = 1e-10
BISECT_TOL = 1e-12
SCAN_LIMIT = 1e6
DELTA_FLOOR_FACTOR = 1e-6
DEFAULT_ETA = 1e-9
DEFAULT_MARGIN = 0.05
TARGET_SAMPLES = 10_000


class RangeViolation(Exception):
    """No jet can reach the requested operator value.

    Raised when the bracket scan finds no sign change within the scan
    window.  This means either the right-hand side leaves the attainable
    range of the operator at this point (no classical solution nearby),
    or the pivot slot was a poor choice for this equation; the two cases
    cannot be told apart from scan failure alone.
    """

    def __init__(self, component: int, x, detail: str = ""):
        self.component = component
        self.x = tuple(float(v) for v in np.atleast_1d(x))
        msg = (
            f"component {component} at x={self.x}: bracket scan found no sign change "
            f"within |t| <= {SCAN_LIMIT:g} (range condition violated or pivot ill-chosen)"
        )
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)


class DeltaCollapse(Exception):
    """Validity radius shrank to the floor without the band check passing."""

    def __init__(self, x, delta: float):
        self.x = tuple(float(v) for v in np.atleast_1d(x))
        super().__init__(
            f"validity radius collapsed to {delta:g} at x={self.x} without certifying the band"
        )


@dataclass(frozen=True)
class JetPoint:
    """Prescribed derivative values at a point: (component, alpha) -> value."""

    x0: tuple[float, ...]
    values: dict[tuple[int, tuple[int, ...]], float]

    def as_vector(self, system: ex.PdeSystem) -> np.ndarray:
        out = np.zeros(system.M)
        for (j, alpha), v in self.values.items():
            out[system.slot(j, alpha)] = v
        return out


@lru_cache(maxsize=None)
def _deriv_ratios(alphas: tuple[tuple[int, ...], ...]) -> np.ndarray:
    """ratio[a, b] = alpha! / (alpha - beta)! when alpha >= beta, else 0."""
    A = len(alphas)
    out = np.zeros((A, A))
    for a, alpha in enumerate(alphas):
        for b, beta in enumerate(alphas):
            if all(ai >= bi for ai, bi in zip(alpha, beta)):
                r = 1.0
                for ai, bi in zip(alpha, beta):
                    r *= math.factorial(ai) / math.factorial(ai - bi)
                out[a, b] = r
    return out


def _power_table(dx: np.ndarray, m: int) -> list[np.ndarray]:
    """pow[d][k] = dx[:, d] ** k for k = 0..m."""
    out = []
    for d in range(dx.shape[1]):
        col = [np.ones(len(dx))]
        for _ in range(m):
            col.append(col[-1] * dx[:, d])
        out.append(col)
    return out


def _jets_from_coeffs(coeffs: np.ndarray, centers: np.ndarray, alphas, pts: np.ndarray) -> np.ndarray:
    """Evaluate all derivatives D^beta of all components at pts.

    coeffs: (N, K, A) per-point piece coefficients, centers: (N, n).
    Returns (N, K, A) with entry [:, j, b] = D^{beta_b} P_j(pt).
    """
    alphas = tuple(alphas)
    m = max(sum(a) for a in alphas)
    ratios = _deriv_ratios(alphas)
    dx = pts - centers
    pw = _power_table(dx, m)
    N, K, A = coeffs.shape
    jets = np.zeros((N, K, A))
    for b, beta in enumerate(alphas):
        acc = np.zeros((N, K))
        for a, alpha in enumerate(alphas):
            if ratios[a, b] == 0.0:
                continue
            mono = np.ones(N)
            for d in range(len(beta)):
                k = alpha[d] - beta[d]
                if k:
                    mono = mono * pw[d][k]
            acc += coeffs[:, :, a] * (ratios[a, b] * mono)[:, None]
        jets[:, :, b] = acc
    return jets


@dataclass
class TaylorPiece:
    """One polynomial piece: coefficients c_{j,alpha} = xi_{j,alpha} / alpha!."""

    center: tuple[float, ...]
    alphas: tuple[tuple[int, ...], ...]
    coeffs: np.ndarray  # (K, A)

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    def eval_component(self, j: int, pts: np.ndarray) -> np.ndarray:
        return self.deriv_component(j, (0,) * len(self.center), pts)

    def deriv_component(self, j: int, beta, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        b = self.alphas.index(tuple(beta))
        centers = np.broadcast_to(np.asarray(self.center), pts.shape)
        coeffs = np.broadcast_to(self.coeffs, (len(pts),) + self.coeffs.shape)
        return _jets_from_coeffs(coeffs, centers, self.alphas, pts)[:, j - 1, b]

    def jet_all(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        centers = np.broadcast_to(np.asarray(self.center), pts.shape)
        coeffs = np.broadcast_to(self.coeffs, (len(pts),) + self.coeffs.shape)
        return _jets_from_coeffs(coeffs, centers, self.alphas, pts)


def taylor_poly(x0, xi) -> TaylorPiece:
    """Build the polynomial whose derivatives at x0 realize the jet xi.

    xi may be a JetPoint or a complete mapping (j, alpha) -> value over
    all components and all multi-indices of order <= m.
    """
    values = xi.values if isinstance(xi, JetPoint) else dict(xi)
    x0 = tuple(float(v) for v in x0)
    n = len(x0)
    K = max(j for j, _ in values)
    m = max(sum(alpha) for _, alpha in values)
    alphas = ex.multi_indices(n, m)
    expected = {(j, a) for j in range(1, K + 1) for a in alphas}
    if set(values) != expected:
        raise ValueError("jet is not complete over components x multi-indices")
    coeffs = np.zeros((K, len(alphas)))
    for (j, alpha), v in values.items():
        coeffs[j - 1, alphas.index(alpha)] = float(v) / ex.multi_factorial(alpha)
    return TaylorPiece(center=x0, alphas=alphas, coeffs=coeffs)


@dataclass
class PiecewisePoly:
    """One Taylor piece per subcell, smooth off the face skeleton."""

    partition: CellPartition
    skeleton: Skeleton
    alphas: tuple[tuple[int, ...], ...]
    coeffs: np.ndarray  # (S, K, A)
    centers: np.ndarray  # (S, n)

    @property
    def K(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_pieces(self) -> int:
        return self.coeffs.shape[0]

    def piece(self, s: int) -> TaylorPiece:
        return TaylorPiece(
            center=tuple(self.centers[s]), alphas=self.alphas, coeffs=self.coeffs[s].copy()
        )

    def jets(self, pts: np.ndarray) -> np.ndarray:
        """Full jets (N, K, A) at off-skeleton points; on-face points raise."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        loc, on_face = self.partition.locate(pts)
        if on_face.any():
            raise ValueError("point lies on the skeleton; jets undefined there")
        return _jets_from_coeffs(self.coeffs[loc], self.centers[loc], self.alphas, pts)

    def eval_component(self, j: int, pts: np.ndarray) -> np.ndarray:
        zero = self.alphas.index((0,) * self.partition.n)
        return self.jets(pts)[:, j - 1, zero]

    @classmethod
    def from_pieces(cls, partition: CellPartition, pieces: list[TaylorPiece]) -> "PiecewisePoly":
        if len(pieces) != partition.total_subcells:
            raise ValueError("need exactly one piece per subcell")
        alphas = pieces[0].alphas
        coeffs = np.stack([p.coeffs for p in pieces])
        centers = np.asarray([p.center for p in pieces], dtype=float)
        return cls(
            partition=partition,
            skeleton=skeleton_of(partition),
            alphas=alphas,
            coeffs=coeffs,
            centers=centers,
        )


# ---------------------------------------------------------------------------
# right-hand sides

def rhs_from_exprs(texts, n: int):
    """Compile rhs strings in x into a vector evaluator pts (N,n) -> (K,N)."""
    trees = [ex.parse_rhs(t, n) for t in texts]
    dummy = ex.PdeSystem(n=n, K=1, m=0, components=(ex.Const(0.0),))

    def evaluate(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        X = pts.T
        XI = np.zeros((1, len(pts)))
        with np.errstate(all="ignore"):
            return np.stack([np.asarray(ex._eval_batch(t, X, XI, dummy)) + np.zeros(len(pts)) for t in trees])

    return evaluate


# ---------------------------------------------------------------------------
# jet solving

def default_pivots(system: ex.PdeSystem) -> tuple:
    """One pivot slot per equation: the equation's own zeroth-order slot
    when referenced, else its first referenced derivative slot; pivots
    are kept distinct across equations."""
    used: set = set()
    pivots = []
    zero_alpha = (0,) * system.n
    for i, comp in enumerate(system.components, start=1):
        refs = ex.jet_slots_of(comp)
        if not refs:
            pivots.append(None)
            continue
        ordered = sorted(refs)
        pick = None
        if (i, zero_alpha) in refs and (i, zero_alpha) not in used:
            pick = (i, zero_alpha)
        if pick is None:
            pick = next((s for s in ordered if sum(s[1]) >= 1 and s not in used), None)
        if pick is None:
            pick = next((s for s in ordered if s not in used), None)
        if pick is None:
            raise ValueError(
                f"cannot assign a distinct pivot slot to equation {i}; "
                "pass explicit pivots"
            )
        used.add(pick)
        pivots.append(pick)
    return tuple(pivots)


def _scan_candidates() -> np.ndarray:
    ups = [2.0**k for k in range(20)] + [SCAN_LIMIT]
    return np.asarray(sorted({-t for t in ups} | {0.0} | set(ups)))


def _solve_jet_batch(system, centers: np.ndarray, targets: np.ndarray, anchor, pivots) -> np.ndarray:
    """Solve the pivot slots so every component meets its target at its center.

    centers: (S, n); targets: (S, K).  Returns jet vectors (S, M).
    Equations are solved in order; if pivot slots couple equations, extra
    sweeps run until every residual is within SOLVE_TOL.
    """
    S = len(centers)
    K = system.K
    X = centers.T.copy()
    if anchor is None:
        XI = np.zeros((system.M, S))
    else:
        XI = np.tile(np.asarray(anchor, dtype=float).reshape(-1, 1), (1, S))
    pivot_rows = [None if p is None else system.slot(*p) for p in pivots]
    cands = _scan_candidates()

    def g(i, tvals):
        row = pivot_rows[i]
        XI[row] = tvals
        return ex.eval_component_batch(system, i, X, XI) - targets[:, i]

    for sweep in range(8):
        for i in range(K):
            if pivot_rows[i] is None:
                resid = ex.eval_component_batch(system, i, X, XI) - targets[:, i]
                bad = ~(np.abs(resid) <= SOLVE_TOL)
                if bad.any():
                    w = int(np.argmax(bad))
                    raise RangeViolation(i + 1, centers[w], "equation has no jet slots to adjust")
                continue
            lo = np.zeros(S)
            hi = np.zeros(S)
            glo = np.zeros(S)
            found = np.zeros(S, dtype=bool)
            prev_t = None
            prev_g = None
            prev_ok = None
            for t in cands:
                gt = g(i, np.full(S, t))
                ok = np.isfinite(gt)
                if prev_t is not None:
                    sel = ~found & prev_ok & ok & (np.sign(prev_g) * np.sign(gt) <= 0)
                    if sel.any():
                        lo[sel] = prev_t
                        glo[sel] = prev_g[sel]
                        hi[sel] = t
                        found |= sel
                prev_t, prev_g, prev_ok = t, gt, ok
            if not found.all():
                w = int(np.argmax(~found))
                raise RangeViolation(i + 1, centers[w])
            # bisection: 80 halvings take the bracket width below 1e-12
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                gm = g(i, mid)
                go_right = np.sign(gm) * np.sign(glo) > 0
                lo = np.where(go_right, mid, lo)
                glo = np.where(go_right, gm, glo)
                hi = np.where(go_right, hi, mid)
                if np.max(hi - lo) <= BISECT_TOL * 1e-3:
                    break
            XI[pivot_rows[i]] = 0.5 * (lo + hi)
        worst = 0.0
        for i in range(K):
            resid = ex.eval_component_batch(system, i, X, XI) - targets[:, i]
            finite = np.isfinite(resid)
            if not finite.all():
                w = int(np.argmax(~finite))
                raise RangeViolation(i + 1, centers[w], "operator undefined at solved jet")
            worst = max(worst, float(np.max(np.abs(resid))))
        if worst <= SOLVE_TOL:
            return XI.T.copy()
    raise RangeViolation(1, centers[0], f"coupled pivots failed to converge (residual {worst:g})")


def solve_jet(system: ex.PdeSystem, x0, target, anchor: JetPoint | None = None, pivots=None) -> JetPoint:
    """Find a jet xi with F_i(x0, xi) = target_i for every component.

    All slots keep the anchor value (default 0); only the pivot slots
    move, one per equation, found by bracket scan plus bisection.
    """
    x0 = tuple(float(v) for v in x0)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if len(target) != system.K:
        raise ValueError(f"target has {len(target)} entries, expected K={system.K}")
    if pivots is None:
        pivots = default_pivots(system)
    anchor_vec = None if anchor is None else anchor.as_vector(system)
    XI = _solve_jet_batch(system, np.asarray([x0]), target.reshape(1, -1), anchor_vec, pivots)[0]
    alphas = system.alphas
    values = {
        (j, alpha): float(XI[system.slot(j, alpha)])
        for j in range(1, system.K + 1)
        for alpha in alphas
    }
    return JetPoint(x0=x0, values=values)


# ---------------------------------------------------------------------------
# local and global construction

def _ball_points(x0: np.ndarray, delta: float, box: Box) -> np.ndarray:
    """Deterministic verification samples in the closed ball, clipped to the box."""
    n = len(x0)
    if n == 1:
        pts = np.linspace(x0[0] - delta, x0[0] + delta, 33).reshape(-1, 1)
    else:
        per_axis = 9 if n == 2 else 5
        grids = [np.linspace(x0[d] - delta, x0[d] + delta, per_axis) for d in range(n)]
        mesh = np.meshgrid(*grids, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        pts = pts[np.linalg.norm(pts - x0, axis=1) <= delta * (1 + 1e-12)]
    pts = np.clip(pts, np.asarray(box.lo), np.asarray(box.hi))
    return np.vstack([pts, x0])


def _band_ok(system, piece: TaylorPiece, rhs, pts: np.ndarray, eps: float, eta: float) -> bool:
    jets = piece.jet_all(pts)
    XI = jets.reshape(len(pts), -1).T
    fvals = rhs(pts)
    for i in range(system.K):
        tv = ex.eval_component_batch(system, i, pts.T, XI)
        r = tv - fvals[i]
        if not np.all(np.isfinite(r)):
            return False
        if np.max(r) > eta or np.min(r) < -eps - eta:
            return False
    return True


def local_approx(system: ex.PdeSystem, rhs, x0, eps: float, *, box: Box,
                 start_delta: float | None = None, eta: float = DEFAULT_ETA,
                 pivots=None) -> tuple[float, TaylorPiece]:
    """One polynomial valid on a ball around x0.

    The jet at x0 is solved for the target f(x0) - eps/2, centering the
    residual in the band; the radius starts at start_delta and halves
    until the sampled band check passes.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.asarray(x0, dtype=float)
    f0 = rhs(x0.reshape(1, -1))[:, 0]
    jet = solve_jet(system, x0, f0 - 0.5 * eps, pivots=pivots)
    piece = taylor_poly(tuple(x0), jet)
    delta = float(start_delta) if start_delta is not None else box.diameter
    floor = DELTA_FLOOR_FACTOR * max(box.sides)
    while True:
        if _band_ok(system, piece, rhs, _ball_points(x0, delta, box), eps, eta):
            return delta, piece
        delta *= 0.5
        if delta < floor:
            raise DeltaCollapse(x0, delta)


_PROBE_FRACTIONS = (0.25, 0.5, 0.75)


def global_approx(system: ex.PdeSystem, rhs, p: CellPartition, eps: float, *,
                  eta: float = DEFAULT_ETA, samples_per_cell: int | None = None,
                  margin: float = DEFAULT_MARGIN, seed: int = 0,
                  workers: int = 1) -> tuple[PiecewisePoly, "ResidualCertificate"]:
    """Assemble a certified one-sided approximant over the whole partition.

    Probes a 3^n grid in every cell with local_approx to pick the
    subdivision diameter, re-solves the jet at every subcell center, and
    certifies the band on a fresh off-skeleton sample set.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = p.n
    pivots = default_pivots(system)
    probe_offsets = list(itertools.product(_PROBE_FRACTIONS, repeat=n))

    def probe_cell(flat: int) -> float:
        cbox = p.cell_box(flat)
        best = math.inf
        for frac in probe_offsets:
            x0 = tuple(a + f * (b - a) for a, b, f in zip(cbox.lo, cbox.hi, frac))
            delta, _ = local_approx(
                system, rhs, x0, eps,
                box=p.bounds, start_delta=cbox.diameter, eta=eta, pivots=pivots,
            )
            best = min(best, delta)
        return best

    cell_ids = list(range(p.n_cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            deltas = list(pool.map(probe_cell, cell_ids))
    else:
        deltas = [probe_cell(c) for c in cell_ids]
    delta_min = min(deltas)

    fine = subdivide(p, delta_min)
    skel = skeleton_of(fine)
    centers = fine.subcell_centers()
    targets = rhs(centers).T - 0.5 * eps
    if not np.all(np.isfinite(targets)):
        raise ValueError("right-hand side not finite at subcell centers")
    jets = _solve_jet_batch(system, centers, targets, None, pivots)
    A = len(system.alphas)
    coeffs = jets.reshape(len(centers), system.K, A) / np.asarray(
        [ex.multi_factorial(a) for a in system.alphas]
    )
    U = PiecewisePoly(partition=fine, skeleton=skel, alphas=system.alphas,
                      coeffs=coeffs, centers=centers)
    if samples_per_cell is None:
        samples_per_cell = max(1, math.ceil(TARGET_SAMPLES / fine.total_subcells))
    samples = sample_points(fine, samples_per_cell, margin, seed)
    cert = check_residual(system, U, rhs, eps, samples, eta=eta, workers=workers)
    return U, cert


# ---------------------------------------------------------------------------
# certification

@dataclass
class ComponentStats:
    component: int
    samples: int
    min_residual: float
    max_residual: float
    passed: bool
    offenders: list[tuple[tuple[float, ...], float]] = field(default_factory=list)


@dataclass
class ResidualCertificate:
    """Recorded evidence that the residual stays in [-eps - eta, eta]."""

    eps: float
    eta: float
    components: list[ComponentStats]
    insufficient: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.components)

    @property
    def min_residual(self) -> float:
        return min((c.min_residual for c in self.components), default=math.nan)

    @property
    def max_residual(self) -> float:
        return max((c.max_residual for c in self.components), default=math.nan)


def check_residual(system: ex.PdeSystem, U: PiecewisePoly, rhs, eps: float, samples,
                   *, eta: float = DEFAULT_ETA, workers: int = 1) -> ResidualCertificate:
    """Independent band check at the given off-skeleton samples."""
    if tuple(U.alphas) != system.alphas or U.K != system.K:
        raise ValueError("approximant jet layout does not match the system")
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    if pts.size == 0:
        stats = [
            ComponentStats(component=i + 1, samples=0, min_residual=math.nan,
                           max_residual=math.nan, passed=True)
            for i in range(system.K)
        ]
        return ResidualCertificate(eps=eps, eta=eta, components=stats, insufficient=True)
    if U.skeleton.contains_batch(pts).any():
        raise ValueError("verification sample lies on the skeleton")

    def residuals(chunk: np.ndarray) -> np.ndarray:
        jets = U.jets(chunk)
        XI = jets.reshape(len(chunk), -1).T
        fv = rhs(chunk)
        out = np.empty((system.K, len(chunk)))
        for i in range(system.K):
            out[i] = ex.eval_component_batch(system, i, chunk.T, XI) - fv[i]
        return out

    chunk_size = 65536
    chunks = [pts[i: i + chunk_size] for i in range(0, len(pts), chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(residuals, chunks))
    else:
        parts = [residuals(c) for c in chunks]
    res = np.concatenate(parts, axis=1)

    stats = []
    for i in range(system.K):
        r = res[i]
        finite = np.isfinite(r)
        rmin = float(np.min(r[finite])) if finite.any() else math.nan
        rmax = float(np.max(r[finite])) if finite.any() else math.nan
        ok = bool(finite.all()) and rmin >= -eps - eta and rmax <= eta
        bad = ~finite | (r > eta) | (r < -eps - eta)
        offenders = []
        if bad.any():
            excess = np.where(np.isfinite(r), np.maximum(r - eta, (-eps - eta) - r), np.inf)
            worst = np.argsort(-excess)[:5]
            offenders = [(tuple(map(float, pts[w])), float(r[w])) for w in worst if bad[w]]
        stats.append(
            ComponentStats(component=i + 1, samples=int(len(r)), min_residual=rmin,
                           max_residual=rmax, passed=ok, offenders=offenders)
        )
    return ResidualCertificate(eps=eps, eta=eta, components=stats)


def certificate_csv_rows(cert: ResidualCertificate) -> list[str]:
    rows = ["component,samples,min_residual,max_residual,eps,eta,pass"]
    for c in cert.components:
        rows.append(
            f"{c.component},{c.samples},{repr(c.min_residual)},{repr(c.max_residual)},"
            f"{repr(cert.eps)},{repr(cert.eta)},{'true' if c.passed else 'false'}"
        )
    return rows
