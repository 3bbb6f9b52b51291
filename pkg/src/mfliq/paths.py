"""Time grids, Brownian ensembles, and conditional-expectation estimators.

Two estimators realize every conditional expectation on the common-noise
filtration:

* ``project_common``  — average over idiosyncratic particles, per common
  path (consistent as the idiosyncratic count grows);
* ``regress_conditional`` — least-squares projection of a future quantity
  onto polynomials of the common Brownian value at the conditioning time,
  across common paths (the Longstaff-Schwartz device).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, ShapeError

DETERMINISTIC = "deterministic"
COMMON = "common"
FULL = "full"


# ---------------------------------------------------------------------------
# time grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes 0 = t_0 < ... < t_K = T.

    The block of nodes from ``switch_index`` on is geometrically refined:
    the distance to T shrinks by ``ratio`` per node, ending at
    ``epsilon_final`` = T - t_{K-1}.  Quantities that blow up at T are only
    ever evaluated at interior nodes or by closed-form limits.
    """

    T: float
    nodes: np.ndarray
    switch_index: int
    ratio: float
    epsilon_final: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def time_to_go(self) -> np.ndarray:
        return self.T - self.nodes

    def index_of(self, t: float, tol: float = 1e-10) -> int:
        k = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[k] - t) > tol * max(1.0, self.T):
            raise GridError(f"time {t} is not a grid node")
        return k


def build_grid(T: float, n_uniform: int, n_refined: int, ratio: float,
               epsilon_final: float) -> TimeGrid:
    """Construct a uniform-then-geometric grid.

    The refined block spans ``epsilon_final / ratio**n_refined`` before T;
    the uniform block covers the rest with equal steps.  With refinement
    the grid has ``n_uniform + n_refined + 2`` nodes (uniform block,
    refined block, terminal node); without it, ``n_uniform + 1``.
    """
    if T <= 0:
        raise GridError("T must be positive")
    if not 0.0 < ratio < 1.0:
        raise GridError("ratio must lie in (0, 1)")
    if not 0.0 < epsilon_final < T:
        raise GridError("epsilon_final must lie in (0, T)")
    if n_uniform < 0 or n_refined < 0 or n_uniform + n_refined < 1:
        raise GridError("need at least one step")

    if n_refined == 0:
        nodes = np.linspace(0.0, T, n_uniform + 1)
        return TimeGrid(T=T, nodes=nodes, switch_index=n_uniform, ratio=ratio,
                        epsilon_final=float(nodes[-1] - nodes[-2]))

    span = epsilon_final / ratio ** n_refined
    if span > T * (1.0 + 1e-12):
        raise GridError(
            f"refined gaps conflict: epsilon_final/ratio^n_refined = {span:.6g} "
            f"exceeds the horizon T = {T:.6g}")
    t_switch = T - span
    if n_uniform == 0:
        if abs(t_switch) > 1e-9 * T:
            raise GridError(
                "with n_uniform = 0 the refined block must span [0, T]: "
                f"epsilon_final/ratio^n_refined = {span:.6g} != T = {T:.6g}")
        t_switch = 0.0
        uniform = np.array([0.0])
    else:
        if t_switch <= 0.0:
            raise GridError("refined block covers the whole horizon; use n_uniform = 0")
        uniform = np.linspace(0.0, t_switch, n_uniform + 1)

    j = np.arange(1, n_refined + 1)
    refined = T - span * ratio ** j
    nodes = np.concatenate([uniform, refined, [T]])
    if np.any(np.diff(nodes) <= 0):
        raise GridError("grid nodes are not strictly increasing; adjust parameters")
    return TimeGrid(T=T, nodes=nodes, switch_index=n_uniform, ratio=ratio,
                    epsilon_final=float(T - nodes[-2]))


def default_grid(T: float, n_uniform: int = 200, n_refined: int = 100,
                 epsilon_final: float | None = None,
                 refined_span: float = 0.08) -> TimeGrid:
    """Default grid: 200 uniform steps, then 100 geometric ones over the
    last ``refined_span`` fraction of the horizon, ending at a final gap of
    ``1e-4 * T``.  The ratio is derived from those three quantities."""
    eps = 1e-4 * T if epsilon_final is None else epsilon_final
    ratio = (eps / (refined_span * T)) ** (1.0 / n_refined)
    return build_grid(T, n_uniform, n_refined, ratio, eps)


# ---------------------------------------------------------------------------
# Brownian ensembles
# ---------------------------------------------------------------------------

@dataclass
class ParticleEnsemble:
    """Common-noise paths times idiosyncratic paths, stored as increments.

    ``dw_common`` has shape (M_common, K); ``dw_idio`` has shape
    (M_common, M_idio, K).  The two blocks come from independent generator
    streams so they are statistically independent and bit-reproducible.
    """

    grid: TimeGrid
    m_common: int
    m_idio: int
    seed: int
    dw_common: np.ndarray
    dw_idio: np.ndarray
    _w_common: np.ndarray | None = field(default=None, repr=False)
    _w_idio: np.ndarray | None = field(default=None, repr=False)

    def common_paths(self) -> np.ndarray:
        """Common Brownian values at the nodes, shape (M_common, K+1)."""
        if self._w_common is None:
            w = np.zeros((self.m_common, self.grid.n_nodes))
            np.cumsum(self.dw_common, axis=-1, out=w[:, 1:])
            self._w_common = w
        return self._w_common

    def idio_paths(self) -> np.ndarray:
        """Idiosyncratic Brownian values, shape (M_common, M_idio, K+1)."""
        if self._w_idio is None:
            w = np.zeros((self.m_common, self.m_idio, self.grid.n_nodes))
            np.cumsum(self.dw_idio, axis=-1, out=w[:, :, 1:])
            self._w_idio = w
        return self._w_idio


def simulate_ensemble(grid: TimeGrid, m_common: int, m_idio: int, seed: int) -> ParticleEnsemble:
    """Draw all Brownian increments for the particle system.

    Increment variance per step equals the step length.  Re-running with the
    same arguments reproduces the ensemble bit-exactly.
    """
    if m_common < 1 or m_idio < 1:
        raise ValueError("m_common and m_idio must be >= 1")
    ss = np.random.SeedSequence(int(seed))
    child_common, child_idio = ss.spawn(2)
    rng_c = np.random.default_rng(child_common)
    rng_i = np.random.default_rng(child_idio)
    sqdt = np.sqrt(grid.dt)
    dw_common = rng_c.standard_normal((m_common, grid.n_steps)) * sqdt
    dw_idio = rng_i.standard_normal((m_common, m_idio, grid.n_steps)) * sqdt
    return ParticleEnsemble(grid=grid, m_common=m_common, m_idio=m_idio, seed=int(seed),
                            dw_common=dw_common, dw_idio=dw_idio)


def ensemble_to_csv(ensemble: ParticleEnsemble, path) -> None:
    """Dump all increments to a portable CSV (debugging aid)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "i_common", "i_idio", "step", "increment"])
        for i in range(ensemble.m_common):
            for k in range(ensemble.grid.n_steps):
                writer.writerow(["common", i, "", k, repr(float(ensemble.dw_common[i, k]))])
        for i in range(ensemble.m_common):
            for j in range(ensemble.m_idio):
                for k in range(ensemble.grid.n_steps):
                    writer.writerow(["idio", i, j, k, repr(float(ensemble.dw_idio[i, j, k]))])


def ensemble_from_csv(grid: TimeGrid, path, seed: int = -1) -> ParticleEnsemble:
    """Rebuild an ensemble from a CSV dump (bit-exact roundtrip)."""
    rows = {"common": [], "idio": []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows[row["block"]].append(row)
    mc = 1 + max(int(r["i_common"]) for r in rows["common"])
    mi = 1 + max(int(r["i_idio"]) for r in rows["idio"]) if rows["idio"] else 1
    dw_common = np.zeros((mc, grid.n_steps))
    dw_idio = np.zeros((mc, mi, grid.n_steps))
    for r in rows["common"]:
        dw_common[int(r["i_common"]), int(r["step"])] = float(r["increment"])
    for r in rows["idio"]:
        dw_idio[int(r["i_common"]), int(r["i_idio"]), int(r["step"])] = float(r["increment"])
    return ParticleEnsemble(grid=grid, m_common=mc, m_idio=mi, seed=seed,
                            dw_common=dw_common, dw_idio=dw_idio)


# ---------------------------------------------------------------------------
# adapted fields
# ---------------------------------------------------------------------------

@dataclass
class AdaptedField:
    """A process sampled on the grid with an explicit measurability tag.

    Canonical value shapes (K+1 = node count):

    * deterministic: ``(K+1,)``
    * common (measurable w.r.t. the common factor): ``(M_common, 1, K+1)``
    * full: ``(M_common, M_idio, K+1)``

    Common fields are constant across the idiosyncratic index by
    construction; deterministic fields are constant across both particle
    indices.
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in (DETERMINISTIC, COMMON, FULL):
            raise ValueError(f"unknown measurability tag {self.kind!r}")
        if self.kind == DETERMINISTIC and self.values.ndim != 1:
            raise ShapeError("deterministic fields must have shape (K+1,)")
        if self.kind in (COMMON, FULL) and self.values.ndim != 3:
            raise ShapeError("stochastic fields must have shape (M_common, m, K+1)")
        if self.kind == COMMON and self.values.shape[1] != 1:
            raise ShapeError("common fields must be stored with a singleton idio axis")

    @classmethod
    def deterministic(cls, values) -> "AdaptedField":
        return cls(np.asarray(values, dtype=float), DETERMINISTIC)

    @classmethod
    def common(cls, values) -> "AdaptedField":
        v = np.asarray(values, dtype=float)
        if v.ndim == 2:
            v = v[:, None, :]
        return cls(v, COMMON)

    @classmethod
    def full(cls, values) -> "AdaptedField":
        return cls(np.asarray(values, dtype=float), FULL)

    def check_shape(self, ensemble: ParticleEnsemble) -> None:
        kn = ensemble.grid.n_nodes
        if self.values.shape[-1] != kn:
            raise ShapeError(f"field has {self.values.shape[-1]} nodes, grid has {kn}")
        if self.kind != DETERMINISTIC:
            if self.values.shape[0] != ensemble.m_common:
                raise ShapeError("field common axis does not match the ensemble")
            if self.kind == FULL and self.values.shape[1] != ensemble.m_idio:
                raise ShapeError("field idio axis does not match the ensemble")


def project_common(ensemble: ParticleEnsemble, field: AdaptedField) -> AdaptedField:
    """Conditional expectation given the common factor at each node.

    For a full field this is the arithmetic mean over the idiosyncratic
    index per common path; common and deterministic fields are returned
    unchanged (the projection is idempotent and exactly linear).
    """
    field.check_shape(ensemble)
    if field.kind != FULL:
        return field
    return AdaptedField(field.values.mean(axis=1, keepdims=True), COMMON)


def project_values(values: np.ndarray) -> np.ndarray:
    """Array-level projection used inside the solvers."""
    if values.ndim == 3 and values.shape[1] > 1:
        return values.mean(axis=1, keepdims=True)
    return values


# ---------------------------------------------------------------------------
# regression estimator for conditional expectations of future values
# ---------------------------------------------------------------------------

def _poly_basis(x: np.ndarray, degree: int) -> np.ndarray:
    """Vandermonde in a scale-normalized variable, shape (n, degree+1)."""
    s = x.std()
    z = (x - x.mean()) / s if s > 0 else np.zeros_like(x)
    return np.vander(z, degree + 1, increasing=True)


def _orthonormal_basis(design: np.ndarray):
    """Column-orthonormal basis of the design span, dropping rank-deficient
    columns (returns the basis and the retained column count)."""
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    tol = design.shape[0] * np.finfo(float).eps * (diag.max() if diag.size else 1.0)
    keep = diag > tol
    return q[:, keep], int(keep.sum())


class ConditionalRegression:
    """Per-node least-squares projections onto polynomials of the common
    Brownian value (and, for full fields, of the idiosyncratic value too).

    The projector is a fixed linear map per node, so repeated application
    is deterministic and the whole solve stays affine in its inputs.
    """

    def __init__(self, ensemble: ParticleEnsemble, degree: int = 3):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.ensemble = ensemble
        self.degree = degree
        self.fallback_nodes: list[int] = []
        w = ensemble.common_paths()
        self._bases = []
        max_deg = max(0, min(degree, ensemble.m_common - 2))
        for k in range(ensemble.grid.n_nodes):
            design = _poly_basis(w[:, k], max_deg)
            q, rank = _orthonormal_basis(design)
            if rank < design.shape[1]:
                self.fallback_nodes.append(k)
            self._bases.append(q)
        self._full_bases: dict[int, np.ndarray] = {}

    def apply_common(self, k: int, values: np.ndarray) -> np.ndarray:
        """Project a (M_common, 1) slice onto the node-k basis."""
        q = self._bases[k]
        flat = values.reshape(self.ensemble.m_common, -1)
        return (q @ (q.T @ flat)).reshape(values.shape)

    def _full_basis(self, k: int) -> np.ndarray:
        if k not in self._full_bases:
            ens = self.ensemble
            w0 = np.repeat(ens.common_paths()[:, k], ens.m_idio)
            wb = ens.idio_paths()[:, :, k].reshape(-1)
            max_deg = max(0, min(self.degree, ens.m_common * ens.m_idio - 2))
            cols = [np.ones_like(w0)]
            for total in range(1, max_deg + 1):
                for i in range(total + 1):
                    cols.append((w0 ** (total - i)) * (wb ** i))
            design = np.column_stack(cols)
            scale = np.where(design.std(axis=0) > 0, design.std(axis=0), 1.0)
            q, _ = _orthonormal_basis(design / scale)
            self._full_bases[k] = q
        return self._full_bases[k]

    def apply_full(self, k: int, values: np.ndarray) -> np.ndarray:
        """Project a (M_common, M_idio) slice onto polynomials of both
        Brownian values at node k."""
        q = self._full_basis(k)
        flat = values.reshape(-1)
        return (q @ (q.T @ flat)).reshape(values.shape)

    def apply(self, k: int, values: np.ndarray) -> np.ndarray:
        if values.ndim == 0 or values.ndim == 1:
            return values
        if values.ndim == 3:
            raise ShapeError("apply expects a per-node slice, not a full trajectory")
        if values.shape[1] == 1:
            return self.apply_common(k, values)
        return self.apply_full(k, values)


def regress_conditional(ensemble: ParticleEnsemble, t_index: int,
                        future_values: np.ndarray, basis_degree: int = 3,
                        return_info: bool = False):
    """Estimate the conditional expectation of per-common-path future values
    given the common Brownian value at node ``t_index``.

    Least squares onto polynomials of W^0 at that node; values already in
    the basis span are reproduced exactly.  A rank-deficient design (for
    instance at t = 0, where all paths share W^0 = 0) falls back to a lower
    effective degree, which is recorded in the returned info.
    """
    future_values = np.asarray(future_values, dtype=float)
    if future_values.shape != (ensemble.m_common,):
        raise ShapeError("future_values must be one real per common path")
    w = ensemble.common_paths()[:, t_index]
    max_deg = max(0, min(basis_degree, ensemble.m_common - 2))
    design = _poly_basis(w, max_deg)
    q, rank = _orthonormal_basis(design)
    fitted = q @ (q.T @ future_values)
    if return_info:
        info = {"requested_degree": basis_degree, "effective_degree": max_deg,
                "rank": rank, "fallback": rank < max_deg + 1 or max_deg < basis_degree}
        return fitted, info
    return fitted
