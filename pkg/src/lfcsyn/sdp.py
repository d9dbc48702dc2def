"""Dense interior-point solver for small block-structured SDPs.

Problems are given as: minimize c'x subject to one affine matrix
inequality plus positivity of designated matrix/scalar variables.  All
cone blocks are handled in svec coordinates (upper triangle, off-diagonal
entries scaled by sqrt(2) so matrix and vector inner products agree).

The solver is a primal-dual path-following method with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step, using dense linear
algebra; the Schur complement system is assembled blockwise from the
sparse constraint coefficients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from lfcsyn.errors import DimensionError, SolveError

_SQRT2 = np.sqrt(2.0)

# ---------------------------------------------------------------------------
# svec / smat


def svec_dim(p: int) -> int:
    return p * (p + 1) // 2


_tri_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _tri(p: int):
    """Upper-triangle indices (row-major) and svec scale weights for order p."""
    if p not in _tri_cache:
        iu, ju = np.triu_indices(p)
        w = np.where(iu == ju, 1.0, _SQRT2)
        _tri_cache[p] = (iu, ju, w)
    return _tri_cache[p]


def svec(m: np.ndarray) -> np.ndarray:
    """Vectorize a symmetric matrix; off-diagonal entries scaled by sqrt(2)."""
    p = m.shape[0]
    iu, ju, w = _tri(p)
    return m[iu, ju] * w


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of svec."""
    n = v.shape[0]
    p = int((np.sqrt(8.0 * n + 1.0) - 1.0) / 2.0 + 0.5)
    if svec_dim(p) != n:
        raise DimensionError(f"vector of length {n} is not a triangle count")
    iu, ju, w = _tri(p)
    m = np.zeros((p, p))
    m[iu, ju] = v / w
    m[ju, iu] = m[iu, ju]
    return m


def check_psd(m: np.ndarray, tol: float = 1e-9):
    """Return (is_psd, min_eigenvalue); the input must be symmetric to 1e-9."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.abs(m - m.T).max() > 1e-9:
        raise DimensionError("matrix is not symmetric to 1e-9")
    lam_min = float(np.linalg.eigvalsh((m + m.T) / 2.0).min()) if m.size else 0.0
    return lam_min >= -tol, lam_min


# ---------------------------------------------------------------------------
# standard form


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class SolverOptions:
    """Tolerances and step parameters of the interior-point method."""

    max_iterations: int = 100
    gap_tol: float = 1e-7
    feas_tol: float = 1e-8
    step_fraction: float = 0.99
    infeas_threshold: float = 1e10
    min_step: float = 1e-10
    max_block_size: int = 2000
    verbose: bool = False

    def __post_init__(self):
        if self.gap_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class VariableSlot:
    """Placement of one named variable inside the flat decision vector."""

    name: str
    kind: str  # 'sym' | 'full' | 'scalar'
    shape: tuple[int, int]
    offset: int
    size: int


@dataclass
class ConeBlockForm:
    """One PSD block: slack smat(h - G x) must stay positive semidefinite."""

    name: str
    order: int
    h: np.ndarray
    g: sp.csc_matrix


@dataclass
class SdpStandardForm:
    """Flattened SDP: minimize cost'x with per-block slacks h_b - G_b x in PSD."""

    n_vars: int
    cost: np.ndarray
    blocks: list[ConeBlockForm]
    slots: list[VariableSlot]

    def slot(self, name: str) -> VariableSlot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def vectorize(self, assignment: dict[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self.n_vars)
        for s in self.slots:
            v = np.asarray(assignment[s.name], dtype=float)
            if s.kind == "scalar":
                x[s.offset] = float(v)
            elif s.kind == "sym":
                x[s.offset : s.offset + s.size] = svec(v)
            else:
                x[s.offset : s.offset + s.size] = v.reshape(-1)
        return x

    def devectorize(self, x: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for s in self.slots:
            seg = x[s.offset : s.offset + s.size]
            if s.kind == "scalar":
                out[s.name] = float(seg[0])
            elif s.kind == "sym":
                out[s.name] = smat(seg)
            else:
                out[s.name] = seg.reshape(s.shape).copy()
        return out

    def block_value(self, b: ConeBlockForm, x: np.ndarray) -> np.ndarray:
        return smat(b.h - b.g @ x)


@dataclass
class SolveOutcome:
    """Result of one solve, including per-iteration objective estimates."""

    status: SolveStatus
    x: np.ndarray | None
    assignment: dict[str, np.ndarray] | None
    objective: float | None
    gap: float
    iterations: int
    iterate_log: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def to_standard_form(problem, max_block_size: int | None = None) -> SdpStandardForm:
    """Flatten an LmiProblem into cost vector, cone blocks and sparse coefficients."""
    cap = max_block_size or 2000
    slots = []
    offset = 0
    for v in problem.variables:
        if v.kind == "sym":
            size = svec_dim(v.shape[0])
        elif v.kind == "scalar":
            size = 1
        else:
            size = v.shape[0] * v.shape[1]
        slots.append(VariableSlot(v.name, v.kind, v.shape, offset, size))
        offset += size
    m = offset
    slot_by_name = {s.name: s for s in slots}

    cost = np.zeros(m)
    for name, coeff in problem.objective.items():
        s = slot_by_name[name]
        if s.kind != "scalar":
            raise DimensionError("objective coefficients are only supported on scalars")
        cost[s.offset] = coeff

    blocks = []

    # main LMI block: slack = -margin*I - Pi(x) >= 0
    p = problem.pi_map.dim
    if p > cap:
        raise DimensionError(f"LMI block of order {p} exceeds the size cap {cap}")
    d = svec_dim(p)
    iu, ju, w = _tri(p)
    tri_index = np.zeros((p, p), dtype=np.int64)
    tri_index[iu, ju] = np.arange(d)
    tri_index[ju, iu] = tri_index[iu, ju]

    rows_all, cols_all, vals_all = [], [], []
    for name, (pi, pj, va, vb, val) in problem.pi_map.entry_jacobian().items():
        s = slot_by_name[name]
        if s.kind == "scalar":
            coord = np.zeros_like(va)
            scale = np.ones_like(val)
        elif s.kind == "full":
            ncols = s.shape[1]
            coord = va * ncols + vb
            scale = np.ones_like(val)
        else:  # sym: variable entry (a,b) maps to triangle coordinate of (a,b)
            pdim = s.shape[0]
            ti, tj, _ = _tri(pdim)
            vmap = np.zeros((pdim, pdim), dtype=np.int64)
            vmap[ti, tj] = np.arange(svec_dim(pdim))
            vmap[tj, ti] = vmap[ti, tj]
            coord = vmap[va, vb]
            scale = np.where(va == vb, 1.0, 1.0 / _SQRT2)
        # accumulate Pi entry (pi,pj) into its svec row; off-diagonal entries of a
        # symmetric map appear once per side, each carrying sqrt(2)/2 weight
        row = tri_index[pi, pj]
        entry_w = np.where(pi == pj, 1.0, _SQRT2 / 2.0)
        rows_all.append(row)
        cols_all.append(s.offset + coord)
        vals_all.append(val * scale * entry_w)

    if rows_all:
        g_main = sp.coo_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(d, m),
        ).tocsc()
    else:
        g_main = sp.csc_matrix((d, m))
    h_main = svec(-problem.margin * np.eye(p) - problem.pi_map.constant())
    blocks.append(ConeBlockForm("lmi", p, h_main, g_main))

    # positivity blocks: V - floor*I >= 0  (or scalar v - floor >= 0)
    for v in problem.variables:
        if v.floor is None:
            continue
        s = slot_by_name[v.name]
        if v.kind == "scalar":
            h = np.array([-v.floor])
            g = sp.csc_matrix(([-1.0], ([0], [s.offset])), shape=(1, m))
            blocks.append(ConeBlockForm(f"pos:{v.name}", 1, h, g))
        elif v.kind == "sym":
            pv = v.shape[0]
            if pv > cap:
                raise DimensionError(f"block {v.name} of order {pv} exceeds the size cap")
            dv = svec_dim(pv)
            h = svec(-v.floor * np.eye(pv))
            g = sp.csc_matrix(
                (-np.ones(dv), (np.arange(dv), s.offset + np.arange(dv))), shape=(dv, m)
            )
            blocks.append(ConeBlockForm(f"pos:{v.name}", pv, h, g))
        else:
            raise DimensionError(f"positivity is not defined for full variable {v.name}")

    return SdpStandardForm(n_vars=m, cost=cost, blocks=blocks, slots=slots)


# ---------------------------------------------------------------------------
# solver internals


class _BlockWork:
    """Per-block precomputed sparsity data and per-iteration scaling state."""

    def __init__(self, blk: ConeBlockForm, chunk: int = 512):
        self.blk = blk
        p = blk.order
        self.p = p
        self.d = svec_dim(p)
        iu, ju, w = _tri(p)
        self.iu, self.ju, self.w = iu, ju, w
        g = blk.g.tocsc()
        self.g = g
        self.nz_cols = np.flatnonzero(np.diff(g.indptr))
        # static padded gather tensors: full-matrix COO of each nonzero column,
        # chunked by similar fill so the per-iteration work is pure numpy
        self.chunks = []
        entries = []
        for k in self.nz_cols:
            rows = g.indices[g.indptr[k] : g.indptr[k + 1]]
            vals = g.data[g.indptr[k] : g.indptr[k + 1]]
            ri, rj = iu[rows], ju[rows]
            off = ri != rj
            ii = np.concatenate([ri, rj[off]])
            jj = np.concatenate([rj, ri[off]])
            vv = np.concatenate([np.where(off, vals / _SQRT2, vals), vals[off] / _SQRT2])
            entries.append((k, ii, jj, vv))
        entries.sort(key=lambda e: len(e[1]))
        for start in range(0, len(entries), chunk):
            part = entries[start : start + chunk]
            kmax = max(len(e[1]) for e in part)
            nsel = len(part)
            ii = np.zeros((nsel, kmax), dtype=np.int64)
            jj = np.zeros((nsel, kmax), dtype=np.int64)
            vv = np.zeros((nsel, kmax))
            cols = np.zeros(nsel, dtype=np.int64)
            for t, (k, ei, ej, ev) in enumerate(part):
                n = len(ei)
                ii[t, :n] = ei
                jj[t, :n] = ej
                vv[t, :n] = ev
                cols[t] = k
            self.chunks.append((cols, ii, jj, vv))
        # iteration state
        self.r = None
        self.rit = None
        self.lam = None
        self.ls_inv = None
        self.lz_inv = None
        self.vinv = None

    def update_scaling(self, s_vec, z_vec):
        s_mat = smat(s_vec)
        z_mat = smat(z_vec)
        ls = np.linalg.cholesky(s_mat)
        lz = np.linalg.cholesky(z_mat)
        u, sig, vt = np.linalg.svd(lz.T @ ls)
        sig = np.maximum(sig, 1e-150)
        inv_sqrt = 1.0 / np.sqrt(sig)
        self.r = ls @ (vt.T * inv_sqrt)
        self.rit = lz @ (u * inv_sqrt)  # equals inv(r).T
        self.lam = sig
        eye = np.eye(self.p)
        self.ls_inv = sla.solve_triangular(ls, eye, lower=True, check_finite=False)
        self.lz_inv = sla.solve_triangular(lz, eye, lower=True, check_finite=False)
        self.vinv = self.rit @ self.rit.T

    # svec-space scaling operators
    def w_apply(self, u):
        return svec(self.r.T @ smat(u) @ self.r)

    def wt_apply(self, u):
        return svec(self.r @ smat(u) @ self.r.T)

    def winvt_apply(self, u):
        return svec(self.rit.T @ smat(u) @ self.rit)

    def phi_apply(self, u):
        return svec(self.vinv @ smat(u) @ self.vinv)

    def schur_contribution(self, h_out: np.ndarray):
        """Accumulate G' * Phi * G into h_out using the sparse column structure."""
        vinv = self.vinv
        p = self.p
        for cols, ii, jj, vv in self.chunks:
            nsel, kmax = ii.shape
            x = vinv[:, ii.reshape(-1)].reshape(p, nsel, kmax).transpose(1, 0, 2) * vv[:, None, :]
            y = vinv[jj.reshape(-1), :].reshape(nsel, kmax, p)
            t_mats = x @ y
            b_rows = t_mats[:, self.iu, self.ju] * self.w  # (nsel, d)
            h_out[:, cols] += self.g.T @ b_rows.T

    def max_step(self, dv_vec, linv):
        """Largest alpha with smat(v + alpha dv) >= 0, via L^-1 dV L^-T."""
        a = linv @ smat(dv_vec) @ linv.T
        lam_min = float(np.linalg.eigvalsh((a + a.T) / 2.0).min())
        if lam_min >= 0.0:
            return np.inf
        return 1.0 / (-lam_min)


def _split(vec, works):
    out = []
    pos = 0
    for wk in works:
        out.append(vec[pos : pos + wk.d])
        pos += wk.d
    return out


def _jordan_div(rho_vec, lam):
    """Solve diag(lam) o Y = smat(rho) for Y, returned as svec."""
    rmat = smat(rho_vec)
    denom = (lam[:, None] + lam[None, :]) / 2.0
    return svec(rmat / denom)


def solve(form: SdpStandardForm, opts: SolverOptions | None = None) -> SolveOutcome:
    """Run the interior-point method on a standard-form problem."""
    opts = opts or SolverOptions()
    m = form.n_vars
    works = [_BlockWork(b) for b in form.blocks]
    for wk in works:
        if wk.p > opts.max_block_size:
            raise DimensionError(f"block {wk.blk.name} exceeds max_block_size")
    d_total = sum(wk.d for wk in works)
    p_total= sum(wk.p for wk in works)
    h_full = np.concatenate([wk.blk.h for wk in works]) if works else np.zeros(0)
    g_full = sp.vstack([wk.blk.g for wk in works], format="csc") if works else sp.csc_matrix((0, m))
    c = form.cost

    log: list[dict] = []

    if m == 0:
        lam_mins = [check_psd(smat(wk.blk.h), opts.feas_tol)[1] for wk in works]
        feasible = all(v >= -opts.feas_tol for v in lam_mins)
        status = SolveStatus.OPTIMAL if feasible else SolveStatus.INFEASIBLE
        return SolveOutcome(
            status=status,
            x=np.zeros(0) if feasible else None,
            assignment={} if feasible else None,
            objective=0.0 if feasible else None,
            gap=0.0,
            iterations=0,
            iterate_log=log,
            diagnostics={"lam_min": lam_mins},
        )

    # identity-multiple start, scaled from the constraint constants
    x = np.zeros(m)
    s_parts, z_parts = [], []
    for wk in works:
        t = max(1.0, float(np.linalg.norm(wk.blk.h)) / np.sqrt(wk.p))
        s_parts.append(svec(t * np.eye(wk.p)))
        z_parts.append(svec(np.eye(wk.p)))
    s = np.concatenate(s_parts)
    z = np.concatenate(z_parts)

    h_norm = max(1.0, float(np.linalg.norm(h_full)))
    c_norm = max(1.0, float(np.linalg.norm(c)))

    status = SolveStatus.ITERATION_LIMIT
    diag: dict = {}
    it = 0
    for it in range(1, opts.max_iterations + 1):
        rz = g_full @ x + s - h_full
        rx = g_full.T @ z + c
        gap = float(s @ z)
        pobj = float(c @ x)
        dobj = float(-h_full @ z)
        pres = float(np.linalg.norm(rz)) / h_norm
        dres = float(np.linalg.norm(rx)) / c_norm
        log.append(
            {"iter": it, "pobj": pobj, "dobj": dobj, "gap": gap, "pres": pres, "dres": dres}
        )
        if opts.verbose:
            print(
                f"  it {it:3d}  pobj {pobj: .6e}  dobj {dobj: .6e}  "
                f"gap {gap:.3e}  pres {pres:.3e}  dres {dres:.3e}"
            )

        def _converged(scale: float) -> bool:
            return (
                pres <= scale * opts.feas_tol
                and dres <= scale * opts.feas_tol
                and gap <= scale * opts.gap_tol * max(1.0, abs(pobj))
            )

        if _converged(1.0):
            status = SolveStatus.OPTIMAL
            break
        # stall: no meaningful gap progress over a window of iterations
        if len(log) >= 8 and gap >= 0.9 * min(r["gap"] for r in log[-8:-1]) and _converged(50.0):
            status = SolveStatus.OPTIMAL
            diag["relaxed"] = True
            break

        # infeasibility certificates: z with G'z ~ 0, h'z < 0 proves primal
        # infeasibility; x with Gx + s ~ 0, c'x < 0 proves unboundedness
        hz = float(h_full @ z)
        if hz < -1e-8:
            cert = float(np.linalg.norm(g_full.T @ z)) / (-hz)
            if cert <= opts.feas_tol * 1e2:
                status = SolveStatus.INFEASIBLE
                diag["certificate"] = "dual-ray"
                break
        if dobj > opts.infeas_threshold:
            status = SolveStatus.INFEASIBLE
            diag["certificate"] = "dual-objective-divergence"
            break
        cx = float(c @ x)
        if cx < -1e-8:
            cert = float(np.linalg.norm(g_full @ x + s)) / (-cx)
            if cert <= opts.feas_tol * 1e2 and pobj < -1.0:
                status = SolveStatus.UNBOUNDED
                diag["certificate"] = "primal-ray"
                break
        if pobj < -opts.infeas_threshold:
            status = SolveStatus.UNBOUNDED
            diag["certificate"] = "primal-objective-divergence"
            break

        s_sp = _split(s, works)
        z_sp = _split(z, works)
        try:
            for wk, sv, zv in zip(works, s_sp, z_sp):
                wk.update_scaling(sv, zv)
        except np.linalg.LinAlgError:
            status = SolveStatus.NUMERICAL_FAILURE
            diag["failure"] = "cone iterate lost positive definiteness"
            break

        mu = gap / p_total

        # Schur matrix H = G' Phi G assembled blockwise
        h_mat = np.zeros((m, m))
        for wk in works:
            wk.schur_contribution(h_mat)
        h_mat = (h_mat + h_mat.T) / 2.0

        cho = None
        reg = 0.0
        base = max(np.trace(h_mat) / m, 1e-12)
        for _ in range(4):
            try:
                cho = sla.cho_factor(h_mat + reg * np.eye(m) if reg else h_mat, lower=True)
                break
            except np.linalg.LinAlgError:
                reg = base * 1e-12 if reg == 0.0 else reg * 100.0
        if cho is None:
            status = SolveStatus.NUMERICAL_FAILURE
            diag["failure"] = "Schur complement factorization failed"
            break

        def kkt_dirs(rx_t, rz_t, g_vec):
            """Solve G'dz = -rx_t, Gdx + ds = -rz_t, W^-T ds + W dz = g."""
            wtg = np.concatenate(
                [wk.wt_apply(gp) for wk, gp in zip(works, _split(g_vec, works))]
            )
            t = rz_t + wtg
            phit = np.concatenate(
                [wk.phi_apply(tp) for wk, tp in zip(works, _split(t, works))]
            )
            rhs = -rx_t - g_full.T @ phit
            dx = sla.cho_solve(cho, rhs)
            dx += sla.cho_solve(cho, rhs - h_mat @ dx)
            gdx = g_full @ dx
            dz = np.concatenate(
                [wk.phi_apply(u) for wk, u in zip(works, _split(gdx + t, works))]
            )
            ds = -rz_t - gdx
            return dx, ds, dz

        def solve_kkt(rho_parts):
            """KKT solve for a complementarity target, with one refinement pass."""
            g_vec = np.concatenate(
                [_jordan_div(rho, wk.lam) for rho, wk in zip(rho_parts, works)]
            )
            dx, ds, dz = kkt_dirs(rx, rz, g_vec)
            # residuals of the three Newton equations; the second is exact
            e1 = rx + g_full.T @ dz
            e3 = g_vec - np.concatenate(
                [
                    wk.winvt_apply(dsp) + wk.w_apply(dzp)
                    for wk, dsp, dzp in zip(works, _split(ds, works), _split(dz, works))
                ]
            )
            cx, cs, cz = kkt_dirs(e1, np.zeros_like(rz), e3)
            return dx + cx, ds + cs, dz + cz

        # predictor
        rho_aff = [svec(np.diag(-wk.lam**2)) for wk in works]
        dx_a, ds_a, dz_a = solve_kkt(rho_aff)

        alpha_s = min(
            (wk.max_step(dsv, wk.ls_inv) for wk, dsv in zip(works, _split(ds_a, works))),
            default=np.inf,
        )
        alpha_z = min(
            (wk.max_step(dzv, wk.lz_inv) for wk, dzv in zip(works, _split(dz_a, works))),
            default=np.inf,
        )
        alpha_aff = min(1.0, alpha_s, alpha_z)
        gap_aff = float((s + alpha_aff * ds_a) @ (z + alpha_aff * dz_a))
        sigma = min(1.0, max((gap_aff / gap) ** 3, 1e-8)) if gap > 0 else 0.1

        # corrector
        rho_parts = []
        for wk, dsv, dzv in zip(works, _split(ds_a, works), _split(dz_a, works)):
            a = wk.rit.T @ smat(dsv) @ wk.rit  # W^-T ds
            b = wk.r.T @ smat(dzv) @ wk.r  # W dz
            cross = (a @ b + b @ a) / 2.0
            rho = sigma * mu * np.eye(wk.p) - np.diag(wk.lam**2) - cross
            rho_parts.append(svec(rho))
        dx, ds, dz = solve_kkt(rho_parts)

        alpha_s = min(
            (wk.max_step(dsv, wk.ls_inv) for wk, dsv in zip(works, _split(ds, works))),
            default=np.inf,
        )
        alpha_z = min(
            (wk.max_step(dzv, wk.lz_inv) for wk, dzv in zip(works, _split(dz, works))),
            default=np.inf,
        )
        alpha = min(1.0, opts.step_fraction * alpha_s, opts.step_fraction * alpha_z)
        if alpha < opts.min_step:
            if _converged(50.0):
                status = SolveStatus.OPTIMAL
                diag["relaxed"] = True
            else:
                status = SolveStatus.NUMERICAL_FAILURE
                diag["failure"] = f"step length collapsed to {alpha:.2e}"
            break

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz

    gap = float(s @ z)
    diag.update(
        {
            "pres": float(np.linalg.norm(g_full @ x + s - h_full)) / h_norm,
            "dres": float(np.linalg.norm(g_full.T @ z + c)) / c_norm,
            "pobj": float(c @ x),
            "dobj": float(-h_full @ z),
        }
    )
    ok = status == SolveStatus.OPTIMAL
    return SolveOutcome(
        status=status,
        x=x if ok else None,
        assignment=form.devectorize(x) if ok else None,
        objective=float(c @ x) if ok else None,
        gap=gap,
        iterations=it,
        iterate_log=log,
        diagnostics=diag,
    )


def solve_lmi_problem(problem, opts: SolverOptions | None = None) -> SolveOutcome:
    """Convenience wrapper: flatten an LmiProblem and solve it."""
    return solve(to_standard_form(problem), opts)


def require_optimal(outcome: SolveOutcome, context: str) -> dict[str, np.ndarray]:
    if outcome.status != SolveStatus.OPTIMAL:
        raise SolveError(
            f"{context}: solver returned {outcome.status.value}",
            status=outcome.status.value,
            diagnostics=outcome.diagnostics,
        )
    return outcome.assignment
