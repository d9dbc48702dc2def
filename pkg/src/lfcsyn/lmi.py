"""Assembly of the controller-synthesis LMI problems and controller recovery.

The decision variables are the block-diagonal Lyapunov blocks P_pi/P_ci,
delay-channel multipliers R_ij, diagonal bound parameters gamma1/gamma2,
scalar multipliers s1..s5 and the change-of-variables blocks Y/Q/W/U.
The single matrix constraint Pi(vars) <= -margin*I is represented as an
affine map assembled from small structured terms, which also yields the
sparse coefficient data consumed by the SDP layer.

Four problem variants are supported, selected by two flags: with/without
delay channels and with/without controller-perturbation channels.  The
delayed terms (droop feedback and tie-line couplings) enter only through
the delay channels; the delay-free variants therefore certify the
decoupled per-area dynamics, and the interconnected behaviour is
validated by simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lfcsyn.errors import CertificateError, DimensionError, ParameterError
from lfcsyn.model import DelaySpec, GlobalPlant

# ---------------------------------------------------------------------------
# variant / bounds


@dataclass(frozen=True)
class SynthesisVariant:
    """Problem family selector: delay channels and perturbation channels."""

    delayed: bool
    perturbed: bool

    @property
    def name(self) -> str:
        return {
            (True, True): "theorem1",
            (True, False): "corollary1",
            (False, True): "corollary2",
            (False, False): "corollary3",
        }[(self.delayed, self.perturbed)]

    @classmethod
    def from_name(cls, name: str) -> "SynthesisVariant":
        table = {
            "theorem1": (True, True),
            "corollary1": (True, False),
            "corollary2": (False, True),
            "corollary3": (False, False),
        }
        if name not in table:
            raise ParameterError(f"unknown synthesis variant {name!r}")
        return cls(*table[name])


@dataclass(frozen=True)
class PerturbationBounds:
    """Norm bounds on the admissible controller-matrix perturbations."""

    delta_ac: float = 0.0
    delta_bc: float = 0.0
    delta_cc: float = 0.0
    delta_dc: float = 0.0

    def __post_init__(self):
        for name in ("delta_ac", "delta_bc", "delta_cc", "delta_dc"):
            if getattr(self, name) < 0.0:
                raise ParameterError(f"{name} must be nonnegative")

    @property
    def all_zero(self) -> bool:
        return self.delta_ac == self.delta_bc == self.delta_cc == self.delta_dc == 0.0

    @classmethod
    def zero(cls) -> "PerturbationBounds":
        return cls()


# ---------------------------------------------------------------------------
# affine matrix map


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str  # 'sym' | 'full' | 'scalar'
    shape: tuple[int, int]
    floor: float | None = None  # positivity: V - floor*I >= 0


@dataclass
class _MatTerm:
    # Pi[r0:, c0:] += left @ V @ right  (or left @ V.T @ right)
    var: str
    r0: int
    c0: int
    left: np.ndarray
    right: np.ndarray
    transpose: bool = False


@dataclass
class _ScalarTerm:
    # Pi[r0:, c0:] += v * matrix
    var: str
    r0: int
    c0: int
    matrix: np.ndarray


class AffineMatrixMap:
    """Symmetric-matrix-valued affine function of named matrix variables."""

    def __init__(self, dim: int):
        self.dim = dim
        self._constant = np.zeros((dim, dim))
        self._terms: list[_MatTerm | _ScalarTerm] = []

    def add_constant(self, r0: int, c0: int, m: np.ndarray):
        nr, nc = m.shape
        self._constant[r0 : r0 + nr, c0 : c0 + nc] += m

    def add(self, var: str, r0: int, c0: int, left: np.ndarray, right: np.ndarray,
            transpose: bool = False, mirror: bool = False):
        """Add left@V@right at (r0, c0); with mirror, also its transpose block."""
        self._terms.append(_MatTerm(var, r0, c0, np.asarray(left, float),
                                    np.asarray(right, float), transpose))
        if mirror:
            self._terms.append(
                _MatTerm(var, c0, r0, np.asarray(right, float).T,
                         np.asarray(left, float).T, not transpose)
            )

    def add_scalar(self, var: str, r0: int, c0: int, matrix: np.ndarray,
                   mirror: bool = False):
        m = np.asarray(matrix, float)
        self._terms.append(_ScalarTerm(var, r0, c0, m))
        if mirror:
            self._terms.append(_ScalarTerm(var, c0, r0, m.T))

    def constant(self) -> np.ndarray:
        return self._constant.copy()

    def eval(self, assignment: dict[str, np.ndarray]) -> np.ndarray:
        out = self._constant.copy()
        for t in self._terms:
            if isinstance(t, _ScalarTerm):
                v = float(np.asarray(assignment[t.var]).reshape(-1)[0])
                blk = v * t.matrix
            else:
                v = np.atleast_2d(np.asarray(assignment[t.var], float))
                blk = t.left @ (v.T if t.transpose else v) @ t.right
            out[t.r0 : t.r0 + blk.shape[0], t.c0 : t.c0 + blk.shape[1]] += blk
        return out

    def entry_jacobian(self) -> dict[str, tuple[np.ndarray, ...]]:
        """Per variable: COO arrays (pi, pj, va, vb, val) of entry coefficients."""
        acc: dict[str, list[list[np.ndarray]]] = {}

        def push(name, pi, pj, va, vb, val):
            acc.setdefault(name, [[], [], [], [], []])
            for lst, arr in zip(acc[name], (pi, pj, va, vb, val)):
                lst.append(np.asarray(arr))

        for t in self._terms:
            if isinstance(t, _ScalarTerm):
                i, j = np.nonzero(t.matrix)
                push(t.var, t.r0 + i, t.c0 + j, np.zeros_like(i), np.zeros_like(j),
                     t.matrix[i, j])
                continue
            if t.transpose:
                tens = np.einsum("ib,aj->abij", t.left, t.right)
            else:
                tens = np.einsum("ia,bj->abij", t.left, t.right)
            a, b, i, j = np.nonzero(tens)
            push(t.var, t.r0 + i, t.c0 + j, a, b, tens[a, b, i, j])

        return {
            name: tuple(np.concatenate(part) for part in parts)
            for name, parts in acc.items()
        }


# ---------------------------------------------------------------------------
# problem container


@dataclass
class Channel:
    name: str
    offset: int
    width: int


@dataclass
class LmiProblem:
    """One assembled minimization problem: linear objective, Pi(vars) <= -margin*I."""

    variables: list[VariableSpec]
    objective: dict[str, float]
    pi_map: AffineMatrixMap
    margin: float
    channels: list[Channel]
    meta: dict = field(default_factory=dict)

    def channel(self, name: str) -> Channel:
        for ch in self.channels:
            if ch.name == name:
                return ch
        raise KeyError(name)

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def channel_census(self) -> list[tuple[str, int]]:
        return [(ch.name, ch.width) for ch in self.channels]

    def eval_pi(self, assignment: dict[str, np.ndarray]) -> np.ndarray:
        return self.pi_map.eval(assignment)

    def random_assignment(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Arbitrary symmetric-respecting assignment, for structural tests."""
        out = {}
        for v in self.variables:
            if v.kind == "scalar":
                out[v.name] = float(rng.normal())
            elif v.kind == "sym":
                a = rng.normal(size=v.shape)
                out[v.name] = (a + a.T) / 2.0
            else:
                out[v.name] = rng.normal(size=v.shape)
        return out


def certificate_residual(solution: dict[str, np.ndarray], problem: LmiProblem) -> float:
    """Largest eigenvalue of Pi at the given point (feasible iff <= -margin)."""
    pi = problem.eval_pi(solution)
    return float(np.linalg.eigvalsh((pi + pi.T) / 2.0).max())


# ---------------------------------------------------------------------------
# controller and closed loop


@dataclass
class DecentralizedController:
    """Per-area fixed-order output-feedback controller with its certificates."""

    a_c: list[np.ndarray]
    b_c: list[np.ndarray]
    c_c: list[np.ndarray]
    d_c: list[float]
    gamma1: np.ndarray
    gamma2: np.ndarray
    recovery_residuals: list[tuple[float, float]]
    synthesis_gamma1: np.ndarray | None = None
    synthesis_gamma2: np.ndarray | None = None

    @property
    def n_areas(self) -> int:
        return len(self.a_c)

    @property
    def orders(self) -> list[int]:
        return [a.shape[0] for a in self.a_c]

    @property
    def robustness_degree(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.gamma1)

    @property
    def attenuation_level(self) -> np.ndarray:
        return np.sqrt(self.gamma2)

    def scaled(self, factor: float) -> "DecentralizedController":
        """Every controller matrix multiplied by the same factor."""
        return DecentralizedController(
            a_c=[factor * a for a in self.a_c],
            b_c=[factor * b for b in self.b_c],
            c_c=[factor * c for c in self.c_c],
            d_c=[factor * d for d in self.d_c],
            gamma1=self.gamma1.copy(),
            gamma2=self.gamma2.copy(),
            recovery_residuals=list(self.recovery_residuals),
            synthesis_gamma1=self.synthesis_gamma1,
            synthesis_gamma2=self.synthesis_gamma2,
        )

    def to_dict(self) -> dict:
        return {
            "a_c": [a.tolist() for a in self.a_c],
            "b_c": [b.tolist() for b in self.b_c],
            "c_c": [c.tolist() for c in self.c_c],
            "d_c": list(map(float, self.d_c)),
            "gamma1": self.gamma1.tolist(),
            "gamma2": self.gamma2.tolist(),
            "recovery_residuals": [list(map(float, r)) for r in self.recovery_residuals],
            "synthesis_gamma1": None
            if self.synthesis_gamma1 is None
            else self.synthesis_gamma1.tolist(),
            "synthesis_gamma2": None
            if self.synthesis_gamma2 is None
            else self.synthesis_gamma2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecentralizedController":
        return cls(
            a_c=[np.array(a, float).reshape(len(a), -1) if a else np.zeros((0, 0)) for a in d["a_c"]],
            b_c=[np.array(b, float).reshape(-1, 1) if b else np.zeros((0, 1)) for b in d["b_c"]],
            c_c=[np.array(c, float).reshape(1, -1) if c else np.zeros((1, 0)) for c in d["c_c"]],
            d_c=[float(x) for x in d["d_c"]],
            gamma1=np.array(d["gamma1"], float),
            gamma2=np.array(d["gamma2"], float),
            recovery_residuals=[tuple(r) for r in d["recovery_residuals"]],
            synthesis_gamma1=None
            if d.get("synthesis_gamma1") is None
            else np.array(d["synthesis_gamma1"], float),
            synthesis_gamma2=None
            if d.get("synthesis_gamma2") is None
            else np.array(d["synthesis_gamma2"], float),
        )


@dataclass
class ValveChannel:
    """Saturation channel of one area, in closed-loop coordinates."""

    xg_index: int
    pg_index: int
    gain: float
    lo: float
    hi: float


@dataclass
class ClosedLoopSystem:
    """Closed-loop matrices in the interleaved [x_p1, x_c1, ..., x_pN, x_cN] layout."""

    n_areas: int
    plant_dims: list[int]
    ctrl_dims: list[int]
    a_clp: np.ndarray
    a_dclp: dict[tuple[int, int], np.ndarray]
    e_clp: np.ndarray
    c_cl: np.ndarray
    h_tilde: np.ndarray
    valves: list[ValveChannel]
    offsets: list[int]
    controller: DecentralizedController

    @property
    def dim(self) -> int:
        return self.a_clp.shape[0]

    def plant_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.plant_dims[i])

    def ctrl_slice(self, i: int) -> slice:
        o = self.offsets[i] + self.plant_dims[i]
        return slice(o, o + self.ctrl_dims[i])

    def nonlinearity(self, x: np.ndarray) -> np.ndarray:
        """Lifted saturation vector h^f(x) for a batch-free state vector."""
        out = np.zeros_like(x)
        for v in self.valves:
            mu = np.clip(x[v.xg_index], v.lo, v.hi) - x[v.xg_index]
            out[v.pg_index] = v.gain * mu
        return out


def closed_loop_matrices(plant: GlobalPlant, ctrl: DecentralizedController) -> ClosedLoopSystem:
    """Interconnect the plant with a decentralized controller per its block form."""
    n = plant.n_areas
    if ctrl.n_areas != n:
        raise DimensionError(f"controller has {ctrl.n_areas} areas, plant has {n}")
    p_dims = plant.dims
    c_dims = ctrl.orders
    q = [p + c for p, c in zip(p_dims, c_dims)]
    offs = [0]
    for d in q[:-1]:
        offs.append(offs[-1] + d)
    ncl = sum(q)

    a = np.zeros((ncl, ncl))
    e = np.zeros((ncl, n))
    c_out = np.zeros((n, ncl))
    h_tilde = np.zeros((n, ncl))
    valves = []
    from lfcsyn.model import IDX_PG, IDX_XG

    for i, am in enumerate(plant.per_area):
        ps = slice(offs[i], offs[i] + p_dims[i])
        cs = slice(offs[i] + p_dims[i], offs[i] + q[i])
        bi, ci = am.b, am.c
        a[ps, ps] = am.a0 + bi @ (ctrl.d_c[i] * ci)
        if c_dims[i] > 0:
            a[ps, cs] = bi @ ctrl.c_c[i]
            a[cs, ps] = ctrl.b_c[i] @ ci
            a[cs, cs] = ctrl.a_c[i]
        e[ps, i : i + 1] = am.bw
        c_out[i : i + 1, ps] = ci
        h_tilde[i : i + 1, ps] = plant.h_block(i)
        valves.append(
            ValveChannel(
                xg_index=offs[i] + IDX_XG,
                pg_index=offs[i] + IDX_PG,
                gain=am.h_gain,
                lo=am.xg_lo,
                hi=am.xg_hi,
            )
        )

    a_d = {}
    for (i, j), g in plant.a_d.items():
        m = np.zeros((ncl, ncl))
        blk = g[
            plant.offsets[i] : plant.offsets[i] + p_dims[i],
            plant.offsets[j] : plant.offsets[j] + p_dims[j],
        ]
        m[offs[i] : offs[i] + p_dims[i], offs[j] : offs[j] + p_dims[j]] = blk
        a_d[(i, j)] = m

    return ClosedLoopSystem(
        n_areas=n,
        plant_dims=p_dims,
        ctrl_dims=c_dims,
        a_clp=a,
        a_dclp=a_d,
        e_clp=e,
        c_cl=c_out,
        h_tilde=h_tilde,
        valves=valves,
        offsets=offs,
        controller=ctrl,
    )


# ---------------------------------------------------------------------------
# LMI assembly


def _closed_offsets(p_dims, c_dims):
    q = [p + c for p, c in zip(p_dims, c_dims)]
    offs = [0]
    for d in q[:-1]:
        offs.append(offs[-1] + d)
    return q, offs, sum(q)


def _r_variable_names(n, i, j, block_diag):
    if block_diag:
        return [f"R_{i}_{j}_b{k}" for k in range(n)]
    return [f"R_{i}_{j}"]


def assemble_synthesis_lmi(
    plant: GlobalPlant,
    delays: DelaySpec,
    controller_orders: list[int],
    bounds: PerturbationBounds,
    variant: SynthesisVariant,
    weights: list[float],
    margin: float = 1e-6,
    r_block_diagonal: bool = False,
    s1_min: float = 1.0,
    exact_recovery: bool = True,
    pos_floor: float = 1e-8,
) -> LmiProblem:
    """Build the synthesis minimization problem for the requested variant.

    Decision variables follow the change-of-variables form, so the problem
    is affine and the controller is recovered afterwards.  s1_min >= 1 keeps
    the multiplier on the nonlinearity bound consistent with the Schur
    channel (see recover/audit); pass a tiny positive value to relax it.

    With exact_recovery the Lyapunov plant blocks are restricted to
    P_pi = diag(p, Pbar) and Y_i/Q_i to the governor row, which puts them in
    the range of P_pi*B_i so the pseudo-inverse recovery is exact (zero
    residuals) at the cost of some conservatism.  Without it the free
    blocks generally leave the recovered controller uncertified.
    """
    return _assemble(
        plant, delays, controller_orders, bounds, variant, weights, margin,
        r_block_diagonal, s1_min, pos_floor, fixed_ctrl=None,
        exact_recovery=exact_recovery,
    )


def assemble_analysis_lmi(
    plant: GlobalPlant,
    delays: DelaySpec,
    ctrl: DecentralizedController,
    bounds: PerturbationBounds,
    variant: SynthesisVariant,
    weights: list[float],
    margin: float = 1e-6,
    r_block_diagonal: bool = False,
    s1_min: float = 1.0,
    pos_floor: float = 1e-8,
) -> LmiProblem:
    """Certification problem for a fixed controller: same structure, P free."""
    return _assemble(
        plant, delays, ctrl.orders, bounds, variant, weights, margin,
        r_block_diagonal, s1_min, pos_floor, fixed_ctrl=ctrl,
        exact_recovery=False,
    )


def _assemble(
    plant, delays, controller_orders, bounds, variant, weights, margin,
    r_block_diagonal, s1_min, pos_floor, fixed_ctrl, exact_recovery=False,
) -> LmiProblem:
    n = plant.n_areas
    if len(controller_orders) != n:
        raise DimensionError("controller_orders must list one order per area")
    if any(o < 0 for o in controller_orders):
        raise ParameterError("controller orders must be >= 0")
    if len(weights) != n:
        raise DimensionError("weights must list one rho per area")
    if any(w < 0 for w in weights):
        raise ParameterError("weights must be nonnegative")
    if margin <= 0:
        raise ParameterError("margin must be positive")
    if variant.perturbed and bounds.all_zero:
        raise ParameterError("perturbed variant requires at least one positive delta bound")
    if not variant.perturbed and not bounds.all_zero:
        raise ParameterError("unperturbed variant requires all delta bounds zero")
    if variant.delayed:
        for (i, j), (_, _, rate) in delays.pairs.items():
            if rate >= 1.0:
                raise ParameterError(f"delay rate bound d_{i}{j} >= 1 makes the problem ill-posed")
        missing = [
            (i, j) for i in range(n) for j in range(n) if (i, j) not in delays.pairs
        ]
        if missing:
            raise DimensionError(f"delay spec is missing pairs {missing}")

    p_dims = plant.dims
    c_dims = list(controller_orders)
    q, offs, ncl = _closed_offsets(p_dims, c_dims)
    n_c = sum(c_dims)
    c_norm = float(np.linalg.norm(plant.c_glob, 2))

    # column channels after the x block
    channels = [Channel("x", 0, ncl)]
    pos = ncl
    if variant.delayed:
        for i in range(n):
            for j in range(n):
                channels.append(Channel(f"delay_{i}_{j}", pos, ncl))
                pos += ncl
    channels.append(Channel("w", pos, n)); pos += n
    channels.append(Channel("h", pos, ncl)); pos += ncl
    if variant.perturbed:
        channels.append(Channel("z1", pos, n)); pos += n
        channels.append(Channel("z2", pos, n)); pos += n
        if n_c > 0:
            channels.append(Channel("z3", pos, n_c)); pos += n_c
            channels.append(Channel("z4", pos, n_c)); pos += n_c
    channels.append(Channel("hbound", pos, n)); pos += n
    dim = pos

    structured = exact_recovery and fixed_ctrl is None
    variables: list[VariableSpec] = []
    for i in range(n):
        if structured:
            variables.append(VariableSpec(f"P_p{i}_x", "scalar", (1, 1), pos_floor))
            variables.append(
                VariableSpec(f"P_p{i}_r", "sym", (p_dims[i] - 1, p_dims[i] - 1), pos_floor)
            )
        else:
            variables.append(VariableSpec(f"P_p{i}", "sym", (p_dims[i], p_dims[i]), pos_floor))
        if c_dims[i] > 0:
            variables.append(VariableSpec(f"P_c{i}", "sym", (c_dims[i], c_dims[i]), pos_floor))
    if variant.delayed:
        for i in range(n):
            for j in range(n):
                if r_block_diagonal:
                    for k in range(n):
                        variables.append(
                            VariableSpec(f"R_{i}_{j}_b{k}", "sym", (q[k], q[k]), pos_floor)
                        )
                else:
                    variables.append(VariableSpec(f"R_{i}_{j}", "sym", (ncl, ncl), pos_floor))
    for i in range(n):
        variables.append(VariableSpec(f"gamma1_{i}", "scalar", (1, 1), pos_floor))
        variables.append(VariableSpec(f"gamma2_{i}", "scalar", (1, 1), pos_floor))
    variables.append(VariableSpec("s1", "scalar", (1, 1), s1_min))
    if variant.perturbed:
        for k in (2, 3, 4, 5):
            variables.append(VariableSpec(f"s{k}", "scalar", (1, 1), pos_floor))
    if fixed_ctrl is None:
        for i in range(n):
            if structured:
                variables.append(VariableSpec(f"Yx_{i}", "scalar", (1, 1), None))
            else:
                variables.append(VariableSpec(f"Y_{i}", "full", (p_dims[i], 1), None))
            if c_dims[i] > 0:
                if structured:
                    variables.append(VariableSpec(f"Qx_{i}", "full", (1, c_dims[i]), None))
                else:
                    variables.append(VariableSpec(f"Q_{i}", "full", (p_dims[i], c_dims[i]), None))
                variables.append(VariableSpec(f"W_{i}", "full", (c_dims[i], 1), None))
                variables.append(VariableSpec(f"U_{i}", "full", (c_dims[i], c_dims[i]), None))

    objective = {}
    for i in range(n):
        objective[f"gamma1_{i}"] = 1.0
        objective[f"gamma2_{i}"] = float(weights[i])

    pi = AffineMatrixMap(dim)

    def add_p(i, r0, c0, left, right, mirror=False):
        # term left @ P_pi @ right, honouring the structured diag(p, Pbar) split
        if structured:
            pi.add(f"P_p{i}_x", r0, c0, left[:, :1], right[:1, :], mirror=mirror)
            pi.add(f"P_p{i}_r", r0, c0, left[:, 1:], right[1:, :], mirror=mirror)
        else:
            pi.add(f"P_p{i}", r0, c0, left, right, mirror=mirror)

    # --- x block: diag(L_i)
    for i, am in enumerate(plant.per_area):
        op = offs[i]
        oc = offs[i] + p_dims[i]
        eye_p = np.eye(p_dims[i])
        e1 = eye_p[:, :1]
        a0, bi, ci = am.a0, am.b, am.c
        if fixed_ctrl is None:
            add_p(i, op, op, eye_p, a0)
            add_p(i, op, op, a0.T, eye_p)
            if structured:
                pi.add(f"Yx_{i}", op, op, e1, ci)
                pi.add(f"Yx_{i}", op, op, ci.T, e1.T)
            else:
                pi.add(f"Y_{i}", op, op, eye_p, ci)
                pi.add(f"Y_{i}", op, op, ci.T, eye_p, transpose=True)
            if c_dims[i] > 0:
                eye_c = np.eye(c_dims[i])
                if structured:
                    pi.add(f"Qx_{i}", op, oc, e1, eye_c, mirror=True)
                else:
                    pi.add(f"Q_{i}", op, oc, eye_p, eye_c, mirror=True)
                pi.add(f"W_{i}", op, oc, ci.T, eye_c, transpose=True, mirror=True)
                pi.add(f"U_{i}", oc, oc, eye_c, eye_c)
                pi.add(f"U_{i}", oc, oc, eye_c, eye_c, transpose=True)
        else:
            a_cl = a0 + bi @ (fixed_ctrl.d_c[i] * ci)
            add_p(i, op, op, eye_p, a_cl)
            add_p(i, op, op, a_cl.T, eye_p)
            if c_dims[i] > 0:
                eye_c = np.eye(c_dims[i])
                add_p(i, op, oc, eye_p, bi @ fixed_ctrl.c_c[i], mirror=True)
                pi.add(f"P_c{i}", op, oc, ci.T @ fixed_ctrl.b_c[i].T, eye_c, mirror=True)
                pi.add(f"P_c{i}", oc, oc, eye_c, fixed_ctrl.a_c[i])
                pi.add(f"P_c{i}", oc, oc, fixed_ctrl.a_c[i].T, eye_c)
        pi.add_constant(op, op, ci.T @ ci)
        if variant.perturbed:
            pi.add_scalar("s3", op, op, (c_norm**2) * bounds.delta_dc**2 * eye_p)
            pi.add_scalar("s5", op, op, (c_norm**2) * bounds.delta_bc**2 * eye_p)
            if c_dims[i] > 0:
                eye_c = np.eye(c_dims[i])
                pi.add_scalar("s2", oc, oc, bounds.delta_cc**2 * eye_c)
                pi.add_scalar("s4", oc, oc, bounds.delta_ac**2 * eye_c)

    def delay_block(i, j):
        g = plant.a_d[(i, j)]
        return g[
            plant.offsets[i] : plant.offsets[i] + p_dims[i],
            plant.offsets[j] : plant.offsets[j] + p_dims[j],
        ]

    if variant.delayed:
        for i in range(n):
            for j in range(n):
                if r_block_diagonal:
                    for k in range(n):
                        pi.add(f"R_{i}_{j}_b{k}", offs[k], offs[k],
                               np.eye(q[k]), np.eye(q[k]))
                else:
                    pi.add(f"R_{i}_{j}", 0, 0, np.eye(ncl), np.eye(ncl))

    # --- delay channels: columns P*Abar_d(i,j), diagonal -(1-d_ij)R_ij
    if variant.delayed:
        for i in range(n):
            for j in range(n):
                ch = next(c for c in channels if c.name == f"delay_{i}_{j}")
                blk = delay_block(i, j)
                if blk.any():
                    add_p(i, offs[i], ch.offset + offs[j],
                          np.eye(p_dims[i]), blk, mirror=True)
                scale = 1.0 - delays.rate(i, j)
                if r_block_diagonal:
                    for k in range(n):
                        pi.add(f"R_{i}_{j}_b{k}", ch.offset + offs[k], ch.offset + offs[k],
                               -scale * np.eye(q[k]), np.eye(q[k]))
                else:
                    pi.add(f"R_{i}_{j}", ch.offset, ch.offset,
                           -scale * np.eye(ncl), np.eye(ncl))

    # --- w channel: P*E_clp, diagonal -Gamma2
    chw = next(c for c in channels if c.name == "w")
    for i, am in enumerate(plant.per_area):
        add_p(i, offs[i], chw.offset + i, np.eye(p_dims[i]), am.bw, mirror=True)
        pi.add_scalar(f"gamma2_{i}", chw.offset + i, chw.offset + i, -np.eye(1))

    # --- h channel: P, diagonal -s1*I
    chh = next(c for c in channels if c.name == "h")
    for i in range(n):
        op = offs[i]
        add_p(i, op, chh.offset + op, np.eye(p_dims[i]), np.eye(p_dims[i]), mirror=True)
        if c_dims[i] > 0:
            oc = op + p_dims[i]
            pi.add(f"P_c{i}", oc, chh.offset + oc, np.eye(c_dims[i]), np.eye(c_dims[i]),
                   mirror=True)
    pi.add_scalar("s1", chh.offset, chh.offset, -np.eye(ncl))

    # --- perturbation channels
    if variant.perturbed:
        ch1 = next(c for c in channels if c.name == "z1")
        ch2 = next(c for c in channels if c.name == "z2")
        for i, am in enumerate(plant.per_area):
            add_p(i, offs[i], ch1.offset + i, np.eye(p_dims[i]), am.b, mirror=True)
            add_p(i, offs[i], ch2.offset + i, np.eye(p_dims[i]), am.b, mirror=True)
        pi.add_scalar("s2", ch1.offset, ch1.offset, -np.eye(n))
        pi.add_scalar("s3", ch2.offset, ch2.offset, -np.eye(n))
        if n_c > 0:
            ch3 = next(c for c in channels if c.name == "z3")
            ch4 = next(c for c in channels if c.name == "z4")
            c_off = 0
            for i in range(n):
                if c_dims[i] > 0:
                    oc = offs[i] + p_dims[i]
                    eye_c = np.eye(c_dims[i])
                    pi.add(f"P_c{i}", oc, ch3.offset + c_off, eye_c, eye_c, mirror=True)
                    pi.add(f"P_c{i}", oc, ch4.offset + c_off, eye_c, eye_c, mirror=True)
                    c_off += c_dims[i]
            pi.add_scalar("s4", ch3.offset, ch3.offset, -np.eye(n_c))
            pi.add_scalar("s5", ch4.offset, ch4.offset, -np.eye(n_c))

    # --- nonlinearity bound channel: s1*Htilde', diagonal -Gamma1
    chb = next(c for c in channels if c.name == "hbound")
    for i in range(n):
        h_i = plant.h_block(i)  # 1 x n_pi
        h_tilde_i = np.zeros((1, q[i]))
        h_tilde_i[0, : p_dims[i]] = h_i
        pi.add_scalar("s1", offs[i], chb.offset + i, h_tilde_i.T, mirror=True)
        pi.add_scalar(f"gamma1_{i}", chb.offset + i, chb.offset + i, -np.eye(1))

    meta = {
        "n_areas": n,
        "plant_dims": p_dims,
        "controller_orders": c_dims,
        "variant": variant.name,
        "rho": list(map(float, weights)),
        "bounds": {
            "delta_ac": bounds.delta_ac,
            "delta_bc": bounds.delta_bc,
            "delta_cc": bounds.delta_cc,
            "delta_dc": bounds.delta_dc,
        },
        "delay_rates": {f"{i}_{j}": delays.rate(i, j) for (i, j) in delays.pairs}
        if variant.delayed
        else {},
        "r_block_diagonal": bool(r_block_diagonal),
        "s1_min": float(s1_min),
        "c_norm": c_norm,
        "analysis": fixed_ctrl is not None,
        "exact_recovery": bool(structured),
    }
    return LmiProblem(
        variables=variables,
        objective=objective,
        pi_map=pi,
        margin=float(margin),
        channels=channels,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# recovery


def extract_canonical(
    solution: dict[str, np.ndarray], problem: LmiProblem
) -> dict[str, np.ndarray]:
    """Merge structured exact-recovery variables back into P_pi/Y_i/Q_i form."""
    if not problem.meta.get("exact_recovery"):
        return dict(solution)
    out = dict(solution)
    n = problem.meta["n_areas"]
    p_dims = problem.meta["plant_dims"]
    c_dims = problem.meta["controller_orders"]
    for i in range(n):
        npi = p_dims[i]
        p = np.zeros((npi, npi))
        p[0, 0] = float(np.asarray(solution[f"P_p{i}_x"]).reshape(-1)[0])
        p[1:, 1:] = np.asarray(solution[f"P_p{i}_r"], float)
        out[f"P_p{i}"] = p
        y = np.zeros((npi, 1))
        y[0, 0] = float(np.asarray(solution[f"Yx_{i}"]).reshape(-1)[0])
        out[f"Y_{i}"] = y
        if c_dims[i] > 0:
            q = np.zeros((npi, c_dims[i]))
            q[0, :] = np.asarray(solution[f"Qx_{i}"], float).reshape(-1)
            out[f"Q_{i}"] = q
    return out


def recover_controller(
    solution: dict[str, np.ndarray],
    plant: GlobalPlant,
    controller_orders: list[int],
    pd_tol: float = 1e-10,
) -> DecentralizedController:
    """Extract controller matrices from a synthesis solution.

    A_ci and B_ci come out of exact inversions of P_ci; C_ci and D_ci use the
    pseudo-inverse of the input column and are exact only when the relevant
    columns lie in its range, so the Frobenius residuals of both
    substitutions are recorded.
    """
    n = plant.n_areas
    a_c, b_c, c_c, d_c, residuals = [], [], [], [], []
    for i in range(n):
        p_pi = np.asarray(solution[f"P_p{i}"], float)
        lam = np.linalg.eigvalsh((p_pi + p_pi.T) / 2.0).min()
        if lam <= pd_tol:
            raise CertificateError(f"P_p{i} is not positive definite (min eig {lam:.3e})")
        order = controller_orders[i]
        bi = plant.per_area[i].b
        bi_pinv = np.linalg.pinv(bi)
        p_pi_inv = np.linalg.inv(p_pi)
        y_i = np.asarray(solution[f"Y_{i}"], float).reshape(-1, 1)
        d_ci = float((bi_pinv @ (p_pi_inv @ y_i))[0, 0])
        res_d = float(np.linalg.norm(p_pi @ bi * d_ci - y_i))
        if order > 0:
            p_ci = np.asarray(solution[f"P_c{i}"], float)
            lam_c = np.linalg.eigvalsh((p_ci + p_ci.T) / 2.0).min()
            if lam_c <= pd_tol:
                raise CertificateError(f"P_c{i} is not positive definite (min eig {lam_c:.3e})")
            p_ci_inv = np.linalg.inv(p_ci)
            u_i = np.asarray(solution[f"U_{i}"], float)
            w_i = np.asarray(solution[f"W_{i}"], float).reshape(-1, 1)
            q_i = np.asarray(solution[f"Q_{i}"], float)
            a_ci = p_ci_inv @ u_i
            b_ci = p_ci_inv @ w_i
            c_ci = bi_pinv @ (p_pi_inv @ q_i)
            res_c = float(np.linalg.norm(p_pi @ bi @ c_ci - q_i))
        else:
            a_ci = np.zeros((0, 0))
            b_ci = np.zeros((0, 1))
            c_ci = np.zeros((1, 0))
            res_c = 0.0
        a_c.append(a_ci)
        b_c.append(b_ci)
        c_c.append(c_ci.reshape(1, -1))
        d_c.append(d_ci)
        residuals.append((res_c, res_d))

    gamma1 = np.array([float(np.asarray(solution[f"gamma1_{i}"]).reshape(-1)[0]) for i in range(n)])
    gamma2 = np.array([float(np.asarray(solution[f"gamma2_{i}"]).reshape(-1)[0]) for i in range(n)])
    return DecentralizedController(
        a_c=a_c,
        b_c=b_c,
        c_c=c_c,
        d_c=d_c,
        gamma1=gamma1,
        gamma2=gamma2,
        recovery_residuals=residuals,
        synthesis_gamma1=gamma1.copy(),
        synthesis_gamma2=gamma2.copy(),
    )


def post_substitution_assignment(
    solution: dict[str, np.ndarray],
    plant: GlobalPlant,
    ctrl: DecentralizedController,
) -> dict[str, np.ndarray]:
    """Replace Y/Q/W/U by their values implied by a concrete controller."""
    out = dict(solution)
    for i in range(plant.n_areas):
        p_pi = np.asarray(solution[f"P_p{i}"], float)
        bi = plant.per_area[i].b
        out[f"Y_{i}"] = p_pi @ bi * ctrl.d_c[i]
        if ctrl.orders[i] > 0:
            p_ci = np.asarray(solution[f"P_c{i}"], float)
            out[f"Q_{i}"] = p_pi @ bi @ ctrl.c_c[i]
            out[f"W_{i}"] = p_ci @ ctrl.b_c[i]
            out[f"U_{i}"] = p_ci @ ctrl.a_c[i]
    return out
