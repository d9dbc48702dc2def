"""Per-area and global state-space models of a multi-area power system.

Raw per-area state order is [dXg, dPg, df, dPt] (governor valve position,
generator output, frequency, tie-line power, all as deviations); the
integrator-augmented model appends the integrated area control error y_c
as a fifth state.  All tie coefficients are stored premultiplied by 2*pi,
i.e. a map entry j -> 2*pi*T_ij in 1/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lfcsyn.errors import DimensionError, ParameterError

# raw state indices
IDX_XG, IDX_PG, IDX_F, IDX_PT = 0, 1, 2, 3
IDX_YC = 4  # augmented only


@dataclass(frozen=True)
class AreaParameters:
    """Physical constants of one control area.

    tp, tt, tg are the plant, turbine and governor time constants in
    seconds; kp the plant gain; r the speed regulation (Hz/pu); kb the
    frequency bias (pu/Hz); ke the integrator gain (1/s); xg_min/xg_max
    the valve position limits (pu).  tie_coeffs maps a neighbour index to
    2*pi*T_ij; tie_sum (the frequency coefficient of the tie-line row,
    default: sum of tie_coeffs) may exceed the neighbour sum, the surplus
    being the self term of the tie-line frequency sum.  With tie_sum equal
    to the neighbour sum the interconnection conserves the total tie-line
    deviation exactly, which leaves a structural zero eigenvalue that no
    decentralized feedback can move.
    """

    tp: float
    tt: float
    tg: float
    kp: float
    r: float
    kb: float
    ke: float
    xg_min: float
    xg_max: float
    tie_coeffs: dict[int, float] = field(default_factory=dict)
    tie_sum: float | None = None

    def __post_init__(self):
        for name in ("tp", "tt", "tg"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"time constant {name} must be > 0, got {getattr(self, name)}")
        if self.r <= 0.0:
            raise ParameterError(f"speed regulation r must be > 0, got {self.r}")
        if not (self.xg_min < 0.0 < self.xg_max):
            raise ParameterError(
                f"valve limits must bracket zero: xg_min={self.xg_min}, xg_max={self.xg_max}"
            )
        coeff_sum = float(sum(self.tie_coeffs.values()))
        if self.tie_sum is None:
            object.__setattr__(self, "tie_sum", coeff_sum)
        elif self.tie_sum < coeff_sum - 1e-9:
            # equality is allowed; a surplus is the self term of the first
            # tie-line sum.  tie_sum below the neighbour sum would make the
            # frequency column of the coupling row inconsistent.
            raise ParameterError(
                f"tie_sum={self.tie_sum} is below the sum of tie_coeffs={coeff_sum}"
            )


@dataclass(frozen=True)
class AreaMatrices:
    """State-space matrices of one area, raw (4-state) or augmented (5-state).

    a1_self has its single nonzero entry -1/(r*tg) at (dXg row, df column);
    each a1_cross[j] has -2*pi*T_ij at (dPt row, df column of area j).
    h_gain, xg_lo, xg_hi describe the valve saturation channel: the model
    nonlinearity is h = e_dPg * h_gain * mu(x[dXg]).
    """

    index: int
    a0: np.ndarray
    a1_self: np.ndarray
    a1_cross: dict[int, np.ndarray]
    b: np.ndarray
    bw: np.ndarray
    c: np.ndarray
    h_gain: float
    xg_lo: float
    xg_hi: float
    augmented: bool = False

    @property
    def n(self) -> int:
        return self.a0.shape[0]


@dataclass(frozen=True)
class DelaySpec:
    """Time-varying delays tau_ij(t) = base + amplitude*sin(t) per area pair.

    rate_bound is the known supremum of |d tau_ij/dt|.  A pair with
    base == amplitude == 0 denotes an instantaneous (delay-free) channel;
    every other pair must keep the delay positive (base > amplitude) and
    slowly varying (rate_bound < 1).
    """

    pairs: dict[tuple[int, int], tuple[float, float, float]]

    def __post_init__(self):
        for (i, j), (base, amp, rate) in self.pairs.items():
            if base == 0.0 and amp == 0.0:
                if rate != 0.0:
                    raise ParameterError(f"zero delay pair ({i},{j}) must have rate_bound 0")
                continue
            if base - amp <= 0.0:
                raise ParameterError(
                    f"delay pair ({i},{j}): base - amplitude = {base - amp} must be > 0"
                )
            if rate < amp:
                raise ParameterError(
                    f"delay pair ({i},{j}): rate_bound {rate} < amplitude {amp} is inconsistent"
                )
            if rate >= 1.0:
                raise ParameterError(f"delay pair ({i},{j}): rate_bound {rate} must be < 1")

    @classmethod
    def uniform(cls, n_areas: int, base: float, amplitude: float, rate_bound: float) -> "DelaySpec":
        pairs = {
            (i, j): (base, amplitude, rate_bound)
            for i in range(n_areas)
            for j in range(n_areas)
        }
        return cls(pairs)

    @classmethod
    def none(cls, n_areas: int) -> "DelaySpec":
        return cls.uniform(n_areas, 0.0, 0.0, 0.0)

    @property
    def is_zero(self) -> bool:
        return all(b == 0.0 and a == 0.0 for b, a, _ in self.pairs.values())

    def max_delay(self) -> float:
        return max((b + a for b, a, _ in self.pairs.values()), default=0.0)

    def min_delay_floor(self) -> float:
        """Smallest lower bound base - amplitude over nonzero pairs."""
        floors = [b - a for b, a, _ in self.pairs.values() if not (b == 0.0 and a == 0.0)]
        return min(floors) if floors else 0.0

    def rate(self, i: int, j: int) -> float:
        return self.pairs[(i, j)][2]


@dataclass(frozen=True)
class GlobalPlant:
    """Block assembly of all areas plus the quadratic nonlinearity bound."""

    n_areas: int
    per_area: list[AreaMatrices]
    a0_glob: np.ndarray
    b_glob: np.ndarray
    bw_glob: np.ndarray
    c_glob: np.ndarray
    a_d: dict[tuple[int, int], np.ndarray]
    h_bound: np.ndarray
    alphas: np.ndarray
    delays: DelaySpec
    offsets: list[int]
    state_dim: int

    @property
    def dims(self) -> list[int]:
        return [m.n for m in self.per_area]

    def h_block(self, i: int) -> np.ndarray:
        """Row block H_i of the nonlinearity bound for area i."""
        lo, hi = self.offsets[i], self.offsets[i] + self.per_area[i].n
        return self.h_bound[i : i + 1, lo:hi]


def build_area_matrices(params: AreaParameters, own_index: int) -> AreaMatrices:
    """Construct the raw 4-state matrices of one area.

    Entries are exact rational functions of the physical parameters; the
    delayed droop feedback -1/(r*tg)*df(t-tau_ii) goes to a1_self and each
    tie-line neighbour contributes a single-entry a1_cross matrix.
    """
    if own_index in params.tie_coeffs:
        raise ParameterError(f"area {own_index}: tie_coeffs must not contain the area itself")
    tp, tt, tg = params.tp, params.tt, params.tg
    a0 = np.zeros((4, 4))
    a0[IDX_XG, IDX_XG] = -1.0 / tg
    a0[IDX_PG, IDX_XG] = 1.0 / tt
    a0[IDX_PG, IDX_PG] = -1.0 / tt
    a0[IDX_F, IDX_PG] = params.kp / tp
    a0[IDX_F, IDX_F] = -1.0 / tp
    a0[IDX_F, IDX_PT] = -params.kp / tp
    a0[IDX_PT, IDX_F] = params.tie_sum

    a1_self = np.zeros((4, 4))
    a1_self[IDX_XG, IDX_F] = -1.0 / (params.r * tg)

    a1_cross = {}
    for j, coeff in params.tie_coeffs.items():
        m = np.zeros((4, 4))
        m[IDX_PT, IDX_F] = -coeff
        a1_cross[j] = m

    b = np.zeros((4, 1))
    b[IDX_XG, 0] = 1.0 / tg
    bw = np.zeros((4, 1))
    bw[IDX_F, 0] = -params.kp / tp
    c = np.zeros((1, 4))
    c[0, IDX_F] = params.kb
    c[0, IDX_PT] = 1.0

    return AreaMatrices(
        index=own_index,
        a0=a0,
        a1_self=a1_self,
        a1_cross=a1_cross,
        b=b,
        bw=bw,
        c=c,
        h_gain=1.0 / tt,
        xg_lo=params.xg_min,
        xg_hi=params.xg_max,
        augmented=False,
    )


def augment_with_integrator(m: AreaMatrices, ke: float, kb: float) -> AreaMatrices:
    """Append the integrated-ACE state y_c with dy_c = ke*(kb*df + dPt).

    The output row becomes the pure y_c selector and every matrix is
    zero-padded to the 5-state dimension.
    """
    if m.augmented:
        raise ParameterError(f"area {m.index} is already integrator-augmented")

    def pad(mat: np.ndarray) -> np.ndarray:
        out = np.zeros((5, 5))
        out[:4, :4] = mat
        return out

    a0 = pad(m.a0)
    a0[IDX_YC, IDX_F] = ke * kb
    a0[IDX_YC, IDX_PT] = ke

    b = np.zeros((5, 1))
    b[:4] = m.b
    bw = np.zeros((5, 1))
    bw[:4] = m.bw
    c = np.zeros((1, 5))
    c[0, IDX_YC] = 1.0

    return AreaMatrices(
        index=m.index,
        a0=a0,
        a1_self=pad(m.a1_self),
        a1_cross={j: pad(v) for j, v in m.a1_cross.items()},
        b=b,
        bw=bw,
        c=c,
        h_gain=m.h_gain,
        xg_lo=m.xg_lo,
        xg_hi=m.xg_hi,
        augmented=True,
    )


def assemble_global_system(areas: list[AreaMatrices], delays: DelaySpec) -> GlobalPlant:
    """Assemble block-diagonal global matrices and the N^2 delay matrices.

    a_d[(i,j)] is the full-dimension matrix whose only nonzero block sits
    at block position (i,j): a1_self for i == j, a1_cross[j] otherwise.
    """
    n_areas = len(areas)
    if n_areas == 0:
        raise DimensionError("need at least one area")
    if len({m.augmented for m in areas}) != 1:
        raise DimensionError("areas must be consistently augmented or consistently raw")
    dims = [m.n for m in areas]
    offsets = [0]
    for d in dims[:-1]:
        offsets.append(offsets[-1] + d)
    n = sum(dims)

    a0_glob = np.zeros((n, n))
    b_glob = np.zeros((n, n_areas))
    bw_glob = np.zeros((n, n_areas))
    c_glob = np.zeros((n_areas, n))
    for i, m in enumerate(areas):
        sl = slice(offsets[i], offsets[i] + dims[i])
        a0_glob[sl, sl] = m.a0
        b_glob[sl, i : i + 1] = m.b
        bw_glob[sl, i : i + 1] = m.bw
        c_glob[i : i + 1, sl] = m.c

    a_d: dict[tuple[int, int], np.ndarray] = {}
    for i, m in enumerate(areas):
        for j in range(n_areas):
            if i == j:
                block = m.a1_self
            elif j in m.a1_cross:
                block = m.a1_cross[j]
            else:
                block = np.zeros((dims[i], dims[j]))
            if block.shape != (dims[i], dims[j]):
                raise DimensionError(
                    f"a1 block ({i},{j}) has shape {block.shape}, expected {(dims[i], dims[j])}"
                )
            g = np.zeros((n, n))
            g[offsets[i] : offsets[i] + dims[i], offsets[j] : offsets[j] + dims[j]] = block
            a_d[(i, j)] = g
        for j in m.a1_cross:
            if not (0 <= j < n_areas) or j == i:
                raise DimensionError(f"area {i} references invalid neighbour index {j}")
            if (i, j) not in delays.pairs:
                raise DimensionError(f"delay spec is missing pair ({i},{j})")

    missing = [(i, j) for i in range(n_areas) for j in range(n_areas) if (i, j) not in delays.pairs]
    if missing:
        raise DimensionError(f"delay spec is missing pairs {missing}")

    h_bound = np.zeros((n_areas, n))
    for i, m in enumerate(areas):
        if not (m.xg_lo < 0.0 < m.xg_hi):
            raise ParameterError(f"area {i}: valve limits must bracket zero for the bound")
        h_bound[i, offsets[i] + IDX_XG] = m.h_gain
    alphas = np.ones(n_areas)

    return GlobalPlant(
        n_areas=n_areas,
        per_area=list(areas),
        a0_glob=a0_glob,
        b_glob=b_glob,
        bw_glob=bw_glob,
        c_glob=c_glob,
        a_d=a_d,
        h_bound=h_bound,
        alphas=alphas,
        delays=delays,
        offsets=offsets,
        state_dim=n,
    )


def valve_nonlinearity(x, lo: float, hi: float):
    """Saturation defect mu(x) = clamp(x, lo, hi) - x (zero inside the limits)."""
    if not (lo < 0.0 < hi):
        raise ParameterError(f"valve limits must bracket zero: lo={lo}, hi={hi}")
    return np.clip(x, lo, hi) - x


def nonlinearity_bound(areas: list[AreaParameters], augmented: bool = True):
    """Tightest per-area rows H_i with |h_i| <= alpha_i * |H_i x_i|, alpha_i = 1.

    H_i selects the valve-position state scaled by 1/tt, so the saturation
    channel h_i = (1/tt)*mu(dXg) satisfies h_i^T h_i <= x^T H_i^T H_i x
    because |mu(x)| <= |x| whenever the limits bracket zero.
    """
    n_i = 5 if augmented else 4
    rows = []
    for k, p in enumerate(areas):
        if not (p.xg_min < 0.0 < p.xg_max):
            raise ParameterError(f"area {k}: valve limits must bracket zero")
        h = np.zeros((1, n_i))
        h[0, IDX_XG] = 1.0 / p.tt
        rows.append(h)
    return rows, np.ones(len(areas))


def verify_cone_condition(h_bar, h_blocks, gamma1_bar, gamma1) -> bool:
    """Check lam_max(Hbar^T Hbar) * min gbar_1i <= max g_1i * min_i lam_min(H_i^T H_i).

    The per-block minimum eigenvalue is taken on the row space (the Gram
    matrix H_i H_i^T), so rank-deficient rows H_i are handled the way a
    1 x n block reduces to its squared row norm.
    """
    h_bar = np.atleast_2d(np.asarray(h_bar, dtype=float))
    if h_bar.size == 0 or len(h_blocks) == 0 or len(gamma1_bar) == 0 or len(gamma1) == 0:
        raise ParameterError("cone condition inputs must be nonempty")
    lam_max = float(np.linalg.eigvalsh(h_bar @ h_bar.T).max()) if h_bar.any() else 0.0
    lam_mins = []
    for h in h_blocks:
        h = np.atleast_2d(np.asarray(h, dtype=float))
        lam_mins.append(float(np.linalg.eigvalsh(h @ h.T).min()))
    lhs = lam_max * min(gamma1_bar)
    rhs = max(gamma1) * min(lam_mins)
    return bool(lhs <= rhs * (1.0 + 1e-12) + 1e-300)
