"""Linear solver for the type-changing second-order duct equation.

The equation

    sum_ij k_ij d2_ij psi + kbar1(x1) d1 psi = F   on the duct,
    psi = 0 at the entrance,  zero normal derivative on the wall,

is elliptic before the sonic station and hyperbolic after it, with no exit
condition.  The solve strategy:

1. extend every coefficient and the source past the physical exit with a
   four-point reflection that matches value and three derivatives, onto a
   longer duct where the blended coefficients turn the equation elliptic
   again near the new exit;
2. regularize with a small third-order axial term sigma * d1^3 and the extra
   entrance condition d1^2 psi = 0, expand transversally in the zero-flux
   eigenbasis, and solve the resulting coupled third-order ODE system with
   4th-order finite differences as one sparse direct solve;
3. walk sigma down a geometric ladder, extrapolate to sigma = 0, gate on an
   a-posteriori residual of the unregularized equation, and restrict back
   to the physical duct.
"""

from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ContinuationFailureError, DegenerateCoefficientError,
                     DimensionMismatchError, GridIncompatibilityError,
                     SingularSystemError, StateTooLargeError)
from .fdops import (AxialGrid, boundary_derivative_row, derivative_matrix,
                    interpolation_matrix)
from .xsection import SpectralField, neumann_basis


# ---------------------------------------------------------------------------
# extension operator
# ---------------------------------------------------------------------------

def extension_coefficients():
    """Reflection weights: exact rational solution of the four moment
    conditions sum_j (-1)^k j^(-k) c_j = 1, k = 0..3."""
    n = 4
    A = [[Fraction((-1) ** k) / Fraction(j) ** k for j in range(1, n + 1)]
         for k in range(n)]
    b = [Fraction(1)] * n
    # exact Gaussian elimination
    for col in range(n):
        piv = next(r for r in range(col, n) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        b[col], b[piv] = b[piv], b[col]
        inv = 1 / A[col][col]
        A[col] = [a * inv for a in A[col]]
        b[col] *= inv
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [ar - f * ac for ar, ac in zip(A[r], A[col])]
                b[r] -= f * b[col]
    out = tuple(int(v) if v.denominator == 1 else v for v in b)
    return out


class ExtensionOperator:
    """Extend axial samples (or callables) from [L0, L1] to [L0, L2] by the
    four-point reflection about L1.

    Sample-based extension needs values at L1 - (x - L1)/j which in general
    fall between nodes; those are taken by 6-point local interpolation
    (O(h^6)), and exactly when they land on a node.  `require_nodal=True`
    enforces the strict all-on-nodes contract instead.
    """

    def __init__(self, full_grid, i_exit):
        self.grid = full_grid
        self.i_exit = i_exit
        self.c = tuple(float(v) for v in extension_coefficients())
        self.bound_constant = max(1.0, sum(abs(v) for v in self.c))
        L1 = full_grid.x[i_exit]
        x_duct = full_grid.x[: i_exit + 1]
        x_ext = full_grid.x[i_exit + 1:]
        self._n_ext = len(x_ext)
        self._targets = [L1 - (x_ext - L1) / j for j in (1, 2, 3, 4)]
        self._offgrid = any(
            np.any(np.abs(np.round((t - x_duct[0]) / full_grid.h)
                          * full_grid.h + x_duct[0] - t) > 1e-12)
            for t in self._targets)
        R = None
        for cj, t in zip(self.c, self._targets):
            Rj = interpolation_matrix(x_duct, t)
            R = cj * Rj if R is None else R + cj * Rj
        self._R = R.tocsr()

    def extend_samples(self, values, require_nodal=False):
        """values: (n_duct, ...) -> (n_full, ...)."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.i_exit + 1:
            raise DimensionMismatchError("extension input does not span the duct")
        if require_nodal and self._offgrid:
            raise GridIncompatibilityError(
                "reflected points fall between axial nodes on this grid")
        flat = values.reshape(values.shape[0], -1)
        ext = self._R @ flat
        out = np.concatenate([flat, ext], axis=0)
        return out.reshape((self.grid.n + 1,) + values.shape[1:])

    def extend_callable(self, f, xs):
        """Pointwise extension of a callable; preserves the value dtype so
        extended-precision probes of the reflection stay meaningful."""
        xs = np.asarray(xs)
        L1 = self.grid.x[self.i_exit]
        inside = np.asarray(xs <= L1 + 1e-14)
        vals_in = np.asarray(f(xs[inside])) if np.any(inside) else None
        vals_out = None
        if np.any(~inside):
            for j, cj in zip((1, 2, 3, 4), self.c):
                term = cj * np.asarray(f(L1 - (xs[~inside] - L1) / j))
                vals_out = term if vals_out is None else vals_out + term
        dtypes = [v.dtype for v in (vals_in, vals_out) if v is not None]
        out = np.empty(xs.shape, dtype=np.result_type(*dtypes))
        if vals_in is not None:
            out[inside] = vals_in
        if vals_out is not None:
            out[~inside] = vals_out
        return out


# ---------------------------------------------------------------------------
# discretization bundle
# ---------------------------------------------------------------------------

class DuctDiscretization:
    """Grids, transverse basis, and extension operator for one duct."""

    def __init__(self, cs, L0, L1, L2, n_axial, n_modes):
        self.cs = cs
        self.full = AxialGrid(L0, L2, n_axial)
        self.i_exit = self.full.index_of(L1)
        self.duct = self.full.subgrid(self.i_exit)
        self.basis = neumann_basis(cs, n_modes)
        self.extension = ExtensionOperator(self.full, self.i_exit)
        self._kernels = None

    @property
    def n_modes(self):
        return self.basis.n_modes

    def kernels(self):
        """Weighted mode-pair kernels reused by every coefficient assembly."""
        if self._kernels is None:
            b = self.basis
            w = self.cs.weights
            P = b.n_modes
            G = self.cs.n2 * self.cs.n3
            Bw = (b.values * w).reshape(P, G)

            def pair(Y):
                """K[(m,j), g] = b_m(g) * Y_j(g) * w(g)."""
                return np.einsum("mg,jg->mjg", Bw,
                                 Y.reshape(P, G)).reshape(P * P, G)

            self._kernels = {
                "bb": pair(b.values),
                "b2": pair(b.d2),
                "b3": pair(b.d3),
                "b22": pair(b.d22),
                "b23": pair(b.d23),
                "b33": pair(b.d33),
            }
        return self._kernels


# ---------------------------------------------------------------------------
# coefficient assembly
# ---------------------------------------------------------------------------

class MixedCoefficients:
    """Symmetric coefficient fields on the duct and their extension.

    Fields are stored as (n_axial, n2, n3) arrays; the leading i_exit + 1
    slices are the physical-duct values, the remainder the reflected /
    blended continuation.
    """

    def __init__(self, disc, bg, fields, abar1, eps, margins):
        self.disc = disc
        self.bg = bg
        self.a11 = fields["a11"]
        self.a12 = fields["a12"]
        self.a13 = fields["a13"]
        self.a22 = fields["a22"]
        self.a23 = fields["a23"]
        self.a33 = fields["a33"]
        self.abar1 = abar1
        self.eps = eps
        self.margins = margins

    def duct_slice(self, name):
        return getattr(self, name)[: self.disc.i_exit + 1]

    def transverse_margin(self):
        return self.margins["transverse_margin"]

    def wall_residual(self):
        return self.margins["wall_residual"]


def assemble_coefficients(disc, bg, state=None, eps=0.0, phi0=None):
    """Build the quasilinear coefficient fields at a given flow state.

    state: None (background) or dict with velocity perturbation components
    v1, v2, v3 as (n_duct, n2, n3) arrays.  phi0: optional force
    perturbation providing value(x1 grid, cross grid).
    """
    cs = disc.cs
    nd = disc.i_exit + 1
    shape = (nd, cs.n2, cs.n3)
    if state is None:
        v1 = np.zeros(shape)
        v2 = np.zeros(shape)
        v3 = np.zeros(shape)
    else:
        v1, v2, v3 = (np.asarray(state[k], dtype=float) for k in ("v1", "v2", "v3"))
        if v1.shape != shape:
            raise DimensionMismatchError("state fields do not match the duct grid")

    g = bg.gas.gamma
    xd = disc.duct.x
    c2 = bg.sample("c2")[: nd, None, None]
    ub = bg.sample("u")[: nd, None, None]
    kbar11 = bg.sample("k11")[: nd, None, None]
    kbar11_full = bg.sample("k11")
    p0 = np.zeros(shape) if phi0 is None else phi0.value_grid(xd, cs)

    speed2 = v1 ** 2 + v2 ** 2 + v3 ** 2
    common = (g - 1.0) / c2 * (eps * p0 - ub * v1 - 0.5 * speed2)
    k11 = kbar11 + ((g - 1.0) * eps * p0 - (g + 1.0) * ub * v1
                    - (g + 1.0) / 2.0 * v1 ** 2
                    - (g - 1.0) / 2.0 * (v2 ** 2 + v3 ** 2)) / c2
    k22 = 1.0 + common - v2 ** 2 / c2
    k33 = 1.0 + common - v3 ** 2 / c2
    k12 = -(ub + v1) * v2 / c2
    k13 = -(ub + v1) * v3 / c2
    k23 = -v2 * v3 / c2

    E = disc.extension.extend_samples
    if bg.extension is None:
        raise GridIncompatibilityError("background flow lacks the extension data")
    abar11 = bg.extension["a11"].value
    abar1 = bg.extension["a1"].value
    fields = {
        "a11": abar11[:, None, None] + E(k11 - kbar11),
        "a12": E(k12),
        "a13": E(k13),
        "a22": 1.0 + E(k22 - 1.0),
        "a23": E(k23),
        "a33": 1.0 + E(k33 - 1.0),
    }

    # transverse block must stay uniformly elliptic (margin 1/2)
    tr = 0.5 * (fields["a22"] + fields["a33"])
    disc2 = np.sqrt((0.5 * (fields["a22"] - fields["a33"])) ** 2
                    + fields["a23"] ** 2)
    lam_min = float(np.min(tr - disc2))
    if lam_min < 0.5:
        raise StateTooLargeError(
            f"transverse ellipticity margin {lam_min:.4f} fell below 1/2")

    wall = cs.normal_derivative(k12, k13)
    margins = {
        "transverse_margin": lam_min,
        "wall_residual": float(np.max(np.abs(wall))),
        "k11_deviation": float(np.max(np.abs(k11 - kbar11))),
    }
    return MixedCoefficients(disc, bg, fields, abar1, eps, margins)


# ---------------------------------------------------------------------------
# regularized Galerkin system
# ---------------------------------------------------------------------------

class GalerkinSystem:
    """Coupled mode system of the regularized extended operator.

    The third-order-in-x1 mode system is written as a first-order system in
    (A, A', A'') and discretized with the trapezoidal box scheme, which is
    A-stable: it carries no spurious mesh modes through the type-change
    line, uniformly in the regularization parameter (a high-order
    collocation of the third-order form develops near-null sawtooth modes
    there).  One sparse direct factorization solves each rung.
    """

    def __init__(self, coeffs):
        disc = coeffs.disc
        cs = disc.cs
        P = disc.n_modes
        n = disc.full.n + 1
        G = cs.n2 * cs.n3
        ker = disc.kernels()

        def contract(field, kernel):
            return (field.reshape(n, G) @ kernel.T).reshape(n, P, P)

        self.Amat = contract(coeffs.a11, ker["bb"])
        self.Bmat = 2.0 * (contract(coeffs.a12, ker["b2"])
                           + contract(coeffs.a13, ker["b3"]))
        self.Bmat += coeffs.abar1[:, None, None] * np.eye(P)[None]
        self.Cmat = (contract(coeffs.a22, ker["b22"])
                     + 2.0 * contract(coeffs.a23, ker["b23"])
                     + contract(coeffs.a33, ker["b33"]))
        self.disc = disc
        self._base = None
        self._sig_pattern = None

    # state layout per node: [A (P), A' (P), A'' (P)], node-major
    def _assemble_base(self):
        disc = self.disc
        grid = disc.full
        P = disc.n_modes
        n_iv = grid.n
        n = n_iv + 1
        h = grid.h
        W = 3 * P
        rows, cols, vals = [], [], []

        def add_block(r0, c0, block):
            """Add per-interval (P x P) blocks at row offset r0, col offset
            c0 (both relative to the interval's left-node state)."""
            if block.ndim == 2:
                block = np.broadcast_to(block, (n_iv,) + block.shape)
            iv = np.arange(n_iv)[:, None, None]
            m = np.arange(P)[None, :, None]
            j = np.arange(P)[None, None, :]
            shape = (n_iv, P, P)
            rows.append(np.broadcast_to(iv * W + r0 + m, shape).ravel())
            cols.append(np.broadcast_to(iv * W + c0 + j, shape).ravel())
            vals.append(np.ascontiguousarray(
                np.broadcast_to(block, shape)).ravel())

        I = np.eye(P)
        Z = h / 2.0
        # R1 rows (offset 0): A_{i+1} - A_i - h/2 (A'_{i+1} + A'_i) = 0
        add_block(0, W, I)
        add_block(0, 0, -I)
        add_block(0, W + P, -Z * I)
        add_block(0, P, -Z * I)
        # R2 rows (offset P): A'_{i+1} - A'_i - h/2 (A''_{i+1} + A''_i) = 0
        add_block(P, W + P, I)
        add_block(P, P, -I)
        add_block(P, W + 2 * P, -Z * I)
        add_block(P, 2 * P, -Z * I)
        # R3 rows (offset 2P), sigma-independent part:
        # h/2 [ (Amat A'' + Bmat A' + Cmat A) at i and i+1 ] = h/2 (G_i+G_{i+1})
        add_block(2 * P, 2 * P, Z * self.Amat[:-1])
        add_block(2 * P, W + 2 * P, Z * self.Amat[1:])
        add_block(2 * P, P, Z * self.Bmat[:-1])
        add_block(2 * P, W + P, Z * self.Bmat[1:])
        add_block(2 * P, 0, Z * self.Cmat[:-1])
        add_block(2 * P, W, Z * self.Cmat[1:])

        N = W * n
        n_rows = W * n_iv + 3 * P
        base = sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_rows, N)).tocsr()

        # boundary rows: entrance value, entrance curvature, exit slope
        bc_rows, bc_cols, bc_vals = [], [], []
        r0 = W * n_iv
        for m in range(P):
            bc_rows.append(r0 + m)
            bc_cols.append(m)                      # A_m at entrance
            bc_vals.append(1.0)
            bc_rows.append(r0 + P + m)
            bc_cols.append(2 * P + m)              # A''_m at entrance
            bc_vals.append(1.0)
            bc_rows.append(r0 + 2 * P + m)
            bc_cols.append((n - 1) * W + P + m)    # A'_m at exit
            bc_vals.append(1.0)
        bc = sp.coo_matrix((bc_vals, (bc_rows, bc_cols)),
                           shape=(n_rows, N)).tocsr()
        self._base = base + bc

        # sigma pattern: sigma * (A''_{i+1} - A''_i) on the R3 rows
        sr, sc, sv = [], [], []
        iv = np.arange(n_iv)[:, None]
        m = np.arange(P)[None, :]
        sr.extend([(iv * W + 2 * P + m).ravel()] * 2)
        sc.append((iv * W + W + 2 * P + m).ravel())
        sc.append((iv * W + 2 * P + m).ravel())
        sv.append(np.ones(n_iv * P))
        sv.append(-np.ones(n_iv * P))
        self._sig_pattern = sp.coo_matrix(
            (np.concatenate(sv),
             (np.concatenate(sr), np.concatenate(sc))),
            shape=(n_rows, N)).tocsr()

    def matrix(self, sigma):
        if self._base is None:
            self._assemble_base()
        if sigma == 0.0:
            return self._base.tocsc()
        return (self._base + sigma * self._sig_pattern).tocsc()

    def stack(self, A0, A1, A2):
        """(P, n) components -> interleaved state vector."""
        P = self.disc.n_modes
        n = self.disc.full.n + 1
        u = np.empty((n, 3, P))
        u[:, 0] = A0.T
        u[:, 1] = A1.T
        u[:, 2] = A2.T
        return u.reshape(-1)

    def unstack(self, u):
        P = self.disc.n_modes
        n = self.disc.full.n + 1
        state = u.reshape(n, 3, P)
        return (state[:, 0].T.copy(), state[:, 1].T.copy(),
                state[:, 2].T.copy())

    def rhs(self, G_modes):
        """G_modes: (P, n) projected source."""
        P = self.disc.n_modes
        n_iv = self.disc.full.n
        h = self.disc.full.h
        W = 3 * P
        b = np.zeros(W * n_iv + 3 * P)
        Gt = G_modes.T  # (n, P)
        avg = h / 2.0 * (Gt[:-1] + Gt[1:])  # (n_iv, P)
        iv = np.arange(n_iv)[:, None]
        m = np.arange(P)[None, :]
        b[(iv * W + 2 * P + m).ravel()] = avg.ravel()
        return b

    def residual(self, A0, A1, A2, G_modes):
        """Unregularized equation residual per mode at each node.

        A0/A1/A2: (P, n) solution components."""
        r = (np.einsum("imj,ji->im", self.Amat, A2)
             + np.einsum("imj,ji->im", self.Bmat, A1)
             + np.einsum("imj,ji->im", self.Cmat, A0)) - G_modes.T
        return r.T  # (P, n)

    def residual_box(self, A0, A1, A2, G_modes):
        """Interval-averaged residual of the sigma = 0 *discrete* equations.

        This is what the continuation limit controls: the nodal residual of
        `residual` additionally carries the O(h^2) consistency error of the
        box scheme, which belongs to grid refinement, not to the ladder."""
        r = self.residual(A0, A1, A2, G_modes)  # (P, n)
        return 0.5 * (r[:, :-1] + r[:, 1:])  # (P, n_iv)


class GalerkinSolution:
    """Mode coefficients of one regularized solve with both derivatives."""

    def __init__(self, disc, A0, A1, A2, sigma):
        self.disc = disc
        self.A0 = A0
        self.A1 = A1
        self.A2 = A2
        self.sigma = sigma

    @property
    def field(self):
        return SpectralField(self.disc.basis, self.disc.full, self.A0)


def galerkin_solve(system, G_modes, sigma):
    """Solve the sigma-regularized coupled mode system."""
    if sigma <= 0.0:
        raise SingularSystemError("regularization parameter must be positive",
                                  sigma=sigma, n_modes=system.disc.n_modes)
    M = system.matrix(sigma)
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SingularSystemError(
            f"factorization failed at sigma={sigma:g}: {exc}",
            sigma=sigma, n_modes=system.disc.n_modes) from exc
    sol = lu.solve(system.rhs(G_modes))
    P = system.disc.n_modes
    n = system.disc.full.n + 1
    state = sol.reshape(n, 3, P)
    return GalerkinSolution(system.disc, state[:, 0].T.copy(),
                            state[:, 1].T.copy(), state[:, 2].T.copy(), sigma)


def default_sigma_ladder(start=1e-2, stop=1e-5, factor=0.5, h=None):
    """Geometric regularization ladder.

    When the grid spacing is supplied the floor is raised to 0.5*h^2: below
    that the trapezoidal scheme's parasitic mode decays too slowly and the
    ladder differences stop being monotone (measured, not theoretical).
    """
    if h is not None:
        stop = max(stop, 0.5 * h * h)
    start = max(start, stop)
    out = [start]
    while out[-1] * factor >= stop * (1.0 - 1e-12):
        out.append(out[-1] * factor)
    return out


class MixedSolveReport:
    def __init__(self):
        self.sigmas = []
        self.diffs = []
        self.residual_rel = None
        self.residual_nodal_rel = None
        self.energy_constant = None
        self.boundary = {}

    def as_dict(self):
        out = {f"sigma_{i}": s for i, s in enumerate(self.sigmas)}
        out.update({f"ladder_diff_{i}": d for i, d in enumerate(self.diffs)})
        out["residual_rel"] = self.residual_rel
        if self.residual_nodal_rel is not None:
            out["residual_nodal_rel"] = self.residual_nodal_rel
        if self.energy_constant is not None:
            out["energy_constant"] = self.energy_constant
        out.update(self.boundary)
        return out


def solve_linear_mixed(coeffs, F_duct, sigma_ladder=None, gate_rel=None,
                       min_rungs=3, defect_steps=2):
    """Extend the source, run the regularization ladder, extrapolate to the
    unregularized limit, and restrict to the physical duct.

    The extrapolant's residual in the sigma = 0 discrete equations is always
    recorded (report.residual_rel, relative to the source norm); when
    gate_rel is given it also acts as an early-exit criterion and a hard
    acceptance gate.  Non-monotone ladder differences always raise.

    Returns (psi: SpectralField on the duct, extrapolated GalerkinSolution
    on the extended duct, report).
    """
    disc = coeffs.disc
    F_duct = np.asarray(F_duct, dtype=float)
    G_full = disc.extension.extend_samples(F_duct)
    G_modes = SpectralField.analyze(G_full, disc.basis, disc.full).coeffs

    system = GalerkinSystem(coeffs)
    ladder = sigma_ladder if sigma_ladder is not None \
        else default_sigma_ladder(h=disc.full.h)
    if len(ladder) < 2:
        raise ContinuationFailureError("ladder needs at least two rungs")

    report = MixedSolveReport()
    g_norm = SpectralField(disc.basis, disc.full, G_modes).norm_l2()
    sols = []
    extrapolated = None
    for k, sigma in enumerate(ladder):
        sol = galerkin_solve(system, G_modes, sigma)
        report.sigmas.append(sigma)
        sols.append(sol)
        if len(sols) >= 2:
            diff = (sols[-1].field - sols[-2].field).norm_l2()
            report.diffs.append(diff)
            # the first rungs may sit above the linear-in-sigma regime;
            # once differences start decreasing they must keep decreasing
            d = report.diffs
            if len(d) >= 2 and d[-1] >= d[-2] \
                    and any(b < a for a, b in zip(d, d[1:-1])) \
                    and d[-1] > 1e-13 * max(1.0, g_norm) and g_norm > 0.0:
                raise ContinuationFailureError(
                    "ladder differences stopped decreasing: "
                    f"{d[-2]:.3e} -> {d[-1]:.3e}")
            s_prev, s_last = ladder[k - 1], sigma
            w = s_last / (s_prev - s_last)

            def _xp(last, prev):
                return last + w * (last - prev)

            extrapolated = GalerkinSolution(
                disc,
                _xp(sols[-1].A0, sols[-2].A0),
                _xp(sols[-1].A1, sols[-2].A1),
                _xp(sols[-1].A2, sols[-2].A2), 0.0)
            rb = system.residual_box(extrapolated.A0, extrapolated.A1,
                                     extrapolated.A2, G_modes)
            res_norm = float(np.sqrt(disc.full.h * np.sum(rb ** 2)))
            report.residual_rel = res_norm / max(g_norm, 1e-300)
            if gate_rel is not None and k + 1 >= min_rungs \
                    and report.residual_rel <= gate_rel:
                break
        sols = sols[-2:]

    if extrapolated is None:
        raise ContinuationFailureError("ladder produced no extrapolant")

    # defect correction against the sigma = 0 discrete system: each pass
    # shrinks the extrapolation remnant by another factor of sigma_min
    if defect_steps > 0 and g_norm > 0.0:
        sigma_min = report.sigmas[-1]
        M0 = system.matrix(0.0)
        b = system.rhs(G_modes)
        try:
            lu = spla.splu(system.matrix(sigma_min))
        except RuntimeError as exc:
            raise SingularSystemError(
                f"defect factorization failed at sigma={sigma_min:g}: {exc}",
                sigma=sigma_min, n_modes=disc.n_modes) from exc
        u = system.stack(extrapolated.A0, extrapolated.A1, extrapolated.A2)
        for _ in range(defect_steps):
            r = b - M0 @ u
            u = u + lu.solve(r)
        A0, A1, A2 = system.unstack(u)
        extrapolated = GalerkinSolution(disc, A0, A1, A2, 0.0)
        rb = system.residual_box(A0, A1, A2, G_modes)
        report.residual_rel = float(
            np.sqrt(disc.full.h * np.sum(rb ** 2))) / g_norm

    if gate_rel is not None and report.residual_rel is not None \
            and report.residual_rel > gate_rel and g_norm > 0.0:
        raise ContinuationFailureError(
            f"limit residual {report.residual_rel:.3e} above gate {gate_rel:g}")
    # regularized-estimate constant from the last converged rung, plus the
    # nodal (consistency-order) residual for grid-refinement diagnostics
    last = sols[-1]
    h1 = last.field.norm_h1()
    d2n = SpectralField(disc.basis, disc.full, last.A2).norm_l2()
    if g_norm > 0.0:
        report.energy_constant = (last.sigma * d2n ** 2 + h1 ** 2) / g_norm ** 2
        rn = system.residual(extrapolated.A0, extrapolated.A1,
                             extrapolated.A2, G_modes)
        report.residual_nodal_rel = SpectralField(
            disc.basis, disc.full, rn).norm_l2() / g_norm

    psi_ext = extrapolated.field
    psi = psi_ext.restrict(disc.i_exit, disc.duct)
    report.boundary["entrance_value"] = float(np.max(np.abs(psi.coeffs[:, 0])))
    report.boundary["wall_flux"] = 0.0  # basis satisfies the wall condition
    return psi, extrapolated, report


# ---------------------------------------------------------------------------
# two-point mode BVP
# ---------------------------------------------------------------------------

def mode_bvp_solve(x, k, lam, g, bc_lo, bc_hi, kprime=None, ops=None):
    """Solve (k a')' - lam a = g on the nodes x with 4th-order stencils.

    bc_lo/bc_hi: ("dirichlet"|"neumann", value).  k may be a scalar or an
    array; kprime is its derivative (computed by finite differences when
    omitted for array input).  ops optionally supplies prebuilt (D1, D2)
    derivative matrices for batch callers.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    k_arr = np.full(n, float(k)) if np.isscalar(k) else np.asarray(k, dtype=float)
    if np.any(k_arr <= 0.0):
        raise DegenerateCoefficientError("BVP coefficient must stay positive")
    if ops is not None:
        D1, D2 = ops
    else:
        D1 = derivative_matrix(x, 1)
        D2 = derivative_matrix(x, 2)
    if kprime is None:
        kp = np.zeros(n) if np.isscalar(k) else D1 @ k_arr
    else:
        kp = np.full(n, float(kprime)) if np.isscalar(kprime) \
            else np.asarray(kprime, dtype=float)
    g_arr = np.full(n, float(g)) if np.isscalar(g) else np.asarray(g, dtype=float)
    A = (sp.diags(k_arr) @ D2 + sp.diags(kp) @ D1
         - lam * sp.identity(n, format="csr")).tolil()
    rhs = g_arr.astype(float).copy()

    for at_start, (kind, value) in ((True, bc_lo), (False, bc_hi)):
        row = 0 if at_start else n - 1
        A.rows[row] = []
        A.data[row] = []
        if kind == "dirichlet":
            A[row, row] = 1.0
        elif kind == "neumann":
            idx, w = boundary_derivative_row(x, 1, at_start=at_start)
            for j, wj in zip(idx, w):
                A[row, j] = wj
        else:
            raise DimensionMismatchError(f"unknown BC kind {kind!r}")
        rhs[row] = value

    try:
        sol = spla.splu(A.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise DegenerateCoefficientError(f"mode BVP factorization failed: {exc}") \
            from exc
    return sol


# ---------------------------------------------------------------------------
# multiplier-identity diagnostics
# ---------------------------------------------------------------------------

def energy_diagnostics(psi, F_duct, coeffs, d0):
    """Evaluate each term of the weighted-slope multiplier identity on the
    physical duct and the observed entrance/exit energy constant.

    Returns a flat dict (term name -> value) suitable for the key-value
    report writer.  Purely diagnostic: derivatives of the coefficient grids
    are taken by 4th-order finite differences.
    """
    disc = coeffs.disc
    cs = disc.cs
    grid = psi.grid
    nd = grid.n + 1
    x = grid.x
    d = 6.0 * (x - d0)
    dprime = 6.0

    b = disc.basis
    d1 = (grid.d(1) @ psi.coeffs.T).T
    psi_1 = b.synthesize_slice(d1.T)
    psi_2 = np.einsum("pij,np->nij", b.d2, psi.coeffs.T)
    psi_3 = np.einsum("pij,np->nij", b.d3, psi.coeffs.T)

    k11 = coeffs.duct_slice("a11")
    k12 = coeffs.duct_slice("a12")
    k13 = coeffs.duct_slice("a13")
    k22 = coeffs.duct_slice("a22")
    k23 = coeffs.duct_slice("a23")
    k33 = coeffs.duct_slice("a33")
    kbar1 = coeffs.abar1[: nd]

    D1x = grid.d(1)

    def ddx1(fld):
        flat = fld.reshape(nd, -1)
        return (D1x @ flat).reshape(fld.shape)

    # transverse derivatives of coefficient grids (diagnostic only)
    D2t = derivative_matrix(cs.x2, 1).toarray()
    D3t = derivative_matrix(cs.x3, 1).toarray()

    def ddx2(fld):
        return np.einsum("ab,nbj->naj", D2t, fld)

    def ddx3(fld):
        return np.einsum("ab,njb->nja", D3t, fld)

    w_cross = cs.weights

    def vol(fld):
        return float(np.sum(grid.quad_w[:, None, None] * w_cross * fld))

    F = np.asarray(F_duct, dtype=float)
    lhs = vol(d[:, None, None] * psi_1 * F)

    quad_tr = (k22 * psi_2 ** 2 + 2.0 * k23 * psi_2 * psi_3 + k33 * psi_3 ** 2)
    bnd_hi = 0.5 * d[-1] * (k11[-1] * psi_1[-1] ** 2) - 0.5 * d[-1] * quad_tr[-1]
    bnd_lo = 0.5 * d[0] * (k11[0] * psi_1[0] ** 2) - 0.5 * d[0] * quad_tr[0]
    boundary = float(np.sum(w_cross * (bnd_hi - bnd_lo)))

    coercive = (d[:, None, None] * kbar1[:, None, None]
                - 0.5 * ddx1(d[:, None, None] * k11)
                - d[:, None, None] * (ddx2(k12) + ddx3(k13)))
    vol1 = vol(coercive * psi_1 ** 2)

    d1k22 = ddx1(k22)
    d1k23 = ddx1(k23)
    d1k33 = ddx1(k33)
    term_dprime = 0.5 * dprime * quad_tr
    term_cross = -d[:, None, None] * psi_1 * (
        ddx2(k22) * psi_2 + ddx2(k23) * psi_3
        + ddx3(k23) * psi_2 + ddx3(k33) * psi_3)
    term_d1k = 0.5 * d[:, None, None] * (
        d1k22 * psi_2 ** 2 + 2.0 * d1k23 * psi_2 * psi_3 + d1k33 * psi_3 ** 2)
    vol2 = vol(term_dprime + term_cross + term_d1k)

    rhs = boundary + vol1 + vol2
    f_norm2 = vol(F ** 2)
    entrance = float(np.sum(w_cross * psi_1[0] ** 2))
    exit_grad = float(np.sum(w_cross * (psi_1[-1] ** 2 + psi_2[-1] ** 2
                                        + psi_3[-1] ** 2)))
    h1 = psi.norm_h1() ** 2
    report = {
        "lhs_weighted_source": lhs,
        "rhs_boundary": boundary,
        "rhs_interior_slope": vol1,
        "rhs_interior_transverse": vol2,
        "identity_imbalance": lhs - rhs,
        "coercivity_min": float(np.min(coercive)),
        "entrance_slope_energy": entrance,
        "exit_gradient_energy": exit_grad,
        "h1_energy": h1,
        "source_energy": f_norm2,
        "energy_constant": (entrance + exit_grad + h1) / f_norm2
        if f_norm2 > 0 else 0.0,
    }
    return report
