"""KKT residual map and its Newton operators.

The stationarity system is

    F(x, xi, Gamma) = [ grad f + h'(x)* xi + g'(x)* Gamma ;
                        h(x) ;
                        -g(x) + proj(g(x) + Gamma) ]

with proj the blockwise PSD projection.  F vanishes exactly at KKT points
(with the cone multiplier stored so that g + Gamma has the multiplier's
negative part).  The projection is nonsmooth; Newton matrices replace its
derivative with one of two surrogates ("U0" zeroes the undecided
eigenvalue block, "UI" keeps it), giving

    U = [ W   J'   G' ]
        [ J   0    0  ]
        [(V-I)G  0  V ]

in svec coordinates, where V is the surrogate applied after rotating into
the eigenbasis of g + Gamma.
"""

import warnings

import numpy as np
import scipy.linalg
from dataclasses import dataclass

from .linalg_sym import eig_sym, project_psd, svec_rotation, v_mask
from .problem import (
    BlockSymMatrix,
    hess_matrix_of,
    jac_g_matrix_of,
    jac_h_matrix_of,
    to_dense,
)
from .catalog import example2


def assembly_class_tol(A):
    """Eigenvalue classification tolerance used when building operators."""
    return 1e-12 * (1.0 + float(np.linalg.norm(A)))


def cone_decompositions(problem, z, class_tol=None):
    """Spectral decompositions of g(x) + Gamma, one per block."""
    gx = problem.g(z.x)
    out = []
    for Gb, Cb in zip(gx.blocks, z.Gamma.blocks):
        A = Gb + Cb
        tol = assembly_class_tol(A) if class_tol is None else class_tol
        out.append(eig_sym(A, class_tol=tol))
    return out


@dataclass
class KktResidual:
    """Residual split into its three rows; cone rows stay in matrix form."""

    stationarity: np.ndarray
    feasibility_eq: np.ndarray
    cone: BlockSymMatrix

    def to_vector(self):
        return np.concatenate([self.stationarity, self.feasibility_eq,
                               self.cone.svec()])

    def norm(self):
        return float(np.linalg.norm(self.to_vector()))


def kkt_residual(problem, z, _decomps=None):
    """Evaluate F at a primal-dual point."""
    gx = problem.g(z.x)
    stat = problem.grad_f(z.x) + problem.jac_g_adj(z.x, z.Gamma)
    if problem.eq_dim:
        stat = stat + problem.jac_h_adj(z.x, z.xi)
    cone = []
    for i, (Gb, Cb) in enumerate(zip(gx.blocks, z.Gamma.blocks)):
        if _decomps is None:
            dec = eig_sym(Gb + Cb, class_tol=assembly_class_tol(Gb + Cb))
        else:
            dec = _decomps[i]
        cone.append(-Gb + project_psd(dec))
    return KktResidual(
        stationarity=stat,
        feasibility_eq=problem.h(z.x) if problem.eq_dim else np.zeros(0),
        cone=BlockSymMatrix(cone),
    )


@dataclass
class DenseOperator:
    """Assembled Newton matrix with its block dimensions for labeling."""

    matrix: np.ndarray
    x_dim: int
    eq_dim: int
    cone_blocks: list
    note: str = ""

    @property
    def shape(self):
        return self.matrix.shape


def _svec_diag(D):
    """svec-coordinate diagonal of a Hadamard mask matrix."""
    iu, ju = np.triu_indices(D.shape[0])
    return D[iu, ju]


def assemble_U(problem, z, variant, class_tol=None, _decomps=None):
    """Dense Newton operator at z for the given surrogate variant.

    Memory is quadratic in x_dim + eq_dim + cone svec length; intended for
    small and medium instances (the solver routes large ones through a
    structured path that never materializes U).
    """
    decomps = (_decomps if _decomps is not None
               else cone_decompositions(problem, z, class_tol))
    W = to_dense(hess_matrix_of(problem, z.x, z.xi, z.Gamma))
    J = to_dense(jac_h_matrix_of(problem, z.x))
    G = to_dense(jac_g_matrix_of(problem, z.x))
    Vblocks = []
    for dec in decomps:
        S = svec_rotation(dec.P)
        d = _svec_diag(v_mask(dec, variant))
        Vblocks.append(S.T @ (d[:, None] * S))
    V = scipy.linalg.block_diag(*Vblocks)
    nx, ne, nc = problem.x_dim, problem.eq_dim, problem.cone_dim
    N = nx + ne + nc
    U = np.zeros((N, N))
    U[:nx, :nx] = W
    U[:nx, nx:nx + ne] = J.T
    U[:nx, nx + ne:] = G.T
    U[nx:nx + ne, :nx] = J
    U[nx + ne:, :nx] = (V - np.eye(nc)) @ G
    U[nx + ne:, nx + ne:] = V
    return DenseOperator(matrix=U, x_dim=nx, eq_dim=ne,
                         cone_blocks=list(problem.cone_blocks),
                         note=f"{variant} at {problem.name}")


def apply_U(problem, z, variant, d, class_tol=None, _decomps=None):
    """Matrix-free application of the Newton operator to a direction."""
    decomps = (_decomps if _decomps is not None
               else cone_decompositions(problem, z, class_tol))
    d = np.asarray(d, dtype=float)
    nx, ne = problem.x_dim, problem.eq_dim
    dx = d[:nx]
    dxi = d[nx:nx + ne]
    dG = BlockSymMatrix.from_svec(problem.cone_blocks, d[nx + ne:])
    row1 = problem.hess_lagrangian(z.x, z.xi, z.Gamma, dx) \
        + problem.jac_g_adj(z.x, dG)
    if ne:
        row1 = row1 + problem.jac_h_adj(z.x, dxi)
    row2 = problem.jac_h(z.x, dx) if ne else np.zeros(0)
    gdx = problem.jac_g(z.x, dx)
    row3 = []
    for dec, Gb, Db in zip(decomps, gdx.blocks, dG.blocks):
        H = Gb + Db
        VH = dec.P @ (v_mask(dec, variant) * (dec.P.T @ H @ dec.P)) @ dec.P.T
        row3.append(-Gb + VH)
    return np.concatenate([row1, row2, BlockSymMatrix(row3).svec()])


def fd_jacobian(problem, z, step=1e-5):
    """Central-difference Jacobian of the residual map at z.

    Valid only where F is differentiable: every eigenvalue of each cone
    argument must clear the step size by a safe factor, otherwise the
    difference quotient straddles the projection's kink and a warning is
    issued.
    """
    margin = np.inf
    for dec in cone_decompositions(problem, z):
        if dec.lam.size:
            margin = min(margin, float(np.min(np.abs(dec.lam))))
    if margin <= 10.0 * step:
        warnings.warn(
            f"finite differences straddle the projection kink "
            f"(eigenvalue margin {margin:.2e} <= 10 * step)",
            stacklevel=2)
    N = problem.total_dim
    M = np.zeros((N, N))
    for i in range(N):
        e = np.zeros(N)
        e[i] = step
        zp = z.add_vector(e)
        zm = z.add_vector(-e)
        M[:, i] = (kkt_residual(problem, zp).to_vector()
                   - kkt_residual(problem, zm).to_vector()) / (2.0 * step)
    return DenseOperator(matrix=M, x_dim=problem.x_dim,
                         eq_dim=problem.eq_dim,
                         cone_blocks=list(problem.cone_blocks),
                         note=f"fd at {problem.name}")


def _op_matrix(op):
    return op.matrix if isinstance(op, DenseOperator) else np.asarray(op)


def min_singular_value(op):
    """Smallest singular value via a full SVD of the assembled matrix."""
    M = _op_matrix(op)
    return float(scipy.linalg.svdvals(M)[-1])


def clarke_combination(U0, UI, t):
    """Convex combination t * U0 + (1 - t) * UI of two assembled operators.

    t = 1 returns the first operand, t = 0 the second; t in [0, 1].
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    A, B = _op_matrix(U0), _op_matrix(UI)
    if A.shape != B.shape:
        raise ValueError("operands have different shapes")
    dims = U0 if isinstance(U0, DenseOperator) else UI
    return DenseOperator(
        matrix=t * A + (1.0 - t) * B,
        x_dim=getattr(dims, "x_dim", A.shape[0]),
        eq_dim=getattr(dims, "eq_dim", 0),
        cone_blocks=list(getattr(dims, "cone_blocks", [])),
        note=f"clarke t={t}",
    )


def example2_family(omega):
    """Generalized-derivative family member for example2 at its solution.

    omega is the 2 x 2 Hadamard mask of the projection surrogate in the
    (identity) eigenbasis.  Admissible masks: the all-zeros and all-ones
    corners, and the two edges [[0, t], [t, 1]] / [[1, t], [t, 0]] for
    t in [0, 1].  omega = 0 reproduces the "U0" operator, omega = ones
    the "UI" operator.
    """
    omega = np.asarray(omega, dtype=float)
    tol = 1e-12
    if omega.shape != (2, 2) or abs(omega[0, 1] - omega[1, 0]) > tol:
        raise ValueError("omega must be a symmetric 2 x 2 mask")
    d11, d22 = omega[0, 0], omega[1, 1]
    t = omega[0, 1]
    if not -tol <= t <= 1.0 + tol:
        raise ValueError("off-diagonal mask entry must lie in [0, 1]")
    near = lambda a, b: abs(a - b) <= tol
    if near(d11, 0.0) and near(d22, 0.0):
        if not near(t, 0.0):
            raise ValueError("zero-diagonal mask must be the zero corner")
    elif near(d11, 1.0) and near(d22, 1.0):
        if not near(t, 1.0):
            raise ValueError("ones-diagonal mask must be the all-ones corner")
    elif not ((near(d11, 0.0) and near(d22, 1.0))
              or (near(d11, 1.0) and near(d22, 0.0))):
        raise ValueError("mask diagonal must be (0,0), (1,1), (0,1) or (1,0)")

    problem, solution = example2()
    z = solution.z_bar
    base = assemble_U(problem, z, "U0")
    U = base.matrix.copy()
    nx, ne = problem.x_dim, problem.eq_dim
    V = np.diag(_svec_diag(omega))
    U[nx + ne:, :nx] = V - np.eye(3)
    U[nx + ne:, nx + ne:] = V
    return DenseOperator(matrix=U, x_dim=nx, eq_dim=ne,
                         cone_blocks=list(problem.cone_blocks),
                         note=f"ex2 family omega={omega.tolist()}")
