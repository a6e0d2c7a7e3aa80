"""Correction-augmented semismooth Newton iteration.

Each outer step first snaps the spectrum of every cone argument onto exact
activity (eigenvalues within delta of zero are removed from the multiplier,
leaving hard zeros), then takes one Newton step on the KKT map using the
chosen surrogate derivative.  The correction is what keeps the Newton
matrices nonsingular near degenerate solutions; without it the plain
iteration can hit singular matrices arbitrarily close to the solution.

Iteration traces record, per outer step: the residual norm, the distance
to a reference solution when one is supplied, the smallest singular value
of the Newton matrix, the size of the correction just applied, and the
achieved linear-solve residual.
"""

import logging

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from dataclasses import dataclass
from scipy.linalg import lapack
from typing import Optional

from .linalg_sym import SpectralDecomposition, eig_sym
from .problem import BlockSymMatrix, KktPoint
from .kkt import (
    DenseOperator,
    KktResidual,
    assemble_U,
    assembly_class_tol,
    cone_decompositions,
    kkt_residual,
)
from ._reduced import (ReducedNewtonOperator, WoodburyNewtonOperator,
                       reuse_compatible, separable_diagonal)

logger = logging.getLogger("ssnsdp")

# Above this total dimension the solver stops materializing Newton matrices
# and works through the reduced representation instead.
DENSE_LIMIT = 1200


class SingularSystemError(Exception):
    """Newton matrix is numerically singular (condition estimate > 1e14)."""


@dataclass
class SolverParams:
    """Knobs of the corrected Newton iteration.

    variant selects the surrogate derivative ("U0" or "UI"); delta is the
    correction radius; tol is the residual norm target; max_iter caps the
    number of Newton steps.  Linear solves are exact unless exact_solve
    is False AND eta > 0, in which case an iterative solve only has to
    reach the residual target min(eta, ||F||^tau) * ||F||.
    """

    variant: str = "U0"
    delta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 50
    eta: float = 0.0
    tau: float = 1.0
    exact_solve: bool = True

    def __post_init__(self):
        if self.variant not in ("U0", "UI"):
            raise ValueError("variant must be 'U0' or 'UI'")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.eta < 0.0:
            raise ValueError("eta must be nonnegative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")

    @property
    def inexact(self):
        # eta = 0 forces exact solves regardless of the flag
        return not self.exact_solve and self.eta > 0.0


@dataclass
class IterationTrace:
    """One outer-iteration row; correction_shift is the multiplier change
    that produced this iterate, newton_residual the linear-solve residual
    of the step taken from it (0.0 on the final row, where no step is
    solved)."""

    k: int
    f_norm: float
    dist_to_solution: Optional[float]
    sigma_min: float
    correction_shift: float
    newton_residual: float


@dataclass
class SolveResult:
    z_final: KktPoint
    status: str
    trace: list

    @property
    def iterations(self):
        return len(self.trace) - 1

    @property
    def converged(self):
        return self.status == "converged"


def correct(z, problem, delta):
    """Snap near-active spectrum of every cone argument to exact activity.

    Eigenvalues of g(x) + Gamma with magnitude <= delta are removed from
    the multiplier block (the primal point is untouched), so afterwards
    every eigenvalue is either exactly zero or exceeds delta in magnitude.
    Idempotent up to rounding.
    """
    out, _, _ = _correct_with_decomps(problem, z, delta)
    return out


def _correct_with_decomps(problem, z, delta):
    """Corrected point, total shift size, and decompositions of the new
    cone arguments (exact zeros in place of the clipped eigenvalues)."""
    gx = problem.g(z.x)
    new_blocks = []
    decomps = []
    shift_sq = 0.0
    for Gb, Cb in zip(gx.blocks, z.Gamma.blocks):
        A = Gb + Cb
        dec = eig_sym(A, class_tol=assembly_class_tol(A))
        clip = np.abs(dec.lam) <= delta
        lam_new = np.where(clip, 0.0, dec.lam)
        if np.any(clip):
            shift = (dec.P * (dec.lam * clip)) @ dec.P.T
            new_blocks.append(Cb - shift)
            shift_sq += float(np.sum((dec.lam * clip) ** 2))
        else:
            new_blocks.append(Cb.copy())
        idx = np.arange(dec.n)
        decomps.append(SpectralDecomposition(
            P=dec.P, lam=lam_new,
            alpha=idx[lam_new > 0.0], beta=idx[lam_new == 0.0],
            gamma=idx[lam_new < 0.0], class_tol=dec.class_tol))
    z_new = KktPoint(z.x.copy(), z.xi.copy(), BlockSymMatrix(new_blocks))
    return z_new, float(np.sqrt(shift_sq)), decomps


class _DenseBackend:
    """Assembled-matrix backend with an LU factorization and exact SVD."""

    def __init__(self, problem, z, variant, decomps):
        self.op = assemble_U(problem, z, variant, _decomps=decomps)
        M = self.op.matrix
        self.dim = M.shape[0]
        self.structure_key = None
        lu, piv, info = lapack.dgetrf(M)
        self.singular = info > 0
        if not self.singular:
            anorm = float(np.max(np.abs(M).sum(axis=0)))
            rcond = lapack.dgecon(lu, anorm, norm="1")[0]
            if rcond < 1e-14:
                self.singular = True
        self._lu = (lu, piv)
        self._sigma = None

    def solve(self, r):
        if self.singular:
            raise SingularSystemError()
        return scipy.linalg.lu_solve(self._lu, r)

    def solve_t(self, r):
        if self.singular:
            raise SingularSystemError()
        return scipy.linalg.lu_solve(self._lu, r, trans=1)

    def matvec(self, d):
        return self.op.matrix @ d

    def sigma_min(self, v0=None):
        if self.singular:
            return 0.0
        if self._sigma is None:
            self._sigma = float(scipy.linalg.svdvals(self.op.matrix)[-1])
        return self._sigma

    def sigma_start_vector(self):
        return None


def _make_backend(problem, z, variant, decomps):
    if problem.total_dim <= DENSE_LIMIT:
        return _DenseBackend(problem, z, variant, decomps)
    w = separable_diagonal(problem, z)
    if w is not None:
        return WoodburyNewtonOperator(problem, z, variant, decomps, w)
    return ReducedNewtonOperator(problem, z, variant, decomps)


def _lu_with_rcond(M):
    """LU factors plus a singularity verdict via a 1-norm condition estimate."""
    lu, piv, info = lapack.dgetrf(M)
    if info > 0:
        return None
    anorm = float(np.max(np.abs(M).sum(axis=0)))
    rcond = lapack.dgecon(lu, anorm, norm="1")[0]
    if rcond < 1e-14:
        return None
    return lu, piv


def newton_step(U, F, params=None):
    """Solve the Newton system U d = -F for an assembled operator.

    F may be a KktResidual or a stacked vector.  Exact solve by default;
    with params.exact_solve False and eta > 0, an iterative solve only
    has to reach the residual target min(eta, ||F||^tau) * ||F||, falling
    back to the exact factorization if the iteration stalls.  Raises
    SingularSystemError when the condition estimate exceeds 1e14.
    """
    params = params if params is not None else SolverParams()
    M = U.matrix if isinstance(U, DenseOperator) else np.asarray(U)
    Fvec = F.to_vector() if isinstance(F, KktResidual) else np.asarray(F)
    factor = _lu_with_rcond(M)
    if factor is None:
        raise SingularSystemError()
    if params.inexact:
        fn = float(np.linalg.norm(Fvec))
        target = min(params.eta, fn ** params.tau) * fn
        d, info = spla.gmres(M, -Fvec, rtol=0.0, atol=target,
                             restart=50, maxiter=400)
        if info == 0 and np.linalg.norm(M @ d + Fvec) <= target * (1 + 1e-9):
            return d
    return scipy.linalg.lu_solve(factor, -Fvec)


def _direction(backend, Fvec, fn, params):
    if params.inexact:
        target = min(params.eta, fn ** params.tau) * fn
        op = spla.LinearOperator((backend.dim, backend.dim),
                                 matvec=backend.matvec)
        d, info = spla.gmres(op, -Fvec, rtol=0.0, atol=target,
                             restart=50, maxiter=400)
        if info == 0 and np.linalg.norm(backend.matvec(d) + Fvec) \
                <= target * (1 + 1e-9):
            return d
    return backend.solve(-Fvec)


def ssn_solve(problem, z0_hat, params=None, z_bar=None):
    """Corrected Newton iteration from a (possibly uncorrected) start.

    Statuses: "converged" (residual below tol), "singular_system",
    "max_iter", "diverged" (residual blew past 1e6 times its initial
    value or left the floating range).  The final trace row always
    carries the Newton matrix's smallest singular value at the last
    iterate, converged or not.
    """
    return _solve_loop(problem, z0_hat, params or SolverParams(), z_bar,
                       corrected=True)


def classical_ssn_solve(problem, z0, params=None, z_bar=None):
    """Same iteration without the correction step (for contrast runs)."""
    return _solve_loop(problem, z0, params or SolverParams(), z_bar,
                       corrected=False)


def _solve_loop(problem, z0, params, z_bar, corrected):
    hat = z0
    trace = []
    f0 = None
    backend_prev = None
    sigma_v0 = None
    z = z0
    status = "max_iter"
    for k in range(params.max_iter + 1):
        if corrected:
            z, shift, decomps = _correct_with_decomps(problem, hat,
                                                      params.delta)
        else:
            z, shift = hat, 0.0
            decomps = cone_decompositions(problem, z)
        F = kkt_residual(problem, z, _decomps=decomps)
        Fvec = F.to_vector()
        fn = float(np.linalg.norm(Fvec))
        if f0 is None:
            f0 = fn
        diverged = not np.isfinite(fn) or fn > 1e6 * max(f0, 1e-300)
        if diverged:
            # no Newton system is built for a hopeless iterate
            backend, sigma = None, 0.0
        elif backend_prev is not None and reuse_compatible(
                backend_prev, problem, z, decomps, params.variant):
            backend = backend_prev
            sigma = backend.sigma_min(sigma_v0)
        else:
            backend = _make_backend(problem, z, params.variant, decomps)
            sigma = backend.sigma_min(sigma_v0)
        if backend is not None:
            sv = backend.sigma_start_vector()
            if sv is not None:
                sigma_v0 = sv
        row = IterationTrace(
            k=k, f_norm=fn,
            dist_to_solution=(z.distance_to(z_bar)
                              if z_bar is not None else None),
            sigma_min=sigma, correction_shift=shift, newton_residual=0.0)
        trace.append(row)
        logger.debug("k=%d f=%.3e sigma=%.3e shift=%.3e",
                     k, fn, sigma, shift)
        if fn < params.tol:
            status = "converged"
            break
        if diverged:
            status = "diverged"
            break
        if k == params.max_iter:
            status = "max_iter"
            break
        if backend.singular:
            status = "singular_system"
            break
        d = _direction(backend, Fvec, fn, params)
        row.newton_residual = float(np.linalg.norm(backend.matvec(d) + Fvec))
        hat = z.add_vector(d)
        backend_prev = backend
    return SolveResult(z_final=z, status=status, trace=trace)


ORDER_WINDOW = (1e-12, 1e-2)


def fitted_order(trace):
    """Observed convergence order of the final residual phase.

    Collects consecutive residual pairs whose norms both lie inside
    ORDER_WINDOW, away from the initial transient and from the rounding
    floor.  Two or more pairs give the least-squares slope of
    log f_{k+1} against log f_k; a single pair gives the anchored ratio
    log f_{k+1} / log f_k.  Returns None when the window captures no
    pair, as happens when the iteration jumps straight from the
    transient to the floor.  Values near 2 indicate a quadratic tail.
    """
    f = np.array([float(getattr(row, "f_norm", row)) for row in trace])
    lo, hi = ORDER_WINDOW
    ok = (f > lo) & (f < hi)
    keep = [k for k in range(len(f) - 1) if ok[k] and ok[k + 1]]
    if not keep:
        return None
    xs = np.log(f[keep])
    ys = np.log(f[np.array(keep) + 1])
    if len(keep) == 1:
        return float(ys[0] / xs[0])
    return float(np.polyfit(xs, ys, 1)[0])
