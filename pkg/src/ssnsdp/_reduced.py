"""Structured solve path for large Newton systems.

Rotating the cone coordinates by the svec form of the eigenbasis turns the
Newton operator into

    Ut = [ W    J'   Gt' ]
         [ J    0    0   ]
         [(D-I)Gt  0  D  ]

with D the diagonal surrogate mask over eigenvalue pairs and Gt the rotated
cone Jacobian.  Pairs with d > 0 eliminate in closed form; pairs with d = 0
survive as constraints.  What remains is one symmetric system

    R = [ K    J'   Gz' ]      K = W + Gp' C Gp
        [ J    0    0   ]
        [ Gz   0    0   ]

where C = (1 - d)/d is nonzero exactly on the positive/negative eigenvalue
pairs, with value -lam_j / lam_i there.  The same R serves the forward and
the transpose solve (right-hand sides differ), so one factorization per
iterate covers Newton steps, adjoint solves, and the smallest singular
value via Lanczos iteration on (U' U)^{-1}.  The rotation is orthogonal,
so singular values of the reduced representation match the original
operator exactly.

Everything here is internal; the public dense contract lives in kkt.py.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack
from scipy.linalg import lu_solve as scipy_lu_solve

from .linalg_sym import smat, svec, svec_len, v_mask, _svec_rotation_rows
from .problem import hess_matrix_of, jac_g_matrix_of, jac_h_matrix_of


class SingularReducedSystem(Exception):
    """Raised internally when the reduced factorization is rank deficient."""


def _signed_permutation(P, tol=1e-13):
    """(perm, signs) if P is a signed permutation matrix, else None."""
    n = P.shape[0]
    A = np.abs(P)
    cols = np.argmax(A, axis=1)
    vals = A[np.arange(n), cols]
    if np.any(np.abs(vals - 1.0) > tol):
        return None
    if np.count_nonzero(A > tol) != n:
        return None
    if np.sort(cols).tolist() != list(range(n)):
        return None
    signs = np.sign(P[np.arange(n), cols])
    return cols, signs


def _triu_index(a, b, n):
    """Row-major upper-triangle position of the sorted pair (a, b)."""
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return lo * n - lo * (lo - 1) // 2 + (hi - lo)


def _sector_codes(dec):
    """Per-eigenvalue class labels: 0 alpha, 1 beta, 2 gamma."""
    c = np.empty(dec.n, dtype=int)
    c[dec.alpha] = 0
    c[dec.beta] = 1
    c[dec.gamma] = 2
    return c


def rotated_rows(dec, rows_i, rows_j, G_block):
    """Rows of the eigenbasis-rotated cone Jacobian for given index pairs.

    Row (i, j) maps dx to the svec entry (i, j) of P' smat(G dx) P.  Stays
    sparse when the eigenbasis is a signed permutation and the block
    Jacobian is sparse; dense otherwise.
    """
    if len(rows_i) == 0:
        return sp.csr_matrix((0, G_block.shape[1]))
    perm = _signed_permutation(dec.P)
    if perm is not None and sp.issparse(G_block):
        cols_map, signs = perm
        pi = cols_map[rows_i]
        pj = cols_map[rows_j]
        vals = signs[rows_i] * signs[rows_j]
        idx = _triu_index(pi, pj, dec.n)
        S = sp.csr_matrix(
            (vals, (np.arange(len(rows_i)), idx)),
            shape=(len(rows_i), svec_len(dec.n)))
        return S @ G_block
    S = _svec_rotation_rows(dec.P, rows_i, rows_j)
    out = S @ G_block
    if sp.issparse(out):
        out = out.toarray()
    return np.asarray(out)


class _BlockData:
    """Pair bookkeeping for one cone block at one iterate."""

    def __init__(self, dec, variant):
        n = dec.n
        self.dec = dec
        self.n = n
        self.len = svec_len(n)
        iu, ju = np.triu_indices(n)
        self.iu, self.ju = iu, ju
        D = v_mask(dec, variant)
        self.dvec = D[iu, ju]
        c = _sector_codes(dec)
        self.ag = np.where((c[iu] == 0) & (c[ju] == 2))[0]
        # zero sectors of the mask are exact, so this split is too
        self.pos = np.where(self.dvec > 0.0)[0]
        self.zer = np.where(self.dvec == 0.0)[0]
        lam = dec.lam
        self.c_ag = -lam[ju[self.ag]] / lam[iu[self.ag]]

    def rotate(self, v):
        """svec of P' smat(v) P."""
        P = self.dec.P
        return svec(P.T @ smat(v) @ P)

    def unrotate(self, v):
        P = self.dec.P
        return svec(P @ smat(v) @ P.T)

    def s_rows(self, pairs, G_block):
        """Rows of the rotated cone Jacobian for the given svec pairs."""
        return rotated_rows(self.dec, self.iu[pairs], self.ju[pairs], G_block)


def _structure_signature(decomps, variant):
    """Hashable key, or None when the reduced matrix depends on the basis.

    A later iterate may reuse a factorization exactly when no pair carries
    an eliminated weight (alpha and gamma never coexist in a block) and no
    pair survives as a constraint row (no zero-mask sectors), because then
    R = [[W, J'], [J, 0]] involves no rotated quantity at all.
    """
    key = []
    for dec in decomps:
        na, nb, ng = len(dec.alpha), len(dec.beta), len(dec.gamma)
        if na and ng:
            return None
        if variant == "U0" and (nb or ng):
            return None
        if variant == "UI" and ng:
            return None
        key.append((tuple(dec.alpha.tolist()), tuple(dec.beta.tolist()),
                    tuple(dec.gamma.tolist())))
    return (variant, tuple(key))


class ReducedNewtonOperator:
    """Factorized reduced system for one iterate; see module docstring."""

    def __init__(self, problem, z, variant, decomps):
        self.problem = problem
        self.variant = variant
        self.x_dim = problem.x_dim
        self.eq_dim = problem.eq_dim
        self.blocks = [_BlockData(dec, variant) for dec in decomps]
        self.block_off = np.cumsum([0] + [b.len for b in self.blocks])
        self.W = hess_matrix_of(problem, z.x, z.xi, z.Gamma)
        self.J = jac_h_matrix_of(problem, z.x) if problem.eq_dim else None
        self.G = jac_g_matrix_of(problem, z.x)
        self.z_len = int(sum(len(b.zer) for b in self.blocks))
        self.dim = problem.x_dim + problem.eq_dim + int(self.block_off[-1])
        self.structure_key = _structure_signature(decomps, variant)
        self._build()
        self._sigma = None
        self._sigma_vec = None

    # -- assembly -----------------------------------------------------------

    def _g_block(self, i):
        lo, hi = self.block_off[i], self.block_off[i + 1]
        return self.G[lo:hi]

    def _build(self):
        x, e, zn = self.x_dim, self.eq_dim, self.z_len
        m = x + e + zn
        gz_rows = [b.s_rows(b.zer, self._g_block(i))
                   for i, b in enumerate(self.blocks)]
        any_ag = any(len(b.ag) for b in self.blocks)
        sparse_ok = (not any_ag and sp.issparse(self.W)
                     and (self.J is None or sp.issparse(self.J))
                     and all(sp.issparse(g) for g in gz_rows))
        self.singular = False
        if sparse_ok:
            ncols = 1 + (1 if e else 0) + (1 if zn else 0)
            Gz = sp.vstack(gz_rows).tocsr() if zn else None
            top = [self.W.tocsr()]
            if e:
                top.append(self.J.T)
            if zn:
                top.append(Gz.T)
            rows = [top]
            if e:
                rows.append([self.J] + [None] * (ncols - 1))
            if zn:
                rows.append([Gz] + [None] * (ncols - 1))
            R = sp.bmat(rows, format="csc")
            try:
                self._lu = spla.splu(R)
            except RuntimeError:
                self.singular = True
                return
            du = np.abs(self._lu.U.diagonal())
            if du.size and du.min() <= 1e-14 * max(du.max(), 1.0):
                self.singular = True
                return
            self._solve_R = self._lu.solve
            return

        # dense reduction; Fortran order so the factorization works in place
        R = np.zeros((m, m), order="F")
        if sp.issparse(self.W):
            Wc = self.W.tocoo()
            R[Wc.row, Wc.col] = Wc.data
        else:
            R[:x, :x] = self.W
        for i, b in enumerate(self.blocks):
            if len(b.ag) == 0:
                continue
            rows = b.s_rows(b.ag, self._g_block(i))
            if sp.issparse(rows):
                rows = rows.toarray()
            rows = rows * np.sqrt(b.c_ag)[:, None]
            R[:x, :x] += rows.T @ rows
        if e:
            if sp.issparse(self.J):
                Jc = self.J.tocoo()
                R[x + Jc.row, Jc.col] = Jc.data
                R[Jc.col, x + Jc.row] = Jc.data
            else:
                R[x:x + e, :x] = self.J
                R[:x, x:x + e] = np.asarray(self.J).T
        at = x + e
        for i, b in enumerate(self.blocks):
            g = gz_rows[i]
            k = g.shape[0]
            if k == 0:
                continue
            if sp.issparse(g):
                g = g.toarray()
            R[at:at + k, :x] = g
            R[:x, at:at + k] = g.T
            at += k
        anorm = float(np.max(np.abs(R).sum(axis=0))) if m else 0.0
        ldu, ipiv, info = lapack.dsytrf(R, lower=1, overwrite_a=1)
        if info > 0:
            self.singular = True
            return
        if info < 0:
            raise RuntimeError(f"dsytrf failed with info={info}")
        rcond, cinfo = lapack.dsycon(ldu, ipiv, anorm, lower=1)
        if cinfo == 0 and rcond < 1e-14:
            self.singular = True
            return

        def solve_dense(rhs):
            out, sinfo = lapack.dsytrs(ldu, ipiv, rhs, lower=1)
            if sinfo != 0:
                raise RuntimeError(f"dsytrs failed with info={sinfo}")
            return out

        self._solve_R = solve_dense

    # -- shared pieces --------------------------------------------------------

    def _split(self, r):
        x, e = self.x_dim, self.eq_dim
        return r[:x], r[x:x + e], r[x + e:]

    def _rotate_cone(self, r3):
        return [b.rotate(r3[self.block_off[i]:self.block_off[i + 1]])
                for i, b in enumerate(self.blocks)]

    def _gdx_rotated(self, dx):
        gdx = self.G @ dx
        return [b.rotate(gdx[self.block_off[i]:self.block_off[i + 1]])
                for i, b in enumerate(self.blocks)]

    def _check(self):
        if self.singular:
            raise SingularReducedSystem()

    # -- forward solve: U d = r -----------------------------------------------

    def solve(self, r):
        self._check()
        r1, r2, r3 = self._split(np.asarray(r, dtype=float))
        rt = self._rotate_cone(r3)
        top = r1.copy()
        tail = []
        for i, b in enumerate(self.blocks):
            if len(b.pos):
                u = np.zeros(b.len)
                u[b.pos] = rt[i][b.pos] / b.dvec[b.pos]
                top -= self._g_block(i).T @ b.unrotate(u)
            tail.append(-rt[i][b.zer])
        rhs = np.concatenate([top, r2] + tail)
        sol = self._solve_R(rhs)
        x, e = self.x_dim, self.eq_dim
        dx = sol[:x]
        dxi = sol[x:x + e]
        w = sol[x + e:]
        gdx = self._gdx_rotated(dx)
        out3 = []
        at = 0
        for i, b in enumerate(self.blocks):
            dg = np.zeros(b.len)
            if len(b.pos):
                dg[b.pos] = rt[i][b.pos] / b.dvec[b.pos]
                dg[b.ag] += b.c_ag * gdx[i][b.ag]
            k = len(b.zer)
            dg[b.zer] = w[at:at + k]
            at += k
            out3.append(b.unrotate(dg))
        return np.concatenate([dx, dxi] + out3)

    # -- transpose solve: U' d = r ----------------------------------------------

    def solve_t(self, r):
        self._check()
        r1, r2, r3 = self._split(np.asarray(r, dtype=float))
        rt = self._rotate_cone(r3)
        top = r1.copy()
        tail = []
        for i, b in enumerate(self.blocks):
            if len(b.ag):
                u = np.zeros(b.len)
                u[b.ag] = b.c_ag * rt[i][b.ag]
                top += self._g_block(i).T @ b.unrotate(u)
            tail.append(rt[i][b.zer])
        rhs = np.concatenate([top, r2] + tail)
        sol = self._solve_R(rhs)
        x, e = self.x_dim, self.eq_dim
        a = sol[:x]
        bxi = sol[x:x + e]
        w = sol[x + e:]
        ga = self._gdx_rotated(a)
        out3 = []
        at = 0
        for i, b in enumerate(self.blocks):
            cg = np.zeros(b.len)
            if len(b.pos):
                cg[b.pos] = (rt[i][b.pos] - ga[i][b.pos]) / b.dvec[b.pos]
            k = len(b.zer)
            cg[b.zer] = -w[at:at + k]
            at += k
            out3.append(b.unrotate(cg))
        return np.concatenate([a, bxi] + out3)

    # -- application and diagnostics ----------------------------------------------

    def matvec(self, d):
        """Apply the (unreduced) Newton operator to a stacked direction."""
        d = np.asarray(d, dtype=float)
        x, e = self.x_dim, self.eq_dim
        dx, dxi, dG = d[:x], d[x:x + e], d[x + e:]
        r1 = self.W @ dx + self.G.T @ dG
        if e:
            r1 = r1 + self.J.T @ dxi
        r2 = self.J @ dx if e else np.zeros(0)
        gdx = self.G @ dx
        out3 = []
        for i, b in enumerate(self.blocks):
            lo, hi = self.block_off[i], self.block_off[i + 1]
            arg = b.rotate(gdx[lo:hi] + dG[lo:hi])
            out3.append(b.unrotate(b.dvec * arg) - gdx[lo:hi])
        return np.concatenate([np.asarray(r1).ravel(),
                               np.asarray(r2).ravel()] + out3)

    def sigma_min(self, v0=None):
        """Smallest singular value of the Newton operator at this iterate.

        Largest eigenvalue of (U' U)^{-1} by Lanczos iteration on the
        factorized solves; deterministic for a fixed starting vector.
        Returns 0.0 when the factorization flagged singularity.
        """
        if self._sigma is not None:
            return self._sigma
        if self.singular:
            self._sigma = 0.0
            return 0.0
        self._sigma, self._sigma_vec = _lanczos_sigma_min(
            self.dim, self.solve, self.solve_t, v0)
        return self._sigma

    def sigma_start_vector(self):
        return self._sigma_vec


def _lanczos_sigma_min(dim, solve, solve_t, v0=None):
    """(sigma_min, Lanczos vector) from factorized forward/transpose solves.

    The tolerance is diagnostic grade: the value feeds trace reporting
    and certificate warnings, where ten significant digits are plenty,
    and a loose tolerance keeps the iteration count bounded on clustered
    spectra.
    """
    if v0 is None or v0.shape != (dim,):
        v0 = np.full(dim, 1.0 / np.sqrt(dim))
    op = spla.LinearOperator(
        (dim, dim), matvec=lambda v: solve(solve_t(v)))
    try:
        vals, vecs = spla.eigsh(op, k=1, which="LM", v0=v0,
                                maxiter=1000, tol=1e-10)
        lam = float(vals[0])
        vec = vecs[:, 0]
    except spla.ArpackNoConvergence as err:
        if not len(err.eigenvalues):
            return 0.0, None
        lam = float(err.eigenvalues[0])
        vec = None
    return (1.0 / np.sqrt(lam) if lam > 0 else 0.0), vec


def separable_diagonal(problem, z):
    """Hessian diagonal when the bordered-identity solve applies, else None.

    The fast path needs three structural facts: no equality constraints,
    a constant identity cone Jacobian, and a diagonal Hessian.  The core
    it factors has one row per non-unit diagonal entry, so the path is
    only worthwhile while those stay well below the primal dimension.
    """
    if problem.eq_dim or problem.jac_g_matrix is None \
            or problem.hess_matrix_fn is None:
        return None
    G = problem.jac_g_matrix
    N = problem.x_dim
    if not sp.issparse(G) or G.shape != (N, N):
        return None
    if (G.tocsr() - sp.identity(N, format="csr")).count_nonzero():
        return None
    W = hess_matrix_of(problem, z.x, z.xi, z.Gamma)
    if not sp.issparse(W):
        return None
    Wc = W.tocoo()
    if np.any(Wc.row != Wc.col):
        return None
    w = np.asarray(W.diagonal(), dtype=float)
    if 2 * np.count_nonzero(w != 1.0) > N:
        return None
    return w


class WoodburyNewtonOperator:
    """Newton operator for separable projection-type problems.

    Applies when the problem has no equality constraints, the cone
    Jacobian is the identity, and the Hessian is diagonal.  Writing the
    Hessian as I - C with C diagonal and supported on k coordinates, the
    forward system collapses to

        (V C - I) dx = r3 - V r1,    dGamma = r1 - W dx,

    and the Woodbury identity makes (V C - I)^{-1} an identity plus a
    rank-k update whose k-by-k core factors once per iterate.  The
    transpose solve shares the same core, and the smallest singular
    value comes from the usual Lanczos iteration on the solves.  V is
    block diagonal over cone blocks, so the core is too.
    """

    def __init__(self, problem, z, variant, decomps, w=None):
        if w is None:
            w = separable_diagonal(problem, z)
            if w is None:
                raise ValueError("problem lacks separable structure")
        self.problem = problem
        self.variant = variant
        self.x_dim = problem.x_dim
        self.eq_dim = 0
        self.blocks = [_BlockData(dec, variant) for dec in decomps]
        self.block_off = np.cumsum([0] + [b.len for b in self.blocks])
        self.dim = 2 * problem.x_dim
        self.structure_key = None
        self.w = np.asarray(w, dtype=float)
        self.c = 1.0 - self.w
        self._build()
        self._sigma = None
        self._sigma_vec = None

    def _build(self):
        self.singular = False
        self._cores = []
        for i, b in enumerate(self.blocks):
            lo, hi = self.block_off[i], self.block_off[i + 1]
            cb = self.c[lo:hi]
            loc = np.where(cb != 0.0)[0]
            if loc.size == 0:
                self._cores.append(None)
                continue
            # rows of R are the rotated unit svec vectors on the support
            R = _svec_rotation_rows(b.dec.P.T, b.iu[loc], b.ju[loc])
            F = -(R * b.dvec) @ R.T * cb[loc]
            F[np.diag_indices_from(F)] += 1.0
            anorm = float(np.max(np.abs(F).sum(axis=0)))
            lu, piv, info = lapack.dgetrf(F, overwrite_a=1)
            if info > 0:
                self.singular = True
                return
            rcond = lapack.dgecon(lu, anorm, norm="1")[0]
            if rcond < 1e-14:
                self.singular = True
                return
            self._cores.append((lu, piv, lo + loc))

    def _check(self):
        if self.singular:
            raise SingularReducedSystem()

    def _v_apply(self, v):
        out = np.empty_like(v)
        for i, b in enumerate(self.blocks):
            lo, hi = self.block_off[i], self.block_off[i + 1]
            out[lo:hi] = b.unrotate(b.dvec * b.rotate(v[lo:hi]))
        return out

    def _core_solve(self, rhs):
        """Scattered c * F^{-1} rhs[support] over all blocks."""
        t = np.zeros(self.x_dim)
        for core in self._cores:
            if core is None:
                continue
            lu, piv, idx = core
            y = scipy_lu_solve((lu, piv), rhs[idx])
            t[idx] = self.c[idx] * y
        return t

    def solve(self, r):
        self._check()
        r = np.asarray(r, dtype=float)
        N = self.x_dim
        r1, r3 = r[:N], r[N:]
        b = r3 - self._v_apply(r1)
        dx = -(b + self._v_apply(self._core_solve(b)))
        dG = r1 - self.w * dx
        return np.concatenate([dx, dG])

    def solve_t(self, r):
        self._check()
        r = np.asarray(r, dtype=float)
        N = self.x_dim
        r1, r3 = r[:N], r[N:]
        b = r1 - self.w * r3
        y2 = -(b + self._core_solve(self._v_apply(b)))
        y1 = r3 - self._v_apply(y2)
        return np.concatenate([y1, y2])

    def matvec(self, d):
        d = np.asarray(d, dtype=float)
        N = self.x_dim
        dx, dG = d[:N], d[N:]
        return np.concatenate([self.w * dx + dG,
                               self._v_apply(dx + dG) - dx])

    def sigma_min(self, v0=None):
        if self._sigma is not None:
            return self._sigma
        if self.singular:
            self._sigma = 0.0
            return 0.0
        self._sigma, self._sigma_vec = _lanczos_sigma_min(
            self.dim, self.solve, self.solve_t, v0)
        return self._sigma

    def sigma_start_vector(self):
        return self._sigma_vec


def reuse_compatible(cached, problem, z_new, decomps, variant):
    """True when a cached operator's factorization remains valid.

    Requires the basis-independent structure (see _structure_signature),
    explicitly constant Jacobians, and a Hessian that evaluates to the
    same matrix at the new iterate.
    """
    if cached is None or cached.singular or cached.structure_key is None:
        return False
    if _structure_signature(decomps, variant) != cached.structure_key:
        return False
    if problem.eq_dim and problem.jac_h_matrix is None:
        return False
    if problem.jac_g_matrix is None or problem.hess_matrix_fn is None:
        return False
    W_new = hess_matrix_of(problem, z_new.x, z_new.xi, z_new.Gamma)
    return _same_matrix(W_new, cached.W)


def _same_matrix(A, B):
    if sp.issparse(A) != sp.issparse(B):
        return False
    if sp.issparse(A):
        if A.shape != B.shape:
            return False
        diff = (A - B).tocoo()
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) == 0.0
    A = np.asarray(A)
    B = np.asarray(B)
    return A.shape == B.shape and np.array_equal(A, B)
