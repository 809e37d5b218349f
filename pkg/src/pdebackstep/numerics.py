"""Shared numerical machinery for the synthesis pipelines.

Dense eigen-decompositions with left vectors and Jordan chains,
Sylvester solves, eigenvalue assignment, eigenvector (PHB-type) tests,
fundamental matrices of the spatial two-point operators, characteristic
values of the stabilized cascades, matrix initial and boundary value
problems in the two shapes the designs need, and Volterra resolvents.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .errors import (
    AssumptionError,
    ConfigurationError,
    ConvergenceError,
    ResonanceError,
    SolvabilityError,
)
from .fields import (
    MatrixField,
    TriangularKernel,
    composite_weights,
    kernel_compose,
    uniform_grid,
)

__all__ = [
    "eig",
    "JordanChain",
    "JordanChainSet",
    "jordan_chains",
    "solve_sylvester",
    "place_eigenvalues",
    "place_output_injection",
    "PhbVerdict",
    "phb_condition",
    "orthonormal_left_complement",
    "orthonormal_null",
    "FundamentalMatrix",
    "fundamental_matrix",
    "characteristic_values",
    "MatrixBvpProblem",
    "solve_matrix_bvp",
    "solve_matrix_bvp_collocation",
    "solve_matrix_ivp",
    "solve_volterra_2nd",
]

_ODE_RTOL = 1e-10
_ODE_ATOL = 1e-12


def eig(matrix):
    """Eigenvalues with matched right and left eigenvectors.

    Parameters
    ----------
    matrix : numpy.ndarray
        Square matrix.

    Returns
    -------
    (values, right, left)
        ``values[k]`` with right column vectors ``right[:, k]`` and left
        row vectors ``left[k, :]`` satisfying
        ``matrix @ right[:, k] = values[k] right[:, k]`` and
        ``left[k, :] @ matrix = values[k] left[k, :]``, normalized so
        that ``left @ right`` has unit diagonal when the matrix is
        diagonalizable.
    """
    matrix = np.asarray(matrix, dtype=float)
    values, vl, vr = scipy.linalg.eig(matrix, left=True, right=True)
    left = vl.conj().T
    # rescale rows for biorthogonality where possible
    for k in range(values.size):
        scale = left[k, :] @ vr[:, k]
        if abs(scale) > 1e-12:
            left[k, :] = left[k, :] / scale
    return values, vr, left


@dataclass
class JordanChain:
    """A single chain: ``vectors[0]`` is the eigenvector and
    ``vectors[k]`` satisfies the first-order chain recurrence with
    ``vectors[k-1]`` as its lower neighbour."""

    eigenvalue: complex
    vectors: np.ndarray  # (length, dim)

    @property
    def length(self):
        return self.vectors.shape[0]


@dataclass
class JordanChainSet:
    """Complete chain basis of a square matrix.

    ``side == "right"`` means ``matrix v1 = mu v1`` and
    ``matrix vk = mu vk + v(k-1)``; ``side == "left"`` is the transposed
    statement for row vectors.
    """

    dim: int
    side: str
    chains: list

    def stacked(self):
        """All chain vectors as rows (left) or columns (right) of one matrix."""
        vecs = np.vstack([c.vectors for c in self.chains])
        if self.side == "right":
            return vecs.T
        return vecs

    def residual(self, matrix):
        """Largest chain-recurrence residual, for verification."""
        worst = 0.0
        for chain in self.chains:
            prev = None
            for k in range(chain.length):
                v = chain.vectors[k]
                if self.side == "right":
                    r = matrix @ v - chain.eigenvalue * v
                else:
                    r = v @ matrix - chain.eigenvalue * v
                if prev is not None:
                    r = r - prev
                worst = max(worst, float(np.linalg.norm(r)))
                prev = v
        return worst


def _nullspace(matrix, rtol):
    u, sv, vh = np.linalg.svd(matrix)
    if sv.size == 0:
        return np.eye(matrix.shape[1])
    cutoff = rtol * sv[0] * max(matrix.shape)
    rank = int(np.sum(sv > cutoff))
    return vh[rank:].conj().T


def _right_chains_for_cluster(matrix, mu, multiplicity, rtol):
    dim = matrix.shape[0]
    b = matrix - mu * np.eye(dim)
    spaces = []
    power = np.eye(dim, dtype=b.dtype)
    while True:
        power = power @ b
        ns = _nullspace(power, rtol)
        spaces.append(ns)
        if ns.shape[1] >= multiplicity or len(spaces) >= dim:
            break
    depth = len(spaces)

    def _pick_independent(existing, candidates, count):
        chosen = []
        basis = existing
        for _ in range(count):
            if basis.shape[1]:
                q, _ = np.linalg.qr(basis)
                proj = candidates - q @ (q.conj().T @ candidates)
            else:
                proj = candidates
            norms = np.linalg.norm(proj, axis=0)
            j = int(np.argmax(norms))
            if norms[j] < 1e-10:
                raise SolvabilityError(
                    "chain basis construction failed; eigenvalue cluster too tight"
                )
            vec = proj[:, j] / norms[j]
            chosen.append(candidates[:, j])
            basis = np.hstack([basis, vec[:, None]])
        return chosen

    dims = [0] + [s.shape[1] for s in spaces]
    tops_by_level = {}
    carried = []  # images of higher-level tops, descending one level per step
    for k in range(depth, 0, -1):
        want = dims[k] - dims[k - 1] - len(carried)
        existing_cols = [spaces[k - 2]] if k >= 2 else [np.zeros((dim, 0))]
        if carried:
            existing_cols.append(np.column_stack(carried))
        existing = np.hstack(existing_cols)
        new_tops = _pick_independent(existing, spaces[k - 1], want) if want > 0 else []
        tops_by_level[k] = new_tops
        carried = [b @ w for w in carried] + [b @ w for w in new_tops]

    chains = []
    for k, tops in tops_by_level.items():
        for top in tops:
            vecs = [top]
            for _ in range(k - 1):
                vecs.append(b @ vecs[-1])
            vecs = vecs[::-1]  # eigenvector first
            chains.append(JordanChain(eigenvalue=mu, vectors=np.array(vecs)))
    return chains


def jordan_chains(matrix, side="right", cluster_tol=1e-6, rank_rtol=1e-8):
    """Complete (generalized) eigenvector chain basis.

    Eigenvalues closer than ``cluster_tol`` relative to the matrix scale
    are treated as one multiple eigenvalue; when the resulting chain
    basis is ill conditioned, the clustering is refined and a warning is
    issued.

    Parameters
    ----------
    matrix : numpy.ndarray
    side : str
        ``"right"`` for column chains, ``"left"`` for row chains.

    Returns
    -------
    JordanChainSet
    """
    matrix = np.asarray(matrix, dtype=float)
    if side not in ("right", "left"):
        raise ConfigurationError("side must be 'right' or 'left'")
    work = matrix.T if side == "left" else matrix
    dim = work.shape[0]
    scale = max(float(np.linalg.norm(work, 2)), 1.0)

    def build(tol):
        values = np.linalg.eigvals(work)
        order = np.lexsort((values.imag, values.real))
        values = values[order]
        clusters = []
        for v in values:
            if clusters and abs(v - clusters[-1][-1]) <= tol * scale:
                clusters[-1].append(v)
            else:
                clusters.append([v])
        chains = []
        for group in clusters:
            mu = complex(np.mean(group))
            if abs(mu.imag) < tol * scale:
                mu = complex(mu.real, 0.0)
            chains.extend(_right_chains_for_cluster(work, mu, len(group), rank_rtol))
        return chains

    chains = build(cluster_tol)
    stacked = np.column_stack([v for c in chains for v in c.vectors])
    if stacked.shape[1] != dim or np.linalg.cond(stacked) > 1e8:
        warnings.warn(
            "chain basis ill conditioned; refining the eigenvalue clustering",
            stacklevel=2,
        )
        chains = build(cluster_tol * 1e-4)
        stacked = np.column_stack([v for c in chains for v in c.vectors])
        if stacked.shape[1] != dim:
            raise SolvabilityError("could not build a complete chain basis")

    if side == "left":
        # row chains of the original matrix are column chains of its transpose
        return JordanChainSet(dim=dim, side="left", chains=chains)
    return JordanChainSet(dim=dim, side="right", chains=chains)


def solve_sylvester(a, b, c, gap_tol=1e-6):
    """Solve ``A X - X B = C``.

    Parameters
    ----------
    a, b : numpy.ndarray
        Square matrices whose spectra must be disjoint.
    c : numpy.ndarray
        Right-hand side of shape ``(a.shape[0], b.shape[1])``.
    gap_tol : float, optional
        Minimum absolute spectral gap.

    Returns
    -------
    numpy.ndarray

    Raises
    ------
    SolvabilityError
        If the spectra of ``a`` and ``b`` are closer than ``gap_tol``,
        naming the offending eigenvalue, or if the residual check fails.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    ev_a = np.linalg.eigvals(a)
    ev_b = np.linalg.eigvals(b)
    gaps = np.abs(ev_a[:, None] - ev_b[None, :])
    k = np.unravel_index(np.argmin(gaps), gaps.shape)
    if gaps[k] < gap_tol:
        raise SolvabilityError(
            f"spectra overlap: eigenvalue {ev_a[k[0]]:.6g} is within "
            f"{gaps[k]:.3e} of the other spectrum",
            offending_value=ev_a[k[0]],
        )
    x = scipy.linalg.solve_sylvester(a, -b, c)
    residual = np.linalg.norm(a @ x - x @ b - c)
    bound = 1e-10 * max(np.linalg.norm(c), 1e-30)
    if residual > max(bound, 1e-10 * np.linalg.norm(x) * (np.linalg.norm(a) + np.linalg.norm(b))):
        raise SolvabilityError(
            f"ill-conditioned equation: residual {residual:.3e} exceeds tolerance"
        )
    return x


def _real_block_diagonal(targets):
    """Real quasi-diagonal matrix with the given conjugate-closed spectrum."""
    targets = list(targets)
    used = [False] * len(targets)
    blocks = []
    order = []
    for i, t in enumerate(targets):
        if used[i]:
            continue
        if abs(t.imag) < 1e-14:
            blocks.append(np.array([[t.real]]))
            used[i] = True
            order.append([i])
            continue
        match = None
        for j in range(i + 1, len(targets)):
            if not used[j] and abs(targets[j] - np.conj(t)) < 1e-12 * max(1.0, abs(t)):
                match = j
                break
        if match is None:
            raise ConfigurationError(
                f"target set is not closed under conjugation near {t!r}"
            )
        used[i] = used[match] = True
        blocks.append(np.array([[t.real, t.imag], [-t.imag, t.real]]))
        order.append([i, match])
    return scipy.linalg.block_diag(*blocks)


def _match_spectra(achieved, targets):
    """Greedy pairing error between two spectra."""
    achieved = sorted(achieved, key=lambda v: (round(v.real, 10), round(v.imag, 10)))
    targets = sorted(targets, key=lambda v: (round(v.real, 10), round(v.imag, 10)))
    return max(abs(a - t) for a, t in zip(achieved, targets))


def place_eigenvalues(f, b, targets, rng=None, max_tries=25):
    """Gain ``K`` such that ``F - B K`` has the requested spectrum.

    The gain is obtained from a Sylvester solve against a randomly
    parameterized target basis; the randomness only influences
    rounding-level details of ``K``, never the placed spectrum.

    Parameters
    ----------
    f : numpy.ndarray
        Square system matrix.
    b : numpy.ndarray
        Input matrix with as many rows as ``f``.
    targets : sequence of complex
        Desired eigenvalues, closed under conjugation, as many as ``f``
        has rows.
    rng : numpy.random.Generator, optional

    Returns
    -------
    numpy.ndarray
        Real gain matrix ``K``.

    Raises
    ------
    AssumptionError
        If the pair is not controllable (with the blocking eigenvalue).
    """
    f = np.atleast_2d(np.asarray(f, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    m = f.shape[0]
    targets = [complex(t) for t in targets]
    if len(targets) != m:
        raise ConfigurationError(f"need {m} target eigenvalues, got {len(targets)}")
    if rng is None:
        rng = np.random.default_rng(0)

    ev_f = np.linalg.eigvals(f)
    adjusted = []
    for t in targets:
        if np.min(np.abs(ev_f - t)) < 1e-12 * max(1.0, np.linalg.norm(f)):
            warnings.warn(
                f"target {t:.6g} coincides with an open-loop eigenvalue; "
                "perturbing it by 1e-8",
                stacklevel=2,
            )
            t = t - 1e-8
        adjusted.append(t)
    d = _real_block_diagonal(adjusted)

    last_cond = np.inf
    for _ in range(max_tries):
        g = rng.standard_normal((b.shape[1], m))
        x = scipy.linalg.solve_sylvester(f, -d, b @ g)
        last_cond = np.linalg.cond(x)
        if last_cond > 1e8:
            continue
        k = g @ np.linalg.inv(x)
        achieved = np.linalg.eigvals(f - b @ k)
        if _match_spectra(achieved, adjusted) < 1e-8:
            return k

    # placement kept failing: look for an uncontrollable eigenvalue
    values, _, left = eig(f)
    for idx in range(m):
        w = left[idx, :]
        if np.linalg.norm(w @ b) < 1e-8 * max(np.linalg.norm(w), 1.0):
            raise AssumptionError(
                f"pair not controllable: eigenvalue {values[idx]:.6g} is not "
                "reachable from the input"
            )
    raise SolvabilityError(
        f"eigenvalue assignment failed after {max_tries} attempts "
        f"(last basis condition {last_cond:.3e})"
    )


def place_output_injection(f, c, targets, rng=None):
    """Injection ``M`` such that ``F - M C`` has the requested spectrum."""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    try:
        k = place_eigenvalues(f.T, c.T, targets, rng=rng)
    except AssumptionError as exc:
        raise AssumptionError(str(exc).replace("controllable", "observable (dual)")) from None
    return k.T


@dataclass
class PhbVerdict:
    """Per-eigenvalue outcome of an eigenvector test."""

    eigenvalue: complex
    passed: bool
    margin: float


def phb_condition(matrix, residual_fn, side="left", tol=1e-9):
    """Eigenvector test on every eigenvalue of ``matrix``.

    For each eigenvalue the corresponding (left or right) eigenvector
    ``v`` is normalized and ``residual_fn(v, eigenvalue)`` evaluated;
    the test passes when the residual norm exceeds ``tol``.

    Returns
    -------
    list of PhbVerdict
    """
    values, right, left = eig(np.atleast_2d(np.asarray(matrix, dtype=float)))
    out = []
    for k in range(values.size):
        vec = left[k, :] if side == "left" else right[:, k]
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        margin = float(np.linalg.norm(np.atleast_1d(residual_fn(vec, values[k]))))
        out.append(PhbVerdict(eigenvalue=values[k], passed=margin > tol, margin=margin))
    return out


def orthonormal_left_complement(matrix):
    """Orthonormal rows spanning the left null space of ``matrix``."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    u, sv, _ = np.linalg.svd(matrix)
    cutoff = (sv[0] if sv.size else 0.0) * 1e-12 * max(matrix.shape)
    rank = int(np.sum(sv > cutoff))
    return u[:, rank:].T


def orthonormal_null(matrix):
    """Orthonormal columns spanning the null space of ``matrix``."""
    return orthonormal_left_complement(np.asarray(matrix, dtype=float).T).T


def _diag_entries(lam_field):
    return np.einsum("nii->ni", lam_field.samples)


def _integrate_matrix_ode(rhs, y0, z0, z1, dense=True):
    """Integrate a matrix ODE with tight tolerances; complex supported."""
    shape = y0.shape
    is_complex = np.iscomplexobj(y0) or rhs(z0, y0).dtype.kind == "c"

    if is_complex:
        def packed(z, flat):
            y = (flat[: y0.size] + 1j * flat[y0.size :]).reshape(shape)
            dy = rhs(z, y)
            return np.concatenate([dy.real.ravel(), dy.imag.ravel()])

        flat0 = np.concatenate([np.asarray(y0).real.ravel(), np.asarray(y0).imag.ravel()])
    else:
        def packed(z, flat):
            return rhs(z, flat.reshape(shape)).ravel()

        flat0 = np.asarray(y0, dtype=float).ravel()

    sol = solve_ivp(
        packed,
        (z0, z1),
        flat0,
        method="Radau",
        rtol=_ODE_RTOL,
        atol=_ODE_ATOL,
        dense_output=dense,
    )
    if not sol.success:
        raise ConvergenceError(f"stiff integration failed: {sol.message}")

    def evaluate(z):
        flat = sol.sol(z)
        if is_complex:
            return (flat[: y0.size] + 1j * flat[y0.size :]).reshape(shape)
        return flat.reshape(shape)

    return evaluate


class FundamentalMatrix:
    """Propagator of the first-order form of the spatial operator.

    The first-order state matrix is
    ``U(z) = [[0, I], [(s + shift) diag(1/lambda_i(z)), 0]]``.
    Orientation ``"primal"`` propagates ``d/dz Y = U(z) Y``; orientation
    ``"adjoint"`` propagates ``d/dz Y = -U(z)^T Y``.  ``evaluate(z, zeta)``
    returns the propagator mapping data at ``zeta`` to data at ``z``.
    """

    def __init__(self, lam, shift, s, orientation="primal"):
        if orientation not in ("primal", "adjoint"):
            raise ConfigurationError("orientation must be 'primal' or 'adjoint'")
        self.lam = lam
        self.shift = float(shift)
        self.s = complex(s)
        self.orientation = orientation
        self._n = lam.shape[0]
        self._diag = _diag_entries(lam)
        self._solution = None

    def state_matrix(self, z):
        """The first-order coefficient matrix at position ``z``."""
        n = self._n
        lam_z = self.lam(z)
        inv = np.diag(1.0 / np.diag(lam_z))
        u = np.zeros((2 * n, 2 * n), dtype=complex if self.s.imag else float)
        u[:n, n:] = np.eye(n)
        u[n:, :n] = (self.s + self.shift) * inv
        return u

    def _rhs(self, z, y):
        u = self.state_matrix(z)
        if self.orientation == "primal":
            return u @ y
        return -u.T @ y

    def _ensure_solution(self):
        if self._solution is None:
            n = self._n
            dtype = complex if self.s.imag else float
            y0 = np.eye(2 * n, dtype=dtype)
            self._solution = _integrate_matrix_ode(self._rhs, y0, 0.0, 1.0)
        return self._solution

    def evaluate(self, z, zeta):
        """Propagator from ``zeta`` to ``z``; identity when they match."""
        if z == zeta:
            return np.eye(2 * self._n)
        sol = self._ensure_solution()
        return sol(z) @ np.linalg.inv(sol(zeta))

    def along_grid(self, grid, anchor):
        """Propagators ``evaluate(z, anchor)`` for every ``z`` in ``grid``."""
        sol = self._ensure_solution()
        base = np.linalg.inv(sol(anchor))
        return np.array([sol(z) @ base for z in grid])


def fundamental_matrix(lam, shift, s, orientation="primal"):
    """Construct a :class:`FundamentalMatrix` (see its docstring)."""
    return FundamentalMatrix(lam, shift, s, orientation)


def _scalar_neumann_values(lam_entry, grid, shift, count):
    """Eigenvalues of one diffusion component with zero-slope ends.

    Second-order finite differences with ghost nodes on a refined grid,
    returning the ``count`` largest values.
    """
    n = grid.size
    h = grid[1] - grid[0]
    main = np.full(n, -2.0)
    mat = (
        np.diag(main) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    )
    mat[0, 1] = 2.0
    mat[-1, -2] = 2.0
    mat = (lam_entry[:, None] / h**2) * mat
    vals = np.linalg.eigvals(mat) - shift
    vals = np.sort(vals.real)[::-1]
    return vals[:count]


def characteristic_values(
    lam,
    coupling,
    shift,
    variant="feedback",
    real_min=None,
    count=None,
    polish=True,
):
    """Approximate spectrum of a stabilized target cascade.

    The cascade couples the diffusion components in a strictly
    triangular way, so its spectrum is the union of the component
    spectra: real values at or below ``-shift``.  Seeds come from a
    finite-difference eigensolve per component and are polished as roots
    of the characteristic determinant built from the fundamental matrix.

    Parameters
    ----------
    lam : MatrixField
        Diagonal diffusion field.
    coupling : MatrixField
        Strictly triangular boundary-coupling field (lower for
        ``variant="feedback"``, upper for ``variant="observer"``).
    shift : float
        Stability margin of the cascade.
    variant : str
        ``"feedback"`` for the cascade with a nonlocal near-trace term,
        ``"observer"`` for the cascade with an integral far boundary
        condition.
    real_min : float, optional
        Lower end of the search region (default ``-shift - 60``).
    count : int, optional
        Cap on the number of values per component.

    Returns
    -------
    numpy.ndarray
        Sorted (descending) real parts of the located values.
    """
    if variant not in ("feedback", "observer"):
        raise ConfigurationError("variant must be 'feedback' or 'observer'")
    n = lam.shape[0]
    if real_min is None:
        real_min = -shift - 60.0
    fine = lam.resample(max(lam.num_points, 401))
    diag = _diag_entries(fine)

    seeds = []
    for i in range(n):
        vals = _scalar_neumann_values(diag[:, i], fine.grid, shift, fine.num_points)
        seeds.extend(v for v in vals if v >= real_min)
    seeds = np.sort(np.asarray(seeds))[::-1]
    if count is not None:
        seeds = seeds[: count * n]

    if not polish or np.max(np.abs(coupling.samples)) == 0.0:
        return seeds

    def determinant(s):
        return _characteristic_determinant(lam, coupling, shift, s, variant)

    polished = []
    for seed in seeds:
        value = _polish_real_root(determinant, seed)
        polished.append(value if value is not None else seed)
    return np.sort(np.asarray(polished))[::-1]


def _characteristic_determinant(lam, coupling, shift, s, variant):
    n = lam.shape[0]
    grid = lam.grid
    weights = composite_weights(grid.size, grid[1] - grid[0])
    e1 = np.vstack([np.eye(n), np.zeros((n, n))])
    e2 = np.vstack([np.zeros((n, n)), np.eye(n)])
    fm = FundamentalMatrix(lam, shift, s, orientation="primal")
    props = fm.along_grid(grid, 0.0)
    diag = _diag_entries(lam)
    if variant == "feedback":
        # nonlocal near-trace term enters the state equation
        mbar = np.zeros((grid.size, 2 * n, n), dtype=props.dtype)
        mbar[0] = e1
        for k in range(1, grid.size):
            acc = props[k] @ e1
            sub = grid[: k + 1]
            w = composite_weights(k + 1, grid[1] - grid[0])
            for j in range(k + 1):
                lam_inv = np.diag(1.0 / diag[j])
                acc = acc + w[j] * (
                    props[k] @ np.linalg.inv(props[j]) @ e2 @ lam_inv @ coupling.samples[j]
                )
            mbar[k] = acc
        mat = e2.T @ mbar[-1]
    else:
        # integral far boundary condition
        mat = e2.T @ props[-1] @ e1
        for j in range(grid.size):
            mat = mat + weights[j] * coupling.samples[j] @ (e1.T @ props[j] @ e1)
    return np.linalg.det(mat)


def _polish_real_root(fn, seed, tol=1e-10, max_iter=40):
    """Secant iteration for a real root near ``seed``; None on failure."""
    x0 = seed
    step = max(1e-6, 1e-6 * abs(seed))
    x1 = seed + step
    f0 = np.real(fn(x0))
    f1 = np.real(fn(x1))
    for _ in range(max_iter):
        if f1 == f0:
            return None
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        if not np.isfinite(x2) or abs(x2 - seed) > max(1.0, 0.3 * abs(seed)):
            return None
        if abs(x2 - x1) < tol * max(1.0, abs(x2)):
            return x2
        x0, f0 = x1, f1
        x1 = x2
        f1 = np.real(fn(x1))
    return None


@dataclass
class MatrixBvpProblem:
    """Two-point boundary value problem for a matrix-valued function.

    Two shapes are supported, selected by ``side``:

    ``side="left"`` (coefficient matrix multiplies from the left, the
    unknown ``X(z)`` has as many columns as there are diffusion
    components)::

        (X lam)'' - shift X - coupling X = inhomogeneity(z)
        (X lam)'(0) = integral of X(zeta) integral_weight(zeta) + bc_start
        (X lam)'(1) = bc_end

    ``side="right"`` (coefficient matrix multiplies from the right, the
    unknown has as many rows as diffusion components)::

        lam X'' - shift X - X coupling = inhomogeneity(z)
        X'(0) = bc_start
        X'(1) = bc_end - integral of integral_weight(zeta) X(zeta)

    Attributes
    ----------
    lam : MatrixField
        Diagonal diffusion field.
    coupling : numpy.ndarray
        Square coefficient matrix.
    side : str
    shift : float
    inhomogeneity : MatrixField
    bc_start, bc_end : numpy.ndarray
    integral_weight : MatrixField or None
        Strictly triangular weight of the nonlocal term; ``None`` for a
        zero weight.
    """

    lam: MatrixField
    coupling: np.ndarray
    side: str
    shift: float
    inhomogeneity: MatrixField
    bc_start: np.ndarray
    bc_end: np.ndarray
    integral_weight: MatrixField = None

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ConfigurationError("side must be 'left' or 'right'")
        self.coupling = np.atleast_2d(np.asarray(self.coupling, dtype=float))
        self.bc_start = np.atleast_2d(np.asarray(self.bc_start, dtype=float))
        self.bc_end = np.atleast_2d(np.asarray(self.bc_end, dtype=float))


def solve_matrix_bvp(problem, resonance_tol=1e-8):
    """Solve a :class:`MatrixBvpProblem` by chain scalarization and shooting.

    The coefficient matrix is scalarized along its Jordan chains; each
    scalar two-point problem is represented through the fundamental
    matrix and solved for its missing terminal value from the boundary
    condition that carries the nonlocal term.  A singular solvability
    matrix means the chain eigenvalue resonates with the target cascade
    and raises :class:`ResonanceError`.

    Returns
    -------
    MatrixField
    """
    if problem.side == "left":
        return _solve_bvp_left(problem, resonance_tol)
    return _solve_bvp_right(problem, resonance_tol)


def _solve_bvp_left(problem, resonance_tol):
    lam = problem.lam
    n = lam.shape[0]
    grid = lam.grid
    npts = grid.size
    h = grid[1] - grid[0]
    weights = composite_weights(npts, h)
    p = problem.coupling.shape[0]
    e1 = np.vstack([np.eye(n), np.zeros((n, n))])
    e2 = np.vstack([np.zeros((n, n)), np.eye(n)])
    diag = _diag_entries(lam)
    inhom = problem.inhomogeneity
    wfield = problem.integral_weight

    chain_set = jordan_chains(problem.coupling, side="left")
    fm_cache = {}
    rows = []  # (sigma samples (npts, n) complex)
    phis = []

    for chain in chain_set.chains:
        mu = chain.eigenvalue
        key = complex(mu)
        if key not in fm_cache:
            fm = FundamentalMatrix(lam, problem.shift, mu, orientation="adjoint")
            fm_cache[key] = fm.along_grid(grid, 1.0)  # Y(z) = propagator from 1
        props = fm_cache[key]  # Psi(z, 1) stacked over grid

        prev_sigma = None
        prev_spline = None
        for k in range(chain.length):
            phi = chain.vectors[k]
            phis.append(phi)

            if prev_sigma is None:
                def hvec(z, spline=None):
                    return phi @ inhom(z)
            else:
                prev_spline = MatrixField(grid, prev_sigma[:, None, :].real)
                prev_imag = MatrixField(grid, prev_sigma[:, None, :].imag)

                def hvec(z, re=prev_spline, im=prev_imag):
                    lam_inv = 1.0 / np.diag(lam(z))
                    prev = (re(z) + 1j * im(z))[0]
                    return prev * lam_inv + phi @ inhom(z)

            # particular part, integrated backward from the far end where
            # the derivative of the scalarized unknown is known
            pvec = phi @ problem.bc_end  # sigma'(1)
            rho_end = np.concatenate([-np.asarray(pvec, dtype=complex).ravel(), np.zeros(n)])

            def rho_rhs(z, rho):
                u = _upsilon(diag_at(lam, z), problem.shift, mu)
                return -(rho @ u) - np.concatenate([hvec(z), np.zeros(n)])

            rho_sol = _integrate_matrix_ode(rho_rhs, rho_end, 1.0, 0.0)
            rho_grid = np.array([rho_sol(z) for z in grid])

            # solvability matrix and right-hand side of the near condition
            m_mat = props[0] @ e1
            if wfield is not None:
                for j in range(npts):
                    lam_inv = np.diag(1.0 / diag[j])
                    m_mat = m_mat + weights[j] * (
                        props[j] @ e2 @ lam_inv @ wfield.samples[j]
                    )
            solvability = (e2.T @ m_mat).T  # sigma(1) enters from the left
            det = np.linalg.det(solvability)
            scale = np.linalg.norm(solvability, ord="fro")
            if abs(det) < resonance_tol * max(scale**n, 1e-30):
                raise ResonanceError(
                    f"boundary problem is resonant at eigenvalue {mu:.6g}",
                    offending_value=mu,
                )

            r_vec = rho_grid[0] @ e1
            if wfield is not None:
                for j in range(npts):
                    lam_inv = np.diag(1.0 / diag[j])
                    r_vec = r_vec + weights[j] * (
                        (rho_grid[j] @ e2) @ lam_inv @ wfield.samples[j]
                    )
            r_vec = r_vec + phi @ problem.bc_start
            sigma_end = np.linalg.solve(solvability.T, r_vec)

            sigma = np.einsum("k,zkj->zj", sigma_end, props @ e2) + rho_grid @ e2
            rows.append(sigma)
            prev_sigma = sigma

    stacked_phi = np.vstack(phis)
    inv_phi = np.linalg.inv(stacked_phi)
    sigma_all = np.stack(rows, axis=1)  # (npts, p, n)
    x = np.einsum("pq,zqj->zpj", inv_phi, sigma_all)
    lam_inv_diag = 1.0 / diag
    x = x * lam_inv_diag[:, None, :]
    imag_max = float(np.max(np.abs(x.imag))) if np.iscomplexobj(x) else 0.0
    if imag_max > 1e-8 * max(1.0, float(np.max(np.abs(x.real)))):
        raise SolvabilityError(
            f"complex residue {imag_max:.3e} in assembled real solution"
        )
    return MatrixField(grid, np.ascontiguousarray(x.real))


def _solve_bvp_right(problem, resonance_tol):
    lam = problem.lam
    n = lam.shape[0]
    grid = lam.grid
    npts = grid.size
    h = grid[1] - grid[0]
    weights = composite_weights(npts, h)
    e1 = np.vstack([np.eye(n), np.zeros((n, n))])
    e2 = np.vstack([np.zeros((n, n)), np.eye(n)])
    diag = _diag_entries(lam)
    inhom = problem.inhomogeneity
    wfield = problem.integral_weight

    chain_set = jordan_chains(problem.coupling, side="right")
    fm_cache = {}
    cols = []
    vees = []

    for chain in chain_set.chains:
        mu = chain.eigenvalue
        key = complex(mu)
        if key not in fm_cache:
            fm = FundamentalMatrix(lam, problem.shift, mu, orientation="primal")
            fm_cache[key] = fm.along_grid(grid, 0.0)  # Phi(z, 0)
        props = fm_cache[key]

        prev_gamma = None
        for k in range(chain.length):
            v = chain.vectors[k]
            vees.append(v)

            if prev_gamma is None:
                def gvec(z):
                    return inhom(z) @ v
            else:
                prev_re = MatrixField(grid, prev_gamma[:, :, None].real)
                prev_im = MatrixField(grid, prev_gamma[:, :, None].imag)

                def gvec(z, re=prev_re, im=prev_im):
                    return (re(z) + 1j * im(z))[:, 0] + inhom(z) @ v

            q0 = np.asarray(problem.bc_start @ v, dtype=complex).ravel()
            q1 = np.asarray(problem.bc_end @ v, dtype=complex).ravel()

            def y_rhs(z, y):
                u = _upsilon(diag_at(lam, z), problem.shift, mu)
                lam_inv = 1.0 / np.diag(lam(z))
                return u @ y + np.concatenate([np.zeros(n), lam_inv * gvec(z)])

            ybar_sol = _integrate_matrix_ode(
                y_rhs, np.zeros(2 * n, dtype=complex), 0.0, 1.0
            )
            ybar_grid = np.array([ybar_sol(z) for z in grid])

            m_mat = e2.T @ props[-1] @ e1
            if wfield is not None:
                for j in range(npts):
                    m_mat = m_mat + weights[j] * (
                        wfield.samples[j] @ (e1.T @ props[j] @ e1)
                    )
            det = np.linalg.det(m_mat)
            scale = np.linalg.norm(m_mat, ord="fro")
            if abs(det) < resonance_tol * max(scale**n, 1e-30):
                raise ResonanceError(
                    f"boundary problem is resonant at eigenvalue {mu:.6g}",
                    offending_value=mu,
                )

            rhs = q1 - e2.T @ (props[-1] @ (e2 @ q0) + ybar_grid[-1])
            if wfield is not None:
                for j in range(npts):
                    rhs = rhs - weights[j] * (
                        wfield.samples[j]
                        @ (e1.T @ (props[j] @ (e2 @ q0) + ybar_grid[j]))
                    )
            gamma0 = np.linalg.solve(m_mat, rhs)

            init = e1 @ gamma0 + e2 @ q0
            gamma = np.einsum("zij,j->zi", props, init) + ybar_grid
            gamma = gamma[:, :n]
            cols.append(gamma)
            prev_gamma = gamma

    stacked_v = np.column_stack(vees)
    inv_v = np.linalg.inv(stacked_v)
    gamma_all = np.stack(cols, axis=2)  # (npts, n, q)
    x = np.einsum("znq,qm->znm", gamma_all, inv_v)
    imag_max = float(np.max(np.abs(x.imag))) if np.iscomplexobj(x) else 0.0
    if imag_max > 1e-8 * max(1.0, float(np.max(np.abs(x.real)))):
        raise SolvabilityError(
            f"complex residue {imag_max:.3e} in assembled real solution"
        )
    return MatrixField(grid, np.ascontiguousarray(x.real))


def diag_at(lam, z):
    """Diagonal entries of a diagonal field at one position."""
    return np.diag(lam(z))


def _upsilon(diag_entries, shift, s):
    n = diag_entries.size
    dtype = complex if (np.iscomplexobj(np.asarray(s)) and complex(s).imag) else float
    u = np.zeros((2 * n, 2 * n), dtype=complex if complex(s).imag else float)
    u[:n, n:] = np.eye(n)
    u[n:, :n] = (complex(s).real if u.dtype == float else complex(s)) + 0.0
    u[n:, :n] = np.diag((complex(s) + shift) / diag_entries) if u.dtype == complex else np.diag(
        (complex(s).real + shift) / diag_entries
    )
    return u


def solve_matrix_bvp_collocation(problem, num_points=None):
    """Finite-difference collocation solve of a :class:`MatrixBvpProblem`.

    Independent cross-check for :func:`solve_matrix_bvp`: second-order
    central differences for the state equation, one-sided second-order
    differences for the boundary conditions, quadrature for the nonlocal
    term, solved as one dense linear system.

    Returns
    -------
    MatrixField
        Solution sampled on the problem grid (re-sampled if
        ``num_points`` differs).
    """
    lam = problem.lam if num_points is None else problem.lam.resample(num_points)
    grid = lam.grid
    npts = grid.size
    h = grid[1] - grid[0]
    n = lam.shape[0]
    diag = _diag_entries(lam)
    inhom = (
        problem.inhomogeneity
        if num_points is None
        else problem.inhomogeneity.resample(num_points)
    )
    wfield = problem.integral_weight
    if wfield is not None and num_points is not None:
        wfield = wfield.resample(num_points)
    weights = composite_weights(npts, h)
    f = problem.coupling

    if problem.side == "left":
        p, q = f.shape[0], n
    else:
        p, q = n, f.shape[0]
    unknowns = npts * p * q

    def idx(i, r, c):
        return (i * p + r) * q + c

    a = np.zeros((unknowns, unknowns))
    b = np.zeros(unknowns)

    def add(row, i, r, c, val):
        a[row, idx(i, r, c)] += val

    row = 0
    if problem.side == "left":
        # unknowns are the entries of Y = X lam; interior collocation of
        # Y'' - shift Y lam^{-1} - F Y lam^{-1} = H
        for i in range(1, npts - 1):
            for r in range(p):
                for c in range(q):
                    add(row, i - 1, r, c, 1.0 / h**2)
                    add(row, i, r, c, -2.0 / h**2)
                    add(row, i + 1, r, c, 1.0 / h**2)
                    add(row, i, r, c, -problem.shift / diag[i, c])
                    for rr in range(p):
                        add(row, i, rr, c, -f[r, rr] / diag[i, c])
                    b[row] = inhom.samples[i, r, c]
                    row += 1
        # near condition with nonlocal term
        for r in range(p):
            for c in range(q):
                add(row, 0, r, c, -3.0 / (2 * h))
                add(row, 1, r, c, 4.0 / (2 * h))
                add(row, 2, r, c, -1.0 / (2 * h))
                if wfield is not None:
                    for j in range(npts):
                        for cc in range(n):
                            add(
                                row,
                                j,
                                r,
                                cc,
                                -weights[j] * wfield.samples[j, cc, c] / diag[j, cc],
                            )
                b[row] = problem.bc_start[r, c]
                row += 1
        # far condition
        for r in range(p):
            for c in range(q):
                add(row, npts - 1, r, c, 3.0 / (2 * h))
                add(row, npts - 2, r, c, -4.0 / (2 * h))
                add(row, npts - 3, r, c, 1.0 / (2 * h))
                b[row] = problem.bc_end[r, c]
                row += 1
        sol = np.linalg.solve(a, b).reshape(npts, p, q)
        sol = sol / diag[:, None, :]
        return MatrixField(grid, sol)

    # side == "right": unknowns are the entries of X itself
    for i in range(1, npts - 1):
        for r in range(p):
            for c in range(q):
                lam_r = diag[i, r]
                add(row, i - 1, r, c, lam_r / h**2)
                add(row, i, r, c, -2.0 * lam_r / h**2)
                add(row, i + 1, r, c, lam_r / h**2)
                add(row, i, r, c, -problem.shift)
                for cc in range(q):
                    add(row, i, r, cc, -f[cc, c])
                b[row] = inhom.samples[i, r, c]
                row += 1
    for r in range(p):
        for c in range(q):
            add(row, 0, r, c, -3.0 / (2 * h))
            add(row, 1, r, c, 4.0 / (2 * h))
            add(row, 2, r, c, -1.0 / (2 * h))
            b[row] = problem.bc_start[r, c]
            row += 1
    for r in range(p):
        for c in range(q):
            add(row, npts - 1, r, c, 3.0 / (2 * h))
            add(row, npts - 2, r, c, -4.0 / (2 * h))
            add(row, npts - 3, r, c, 1.0 / (2 * h))
            if wfield is not None:
                for j in range(npts):
                    for rr in range(n):
                        add(row, j, rr, c, weights[j] * wfield.samples[j, r, rr])
            b[row] = problem.bc_end[r, c]
            row += 1
    sol = np.linalg.solve(a, b).reshape(npts, p, q)
    return MatrixField(grid, sol)


def solve_matrix_ivp(
    lam,
    coupling,
    side,
    shift,
    inhomogeneity,
    value,
    slope,
    at="start",
):
    """Integrate a matrix initial value problem across the interval.

    ``side="right"`` solves ``lam X'' - shift X - X coupling = H`` with
    data ``X = value`` and ``X' = slope`` at the chosen end, row by row
    (each row sees its own diffusion coefficient).

    ``side="left"`` solves ``(X lam)'' - shift X - coupling X = H``
    where the data are for the product ``Y = X lam``: ``Y = value`` and
    ``Y' = slope`` at the chosen end; the returned field is ``X``
    (column by column).

    Returns
    -------
    MatrixField
    """
    if side not in ("left", "right"):
        raise ConfigurationError("side must be 'left' or 'right'")
    if at not in ("start", "end"):
        raise ConfigurationError("at must be 'start' or 'end'")
    grid = lam.grid
    f = np.atleast_2d(np.asarray(coupling, dtype=float))
    value = np.atleast_2d(np.asarray(value, dtype=float))
    slope = np.atleast_2d(np.asarray(slope, dtype=float))
    n = lam.shape[0]
    m = f.shape[0]
    diag = _diag_entries(lam)

    z0, z1 = (0.0, 1.0) if at == "start" else (1.0, 0.0)

    if side == "right":
        p, q = value.shape  # p = n rows, q = m columns
        if p != n or q != m:
            raise ConfigurationError("data shape does not match the problem")

        def rhs(z, y):
            x = y[:n, :]
            dx = y[n:, :]
            lam_z = np.diag(lam(z))
            h_z = inhomogeneity(z)
            ddx = (shift * x + x @ f + h_z) / lam_z[:, None]
            return np.vstack([dx, ddx])

        y0 = np.vstack([value, slope])
        sol = _integrate_matrix_ode(rhs, y0, z0, z1)
        samples = np.array([sol(z)[:n, :] for z in grid])
        return MatrixField(grid, samples)

    # side == "left": integrate Y = X lam column by column
    p, q = value.shape  # p = m rows, q = n columns
    if p != m or q != n:
        raise ConfigurationError("data shape does not match the problem")

    def rhs(z, y):
        yv = y[:m, :]
        dyv = y[m:, :]
        lam_z = np.diag(lam(z))
        x = yv / lam_z[None, :]
        ddy = shift * x + f @ x + inhomogeneity(z)
        return np.vstack([dyv, ddy])

    y0 = np.vstack([value, slope])
    sol = _integrate_matrix_ode(rhs, y0, z0, z1)
    samples = np.array([sol(z)[:m, :] for z in grid])
    samples = samples / diag[:, None, :]
    return MatrixField(grid, samples)


def solve_volterra_2nd(kernel, tol=1e-10, max_iter=500):
    """Resolvent kernel of a second-kind Volterra operator.

    Returns the kernel ``R`` satisfying
    ``R(z, zeta) = K(z, zeta) + integral over xi in [zeta, z] of
    K(z, xi) R(xi, zeta)``, computed by successive approximations.

    Raises
    ------
    ConvergenceError
        If the iteration has not settled after ``max_iter`` sweeps;
        a finer grid usually fixes this.
    """
    current = TriangularKernel(kernel.grid, kernel.values.copy())
    for iteration in range(max_iter):
        composed = kernel_compose(kernel, current)
        updated = kernel.values + composed.values
        change = float(np.max(np.abs(updated - current.values)))
        scale = max(1.0, float(np.max(np.abs(updated))))
        current = TriangularKernel(kernel.grid, updated)
        if change < tol * scale:
            return current
    raise ConvergenceError(
        "resolvent iteration did not converge; refine the kernel grid",
        iterations=max_iter,
        last_change=change,
    )
