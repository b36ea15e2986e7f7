"""Dense complex-matrix kernel.

Every tensor product in the package puts the system factor first and the
bath factor second, so an operator on ``H_0 (x) H`` of shape ``(d*m, d*m)``
reshapes to ``[r, v, s, w]`` with system indices ``r, s`` and bath indices
``v, w``.
"""

from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10


class StateError(ValueError):
    """Raised when a matrix cannot be interpreted or repaired as a state."""


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product, ``a`` on the system and ``b`` on the bath."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def _split(k: np.ndarray, d: int, m: int) -> np.ndarray:
    k = np.asarray(k, dtype=complex)
    if k.shape != (d * m, d * m):
        raise ValueError(f"expected a {(d * m, d * m)} operator, got {k.shape}")
    return k.reshape(d, m, d, m)


def block(k: np.ndarray, i: int, j: int, d: int, m: int) -> np.ndarray:
    """Return the ``d x d`` block ``<e_r (x) X_i, K (e_s (x) X_j)>``.

    Parameters
    ----------
    k : ndarray
        Operator on ``H_0 (x) H`` of shape ``(d*m, d*m)``.
    i, j : int
        Bath row and column indices, ``0 <= i, j < m``.
    d, m : int
        System and bath dimensions.
    """
    if not (0 <= i < m and 0 <= j < m):
        raise IndexError(f"bath indices ({i}, {j}) out of range for m={m}")
    return _split(k, d, m)[:, i, :, j].copy()


def blocks(k: np.ndarray, d: int, m: int) -> np.ndarray:
    """All blocks at once, shape ``(m, m, d, d)`` indexed ``[i, j]``."""
    return np.transpose(_split(k, d, m), (1, 3, 0, 2)).copy()


def partial_trace_env(k: np.ndarray, d: int, m: int) -> np.ndarray:
    """Trace out the bath factor: the sum of the diagonal blocks."""
    return np.einsum("rvsv->rs", _split(k, d, m))


def is_hermitian(h: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    h = np.asarray(h)
    return h.ndim == 2 and h.shape[0] == h.shape[1] and np.max(np.abs(h - dag(h)), initial=0.0) <= tol


def expm_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """Return ``exp(-i t h)`` for Hermitian ``h`` via its eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("expm_hermitian requires a Hermitian matrix")
    h = 0.5 * (h + dag(h))
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * t * w)) @ dag(v)


def is_state(rho: np.ndarray, tol: float = PSD_TOL) -> bool:
    """Check the density-matrix invariants (Hermitian, unit trace, PSD)."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if not is_hermitian(rho, HERMITIAN_TOL):
        return False
    if abs(np.trace(rho) - 1.0) > TRACE_TOL:
        return False
    return np.linalg.eigvalsh(0.5 * (rho + dag(rho)))[0] >= -tol


def as_state(rho) -> np.ndarray:
    """Validate ``rho`` and return it as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if not is_state(rho):
        raise StateError("matrix is not a valid density matrix")
    return rho


def project_to_state(m: np.ndarray) -> np.ndarray:
    """Map a near-state onto the state set.

    Hermitize, clip negative eigenvalues at zero and renormalise the trace.
    Works on a single matrix or a stack ``(..., d, d)``. Inputs that already
    are states are returned unchanged up to round-off.

    Raises
    ------
    StateError
        If the trace after clipping is below ``1e-12``.
    """
    m = np.asarray(m, dtype=complex)
    h = 0.5 * (m + dag(m))
    lam_min = _min_eigenvalue(h)
    negative = lam_min < 0.0
    if np.any(negative) and h.shape[-1] == 2:
        # one negative eigenvalue: the clipped, renormalised state is the
        # top eigenprojector (H - lam_min I) / (lam_max - lam_min)
        tr = np.real(np.einsum("...ii->...", h))
        gap = tr - 2.0 * lam_min
        if np.any((tr - lam_min)[negative] <= 1e-12) or not np.all(np.isfinite(gap)):
            raise StateError("state trace vanished after clipping; integrator blow-up")
        top = (h - lam_min[..., None, None] * np.eye(2)) / np.where(negative, gap, 1.0)[..., None, None]
        h = np.where(negative[..., None, None], top, h)
    elif np.any(negative):
        sub = h[negative] if h.ndim > 2 else h
        w, v = np.linalg.eigh(sub)
        w = np.clip(w, 0.0, None)
        fixed = (v * w[..., None, :]) @ dag(v)
        if h.ndim > 2:
            h = h.copy()
            h[negative] = fixed
        else:
            h = fixed
    tr = np.real(np.einsum("...ii->...", h))
    if np.any(tr <= 1e-12) or not np.all(np.isfinite(tr)):
        raise StateError("state trace vanished after clipping; integrator blow-up")
    return h / tr[..., None, None]


def _min_eigenvalue(h: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of Hermitian matrices; closed form for 2 x 2."""
    if h.shape[-1] == 2:
        a = np.real(h[..., 0, 0])
        c = np.real(h[..., 1, 1])
        b = h[..., 0, 1]
        return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + np.abs(b) ** 2)
    return np.linalg.eigvalsh(h)[..., 0]


def superoperator(fn, d: int) -> np.ndarray:
    """Matrix of a linear map on ``d x d`` matrices acting on row-major vectorisations."""
    basis = np.eye(d * d, dtype=complex).reshape(d * d, d, d)
    return np.stack([np.asarray(fn(e)).reshape(-1) for e in basis], axis=1)


def apply_superoperator(s: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Apply ``s`` (or a stack of them, ``(k, d^2, d^2)``) to ``rho`` of shape ``(..., d, d)``."""
    d = rho.shape[-1]
    flat = rho.reshape(-1, d * d)
    if s.ndim == 2:
        return (flat @ s.T).reshape(rho.shape)
    out = np.einsum("kab,qb->kqa", s, flat)
    return out.reshape((s.shape[0],) + rho.shape)


def expect(rho: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``Re Tr[rho x]`` for a single state or a stack of states."""
    return np.real(np.einsum("...ij,ji->...", rho, x))


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"sx": SIGMA_X, "sy": SIGMA_Y, "sz": SIGMA_Z}


def ket_bra(i: int, j: int, m: int) -> np.ndarray:
    """``|X_i><X_j|`` on ``C^m``."""
    out = np.zeros((m, m), dtype=complex)
    out[i, j] = 1.0
    return out


def random_state(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix from a Ginibre ensemble."""
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ dag(g)
    return rho / np.trace(rho)


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (g + dag(g))


def random_projector(m: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((m, rank)) + 1j * rng.standard_normal((m, rank))
    q, _ = np.linalg.qr(g)
    return q @ dag(q)
