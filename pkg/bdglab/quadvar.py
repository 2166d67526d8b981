"""
Covariation forms of grid paths.

On a finite grid the covariation form is the exact partition sum
[[M]]_t(x*, y*) = sum_{t_j <= t} <dM_j, x*><dM_j, y*>, i.e. the matrix sum of dM dM^T.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .bilinear import SymBilinearForm
from .errors import DimensionMismatchError, GridMismatchError
from .martingales import MartingalePath
from .norms import NormSpec, norm

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CovariationProcess:
    """Running covariation forms; matrices[k] = [[M]]_{t_k}, matrices[0] = 0."""

    times: np.ndarray
    matrices: np.ndarray

    @property
    def forms(self) -> List[SymBilinearForm]:
        return [SymBilinearForm(m) for m in self.matrices]

    @property
    def final(self) -> SymBilinearForm:
        return SymBilinearForm(self.matrices[-1])

    def at(self, k: int) -> SymBilinearForm:
        return SymBilinearForm(self.matrices[k])

    def increment_gaps(self) -> np.ndarray:
        """Smallest eigenvalue of each increment matrices[k] - matrices[k-1]."""
        if self.matrices.shape[0] < 2:
            return np.zeros(0)
        steps = np.diff(self.matrices, axis=0)
        return np.linalg.eigvalsh(0.5 * (steps + np.swapaxes(steps, 1, 2)))[:, 0]


def _upto(M: MartingalePath, upto: Optional[int]) -> int:
    if upto is None:
        return M.steps
    if upto < 0 or upto > M.steps:
        raise ValueError(f"upto={upto} outside 0..{M.steps}")
    return upto


def covariation_form(M: MartingalePath, upto: Optional[int] = None) -> SymBilinearForm:
    """sum_{j <= upto} dM_j dM_j^T (all steps by default)."""
    inc = M.increments[: _upto(M, upto)]
    return SymBilinearForm(inc.T @ inc)


def covariation_process(M: MartingalePath) -> CovariationProcess:
    inc = M.increments
    steps = np.einsum("ki,kj->kij", inc, inc)
    running = np.concatenate([np.zeros((1, M.dim, M.dim)), np.cumsum(steps, axis=0)])
    return CovariationProcess(times=M.times, matrices=running)


def _same_grid(M: MartingalePath, N: MartingalePath) -> None:
    if M.times.shape != N.times.shape or not np.array_equal(M.times, N.times):
        raise GridMismatchError("paths live on different grids")


def pairwise_covariation(M: MartingalePath, N: MartingalePath, upto: Optional[int] = None) -> np.ndarray:
    """[[M, N]] as a d_M x d_N matrix sum dM_j dN_j^T (not symmetrized)."""
    _same_grid(M, N)
    k = _upto(M, upto)
    return M.increments[:k].T @ N.increments[:k]


def dyadic_subgrid(times: np.ndarray, level: int) -> np.ndarray:
    """Every 2^level-th grid point (the last point is always kept)."""
    sub = times[:: 2**level]
    if sub[-1] != times[-1]:
        sub = np.append(sub, times[-1])
    return sub


def refinement_convergence(M_fine: MartingalePath, coarsenings: Sequence[np.ndarray], xstar) -> List[float]:
    """|V_coarse(x*, x*) - V_fine(x*, x*)| for each subgrid of the fine grid."""
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != (M_fine.dim,):
        raise DimensionMismatchError(f"x* of shape {xstar.shape} for a path in dim {M_fine.dim}")
    proj = M_fine.values @ xstar
    fine = float(np.sum(np.diff(proj) ** 2))
    out = []
    for grid in coarsenings:
        grid = np.asarray(grid, dtype=float)
        idx = np.searchsorted(M_fine.times, grid)
        if (
            np.any(idx >= M_fine.times.size)
            or not np.array_equal(M_fine.times[np.minimum(idx, M_fine.times.size - 1)], grid)
            or np.any(np.diff(grid) <= 0)
        ):
            raise GridMismatchError("coarsening is not a subgrid of the fine grid")
        if grid[0] != M_fine.times[0] or grid[-1] != M_fine.times[-1]:
            raise GridMismatchError("coarsening must keep both endpoints")
        coarse = float(np.sum(np.diff(proj[idx]) ** 2))
        out.append(abs(coarse - fine))
    return out


def jump_covariation_form(M: MartingalePath) -> SymBilinearForm:
    """sum over recorded jumps of dM dM^T."""
    j = M.jumps
    return SymBilinearForm(j.T @ j)


def square_function(M: MartingalePath, spec: NormSpec, upto: Optional[int] = None) -> float:
    """|| (sum_j |dM_j|^2)^(1/2) || with the square taken coordinatewise."""
    inc = M.increments[: _upto(M, upto)]
    return float(norm(spec, np.sqrt(np.sum(inc * inc, axis=0))))


def is_weakly_subordinate(N: MartingalePath, M: MartingalePath, tol: float = 1e-10) -> bool:
    """Whether [<M, x*>] - [<N, x*>] is nondecreasing for every x* (step by step)."""
    _same_grid(M, N)
    if M.dim != N.dim:
        raise DimensionMismatchError(f"paths in dims {M.dim} and {N.dim}")
    dm, dn = M.increments, N.increments
    if dm.shape[0] == 0:
        return True
    diff = np.einsum("ki,kj->kij", dm, dm) - np.einsum("ki,kj->kij", dn, dn)
    gaps = np.linalg.eigvalsh(diff)[:, 0]
    scale = np.maximum(1.0, np.sum(dm * dm, axis=1))
    return bool(np.all(gaps >= -tol * scale))
