"""Predict / update / re-anchor steps of the spherical error-state filter.

The ``*_arrays`` functions operate on stacks of tracks (leading batch axis)
and are what the tracker runs per frame; the single-track functions wrap them.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ChartDomainError, DimensionMismatch, SingularInnovation
from .geometry import exp_map, make_tangent_basis, parallel_transport
from .measurements import MeasurementPacket
from .state import (ASPECT, ASPECT_MIN, DEPTH, DEPTH_MIN, STATE_DIM, ProcessNoise,
                    TrackHypothesis, cached_process_noise, cached_transition)

LAMBDA_FLOOR = 1e-9
# physical lower bounds enforced after every correction
STATE_FLOORS = ((DEPTH, DEPTH_MIN), (ASPECT, ASPECT_MIN))

_EYE = np.eye(STATE_DIM)
_EYES = {k: np.eye(k) for k in range(1, STATE_DIM + 1)}


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def predict_arrays(x: np.ndarray, P: np.ndarray, dt: float,
                   q: ProcessNoise = ProcessNoise()) -> tuple[np.ndarray, np.ndarray]:
    F = cached_transition(dt)
    x = x @ F.T
    P = F @ P @ F.T
    if dt > 0:
        P = P + cached_process_noise(dt, q)
    return x, P


def innovation_arrays(x, P, z, H, R, lambda_floor: float = LAMBDA_FLOOR):
    """Residual, eigenvalue-clamped innovation covariance and its inverse."""
    if H.shape[-1] != x.shape[-1]:
        raise DimensionMismatch(f"H has {H.shape[-1]} columns, state has {x.shape[-1]}")
    if z.shape[-1] != H.shape[-2] or R.shape[-1] != H.shape[-2]:
        raise DimensionMismatch(f"z {z.shape}, H {H.shape}, R {R.shape} disagree")
    y = z - (H @ x[..., None])[..., 0]
    S = _sym(H @ P @ np.swapaxes(H, -1, -2) + R)
    if eigenvalues_above(S, lambda_floor):
        S_inv = np.linalg.inv(S)
    else:
        if not np.isfinite(S).all():
            raise SingularInnovation("innovation covariance is not finite")
        S, S_inv = clamp_eigenvalues(S, lambda_floor)
    # non-finite S propagates into S_inv
    if not np.isfinite(S_inv).all():
        raise SingularInnovation("innovation covariance could not be inverted")
    return y, S, S_inv


def eigenvalues_above(S: np.ndarray, floor: float) -> bool:
    """True when every symmetric matrix in the stack has all eigenvalues > ``floor``.

    The Gershgorin bound settles the usual, diagonally dominant case without a
    factorization; otherwise ``S - floor * I`` is tested with a Cholesky factorization.
    """
    diag = S.diagonal(axis1=-2, axis2=-1)
    radius = np.abs(S).sum(axis=-1) - np.abs(diag)
    if (diag - radius > floor).all():
        return True
    try:
        np.linalg.cholesky(S - floor * _EYES[S.shape[-1]])
    except np.linalg.LinAlgError:
        return False
    return bool(np.isfinite(S).all())


def clamp_eigenvalues(S: np.ndarray, lambda_floor: float = LAMBDA_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Raise eigenvalues of symmetric ``S`` to ``lambda_floor``; returns the clamped matrix and its inverse."""
    evals, evecs = np.linalg.eigh(S)
    evals = np.maximum(evals, lambda_floor)
    evecs_t = np.swapaxes(evecs, -1, -2)
    return (evecs * evals[..., None, :]) @ evecs_t, (evecs / evals[..., None, :]) @ evecs_t


def update_arrays(x, P, z, H, R, lambda_floor: float = LAMBDA_FLOOR):
    """Batched KF correction: Joseph-form covariance, then symmetrization."""
    y, _, S_inv = innovation_arrays(x, P, z, H, R, lambda_floor)
    Ht = np.swapaxes(H, -1, -2)
    K = P @ Ht @ S_inv
    x = x + (K @ y[..., None])[..., 0]
    A = _EYE - K @ H
    P = _sym(A @ P @ np.swapaxes(A, -1, -2) + K @ R @ np.swapaxes(K, -1, -2))
    x[..., DEPTH] = np.maximum(x[..., DEPTH], DEPTH_MIN)
    x[..., ASPECT] = np.maximum(x[..., ASPECT], ASPECT_MIN)
    return x, P


def update_rows_arrays(x, P, z, rows, mask, r, lambda_floor: float = LAMBDA_FLOOR,
                       floors=STATE_FLOORS):
    """Batched correction where every measurement row observes one state entry.

    Row ``k`` observes ``x[rows[k]]`` with variance ``r[..., k]``; rows whose
    ``mask`` is False are ignored.  Same result as :func:`update_arrays` with a
    selector ``H`` (zeroed on masked rows) and diagonal ``R``.  ``floors`` lists
    ``(index, minimum)`` pairs applied to the corrected state.
    """
    rows = np.asarray(rows)
    PHt = P[..., rows] * mask[..., None, :]
    S = PHt[..., rows, :] * mask[..., :, None]
    diag = S.reshape(S.shape[:-2] + (-1,))[..., ::rows.size + 1]
    diag += np.where(mask, r, 1.0)
    y = np.where(mask, z - x[..., rows], 0.0)
    if eigenvalues_above(S, lambda_floor):
        S_inv = np.linalg.inv(S)
    else:
        if not np.isfinite(S).all():
            raise SingularInnovation("innovation covariance is not finite")
        S, S_inv = clamp_eigenvalues(S, lambda_floor)
    if not np.isfinite(S_inv).all():
        raise SingularInnovation("innovation covariance could not be inverted")
    K = PHt @ S_inv
    x = x + (K @ y[..., None])[..., 0]
    H = np.zeros(mask.shape + (x.shape[-1],))
    H[..., np.arange(rows.size), rows] = mask
    A = _EYES[x.shape[-1]] - K @ H
    KR = K * np.where(mask, r, 0.0)[..., None, :]
    P = _sym(A @ P @ np.swapaxes(A, -1, -2) + KR @ np.swapaxes(K, -1, -2))
    for i, lo in floors:
        x[..., i] = np.maximum(x[..., i], lo)
    return x, P


def finalize_arrays(x, P, g_ref, basis):
    """Batched re-anchoring; see :func:`finalize_on_sphere`."""
    w = x[..., :2]
    try:
        g_new = exp_map(g_ref, basis, w)
    except ChartDomainError:
        raise ChartDomainError("chart offset outside the injectivity radius") from None
    basis_new = make_tangent_basis(g_new)
    T = parallel_transport(basis, basis_new)
    x = x.copy()
    x[..., :2] = 0.0
    x[..., 2:4] = (T @ x[..., 2:4, None])[..., 0]
    # blockdiag(T, T, I): positions and rates of the direction pair rotate together
    M = np.empty_like(P)
    M[...] = _EYE
    M[..., 0:2, 0:2] = T
    M[..., 2:4, 2:4] = T
    return x, _sym(M @ P @ np.swapaxes(M, -1, -2)), g_new, basis_new


def predict(track: TrackHypothesis, dt: float, q: ProcessNoise = ProcessNoise()) -> TrackHypothesis:
    """Propagate state and covariance by ``dt`` inside the current chart."""
    x, P = predict_arrays(track.x, track.P, dt, q)
    return dataclasses.replace(track, x=x, P=P)


def innovation(track: TrackHypothesis, pkt: MeasurementPacket,
               lambda_floor: float = LAMBDA_FLOOR) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return innovation_arrays(track.x, track.P, pkt.z, pkt.H, pkt.R, lambda_floor)


def kalman_update(track: TrackHypothesis, pkt: MeasurementPacket,
                  lambda_floor: float = LAMBDA_FLOOR) -> TrackHypothesis:
    """Standard KF correction on the locally Euclidean state.

    Tiny eigenvalues of the innovation covariance are clamped to
    ``lambda_floor``; the posterior covariance uses the Joseph form and is
    symmetrized.  Depth and aspect are floored afterwards.
    """
    x, P = update_arrays(track.x, track.P, pkt.z, pkt.H, pkt.R, lambda_floor)
    return dataclasses.replace(track, x=x, P=P)


def finalize_on_sphere(track: TrackHypothesis) -> TrackHypothesis:
    """Absorb the chart offset ``(w1, w2)`` into the reference bearing.

    The new reference is ``exp_map(g_ref, basis, w)``, the basis is rebuilt
    there, tangent velocities and the direction block of ``P`` are carried into
    the new basis, and ``(w1, w2)`` is reset to zero.
    """
    x, P, g, B = finalize_arrays(track.x, track.P, track.g_ref, track.basis)
    return dataclasses.replace(track, x=x, P=P, g_ref=g, basis=B)
