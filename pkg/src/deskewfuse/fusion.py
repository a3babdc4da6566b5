"""Radial / tangential split of velocity Gaussians and lidar-camera fusion."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .gaussian import VelocityGaussian
from .geom import RadialBasis


class FusionRegularizedWarning(RuntimeWarning):
    """Raised as a warning when the tangential covariance sum had to be regularised."""


@dataclass
class DirectionalVelocity:
    radial_mean: float
    radial_var: float
    tangential_mean: np.ndarray
    tangential_cov: np.ndarray
    basis: RadialBasis


def project_gaussian(v: VelocityGaussian, basis: RadialBasis) -> DirectionalVelocity:
    h = basis.matrix()
    mean = h @ v.mean
    cov = h @ v.cov @ h.T
    return DirectionalVelocity(float(mean[0]), float(cov[0, 0]), mean[1:].copy(), cov[1:, 1:].copy(), basis)


def fuse_gaussians(m1, s1, m2, s2, eps: float = 1e-9):
    """Covariance-weighted combination of two independent Gaussians.

    Returns (mean, cov, gain, regularized).  The gain ``s1 (s1 + s2)^-1`` pulls
    the first estimate towards the second.
    """
    m1, m2 = np.asarray(m1, float), np.asarray(m2, float)
    s1, s2 = np.asarray(s1, float), np.asarray(s2, float)
    total = s1 + s2
    regularized = False
    cond = np.linalg.cond(total)
    if not np.isfinite(cond) or cond > 1e15:
        total = total + eps * np.eye(total.shape[0])
        regularized = True
    gain = np.linalg.solve(total.T, s1.T).T
    mean = m1 + gain @ (m2 - m1)
    cov = (np.eye(len(m1)) - gain) @ s1
    return mean, (cov + cov.T) / 2.0, gain, regularized


def recompose(radial_mean, radial_var, tangential_mean, tangential_cov, basis: RadialBasis, tag="fused") -> VelocityGaussian:
    h = basis.matrix()
    mean_b = np.concatenate([[radial_mean], tangential_mean])
    cov_b = np.zeros((3, 3))
    cov_b[0, 0] = radial_var
    cov_b[1:, 1:] = tangential_cov
    return VelocityGaussian(h.T @ mean_b, h.T @ cov_b @ h, tag)


def fuse(lidar: DirectionalVelocity, camera: DirectionalVelocity) -> VelocityGaussian:
    """Lidar keeps the radial component; tangential components are fused."""
    if not np.allclose(lidar.basis.matrix(), camera.basis.matrix(), atol=1e-9):
        raise ValueError("lidar and camera velocities are expressed in different bases")
    mean_t, cov_t, _, regularized = fuse_gaussians(
        lidar.tangential_mean, lidar.tangential_cov, camera.tangential_mean, camera.tangential_cov
    )
    if regularized:
        warnings.warn("tangential covariance sum singular; regularised with 1e-9 I", FusionRegularizedWarning, stacklevel=2)
    return recompose(lidar.radial_mean, lidar.radial_var, mean_t, cov_t, lidar.basis)


def lidar_only(lidar: DirectionalVelocity) -> VelocityGaussian:
    """The lidar estimate re-expressed in the same block form that :func:`fuse` returns."""
    return recompose(lidar.radial_mean, lidar.radial_var, lidar.tangential_mean, lidar.tangential_cov, lidar.basis)
