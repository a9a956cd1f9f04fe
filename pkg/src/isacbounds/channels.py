"""Channel constructions shared by the tradeoff solvers.

Conventions: uniform linear arrays with half-wavelength spacing, angle
measured from broadside (theta = 0 gives the all-ones steering vector), and
SNR defined as P * ||H||_F^2 / sigma^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CommChannel:
    """Downlink communication channel Y_c = H_c X + Z_c."""

    h: np.ndarray          # N_c x M
    noise_var: float

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        if not np.all(np.isfinite(h)):
            raise ValueError("communication channel has non-finite entries")
        if self.noise_var <= 0:
            raise ValueError("noise variance must be positive")
        object.__setattr__(self, "h", h)


@dataclass(frozen=True)
class SensingChannel:
    """Target response (sensing) channel Y_s = H_s X + Z_s."""

    h: np.ndarray          # N_s x M
    noise_var: float

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        if not np.all(np.isfinite(h)):
            raise ValueError("sensing channel has non-finite entries")
        if self.noise_var <= 0:
            raise ValueError("noise variance must be positive")
        object.__setattr__(self, "h", h)


def steering_vector(theta: float, n_elements: int) -> np.ndarray:
    """ULA steering vector a(theta), k-th entry exp(j*pi*k*sin(theta)).

    Half-wavelength element spacing is baked in; ||a||^2 = n_elements.
    """
    if n_elements < 1:
        raise ValueError("need at least one array element")
    k = np.arange(n_elements)
    return np.exp(1j * np.pi * k * np.sin(theta))


def point_target_channels(theta_c, theta_s, alpha_c, alpha_s, n_sensing,
                          n_comm=1, sigma_c2=1.0, sigma_s2=1.0):
    """Single-antenna user + point-like target channel pair.

    H_c = alpha_c * a^H(theta_c)   (1 x N_s row),
    H_s = alpha_s * a(theta_s) a^H(theta_s)   (rank one, N_s x N_s).
    """
    if n_comm != 1:
        raise ValueError("point-target scenario models a single-antenna user")
    a_c = steering_vector(theta_c, n_sensing)
    a_s = steering_vector(theta_s, n_sensing)
    h_c = alpha_c * a_c.conj()[np.newaxis, :]
    h_s = alpha_s * np.outer(a_s, a_s.conj())
    return CommChannel(h_c, sigma_c2), SensingChannel(h_s, sigma_s2)


def snr(channel, power: float) -> float:
    """SNR = P * ||H||_F^2 / sigma^2 for either channel kind."""
    if power <= 0:
        raise ValueError("power must be positive")
    if channel.noise_var <= 0:
        raise ValueError("noise variance must be positive")
    return power * float(np.linalg.norm(channel.h, "fro") ** 2) / channel.noise_var
