"""Kolsky-Futterman attenuation: dispersion term, complex factor and its linearization.

The time convention is exp(-i omega t): for omega > 0 and alpha > 0 the complex
squared slowness has a positive imaginary part, i.e. waves decay as they
propagate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AttenuationLaw:
    f_ref: float = 50.0

    def __post_init__(self):
        if not self.f_ref > 0:
            raise ValueError(f"reference frequency must be positive, got {self.f_ref}")

    @property
    def omega_ref(self) -> float:
        return 2.0 * np.pi * self.f_ref


DEFAULT_LAW = AttenuationLaw()


def beta(omega: float, law: AttenuationLaw = DEFAULT_LAW) -> complex:
    """i sign(w)/2 - ln|w / w_ref| / pi."""
    omega = float(omega)
    if omega == 0.0:
        raise ValueError("beta is singular at omega = 0")
    return complex(-np.log(abs(omega / law.omega_ref)) / np.pi, 0.5 * np.sign(omega))


def rho(alpha, omega: float, law: AttenuationLaw = DEFAULT_LAW) -> np.ndarray:
    b = beta(omega, law)
    return (1.0 + b * np.asarray(alpha, dtype=float)) ** 2


def rho_linear(alpha, omega: float, law: AttenuationLaw = DEFAULT_LAW) -> np.ndarray:
    """First-order expansion 1 + 2 beta alpha of ``rho``, for alpha << 1."""
    b = beta(omega, law)
    return 1.0 + 2.0 * b * np.asarray(alpha, dtype=float)


def complex_slowness_sq(m, alpha, omega: float, law: AttenuationLaw = DEFAULT_LAW) -> np.ndarray:
    return np.asarray(m, dtype=float) * rho(alpha, omega, law)
