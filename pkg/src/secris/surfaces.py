"""Reconfigurable-surface parameterizations and their feasibility sets.

Three surface types:
  * aerial reflecting surface: unit-modulus phase shifts, quantized to B bits
  * transmissive/reflective surface: per-element energy split
    t_m = rho_m e^{j theta_T}, r_m = sqrt(1 - rho_m^2) e^{j theta_R},
    so |t_m|^2 + |r_m|^2 = 1 holds by construction
  * holographic aperture: amplitude-and-phase weights with |a_m| <= alpha_max

The optimizer works on relaxed complex coefficients and calls
project_feasible / quantize_phases to land back in the feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def quantize_phases(theta: np.ndarray, bits: int) -> np.ndarray:
    """Snap each phase to the nearest point of the uniform 2^bits grid on
    [0, 2pi).  Exact midpoints resolve to the lower grid index."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    n_levels = 2 ** bits
    step = TWO_PI / n_levels
    wrapped = np.mod(theta, TWO_PI)
    idx = np.floor(wrapped / step + 0.5).astype(int)
    # floor(x+0.5) rounds exact midpoints up; push them back down
    mid = np.isclose(np.mod(wrapped, step), step / 2.0, rtol=0.0, atol=1e-12)
    idx = np.where(mid, np.floor(wrapped / step).astype(int), idx)
    return np.mod(idx, n_levels) * step


@dataclass
class UavRisConfig:
    """Unit-modulus reflecting surface mounted on the relay platform."""
    phases: np.ndarray      # (M,) in [0, 2pi)
    bits: int

    def coefficients(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    def feasible(self, tol: float = 1e-9) -> bool:
        on_grid = np.allclose(self.phases, quantize_phases(self.phases, self.bits),
                              atol=tol)
        return bool(on_grid and np.all(self.phases >= -tol)
                    and np.all(self.phases < TWO_PI + tol))

    @classmethod
    def project(cls, raw: np.ndarray, bits: int) -> "UavRisConfig":
        """Nearest unit-modulus point: keep the phase, drop the magnitude.
        Zero coefficients map to phase 0."""
        theta = np.where(np.abs(raw) > 0, np.angle(raw), 0.0)
        return cls(quantize_phases(theta, bits), bits)


@dataclass
class StarRisConfig:
    """Energy-splitting surface: rho is the transmission amplitude."""
    rho: np.ndarray          # (M,) in [0, 1]
    theta_t: np.ndarray      # (M,) transmission phases
    theta_r: np.ndarray      # (M,) reflection phases
    bits: int

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.rho * np.exp(1j * self.theta_t)
        r = np.sqrt(np.clip(1.0 - self.rho ** 2, 0.0, None)) \
            * np.exp(1j * self.theta_r)
        return t, r

    def energy(self) -> np.ndarray:
        t, r = self.coefficients()
        return np.abs(t) ** 2 + np.abs(r) ** 2

    def feasible(self, tol: float = 1e-9) -> bool:
        in_range = np.all((self.rho >= -tol) & (self.rho <= 1.0 + tol))
        t_grid = np.allclose(self.theta_t,
                             quantize_phases(self.theta_t, self.bits), atol=tol)
        r_grid = np.allclose(self.theta_r,
                             quantize_phases(self.theta_r, self.bits), atol=tol)
        return bool(in_range and t_grid and r_grid)

    @classmethod
    def project(cls, raw_t: np.ndarray, raw_r: np.ndarray,
                bits: int) -> "StarRisConfig":
        """Radial projection onto |t|^2 + |r|^2 = 1 preserving both phases;
        an all-zero element falls back to the balanced split."""
        mag_t, mag_r = np.abs(raw_t), np.abs(raw_r)
        norm = np.hypot(mag_t, mag_r)
        zero = norm < 1e-300
        safe = np.where(zero, 1.0, norm)
        rho = np.where(zero, 1.0 / np.sqrt(2.0), mag_t / safe)
        th_t = np.where(np.abs(raw_t) > 0, np.angle(raw_t), 0.0)
        th_r = np.where(np.abs(raw_r) > 0, np.angle(raw_r), 0.0)
        return cls(np.clip(rho, 0.0, 1.0),
                   quantize_phases(th_t, bits),
                   quantize_phases(th_r, bits), bits)


@dataclass
class HoloRisConfig:
    """Holographic aperture weights: bounded amplitude, quantized phase."""
    amplitudes: np.ndarray   # (M,) in [0, alpha_max]
    phases: np.ndarray       # (M,)
    bits: int
    alpha_max: float

    def coefficients(self) -> np.ndarray:
        return self.amplitudes * np.exp(1j * self.phases)

    def feasible(self, tol: float = 1e-9) -> bool:
        amp_ok = np.all((self.amplitudes >= -tol)
                        & (self.amplitudes <= self.alpha_max + tol))
        on_grid = np.allclose(self.phases,
                              quantize_phases(self.phases, self.bits), atol=tol)
        return bool(amp_ok and on_grid)

    @classmethod
    def project(cls, raw: np.ndarray, bits: int,
                alpha_max: float) -> "HoloRisConfig":
        amp = np.clip(np.abs(raw), 0.0, alpha_max)
        theta = np.where(np.abs(raw) > 0, np.angle(raw), 0.0)
        return cls(amp, quantize_phases(theta, bits), bits, alpha_max)


@dataclass
class SurfaceSet:
    uav: UavRisConfig
    star: StarRisConfig
    holo: HoloRisConfig

    def copy(self) -> "SurfaceSet":
        return SurfaceSet(
            UavRisConfig(self.uav.phases.copy(), self.uav.bits),
            StarRisConfig(self.star.rho.copy(), self.star.theta_t.copy(),
                          self.star.theta_r.copy(), self.star.bits),
            HoloRisConfig(self.holo.amplitudes.copy(), self.holo.phases.copy(),
                          self.holo.bits, self.holo.alpha_max),
        )

    def feasible(self) -> bool:
        return self.uav.feasible() and self.star.feasible() and self.holo.feasible()


def random_surfaces(m_uav: int, m_star: int, m_hris: int, bits: int,
                    alpha_max: float, rng: np.random.Generator) -> SurfaceSet:
    """Uniform random quantized phases, balanced energy split, full aperture
    amplitude.  Used for initialization and the random-phase baseline."""
    grid = 2 ** bits

    def rand_phases(m: int) -> np.ndarray:
        return rng.integers(0, grid, size=m) * (TWO_PI / grid)

    uav = UavRisConfig(rand_phases(m_uav), bits)
    star = StarRisConfig(np.full(m_star, 1.0 / np.sqrt(2.0)),
                         rand_phases(m_star), rand_phases(m_star), bits)
    holo = HoloRisConfig(np.full(m_hris, alpha_max), rand_phases(m_hris),
                         bits, alpha_max)
    return SurfaceSet(uav, star, holo)


# Surface ablations (used by the subset baselines) are expressed through the
# design's active-surface set in the link composer, since the energy-split
# parameterization cannot represent an "off" element.
