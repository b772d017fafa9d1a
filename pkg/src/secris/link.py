"""Effective-channel composition and physical-layer metrics.

The downlink from the multi-antenna transmitter to each single-antenna
receiver superimposes up to five paths: the direct link, the aerial
reflecting-surface cascade, the facade surface (transmission side for
indoor receivers, reflection side for outdoor), and a second-order cascade
through the facade surface into the indoor holographic aperture.  Paths
that are geometrically unavailable for a receiver contribute zero.

SINRs include transmit/receive hardware-distortion noise parameterized by
EVM-squared levels and, for legitimate users, jamming interference from
active eavesdroppers.  Eavesdroppers collude by SINR addition.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import LinkEnsemble, LinkKey
from .surfaces import SurfaceSet

ALL_SURFACES = frozenset({"uav", "star", "holo"})


@dataclass
class Design:
    """One complete transmit design: beamformers (n_tx, K), the three
    surface configurations, and the aerial platform position."""
    beamformers: np.ndarray
    surfaces: SurfaceSet
    uav_pos: np.ndarray
    active: frozenset = ALL_SURFACES

    @property
    def n_users(self) -> int:
        return self.beamformers.shape[1]

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.beamformers) ** 2))

    def copy(self) -> "Design":
        return Design(self.beamformers.copy(), self.surfaces.copy(),
                      self.uav_pos.copy(), self.active)


def _cascade(vec: np.ndarray, coeff: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """(surface->rx vector) through the surface into the BS->surface matrix:
    returns mat^H diag(coeff)^H vec, batched over leading axes of vec."""
    return (vec * coeff.conj()) @ mat.conj()


def effective_channel(ens: LinkEnsemble, design: Design, rx: LinkKey,
                      which: str = "estimate",
                      link_override: dict[LinkKey, np.ndarray] | None = None
                      ) -> np.ndarray:
    """Compose the effective n_tx channel of one receiver.  `rx` is
    ('user', k) or ('eve', e).  `which` selects the true or estimated link
    realizations; `link_override` substitutes per-link arrays (possibly with
    a leading batch axis) for Monte-Carlo evaluation."""
    kind, idx = rx

    def arr(key: LinkKey) -> np.ndarray:
        if link_override is not None and key in link_override:
            return link_override[key]
        link = ens[key]
        return link.estimate if which == "estimate" else link.true

    h = arr(("bs", kind, idx)).copy()
    if "uav" in design.active:
        g_uav = arr(("bs", "uav", 0))
        h = h + _cascade(arr(("uav", kind, idx)),
                         design.surfaces.uav.coefficients(), g_uav)
    if "star" in design.active:
        t_coef, r_coef = design.surfaces.star.coefficients()
        g_star = arr(("bs", "star", 0))
        star_key = ("star", kind, idx)
        # indoor receivers see the transmission side, outdoor the reflection
        indoor = ("hris", kind, idx) in ens
        h = h + _cascade(arr(star_key), t_coef if indoor else r_coef, g_star)
        if indoor and "holo" in design.active:
            inner = _cascade(arr(("hris", kind, idx)),
                             design.surfaces.holo.coefficients(),
                             arr(("star", "hris", 0)))
            h = h + _cascade(inner, t_coef, g_star)
    return h


def effective_error_cov(ens: LinkEnsemble, design: Design,
                        rx: LinkKey) -> np.ndarray:
    """Covariance of the effective-channel estimation error.  Receiver-side
    link errors are isotropic and propagate linearly through the (known)
    infrastructure matrices, so the result is exact:
    C = sum over paths of (err_power / M) * B B^H."""
    kind, idx = rx
    n_tx = ens.n_tx
    cov = np.zeros((n_tx, n_tx), complex)

    direct = ens[("bs", kind, idx)]
    cov += build_iso(direct.error_power, n_tx)

    if "uav" in design.active:
        g_uav = ens[("bs", "uav", 0)].estimate
        link = ens[("uav", kind, idx)]
        b = g_uav.conj().T * design.surfaces.uav.coefficients().conj()
        cov += (link.error_power / link.true.size) * (b @ b.conj().T)
    if "star" in design.active:
        t_coef, r_coef = design.surfaces.star.coefficients()
        g_star = ens[("bs", "star", 0)].estimate
        indoor = ("hris", kind, idx) in ens
        coef = t_coef if indoor else r_coef
        link = ens[("star", kind, idx)]
        b = g_star.conj().T * coef.conj()
        cov += (link.error_power / link.true.size) * (b @ b.conj().T)
        if indoor and "holo" in design.active:
            g_sh = ens[("star", "hris", 0)].estimate
            hlink = ens[("hris", kind, idx)]
            b_t = g_star.conj().T * t_coef.conj()
            b_h = (b_t @ g_sh.conj().T) * design.surfaces.holo.coefficients().conj()
            cov += (hlink.error_power / hlink.true.size) * (b_h @ b_h.conj().T)
    return cov


def build_iso(error_power: float, n: int) -> np.ndarray:
    return (error_power / n) * np.eye(n, dtype=complex)


# --------------------------------------------------------------------------
# SINR and rate metrics

def distortion_power(h: np.ndarray, w_all: np.ndarray,
                     kappa_t: float, kappa_r: float) -> np.ndarray:
    """EVM-induced distortion-noise power at a receiver with channel h
    (batched over leading axes): transmitter distortion passes through the
    channel element-wise, receiver distortion scales with received signal
    power."""
    per_antenna_tx = np.sum(np.abs(w_all) ** 2, axis=1)          # (n_tx,)
    received = np.abs(h.conj() @ w_all) ** 2                      # (..., K)
    dist_t = kappa_t * (np.abs(h) ** 2 @ per_antenna_tx)
    dist_r = kappa_r * received.sum(axis=-1)
    return dist_t + dist_r


def sinr_legitimate(h: np.ndarray, w_all: np.ndarray, k: int,
                    noise_power: float, kappa_t: float, kappa_r: float,
                    jam_power: np.ndarray | float = 0.0) -> np.ndarray:
    """SINR of user k through channel h (batched over leading axes)."""
    powers = np.abs(h.conj() @ w_all) ** 2                        # (..., K)
    desired = powers[..., k]
    interference = powers.sum(axis=-1) - desired
    dist = distortion_power(h, w_all, kappa_t, kappa_r)
    return desired / (interference + dist + noise_power + jam_power)


def sinr_eavesdropper(h_e: np.ndarray, w_all: np.ndarray, k: int,
                      noise_power: float, kappa_t: float,
                      kappa_r: float) -> np.ndarray:
    """Wiretap SINR of one eavesdropper on user k's stream."""
    powers = np.abs(h_e.conj() @ w_all) ** 2
    desired = powers[..., k]
    interference = powers.sum(axis=-1) - desired
    dist = distortion_power(h_e, w_all, kappa_t, kappa_r)
    return desired / (interference + dist + noise_power)


def colluding_sinr(h_eves: list[np.ndarray], w_all: np.ndarray, k: int,
                   noise_power: float, kappa_t: float,
                   kappa_r: float) -> np.ndarray:
    """Aggregate wiretap SINR under full collusion: per-eve SINRs add."""
    if not h_eves:
        return np.zeros(np.shape(w_all[..., 0, 0]) or ())
    total = sum(sinr_eavesdropper(h, w_all, k, noise_power, kappa_t, kappa_r)
                for h in h_eves)
    return np.asarray(total)


def secrecy_rate(sinr_user: np.ndarray, sinr_eve_sum: np.ndarray) -> np.ndarray:
    """[log2(1+SINR_user) - log2(1+SINR_eve)]^+"""
    gap = np.log2(1.0 + sinr_user) - np.log2(1.0 + sinr_eve_sum)
    return np.maximum(gap, 0.0)


@dataclass
class LinkMetrics:
    sinr: np.ndarray          # (K,) legitimate SINRs
    eve_sinr: np.ndarray      # (K,) colluding wiretap SINR per stream
    rate: np.ndarray          # (K,)
    sec_rate: np.ndarray      # (K,)
    qos_violated: np.ndarray  # (K,) bool
    sec_violated: np.ndarray  # (K,) bool

    @property
    def outage(self) -> np.ndarray:
        return self.qos_violated | self.sec_violated


def jam_interference(ens: LinkEnsemble, eve_active: np.ndarray, k: int,
                     p_jam: float, which: str = "true",
                     link_override: dict[LinkKey, np.ndarray] | None = None,
                     nominal: bool = False) -> np.ndarray | float:
    """Jamming power received by user k from all active eavesdroppers.
    With nominal=True, returns the mean power under the error model
    (|h_hat|^2 + error power), used by the robust constraint builder."""
    total: np.ndarray | float = 0.0
    for e in np.flatnonzero(eve_active):
        key = ("eve", "user", (int(e), k))
        if key not in ens:
            continue
        link = ens[key]
        if nominal:
            total = total + p_jam * (float(np.vdot(link.estimate,
                                                   link.estimate).real)
                                     + link.error_power)
            continue
        if link_override is not None and key in link_override:
            g = link_override[key]
        else:
            g = link.estimate if which == "estimate" else link.true
        total = total + p_jam * np.abs(g[..., 0]) ** 2
    return total


def evaluate_links(ens: LinkEnsemble, design: Design, *,
                   r_qos: float, r_sec_min: float,
                   kappa_t: float, kappa_r: float, p_jam: float,
                   eve_active: np.ndarray, indoor_mask: np.ndarray,
                   which: str = "true",
                   link_override: dict[LinkKey, np.ndarray] | None = None
                   ) -> LinkMetrics:
    """Full metric evaluation for one realization (or a batch via
    link_override arrays with a leading trial axis)."""
    w_all = design.beamformers
    n_users = design.n_users
    n_eves = int(np.size(eve_active))
    noise = ens.noise_power

    h_users = [effective_channel(ens, design, ("user", k), which, link_override)
               for k in range(n_users)]
    h_eves = [effective_channel(ens, design, ("eve", e), which, link_override)
              for e in range(n_eves)]

    sinr = []
    eve_sum = []
    for k in range(n_users):
        jam = jam_interference(ens, eve_active, k, p_jam, which, link_override)
        sinr.append(sinr_legitimate(h_users[k], w_all, k, noise,
                                    kappa_t, kappa_r, jam))
        eve_sum.append(colluding_sinr(h_eves, w_all, k, noise,
                                      kappa_t, kappa_r))
    sinr_arr = np.stack(sinr, axis=-1)
    eve_arr = np.stack(eve_sum, axis=-1) if n_eves else np.zeros_like(sinr_arr)
    rate = np.log2(1.0 + sinr_arr)
    sec = secrecy_rate(sinr_arr, eve_arr)
    return LinkMetrics(
        sinr=sinr_arr, eve_sinr=eve_arr, rate=rate, sec_rate=sec,
        qos_violated=rate < r_qos,
        sec_violated=sec < r_sec_min,
    )
