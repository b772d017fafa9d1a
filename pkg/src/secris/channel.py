"""Large- and small-scale channel generation.

Pathloss and LoS probability follow 3GPP TR 38.901 Tables 7.4.1-1 / 7.4.2-1
(UMi street canyon and InH office).  Building entry loss follows the
ITU-R P.2109 lognormal-mixture model.  Small-scale fading is Rician with a
deterministic array-steering mean on LoS links and Rayleigh otherwise.
Channel-estimation error is additive Gaussian per link with isotropic
covariance scaled to a relative error power.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _norm

from .config import RunConfig
from .scenario import Scenario, sample_stationary_blockage

SPEED_OF_LIGHT = 299_792_458.0

PATHLOSS_MODELS = ("umi-los", "umi-nlos", "inh-los", "inh-nlos")

# TR 38.901 default antenna heights used inside the pathloss formulas; the
# scenario's actual node heights enter only through the 3D distance.
_UMI_H_BS = 10.0
_UMI_H_UT = 1.5


def _umi_los(d3d: float, fc: float, d2d: float | None) -> float:
    d3d = max(d3d, 1.0)
    dbp = 4.0 * (_UMI_H_BS - 1.0) * (_UMI_H_UT - 1.0) * fc * 1e9 / SPEED_OF_LIGHT
    d_ref = d2d if d2d is not None else d3d
    if d_ref <= dbp:
        return 32.4 + 21.0 * math.log10(d3d) + 20.0 * math.log10(fc)
    return (32.4 + 40.0 * math.log10(d3d) + 20.0 * math.log10(fc)
            - 9.5 * math.log10(dbp ** 2 + (_UMI_H_BS - _UMI_H_UT) ** 2))


def pathloss_db(model: str, d3d_m: float, fc_ghz: float,
                d2d_m: float | None = None) -> float:
    """Pathloss in dB per TR 38.901 Table 7.4.1-1.  Distances below 1 m are
    clamped; NLoS variants take the max with their LoS counterpart, so the
    NLoS >= LoS ordering holds at every distance."""
    if model not in PATHLOSS_MODELS:
        raise ValueError(f"unknown pathloss model {model!r}")
    if fc_ghz <= 0:
        raise ValueError("fc_ghz must be positive")
    d3d = max(float(d3d_m), 1.0)
    fc = float(fc_ghz)
    if model == "umi-los":
        return _umi_los(d3d, fc, d2d_m)
    if model == "umi-nlos":
        nlos = 22.4 + 35.3 * math.log10(d3d) + 21.3 * math.log10(fc)
        return max(_umi_los(d3d, fc, d2d_m), nlos)
    los = 32.4 + 17.3 * math.log10(d3d) + 20.0 * math.log10(fc)
    if model == "inh-los":
        return los
    nlos = 17.3 + 38.3 * math.log10(d3d) + 24.9 * math.log10(fc)
    return max(los, nlos)


def los_probability(env: str, d2d_m: float) -> float:
    """LoS probability per TR 38.901 Table 7.4.2-1 (UMi / InH office)."""
    d = max(float(d2d_m), 0.0)
    if env == "umi":
        if d <= 18.0:
            return 1.0
        return 18.0 / d + math.exp(-d / 36.0) * (1.0 - 18.0 / d)
    if env == "inh":
        if d <= 1.2:
            return 1.0
        if d < 6.5:
            return math.exp(-(d - 1.2) / 4.7)
        return 0.32 * math.exp(-(d - 6.5) / 32.6)
    raise ValueError(f"unknown environment {env!r}")


# --------------------------------------------------------------------------
# ITU-R P.2109 building entry loss

# coefficients (r, s, t, u, v, w, x, y, z) per building class
_P2109_COEFFS = {
    "traditional":        (12.64, 3.72, 0.96, 9.6, 2.0, 9.1, -3.0, 4.5, -2.0),
    "thermally-efficient": (28.19, -3.00, 8.48, 13.5, 3.8, 27.8, -2.9, 9.4, -2.1),
}
_P2109_C = -3.0


def o2i_loss_db(building_class: str, fc_ghz: float, prob: float,
                elevation_deg: float = 0.0) -> float:
    """Building entry loss not exceeded with probability `prob`, per the
    ITU-R P.2109 mixture model.  Negative tail values are clamped to 0 dB
    (penetration never amplifies)."""
    if building_class not in _P2109_COEFFS:
        raise ValueError(f"unknown building class {building_class!r}")
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must lie strictly in (0, 1)")
    r, s, t, u, v, w, x, y, z = _P2109_COEFFS[building_class]
    lf = math.log10(fc_ghz)
    l_h = r + s * lf + t * lf * lf
    l_e = 0.212 * abs(elevation_deg)
    mu1 = l_h + l_e
    mu2 = w + x * lf
    sig1 = u + v * lf
    sig2 = y + z * lf
    q = _norm.ppf(prob)
    a_term = mu1 + sig1 * q
    b_term = mu2 + sig2 * q
    loss = 10.0 * math.log10(10 ** (0.1 * a_term) + 10 ** (0.1 * b_term)
                             + 10 ** (0.1 * _P2109_C))
    return max(loss, 0.0)


def o2i_median_db(building_class: str, fc_ghz: float) -> float:
    return o2i_loss_db(building_class, fc_ghz, 0.5)


def sample_o2i_db(building_class: str, fc_ghz: float,
                  rng: np.random.Generator) -> float:
    return o2i_loss_db(building_class, fc_ghz, float(rng.uniform(1e-9, 1 - 1e-9)))


# --------------------------------------------------------------------------
# shadowing and small-scale fading

def shadowing_db(sigma_db: float, rng: np.random.Generator,
                 size: tuple[int, ...] | None = None) -> float | np.ndarray:
    out = rng.normal(0.0, sigma_db, size=size)
    return float(out) if size is None else out


def steering_phases(n: int, angle_rad: float) -> np.ndarray:
    """Unit-modulus half-wavelength ULA steering vector."""
    m = np.arange(n)
    return np.exp(1j * np.pi * m * math.sin(angle_rad))


def sample_small_scale(rician_k_lin: float, shape: tuple[int, ...],
                       rng: np.random.Generator,
                       mean_phases: np.ndarray | None = None) -> np.ndarray:
    """Unit-average-power fading. LoS: Rician with deterministic unit-modulus
    mean (array-steering phases); rician_k_lin = 0 degenerates to Rayleigh."""
    if rician_k_lin < 0:
        raise ValueError("Rician K must be non-negative")
    scatter = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        / math.sqrt(2.0)
    if rician_k_lin == 0:
        return scatter
    if mean_phases is None:
        mean = np.ones(shape, complex)
    else:
        mean = np.broadcast_to(mean_phases, shape)
    k = rician_k_lin
    return math.sqrt(k / (k + 1.0)) * mean + math.sqrt(1.0 / (k + 1.0)) * scatter


def build_error_covariance(n: int, error_power: float) -> np.ndarray:
    """Isotropic estimation-error covariance with the given total power."""
    if error_power < 0:
        raise ValueError("error_power must be non-negative")
    return (error_power / n) * np.eye(n, dtype=complex)


# --------------------------------------------------------------------------
# link ensemble

LinkKey = tuple   # (src, dst, index) with index int or (eve, user) pair


@dataclass
class LinkChannel:
    """One realized link: true gain, estimate, and the error model behind
    their difference.  `gain_db` already includes pathloss, shadowing, O2I,
    and blockage depth; small-scale fading is folded into the arrays."""
    key: LinkKey
    true: np.ndarray            # vector (n,) or matrix (rows, cols)
    estimate: np.ndarray
    error_power: float          # total error power; 0 for known links
    gain_db: float
    los: bool
    blocked: bool
    d3d: float

    @property
    def error_cov(self) -> np.ndarray:
        return build_error_covariance(self.true.size, self.error_power)


@dataclass
class LinkEnsemble:
    links: dict[LinkKey, LinkChannel]
    n_tx: int
    noise_power: float

    def __getitem__(self, key: LinkKey) -> LinkChannel:
        return self.links[key]

    def __contains__(self, key: LinkKey) -> bool:
        return key in self.links

    def get(self, key: LinkKey) -> LinkChannel | None:
        return self.links.get(key)


def _d3d(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b))


def _d2d(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a[:2] - b[:2]))


def _azimuth(src: np.ndarray, dst: np.ndarray) -> float:
    d = dst - src
    return math.atan2(d[1], d[0])


@dataclass
class _LinkSpec:
    key: LinkKey
    src_pos: np.ndarray
    dst_pos: np.ndarray
    env: str              # 'umi' or 'inh'
    shape: tuple[int, ...]
    o2i: bool             # path enters the building facade
    infrastructure: bool  # static mounted link: LoS, unblocked, error-free
    jamming: bool = False


def _link_specs(scn: Scenario, cfg: RunConfig) -> list[_LinkSpec]:
    g = cfg.surfaces
    n_tx = cfg.radio.n_tx
    nodes = scn.nodes
    star = np.asarray(cfg.geometry.star_pos)
    hris = np.asarray(cfg.geometry.hris_pos)
    specs: list[_LinkSpec] = []

    specs.append(_LinkSpec(("bs", "uav", 0), nodes.bs, nodes.uav, "umi",
                           (g.m_uav, n_tx), False, True))
    specs.append(_LinkSpec(("bs", "star", 0), nodes.bs, star, "umi",
                           (g.m_star, n_tx), False, True))
    specs.append(_LinkSpec(("star", "hris", 0), star, hris, "inh",
                           (g.m_hris, g.m_star), False, True))

    for k, pos in enumerate(nodes.users):
        indoor = bool(nodes.indoor_mask[k])
        specs.append(_LinkSpec(("bs", "user", k), nodes.bs, pos, "umi",
                               (n_tx,), indoor, False))
        specs.append(_LinkSpec(("uav", "user", k), nodes.uav, pos, "umi",
                               (g.m_uav,), indoor, False))
        # STAR serves indoor users through transmission, outdoor by reflection;
        # the surface replaces the facade so no extra entry loss either way.
        specs.append(_LinkSpec(("star", "user", k), star, pos,
                               "inh" if indoor else "umi", (g.m_star,),
                               False, False))
        if indoor:
            specs.append(_LinkSpec(("hris", "user", k), hris, pos, "inh",
                                   (g.m_hris,), False, False))

    for e, pos in enumerate(nodes.eves):
        indoor = bool(scn.indoor_region.contains(pos))
        specs.append(_LinkSpec(("bs", "eve", e), nodes.bs, pos, "umi",
                               (n_tx,), indoor, False))
        specs.append(_LinkSpec(("uav", "eve", e), nodes.uav, pos, "umi",
                               (g.m_uav,), indoor, False))
        specs.append(_LinkSpec(("star", "eve", e), star, pos,
                               "inh" if indoor else "umi", (g.m_star,),
                               False, False))
        if indoor:
            specs.append(_LinkSpec(("hris", "eve", e), hris, pos, "inh",
                                   (g.m_hris,), False, False))

    for e in np.flatnonzero(nodes.eve_active):
        for k, pos in enumerate(nodes.users):
            o2i = bool(nodes.indoor_mask[k]) and not bool(
                scn.indoor_region.contains(nodes.eves[e]))
            specs.append(_LinkSpec(("eve", "user", (int(e), k)),
                                   nodes.eves[e], pos, "umi", (1,),
                                   o2i, False, jamming=True))
    return specs


def realize_ensemble(scn: Scenario, cfg: RunConfig,
                     rng: np.random.Generator,
                     blockage: dict[LinkKey, bool] | None = None
                     ) -> LinkEnsemble:
    """Draw one full channel realization: every link needed to compose the
    effective channels plus the jamming links.  Deterministic given the
    generator state; links are created in a fixed canonical order."""
    ch = cfg.channel
    links: dict[LinkKey, LinkChannel] = {}
    for spec in _link_specs(scn, cfg):
        d3 = _d3d(spec.src_pos, spec.dst_pos)
        d2 = _d2d(spec.src_pos, spec.dst_pos)
        if spec.infrastructure:
            los = True
        else:
            los = bool(rng.uniform() < los_probability(spec.env, d2))
        model = f"{spec.env}-{'los' if los else 'nlos'}"
        pl = pathloss_db(model, d3, ch.fc_ghz, d2d_m=d2)
        sigma = ch.shadow_sigma_los_db if los else ch.shadow_sigma_nlos_db
        pl += float(rng.normal(0.0, sigma))
        if spec.o2i:
            pl += sample_o2i_db(ch.o2i_class, ch.fc_ghz, rng)

        if spec.infrastructure or blockage is None:
            blocked = False if spec.infrastructure else bool(
                sample_stationary_blockage(1, scn.blockage_chain, rng)[0])
        else:
            blocked = bool(blockage.get(spec.key, False))
        if blocked:
            pl += scn.blockage_chain.depth_db

        k_lin = ch.rician_k_lin if los else 0.0
        phases = None
        if los and k_lin > 0:
            az = _azimuth(spec.src_pos, spec.dst_pos)
            if len(spec.shape) == 1:
                phases = steering_phases(spec.shape[0], az)
            else:
                rx = steering_phases(spec.shape[0], az)
                tx = steering_phases(spec.shape[1], -az)
                phases = np.outer(rx, tx.conj())
        g = sample_small_scale(k_lin, spec.shape, rng, phases)
        amp = 10.0 ** (-pl / 20.0)
        true = amp * g

        if spec.infrastructure:
            estimate, err = true.copy(), 0.0
        else:
            err = ch.rel_error * float(np.vdot(true, true).real)
            noise = (rng.standard_normal(spec.shape)
                     + 1j * rng.standard_normal(spec.shape)) / math.sqrt(2.0)
            delta = math.sqrt(err / true.size) * noise
            estimate = true - delta
        links[spec.key] = LinkChannel(spec.key, true, estimate, err,
                                      -pl, los, blocked, d3)
    return LinkEnsemble(links, cfg.radio.n_tx, ch.noise_power_w)


def resample_csi_errors(ens: LinkEnsemble, rng: np.random.Generator,
                        n: int) -> dict[LinkKey, np.ndarray]:
    """Draw n fresh true-channel realizations around each link's estimate:
    h = h_hat + delta, delta ~ CN(0, err_power/size * I).  Returns arrays of
    shape (n, *link.shape).  Error-free links (the infrastructure matrices)
    are omitted so downstream composition keeps them unbatched."""
    out: dict[LinkKey, np.ndarray] = {}
    for key, link in ens.links.items():
        if link.error_power <= 0:
            continue
        scale = math.sqrt(link.error_power / link.estimate.size / 2.0)
        noise = scale * (rng.standard_normal((n, *link.estimate.shape))
                         + 1j * rng.standard_normal((n, *link.estimate.shape)))
        out[key] = link.estimate + noise
    return out


def move_uav(ens: LinkEnsemble, scn: Scenario, cfg: RunConfig,
             p_new: np.ndarray) -> tuple[LinkEnsemble, Scenario]:
    """Reposition the aerial platform, rescaling the affected link gains by
    the exact large-scale pathloss ratio while keeping the realized LoS
    states, shadowing, and small-scale draws frozen.  Estimation error
    powers track the rescaled gains (relative error model)."""
    p_new = np.asarray(p_new, dtype=float)
    fc = cfg.channel.fc_ghz
    nodes = scn.nodes
    links = dict(ens.links)
    for key, link in ens.links.items():
        src, dst, idx = key
        if src == "bs" and dst == "uav":
            a, b_old, b_new = nodes.bs, nodes.uav, p_new
        elif src == "uav":
            tgt = nodes.users[idx] if dst == "user" else nodes.eves[idx]
            a, b_old, b_new = tgt, nodes.uav, p_new
        else:
            continue
        model = f"umi-{'los' if link.los else 'nlos'}"
        pl_old = pathloss_db(model, _d3d(a, b_old), fc, _d2d(a, b_old))
        pl_new = pathloss_db(model, _d3d(a, b_new), fc, _d2d(a, b_new))
        ratio = 10.0 ** (-(pl_new - pl_old) / 20.0)
        links[key] = LinkChannel(
            key, link.true * ratio, link.estimate * ratio,
            link.error_power * ratio ** 2, link.gain_db - (pl_new - pl_old),
            link.los, link.blocked, _d3d(a, b_new))
    return (LinkEnsemble(links, ens.n_tx, ens.noise_power),
            scn.with_uav(p_new))

