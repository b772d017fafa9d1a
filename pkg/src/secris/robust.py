"""Deterministic reformulation of SINR chance constraints.

A constraint P{Z < 0} <= eps with Z = d^H A d + 2 Re{b^H d} + c quadratic in
a circularly-symmetric Gaussian error d ~ CN(0, C) is replaced by a
deterministic condition on the whitened statistics M = C^1/2 A C^1/2 and
v = C^1/2 b.  Two variants are provided:

* 'paper': single-slack form
      tr(M) + c >= sqrt(2 ln(1/eps)) * max(||M||_F, sqrt(2)||v||)
  using the smallest admissible slack.  Cheap and tight; exact for n = 1
  pure-quadratic blocks in the sense that the boundary approaches the
  analytic chi-square quantile.

* 'bechar': two-slack form with the eigenvalue term
      tr(M) + c >= sqrt(2 ln(1/eps)) * sqrt(||M||_F^2 + 2||v||^2)
                   + ln(1/eps) * max(0, lambda_max(-M))
  a uniformly valid concentration bound (conservative but sound for every
  Hermitian A).

The SINR constraints of this system produce blocks whose negative part is
dominated by the desired-signal rank-one term; Monte-Carlo validation of the
'paper' variant over that population shows no violations (see the block
validator and the acceptance tests), while adversarial generic indefinite
blocks can violate it.  Default stays 'paper' to keep the published
tightness; switch to 'bechar' when soundness must hold per-block without a
structural argument.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkEnsemble
from .link import Design, effective_channel, effective_error_cov, jam_interference

VARIANTS = ("paper", "bechar")


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root; small negative eigenvalues are clipped."""
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


@dataclass
class QuadraticForm:
    """Z(d) = d^H A d + 2 Re{b^H d} + c with A Hermitian."""
    a: np.ndarray
    b: np.ndarray
    c: float

    @property
    def dim(self) -> int:
        return self.b.size

    def evaluate(self, d: np.ndarray) -> np.ndarray:
        """Batched over leading axes of d."""
        quad = np.einsum("...i,ij,...j->...", d.conj(), self.a, d).real
        lin = 2.0 * np.einsum("...i,i->...", d.conj(), self.b).real
        return quad + lin + self.c


@dataclass
class RobustBlock:
    """One deterministic surrogate of a quadratic chance constraint."""
    form: QuadraticForm
    cov: np.ndarray
    eps: float
    variant: str = "paper"
    name: str = ""
    # derived statistics
    trace_term: float = field(init=False)
    tau: float = field(init=False)
    rhs: float = field(init=False)
    eig_term: float = field(init=False)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        root = psd_sqrt(self.cov)
        m = root @ self.form.a @ root
        v = root @ self.form.b
        self.trace_term = float(np.trace(m).real) + self.form.c
        log_term = math.log(1.0 / self.eps)
        fro = float(np.linalg.norm(m, "fro"))
        vnorm = float(np.linalg.norm(v))
        if self.variant == "paper":
            self.tau = max(fro, math.sqrt(2.0) * vnorm)
            self.eig_term = 0.0
            self.rhs = math.sqrt(2.0 * log_term) * self.tau
        else:
            self.tau = math.sqrt(fro ** 2 + 2.0 * vnorm ** 2)
            lam = float(np.linalg.eigvalsh(-m)[-1])
            self.eig_term = log_term * max(lam, 0.0)
            self.rhs = math.sqrt(2.0 * log_term) * self.tau + self.eig_term

    @property
    def slack(self) -> float:
        """Absolute constraint slack; feasible iff >= 0."""
        return self.trace_term - self.rhs

    @property
    def feasible(self) -> bool:
        return self.slack >= 0.0

    @property
    def scale(self) -> float:
        return abs(self.trace_term) + self.rhs + 1e-12

    @property
    def margin(self) -> float:
        """Slack normalized by the block's own magnitude; dimensionless."""
        return self.slack / self.scale


def bernstein_block(form: QuadraticForm, cov: np.ndarray, eps: float,
                    variant: str = "paper", name: str = "") -> RobustBlock:
    return RobustBlock(form=form, cov=cov, eps=eps, variant=variant, name=name)


def validate_block_mc(form: QuadraticForm, cov: np.ndarray,
                      n_trials: int, rng: np.random.Generator,
                      chunk: int = 200_000) -> float:
    """Empirical P{Z < 0} under d ~ CN(0, cov).  With the Hermitian root
    Ch, d = z Ch^T (z rows are unit CN) gives E[d d^H] = Ch Ch^H = cov; the
    conjugate-transposed product would sample the conjugate covariance."""
    root = psd_sqrt(cov)
    n = form.dim
    hits = 0
    done = 0
    while done < n_trials:
        m = min(chunk, n_trials - done)
        z = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
        z *= math.sqrt(0.5)
        d = z @ root.T
        hits += int(np.count_nonzero(form.evaluate(d) < 0.0))
        done += m
    return hits / n_trials


# --------------------------------------------------------------------------
# SINR constraint builders

def stream_coeffs(n_streams: int, k: int, gamma: float, kappa_t: float,
                  kappa_r: float, wiretap: bool = False
                  ) -> tuple[np.ndarray, float]:
    """Per-stream weights of the SINR quadratic matrix
    A = sum_i sig_i w_i w_i^H + d_coef * diag(per-antenna tx power):
    the desired stream carries 1 - gamma kappa_r, interferers
    -gamma (1 + kappa_r), transmit distortion -gamma kappa_t on the
    diagonal.  Wiretap constraints flip every sign."""
    sig = np.full(n_streams, -gamma * (1.0 + kappa_r))
    sig[k] = 1.0 - gamma * kappa_r
    d_coef = -gamma * kappa_t
    if wiretap:
        return -sig, -d_coef
    return sig, d_coef


def sinr_matrix(w_all: np.ndarray, sig: np.ndarray,
                d_coef: float) -> np.ndarray:
    a = (w_all * sig) @ w_all.conj().T
    return a + d_coef * np.diag(np.sum(np.abs(w_all) ** 2, axis=1))


def sinr_quadratic(w_all: np.ndarray, k: int, h_hat: np.ndarray,
                   gamma: float, sigma_eff: float, kappa_t: float,
                   kappa_r: float, wiretap: bool = False) -> QuadraticForm:
    """Quadratic form of 'stream k SINR >= gamma' (legitimate) or
    'stream k SINR <= gamma' (wiretap) at a receiver with channel estimate
    h_hat and total channel-independent noise sigma_eff.

    Legitimate:  Z = h^H A h - gamma sigma_eff,
        A = w_k w_k^H - gamma [sum_{i != k} w_i w_i^H + kappa_t D
                               + kappa_r sum_i w_i w_i^H]
    Wiretap flips the sign of A and of the constant."""
    sig, d_coef = stream_coeffs(w_all.shape[1], k, gamma, kappa_t, kappa_r,
                                wiretap)
    a = sinr_matrix(w_all, sig, d_coef)
    c0 = gamma * sigma_eff if wiretap else -gamma * sigma_eff
    b = a @ h_hat
    c = float(np.real(h_hat.conj() @ a @ h_hat)) + c0
    return QuadraticForm(a=a, b=b, c=c)


@dataclass
class Thresholds:
    """Per-user SINR targets after splitting the rate requirements.
    gamma_qos applies at outage budget delta; the secrecy pair
    (gamma_legit, gamma_eve) at eps/2 each, with the wiretap budget split
    further across eavesdroppers."""
    gamma_qos: float
    gamma_legit: np.ndarray   # (K,)
    gamma_eve: np.ndarray     # (K,) aggregate colluding allowance
    eps_qos: float
    eps_legit: float
    eps_eve: float            # per-eavesdropper budget


def secrecy_pair(r_sec_min: float, gamma_eve: float) -> float:
    """Legitimate SINR needed so that log2((1+g_l)/(1+g_e)) >= r_sec_min."""
    return (2.0 ** r_sec_min) * (1.0 + gamma_eve) - 1.0


@dataclass
class BlockSet:
    """All robust blocks of one design at one threshold set."""
    qos: list              # K legitimate-rate blocks
    legit: list            # K secrecy legitimate-side blocks
    eve: list              # K lists of per-eavesdropper wiretap blocks

    def all_blocks(self) -> list:
        out = list(self.qos) + list(self.legit)
        for group in self.eve:
            out.extend(group)
        return out

    @property
    def feasible(self) -> bool:
        return all(b.feasible for b in self.all_blocks())

    @property
    def worst_margin(self) -> float:
        return min(b.margin for b in self.all_blocks())


def _user_context(ens: LinkEnsemble, design: Design, k: int,
                  eve_active: np.ndarray, p_jam: float):
    """Normalized block inputs for user k: channels in units of the noise
    amplitude, so the nominal noise power is 1 and the conic data is well
    conditioned.  Margins and violation probabilities are invariant."""
    nrm = 1.0 / math.sqrt(ens.noise_power)
    h_hat = nrm * effective_channel(ens, design, ("user", k), "estimate")
    cov = nrm ** 2 * effective_error_cov(ens, design, ("user", k))
    jam = jam_interference(ens, eve_active, k, p_jam, nominal=True)
    return h_hat, cov, 1.0 + float(jam) / ens.noise_power


def build_blocks(ens: LinkEnsemble, design: Design, thr: Thresholds, *,
                 kappa_t: float, kappa_r: float, p_jam: float,
                 eve_active: np.ndarray, variant: str = "paper") -> BlockSet:
    """Instantiate every chance-constraint surrogate at the current design."""
    w = design.beamformers
    n_users = design.n_users
    n_eves = int(np.size(eve_active))
    nrm = 1.0 / math.sqrt(ens.noise_power)
    qos, legit, eve_groups = [], [], []
    eve_ctx = [(nrm * effective_channel(ens, design, ("eve", e), "estimate"),
                nrm ** 2 * effective_error_cov(ens, design, ("eve", e)))
               for e in range(n_eves)]
    for k in range(n_users):
        h_hat, cov, sigma_k = _user_context(ens, design, k, eve_active,
                                            p_jam)
        form = sinr_quadratic(w, k, h_hat, thr.gamma_qos, sigma_k,
                              kappa_t, kappa_r)
        qos.append(bernstein_block(form, cov, thr.eps_qos, variant,
                                   name=f"qos[{k}]"))
        form = sinr_quadratic(w, k, h_hat, float(thr.gamma_legit[k]),
                              sigma_k, kappa_t, kappa_r)
        legit.append(bernstein_block(form, cov, thr.eps_legit, variant,
                                     name=f"sec-legit[{k}]"))
        share = float(thr.gamma_eve[k]) / max(n_eves, 1)
        group = []
        for e, (h_e, cov_e) in enumerate(eve_ctx):
            form = sinr_quadratic(w, k, h_e, share, 1.0,
                                  kappa_t, kappa_r, wiretap=True)
            group.append(bernstein_block(form, cov_e, thr.eps_eve, variant,
                                         name=f"sec-eve[{k},{e}]"))
        eve_groups.append(group)
    return BlockSet(qos=qos, legit=legit, eve=eve_groups)


def choose_thresholds(ens: LinkEnsemble, design: Design, *,
                      r_qos: float, r_sec_min: float, eps_sec: float,
                      delta_qos: float, kappa_t: float, kappa_r: float,
                      p_jam: float, eve_active: np.ndarray,
                      variant: str = "paper",
                      rel_tol: float = 1e-4) -> Thresholds:
    """Fix the SINR targets for the robust problem.  QoS maps directly
    through gamma = 2^R - 1.  The secrecy rate is split into a legitimate
    floor and a colluding-wiretap ceiling linked by the rate identity; the
    wiretap allowance is pushed as high as the legitimate-side block allows
    (monotone, so bisection) to maximize slack against the eavesdroppers."""
    n_users = design.n_users
    n_eves = int(np.size(eve_active))
    nrm = 1.0 / math.sqrt(ens.noise_power)
    gamma_qos = 2.0 ** r_qos - 1.0
    if kappa_r > 0 and gamma_qos >= 1.0 / kappa_r:
        raise ValueError("QoS SINR target exceeds the receive-distortion "
                         f"ceiling 1/kappa_r = {1.0 / kappa_r:.1f}")
    eps_legit = eps_sec / 2.0
    eps_eve = eps_sec / 2.0 / max(n_eves, 1)
    w = design.beamformers
    eve_hats = [nrm * effective_channel(ens, design, ("eve", e), "estimate")
                for e in range(n_eves)]

    gamma_legit = np.empty(n_users)
    gamma_eve = np.empty(n_users)
    for k in range(n_users):
        h_hat, cov, sigma_k = _user_context(ens, design, k, eve_active,
                                            p_jam)

        def legit_ok(g_eve: float) -> bool:
            g_l = secrecy_pair(r_sec_min, g_eve)
            if kappa_r > 0 and g_l >= 1.0 / kappa_r:
                return False
            form = sinr_quadratic(w, k, h_hat, g_l, sigma_k,
                                  kappa_t, kappa_r)
            return bernstein_block(form, cov, eps_legit, variant).feasible

        # nominal colluding SINR anchors the bracket
        nominal = 0.0
        for h_e in eve_hats:
            p = np.abs(h_e.conj() @ w) ** 2
            dist = (kappa_t * float(np.abs(h_e) ** 2
                                    @ np.sum(np.abs(w) ** 2, axis=1))
                    + kappa_r * float(p.sum()))
            nominal += float(p[k]) / (float(p.sum() - p[k]) + dist + 1.0)
        hi = max(2.0 * nominal, 1e-3)
        if not legit_ok(0.0):
            gamma_eve[k] = max(nominal, 1e-6)
        else:
            grow = 0
            while legit_ok(hi) and grow < 40:
                hi *= 2.0
                grow += 1
            lo = 0.0
            while hi - lo > rel_tol * max(hi, 1.0):
                mid = 0.5 * (lo + hi)
                if legit_ok(mid):
                    lo = mid
                else:
                    hi = mid
            gamma_eve[k] = lo
        gamma_legit[k] = secrecy_pair(r_sec_min, float(gamma_eve[k]))
    return Thresholds(gamma_qos=gamma_qos, gamma_legit=gamma_legit,
                      gamma_eve=gamma_eve, eps_qos=delta_qos,
                      eps_legit=eps_legit, eps_eve=eps_eve)
