"""Monte-Carlo outage estimation, baseline schemes, experiment sweeps and
result persistence.

Estimation is chunked: each chunk owns an RNG substream keyed by
(master seed, sweep point index, first trial index of the chunk), so the
estimate is byte-identical no matter how many worker threads execute the
chunks.  Aggregation is a fixed-order sum over chunk results.

The 'csi' resample mode redraws only the channel-estimation errors around
the design-time estimates, which is the probability space the chance
constraints are stated on; 'full' also redraws fading, shadowing, blockage
and (in PPP mode) node placement for trend studies.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import (LinkEnsemble, move_uav, realize_ensemble,
                      resample_csi_errors)
from .config import RunConfig, SCHEME_NAMES
from .link import ALL_SURFACES, Design, effective_channel, evaluate_links
from .optimizer import SolveReport, solve
from .robust import bernstein_block, sinr_quadratic, validate_block_mc
from .scenario import Scenario, build_scenario
from .surfaces import TWO_PI, random_surfaces

THREAD_ENV = "SECRIS_THREADS"

CSV_COLUMNS = ("grid", "scheme", "user", "metric", "value", "stderr", "seed")


def _weights(cfg: RunConfig, n_users: int) -> np.ndarray:
    w = cfg.targets.weights
    if w is None:
        return np.full(n_users, 1.0 / n_users)
    w = np.asarray(w, float)
    return w / w.sum()


def _thread_count(threads: int | None) -> int:
    env = os.environ.get(THREAD_ENV)
    if env is not None:
        return max(1, int(env))
    return max(1, threads or 1)


@dataclass
class OutageEstimate:
    """Empirical outage statistics of one design."""
    p_out: np.ndarray       # (K,) per-user outage frequency
    sec_rate: np.ndarray    # (K,) mean secrecy rate over trials
    qos_rate: np.ndarray    # (K,) mean transmission rate over trials
    phi_hat: float          # weighted outage cost sum_k w_k p_out[k]
    n_trials: int
    stderr: np.ndarray      # (K,) binomial stderr of p_out
    sec_violation: np.ndarray   # (K,) secrecy-constraint violation rate
    qos_violation: np.ndarray   # (K,) QoS-constraint violation rate

    @property
    def phi_stderr(self) -> float:
        # weights recovered from the ratio phi/p; exact when p_out > 0
        return float(math.sqrt(np.sum(self._w ** 2 * self.p_out
                                      * (1.0 - self.p_out)) / self.n_trials))

    _w: np.ndarray = dataclasses.field(default=None, repr=False)


def _eval_chunk(design: Design, cfg: RunConfig, ens: LinkEnsemble,
                scn: Scenario, rng: np.random.Generator, m: int,
                resample: str):
    """Violation counts and rate sums over m trials; order-independent."""
    t = cfg.targets
    kw = dict(r_qos=t.r_qos, r_sec_min=t.r_sec_min,
              kappa_t=cfg.radio.kappa_t, kappa_r=cfg.radio.kappa_r,
              p_jam=cfg.radio.p_jam_w)
    if resample == "csi":
        override = resample_csi_errors(ens, rng, m)
        lm = evaluate_links(ens, design, eve_active=scn.nodes.eve_active,
                            indoor_mask=scn.nodes.indoor_mask,
                            which="true", link_override=override, **kw)
        return (lm.qos_violated.sum(0), lm.sec_violated.sum(0),
                lm.outage.sum(0), lm.sec_rate.sum(0), lm.rate.sum(0))
    qos = sec = out = None
    srate = qrate = None
    base = scn.with_uav(design.uav_pos)
    for _ in range(m):
        if cfg.nodes.ppp_mode:
            scn_t = _redraw_placement(cfg, base, rng)
        else:
            scn_t = base
        ens_t = realize_ensemble(scn_t, cfg, rng)
        lm = evaluate_links(ens_t, design, eve_active=scn_t.nodes.eve_active,
                            indoor_mask=scn_t.nodes.indoor_mask,
                            which="true", **kw)
        if qos is None:
            qos = lm.qos_violated.astype(int)
            sec = lm.sec_violated.astype(int)
            out = lm.outage.astype(int)
            srate, qrate = lm.sec_rate.copy(), lm.rate.copy()
        else:
            qos += lm.qos_violated
            sec += lm.sec_violated
            out += lm.outage
            srate += lm.sec_rate
            qrate += lm.rate
    return qos, sec, out, srate, qrate


def _redraw_placement(cfg: RunConfig, scn: Scenario,
                      rng: np.random.Generator) -> Scenario:
    """Fresh uniform node drop with the counts of the reference scenario.
    A PPP conditioned on its count is iid uniform, so this preserves the
    point-process law while keeping stream dimensions fixed."""
    cfg_fix = copy.deepcopy(cfg)
    cfg_fix.nodes.ppp_mode = False
    cfg_fix.nodes.n_users_indoor = int(scn.nodes.indoor_mask.sum())
    cfg_fix.nodes.n_users_outdoor = (scn.nodes.users.shape[0]
                                     - cfg_fix.nodes.n_users_indoor)
    n_act = int(scn.nodes.eve_active.sum())
    cfg_fix.nodes.n_eves_active = n_act
    cfg_fix.nodes.n_eves_idle = len(scn.nodes.eves) - n_act
    redrawn = build_scenario(cfg_fix, rng)
    return redrawn.with_uav(scn.nodes.uav)


def estimate_outage(design: Design, cfg: RunConfig, n_trials: int,
                    seed: int, *, ensemble: LinkEnsemble,
                    scenario: Scenario, resample: str | None = None,
                    point_index: int = 0,
                    threads: int | None = None) -> OutageEstimate:
    """Empirical per-user outage of a fixed design, deterministic in
    (seed, point_index) and independent of the thread count."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    resample = resample or cfg.montecarlo.resample
    chunk = max(1, cfg.montecarlo.chunk)
    starts = list(range(0, n_trials, chunk))

    def job(start: int):
        m = min(chunk, n_trials - start)
        rng = np.random.default_rng([seed, point_index, start])
        return _eval_chunk(design, cfg, ensemble, scenario, rng, m, resample)

    n_workers = _thread_count(threads)
    if n_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]

    n_users = design.n_users
    qos = np.zeros(n_users)
    sec = np.zeros(n_users)
    out = np.zeros(n_users)
    srate = np.zeros(n_users)
    qrate = np.zeros(n_users)
    for q, s, o, sr, qr in parts:          # fixed chunk order
        qos += q
        sec += s
        out += o
        srate += sr
        qrate += qr
    p = out / n_trials
    w = _weights(cfg, n_users)
    return OutageEstimate(
        p_out=p, sec_rate=srate / n_trials, qos_rate=qrate / n_trials,
        phi_hat=float(w @ p), n_trials=n_trials,
        stderr=np.sqrt(p * (1.0 - p) / n_trials),
        sec_violation=sec / n_trials, qos_violation=qos / n_trials,
        _w=w)


# --------------------------------------------------------------------------
# baseline schemes

def _mrt_beams(ens: LinkEnsemble, design: Design, p_max: float) -> np.ndarray:
    n_users = design.n_users
    w = np.empty_like(design.beamformers)
    for k in range(n_users):
        h = effective_channel(ens, design, ("user", k), "estimate")
        hn = np.linalg.norm(h)
        w[:, k] = h / hn if hn > 0 else 0.0
    return w * math.sqrt(p_max / n_users)


def _random_phase(scn: Scenario, ens: LinkEnsemble, cfg: RunConfig,
                  rng: np.random.Generator):
    sc = cfg.surfaces
    surf = random_surfaces(sc.m_uav, sc.m_star, sc.m_hris, sc.phase_bits,
                           sc.alpha_max, rng)
    xmin, xmax, ymin, ymax = cfg.geometry.uav_region
    center = np.array([0.5 * (xmin + xmax), 0.5 * (ymin + ymax),
                       cfg.geometry.uav_height])
    ens_c, scn_c = move_uav(ens, scn, cfg, center)
    design = Design(np.zeros((cfg.radio.n_tx, scn.nodes.users.shape[0]),
                             complex), surf, center, ALL_SURFACES)
    design.beamformers = _mrt_beams(ens_c, design, cfg.radio.p_max_w)
    return design, ens_c, scn_c, 0, None


def _ls_surface_pass(loop) -> None:
    """Coordinate-wise local search over the quantized phase grids of every
    active surface, one full pass; amplitudes and energy splits stay put.
    Plays the role of the convex surface block in the AO+LS baseline."""
    ctx = loop.ctx
    design = loop.design.copy()
    levels = TWO_PI / 2 ** design.surfaces.uav.bits * np.arange(
        2 ** design.surfaces.uav.bits)
    best_phi, _ = ctx.cost(loop.ens, design)
    start_phi = best_phi

    def sweep_phases(arr: np.ndarray) -> None:
        nonlocal best_phi
        for i in range(arr.size):
            keep = arr[i]
            for cand in levels:
                if cand == keep:
                    continue
                arr[i] = cand
                phi, _ = ctx.cost(loop.ens, design)
                if phi < best_phi:
                    best_phi = phi
                    keep = cand
            arr[i] = keep

    if "uav" in design.active:
        sweep_phases(design.surfaces.uav.phases)
    if "star" in design.active:
        sweep_phases(design.surfaces.star.theta_t)
        sweep_phases(design.surfaces.star.theta_r)
    if "holo" in design.active:
        sweep_phases(design.surfaces.holo.phases)
    if best_phi >= start_phi:
        loop.consider("ris", loop.design, "optimal", 0.0)
        return
    prev = loop.design.surfaces
    step = 0.0
    step += float(np.sum(np.abs(design.surfaces.uav.coefficients()
                                - prev.uav.coefficients()) ** 2))
    t_n, r_n = design.surfaces.star.coefficients()
    t_p, r_p = prev.star.coefficients()
    step += float(np.sum(np.abs(t_n - t_p) ** 2)
                  + np.sum(np.abs(r_n - r_p) ** 2))
    step += float(np.sum(np.abs(design.surfaces.holo.coefficients()
                                - prev.holo.coefficients()) ** 2))
    loop.consider("ris", design, "optimal", math.sqrt(step))


def _ao_ls(scn: Scenario, ens: LinkEnsemble, cfg: RunConfig,
           rng: np.random.Generator):
    """Alternating loop with the beamformer and platform blocks of the
    proposed scheme and grid local search in place of the convex surface
    step."""
    rep = solve(scn, ens, cfg, rng=rng,
                block_solvers={"ris": _ls_surface_pass})
    return rep.design, rep.ensemble, rep.scenario, rep.iterations, \
        rep.history


# the holographic surface is reached through the transmission face of the
# outdoor-indoor surface, so it cannot be ablated in alone; "ris-only"
# keeps the static surface infrastructure and drops the aerial cascade
_ABLATION = {"uav-only": frozenset({"uav"}),
             "star-only": frozenset({"star"}),
             "ris-only": frozenset({"star", "holo"})}


def _run_scheme(name: str, scn: Scenario, ens: LinkEnsemble, cfg: RunConfig,
                rng: np.random.Generator):
    """Returns (design, ensemble, scenario, iterations, history)."""
    if name == "proposed":
        rep = solve(scn, ens, cfg, rng=rng)
        return rep.design, rep.ensemble, rep.scenario, rep.iterations, \
            rep.history
    if name == "random-phase":
        return _random_phase(scn, ens, cfg, rng)
    if name == "ao-ls":
        return _ao_ls(scn, ens, cfg, rng)
    if name in _ABLATION:
        rep = solve(scn, ens, cfg, rng=rng, active=_ABLATION[name])
        return rep.design, rep.ensemble, rep.scenario, rep.iterations, \
            rep.history
    raise ValueError(f"unknown scheme {name!r}; valid: {SCHEME_NAMES}")


def run_baseline(name: str, scenario: Scenario, ensemble: LinkEnsemble,
                 cfg: RunConfig,
                 rng: np.random.Generator | None = None) -> Design:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _run_scheme(name, scenario, ensemble, cfg, rng)[0]


# --------------------------------------------------------------------------
# sweeps

def _point_config(cfg: RunConfig, kind: str, value: float) -> RunConfig:
    exp = cfg.experiment
    cfg = dataclasses.replace(
        cfg, optimizer=dataclasses.replace(cfg.optimizer,
                                           max_iters=exp.max_iters,
                                           restarts=exp.restarts))
    if kind == "power":
        return dataclasses.replace(
            cfg, radio=dataclasses.replace(cfg.radio, p_max_dbm=float(value)))
    if kind == "secrecy-rate":
        return dataclasses.replace(
            cfg, targets=dataclasses.replace(cfg.targets,
                                             r_sec_min=float(value)))
    if kind == "qos-rate":
        return dataclasses.replace(
            cfg, targets=dataclasses.replace(cfg.targets,
                                             r_qos=float(value)))
    if kind == "convergence":
        return cfg
    raise ValueError(f"unknown sweep kind {kind!r}")


def _estimate_rows(grid_value, scheme: str, est: OutageEstimate,
                   seed: int, full: bool = False) -> list[dict]:
    rows = [dict(grid=grid_value, scheme=scheme, user="", metric="phi_hat",
                 value=est.phi_hat, stderr=est.phi_stderr, seed=seed)]
    for k in range(est.p_out.size):
        rows.append(dict(grid=grid_value, scheme=scheme, user=k,
                         metric="p_out", value=float(est.p_out[k]),
                         stderr=float(est.stderr[k]), seed=seed))
    if full:
        per_user = (("sec_violation", est.sec_violation),
                    ("qos_violation", est.qos_violation),
                    ("sec_rate", est.sec_rate),
                    ("qos_rate", est.qos_rate))
        for metric, arr in per_user:
            for k in range(est.p_out.size):
                rows.append(dict(grid=grid_value, scheme=scheme, user=k,
                                 metric=metric, value=float(arr[k]),
                                 stderr="", seed=seed))
    return rows


def sweep(kind: str, grid, cfg: RunConfig, *, schemes=None,
          trials: int | None = None, seed: int | None = None,
          threads: int | None = None) -> list[dict]:
    """One optimization + outage estimate per (grid point, scheme); any
    point failure is recorded in its status row and the sweep continues."""
    if not list(grid):
        raise ValueError("sweep grid must be non-empty")
    schemes = list(schemes if schemes is not None
                   else cfg.experiment.schemes)
    trials = trials if trials is not None else cfg.experiment.trials
    seed = seed if seed is not None else cfg.seed
    rows: list[dict] = []
    if kind == "convergence":
        return _convergence_sweep(grid, cfg, schemes, trials, seed, threads)
    for pt, value in enumerate(grid):
        cfg_pt = _point_config(cfg, kind, value)
        # one shared instance across grid points: the swept parameter does
        # not enter the sampling path, so every point sees the same channels
        inst_rng = np.random.default_rng(seed)
        scn = build_scenario(cfg_pt, inst_rng)
        ens = realize_ensemble(scn, cfg_pt, inst_rng)
        for scheme in schemes:
            t0 = time.perf_counter()
            try:
                design, ens_s, scn_s, iters, _ = _run_scheme(
                    scheme, scn, ens, cfg_pt,
                    np.random.default_rng([seed, 7]))
                est = estimate_outage(design, cfg_pt, trials, seed,
                                      ensemble=ens_s, scenario=scn_s,
                                      point_index=pt, threads=threads)
            except Exception as exc:   # noqa: BLE001 - recorded in-row
                rows.append(dict(grid=value, scheme=scheme, user="",
                                 metric="status",
                                 value=f"error: {type(exc).__name__}",
                                 stderr="", seed=seed))
                continue
            dt = time.perf_counter() - t0
            rows.extend(_estimate_rows(value, scheme, est, seed))
            rows.append(dict(grid=value, scheme=scheme, user="",
                             metric="iterations", value=iters, stderr="",
                             seed=seed))
            rows.append(dict(grid=value, scheme=scheme, user="",
                             metric="wall_time_s", value=round(dt, 3),
                             stderr="", seed=seed))
            rows.append(dict(grid=value, scheme=scheme, user="",
                             metric="status", value="ok", stderr="",
                             seed=seed))
    return rows


def _convergence_sweep(grid, cfg, schemes, trials, seed, threads):
    """Surrogate-cost trajectory sampled at the requested iteration indices
    (clamped to the final value once a scheme has converged)."""
    rows: list[dict] = []
    cfg = _point_config(cfg, "convergence", 0.0)
    inst_rng = np.random.default_rng(seed)
    scn = build_scenario(cfg, inst_rng)
    ens = realize_ensemble(scn, cfg, inst_rng)
    for scheme in schemes:
        t0 = time.perf_counter()
        try:
            design, ens_s, scn_s, iters, hist = _run_scheme(
                scheme, scn, ens, cfg, np.random.default_rng([seed, 7]))
        except Exception as exc:   # noqa: BLE001
            rows.append(dict(grid="", scheme=scheme, user="",
                             metric="status",
                             value=f"error: {type(exc).__name__}",
                             stderr="", seed=seed))
            continue
        dt = time.perf_counter() - t0
        if hist is not None:
            for t in grid:
                idx = min(int(t), len(hist) - 1)
                rows.append(dict(grid=int(t), scheme=scheme, user="",
                                 metric="phi_tilde",
                                 value=float(hist[idx]), stderr="",
                                 seed=seed))
        est = estimate_outage(design, cfg, trials, seed, ensemble=ens_s,
                              scenario=scn_s, threads=threads)
        rows.extend(_estimate_rows("", scheme, est, seed))
        rows.append(dict(grid="", scheme=scheme, user="",
                         metric="iterations", value=iters, stderr="",
                         seed=seed))
        rows.append(dict(grid="", scheme=scheme, user="",
                         metric="wall_time_s", value=round(dt, 3),
                         stderr="", seed=seed))
        rows.append(dict(grid="", scheme=scheme, user="", metric="status",
                         value="ok", stderr="", seed=seed))
    return rows


# --------------------------------------------------------------------------
# Bernstein soundness suite (shared by the CLI and the acceptance gate)

def random_feasible_block(rng: np.random.Generator, n: int, eps: float,
                          variant: str = "paper"):
    """One random SINR-structured chance-constraint block that satisfies the
    deterministic surrogate.  The SINR target is scaled along the feasible
    direction (down for legitimate constraints, up for wiretaps) until the
    surrogate holds, mirroring how thresholds are chosen in the solver."""
    n_streams = int(rng.integers(1, 5))
    w = (rng.standard_normal((n, n_streams))
         + 1j * rng.standard_normal((n, n_streams)))
    w *= math.sqrt(10.0 ** rng.uniform(-1, 1) / (2 * n * n_streams))
    h = (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    h *= math.sqrt(10.0 ** rng.uniform(-0.5, 1.5) / 2)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    cov = a @ a.conj().T
    cov *= 10.0 ** rng.uniform(-4, -1) / np.trace(cov).real * n
    kappa_t = 10.0 ** rng.uniform(-4, -2)
    kappa_r = 10.0 ** rng.uniform(-4, -2)
    wiretap = bool(rng.integers(0, 2))
    k = int(rng.integers(0, n_streams))

    # nominal SINR of stream k anchors the target bracket
    p = np.abs(h.conj() @ w) ** 2
    dist = (kappa_t * float(np.abs(h) ** 2 @ np.sum(np.abs(w) ** 2, axis=1))
            + kappa_r * float(p.sum()))
    nominal = float(p[k]) / (float(p.sum() - p[k]) + dist + 1.0)
    gamma = max(nominal, 1e-9)
    for _ in range(200):
        form = sinr_quadratic(w, k, h, gamma, 1.0, kappa_t, kappa_r,
                              wiretap=wiretap)
        blk = bernstein_block(form, cov, eps, variant)
        if blk.feasible:
            return blk
        gamma = gamma * 2.0 if wiretap else gamma * 0.5
    raise RuntimeError("could not centre a feasible block")


def bernstein_soundness(n_blocks: int, trials: int, seed: int,
                        eps_grid=(0.01, 0.05, 0.1),
                        variant: str = "paper") -> list[dict]:
    """MC check that every surrogate-feasible block keeps its violation
    probability within the budget (up to binomial noise)."""
    rng = np.random.default_rng(seed)
    results = []
    for i in range(n_blocks):
        n = int(rng.integers(1, 9))
        eps = float(eps_grid[int(rng.integers(0, len(eps_grid)))])
        blk = random_feasible_block(rng, n, eps, variant)
        p_hat = validate_block_mc(blk.form, blk.cov, trials, rng)
        stderr = math.sqrt(eps * (1.0 - eps) / trials)
        results.append(dict(index=i, n=n, eps=eps, p_hat=p_hat,
                            limit=eps + 3.0 * stderr,
                            ok=p_hat <= eps + 3.0 * stderr))
    return results


# --------------------------------------------------------------------------
# persistence

def _design_dict(design: Design) -> dict:
    s = design.surfaces
    return {
        "beamformers": {"re": design.beamformers.real.tolist(),
                        "im": design.beamformers.imag.tolist()},
        "uav_pos": [float(x) for x in design.uav_pos],
        "active": sorted(design.active),
        "surfaces": {
            "uav": {"phases": s.uav.phases.tolist(), "bits": s.uav.bits},
            "star": {"rho": s.star.rho.tolist(),
                     "theta_t": s.star.theta_t.tolist(),
                     "theta_r": s.star.theta_r.tolist(),
                     "bits": s.star.bits},
            "holo": {"amplitudes": s.holo.amplitudes.tolist(),
                     "phases": s.holo.phases.tolist(),
                     "bits": s.holo.bits,
                     "alpha_max": s.holo.alpha_max},
        },
    }


def report_to_dict(rep: SolveReport) -> dict:
    thr = rep.thresholds
    return {
        "converged": rep.converged,
        "iterations": rep.iterations,
        "feasible": rep.feasible,
        "worst_margin": rep.worst_margin,
        "continuation_used": rep.continuation_used,
        "runtime_s": rep.runtime_s,
        "temperature": rep.temperature,
        "surrogate_history": [float(x) for x in rep.history],
        "thresholds": {
            "gamma_qos": thr.gamma_qos,
            "gamma_legit": thr.gamma_legit.tolist(),
            "gamma_eve": thr.gamma_eve.tolist(),
            "eps_qos": thr.eps_qos,
            "eps_legit": thr.eps_legit,
            "eps_eve": thr.eps_eve,
        },
        "design": _design_dict(rep.design),
    }


def write_report_json(path: str | Path, rep: SolveReport) -> None:
    Path(path).write_text(json.dumps(report_to_dict(rep), indent=1,
                                     sort_keys=True) + "\n")


def write_history_csv(path: str | Path, rep: SolveReport) -> None:
    """Per-step log: surrogate cost after each block solve, solver status,
    realized and pre-projection step norms."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("iteration", "block", "status", "accepted",
                     "phi_tilde", "step_norm", "raw_step"))
        wr.writerow((0, "init", "", "", repr(float(rep.history[0])), "", ""))
        for s in rep.steps:
            wr.writerow((s.iteration, s.block, s.status, int(s.accepted),
                         repr(float(s.cost)), repr(float(s.step_norm)),
                         repr(float(s.raw_step))))


def write_rows_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for row in rows:
            wr.writerow([_csv_cell(row[c]) for c in CSV_COLUMNS])


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
