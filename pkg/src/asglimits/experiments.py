"""Path functionals of the ASG lineage count and the Monte Carlo campaigns
built on them.

Every functional here is an exact piecewise integral over a
:class:`~asglimits.engine.CountPath`: between events the count ``n`` is
constant, so integrands such as ``s * mu(n)`` or ``(s n/2 - 1)^2 / s``
integrate in closed form. Nothing is sampled on a time grid except the
reported values.

Campaign paths do not start at time 0 with a finite number of
lineages. Instead each path enters level ``n0`` at a random time drawn
from a gamma law matched to the mean and variance of ``T_{n0}`` (the
first time a process started from infinity hits ``n0``), and runs
exactly from there. Functionals are integrated from that entrance time
``r``; ``u_r = r n0/2 - 1`` bounds what is lost on ``(0, r)``.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from . import _kernels
from .analytics import cdi_table, entrance_law
from .engine import CountPath, EntranceLaw, ModelParams, counts_at_times, simulate_birth_death
from .stats import (McReport, config_hash, cov_se, ks_one_sample, mean_se, moment_ratio_se,
                    normal_cdf, paired_ratio_se, stream_for, var_se)

__all__ = [
    "PathFunctional",
    "x_eps_path",
    "martingale_path",
    "residual_path",
    "y_paths",
    "l_eps_compensator",
    "l_eps_max_jump",
    "decomposition_residual",
    "y_identity_residual",
    "sup_deviation",
    "sup_x_minus_y",
    "fused_summary",
    "entered_path",
    "default_n0",
    "sup_deviation_moments",
    "martingale_experiment",
    "griffiths_experiment",
    "clt_experiment",
]

KINDS = ("X_eps", "M", "R", "Y", "Y_eps", "L_eps_compensator", "sup_deviation")
# asymptotic standard deviation of sqrt(n) * D under the null
KS_NULL_SD = 0.2603


@dataclasses.dataclass(frozen=True)
class PathFunctional:
    kind: str
    grid: np.ndarray
    values: np.ndarray
    epsilon: float | None = None
    source: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.grid.shape != self.values.shape:
            raise ValueError("grid and values differ in shape")
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


# ---------------------------------------------------------------------------
# exact segment integrals


def _poly(a, b, p: int):
    """Integral of ``s^p`` over ``[a, b]`` in factored form."""
    acc = np.zeros(np.broadcast(a, b).shape)
    for j in range(p + 1):
        acc = acc + b**j * a ** (p - j)
    return (b - a) * acc / (p + 1)


def _drift(n, params: ModelParams):
    """``mu(n) - lambda(n)``."""
    return 0.5 * n * (n - 1 + params.theta - params.sigma)


def _u_over_s(a, b, n):
    """Integral of ``(s n/2 - 1)/s`` over ``[a, b]``, ``a > 0``."""
    ua = 0.5 * a * n - 1
    d = (b - a) / a
    return ua * d + (d - np.log1p(d))


def _u2_over_s(a, b, n):
    """Integral of ``(s n/2 - 1)^2/s`` over ``[a, b]``, ``a > 0``."""
    ua = 0.5 * a * n - 1
    ub = 0.5 * b * n - 1
    d = (b - a) / a
    return (b - a) * n * (ua + ub) / 4 - ua * d + (np.log1p(d) - d)


def _trimmed(path: CountPath) -> CountPath:
    """Path with a positive start: a path starting at time 0 is cut at its first event."""
    if path.start_time > 0:
        return path
    if path.times.size == 0:
        raise ValueError("path starting at time 0 has no event to integrate from")
    return CountPath(float(path.times[0]), path.times[1:], path.counts[1:], path.end_time,
                     path.params, path.stop_reason)


def _locate(path: CountPath, grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < path.start_time) or np.any(grid > path.end_time):
        raise ValueError(
            f"grid outside path coverage [{path.start_time}, {path.end_time}] (partial path)")
    return np.searchsorted(path.times, grid, side="right")


def _cumulative(path: CountPath, grid, seg) -> np.ndarray:
    """``int_{start}^{g} f`` at each grid point, ``seg(a, b, n)`` integrating one segment."""
    grid = np.asarray(grid, dtype=float)
    idx = _locate(path, grid)
    e = path.edges
    n = path.counts.astype(float)
    full = np.concatenate(([0.0], np.cumsum(seg(e[:-1], e[1:], n))))
    return full[idx] + seg(e[idx], grid, n[idx])


def _jump_sum(path: CountPath, grid, weight) -> np.ndarray:
    """Sum of ``weight(s, dn)`` over jumps at times ``s <= g``."""
    idx = _locate(path, grid)
    dn = np.diff(path.counts).astype(float)
    cum = np.concatenate(([0.0], np.cumsum(weight(path.times, dn))))
    return cum[idx]


def _u(path: CountPath, grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    return 0.5 * grid * path.counts[_locate(path, grid)] - 1.0


# ---------------------------------------------------------------------------
# functionals


def x_eps_path(path: CountPath, epsilon: float, grid) -> PathFunctional:
    """``X_eps(t) = eps^{-1/2} (eps t N_{eps t}/2 - 1)``, with ``X_eps(0) = 0``."""
    grid = np.asarray(grid, dtype=float)
    vals = np.zeros_like(grid)
    pos = grid > 0
    vals[pos] = _u(path, epsilon * grid[pos]) / math.sqrt(epsilon)
    return PathFunctional("X_eps", grid, vals, epsilon)


def martingale_path(path: CountPath, params: ModelParams, grid) -> PathFunctional:
    """Compensated jump integral ``M_t`` from the path start.

    ``M_t = (1/2)[sum_down s - sum_up s] - (1/2) int s (mu - lambda)(N_s) ds``.
    """
    grid = np.asarray(grid, dtype=float)
    jumps = _jump_sum(path, grid, lambda s, dn: -0.5 * dn * s)
    comp = _cumulative(path, grid, lambda a, b, n: _drift(n, params) * _poly(a, b, 1))
    return PathFunctional("M", grid, jumps - 0.5 * comp)


def residual_path(path: CountPath, params: ModelParams, grid) -> PathFunctional:
    """``R_t = -int (sN/2-1)^2/s ds + (1-theta+sigma)/4 int s N ds``."""
    p = _trimmed(path)
    grid = np.asarray(grid, dtype=float)
    first = _cumulative(p, grid, _u2_over_s)
    c = 1.0 - params.theta + params.sigma
    second = _cumulative(p, grid, lambda a, b, n: n * _poly(a, b, 1)) if c != 0 else 0.0
    return PathFunctional("R", grid, -first + 0.25 * c * second)


def _l_integral(path: CountPath, params: ModelParams, grid) -> np.ndarray:
    """``int u dM_u`` from the path start."""
    jumps = _jump_sum(path, grid, lambda s, dn: -0.5 * dn * s * s)
    comp = _cumulative(path, grid, lambda a, b, n: _drift(n, params) * _poly(a, b, 2))
    return jumps - 0.5 * comp


def _y0(path: CountPath) -> float:
    return 0.5 * path.start_time * float(path.counts[0]) - 1.0


def y_paths(path: CountPath, params: ModelParams, epsilon: float, grid, y0: float | None = None):
    """``Y_t = -(1/t) int_0^t u dM_u`` at raw times ``eps*grid``, and ``Y_eps``.

    The integral runs from the path start ``r``; ``Y`` is started there
    at ``y0`` (default ``u_r``, which makes ``X - Y`` vanish at ``r``),
    so ``Y_t = (r y0 - int_r^t u dM_u)/t``.
    """
    grid = np.asarray(grid, dtype=float)
    raw = epsilon * grid
    y0 = _y0(path) if y0 is None else y0
    vals = np.zeros_like(raw)
    pos = raw > 0
    vals[pos] = (path.start_time * y0 - _l_integral(path, params, raw[pos])) / raw[pos]
    y = PathFunctional("Y", raw, vals, epsilon)
    return y, PathFunctional("Y_eps", grid, vals / math.sqrt(epsilon), epsilon)


def _entrance_sliver(r: float, params: ModelParams) -> float:
    """``int_0^r s^4 N(N-1+theta+sigma)/2 ds`` along the deterministic entrance ``N = 2/s``."""
    return 2 * r**3 / 3 + (params.theta + params.sigma - 1) * r**4 / 4


def l_eps_compensator(path: CountPath, params: ModelParams, epsilon: float, t: float,
                      entrance: bool = True) -> float:
    """``<L_eps>_t = (1/(4 eps^3)) int_0^{eps t} s^4 N(N-1+theta+sigma)/2 ds``.

    With ``entrance`` the piece before the path start is filled in along
    ``N = 2/s``.
    """
    raw = epsilon * t
    k = params.theta + params.sigma
    val = float(_cumulative(path, [raw], lambda a, b, n: 0.5 * n * (n - 1 + k) * _poly(a, b, 4))[0])
    if entrance:
        val += _entrance_sliver(path.start_time, params)
    return val / (4 * epsilon**3)


def l_eps_compensator_path(path: CountPath, params: ModelParams, epsilon: float, grid,
                           entrance: bool = True) -> PathFunctional:
    grid = np.asarray(grid, dtype=float)
    k = params.theta + params.sigma
    vals = _cumulative(path, epsilon * grid, lambda a, b, n: 0.5 * n * (n - 1 + k) * _poly(a, b, 4))
    if entrance:
        vals = vals + _entrance_sliver(path.start_time, params)
    return PathFunctional("L_eps_compensator", grid, vals / (4 * epsilon**3), epsilon)


def l_eps_max_jump(path: CountPath, epsilon: float, t: float) -> float:
    """Largest jump of ``L_eps = eps^{-3/2} int_0^{eps t} u dM_u`` on ``[0, t]``."""
    s = path.times[path.times <= epsilon * t]
    return 0.0 if s.size == 0 else float(np.max(s) ** 2 / 2 / epsilon**1.5)


def decomposition_residual(path: CountPath, params: ModelParams, grid):
    """Residual of ``tN_t/2 - 1 + int (sN/2-1)/s ds + M_t - R_t`` against ``u_r``.

    The identity holds exactly from the start ``r``, with right side
    ``u_r = r N_r/2 - 1``. Returns ``(|LHS - u_r|, |u_r|)``; the second
    term is the bias when the path is read as starting from infinity at 0.
    """
    p = _trimmed(path)
    grid = np.asarray(grid, dtype=float)
    lhs = (_u(p, grid) + _cumulative(p, grid, _u_over_s)
           + martingale_path(p, params, grid).values - residual_path(p, params, grid).values)
    ur = _y0(p)
    return np.abs(lhs - ur), abs(ur)


def y_identity_residual(path: CountPath, params: ModelParams, grid, quadrature: str = "exact"):
    """``|Y_t - Y_r + int_r^t Y_s/s ds + M_t|`` at raw times ``grid``.

    ``quadrature="exact"`` integrates ``Y_s/s`` piecewise in closed form;
    ``"trapezoid"`` uses the trapezoid rule on ``grid`` itself (starting at
    the path start), so its residual shrinks as the grid is refined.
    """
    grid = np.asarray(grid, dtype=float)
    r = path.start_time
    y0 = _y0(path)
    c0 = r * y0
    y = (c0 - _l_integral(path, params, grid)) / grid
    m = martingale_path(path, params, grid).values
    if quadrature == "exact":
        e = path.edges
        n = path.counts.astype(float)
        l_start = _l_integral(path, params, e[:-1])

        def seg(a, b, nn, la):
            kap = _drift(nn, params) / 6.0
            k0 = la + kap * a**3
            return (c0 - k0) * (b - a) / (a * b) + kap * (b * b - a * a) / 2

        full = np.concatenate(([0.0], np.cumsum(seg(e[:-1], e[1:], n, l_start))))
        idx = _locate(path, grid)
        integral = full[idx] + seg(e[idx], grid, n[idx], l_start[idx])
    elif quadrature == "trapezoid":
        pts = np.concatenate(([r], grid))
        ys = np.concatenate(([y0], y)) / pts
        integral = np.concatenate(([0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(pts))))[1:]
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return np.abs(y - y0 + integral + m)


def _deviation_endpoints(path: CountPath):
    """Times and values of ``u = sN/2 - 1`` just before and just after each event."""
    t = path.times
    pre = 0.5 * t * path.counts[:-1] - 1.0
    post = 0.5 * t * path.counts[1:] - 1.0
    return t, pre, post


def sup_deviation(path: CountPath, t: float, k: int = 2) -> float:
    """``sup_{r <= s <= t} (sN_s/2 - 1)^k`` from the segment endpoints.

    ``u`` rises linearly inside each segment, so ``u^k`` peaks at an end.
    """
    if t < path.start_time or t > path.end_time:
        raise ValueError("t outside path coverage")
    times, pre, post = _deviation_endpoints(path)
    sel = times <= t
    cand = [_y0(path) ** k, float(_u(path, [t])[0]) ** k]
    if np.any(sel):
        cand.append(float(np.max(pre[sel] ** k)))
        cand.append(float(np.max(post[sel] ** k)))
    return max(cand)


def sup_deviation_path(path: CountPath, grid, k: int = 2) -> PathFunctional:
    grid = np.asarray(grid, dtype=float)
    return PathFunctional("sup_deviation", grid,
                          np.array([sup_deviation(path, g, k) for g in grid]))


def sup_x_minus_y(path: CountPath, params: ModelParams, epsilon: float, t: float,
                  y0: float | None = None) -> float:
    """``sup_{s <= t} |X_eps(s) - Y_eps(s)|`` over the path's coverage.

    ``X - Y`` is continuous (the jumps cancel), so it is evaluated at
    every event time and at ``eps*t``.
    """
    raw = epsilon * t
    pts = np.concatenate((path.times[path.times < raw], [raw]))
    y0 = _y0(path) if y0 is None else y0
    y = (path.start_time * y0 - _l_integral(path, params, pts)) / pts
    d = np.abs(_u(path, pts) - y)
    return float(np.max(d)) / math.sqrt(epsilon)


def fused_summary(path: CountPath, params: ModelParams, epsilon: float, t: float,
                  entrance: bool = True) -> tuple[float, float]:
    """``(sup |X_eps - Y_eps| on [0, t], <L_eps>_t)`` in one compiled pass."""
    raw = epsilon * t
    if raw > path.end_time:
        raise ValueError("path does not reach eps*t")
    sup, comp, _ = _kernels.path_summary(float(path.start_time), path.times, path.counts,
                                         float(path.end_time), raw, params.theta, params.sigma,
                                         _y0(path))
    if entrance:
        comp += _entrance_sliver(path.start_time, params)
    return sup / math.sqrt(epsilon), comp / (4 * epsilon**3)


# ---------------------------------------------------------------------------
# campaigns


def default_n0(epsilon: float, t_min: float, factor: float = 4.0, floor: int = 10**4) -> int:
    """Entrance level ``factor`` times the typical count ``2/(eps t_min)`` at the earliest time."""
    return max(floor, int(math.ceil(factor * 2.0 / (epsilon * t_min))))


def entered_path(params: ModelParams, law: EntranceLaw, rng_entry, rng_path, horizon: float) -> CountPath:
    """Path entering ``law.n`` at a time drawn from ``law`` and run exactly to ``horizon``."""
    tau = law.sample(rng_entry)
    if tau >= horizon:
        raise ValueError(f"entrance time {tau:.3g} beyond horizon {horizon}; raise n0")
    rem = simulate_birth_death(params, law.n, rng_path, stop_level=None, horizon=horizon - tau)
    return rem.shifted(tau)


def _config(kind: str, params: ModelParams, **kw) -> dict:
    cfg = {"experiment": kind, "theta": params.theta, "sigma": params.sigma}
    for k, v in kw.items():
        cfg[k] = list(v) if isinstance(v, (tuple, np.ndarray)) else v
    return cfg


def sup_deviation_moments(params: ModelParams, t_list: Sequence[float], k: int, n0: int,
                          replicates: int, seed: int) -> McReport:
    """Monte Carlo ``E[sup_{s<=t} (sN_s/2 - 1)^k]`` for each ``t`` in the decreasing ``t_list``.

    All ``t`` share the same paths; ``drop`` rows give the paired decrease
    between consecutive ``t`` with its standard error.
    """
    t_list = [float(t) for t in t_list]
    if any(b >= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("t_list must be decreasing")
    if not 1 <= k <= 6:
        raise ValueError("k must be in 1..6")
    cfg = _config("supdev", params, t_list=t_list, k=k, n0=n0, replicates=replicates, seed=seed)
    report = McReport(config_hash(cfg), seed, replicates, config=cfg)
    law = entrance_law(params, n0)
    vals = np.empty((replicates, len(t_list)))
    for idx in range(replicates):
        path = entered_path(params, law, stream_for(seed, idx, 1), stream_for(seed, idx, 0),
                            t_list[0])
        vals[idx] = [sup_deviation(path, t, k) for t in t_list]
    for j, t in enumerate(t_list):
        est, se = mean_se(vals[:, j])
        report.add(experiment="supdev", statistic=f"sup_dev^{k}", estimate=est, stderr=se, t=t)
        report.add(experiment="supdev", statistic=f"sup_dev^{k}/t", estimate=est / t,
                   stderr=se / t, t=t)
        if j:
            est, se = mean_se(vals[:, j - 1] - vals[:, j])
            report.add(experiment="supdev", statistic="drop", estimate=est, stderr=se, t=t)
    return report


def martingale_experiment(params: ModelParams, t_list: Sequence[float], n0: int,
                          replicates: int, seed: int, grid_points: int = 48) -> McReport:
    """Moments of ``M``, ``R`` and ``Y`` and the pathwise decomposition residual.

    ``t_list`` is decreasing (typically halving).
    """
    t_list = [float(t) for t in t_list]
    if any(b >= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("t_list must be decreasing")
    cfg = _config("martingale", params, t_list=t_list, n0=n0, replicates=replicates, seed=seed)
    report = McReport(config_hash(cfg), seed, replicates, config=cfg)
    law = entrance_law(params, n0)
    nt = len(t_list)
    m = np.empty((replicates, nt))
    sup_r = np.empty((replicates, nt))
    sup_y2 = np.empty((replicates, nt))
    resid = np.empty(replicates)
    bias = np.empty(replicates)
    tq = np.array(t_list[::-1])
    for idx in range(replicates):
        path = entered_path(params, law, stream_for(seed, idx, 1), stream_for(seed, idx, 0),
                            t_list[0])
        m[idx] = martingale_path(path, params, tq).values[::-1]
        # R is continuous and Y moves by u-sized jumps: both are read at every event
        ev = np.concatenate((path.times[path.times < t_list[0]], tq))
        order = np.argsort(ev, kind="stable")
        ev = ev[order]
        rv = np.abs(residual_path(path, params, ev).values)
        y, _ = y_paths(path, params, 1.0, ev)
        yv = y.values
        dn = np.zeros_like(ev)
        is_event = order < ev.size - nt
        dn[is_event] = np.diff(path.counts)[: int(is_event.sum())]
        ypre = yv - 0.5 * dn * ev
        run_r = np.maximum.accumulate(rv)
        run_y = np.maximum.accumulate(np.maximum(yv**2, ypre**2))
        pos = np.searchsorted(ev, t_list, side="right") - 1
        sup_r[idx] = run_r[pos]
        sup_y2[idx] = np.maximum(run_y[pos], _y0(path) ** 2)
        grid = np.geomspace(path.start_time * 1.0001, t_list[0], grid_points)
        res, b = decomposition_residual(path, params, grid)
        resid[idx] = float(np.max(res))
        bias[idx] = b
    for j, t in enumerate(t_list):
        est, se = mean_se(m[:, j])
        report.add(experiment="martingale", statistic="mean_M", estimate=est, stderr=se, t=t,
                   target=0.0, tag="closed-form")
        est, se = mean_se(m[:, j] ** 2 / t)
        report.add(experiment="martingale", statistic="E[M^2]/t", estimate=est, stderr=se, t=t)
        est, se = mean_se(sup_r[:, j] / t)
        report.add(experiment="martingale", statistic="E[sup|R|]/t", estimate=est, stderr=se, t=t)
        est, se = mean_se(sup_y2[:, j] / t)
        report.add(experiment="martingale", statistic="E[sup Y^2]/t", estimate=est, stderr=se, t=t)
        if j:
            a = m[:, j - 1] ** 2 / t_list[j - 1]
            b = m[:, j] ** 2 / t
            est, se = paired_ratio_se(a, b)
            report.add(experiment="martingale", statistic="M2_ratio", estimate=est, stderr=se, t=t,
                       target=1.0, tag="bound")
    report.add(experiment="martingale", statistic="decomp_residual", estimate=float(resid.max()),
               stderr=0.0, target=1e-6, tag="bound", n=1)
    report.add(experiment="martingale", statistic="decomp_bias_bound", estimate=float(bias.max()),
               stderr=0.0, n=1)
    return report


def griffiths_experiment(params: ModelParams, t: float, n0: int, replicates: int,
                         seed: int) -> McReport:
    """Mean and variance of ``N_t`` at a small raw time ``t``."""
    cfg = _config("griffiths", params, t=t, n0=n0, replicates=replicates, seed=seed)
    report = McReport(config_hash(cfg), seed, replicates, config=cfg)
    law = entrance_law(params, n0)
    counts = np.empty(replicates)
    for idx in range(replicates):
        tau = law.sample(stream_for(seed, idx, 1))
        if tau >= t:
            raise ValueError(f"n0={n0} is entered after t={t}; raise n0")
        counts[idx] = counts_at_times(params, n0, stream_for(seed, idx, 0), [t - tau])[0]
    est, se = mean_se(counts)
    report.add(experiment="griffiths", statistic="mean_N", estimate=est, stderr=se, t=t,
               target=2.0 / t, tag="limit-theorem")
    est, se = var_se(counts)
    report.add(experiment="griffiths", statistic="var_N", estimate=est, stderr=se, t=t,
               target=2.0 / (3.0 * t), tag="limit-theorem")
    return report


@dataclasses.dataclass
class _CltSample:
    x: np.ndarray  # (replicates, len(t_grid))
    sup_xy: np.ndarray  # (path_replicates,)
    compensator: np.ndarray  # (path_replicates,)
    n0: int


def _clt_sample(params, eps, t_grid, horizon, reps, path_reps, seed, block, n0, n_max,
                sensitivity):
    """One epsilon: the base sample entering at ``n0`` and, with
    ``sensitivity``, a twin entering at ``2 n0`` that shares the path
    below ``n0`` (common random numbers)."""
    law_a = entrance_law(params, n0, n_max)
    law_b = entrance_law(params, 2 * n0, None if n_max is None else 2 * n_max) if sensitivity else None
    raw = eps * np.asarray(t_grid, dtype=float)
    raw_end = eps * horizon
    g = raw.size
    out = {"A": _CltSample(np.empty((reps, g)), np.empty(path_reps), np.empty(path_reps), n0)}
    if sensitivity:
        out["B"] = _CltSample(np.empty((reps, g)), np.empty(path_reps), np.empty(path_reps), 2 * n0)
    root = math.sqrt(eps)
    sub = 4 * block
    for idx in range(reps):
        tau_a = law_a.sample(stream_for(seed, idx, sub + 1))
        rng_rem = stream_for(seed, idx, sub)
        shifts = {"A": tau_a}
        full = idx < path_reps
        if sensitivity:
            rng_b = stream_for(seed, idx, sub + 2)
            tau_b0 = law_b.sample(rng_b)
            if tau_b0 >= raw[0]:
                raise ValueError(f"n0={2 * n0} entered after the first grid time; raise n0")
            if full:
                seg = simulate_birth_death(params, 2 * n0, rng_b, stop_level=n0).shifted(tau_b0)
                shifts["B"] = seg.end_time
            else:
                seg_counts, shifts["B"] = counts_at_times(params, 2 * n0, rng_b, raw, tau_b0,
                                                          stop_level=n0)
        if tau_a >= raw[0]:
            raise ValueError(f"n0={n0} entered after the first grid time; raise n0")
        if full:
            rem = simulate_birth_death(params, n0, rng_rem, stop_level=None, horizon=raw_end)
            for key, shift in shifts.items():
                path = rem.shifted(shift)
                if key == "B":
                    path = seg.then(path)
                out[key].x[idx] = _u(path, raw) / root
                out[key].sup_xy[idx], out[key].compensator[idx] = fused_summary(
                    path, params, eps, horizon)
        else:
            keys = list(shifts)
            q = np.concatenate([raw - shifts[k] for k in keys])
            order = np.argsort(q, kind="stable")
            n_sorted = counts_at_times(params, n0, rng_rem, q[order])
            n_all = np.empty_like(n_sorted)
            n_all[order] = n_sorted
            for j, key in enumerate(keys):
                n = n_all[j * g:(j + 1) * g].astype(float)
                early = n < 0
                if np.any(early):
                    n[early] = seg_counts[early]
                out[key].x[idx] = (0.5 * raw * n - 1.0) / root
    return out


def _clt_rows(report: McReport, exp: str, eps: float, t_grid, horizon: float,
              sample: _CltSample, alpha: float):
    x = sample.x
    g = len(t_grid)
    for j, t in enumerate(t_grid):
        col = x[:, j]
        est, se = mean_se(col)
        report.add(experiment=exp, statistic="mean_X", estimate=est, stderr=se, epsilon=eps, t=t,
                   target=0.0, tag="limit-theorem", n=col.size)
        v, vse = var_se(col)
        report.add(experiment=exp, statistic="var_X", estimate=v, stderr=vse, epsilon=eps, t=t,
                   target=t / 6, tag="derived", n=col.size)
        report.add(experiment=exp, statistic="var_ratio_X", estimate=v / (t / 6),
                   stderr=vse / (t / 6), epsilon=eps, t=t, target=1.0, tag="derived", n=col.size)
        sd = math.sqrt(t / 6)
        d, p = ks_one_sample(col, lambda z, sd=sd: normal_cdf(z, 0.0, sd))
        report.add(experiment=exp, statistic="ks_D", estimate=d,
                   stderr=KS_NULL_SD / math.sqrt(col.size), epsilon=eps, t=t,
                   target=alpha / g, tag="bound", p_value=p, n=col.size)
    for i in range(g):
        for j in range(i + 1, g):
            s, t = t_grid[i], t_grid[j]
            c, cse = cov_se(x[:, i], x[:, j])
            report.add(experiment=exp, statistic=f"cov_X@{s:g}", estimate=c, stderr=cse,
                       epsilon=eps, t=t, target=min(s, t) ** 3 / (6 * s * t), tag="derived",
                       n=x.shape[0])
    est, se = mean_se(sample.sup_xy)
    report.add(experiment=exp, statistic="sup_X_minus_Y", estimate=est, stderr=se, epsilon=eps,
               t=horizon, n=sample.sup_xy.size)
    est, se = mean_se(sample.compensator)
    report.add(experiment=exp, statistic="L_eps_compensator", estimate=est, stderr=se,
               epsilon=eps, t=horizon, target=horizon**3 / 6, tag="limit-theorem",
               n=sample.compensator.size)


def _ratio_rows(report: McReport, exp: str, eps_list, horizon: float):
    for a, b in zip(eps_list, eps_list[1:]):
        ra = report.get("sup_X_minus_Y", experiment=exp, epsilon=a)
        rb = report.get("sup_X_minus_Y", experiment=exp, epsilon=b)
        est, se = moment_ratio_se(ra.estimate, ra.stderr, rb.estimate, rb.stderr)
        report.add(experiment=exp, statistic="sup_ratio", estimate=est, stderr=se, epsilon=a,
                   t=horizon, target=math.sqrt(a / b), tag="limit-theorem", n=2)


def clt_experiment(params: ModelParams, eps_list: Sequence[float], t_grid: Sequence[float],
                   replicates, seed: int, *, path_replicates: int = 1000,
                   horizon: float | None = None, n0: int | None = None, n0_factor: float = 4.0,
                   n_max: int | None = None, sensitivity: bool = False,
                   alpha: float = 0.01) -> McReport:
    """Finite-dimensional and sup-distance checks of the rescaled fluctuations ``X_eps``.

    For each ``eps``: mean, variance and a KS test of ``X_eps(t)``
    against ``Normal(0, t/6)`` (threshold ``alpha`` split over
    ``t_grid``), covariances against ``(s^t)^3/(6 s t)``, the mean of
    ``sup_{t<=T} |X_eps - Y_eps|`` and of ``<L_eps>_T``. Consecutive
    ``eps`` give ``sup_ratio`` rows, and ``t nu_t/2`` at ``t = eps``
    comes from the exact hitting-time means.

    ``replicates`` may be a list (one count per ``eps``); the first
    ``path_replicates`` of them carry the path functionals. With
    ``sensitivity`` every statistic is recomputed with ``n0`` and the
    cut-off of the entrance computation doubled; ``shift:`` rows give
    the change in units of the base standard error.
    """
    eps_list = [float(e) for e in eps_list]
    t_grid = [float(t) for t in t_grid]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be decreasing")
    if not t_grid or t_grid[0] <= 0 or any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise ValueError("t_grid must be positive and increasing")
    horizon = t_grid[-1] if horizon is None else float(horizon)
    if horizon < t_grid[-1]:
        raise ValueError("t_grid must lie in (0, horizon]")
    reps = list(replicates) if isinstance(replicates, (list, tuple)) else [int(replicates)] * len(eps_list)
    if len(reps) != len(eps_list):
        raise ValueError("one replicate count per epsilon")
    if min(reps) < 50 or path_replicates < 2:
        raise ValueError("insufficient replicates: need >= 50 per epsilon and >= 2 paths")
    cfg = _config("clt", params, eps_list=eps_list, t_grid=t_grid, replicates=reps, seed=seed,
                  path_replicates=path_replicates, horizon=horizon, n0=n0, n0_factor=n0_factor,
                  n_max=n_max, sensitivity=sensitivity, alpha=alpha)
    report = McReport(config_hash(cfg), seed, max(reps), config=cfg)
    variants = {"A": "clt", "B": "clt-n0x2"}
    for block, eps in enumerate(eps_list):
        n0_eps = n0 if n0 is not None else default_n0(eps, t_grid[0], n0_factor)
        samples = _clt_sample(params, eps, t_grid, horizon, reps[block],
                              min(path_replicates, reps[block]), seed, block, n0_eps, n_max,
                              sensitivity)
        for key, sample in samples.items():
            _clt_rows(report, variants[key], eps, t_grid, horizon, sample, alpha)
    for exp in variants.values() if sensitivity else ["clt"]:
        _ratio_rows(report, exp, eps_list, horizon)
    for row in cdi_table(params, eps_list):
        report.add(experiment="clt", statistic="t_nu/2", estimate=row.scaled, stderr=0.0,
                   epsilon=row.t, t=row.t, target=1.0, tag="limit-theorem", n=1)
    if sensitivity:
        base = [r for r in report.rows if r.experiment == "clt" and r.stderr > 0]
        for r in base:
            twin = report.get(r.statistic, experiment="clt-n0x2", epsilon=r.epsilon, t=r.t)
            report.add(experiment="clt-sensitivity", statistic="shift:" + r.statistic,
                       estimate=abs(twin.estimate - r.estimate) / r.stderr, stderr=0.0,
                       epsilon=r.epsilon, t=r.t, target=1.0, tag="bound", n=1)
    report.validate()
    return report
