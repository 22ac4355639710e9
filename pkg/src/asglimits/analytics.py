"""Hitting-time and excursion moments of the lineage-counting chain.

The chain jumps ``n -> n-1`` at rate ``mu(n) = n(n-1+theta)/2`` and
``n -> n+1`` at rate ``lambda(n) = sigma*n/2``. Moments of the one-level
descent time ``T_{n,n-1}`` and of the number of upward jumps made along
the way follow from first-step analysis; they are computed here backward
in ``n`` from a level where births are switched off, and checked against
a dense linear-algebra oracle on small truncated chains.
"""

from __future__ import annotations

import dataclasses
import io
import math
from typing import Callable

import numba as nb
import numpy as np
from scipy import linalg, special

from . import _kernels
from .engine import EntranceLaw, ModelParams

__all__ = [
    "MomentTable",
    "HittingMoments",
    "TruncationError",
    "EnvelopeSummary",
    "kingman_step_moment",
    "kingman_table",
    "asg_step_moments",
    "h_moments",
    "absorption_moment_oracle",
    "passage_moments",
    "hitting_moments",
    "tail_hitting_moments",
    "expected_hitting_times",
    "nu_speed",
    "cdi_table",
    "entrance_law",
    "envelope_summary",
    "raw_to_cumulants",
    "cumulants_to_raw",
]

SENSITIVITY_RTOL = 1e-9


class TruncationError(RuntimeError):
    """The cut-off level is too low for the requested accuracy; increase N_max."""


def _binom_table(k_max: int) -> np.ndarray:
    k = np.arange(k_max + 1)
    return special.comb(k[:, None], k[None, :])


@dataclasses.dataclass(frozen=True)
class MomentTable:
    """Moments ``values[n - n_min, k]`` for levels ``n_min..n_max``, orders ``0..k_max``.

    ``quantity`` says what is tabulated: ``"step"`` for the one-level
    descent time, ``"passage"`` for the time to reach ``n_min - 1``,
    ``"upjumps"`` for the number of upward jumps during one descent.
    ``chain_top`` is the level at which births were switched off.
    """

    params: ModelParams
    n_min: int
    n_max: int
    k_max: int
    values: np.ndarray
    method: str
    quantity: str = "step"
    chain_top: int | None = None
    truncation_error: np.ndarray | None = None

    def __post_init__(self):
        if self.values.shape != (self.n_max - self.n_min + 1, self.k_max + 1):
            raise ValueError(f"values has shape {self.values.shape}")

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    def value(self, n, k: int):
        n = np.asarray(n)
        if np.any(n < self.n_min) or np.any(n > self.n_max) or not 0 <= k <= self.k_max:
            raise IndexError(f"(n={n}, k={k}) outside table")
        return self.values[n - self.n_min, k]

    def column(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def error(self, n, k: int):
        if self.truncation_error is None:
            return 0.0 * np.asarray(n, dtype=float)
        return self.truncation_error[np.asarray(n) - self.n_min, k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,k,value,method,truncation_error\n")
        err = self.truncation_error
        for r, n in enumerate(self.levels):
            for k in range(1, self.k_max + 1):
                e = 0.0 if err is None else float(err[r, k])
                buf.write(f"{n},{k},{float(self.values[r, k])!r},{self.method},{e!r}\n")
        return buf.getvalue()


def kingman_step_moment(n, k: int, theta: float = 0.0):
    """``E[T^k]`` for one descent of the coalescent with mutation: ``k! 2^k / (n(n-1+theta))^k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    n = np.asarray(n, dtype=float)
    rate2 = n * (n - 1 + theta)
    if np.any(rate2 <= 0):
        raise ValueError(f"level {n} is absorbing for theta={theta}")
    out = math.factorial(k) * (2.0 / rate2) ** k
    return float(out) if out.ndim == 0 else out


def kingman_table(params: ModelParams, n_max: int, k_max: int, n_min: int = 2) -> MomentTable:
    """Closed-form descent moments with ``sigma`` ignored."""
    n = np.arange(n_min, n_max + 1, dtype=float)
    vals = np.empty((n.size, k_max + 1))
    for k in range(k_max + 1):
        vals[:, k] = kingman_step_moment(n, k, params.theta)
    return MomentTable(ModelParams(params.theta, 0.0), n_min, n_max, k_max, vals,
                       "closed-form-kingman", "step", None, np.zeros_like(vals))


def _check_range(params: ModelParams, n_min: int, n_max: int):
    lowest = 1 if params.theta > 0 else 2
    if n_min < lowest:
        raise ValueError(f"n_min must be >= {lowest} for theta={params.theta}")
    if n_max < n_min + 10:
        raise ValueError("need n_max >= n_min + 10")


def _default_top(n_max: int) -> int:
    return max(2 * n_max, n_max + 64)


def _backward(kernel, params, n_min, n_max, k_max, chain_top, check, method, quantity):
    binom = _binom_table(k_max)
    full = kernel(float(params.theta), float(params.sigma), n_min, chain_top, k_max, binom)
    vals = full[: n_max - n_min + 1].copy()
    err = np.zeros_like(vals)
    if params.sigma > 0:
        wide = kernel(float(params.theta), float(params.sigma), n_min, 2 * chain_top, k_max, binom)
        err = np.abs(wide[: n_max - n_min + 1] - vals)
        scale = np.where(vals != 0, np.abs(vals), 1.0)
        worst = float(np.max(err / scale))
        if check and worst > SENSITIVITY_RTOL:
            raise TruncationError(
                f"doubling the cut-off from {chain_top} changes values by {worst:.2e} (relative); "
                "increase N_max")
    return MomentTable(params, n_min, n_max, k_max, vals, method, quantity, chain_top, err)


def asg_step_moments(params: ModelParams, n_max: int, k_max: int, n_min: int = 2, *,
                     chain_top: int | None = None, check: bool | None = None) -> MomentTable:
    """Moments ``a(n,k) = E[T_{n,n-1}^k]`` of the ASG descent time.

    Solved backward in ``n`` (forward in ``k``) from ``chain_top``,
    where births are switched off so that the boundary row equals the
    coalescent closed form. By default ``chain_top`` is well above
    ``n_max`` and the table is checked against a run with the cut-off
    doubled. Passing ``chain_top=n_max`` gives the exact moments of the
    chain truncated at ``n_max``.
    """
    _check_range(params, n_min, n_max)
    if check is None:
        check = chain_top is None
    top = _default_top(n_max) if chain_top is None else int(chain_top)
    if top < n_max:
        raise ValueError("chain_top must be >= n_max")
    return _backward(_kernels.step_moment_recursion, params, n_min, n_max, k_max, top, check,
                     "backward-recursion", "step")


def h_moments(params: ModelParams, n_max: int, k_max: int, n_min: int = 2, *,
              chain_top: int | None = None, check: bool | None = None) -> MomentTable:
    """Moments of ``H_n``, the number of upward jumps made while descending from ``n`` to ``n-1``."""
    _check_range(params, n_min, n_max)
    if check is None:
        check = chain_top is None
    top = _default_top(n_max) if chain_top is None else int(chain_top)
    if params.sigma == 0:
        vals = np.zeros((n_max - n_min + 1, k_max + 1))
        vals[:, 0] = 1.0
        return MomentTable(params, n_min, n_max, k_max, vals, "backward-recursion", "upjumps",
                           top, np.zeros_like(vals))
    return _backward(_kernels.excursion_count_recursion, params, n_min, n_max, k_max, top, check,
                     "backward-recursion", "upjumps")


def absorption_moment_oracle(m: int, n_max: int, params: ModelParams, k_max: int, *,
                             rates: tuple[Callable, Callable] | None = None) -> MomentTable:
    """Raw moments of the time to reach ``m - 1`` from each level ``m..n_max``.

    Dense linear algebra on the generator restricted to ``{m..n_max}``
    with births switched off at ``n_max``: ``u_k = k (-Q)^{-1} u_{k-1}``.
    ``rates`` may supply ``(birth(n), death(n))`` in place of the
    model's rates.
    """
    if m < 1 or n_max < m:
        raise ValueError("need 1 <= m <= n_max")
    if n_max - m > 200:
        raise ValueError("dense oracle limited to 201 levels")
    birth, death = rates if rates is not None else (params.birth_rate, params.death_rate)
    levels = np.arange(m, n_max + 1)
    size = levels.size
    q = np.zeros((size, size))
    for r, n in enumerate(levels):
        lam = 0.0 if n == n_max else float(birth(n))
        mu = float(death(n))
        if lam < 0 or mu < 0:
            raise ValueError(f"negative rate at level {n}")
        q[r, r] = -(lam + mu)
        if r > 0:
            q[r, r - 1] = mu
        if r + 1 < size:
            q[r, r + 1] = lam
    if float(death(m)) <= 0:
        raise np.linalg.LinAlgError(f"level {m - 1} is not reachable: singular generator")
    lu = linalg.lu_factor(-q, check_finite=True)
    vals = np.empty((size, k_max + 1))
    vals[:, 0] = 1.0
    for k in range(1, k_max + 1):
        vals[:, k] = k * linalg.lu_solve(lu, vals[:, k - 1])
    return MomentTable(params, m, n_max, k_max, vals, "linear-solve-oracle", "passage", n_max)


def passage_moments(step: MomentTable) -> MomentTable:
    """Moments of the time to descend from ``n`` to ``step.n_min - 1``.

    The descent is a sum of independent one-level descents (strong
    Markov property), so raw moments combine by binomial convolution.
    """
    if step.quantity != "step":
        raise ValueError("need a table of one-level descent moments")
    binom = _binom_table(step.k_max)
    out = np.empty_like(step.values)
    out[0] = step.values[0]
    for r in range(1, out.shape[0]):
        prev, cur = out[r - 1], step.values[r]
        for k in range(step.k_max + 1):
            out[r, k] = sum(binom[k, j] * prev[j] * cur[k - j] for j in range(k + 1))
    return MomentTable(step.params, step.n_min, step.n_max, step.k_max, out, step.method,
                       "passage", step.chain_top)


def raw_to_cumulants(raw: np.ndarray) -> np.ndarray:
    """Cumulants from raw moments along the last axis (``raw[..., 0] == 1``)."""
    raw = np.asarray(raw, dtype=float)
    k_max = raw.shape[-1] - 1
    binom = _binom_table(k_max)
    kap = np.zeros_like(raw)
    for m in range(1, k_max + 1):
        acc = raw[..., m].copy()
        for i in range(1, m):
            acc -= binom[m - 1, i - 1] * kap[..., i] * raw[..., m - i]
        kap[..., m] = acc
    return kap


def cumulants_to_raw(kap: np.ndarray) -> np.ndarray:
    kap = np.asarray(kap, dtype=float)
    k_max = kap.shape[-1] - 1
    binom = _binom_table(k_max)
    raw = np.zeros_like(kap)
    raw[..., 0] = 1.0
    for m in range(1, k_max + 1):
        acc = np.zeros(kap.shape[:-1])
        for i in range(1, m + 1):
            acc = acc + binom[m - 1, i - 1] * kap[..., i] * raw[..., m - i]
        raw[..., m] = acc
    return raw


@nb.njit(cache=True)
def _suffix_kahan(terms):
    """``out[i] = sum(terms[i:])`` with compensated summation from the small end."""
    n = terms.shape[0]
    out = np.empty(n + 1)
    s = 0.0
    c = 0.0
    out[n] = 0.0
    for i in range(n - 1, -1, -1):
        y = terms[i] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[i] = s
    return out


def _kingman_tail_cumulants(theta: float, n_lo: int, n_hi: int, k_max: int, upper: int):
    """``sum_{i>n} (j-1)!/mu(i)^j`` for ``n = n_lo..n_hi`` and ``j = 1..k_max``.

    Direct compensated sums up to ``upper`` plus an Euler-Maclaurin tail.
    """
    c = theta - 1.0
    i = np.arange(n_lo + 1, upper + 1, dtype=float)
    base = 2.0 / (i * (i + c))
    out = np.zeros((n_hi - n_lo + 1, k_max + 1))
    big = float(upper)
    for j in range(1, k_max + 1):
        fact = math.factorial(j - 1)
        suffix = _suffix_kahan(base**j)[: n_hi - n_lo + 1]
        f_l = (2.0 / (big * (big + c))) ** j
        df_l = -j * f_l * (2 * big + c) / (big * (big + c))
        if j == 1:
            integral = 2.0 / big if c == 0 else (2.0 / c) * math.log1p(c / big)
        else:
            # integral of f over [upper, inf): f(x) ~ (2/x^2)^j (1 - j c/x)
            integral = 2.0**j / ((2 * j - 1) * big ** (2 * j - 1)) * (
                1 - j * c * (2 * j - 1) / ((2 * j) * big))
        tail = integral - 0.5 * f_l - df_l / 12.0
        out[:, j] = fact * (suffix + tail)
    if theta == 0.0:
        # telescoping: sum_{i>n} 2/(i(i-1)) = 2/n exactly
        out[:, 1] = 2.0 / np.arange(n_lo, n_hi + 1, dtype=float)
    return out


@dataclasses.dataclass(frozen=True)
class HittingMoments:
    """Moments of ``T_n``, the first time the chain started at infinity hits ``n``.

    ``moments[r, k]`` refers to level ``levels[r]``; ``tail_error`` bounds
    the error of the part of each cumulant coming from levels above
    ``n_max``.
    """

    params: ModelParams
    levels: np.ndarray
    moments: np.ndarray
    cumulants: np.ndarray
    kingman_cumulants: np.ndarray
    excess_cumulants: np.ndarray
    tail_error: np.ndarray
    n_max: int

    def mean(self, n=None):
        return self._pick(n, 1)

    def var(self, n=None):
        return self._pick_cum(n, 2)

    def moment(self, n, k: int):
        return self._pick(n, k)

    def _pick(self, n, k):
        if n is None:
            return self.moments[:, k]
        return self.moments[np.asarray(n) - self.levels[0], k]

    def _pick_cum(self, n, k):
        if n is None:
            return self.cumulants[:, k]
        return self.cumulants[np.asarray(n) - self.levels[0], k]


def _default_nmax(n_hi: int) -> int:
    return max(10**4, 20 * n_hi)


def hitting_moments(params: ModelParams, n_lo: int, n_hi: int, k_max: int = 2,
                    n_max: int | None = None, tail_rtol: float = 1e-6) -> HittingMoments:
    """Moments of ``T_n`` from infinity for every ``n`` in ``n_lo..n_hi``.

    ``T_n`` is the sum over ``i > n`` of independent one-level descent
    times, so its cumulants are sums of per-level cumulants. These split
    into the coalescent-with-mutation part (summed in closed form up to
    an Euler-Maclaurin tail) and the selection excess (summed from the
    recursion up to ``n_max``, with the remainder extrapolated from the
    fitted ``i^{-(2j+1)}`` decay and reported as ``tail_error``).
    """
    if n_lo < 1 or n_hi < n_lo:
        raise ValueError("need 1 <= n_lo <= n_hi")
    n_max = _default_nmax(n_hi) if n_max is None else int(n_max)
    if n_max < n_hi + 10:
        raise ValueError("n_max must exceed the largest level by at least 10")
    upper = 2 * n_hi + 10_000
    king = _kingman_tail_cumulants(params.theta, n_lo, n_hi, k_max, upper)
    excess = np.zeros_like(king)
    tail_err = np.zeros_like(king)
    if params.sigma > 0:
        tab = asg_step_moments(params, n_max, k_max, n_min=n_lo + 1)
        i = tab.levels.astype(float)
        kap = raw_to_cumulants(tab.values)
        for j in range(1, k_max + 1):
            e = kap[:, j] - math.factorial(j - 1) * (2.0 / (i * (i - 1 + params.theta))) ** j
            suffix = _suffix_kahan(e)[: n_hi - n_lo + 1]
            # fit e_j(i) ~ B / i^(2j+1) on the top tenth of the range; the
            # spread against the fit one octave lower sizes the error bar
            scaled = e * i ** (2 * j + 1)
            top = max(1, e.size // 10)
            b = float(np.median(scaled[-top:]))
            half = np.searchsorted(i, i[-1] / 2)
            b_half = float(np.median(scaled[max(0, half - top):half + 1]))
            tail = b / (2 * j * float(n_max) ** (2 * j))
            excess[:, j] = suffix + tail
            spread = abs(b - b_half) / abs(b) if b != 0 else 1.0
            tail_err[:, j] = abs(tail) * (spread + (2 * j + 1) / n_max)
        total_tail = tail_err[:, 1:] / np.maximum(np.abs(king[:, 1:] + excess[:, 1:]), 1e-300)
        if np.max(total_tail) > tail_rtol:
            raise TruncationError(
                f"tail beyond n_max={n_max} is {np.max(total_tail):.2e} of the value; increase N_max")
    cum = king + excess
    raw = cumulants_to_raw(cum)
    return HittingMoments(params, np.arange(n_lo, n_hi + 1), raw, cum, king, excess, tail_err,
                          n_max)


def tail_hitting_moments(params: ModelParams, n: int, k_max: int, n_max: int | None = None):
    """``E[T_n^k]`` for ``k = 0..k_max`` (``T_n`` from infinity) and the tail error bars."""
    hm = hitting_moments(params, n, n, k_max, n_max)
    return hm.moments[0], hm.tail_error[0]


def expected_hitting_times(params: ModelParams, n_lo: int, n_hi: int,
                           n_max: int | None = None) -> np.ndarray:
    return hitting_moments(params, n_lo, n_hi, 1, n_max).moments[:, 1]


def _t0_mean(params: ModelParams, n_max: int | None) -> float:
    """``E[T_0]``: infinite unless mutation can remove the last lineage."""
    if params.theta == 0:
        return math.inf
    e1 = expected_hitting_times(params, 1, 1, n_max)[0]
    step = asg_step_moments(params, 20, 1, n_min=1).value(1, 1)
    return float(e1 + step)


def nu_speed(params: ModelParams, t: float, n_max: int | None = None) -> int:
    """Smallest ``n >= 0`` with ``E[T_n] <= t``."""
    return _nu_and_means(params, t, n_max)[0]


def _nu_and_means(params: ModelParams, t: float, n_max: int | None):
    if not t > 0:
        raise ValueError("t must be positive")
    if t >= _t0_mean(params, n_max):
        return 0, None
    # E[T_n] >= 2/(n + theta) from the coalescent lower bound, < ~2/n + c/n^2 above
    n_hi = int(math.ceil(4.0 / t)) + 20
    means = expected_hitting_times(params, 1, n_hi, n_max)
    if means[-1] > t:
        raise TruncationError(f"t={t} below the computed range; increase N_max")
    idx = int(np.argmax(means <= t))
    return idx + 1, means


@dataclasses.dataclass(frozen=True)
class CdiRow:
    t: float
    nu: int
    mean_at_nu: float
    mean_below_nu: float
    scaled: float
    bound: float

    @property
    def sandwich_ok(self) -> bool:
        return self.mean_at_nu <= self.t < self.mean_below_nu


def cdi_table(params: ModelParams, t_list, n_max: int | None = None) -> list[CdiRow]:
    """``nu_t`` with the bracketing means and ``t*nu_t/2`` for each ``t``."""
    rows = []
    for t in t_list:
        t = float(t)
        nu, means = _nu_and_means(params, t, n_max)
        if nu == 0:
            rows.append(CdiRow(t, 0, _t0_mean(params, n_max), math.inf, 0.0, math.inf))
            continue
        below = _t0_mean(params, n_max) if nu == 1 else float(means[nu - 2])
        bound = math.inf if nu <= 1 else 1.0 / (nu - 1) + 0.01
        rows.append(CdiRow(t, nu, float(means[nu - 1]), below, t * nu / 2, bound))
    return rows


def entrance_law(params: ModelParams, n0: int, n_max: int | None = None) -> EntranceLaw:
    """Gamma approximation, matched on mean and variance, to the law of ``T_{n0}``."""
    if n_max is None:
        n_max = max(4 * n0, n0 + 1000)
    hm = hitting_moments(params, n0, n0, 2, n_max)
    return EntranceLaw(n0, float(hm.cumulants[0, 1]), float(hm.cumulants[0, 2]))


@dataclasses.dataclass(frozen=True)
class EnvelopeSummary:
    """Empirical supremum of a scaled difference and its trend over decades."""

    sup: float
    middle_mean: float
    last_mean: float

    @property
    def ratio(self) -> float:
        return self.last_mean / self.middle_mean

    def trending_up(self, factor: float = 1.1) -> bool:
        return self.last_mean > factor * self.middle_mean


def envelope_summary(n, values, lo: float = 20, hi: float = 1000) -> EnvelopeSummary:
    """Compare mean of ``values`` over the last decade ``[hi/10, hi]`` with
    the decade centred geometrically in ``[lo, hi]``."""
    n = np.asarray(n, dtype=float)
    v = np.asarray(values, dtype=float)
    centre = math.sqrt(lo * hi)
    mid = (n >= centre / math.sqrt(10)) & (n <= centre * math.sqrt(10))
    last = (n >= hi / 10) & (n <= hi)
    rng = (n >= lo) & (n <= hi)
    return EnvelopeSummary(float(np.max(v[rng])), float(np.mean(v[mid])), float(np.mean(v[last])))
