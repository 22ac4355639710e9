"""Statistical utilities shared by the simulation campaigns.

Random streams are PCG64DXSM generators positioned by jump-ahead, so the
stream of any replicate can be built directly from ``(seed, index)``
without generating the streams before it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from typing import Callable, Iterable

import numpy as np
from scipy import special
from scipy import stats as _sps

__all__ = [
    "stream_for",
    "normal_cdf",
    "ks_one_sample",
    "mean_se",
    "var_se",
    "cov_se",
    "moment_ratio_se",
    "paired_ratio_se",
    "chi_square_updown",
    "config_hash",
    "McRow",
    "McReport",
]

# Each (replicate, substream) pair owns a block of 2**56 generator steps.
_BLOCK_BITS = 56
_SUBSTREAM_BITS = 8
MAX_REPLICATE_INDEX = 2**63


def stream_for(master_seed: int, replicate_index: int, substream: int = 0) -> np.random.Generator:
    """Independent, reproducible random stream for one replicate.

    Parameters
    ----------
    master_seed : int
        Campaign seed.
    replicate_index : int
        Replicate number, ``0 <= replicate_index < 2**63``.
    substream : int
        Optional sub-stream of the replicate (``0..255``), used when a
        replicate needs several streams whose consumption must not
        interfere (common random numbers).

    Returns
    -------
    numpy.random.Generator
    """
    if not 0 <= replicate_index < MAX_REPLICATE_INDEX:
        raise ValueError(f"replicate_index out of range: {replicate_index}")
    if not 0 <= substream < 2**_SUBSTREAM_BITS:
        raise ValueError(f"substream out of range: {substream}")
    bg = np.random.PCG64DXSM(master_seed)
    bg.advance(((replicate_index << _SUBSTREAM_BITS) | substream) << _BLOCK_BITS)
    return np.random.Generator(bg)


def normal_cdf(x, mean: float = 0.0, sd: float = 1.0):
    """Normal distribution function, via the complementary error function."""
    z = (np.asarray(x, dtype=float) - mean) / sd
    return special.ndtr(z)


def ks_one_sample(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against a continuous ``cdf``.

    The p-value uses the asymptotic Kolmogorov distribution of
    ``sqrt(n) * D``.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 50:
        raise ValueError(f"ks_one_sample needs at least 50 samples, got {n}")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    d = float(max(d_plus, d_minus))
    return d, float(special.kolmogorov(math.sqrt(n) * d))


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = x.size
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(n))


def var_se(x) -> tuple[float, float]:
    """Unbiased sample variance and its large-sample standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    s2 = float(np.sum(d * d) / (n - 1))
    m4 = float(np.mean(d**4))
    se2 = (m4 - (n - 3) / (n - 1) * s2 * s2) / n
    return s2, math.sqrt(max(se2, 0.0))


def cov_se(x, y) -> tuple[float, float]:
    """Unbiased sample covariance with a delta-method standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    prod = (x - x.mean()) * (y - y.mean())
    c = float(np.sum(prod) / (n - 1))
    return c, float(np.std(prod, ddof=1) / math.sqrt(n))


def moment_ratio_se(a: float, se_a: float, b: float, se_b: float) -> tuple[float, float]:
    """Ratio ``a / b`` of independent estimates with a delta-method SE."""
    r = a / b
    return r, abs(r) * math.sqrt((se_a / a) ** 2 + (se_b / b) ** 2)


def paired_ratio_se(x, y) -> tuple[float, float]:
    """``mean(x) / mean(y)`` for paired samples, SE by linearisation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    my = float(np.mean(y))
    r = float(np.mean(x)) / my
    z = (x - r * y) / my
    return r, float(np.std(z, ddof=1) / math.sqrt(x.size))


def chi_square_updown(ups, totals, probs, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Chi-square test of up/down counts per level against up-probabilities.

    Each level contributes a two-cell (up, down) table; levels whose
    expected count in either cell is below ``min_expected`` are pooled out.

    Returns
    -------
    (statistic, degrees of freedom, p-value)
    """
    ups = np.asarray(ups, dtype=float)
    totals = np.asarray(totals, dtype=float)
    probs = np.asarray(probs, dtype=float)
    exp_up = totals * probs
    exp_down = totals * (1.0 - probs)
    keep = (exp_up >= min_expected) & (exp_down >= min_expected)
    if not np.any(keep):
        raise ValueError("no level has enough expected counts")
    u, e_u, e_d, tot = ups[keep], exp_up[keep], exp_down[keep], totals[keep]
    stat = float(np.sum((u - e_u) ** 2 / e_u + ((tot - u) - e_d) ** 2 / e_d))
    dof = int(keep.sum())
    return stat, dof, float(_sps.chi2.sf(stat, dof))


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON serialisation of ``config``."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


@dataclasses.dataclass
class McRow:
    """One reported statistic.

    ``tag`` records where ``target`` comes from: ``"closed-form"``,
    ``"limit-theorem"``, ``"derived"`` (computed here from the limiting
    Gaussian process), ``"recursion"`` (exact numerics), ``"bound"`` (an
    inequality, ``target`` is the threshold) or ``"none"``.
    """

    experiment: str
    statistic: str
    estimate: float
    stderr: float
    target: float | None = None
    tag: str = "none"
    epsilon: float | None = None
    t: float | None = None
    p_value: float | None = None
    n: int | None = None


CSV_COLUMNS = ("experiment", "epsilon", "t", "statistic", "estimate", "stderr", "target", "tag")


@dataclasses.dataclass
class McReport:
    """Replicate-level results of one campaign with provenance."""

    config_hash: str
    seed: int
    replicates: int
    rows: list[McRow] = dataclasses.field(default_factory=list)
    config: dict = dataclasses.field(default_factory=dict)
    schema_version: int = 1

    def add(self, **kw) -> McRow:
        row = McRow(**kw)
        if row.tag != "none" and row.target is None:
            raise ValueError(f"row {row.statistic!r} has a tag but no target")
        self.rows.append(row)
        return row

    def find(self, statistic: str, **match) -> list[McRow]:
        out = []
        for r in self.rows:
            if r.statistic != statistic:
                continue
            if all(_close(getattr(r, k), v) for k, v in match.items()):
                out.append(r)
        return out

    def get(self, statistic: str, **match) -> McRow:
        rows = self.find(statistic, **match)
        if len(rows) != 1:
            raise KeyError(f"{statistic} {match}: {len(rows)} matching rows")
        return rows[0]

    def validate(self) -> None:
        for r in self.rows:
            n = r.n if r.n is not None else self.replicates
            if r.tag != "recursion" and r.p_value is None and n > 1 and not (r.stderr > 0):
                raise ValueError(f"row {r.statistic!r} lacks a positive stderr")
            if r.target is not None and r.tag == "none":
                raise ValueError(f"row {r.statistic!r} target has no provenance tag")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "replicates": self.replicates,
            "config": self.config,
            "rows": [dataclasses.asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, default=_jsonable) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash} seed={self.seed} schema={self.schema_version}\n")
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.rows:
            vals = [getattr(r, c) for c in CSV_COLUMNS]
            buf.write(",".join(_fmt(v) for v in vals) + "\n")
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "McReport":
        rows = [McRow(**r) for r in d["rows"]]
        return cls(d["config_hash"], d["seed"], d["replicates"], rows, d.get("config", {}),
                   d.get("schema_version", 1))


def _close(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, (float, int)):
        return math.isclose(a, b, rel_tol=1e-12)
    return a == b


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summarize(rows: Iterable[McRow]) -> str:
    lines = []
    for r in rows:
        tgt = "" if r.target is None else f" target={r.target:.6g} [{r.tag}]"
        pv = "" if r.p_value is None else f" p={r.p_value:.3g}"
        lines.append(f"{r.experiment:>10s} {r.statistic:<28s} eps={r.epsilon} t={r.t} "
                     f"est={r.estimate:.6g} se={r.stderr:.3g}{pv}{tgt}")
    return "\n".join(lines)
