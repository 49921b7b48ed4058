"""Simulated economies with known coefficient laws, plus oracle forecasts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..dataio import build_lag_panel
from ..features import StateMatrix

__all__ = [
    "DATA_POOR",
    "DATA_RICH",
    "DgpSpec",
    "SimData",
    "UnknownDgpError",
    "data_rich_state",
    "oracle_forecast",
    "oracle_forecasts",
    "simulate_dgp",
    "tiny_state",
]

DATA_POOR = ("ar1", "ar2", "ar3", "ar4", "ar5", "ar6")
DATA_RICH = ("dr1", "dr2", "dr3", "dr4", "dr5", "dr6")

AR_BETA = np.array([0.0, 0.7, -0.2])
SETAR_HI = np.array([2.0, 0.8, -0.2])
SETAR_LO = np.array([0.25, 0.4, -0.2])
PERSIST_LO = np.array([0.25, 1.1, -0.4])
SETAR4_LO = np.array([0.0, 0.4, -0.2])
BREAK_PRE = np.array([0.0, 0.7, -0.35])
BREAK_POST = np.array([0.15, 0.6, 0.0])

# Noise scale for the data-poor laws whose scale is left open; chosen so that
# both threshold regimes are visited (see the decisions notes).
DEFAULT_SIGMA = {"ar1": 1.0, "ar2": 4.0, "ar3": 1.0, "ar4": 0.5, "ar5": 0.3, "ar6": 4.0}

FACTOR_RHO = 0.8
REGRESSOR_RHO = 0.5
COPIES_PER_FACTOR = 50
COPY_NOISE = (0.005, 0.03)
NOISE_TO_SIGNAL = 1.5
RW_STEP = 0.05
SV_RHO, SV_SD = 0.95, 0.1


class UnknownDgpError(ValueError):
    pass


@dataclass(frozen=True)
class DgpSpec:
    id: str
    T: int = 150
    sigma: float | None = None
    seed: int = 0
    burn_in: int = 200
    break_frac: float | None = None
    n_train: int | None = None
    y0: tuple[float, float] | None = None

    def __post_init__(self):
        if self.id not in DATA_POOR + DATA_RICH:
            raise UnknownDgpError(f"unknown DGP id {self.id!r}; expected one of {DATA_POOR + DATA_RICH}")
        if self.T < 60:
            raise ValueError("T must be at least 60")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def data_rich(self) -> bool:
        return self.id in DATA_RICH

    @property
    def noise_sd(self) -> float:
        return DEFAULT_SIGMA.get(self.id, 1.0) if self.sigma is None else self.sigma

    @property
    def break_point(self) -> int:
        frac = self.break_frac if self.break_frac is not None else (0.3 if self.id == "dr5" else 0.5)
        return int(round(frac * self.T))

    @property
    def train_size(self) -> int:
        if self.n_train is not None:
            return self.n_train
        return int(round(0.4 * self.T)) if self.data_rich else self.T - 40

    @classmethod
    def rich(cls, id: str, **kw) -> "DgpSpec":
        return cls(id, **{"T": 1000, **kw})


@dataclass
class SimData:
    """One simulated sample.

    ``X[t]`` are the true regressors of period ``t`` and ``beta[t]`` the
    coefficients that generated ``y[t]``.  ``presample`` holds the two values
    preceding ``y[0]`` (data-poor laws only).
    """

    spec: DgpSpec
    y: np.ndarray
    X: np.ndarray
    beta: np.ndarray
    noise_sd: np.ndarray
    presample: np.ndarray = field(default_factory=lambda: np.zeros(2))
    panel: np.ndarray | None = None
    factors: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.y.size

    @property
    def regime(self) -> np.ndarray | None:
        """Threshold-regime indicator (True = upper regime) where one exists."""
        sid = self.spec.id
        lag1 = self.X[:, 1] if not self.spec.data_rich else None
        if sid in ("ar1",):
            return np.where(np.arange(self.T) < self.spec.break_point, lag1 >= 1, False)
        if sid == "ar2":
            return lag1 >= 0
        if sid == "ar4":
            return lag1 >= 1
        if sid == "ar6":
            return np.where(np.arange(self.T) < self.spec.break_point, lag1 >= 0, False)
        if self.factors is not None and sid in ("dr1", "dr4", "dr5"):
            return self.factors[:, 0] > 0
        return None


def _poor_beta(sid: str, t: int, lag1: float, brk: int) -> np.ndarray:
    if sid == "ar1":
        if t >= brk:
            return AR_BETA
        return SETAR_HI if lag1 >= 1 else SETAR_LO
    if sid == "ar2" or (sid == "ar6" and t < brk):
        return SETAR_HI if lag1 >= 0 else PERSIST_LO
    if sid in ("ar3", "ar6"):
        return AR_BETA
    if sid == "ar4":
        return SETAR_HI if lag1 >= 1 else SETAR4_LO
    if sid == "ar5":
        return BREAK_PRE if t < brk else BREAK_POST
    raise UnknownDgpError(sid)


def _simulate_poor(spec: DgpSpec, rng: np.random.Generator) -> SimData:
    T, burn, brk = spec.T, spec.burn_in, spec.break_point
    n = T + burn
    eps = rng.standard_normal(n) * spec.noise_sd
    y = np.zeros(n + 2)
    if spec.y0 is not None:
        y[0], y[1] = spec.y0[1], spec.y0[0]
    X = np.zeros((n, 3))
    B = np.zeros((n, 3))
    for i in range(n):
        t = i - burn
        x = np.array([1.0, y[i + 1], y[i]])
        b = _poor_beta(spec.id, t, x[1], brk)
        X[i], B[i] = x, b
        y[i + 2] = x @ b + eps[i]
    keep = slice(burn, n)
    return SimData(spec, y[2:][keep].copy(), X[keep].copy(), B[keep].copy(),
                   np.full(T, spec.noise_sd), presample=y[burn: burn + 2].copy())


def _ar1(rng, n, rho, burn):
    e = rng.standard_normal(n + burn) * np.sqrt(1 - rho**2)
    x = np.zeros(n + burn)
    x[0] = rng.standard_normal()
    for i in range(1, n + burn):
        x[i] = rho * x[i - 1] + e[i]
    return x[burn:]


def _simulate_rich(spec: DgpSpec, rng: np.random.Generator) -> SimData:
    T, sid = spec.T, spec.id
    burn = max(spec.burn_in, 1)
    F = np.column_stack([_ar1(rng, T, FACTOR_RHO, burn) for _ in range(2)])
    R = np.column_stack([_ar1(rng, T, REGRESSOR_RHO, burn) for _ in range(2)])
    copies = []
    for i in range(2):
        sd = F[:, i].std()
        scale = rng.uniform(*COPY_NOISE, size=COPIES_PER_FACTOR) * sd
        copies.append(F[:, [i]] + rng.standard_normal((T, COPIES_PER_FACTOR)) * scale)
    panel = np.hstack(copies)
    t = np.arange(T)
    hi = F[:, 0] > 0
    slow = np.sin(2 * np.pi * t / T)
    B = np.zeros((T, 3))
    B[:, 1], B[:, 2] = 1.0, -0.5
    if sid == "dr1":
        B[:, 0] = np.where(hi, 1.0, -1.0)
        B[:, 1] = np.where(hi, 1.5, -0.5)
        B[:, 2] = np.where(hi, -0.5, 1.0)
    elif sid == "dr2":
        B[:, 1] = 1.0 + np.cumsum(rng.standard_normal(T) * RW_STEP)
        B[:, 2] = -0.5 + np.cumsum(rng.standard_normal(T) * RW_STEP)
    elif sid == "dr3":
        B[:, 1] = F[:, 0]
        B[:, 2] = slow
    elif sid == "dr4":
        B[:, 1] = np.where(hi, 1.5, -0.5)
        B[:, 2] = slow
    elif sid == "dr5":
        B[:, 1] = np.where(hi, 1.5, -0.5)
        B[:, 2] = np.where(t < spec.break_point, 1.0, -1.0)
    X = np.column_stack([np.ones(T), R])
    signal = np.einsum("tk,tk->t", X, B)
    base_sd = np.sqrt(NOISE_TO_SIGNAL * signal.var())
    if sid == "dr6":
        h = _ar1(rng, T, SV_RHO, burn) * SV_SD / np.sqrt(1 - SV_RHO**2)
        vol = np.exp(h / 2)
        sd_t = base_sd * vol / np.sqrt(np.mean(vol**2))
    else:
        sd_t = np.full(T, base_sd)
    if spec.sigma is not None:
        sd_t = sd_t / base_sd * spec.sigma
    y = signal + rng.standard_normal(T) * sd_t
    return SimData(spec, y, X, B, sd_t, panel=panel, factors=F)


def simulate_dgp(spec: DgpSpec) -> SimData:
    """Draw one sample; fully determined by ``spec`` (including its seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, DATA_POOR.index(spec.id)
                                                        if spec.id in DATA_POOR else 6 + DATA_RICH.index(spec.id)]))
    return _simulate_rich(spec, rng) if spec.data_rich else _simulate_poor(spec, rng)


def oracle_forecast(sim: SimData, origin: int, h: int) -> float:
    """Forecast of ``y[origin + h]`` with information through ``origin``.

    Data-poor laws: the true law is iterated with future shocks set to zero.
    Data-rich laws are static, so the target's own regressors are used with
    the true coefficients; random-walk coefficients are frozen at the end of
    the training window.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    spec = sim.spec
    target = origin + h
    if spec.data_rich:
        beta = sim.beta[target]
        if spec.id == "dr2":
            beta = np.array([sim.beta[0, 0], *sim.beta[min(spec.train_size, sim.T) - 1, 1:]])
        return float(sim.X[target] @ beta)
    full = np.concatenate([sim.presample, sim.y[: origin + 1]])
    path = list(full[-2:])
    for step in range(1, h + 1):
        t = origin + step
        x = np.array([1.0, path[-1], path[-2]])
        path.append(float(x @ _poor_beta(spec.id, t, x[1], spec.break_point)))
    return path[-1]


def oracle_forecasts(sim: SimData, targets, h: int) -> np.ndarray:
    return np.array([oracle_forecast(sim, int(t) - h, h) for t in np.atleast_1d(targets)])


def tiny_state(y, own_lags: int = 8) -> StateMatrix:
    """Own lags of ``y`` and a trend, row ``t`` using data through ``t-1``."""
    y = np.asarray(y, dtype=float)
    T = y.size
    names = [f"y_lag{p}" for p in range(1, own_lags + 1)] + ["trend"]
    groups = {n: "own-lag" for n in names[:-1]} | {"trend": "trend"}
    vals = np.column_stack([build_lag_panel(y, own_lags), np.arange(1, T + 1, dtype=float)])
    return StateMatrix(vals, tuple(names), groups, own_lags)


def data_rich_state(sim: SimData, own_lags: int = 4) -> StateMatrix:
    """Noisy factor copies (same period), lags of ``y`` and a trend."""
    if sim.panel is None:
        raise ValueError("not a data-rich simulation")
    T, N = sim.panel.shape
    names = [f"P{i + 1}" for i in range(N)] + [f"y_lag{p}" for p in range(1, own_lags + 1)] + ["trend"]
    groups = {n: "raw-lag" for n in names[:N]}
    groups |= {n: "own-lag" for n in names[N:-1]}
    groups["trend"] = "trend"
    vals = np.column_stack([sim.panel, build_lag_panel(sim.y, own_lags), np.arange(1, T + 1, dtype=float)])
    return StateMatrix(vals, tuple(names), groups, N + own_lags)


def with_seed(spec: DgpSpec, seed: int) -> DgpSpec:
    return replace(spec, seed=seed)
