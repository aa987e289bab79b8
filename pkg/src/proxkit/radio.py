"""Radio-propagation models and distance inversion.

Two models relate RSSI (dBm) to inter-device distance (meters):

* a log-linear approximation, ``d = 10**((TX - RSSI) / (10 N))``, with a
  reference level ``TX`` and a path-loss exponent ``N`` (2 in free space);
* free-space propagation, ``P_r = P_t + G_t + G_r + 20 log10(lambda)
  - 20 log10(4 pi d) - 10 log10(L)``, inverted in closed form.

A dB-style path-loss attenuation scalar, ``P_t - 41 - RSSI``, is kept as
a feature; the constant 41 is an opaque calibration constant.

``fit_params`` tunes model parameters on (mean RSSI, true distance)
pairs by minimizing mean absolute distance error: seeded uniform random
sampling over a parameter box, then coordinate-wise golden-section
refinement around the best sample. Deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import DataError

_LOG10_4PI = math.log10(4.0 * math.pi)

#: Default search bounds per parameter (BLE-plausible ranges).
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "tx_ref": (-80.0, -20.0),
    "n_exponent": (1.0, 6.0),
    "p_t": (-20.0, 20.0),
    "g_t": (-5.0, 10.0),
    "g_r": (-5.0, 10.0),
    "sys_loss": (1.0, 10.0),
}

#: Carrier wavelength default: 2.45 GHz, meters.
DEFAULT_LAMBDA_M = 0.1224


class NonPositiveDistanceError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


@dataclass(frozen=True)
class RadioParams:
    """Parameters shared by both propagation models.

    ``tx_ref``/``n_exponent`` drive the log-linear model; ``p_t`` also
    feeds the path-loss scalar; the remaining fields belong to the
    free-space model.
    """

    tx_ref: float = -50.0
    n_exponent: float = 2.0
    p_t: float = 0.0
    g_t: float = 0.0
    g_r: float = 0.0
    lambda_m: float = DEFAULT_LAMBDA_M
    sys_loss: float = 1.0

    def __post_init__(self):
        if self.n_exponent <= 0:
            raise DataError(f"n_exponent must be > 0, got {self.n_exponent}")
        if self.lambda_m <= 0:
            raise DataError(f"lambda_m must be > 0, got {self.lambda_m}")
        if self.sys_loss < 1:
            raise DataError(f"sys_loss must be >= 1, got {self.sys_loss}")

    def to_dict(self) -> dict[str, float]:
        return {
            "tx_ref": self.tx_ref, "n_exponent": self.n_exponent,
            "p_t": self.p_t, "g_t": self.g_t, "g_r": self.g_r,
            "lambda_m": self.lambda_m, "sys_loss": self.sys_loss,
        }


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds for the fitted parameters, sample count, RNG seed.

    Parameters not present in ``bounds`` stay at their value in the base
    :class:`RadioParams`.
    """

    bounds: Mapping[str, tuple[float, float]]
    iterations: int = 2000
    seed: int = 0
    refine_passes: int = 4
    refine_iters: int = 80

    def __post_init__(self):
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")
        for name, (lo, hi) in self.bounds.items():
            if name not in DEFAULT_BOUNDS and name != "lambda_m":
                raise DataError(f"unknown search parameter {name!r}")
            if not lo < hi:
                raise DataError(f"bad bounds for {name!r}: ({lo}, {hi})")


def linear_approx_distance(params: RadioParams, rssi: float) -> float:
    """Distance estimate from the log-linear model: 10**((TX-RSSI)/(10 N))."""
    return 10.0 ** ((params.tx_ref - rssi) / (10.0 * params.n_exponent))


def path_loss_attenuation(params: RadioParams, rssi: float) -> float:
    """Path-loss attenuation in dB: P_t - 41 - RSSI."""
    return params.p_t - 41.0 - rssi


def friis_received_power(params: RadioParams, d: float) -> float:
    """Free-space received power (dBm) at distance ``d`` (meters)."""
    if d <= 0:
        raise NonPositiveDistanceError(f"distance must be > 0, got {d}")
    return (params.p_t + params.g_t + params.g_r
            + 20.0 * math.log10(params.lambda_m)
            - 20.0 * math.log10(4.0 * math.pi * d)
            - 10.0 * math.log10(params.sys_loss))


def friis_distance(params: RadioParams, p_r: float) -> float:
    """Invert the free-space model: the unique d > 0 receiving ``p_r``."""
    exponent = (params.p_t + params.g_t + params.g_r
                - 10.0 * math.log10(params.sys_loss) - p_r) / 20.0
    return params.lambda_m / (4.0 * math.pi) * 10.0 ** exponent


ModelName = Literal["linear", "friis"]


def _predict_distances(model: ModelName, params: RadioParams,
                       rssi: np.ndarray) -> np.ndarray:
    if model == "linear":
        return 10.0 ** ((params.tx_ref - rssi) / (10.0 * params.n_exponent))
    if model == "friis":
        exponent = (params.p_t + params.g_t + params.g_r
                    - 10.0 * math.log10(params.sys_loss) - rssi) / 20.0
        return params.lambda_m / (4.0 * math.pi) * 10.0 ** exponent
    raise DataError(f"unknown radio model {model!r}")


def mean_abs_error(model: ModelName, params: RadioParams,
                   rssi: np.ndarray, d_true: np.ndarray) -> float:
    return float(np.mean(np.abs(d_true - _predict_distances(model, params, rssi))))


def _golden_min(f, lo: float, hi: float, iters: int) -> tuple[float, float]:
    """Golden-section minimum of ``f`` on [lo, hi]; returns (x, f(x))."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def fit_params(
    dataset: Sequence[tuple[float, float]],
    model: ModelName,
    space: SearchSpace,
    base: RadioParams | None = None,
    *,
    refine: bool = True,
) -> tuple[RadioParams, float]:
    """Fit radio parameters to (mean RSSI, true distance) pairs.

    Stage 1 draws ``space.iterations`` uniform samples from the bounds
    box; sample ``i`` uses its own counter-based stream keyed by
    ``(seed, i)``, so the best-so-far loss is non-increasing in the
    iteration count. Stage 2 (``refine=True``) runs coordinate-wise
    golden-section passes in a shrinking bracket around the best sample;
    the returned point is the best over *all* evaluated points.

    Returns:
        (params, loss) with loss = mean |d - d_predicted|.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("fit_params needs at least one (rssi, d) pair")
    base = base or RadioParams()
    rssi = np.asarray([p[0] for p in dataset], dtype=float)
    d_true = np.asarray([p[1] for p in dataset], dtype=float)

    names = sorted(space.bounds)
    los = np.array([space.bounds[n][0] for n in names])
    his = np.array([space.bounds[n][1] for n in names])

    def loss_at(vec: np.ndarray) -> float:
        params = replace(base, **dict(zip(names, (float(v) for v in vec))))
        return mean_abs_error(model, params, rssi, d_true)

    best_vec: np.ndarray | None = None
    best_loss = math.inf
    for i in range(space.iterations):
        rng = np.random.default_rng((space.seed, i))
        vec = los + rng.random(len(names)) * (his - los)
        loss = loss_at(vec)
        if loss < best_loss:
            best_loss, best_vec = loss, vec
    assert best_vec is not None

    if refine:
        vec = best_vec.copy()
        width = (his - los) / 5.0
        for _ in range(space.refine_passes):
            # several sweeps per width level: correlated parameters move
            # the minimum along a valley one coordinate at a time
            for _ in range(10):
                improved = False
                for j in range(len(names)):
                    lo_j = max(los[j], vec[j] - width[j] / 2.0)
                    hi_j = min(his[j], vec[j] + width[j] / 2.0)

                    def f(x, j=j):
                        trial = vec.copy()
                        trial[j] = x
                        return loss_at(trial)

                    x, fx = _golden_min(f, lo_j, hi_j, space.refine_iters)
                    if fx < best_loss:
                        best_loss = fx
                        vec[j] = x
                        best_vec = vec.copy()
                        improved = True
                if not improved:
                    break
            width /= 4.0

    params = replace(base, **dict(zip(names, (float(v) for v in best_vec))))
    return params, best_loss
