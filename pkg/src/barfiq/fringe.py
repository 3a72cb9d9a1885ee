"""Atomic-phase reconstruction from interferometric fringe shots.

Each shot carries a scanned Raman phase theta and a population ratio rho that
follows P(theta) = P0 + a*cos(theta) + b*sin(theta) locally. A per-shot window
fit recovers (P0, a, b); inverting the fitted fringe at the shot's rho yields
two candidate atomic phases, disambiguated with the real-time phase estimate
as a circular prior. The supervised target is the wrapped residual
delta_phi = wrap(phi_ai - phi_rt).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateFitError, DomainError, InsufficientWindowError
from .numcore import wrap_pi

STATUS_OK = "ok"
STATUS_MISSING_WINDOW = "missing_insufficient_window"
STATUS_MISSING_AMPLITUDE = "missing_degenerate_amplitude"

DEFAULT_WINDOW_HALF_WIDTH = 10
DEFAULT_MIN_POINTS = 5
DEFAULT_EPS_AMP = 1e-3

# pivot-ratio threshold treated as a rank-deficient design matrix
_COND_LIMIT = 1e12

SHOT_CSV_HEADER = ["iter", "theta", "rho", "phi_rt", "a", "c", "r"]
RESULT_CSV_HEADER = ["iter", "phi_ai", "delta_phi", "status"]


@dataclass
class ShotRecord:
    iter: int
    theta: float
    rho: float
    phi_rt: float
    aux_a: float = 0.0
    aux_c: float = 0.0
    aux_r: float = 0.0


@dataclass
class FringeFit:
    p0_hat: float
    a_hat: float
    b_hat: float
    r_hat: float
    window_size: int


@dataclass
class PhaseResult:
    phi_ai: float | None
    delta_phi: float | None
    status: str

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def _solve3(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for the 3x3 normal equations.

    Raises DegenerateFitError when the pivot ratio indicates rank deficiency.
    """
    aug = np.hstack([mat.astype(np.float64), rhs.reshape(3, 1)])
    pivots = []
    for col in range(3):
        pivot_row = col + int(np.argmax(np.abs(aug[col:, col])))
        if pivot_row != col:
            aug[[col, pivot_row]] = aug[[pivot_row, col]]
        pivot = aug[col, col]
        pivots.append(abs(pivot))
        if pivot == 0.0:
            raise DegenerateFitError("singular fringe design matrix")
        for row in range(col + 1, 3):
            factor = aug[row, col] / pivot
            aug[row, col:] -= factor * aug[col, col:]
    if min(pivots) < max(pivots) / _COND_LIMIT:
        raise DegenerateFitError("ill-conditioned fringe design matrix")
    sol = np.zeros(3)
    for row in (2, 1, 0):
        sol[row] = (aug[row, 3] - aug[row, row + 1 : 3] @ sol[row + 1 : 3]) / aug[row, row]
    return sol


def fit_fringe_window(window: list[ShotRecord], min_points: int = DEFAULT_MIN_POINTS) -> FringeFit:
    """Least-squares fit of P(theta) = P0 + a*cos(theta) + b*sin(theta)."""
    n = len(window)
    if n < min_points:
        raise InsufficientWindowError(f"window of {n} shots, need {min_points}")
    theta = np.array([s.theta for s in window])
    rho = np.array([s.rho for s in window])
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # Normal equations X^T X beta = X^T p for the 3-column design [1, cos, sin].
    xtx = np.array(
        [
            [n, cos_t.sum(), sin_t.sum()],
            [cos_t.sum(), (cos_t * cos_t).sum(), (cos_t * sin_t).sum()],
            [sin_t.sum(), (cos_t * sin_t).sum(), (sin_t * sin_t).sum()],
        ]
    )
    xtp = np.array([rho.sum(), (cos_t * rho).sum(), (sin_t * rho).sum()])
    p0, a, b = _solve3(xtx, xtp)
    return FringeFit(
        p0_hat=float(p0),
        a_hat=float(a),
        b_hat=float(b),
        r_hat=math.hypot(a, b),
        window_size=n,
    )


def invert_shot(shot: ShotRecord, fit: FringeFit, eps_amp: float = DEFAULT_EPS_AMP) -> PhaseResult:
    """Invert the fitted fringe at one shot, resolving the cosine ambiguity.

    The two candidates wrap(+-d - theta) are scored by circular distance to
    the real-time prior; ties keep the d - theta branch.
    """
    if fit.r_hat <= eps_amp:
        return PhaseResult(phi_ai=None, delta_phi=None, status=STATUS_MISSING_AMPLITUDE)
    u = min(1.0, max(-1.0, (shot.rho - fit.p0_hat) / fit.r_hat))
    d = math.acos(u)
    cand_pos = wrap_pi(d - shot.theta)
    cand_neg = wrap_pi(-d - shot.theta)
    dist_pos = abs(wrap_pi(cand_pos - shot.phi_rt))
    dist_neg = abs(wrap_pi(cand_neg - shot.phi_rt))
    phi_ai = cand_pos if dist_pos <= dist_neg else cand_neg
    return PhaseResult(
        phi_ai=phi_ai,
        delta_phi=wrap_pi(phi_ai - shot.phi_rt),
        status=STATUS_OK,
    )


def reconstruct_stream(
    shots: list[ShotRecord],
    window_half_width: int = DEFAULT_WINDOW_HALF_WIDTH,
    min_points: int = DEFAULT_MIN_POINTS,
    eps_amp: float = DEFAULT_EPS_AMP,
) -> list[PhaseResult]:
    """Per-shot local fit + inversion over a whole stream.

    Windows are symmetric index neighborhoods of up to 2*half_width + 1 shots,
    truncated at stream edges. Fit failures become missing statuses rather
    than exceptions.
    """
    n = len(shots)
    if n == 0:
        raise DomainError("empty shot stream")
    results: list[PhaseResult] = []
    for i in range(n):
        lo = max(0, i - window_half_width)
        hi = min(n, i + window_half_width + 1)
        try:
            fit = fit_fringe_window(shots[lo:hi], min_points=min_points)
        except InsufficientWindowError:
            results.append(PhaseResult(None, None, STATUS_MISSING_WINDOW))
            continue
        except DegenerateFitError:
            results.append(PhaseResult(None, None, STATUS_MISSING_AMPLITUDE))
            continue
        results.append(invert_shot(shots[i], fit, eps_amp=eps_amp))
    return results


# -- CSV wire format -----------------------------------------------------------


def write_shots_csv(path, shots: list[ShotRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SHOT_CSV_HEADER)
        for s in shots:
            writer.writerow(
                [s.iter, repr(s.theta), repr(s.rho), repr(s.phi_rt), repr(s.aux_a), repr(s.aux_c), repr(s.aux_r)]
            )


def read_shots_csv(path) -> list[ShotRecord]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open shots CSV: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SHOT_CSV_HEADER:
            raise DataError(f"unexpected shots CSV header: {header}")
        shots = []
        prev_iter = None
        for row in reader:
            if len(row) != 7:
                raise DataError(f"malformed shots CSV row: {row}")
            it = int(row[0])
            if prev_iter is not None and it <= prev_iter:
                raise DataError("shot iter values must be strictly increasing")
            prev_iter = it
            vals = [float(v) for v in row[1:]]
            if not (math.isfinite(vals[0]) and math.isfinite(vals[2])):
                raise DataError(f"non-finite theta/phi_rt in row {it}")
            shots.append(ShotRecord(it, *vals))
    if not shots:
        raise DataError("shots CSV contains no rows")
    return shots


def write_results_csv(path, shots: list[ShotRecord], results: list[PhaseResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_CSV_HEADER)
        for s, r in zip(shots, results):
            phi = "" if r.phi_ai is None else repr(r.phi_ai)
            dphi = "" if r.delta_phi is None else repr(r.delta_phi)
            writer.writerow([s.iter, phi, dphi, r.status])
