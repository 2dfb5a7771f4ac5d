"""Privacy arithmetic: phase schedules, noise calibration, sensitivity
bounds, and the standard-composition bookkeeping.

Schedule shape: k = ceil(log2 n) phases with chunk sizes n_i = floor(n / 2^i)
and step scales eta_i = 4^-i * eta. Phases whose floored chunk is empty are
dropped (the calibration k is retained, so composed guarantees can only
tighten). Per-phase noise is sigma_i = 4 L eta_i sqrt(ln(k/delta)) / epsilon
and the per-phase gradient threshold is 2 L / (n_i k).

All schedule reals are snapped to 12 significant decimal digits, which is
also the serialization precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def snap12(x: float) -> float:
    return float(f"{x:.12g}")


@dataclass(frozen=True)
class DpGuarantee:
    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon <= 0 or not 0 < self.delta < 1:
            raise ValueError("need epsilon > 0 and delta in (0,1)")


@dataclass(frozen=True)
class PhaseParams:
    i: int
    n_i: int
    eta_i: float
    sigma_i: float
    grad_threshold: float
    chunk_lo: int        # inclusive, 0-based index into the dataset
    chunk_hi: int        # exclusive


@dataclass(frozen=True)
class Schedule:
    n: int
    d: int
    eta: float
    lipschitz: float
    guarantee: DpGuarantee
    k_calib: int                  # ceil(log2 n), used in ln(k/delta)
    phases: tuple

    @property
    def k(self) -> int:
        return len(self.phases)

    @property
    def total_examples(self) -> int:
        return sum(ph.n_i for ph in self.phases)

    @property
    def rvcs_budget(self) -> int:
        return self.d * self.k


def phase_schedule(n: int, d: int, eta: float, lipschitz: float,
                   epsilon: float, delta: float) -> Schedule:
    """Build the halving-chunk schedule; drops empty trailing chunks."""
    if n < 2:
        raise ValueError("need n >= 2")
    if min(d, eta, lipschitz, epsilon, delta) <= 0:
        raise ValueError("all schedule parameters must be positive")
    g = DpGuarantee(epsilon, delta)
    k = math.ceil(math.log2(n))
    noise_factor = math.sqrt(math.log(k / delta)) / epsilon
    # snap the base noise scale once; per-phase sigmas are exact quarter
    # powers of it, so sigma_{i+1}/sigma_i == 1/4 holds exactly. eta_i stays
    # exact (dyadic eta times a power of two).
    sigma_base = snap12(4.0 * lipschitz * (eta / 4.0) * noise_factor)
    phases = []
    lo = 0
    for i in range(1, k + 1):
        n_i = n >> i
        if n_i == 0:
            break
        eta_i = eta * 4.0 ** -i
        sigma_i = sigma_base * 4.0 ** (1 - i)
        thr = snap12(2.0 * lipschitz / (n_i * k))
        phases.append(PhaseParams(i, n_i, eta_i, sigma_i, thr, lo, lo + n_i))
        lo += n_i
    if not phases:
        raise ValueError("n too small for a non-empty schedule")
    return Schedule(n, d, eta, snap12(lipschitz), g, k, tuple(phases))


def compose_guarantee(schedule: Schedule) -> DpGuarantee:
    """Standard composition over the phases: the differing chunk contributes
    (1/2 + 1/2k) epsilon, every other phase epsilon/2k, and each phase
    delta/k."""
    eps, delta = schedule.guarantee.epsilon, schedule.guarantee.delta
    k_cal, k_eff = schedule.k_calib, schedule.k
    eps_out = (0.5 + 0.5 / k_cal) * eps + (k_eff - 1) * eps / (2 * k_cal)
    delta_out = k_eff * (delta / k_cal)
    return DpGuarantee(eps_out, delta_out)


def sensitivity_bound(phase: PhaseParams, is_differing_chunk: bool,
                      lipschitz: float, k: int) -> float:
    """Weight-shift bound across adjacent datasets for one phase: the
    differing chunk moves the regularized optimum by up to 2 L eta_i and the
    solution tolerance adds 2 L eta_i / k; all other phases shift only
    through the tolerance."""
    base = 2.0 * lipschitz * phase.eta_i / k
    if is_differing_chunk:
        return 2.0 * lipschitz * phase.eta_i + base
    return base


def calibration_sensitivity(phase: PhaseParams, lipschitz: float) -> float:
    """The sensitivity the per-phase Gaussian is calibrated against."""
    return 4.0 * lipschitz * phase.eta_i


def d2d_sigma(delta_threshold: float, lam: float, epsilon: float,
              delta: float) -> float:
    """Unlearning noise scale: 2 Delta sqrt(ln(1/delta)) / (lambda epsilon)."""
    _check_d2d(delta_threshold, lam, epsilon, delta)
    return 2.0 * delta_threshold * math.sqrt(math.log(1.0 / delta)) / (lam * epsilon)


def d2d_train_sigma(delta_threshold: float, lam: float, epsilon: float,
                    delta: float) -> float:
    """Training-side noise scale: 4 Delta sqrt(ln(1/delta)) / (lambda epsilon).

    Twice the unlearning-side scale; the two formulas are implemented exactly
    as stated and the asymmetry is surfaced here rather than reconciled.
    """
    _check_d2d(delta_threshold, lam, epsilon, delta)
    return 4.0 * delta_threshold * math.sqrt(math.log(1.0 / delta)) / (lam * epsilon)


def _check_d2d(delta_threshold, lam, epsilon, delta):
    if min(delta_threshold, lam, epsilon) <= 0 or not 0 < delta < 1:
        raise ValueError("d2d parameters must be positive with delta in (0,1)")


def suggested_eta(n: int, d: int, epsilon: float, delta: float,
                  lipschitz: float, dist_bound: float = 1.0) -> float:
    """Utility-optimal step scale (up to constants):
    (D/L) min(4/sqrt(n), epsilon / sqrt(d ln(1/delta)))."""
    return (dist_bound / lipschitz) * min(
        4.0 / math.sqrt(n),
        epsilon / math.sqrt(d * math.log(1.0 / delta)),
    )


def snap_eta_pow2(eta: float) -> float:
    """Nearest power of two; the certified pipeline requires dyadic eta so
    the in-circuit regularizer coefficient 2/eta_i is an exact integer."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return 2.0 ** round(math.log2(eta))


# -- human-readable serialization (embedded in transcripts) --------------------

def schedule_to_text(s: Schedule) -> str:
    # step scales serialize exactly (dyadic); snapped reals at 12 digits
    lines = [
        f"n={s.n}", f"d={s.d}", f"eta={s.eta!r}",
        f"lipschitz={s.lipschitz:.12g}",
        f"epsilon={s.guarantee.epsilon!r}",
        f"delta={s.guarantee.delta!r}", f"k_calib={s.k_calib}",
        f"phases={s.k}",
    ]
    for ph in s.phases:
        lines.append(
            f"phase.{ph.i}={ph.n_i},{ph.eta_i!r},{ph.sigma_i!r},"
            f"{ph.grad_threshold:.12g},{ph.chunk_lo},{ph.chunk_hi}"
        )
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str) -> Schedule:
    kv = {}
    phase_rows = {}
    for line in text.strip().splitlines():
        key, _, val = line.partition("=")
        if key.startswith("phase."):
            phase_rows[int(key.split(".")[1])] = val
        else:
            kv[key] = val
    phases = []
    lo_check = 0
    for i in sorted(phase_rows):
        n_i, eta_i, sigma_i, thr, lo, hi = phase_rows[i].split(",")
        phases.append(PhaseParams(i, int(n_i), float(eta_i), float(sigma_i),
                                  float(thr), int(lo), int(hi)))
        lo_check = int(hi)
    return Schedule(
        n=int(kv["n"]), d=int(kv["d"]), eta=float(kv["eta"]),
        lipschitz=float(kv["lipschitz"]),
        guarantee=DpGuarantee(float(kv["epsilon"]), float(kv["delta"])),
        k_calib=int(kv["k_calib"]), phases=tuple(phases),
    )
