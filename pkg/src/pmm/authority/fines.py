"""Fines for detected dishonesty.

A rider-witness failure costs the provider a fixed ``N`` (paid to the rider).
Randomized audits catch overreporting only with probability ``p``, so the fine
must make cheating unprofitable in expectation::

    U_h > (1 - p) U_d - p F    <=>    F > (U_d - U_h) / p - U_d
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..audits.rra import rra_sample


@dataclass(frozen=True)
class FinePolicy:
    rider: float = 100.0  # N per unresolved receipt
    floor: float = 10.0
    u_honest: float = 80.0
    u_dishonest: float = 100.0
    margin: float = 1.0


def fine_threshold(u_d: float, u_h: float, p: float) -> float:
    """The bound ``(U_d - U_h)/p - U_d`` that the fine must strictly exceed."""
    if not 0 < p <= 1:
        raise ValueError("detection probability must lie in (0, 1]")
    return (u_d - u_h) / p - u_d


def rra_fine(u_d: float, u_h: float, p: float, floor: float, margin: float) -> float:
    if margin <= 0:
        raise ValueError("margin must be positive so the inequality is strict")
    return max(floor, fine_threshold(u_d, u_h, p) + margin)


def levy_fine(detection: str, policy: FinePolicy, p: float = 1.0) -> float:
    """Fine for one detection event: ``"RiderWitness"``, ``"RRA"``, or ``"none"``."""
    if detection == "none":
        return 0.0
    if detection == "RiderWitness":
        return policy.rider
    if detection == "RRA":
        return rra_fine(policy.u_dishonest, policy.u_honest, p, policy.floor, policy.margin)
    raise ValueError(f"unknown detection kind {detection!r}")


def fine_margin_for_confidence(delta: float, p: float, n_runs: int, z: float = 4.0) -> float:
    """Extra fine so the inequality survives a sample detection rate ``z`` standard errors below ``p``.

    ``delta = U_d - U_h``. Returns ``inf`` when the lower bound is not positive.
    """
    sd = math.sqrt(p * (1 - p) / n_runs)
    lo = p - z * sd
    if lo <= 0:
        return math.inf
    return max(0.0, delta) * (1 / lo - 1 / p) + 1e-9


def simulate_dishonest_utility(fine: float, u_d: float, p: float, seeds: Sequence[int], m: int = 10,
                               edge: int = 0) -> tuple[float, float]:
    """Mean utility of overreporting one trip on ``edge`` across seeded audit samples.

    Detection happens when ``edge`` is among the audited edges of round 0.
    Returns ``(mean utility, detection frequency)``.
    """
    detected = sum(edge in rra_sample(s, m, p, 0) for s in seeds)
    n = len(seeds)
    freq = detected / n
    return (1 - freq) * u_d - freq * fine, freq
