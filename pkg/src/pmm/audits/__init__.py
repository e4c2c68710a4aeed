"""Integrity audits: rider witness, aggregated and randomized roadside audits."""

from .ara import AraAggregate, AraPublic, Party, ara_run, ara_test, elect_leader, make_ara_sensors
from .counting import phi, phi_by_edge, phi_round, phi_rounds, phi_total
from .riderwitness import RiderReport, RiderWitnessResult, rider_check, rider_witness_test
from .rra import (AuditRecord, RraPublic, RraResult, counts_from_measurements, make_rra_sensors,
                  rra_run, rra_sample, rra_test, sample_size, verify_measurement, verify_records)
from .sensors import (Lifecycle, Measurement, SensorPolicyError, SensorState, Signal, check_lifecycle,
                      signals_from_trips)

__all__ = [
    "AraAggregate", "AraPublic", "Party", "ara_run", "ara_test", "elect_leader", "make_ara_sensors",
    "phi", "phi_by_edge", "phi_round", "phi_rounds", "phi_total", "RiderReport", "RiderWitnessResult",
    "rider_check", "rider_witness_test", "AuditRecord", "RraPublic", "RraResult",
    "counts_from_measurements", "make_rra_sensors", "rra_run", "rra_sample", "rra_test", "sample_size",
    "verify_measurement", "verify_records", "Lifecycle", "Measurement", "SensorPolicyError",
    "SensorState", "Signal", "check_lifecycle", "signals_from_trips",
]
