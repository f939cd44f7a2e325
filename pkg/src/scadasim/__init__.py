"""Deterministic SCADA distribution-grid co-simulation testbed.

Couples a radial power-flow solver, an emulated process network with SPAN
mirroring, RTU/MTU telemetry, exploitable host services, and a four-stage
attacker; produces labeled traffic datasets and evaluates four anomaly
detectors against them.
"""

__version__ = "0.1.0"
