"""Accelerator resource description and the three reference platforms."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

MB = 2**20
GB_PER_S = 10**9


@dataclass(frozen=True)
class HardwareConfig:
    """PE array, scratchpads, bandwidths (bytes/s) and per-access energies."""

    P: int
    S1: int
    S2: int
    bw_noc: float
    bw_offchip: float
    clock_hz: float = 1e9
    e_mac: float = 1.0
    e_s1: float = 1.0
    e_s2: float = 6.0
    e_s3: float = 200.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"hardware parameter {name} must be positive, got {value!r}")
        if int(self.P) != self.P:
            raise ValueError("P must be an integer")

    @property
    def noc_bytes_per_cycle(self) -> float:
        return self.bw_noc / self.clock_hz

    @property
    def offchip_bytes_per_cycle(self) -> float:
        return self.bw_offchip / self.clock_hz

    def replace(self, **changes) -> "HardwareConfig":
        return replace(self, **changes)


EDGE = HardwareConfig(P=256, S1=256, S2=20 * MB, bw_noc=16 * GB_PER_S, bw_offchip=80 * GB_PER_S)
MOBILE = HardwareConfig(P=4098, S1=512, S2=40 * MB, bw_noc=40 * GB_PER_S, bw_offchip=80 * GB_PER_S)
CLOUD = HardwareConfig(P=65536, S1=2048, S2=100 * MB, bw_noc=800 * GB_PER_S,
                       bw_offchip=1000 * GB_PER_S)

PLATFORMS = {"edge": EDGE, "mobile": MOBILE, "cloud": CLOUD}
