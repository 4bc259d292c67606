"""Per-layer roofline time and energy model.

Each layer pass is charged ``t = max(macs / peak, bytes / bandwidth)`` and
``e = bits * (e_dram + e_buffer) + macs * e_mac``, plus a codec charge per
compressed bit on compressed runs. Model-level speedup compares the summed
times of a raw run and a compressed run over the same layers.

Whenever no layer moves more bytes compressed than raw, the speedup is
bounded by ``raw_bytes / compressed_bytes``: each layer loses at most the
time its traffic shrank, and a raw run takes at least its memory time.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ContractError

PEAK_MACS = 8192 * 4 * 500e6
DRAM_BANDWIDTH = 51.2e9


class Boundness(str, enum.Enum):
    COMPUTE = "compute"
    MEMORY = "memory"


@dataclass(frozen=True)
class HardwareConfig:
    peak_macs: float = PEAK_MACS  # MAC/s
    bandwidth: float = DRAM_BANDWIDTH  # bytes/s
    e_dram_bit: float = 10e-12  # J per DRAM bit
    e_mac: float = 1e-12  # J per MAC
    e_buffer_bit: float = 0.5e-12  # J per on-chip buffer bit
    e_codec_bit: float = 0.1e-12  # J per compressed bit through the codec

    def __post_init__(self):
        if self.peak_macs <= 0 or self.bandwidth <= 0:
            raise ConfigError("peak MAC rate and bandwidth must be positive")
        for name in ("e_dram_bit", "e_mac", "e_buffer_bit", "e_codec_bit"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @classmethod
    def from_json(cls, path) -> "HardwareConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hardware keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class LayerCost:
    macs: float
    bytes_raw: float
    bytes_compressed: float
    t_compute: float
    t_memory: float
    t_total: float
    e_total: float
    boundness: Boundness
    compressed: bool = False

    @property
    def bytes_moved(self) -> float:
        return self.bytes_compressed if self.compressed else self.bytes_raw


def layer_cost(macs, bytes_raw, hw: HardwareConfig = HardwareConfig(), bytes_compressed=None) -> LayerCost:
    """Cost of one layer pass.

    With ``bytes_compressed`` left out this is the raw run; otherwise the
    compressed traffic is what moves and the codec charge applies.
    """
    if macs < 0 or bytes_raw < 0 or (bytes_compressed is not None and bytes_compressed < 0):
        raise ContractError("MAC and byte counts must be non-negative")
    compressed = bytes_compressed is not None
    moved = bytes_compressed if compressed else bytes_raw
    t_compute = macs / hw.peak_macs
    t_memory = moved / hw.bandwidth
    bits = 8 * moved
    energy = bits * (hw.e_dram_bit + hw.e_buffer_bit) + macs * hw.e_mac
    if compressed:
        energy += bits * hw.e_codec_bit
    return LayerCost(
        macs=macs,
        bytes_raw=bytes_raw,
        bytes_compressed=bytes_raw if bytes_compressed is None else bytes_compressed,
        t_compute=t_compute,
        t_memory=t_memory,
        t_total=max(t_compute, t_memory),
        e_total=energy,
        boundness=Boundness.MEMORY if t_memory > t_compute else Boundness.COMPUTE,
        compressed=compressed,
    )


@dataclass(frozen=True)
class TrafficRecord:
    layer: str
    pass_: str
    macs: float
    bytes_raw: float
    bytes_compressed: float


@dataclass
class PerfReport:
    rows: list = field(default_factory=list)
    speedup: float = 1.0
    energy_ratio: float = 1.0
    traffic_ratio: float = 1.0
    t_base: float = 0.0
    t_comp: float = 0.0
    e_base: float = 0.0
    e_comp: float = 0.0
    memory_bound_base: float = 0.0
    memory_bound_comp: float = 0.0
    flipped: float = 0.0

    @property
    def energy_efficiency(self) -> float:
        return 1.0 / self.energy_ratio

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("rows")
        out["energy_efficiency"] = self.energy_efficiency
        out["layers"] = len(self.rows)
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        header = ("layer", "pass", "macs", "bytes_raw", "bytes_compressed", "t_base", "t_comp",
                  "e_base", "e_comp", "bound_base", "bound_comp")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for rec, base, comp in self.rows:
                w.writerow((rec.layer, rec.pass_, rec.macs, rec.bytes_raw, rec.bytes_compressed,
                            repr(base.t_total), repr(comp.t_total), repr(base.e_total),
                            repr(comp.e_total), base.boundness.value, comp.boundness.value))


def check_coverage(records, layers=None, passes=("fwd", "bwd")) -> None:
    """Every layer needs a record for every pass; raise listing the gaps."""
    seen = {(r.layer, r.pass_) for r in records}
    if layers is None:
        layers = sorted({r.layer for r in records}, key=_layer_key)
    gaps = [f"{layer}/{p}" for layer in layers for p in passes if (layer, p) not in seen]
    if gaps:
        raise ContractError("missing layer traces: " + ", ".join(gaps))


def _layer_key(name):
    return (0, int(name)) if str(name).isdigit() else (1, str(name))


def run_report(records, hw: HardwareConfig = HardwareConfig(), layers=None,
               passes=("fwd", "bwd")) -> PerfReport:
    """Aggregate raw and compressed costs; sums run in record order."""
    records = list(records)
    if not records:
        raise ContractError("no traffic records")
    check_coverage(records, layers, passes)
    report = PerfReport()
    raw_bytes = comp_bytes = 0.0
    mem_base = mem_comp = flips = 0
    for rec in records:
        base = layer_cost(rec.macs, rec.bytes_raw, hw)
        comp = layer_cost(rec.macs, rec.bytes_raw, hw, bytes_compressed=rec.bytes_compressed)
        report.rows.append((rec, base, comp))
        report.t_base += base.t_total
        report.t_comp += comp.t_total
        report.e_base += base.e_total
        report.e_comp += comp.e_total
        raw_bytes += rec.bytes_raw
        comp_bytes += rec.bytes_compressed
        mem_base += base.boundness is Boundness.MEMORY
        mem_comp += comp.boundness is Boundness.MEMORY
        flips += base.boundness is not comp.boundness
    n = len(records)
    report.speedup = report.t_base / report.t_comp if report.t_comp else 1.0
    report.energy_ratio = report.e_comp / report.e_base if report.e_base else 1.0
    report.traffic_ratio = comp_bytes / raw_bytes if raw_bytes else 1.0
    report.memory_bound_base = mem_base / n
    report.memory_bound_comp = mem_comp / n
    report.flipped = flips / n
    return report


def read_traffic(path) -> list:
    """Load ``layer,pass,macs,bytes_raw,bytes_compressed`` CSV rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"layer", "pass", "macs", "bytes_raw", "bytes_compressed"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ContractError(f"{path}: traffic CSV needs columns {sorted(need)}")
        try:
            return [
                TrafficRecord(row["layer"], row["pass"], float(row["macs"]),
                              float(row["bytes_raw"]), float(row["bytes_compressed"]))
                for row in reader
            ]
        except ValueError as exc:
            raise ContractError(f"{path}: {exc}") from None


def write_traffic(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("layer", "pass", "macs", "bytes_raw", "bytes_compressed"))
        for r in records:
            w.writerow((r.layer, r.pass_, repr(r.macs), repr(r.bytes_raw), repr(r.bytes_compressed)))


# -- synthetic suites --------------------------------------------------------------

SUITES = ("memory", "compute", "mixed")


def synthetic_suite(kind: str, hw: HardwareConfig = HardwareConfig()) -> list:
    """Deterministic eight-layer suites at a 0.25 traffic ratio.

    ``memory``: every layer stays memory bound after compression.
    ``compute``: every layer is compute bound even uncompressed.
    ``mixed``: half the layers start memory bound and turn compute bound
    once compressed; the rest are compute bound throughout.
    """
    balance = hw.peak_macs / hw.bandwidth  # MACs per byte at the ridge point
    records = []
    for i in range(8):
        raw = float(2 ** 20 * (i + 1))
        comp = raw / 4
        if kind == "memory":
            macs = comp * balance / 8
        elif kind == "compute":
            macs = raw * balance * 4
        elif kind == "mixed":
            macs = raw * balance / 3 if i % 2 == 0 else raw * balance * 2
        else:
            raise ContractError(f"unknown suite {kind!r}; choose from {SUITES}")
        for p in ("fwd", "bwd"):
            records.append(TrafficRecord(str(i), p, float(round(macs)) * (2 if p == "bwd" else 1), raw, comp))
    return records


def shipped_trace(kind: str):
    """Path-like handle to the synthetic trace CSV shipped with the package."""
    if kind not in SUITES:
        raise ContractError(f"unknown suite {kind!r}; choose from {SUITES}")
    return resources.files("sfpc") / "data" / f"synthetic_{kind}.csv"
