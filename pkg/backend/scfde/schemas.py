from datetime import datetime
from enum import Enum
from pathlib import Path
import os
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ---------- design selectors ----------
class Criterion(str, Enum):
    AMSE = "amse"
    GMSE = "gmse"
    MAXMSE = "maxmse"


class Scheme(str, Enum):
    JSR = "jsr"        # joint source/relay, optimal structure
    EPA_S = "epa-s"    # equal power at the source
    ROP = "rop"        # relay-only precoding
    UPS = "ups"        # unitary precoding at the source


class ReceiverMode(str, Enum):
    LINEAR = "fd-le"
    DECISION_FEEDBACK = "fd-dfe"


# ---------- experiment config (one model per TOML section) ----------
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class SystemSection(_Section):
    m: int = Field(2, ge=1)          # data streams
    n_s: int = Field(2, ge=1)        # source antennas
    n_r: int = Field(2, ge=1)        # relay antennas
    n_d: int = Field(2, ge=1)        # destination antennas
    n_c: int = Field(64, ge=1)       # tones per block


class ChannelSection(_Section):
    l_g: int = Field(16, ge=1)            # S->R taps
    l_h: int = Field(16, ge=1)            # R->D taps
    cp_source: int = Field(16, ge=0)      # N_g,s
    cp_relay: int = Field(16, ge=0)       # N_g,r
    decay: float = Field(2.0, gt=0)       # sigma_t


class OptimizerSection(_Section):
    criterion: Criterion = Criterion.GMSE
    scheme: Scheme = Scheme.JSR
    receiver: ReceiverMode = ReceiverMode.DECISION_FEEDBACK
    n_fb: int = Field(15, ge=0)
    n_fb_sweep: List[int] = []
    eps1: float = Field(1e-4, gt=0)
    eps2: float = Field(1e-4, gt=0)
    max_outer: int = Field(20, ge=1)
    max_inner: int = Field(50, ge=1)
    max_subgradient: int = Field(200, ge=1)

    @field_validator("n_fb_sweep")
    @classmethod
    def _non_negative(cls, v: List[int]) -> List[int]:
        if any(n < 0 for n in v):
            raise ValueError("feedback lengths must be >= 0")
        return v


class SimulationSection(_Section):
    constellation: Literal["qpsk"] = "qpsk"
    bits_per_symbol: int = Field(2, ge=1)          # N_b
    source_snr_db: float = 16.0
    relay_snr_db: List[float] = [0.0, 4.0, 8.0, 12.0, 16.0, 20.0]
    trials: int = Field(100, ge=1)
    blocks_per_trial: int = Field(1, ge=1)
    seed: int = Field(2024, ge=0, lt=2 ** 64)
    time_domain: bool = False                      # CP/linear-convolution path instead of per-tone model

    @field_validator("relay_snr_db")
    @classmethod
    def _finite(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one relay SNR point is needed")
        if any(x != x or x in (float("inf"), float("-inf")) for x in v):
            raise ValueError("SNR points must be finite")
        return v


class ExperimentConfig(_Section):
    system: SystemSection = SystemSection()
    channel: ChannelSection = ChannelSection()
    optimizer: OptimizerSection = OptimizerSection()
    simulation: SimulationSection = SimulationSection()

    @model_validator(mode="after")
    def _cross_checks(self) -> "ExperimentConfig":
        s, c, o = self.system, self.channel, self.optimizer
        if s.m > min(s.n_s, s.n_r, s.n_d):
            raise ValueError("system.m: more streams than antennas")
        if max(c.l_g, c.l_h) > s.n_c:
            raise ValueError("channel.l_g: channel longer than the block")
        if c.cp_source < c.l_g:
            raise ValueError("channel.cp_source: cyclic prefix shorter than the S->R channel")
        if c.cp_relay < c.l_h:
            raise ValueError("channel.cp_relay: cyclic prefix shorter than the R->D channel")
        for n in [o.n_fb] + list(o.n_fb_sweep):
            if n > s.n_c - 1:
                raise ValueError("optimizer.n_fb: feedback longer than the block")
        return self

    @property
    def feedback_lengths(self) -> List[int]:
        if self.optimizer.receiver is ReceiverMode.LINEAR:
            return [0]
        return list(self.optimizer.n_fb_sweep) or [self.optimizer.n_fb]


# ---------- results ----------
class MetricsRecord(BaseModel):
    scheme: Scheme
    criterion: Criterion
    receiver: ReceiverMode
    relay_snr_db: float
    n_fb: int = Field(ge=0)
    ber: float = Field(ge=0.0, le=1.0)
    analytic_mse: List[float] = []
    empirical_mse: List[float] = []
    empirical_mse_stderr: List[float] = []
    capacity: float = 0.0
    objective_trace: List[float] = []    # outer-iteration objective of the first solved realization
    solver_iterations: float = 0.0        # mean outer iterations per solved realization
    symbols: int = Field(0, ge=0)        # data symbols, pilots excluded
    bits: int = Field(0, ge=0)
    errors: int = Field(0, ge=0)         # bit errors
    blocks: int = Field(0, ge=0)
    skipped: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _counters(self) -> "MetricsRecord":
        if self.errors > self.bits:
            raise ValueError("errors exceed bits")
        return self


class RunManifest(BaseModel):
    suite: Literal["simulate", "verify", "trace"]
    config_paths: List[Path] = []
    out: Optional[Path] = None
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    jobs: int = Field(1, ge=1)
    filter: Optional[str] = None

    @model_validator(mode="after")
    def _paths(self) -> "RunManifest":
        if self.suite != "verify":
            if not self.config_paths:
                raise ValueError("config_paths: at least one --config is required")
            if self.out is None:
                raise ValueError("out: --out is required")
        if self.out is not None:
            parent = self.out.resolve().parent
            if not parent.is_dir() or not os.access(parent, os.W_OK):
                raise ValueError(f"out: directory {parent} is not writable")
        return self


class JobStatus(BaseModel):
    job_id: str
    stage: Literal["queued", "parse", "simulate", "write", "done", "error"]
    progress: int = Field(ge=0, le=100)
    message: str
    created_at: datetime
    updated_at: datetime
