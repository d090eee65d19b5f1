"""Cycle-driven multicore DRAM controller simulator.

Compares FCFS, FR-FCFS and CADS, a core-aware scheduler that learns per-core
linear value models with Q-learning.
"""

from .dram import (AccessKind, BankState, DramGeometry, TimingParams, access_latency,
                   apply_access, classify_access, decode_address, encode_address)
from .engine import (Admission, CoreProxy, MetricsReport, SimConfig, Simulation, admit,
                     cpi_proxy, run, step)
from .errors import CalibrationError, ConfigError, LivelockError, TraceParseError
from .policies import (PendingRequest, RequestBuffer, cads_pick, fcfs_pick, frfcfs_pick,
                       ready_set)
from .rl import (CoreModel, FeatureTuple, LearnerConfig, LearnerState, RewardRuleTable,
                 StarvationState, calibrate_thresholds, compute_reward, extract_features,
                 mr_starvation, predict_reward, q_update, select_core)
from .workload import (CoreProfile, MemoryRequest, SyntheticParams, Trace, TraceRecord,
                       format_trace_line, gen_synthetic, parse_trace_line, read_trace,
                       write_trace)

__version__ = "0.1.0"
