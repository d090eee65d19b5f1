"""Simulation driver: configuration, state construction, stepping and metrics.

The cycle loop itself is compiled (see :mod:`memsched._kernel`); this module
owns everything around it.  A :class:`Simulation` is a single-threaded,
deterministic state machine: the same config and trace always produce the
same report.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import _kernel as K
from .dram import ADDRESS_MAPPING, NO_ROW, BankState, DramGeometry, TimingParams, decode_address
from .errors import ConfigError, LivelockError
from .policies import POLICY_CODES, PendingRequest, RequestBuffer
from .rl import N_FEATURES, FeatureTuple, LearnerConfig, RewardRuleTable
from .workload import MemoryRequest, Trace

log = logging.getLogger(__name__)

RANDOM_CHUNK = 1 << 16
SAMPLE_CHUNK = 1 << 16


class Admission(enum.Enum):
    Accepted = "accepted"
    Rejected = "rejected"


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a simulation besides the trace.

    ``retry_delay`` is in CPU cycles and defaults to one DRAM cycle.
    ``blocking`` is ``"full"`` (a core stalls once its outstanding requests hit
    the cap) or ``"always"`` (every memory instruction waits for its data).
    ``starvation_denominator`` chooses what the learner divides stall cycles
    by: the core's waiting requests (``"pending"``) or its served accesses
    (``"served"``).
    """

    core_count: int = 4
    geometry: DramGeometry = field(default_factory=DramGeometry)
    timing: TimingParams = field(default_factory=TimingParams)
    buffer_capacity: int = 64
    policy: str = "CADS"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    rule_table: RewardRuleTable = field(default_factory=RewardRuleTable)
    history_window: int = 100
    max_outstanding_per_core: int = 4
    retry_delay: Optional[int] = None
    seed: int = 0
    drain_cap: int = 10_000_000
    blocking: str = "full"
    starvation_denominator: str = "pending"
    address_mapping: str = ADDRESS_MAPPING

    def __post_init__(self):
        def positive(name):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {v!r}")
        for name in ("core_count", "buffer_capacity", "history_window",
                     "max_outstanding_per_core", "drain_cap"):
            positive(name)
        if self.retry_delay is None:
            object.__setattr__(self, "retry_delay", self.timing.cpu_per_dram_cycle)
        positive("retry_delay")
        if self.policy not in POLICY_CODES:
            raise ConfigError("policy", f"unknown policy {self.policy!r}; "
                                        f"expected one of {sorted(POLICY_CODES)}")
        if self.blocking not in ("full", "always"):
            raise ConfigError("blocking", f"expected 'full' or 'always', got {self.blocking!r}")
        if self.starvation_denominator not in ("pending", "served"):
            raise ConfigError("starvation_denominator",
                              f"expected 'pending' or 'served', got {self.starvation_denominator!r}")
        if self.address_mapping != ADDRESS_MAPPING:
            raise ConfigError("address_mapping", f"only {ADDRESS_MAPPING!r} is implemented")

    def with_policy(self, policy):
        return replace(self, policy=policy)


@dataclass
class CoreProxy:
    """Snapshot of one core's progress in the in-order proxy model."""

    core_id: int
    instruction_cursor: int
    outstanding: int
    stalled_until: Optional[int]
    retired_instructions: int
    cpu_cycles: int


def cpi_proxy(core: CoreProxy) -> Optional[float]:
    if core.retired_instructions <= 0:
        return None
    return core.cpu_cycles / core.retired_instructions


@dataclass
class CoreMetrics:
    core_id: object
    total_requests: int
    reissues: int
    served: int
    wait_mean: float
    wait_p50: float
    wait_p95: float
    row_hit_rate: float
    mr_starvation: float
    fairness_ratio: float
    cpi_proxy: Optional[float]


@dataclass
class MetricsReport:
    policy: str
    seed: int
    cores: List[CoreMetrics]
    aggregate: CoreMetrics
    dram_cycles: int
    waits: np.ndarray = field(repr=False)
    issue_order: np.ndarray = field(repr=False)

    def rows(self):
        return self.cores + [self.aggregate]


def _wait_stats(w):
    if len(w) == 0:
        return 0.0, 0.0, 0.0
    return float(w.mean()), float(np.percentile(w, 50)), float(np.percentile(w, 95))


def _ratio(value, lowest):
    if lowest > 0:
        return value / lowest
    return 1.0 if value == 0 else math.inf


class Simulation:
    """One controller simulation over a fixed trace.

    Requests are numbered by their index in ``trace`` (which is ordered by
    ``(ready_at, core_id)``).
    """

    def __init__(self, config: SimConfig, trace: Trace, instructions=None, sample=False):
        self.config = config
        self.trace = trace
        geo, tim = config.geometry, config.timing
        C = config.core_count
        N = len(trace)
        if N and int(trace.core.max()) >= C:
            raise ConfigError("trace", f"core id {int(trace.core.max())} >= core_count {C}")
        if instructions is None:
            instructions = trace.instructions
        if instructions is None:
            instructions = np.zeros(C, dtype=np.int64)
            if N:
                np.maximum.at(instructions, trace.core, trace.ready_at + 1)
        instructions = np.asarray(instructions, dtype=np.int64)
        if instructions.shape != (C,):
            raise ConfigError("instructions", f"need one count per core ({C})")

        # Requests are laid out core by core so each core reads a contiguous run.
        order = np.lexsort((trace.ready_at, trace.core))
        self._order = order
        core = trace.core[order]
        pos = trace.ready_at[order]
        if N:
            same = (core[1:] == core[:-1]) & (pos[1:] <= pos[:-1])
            if same.any():
                i = int(np.flatnonzero(same)[0]) + 1
                raise ConfigError("trace", f"core {core[i]} has two requests at instruction {pos[i]}")
            last = np.full(C, -1, dtype=np.int64)
            np.maximum.at(last, core, pos)
            bad = np.flatnonzero(instructions <= last)
            if len(bad):
                raise ConfigError("instructions", f"core {bad[0]} runs fewer instructions than its trace")
        bank, row, _ = decode_address(trace.address[order], geo)
        nch = geo.channels
        B = geo.banks_per_channel
        cap = config.buffer_capacity

        P = np.zeros(K.N_P, dtype=np.int64)
        P[K.P_CORES] = C
        P[K.P_CHANNELS] = nch
        P[K.P_BANKS] = B
        P[K.P_CAP] = cap
        P[K.P_RATIO] = tim.cpu_per_dram_cycle
        P[K.P_RETRY] = config.retry_delay
        P[K.P_MAXOUT] = config.max_outstanding_per_core
        P[K.P_WINDOW] = config.history_window
        P[K.P_POLICY] = POLICY_CODES[config.policy]
        P[K.P_TRCD], P[K.P_TCAS], P[K.P_TRP], P[K.P_TBURST] = tim.t_rcd, tim.t_cas, tim.t_rp, tim.t_burst
        P[K.P_DRAIN_CAP] = config.drain_cap
        P[K.P_BLOCK_ALWAYS] = config.blocking == "always"
        P[K.P_DEN_PENDING] = config.starvation_denominator == "pending"
        P[K.P_SAMPLE] = bool(sample)
        FP = np.array([config.learner.alpha, config.learner.gamma, config.learner.epsilon])

        rq = np.full((K.N_RQ, N), -1, dtype=np.int64)
        rq[K.RQ_CORE] = core
        rq[K.RQ_POS] = pos
        rq[K.RQ_CHAN] = bank % nch
        rq[K.RQ_BANK] = bank // nch
        rq[K.RQ_ROW] = row
        rq[K.RQ_REISSUE] = 0

        co = np.zeros((K.N_CO, C), dtype=np.int64)
        counts = np.bincount(core, minlength=C)
        co[K.CO_END] = np.cumsum(counts)
        co[K.CO_START] = co[K.CO_END] - counts
        co[K.CO_CURSOR] = co[K.CO_START]
        co[K.CO_NINSTR] = instructions

        bk = np.zeros((K.N_BK, nch, B), dtype=np.int64)
        bk[K.BK_OPEN] = NO_ROW
        bk[K.BK_INFLIGHT] = -1
        ch = np.zeros((K.N_CH, nch), dtype=np.int64)
        ch[K.CH_PREV_SEL] = -1

        self._rng = np.random.default_rng(config.seed)
        self._samples = []
        self.st = K.KernelState(
            P=P, FP=FP, R=np.zeros(K.N_R, dtype=np.int64),
            K=config.rule_table.threshold_array.copy(),
            RW=np.ascontiguousarray(config.rule_table.rewards),
            rq=rq, co=co,
            slots=np.full((nch, cap), -1, dtype=np.int64),
            bk=bk, cc=np.zeros((K.N_CC, nch, C), dtype=np.int64), ch=ch,
            theta=np.zeros((nch, C, N_FEATURES)), prev_est=np.zeros(nch),
            prev_feat=np.zeros((nch, N_FEATURES)),
            adm_log=np.zeros(max(N, 1), dtype=np.int64),
            rand=np.zeros(0), samples=np.zeros(SAMPLE_CHUNK if sample else 0),
            cand=np.zeros(cap, dtype=np.int64), hit=np.zeros(cap, dtype=np.bool_),
            est=np.zeros(C), elig=np.zeros(C, dtype=np.bool_),
            feat=np.zeros((C, N_FEATURES)), mrs=np.zeros(C),
            core_hit=np.zeros(C, dtype=np.int64),
        )
        self.st.R[K.R_DRAIN_START] = -1
        K.init_cores(self.st)
        self._done = K.finished(self.st)

    # -- stepping ---------------------------------------------------------

    @property
    def now(self) -> int:
        return int(self.st.R[K.R_NOW])

    @property
    def done(self) -> bool:
        return self._done

    def _refill_random(self):
        st = self.st
        rest = st.rand[st.R[K.R_RAND_POS]:st.R[K.R_RAND_N]]
        fresh = np.concatenate([rest, self._rng.random(RANDOM_CHUNK)])
        self.st = st._replace(rand=fresh)
        self.st.R[K.R_RAND_POS] = 0
        self.st.R[K.R_RAND_N] = len(fresh)

    def advance(self, until: int) -> bool:
        """Simulate up to (not including) DRAM cycle ``until``; True once drained."""
        while not self._done:
            status = K.advance(self.st, until)
            if status == K.ST_DONE:
                self._done = True
            elif status == K.ST_UNTIL:
                break
            elif status == K.ST_NEED_RANDOM:
                self._refill_random()
            elif status == K.ST_SAMPLES_FULL:
                self._flush_samples()
            else:
                diag = self.diagnostics()
                raise LivelockError(f"no progress by DRAM cycle {self.now}: {diag}", diag)
        return self._done

    def step(self):
        """Advance exactly one DRAM cycle."""
        self.advance(self.now + 1)

    def run(self) -> "MetricsReport":
        self.advance(K.INF)
        self.check_conservation()
        return self.report()

    def admit(self, core: int) -> Admission:
        """Present ``core``'s next memory request to the buffer right now."""
        co = self.st.co
        if co[K.CO_CURSOR, core] >= co[K.CO_END, core]:
            raise ValueError(f"core {core} has no requests left")
        ok = K.present(self.st, core, self.now)
        self._done = K.finished(self.st)
        return Admission.Accepted if ok else Admission.Rejected

    # -- inspection -------------------------------------------------------

    def _flush_samples(self):
        n = int(self.st.R[K.R_NSAMPLES])
        self._samples.append(self.st.samples[:n].copy())
        self.st.R[K.R_NSAMPLES] = 0

    def starvation_samples(self) -> np.ndarray:
        self._flush_samples()
        return np.concatenate(self._samples) if self._samples else np.zeros(0)

    def trace_index(self, request_id):
        """Trace position of the internal request number."""
        return int(self._order[request_id])

    def _admitted(self):
        return self.st.adm_log[:self.st.R[K.R_ADM_N]]

    def admission_order(self) -> np.ndarray:
        """Trace indices of admitted requests in the order the buffer took them."""
        return self._order[self._admitted()]

    def buffer(self, channel=0) -> RequestBuffer:
        """Waiting (not yet issued) requests of a channel, in admission order."""
        rq = self.st.rq
        ids = [r for r in self._admitted()
               if rq[K.RQ_CHAN, r] == channel and rq[K.RQ_ISSUE, r] < 0]
        buf = RequestBuffer(capacity=self.config.buffer_capacity)
        for r in ids:
            t = self.trace[self.trace_index(r)]
            req = MemoryRequest(int(rq[K.RQ_CORE, r]), t.address, t.is_write, int(rq[K.RQ_POS, r]))
            buf.append(PendingRequest(req, int(rq[K.RQ_ARRIVAL, r]), int(rq[K.RQ_BANK, r]),
                                      int(rq[K.RQ_ROW, r]), int(rq[K.RQ_REISSUE, r])))
        return buf

    def occupancy(self, channel=0) -> int:
        return int(self.st.ch[K.CH_OCC, channel])

    def banks(self, channel=0) -> List[BankState]:
        bk = self.st.bk
        return [BankState(None if bk[K.BK_OPEN, channel, b] == NO_ROW else int(bk[K.BK_OPEN, channel, b]),
                          int(bk[K.BK_READY, channel, b]))
                for b in range(bk.shape[2])]

    def admission_history(self, channel=0):
        """Per-core admission cycles of requests routed to ``channel``."""
        rq = self.st.rq
        hist = {}
        for r in self._admitted():
            if rq[K.RQ_CHAN, r] == channel:
                hist.setdefault(int(rq[K.RQ_CORE, r]), []).append(int(rq[K.RQ_ARRIVAL, r]))
        return hist

    def features(self, core, channel=0) -> FeatureTuple:
        """Features the learner would see for ``core`` at the current cycle."""
        st = self.st
        n = self.now
        _, bp = K.collect_ready(st, channel, n)
        K.count_row_hits(st, channel)
        K.advance_history(st, channel, n)
        return FeatureTuple(int(st.cc[K.CC_PEND, channel, core]), int(st.core_hit[core]), int(bp),
                            int(st.cc[K.CC_HIST, channel, core]), self.config.buffer_capacity,
                            self.config.history_window)

    def theta(self, channel=0) -> np.ndarray:
        return self.st.theta[channel].copy()

    def cores(self) -> List[CoreProxy]:
        co = self.st.co
        ratio = self.config.timing.cpu_per_dram_cycle
        out = []
        for c in range(self.config.core_count):
            finished_core = co[K.CO_CURSOR, c] == co[K.CO_END, c] and co[K.CO_OUT, c] == 0
            cycles = max(co[K.CO_TAIL, c], co[K.CO_LASTDONE, c]) if finished_core else self.now * ratio
            out.append(CoreProxy(
                core_id=c,
                instruction_cursor=int(co[K.CO_LASTPOS, c] + 1),
                outstanding=int(co[K.CO_OUT, c]),
                stalled_until=None if not co[K.CO_BLOCKED, c] else -1,
                retired_instructions=int(co[K.CO_NINSTR, c]) if finished_core else int(co[K.CO_LASTPOS, c] + 1),
                cpu_cycles=int(cycles),
            ))
        return out

    def issue_order(self) -> np.ndarray:
        """Trace indices of issued requests in issue order."""
        rq = self.st.rq
        issued = np.flatnonzero(rq[K.RQ_ISSUE] >= 0)
        seq = issued[np.lexsort((rq[K.RQ_CHAN, issued], rq[K.RQ_ISSUE, issued]))]
        return self._order[seq]

    def diagnostics(self) -> dict:
        st = self.st
        co, bk = st.co, st.bk
        blocked = [c for c in range(self.config.core_count) if co[K.CO_CURSOR, c] < co[K.CO_END, c]]
        busy_banks = [(ch, b) for ch in range(bk.shape[1]) for b in range(bk.shape[2])
                      if bk[K.BK_PEND, ch, b] > 0 or bk[K.BK_INFLIGHT, ch, b] >= 0]
        return {"cycle": self.now, "unfinished_cores": blocked,
                "banks_with_work": busy_banks,
                "occupancy": st.ch[K.CH_OCC].tolist(),
                "served": int(st.R[K.R_SERVED]), "admitted": int(st.R[K.R_ADMITTED])}

    def check_conservation(self):
        """Safety invariants that must hold after a drained run."""
        st = self.st
        co, rq = st.co, st.rq
        assert self._done, "simulation has not drained"
        assert np.all(co[K.CO_SERVED] == co[K.CO_END] - co[K.CO_START]), "served != admitted"
        assert int(st.R[K.R_SERVED]) == rq.shape[1] == int(st.R[K.R_ADMITTED])
        assert np.all(st.ch[K.CH_OCC] == 0) and np.all(st.slots < 0), "buffer not empty after drain"
        assert np.all(rq[K.RQ_ISSUE] >= rq[K.RQ_ARRIVAL]), "request issued before arrival"
        assert np.all(co[K.CO_TOTAL] == co[K.CO_SERVED] + co[K.CO_REISSUES])

    # -- metrics ----------------------------------------------------------

    def report(self) -> MetricsReport:
        cfg = self.config
        st = self.st
        co, rq = st.co, st.rq
        C = cfg.core_count
        ratio = cfg.timing.cpu_per_dram_cycle
        issued = rq[K.RQ_ISSUE] >= 0
        waits = np.where(issued, rq[K.RQ_ISSUE] - rq[K.RQ_ARRIVAL], -1)
        cycles = np.maximum(co[K.CO_TAIL], co[K.CO_LASTDONE]) if self._done else \
            np.full(C, self.now * ratio)
        served = co[K.CO_SERVED]
        stall = co[K.CO_STALL]
        starv = np.where(served > 0, stall / np.maximum(served, 1), 0.0)
        active = served > 0
        lowest = float(starv[active].min()) if active.any() else 0.0

        rows = []
        for c in range(C):
            mine = issued & (rq[K.RQ_CORE] == c)
            w = waits[mine]
            mean, p50, p95 = _wait_stats(w)
            n_issued = int(mine.sum())
            ninstr = int(co[K.CO_NINSTR, c])
            rows.append(CoreMetrics(
                core_id=c, total_requests=int(co[K.CO_TOTAL, c]),
                reissues=int(co[K.CO_REISSUES, c]), served=int(served[c]),
                wait_mean=mean, wait_p50=p50, wait_p95=p95,
                row_hit_rate=float(co[K.CO_HITS, c] / n_issued) if n_issued else 0.0,
                mr_starvation=float(starv[c]),
                fairness_ratio=_ratio(float(starv[c]), lowest) if active[c] else 1.0,
                cpi_proxy=float(cycles[c]) / ninstr if ninstr else None,
            ))
        w_all = waits[issued]
        mean, p50, p95 = _wait_stats(w_all)
        total_served = int(served.sum())
        total_instr = int(co[K.CO_NINSTR].sum())
        highest = float(starv[active].max()) if active.any() else 0.0
        agg = CoreMetrics(
            core_id="ALL", total_requests=int(co[K.CO_TOTAL].sum()),
            reissues=int(co[K.CO_REISSUES].sum()), served=total_served,
            wait_mean=mean, wait_p50=p50, wait_p95=p95,
            row_hit_rate=float(co[K.CO_HITS].sum()) / issued.sum() if issued.any() else 0.0,
            mr_starvation=float(stall.sum()) / total_served if total_served else 0.0,
            fairness_ratio=_ratio(highest, lowest) if active.any() else 1.0,
            cpi_proxy=float(cycles.sum()) / total_instr if total_instr else None,
        )
        dram_cycles = int(math.ceil(cycles.max() / ratio)) if C and self._done else self.now
        return MetricsReport(policy=cfg.policy, seed=cfg.seed, cores=rows, aggregate=agg,
                             dram_cycles=max(dram_cycles, 0), waits=w_all,
                             issue_order=self.issue_order())


def step(sim: Simulation) -> Simulation:
    sim.step()
    return sim


def admit(sim: Simulation, core: int) -> Admission:
    return sim.admit(core)


def run(config: SimConfig, trace: Trace, instructions=None) -> MetricsReport:
    return Simulation(config, trace, instructions).run()
