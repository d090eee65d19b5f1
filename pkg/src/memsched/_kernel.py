"""Compiled cycle loop of the memory-controller simulation.

State lives in a handful of numpy arrays bundled in :class:`KernelState`; the
Python wrapper in :mod:`memsched.engine` builds them and turns the results
into reports.  Index constants below name the rows of the grouped arrays.

Per DRAM cycle ``n`` the order is:

a) cores whose next memory instruction falls inside the cycle present it and
   are admitted or told to retry;
b) accesses completing at ``n`` leave the buffer and unblock their cores;
c) stall counters (kept lazily as busy-period start cycles);
d) each channel with a ready request issues exactly one, chosen by the policy.

Cycles in which nothing can happen are skipped.
"""

from collections import namedtuple

import numpy as np
from numba import njit

from .dram import NO_ROW, ROW_HIT, classify_code, latency_cycles
from .policies import CADS, FRFCFS, pick_candidate
from .rl import (normalize_features, predict, reward_from_starvations, select_from_estimates,
                 starvation, td_step)

INF = 1 << 62

# P: integer parameters
P_CORES, P_CHANNELS, P_BANKS, P_CAP, P_RATIO, P_RETRY, P_MAXOUT, P_WINDOW, P_POLICY, \
    P_TRCD, P_TCAS, P_TRP, P_TBURST, P_DRAIN_CAP, P_BLOCK_ALWAYS, P_DEN_PENDING, \
    P_SAMPLE = range(17)
N_P = 17

# FP: float parameters
F_ALPHA, F_GAMMA, F_EPS = range(3)

# R: registers
R_NOW, R_RAND_POS, R_RAND_N, R_ADMITTED, R_ISSUED, R_SERVED, R_LAST_PROGRESS, \
    R_DRAIN_START, R_NSAMPLES, R_ADM_N, R_EVENTS = range(11)
N_R = 11

# rq: per request
RQ_CORE, RQ_POS, RQ_CHAN, RQ_BANK, RQ_ROW, RQ_ARRIVAL, RQ_ISSUE, RQ_COMPLETE, RQ_KIND, \
    RQ_REISSUE, RQ_SLOT = range(11)
N_RQ = 11

# co: per core
CO_START, CO_END, CO_CURSOR, CO_EVT, CO_OUT, CO_BLOCKED, CO_LASTPOS, CO_NINSTR, CO_TAIL, \
    CO_TOTAL, CO_REISSUES, CO_SERVED, CO_HITS, CO_STALL, CO_LASTDONE = range(15)
N_CO = 15

# bk: per (channel, bank)
BK_READY, BK_OPEN, BK_PEND, BK_INFLIGHT = range(4)
N_BK = 4

# cc: per (channel, core)
CC_PEND, CC_BUSY, CC_SERVED, CC_HIST = range(4)
N_CC = 4

# ch: per channel
CH_OCC, CH_HIST_TAIL, CH_PREV_SEL = range(3)
N_CH = 3

ST_DONE, ST_UNTIL, ST_NEED_RANDOM, ST_SAMPLES_FULL, ST_LIVELOCK = range(5)

KernelState = namedtuple("KernelState", [
    "P", "FP", "R", "K", "RW", "rq", "co", "slots", "bk", "cc", "ch",
    "theta", "prev_est", "prev_feat", "adm_log", "rand", "samples",
    "cand", "hit", "est", "elig", "feat", "mrs", "core_hit",
])


@njit(cache=True)
def _schedule_next(st, c, resume):
    """Core ``c`` resumes execution at CPU time ``resume``."""
    co = st.co
    cur = co[CO_CURSOR, c]
    if cur < co[CO_END, c]:
        co[CO_EVT, c] = resume + st.rq[RQ_POS, cur] - co[CO_LASTPOS, c] - 1
    else:
        co[CO_EVT, c] = INF
        co[CO_TAIL, c] = resume + co[CO_NINSTR, c] - co[CO_LASTPOS, c] - 1


@njit(cache=True)
def init_cores(st):
    for c in range(st.P[P_CORES]):
        st.co[CO_LASTPOS, c] = -1
        _schedule_next(st, c, 0)


@njit(cache=True)
def present(st, c, n):
    """Core ``c`` presents its next memory request during DRAM cycle ``n``.

    Returns True when the buffer accepts it.  A rejection counts as a
    re-issue and retries ``retry_delay`` CPU cycles later.
    """
    P, rq, co = st.P, st.rq, st.co
    ratio = P[P_RATIO]
    r = co[CO_CURSOR, c]
    t = max(co[CO_EVT, c], n * ratio)
    ch = rq[RQ_CHAN, r]
    co[CO_TOTAL, c] += 1
    if st.ch[CH_OCC, ch] >= P[P_CAP]:
        co[CO_REISSUES, c] += 1
        rq[RQ_REISSUE, r] += 1
        co[CO_EVT, c] = t + P[P_RETRY]
        return False
    slot = -1
    for s in range(P[P_CAP]):
        if st.slots[ch, s] < 0:
            slot = s
            break
    if slot < 0:
        raise AssertionError("occupancy counter disagrees with buffer slots")
    st.slots[ch, slot] = r
    st.ch[CH_OCC, ch] += 1
    if st.ch[CH_OCC, ch] > P[P_CAP]:
        raise AssertionError("request buffer over capacity")
    rq[RQ_SLOT, r] = slot
    rq[RQ_ARRIVAL, r] = n
    st.bk[BK_PEND, ch, rq[RQ_BANK, r]] += 1
    if st.cc[CC_PEND, ch, c] == 0:
        st.cc[CC_BUSY, ch, c] = n
    st.cc[CC_PEND, ch, c] += 1
    st.cc[CC_HIST, ch, c] += 1
    st.adm_log[st.R[R_ADM_N]] = r
    st.R[R_ADM_N] += 1
    st.R[R_ADMITTED] += 1
    st.R[R_LAST_PROGRESS] = n
    co[CO_OUT, c] += 1
    co[CO_LASTPOS, c] = rq[RQ_POS, r]
    co[CO_CURSOR, c] += 1
    if P[P_BLOCK_ALWAYS] != 0 or co[CO_OUT, c] >= P[P_MAXOUT]:
        co[CO_BLOCKED, c] = 1
        co[CO_EVT, c] = INF
    else:
        _schedule_next(st, c, t + 1)
    return True


@njit(cache=True)
def _emit_phase(st, n):
    ratio = st.P[P_RATIO]
    base = n * ratio
    limit = base + ratio
    co = st.co
    while True:
        best = -1
        best_t = INF
        for c in range(st.P[P_CORES]):
            e = co[CO_EVT, c]
            if e < limit:
                t = max(e, base)
                if t < best_t:
                    best = c
                    best_t = t
        if best < 0:
            return
        present(st, best, n)


@njit(cache=True)
def _retire_phase(st, n):
    P, rq, co, bk = st.P, st.rq, st.co, st.bk
    for ch in range(P[P_CHANNELS]):
        for b in range(P[P_BANKS]):
            r = bk[BK_INFLIGHT, ch, b]
            if r < 0 or bk[BK_READY, ch, b] > n:
                continue
            bk[BK_INFLIGHT, ch, b] = -1
            st.slots[ch, rq[RQ_SLOT, r]] = -1
            st.ch[CH_OCC, ch] -= 1
            c = rq[RQ_CORE, r]
            st.cc[CC_SERVED, ch, c] += 1
            co[CO_SERVED, c] += 1
            st.R[R_SERVED] += 1
            st.R[R_LAST_PROGRESS] = n
            co[CO_OUT, c] -= 1
            co[CO_LASTDONE, c] = max(co[CO_LASTDONE, c], n * P[P_RATIO])
            if co[CO_BLOCKED, c] != 0:
                co[CO_BLOCKED, c] = 0
                _schedule_next(st, c, n * P[P_RATIO])


@njit(cache=True)
def collect_ready(st, ch, n):
    """Fill ``st.cand``/``st.hit`` with the channel's ready, unissued requests.

    Returns ``(count, distinct ready banks holding waiting requests)``.
    """
    P, rq, bk = st.P, st.rq, st.bk
    bp = 0
    for b in range(P[P_BANKS]):
        if bk[BK_PEND, ch, b] > 0 and bk[BK_READY, ch, b] <= n:
            bp += 1
    k = 0
    if bp == 0:
        return 0, 0
    for s in range(P[P_CAP]):
        r = st.slots[ch, s]
        if r < 0 or rq[RQ_ISSUE, r] >= 0:
            continue
        b = rq[RQ_BANK, r]
        if bk[BK_READY, ch, b] <= n:
            st.cand[k] = r
            st.hit[k] = bk[BK_OPEN, ch, b] == rq[RQ_ROW, r]
            k += 1
    return k, bp


@njit(cache=True)
def count_row_hits(st, ch):
    """Per-core count of waiting requests that would hit their bank's open row."""
    rq, bk = st.rq, st.bk
    st.core_hit[:] = 0
    for s in range(st.P[P_CAP]):
        r = st.slots[ch, s]
        if r < 0 or rq[RQ_ISSUE, r] >= 0:
            continue
        if bk[BK_OPEN, ch, rq[RQ_BANK, r]] == rq[RQ_ROW, r]:
            st.core_hit[rq[RQ_CORE, r]] += 1


@njit(cache=True)
def advance_history(st, ch, n):
    """Drop admissions older than the history window from the per-core counts."""
    horizon = n - st.P[P_WINDOW]
    tail = st.ch[CH_HIST_TAIL, ch]
    while tail < st.R[R_ADM_N]:
        r = st.adm_log[tail]
        if st.rq[RQ_CHAN, r] == ch:
            if st.rq[RQ_ARRIVAL, r] > horizon:
                break
            st.cc[CC_HIST, ch, st.rq[RQ_CORE, r]] -= 1
        tail += 1
    st.ch[CH_HIST_TAIL, ch] = tail


@njit(cache=True)
def starvations(st, ch, n):
    """Fill ``st.mrs`` with each core's current memory-related starvation."""
    cc = st.cc
    for c in range(st.P[P_CORES]):
        pend = cc[CC_PEND, ch, c]
        stall = n - cc[CC_BUSY, ch, c] + 1 if pend > 0 else 0
        den = pend if st.P[P_DEN_PENDING] != 0 else cc[CC_SERVED, ch, c]
        st.mrs[c] = starvation(stall, den)


@njit(cache=True)
def _record_samples(st, ch, n):
    starvations(st, ch, n)
    for c in range(st.P[P_CORES]):
        if st.cc[CC_PEND, ch, c] > 0:
            st.samples[st.R[R_NSAMPLES]] = st.mrs[c]
            st.R[R_NSAMPLES] += 1


@njit(cache=True)
def _cads_choose(st, ch, n, k, bp):
    """Learner bookkeeping for one scheduling event; returns the candidate slot."""
    P, FP, rq = st.P, st.FP, st.rq
    C = P[P_CORES]
    fb = pick_candidate(st.cand, k, rq[RQ_ARRIVAL], rq[RQ_CORE], rq[RQ_POS], st.hit, FRFCFS, -1)
    fallback = rq[RQ_CORE, st.cand[fb]]
    st.elig[:] = False
    for i in range(k):
        st.elig[rq[RQ_CORE, st.cand[i]]] = True
    count_row_hits(st, ch)
    advance_history(st, ch, n)
    for c in range(C):
        if st.elig[c]:
            normalize_features(st.cc[CC_PEND, ch, c], st.core_hit[c], bp, st.cc[CC_HIST, ch, c],
                               P[P_CAP], P[P_WINDOW], st.feat[c])
            st.est[c] = predict(st.theta[ch, c], st.feat[c])
        else:
            st.est[c] = 0.0
    starvations(st, ch, n)
    env_reward = reward_from_starvations(st.mrs, st.K, st.RW)
    u = st.rand[st.R[R_RAND_POS]]
    st.R[R_RAND_POS] += 1
    sel, max_est = select_from_estimates(st.est, st.elig, u, FP[F_EPS], fallback)
    i = pick_candidate(st.cand, k, rq[RQ_ARRIVAL], rq[RQ_CORE], rq[RQ_POS], st.hit, CADS, sel)
    prev = st.ch[CH_PREV_SEL, ch]
    if prev >= 0:
        td_step(st.theta[ch, prev], st.prev_feat[ch], env_reward, max_est, st.prev_est[ch],
                FP[F_ALPHA], FP[F_GAMMA])
    st.prev_est[ch] = max_est
    st.prev_feat[ch, :] = st.feat[sel]
    st.ch[CH_PREV_SEL, ch] = sel
    return i


@njit(cache=True)
def issue(st, ch, r, n):
    P, rq, bk, co = st.P, st.rq, st.bk, st.co
    b = rq[RQ_BANK, r]
    if bk[BK_READY, ch, b] > n:
        raise AssertionError("issue to a bank before its ready cycle")
    if bk[BK_INFLIGHT, ch, b] >= 0:
        raise AssertionError("bank already has an access in flight")
    kind = classify_code(bk[BK_OPEN, ch, b], rq[RQ_ROW, r])
    done = n + latency_cycles(kind, P[P_TRCD], P[P_TCAS], P[P_TRP], P[P_TBURST])
    bk[BK_READY, ch, b] = done
    bk[BK_OPEN, ch, b] = rq[RQ_ROW, r]
    bk[BK_INFLIGHT, ch, b] = r
    bk[BK_PEND, ch, b] -= 1
    rq[RQ_ISSUE, r] = n
    rq[RQ_COMPLETE, r] = done
    rq[RQ_KIND, r] = kind
    c = rq[RQ_CORE, r]
    st.cc[CC_PEND, ch, c] -= 1
    if st.cc[CC_PEND, ch, c] == 0:
        co[CO_STALL, c] += n - st.cc[CC_BUSY, ch, c] + 1
    if kind == ROW_HIT:
        co[CO_HITS, c] += 1
    st.R[R_ISSUED] += 1
    st.R[R_LAST_PROGRESS] = n


@njit(cache=True)
def _schedule_phase(st, n):
    P = st.P
    for ch in range(P[P_CHANNELS]):
        k, bp = collect_ready(st, ch, n)
        if k == 0:
            continue
        if P[P_SAMPLE] != 0:
            _record_samples(st, ch, n)
        st.R[R_EVENTS] += 1
        if P[P_POLICY] == CADS:
            i = _cads_choose(st, ch, n, k, bp)
        else:
            i = pick_candidate(st.cand, k, st.rq[RQ_ARRIVAL], st.rq[RQ_CORE], st.rq[RQ_POS],
                               st.hit, P[P_POLICY], -1)
        issue(st, ch, st.cand[i], n)


@njit(cache=True)
def _next_cycle(st, n):
    P, co, bk = st.P, st.co, st.bk
    nxt = INF
    ratio = P[P_RATIO]
    for c in range(P[P_CORES]):
        if co[CO_EVT, c] < INF:
            nxt = min(nxt, co[CO_EVT, c] // ratio)
    for ch in range(P[P_CHANNELS]):
        for b in range(P[P_BANKS]):
            if bk[BK_INFLIGHT, ch, b] >= 0 or bk[BK_PEND, ch, b] > 0:
                nxt = min(nxt, bk[BK_READY, ch, b])
    return max(nxt, n + 1)


@njit(cache=True)
def finished(st):
    if st.R[R_SERVED] != st.rq.shape[1]:
        return False
    for c in range(st.P[P_CORES]):
        if st.co[CO_CURSOR, c] != st.co[CO_END, c]:
            return False
    return True


@njit(cache=True)
def step_cycle(st):
    """Process the current cycle and move the clock to the next cycle of interest."""
    n = st.R[R_NOW]
    _emit_phase(st, n)
    _retire_phase(st, n)
    _schedule_phase(st, n)
    return _next_cycle(st, n)


@njit(cache=True, nogil=True)
def advance(st, until):
    """Run cycles until ``until`` (exclusive), completion, or a refill request."""
    P, R = st.P, st.R
    N = st.rq.shape[1]
    C = P[P_CORES]
    nch = P[P_CHANNELS]
    while True:
        if finished(st):
            return ST_DONE
        n = R[R_NOW]
        if n >= until:
            return ST_UNTIL
        if P[P_POLICY] == CADS and R[R_RAND_N] - R[R_RAND_POS] < nch:
            return ST_NEED_RANDOM
        if P[P_SAMPLE] != 0 and R[R_NSAMPLES] + C * nch > st.samples.shape[0]:
            return ST_SAMPLES_FULL
        nxt = step_cycle(st)
        if R[R_ADMITTED] == N and R[R_DRAIN_START] < 0:
            R[R_DRAIN_START] = n
        if finished(st):
            R[R_NOW] = n + 1
            return ST_DONE
        if nxt >= INF:
            return ST_LIVELOCK
        if R[R_DRAIN_START] >= 0 and nxt - R[R_DRAIN_START] > P[P_DRAIN_CAP]:
            return ST_LIVELOCK
        busy = False
        for ch in range(nch):
            if st.ch[CH_OCC, ch] > 0:
                busy = True
        if busy and nxt - R[R_LAST_PROGRESS] > P[P_DRAIN_CAP]:
            return ST_LIVELOCK
        R[R_NOW] = min(nxt, until)
