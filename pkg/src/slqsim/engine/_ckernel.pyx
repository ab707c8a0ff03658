# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop; mirrors _pykernel draw-for-draw."""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log1p, NAN
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset
from numpy.random cimport bitgen_t

cdef enum:
    COMPLETION = 0
    BACKOFF = 1
    ARRIVAL = 2

cdef enum:
    SELECT_LONGEST = 0
    SELECT_FIRST_NONEMPTY = 1


cdef struct Job:
    double t
    long long idx


cdef struct Event:
    double t
    int kind
    long long seq
    int sid


cdef struct Fifo:
    Job* buf
    Py_ssize_t cap
    Py_ssize_t head
    Py_ssize_t size


cdef inline double uniform(bitgen_t* g) noexcept nogil:
    return g.next_double(g.state)


cdef inline double expo(bitgen_t* g, double rate) noexcept nogil:
    return -log1p(-g.next_double(g.state)) / rate


cdef int fifo_push(Fifo* f, double t, long long idx) noexcept nogil:
    cdef Py_ssize_t newcap, k, n_tail
    cdef Job* nb
    if f.size == f.cap:
        newcap = 4 if f.cap == 0 else 2 * f.cap
        nb = <Job*> realloc(f.buf, newcap * sizeof(Job))
        if nb == NULL:
            return -1
        # unwrap: move the wrapped prefix behind the old tail
        if f.head + f.size > f.cap:
            n_tail = f.head + f.size - f.cap
            for k in range(n_tail):
                nb[f.cap + k] = nb[k]
        f.buf = nb
        f.cap = newcap
    k = (f.head + f.size) % f.cap
    f.buf[k].t = t
    f.buf[k].idx = idx
    f.size += 1
    return 0


cdef inline Job fifo_pop(Fifo* f) noexcept nogil:
    cdef Job j = f.buf[f.head]
    f.head = (f.head + 1) % f.cap
    f.size -= 1
    return j


cdef inline bint ev_less(Event* a, Event* b) noexcept nogil:
    if a.t != b.t:
        return a.t < b.t
    if a.kind != b.kind:
        return a.kind < b.kind
    return a.seq < b.seq


cdef struct Heap:
    Event* ev
    Py_ssize_t size


cdef void heap_push(Heap* h, double t, int kind, long long seq, int sid) noexcept nogil:
    cdef Py_ssize_t i = h.size, parent
    cdef Event e
    e.t = t
    e.kind = kind
    e.seq = seq
    e.sid = sid
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if ev_less(&e, &h.ev[parent]):
            h.ev[i] = h.ev[parent]
            i = parent
        else:
            break
    h.ev[i] = e


cdef Event heap_pop(Heap* h) noexcept nogil:
    cdef Event top = h.ev[0]
    cdef Event last
    cdef Py_ssize_t i = 0, child
    h.size -= 1
    if h.size == 0:
        return top
    last = h.ev[h.size]
    while True:
        child = 2 * i + 1
        if child >= h.size:
            break
        if child + 1 < h.size and ev_less(&h.ev[child + 1], &h.ev[child]):
            child += 1
        if ev_less(&h.ev[child], &last):
            h.ev[i] = h.ev[child]
            i = child
        else:
            break
    h.ev[i] = last
    return top


cdef class _Window:
    """Observation-window integrals; same semantics as the Python version."""
    cdef public bint active
    cdef public double t_last, area_queued, area_busy, t_start, t_end
    cdef public long long queued, busy
    cdef long long* levels
    cdef double* level_area
    cdef double* level_last
    cdef Py_ssize_t n_levels, cap
    cdef public list snapshots

    def __cinit__(self, long long n_queues):
        self.cap = 64
        self.levels = <long long*> malloc(self.cap * sizeof(long long))
        self.level_area = <double*> malloc(self.cap * sizeof(double))
        self.level_last = <double*> malloc(self.cap * sizeof(double))
        if self.levels == NULL or self.level_area == NULL or self.level_last == NULL:
            raise MemoryError()
        self.n_levels = 1
        self.levels[0] = n_queues
        self.level_area[0] = 0.0
        self.level_last[0] = 0.0
        self.active = False
        self.t_last = 0.0
        self.area_queued = 0.0
        self.area_busy = 0.0
        self.queued = 0
        self.busy = 0
        self.t_start = NAN
        self.t_end = NAN
        self.snapshots = []

    def __dealloc__(self):
        free(self.levels)
        free(self.level_area)
        free(self.level_last)

    cdef inline void advance(self, double t) noexcept:
        cdef double dt
        if self.active:
            dt = t - self.t_last
            self.area_queued += self.queued * dt
            self.area_busy += self.busy * dt
        self.t_last = t

    cdef int move(self, long long old, long long new, double t) except -1:
        cdef long long k
        cdef int pass_
        if new >= self.n_levels:
            if self.n_levels == self.cap:
                self.cap *= 2
                self.levels = <long long*> realloc(self.levels, self.cap * sizeof(long long))
                self.level_area = <double*> realloc(self.level_area, self.cap * sizeof(double))
                self.level_last = <double*> realloc(self.level_last, self.cap * sizeof(double))
                if self.levels == NULL or self.level_area == NULL or self.level_last == NULL:
                    raise MemoryError()
            self.levels[self.n_levels] = 0
            self.level_area[self.n_levels] = 0.0
            self.level_last[self.n_levels] = t
            self.n_levels += 1
        for pass_ in range(2):
            k = old if pass_ == 0 else new
            if self.active:
                self.level_area[k] += self.levels[k] * (t - self.level_last[k])
            self.level_last[k] = t
        self.levels[old] -= 1
        self.levels[new] += 1
        self.queued += new - old
        return 0

    cdef int open(self, double t) except -1:
        cdef Py_ssize_t k
        self.advance(t)
        self.active = True
        self.t_start = t
        self.t_last = t
        for k in range(self.n_levels):
            self.level_last[k] = t
        self.snapshots.append((t, 0.0, 0.0))
        return 0

    cdef int snapshot(self, double t) except -1:
        self.advance(t)
        self.snapshots.append((t, self.area_queued, self.area_busy))
        return 0

    cdef int close(self, double t) except -1:
        cdef Py_ssize_t k
        self.advance(t)
        for k in range(self.n_levels):
            self.level_area[k] += self.levels[k] * (t - self.level_last[k])
            self.level_last[k] = t
        self.snapshots.append((t, self.area_queued, self.area_busy))
        self.active = False
        self.t_end = t
        return 0

    def level_areas(self):
        return [self.level_area[k] for k in range(self.n_levels)]


cdef bitgen_t* _bitgen(object gen) except NULL:
    capsule = gen.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef class _Kernel:
    cdef int policy, selection
    cdef long long n, m, d, n_arrivals, warmup, n_obs, nb, n_queues
    cdef double lam, mu, gamma
    cdef bint with_replacement, keep_trace
    cdef bitgen_t* g_arr
    cdef bitgen_t* g_srv
    cdef bitgen_t* g_bo
    cdef bitgen_t* g_smp
    cdef bitgen_t* g_tb
    cdef object gens
    cdef Fifo* queues
    cdef long long* lengths
    cdef long long* perm
    cdef Job* serving
    cdef char* busy_flag
    cdef Heap heap
    cdef long long seq, arrivals, departures, successes, failures
    cdef double now
    cdef _Window window
    cdef double* bsum
    cdef double* bsumsq
    cdef long long* bcount
    cdef list trace

    def __cinit__(self, policy, long long n, long long m, long long d, double lam, double mu,
                  double gamma, bint with_replacement, generators, long long n_arrivals,
                  long long warmup, long long n_batches, bint keep_trace, int selection):
        cdef long long k
        self.policy = 1 if policy == "JSQ" else 0
        self.n, self.m, self.d = n, m, d
        self.lam, self.mu, self.gamma = lam, mu, gamma
        self.with_replacement = with_replacement
        self.selection = selection
        self.n_arrivals = n_arrivals
        self.warmup = warmup
        self.n_obs = n_arrivals - warmup
        self.nb = max(1, min(n_batches, self.n_obs))
        self.keep_trace = keep_trace
        self.trace = [] if keep_trace else None
        self.gens = list(generators)
        self.g_arr = _bitgen(self.gens[0])
        self.g_srv = _bitgen(self.gens[1])
        self.g_bo = _bitgen(self.gens[2])
        self.g_smp = _bitgen(self.gens[3])
        self.g_tb = _bitgen(self.gens[4])
        self.n_queues = m if self.policy == 1 else n
        self.queues = <Fifo*> malloc(self.n_queues * sizeof(Fifo))
        self.lengths = <long long*> malloc(self.n_queues * sizeof(long long))
        self.perm = <long long*> malloc(self.n_queues * sizeof(long long))
        self.serving = <Job*> malloc(m * sizeof(Job))
        self.busy_flag = <char*> malloc(m * sizeof(char))
        self.heap.ev = <Event*> malloc((m + 2) * sizeof(Event))
        self.heap.size = 0
        self.bsum = <double*> malloc(self.nb * sizeof(double))
        self.bsumsq = <double*> malloc(self.nb * sizeof(double))
        self.bcount = <long long*> malloc(self.nb * sizeof(long long))
        if (self.queues == NULL or self.lengths == NULL or self.perm == NULL
                or self.serving == NULL or self.busy_flag == NULL or self.heap.ev == NULL
                or self.bsum == NULL or self.bsumsq == NULL or self.bcount == NULL):
            raise MemoryError()
        memset(self.queues, 0, self.n_queues * sizeof(Fifo))
        for k in range(self.n_queues):
            self.lengths[k] = 0
            self.perm[k] = k
        memset(self.busy_flag, 0, m * sizeof(char))
        for k in range(self.nb):
            self.bsum[k] = 0.0
            self.bsumsq[k] = 0.0
            self.bcount[k] = 0
        self.seq = 0
        self.arrivals = 0
        self.departures = 0
        self.successes = 0
        self.failures = 0
        self.now = 0.0
        self.window = _Window(self.n_queues)

    def __dealloc__(self):
        cdef long long k
        if self.queues != NULL:
            for k in range(self.n_queues):
                free(self.queues[k].buf)
        free(self.queues)
        free(self.lengths)
        free(self.perm)
        free(self.serving)
        free(self.busy_flag)
        free(self.heap.ev)
        free(self.bsum)
        free(self.bsumsq)
        free(self.bcount)

    cdef inline void schedule(self, double t, int kind, int sid) noexcept:
        heap_push(&self.heap, t, kind, self.seq, sid)
        self.seq += 1

    cdef inline long long batch_of(self, long long idx) noexcept:
        return (idx - self.warmup) * self.nb // self.n_obs

    cdef void depart(self, Job j) except *:
        cdef double w
        cdef long long b
        if j.idx < self.warmup:
            return
        w = self.now - j.t
        b = self.batch_of(j.idx)
        self.bsum[b] += w
        self.bsumsq[b] += w * w
        self.bcount[b] += 1
        if self.keep_trace:
            self.trace.append(w)

    cdef long long sample_longest(self) noexcept:
        cdef long long k, j, idx, tmp, ln, best = -1, best_len = 0, ties = 0
        cdef long long n = self.n
        for k in range(self.d):
            if self.with_replacement:
                idx = <long long> (uniform(self.g_smp) * n)
            else:
                j = k + <long long> (uniform(self.g_smp) * (n - k))
                tmp = self.perm[k]
                self.perm[k] = self.perm[j]
                self.perm[j] = tmp
                idx = self.perm[k]
            ln = self.lengths[idx]
            if self.selection == SELECT_FIRST_NONEMPTY:
                if ln > 0 and best < 0:
                    best = idx
                continue
            if ln > best_len:
                best = idx
                best_len = ln
                ties = 1
            elif ln == best_len and ln > 0:
                ties += 1
                if uniform(self.g_tb) * ties < 1.0:
                    best = idx
        return best

    cdef long long sample_shortest(self) noexcept:
        cdef long long k, j, idx, tmp, ln, best = -1, best_len = 0, ties = 0
        cdef long long m = self.m
        for k in range(self.d):
            if self.with_replacement:
                idx = <long long> (uniform(self.g_smp) * m)
            else:
                j = k + <long long> (uniform(self.g_smp) * (m - k))
                tmp = self.perm[k]
                self.perm[k] = self.perm[j]
                self.perm[j] = tmp
                idx = self.perm[k]
            ln = self.lengths[idx]
            if best < 0 or ln < best_len:
                best = idx
                best_len = ln
                ties = 1
            elif ln == best_len:
                ties += 1
                if uniform(self.g_tb) * ties < 1.0:
                    best = idx
        return best

    cdef int try_serve(self, int sid) except -1:
        cdef long long f = self.sample_longest()
        cdef long long ln
        cdef double t = self.now
        if f < 0:
            self.failures += 1
            if self.busy_flag[sid]:
                self.window.busy -= 1
            self.busy_flag[sid] = 0
            self.schedule(t + expo(self.g_bo, self.gamma), BACKOFF, sid)
            return 0
        self.successes += 1
        if not self.busy_flag[sid]:
            self.window.busy += 1
        self.busy_flag[sid] = 1
        self.serving[sid] = fifo_pop(&self.queues[f])
        ln = self.lengths[f]
        self.lengths[f] = ln - 1
        self.window.move(ln, ln - 1, t)
        self.schedule(t + expo(self.g_srv, self.mu), COMPLETION, sid)
        return 0

    cdef int window_marks(self, long long idx, double t) except -1:
        if idx == self.warmup:
            self.window.open(t)
        elif idx > self.warmup and self.batch_of(idx) != self.batch_of(idx - 1):
            self.window.snapshot(t)
        if idx == self.n_arrivals - 1:
            self.window.close(t)
        return 0

    cdef int slq_arrival(self) except -1:
        cdef double t = self.now
        cdef long long idx = self.arrivals, f, ln
        self.window_marks(idx, t)
        f = <long long> (uniform(self.g_arr) * self.n)
        if fifo_push(&self.queues[f], t, idx) != 0:
            raise MemoryError()
        ln = self.lengths[f]
        self.lengths[f] = ln + 1
        self.window.move(ln, ln + 1, t)
        self.arrivals += 1
        if self.arrivals < self.n_arrivals:
            self.schedule(t + expo(self.g_arr, self.n * self.lam), ARRIVAL, -1)
        return 0

    cdef int jsq_arrival(self) except -1:
        cdef double t = self.now
        cdef long long idx = self.arrivals, s, ln
        self.window_marks(idx, t)
        s = self.sample_shortest()
        if fifo_push(&self.queues[s], t, idx) != 0:
            raise MemoryError()
        ln = self.lengths[s]
        self.lengths[s] = ln + 1
        self.window.move(ln, ln + 1, t)
        if ln == 0:
            self.window.busy += 1
            self.schedule(t + expo(self.g_srv, self.mu), COMPLETION, <int> s)
        self.arrivals += 1
        if self.arrivals < self.n_arrivals:
            self.schedule(t + expo(self.g_arr, self.n * self.lam), ARRIVAL, -1)
        return 0

    cdef int jsq_completion(self, int sid) except -1:
        cdef double t = self.now
        cdef Job j = fifo_pop(&self.queues[sid])
        cdef long long ln
        self.departures += 1
        self.depart(j)
        ln = self.lengths[sid]
        self.lengths[sid] = ln - 1
        self.window.move(ln, ln - 1, t)
        if ln > 1:
            self.schedule(t + expo(self.g_srv, self.mu), COMPLETION, sid)
        else:
            self.window.busy -= 1
        return 0

    cdef long long in_system(self):
        cdef long long k, total = 0
        for k in range(self.n_queues):
            total += self.lengths[k]
        if self.policy == 0:
            for k in range(self.m):
                total += self.busy_flag[k]
        return total

    def run(self):
        cdef long long s
        cdef Event e
        if self.policy == 0:
            for s in range(self.m):
                self.schedule(expo(self.g_bo, self.gamma), BACKOFF, <int> s)
        self.schedule(expo(self.g_arr, self.n * self.lam), ARRIVAL, -1)
        while not (self.arrivals >= self.n_arrivals and self.departures == self.arrivals):
            e = heap_pop(&self.heap)
            self.window.advance(e.t)
            self.now = e.t
            if e.kind == ARRIVAL:
                if self.policy == 0:
                    self.slq_arrival()
                else:
                    self.jsq_arrival()
            elif self.policy == 1:
                self.jsq_completion(e.sid)
            elif e.kind == COMPLETION:
                self.departures += 1
                self.depart(self.serving[e.sid])
                self.try_serve(e.sid)
            else:
                self.try_serve(e.sid)
        w = self.window
        return {
            "arrivals": self.arrivals,
            "departures": self.departures,
            "in_system": self.in_system(),
            "successes": self.successes,
            "failures": self.failures,
            "t_end": self.now,
            "t_start_window": w.t_start,
            "t_end_window": w.t_end,
            "level_area": w.level_areas(),
            "snapshots": list(w.snapshots),
            "batch_sum": [self.bsum[k] for k in range(self.nb)],
            "batch_sumsq": [self.bsumsq[k] for k in range(self.nb)],
            "batch_count": [self.bcount[k] for k in range(self.nb)],
            "trace": self.trace,
            "n_queues": self.n_queues,
        }


def simulate(policy, n, m, d, lam, mu, gamma, with_replacement, generators,
             n_arrivals, warmup, n_batches=30, keep_trace=False, selection=SELECT_LONGEST):
    kernel = _Kernel(policy, n, m, d, lam, mu, gamma, with_replacement, generators,
                     n_arrivals, warmup, n_batches, keep_trace, selection)
    return kernel.run()


def sample_longest_many(lengths, long long d, bint with_replacement, generators, long long draws):
    """Repeat the SLQ sampler ``draws`` times on fixed queue lengths.

    Returns the selected index per draw (-1 for a failed sampling).
    """
    import numpy as np
    cdef long long k, n = len(lengths)
    kernel = _Kernel("SLQ", n, 1, d, 1.0, 1.0, 1.0, with_replacement, generators, 1, 0, 1, False, SELECT_LONGEST)
    cdef _Kernel kk = kernel
    for k in range(n):
        kk.lengths[k] = lengths[k]
    out = np.empty(draws, dtype=np.int64)
    cdef long long[::1] o = out
    for k in range(draws):
        o[k] = kk.sample_longest()
    return out
