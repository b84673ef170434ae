# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama path kernel.

Coefficients arrive as small stack-machine programs (see ``critlab.expr``),
one per slot: drift components, the upper triangle of the diffusion matrix,
the potential and optionally an analytic drift correction.  The release of
the GIL lets callers run disjoint path ranges in threads.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, sin, cos, fabs, pow, floor, isfinite, fmin, fmax
from libc.stdint cimport uint64_t, int64_t, int32_t, int8_t, uint8_t

cnp.import_array()

cdef enum:
    MAX_STACK = 64
    MAX_D = 3

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0

# termination causes, mirrored in critlab.montecarlo
cdef int8_t HIT = 0, CENS_T = 1, CENS_R = 2, INVALID = 3, LEFT_BOX = 4, LOW_WEIGHT = 5


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef struct Stream:
    uint64_t key
    uint64_t ctr
    int has_spare
    double spare


cdef inline void stream_init(Stream* s, uint64_t seed, uint64_t path) noexcept nogil:
    s.key = mix64(mix64(seed) ^ (path * GOLDEN + 1))
    s.ctr = 0
    s.has_spare = 0
    s.spare = 0.0


cdef inline double uniform(Stream* s) noexcept nogil:
    s.ctr += 1
    return <double>(mix64(s.key + s.ctr * GOLDEN) >> 11) * INV_2_53


cdef inline double normal(Stream* s) noexcept nogil:
    cdef double u1, u2, rad
    if s.has_spare:
        s.has_spare = 0
        return s.spare
    u1 = uniform(s)
    u2 = uniform(s)
    rad = sqrt(-2.0 * log(1.0 - u1))
    s.spare = rad * sin(TWO_PI * u2)
    s.has_spare = 1
    return rad * cos(TWO_PI * u2)


cdef double run(const int32_t* code, int n, const double* consts, const double* x, int d,
                double rad) noexcept nogil:
    cdef double st[MAX_STACK]
    cdef int sp = -1, k, op, arg, i
    cdef double a, b, acc
    for k in range(0, n, 2):
        op = code[k]
        arg = code[k + 1]
        if op == 0:
            sp += 1
            st[sp] = consts[arg]
        elif op == 1:
            sp += 1
            st[sp] = x[arg]
        elif op == 2:
            sp += 1
            st[sp] = rad
        elif op == 8:
            st[sp] = -st[sp]
        elif op <= 7 or op == 15 or op == 16:
            b = st[sp]
            sp -= 1
            a = st[sp]
            if op == 3:
                st[sp] = a + b
            elif op == 4:
                st[sp] = a - b
            elif op == 5:
                st[sp] = a * b
            elif op == 6:
                st[sp] = a / b
            elif op == 7:
                st[sp] = pow(a, b)
            elif op == 15:
                st[sp] = fmin(a, b)
            else:
                st[sp] = fmax(a, b)
        elif op == 17:
            acc = 0.0
            for i in range(d):
                a = x[i] - consts[arg + i]
                acc += a * a
            b = consts[arg + d]
            sp += 1
            st[sp] = 1.0 if acc <= b * b else 0.0
        elif op == 9:
            st[sp] = exp(st[sp])
        elif op == 10:
            st[sp] = log(st[sp])
        elif op == 11:
            st[sp] = sqrt(st[sp])
        elif op == 12:
            st[sp] = fabs(st[sp])
        elif op == 13:
            st[sp] = sin(st[sp])
        else:
            st[sp] = cos(st[sp])
    return st[0]


cdef inline double slot(int k, const int32_t* code, const int32_t* off, const uint8_t* is_const,
                        const double* cval, const double* consts, const double* x, int d,
                        double rad) noexcept nogil:
    if is_const[k]:
        return cval[k]
    return run(code + off[k], off[k + 1] - off[k], consts, x, d, rad)


cdef inline int cholesky(double* m, double* L, int d) noexcept nogil:
    """Lower Cholesky factor of the symmetric d x d matrix ``m``; 0 on failure."""
    cdef int i, j, k
    cdef double s
    for i in range(d):
        for j in range(i + 1):
            s = m[i * d + j]
            for k in range(j):
                s -= L[i * d + k] * L[j * d + k]
            if i == j:
                if not (s > 0.0):
                    return 0
                L[i * d + i] = sqrt(s)
            else:
                L[i * d + j] = s / L[j * d + j]
        for j in range(i + 1, d):
            L[i * d + j] = 0.0
    return 1


cdef inline int interp_grad(const double* g, const int64_t* dims, const double* origin,
                            const double* h, const double* x, int d, double* out) noexcept nogil:
    """Multilinear interpolation of a gradient grid; 0 if outside or undefined."""
    cdef int i, c, corner, bit
    cdef int64_t base[MAX_D]
    cdef double w[MAX_D]
    cdef double t, wt
    cdef int64_t idx, stride
    for i in range(d):
        t = (x[i] - origin[i]) / h[i]
        base[i] = <int64_t>floor(t)
        if base[i] < 0 or base[i] >= dims[i] - 1:
            return 0
        w[i] = t - base[i]
    for c in range(d):
        out[c] = 0.0
    for corner in range(1 << d):
        wt = 1.0
        idx = 0
        for i in range(d):
            bit = (corner >> i) & 1
            wt *= w[i] if bit else 1.0 - w[i]
            idx = idx * dims[i] + base[i] + bit
        for c in range(d):
            t = g[idx * d + c]
            if not isfinite(t):
                return 0
            out[c] += wt * t
    return 1


def simulate(int d,
             const int32_t[::1] code,
             const int32_t[::1] offsets,
             const uint8_t[::1] is_const,
             const double[::1] const_values,
             const double[::1] consts,
             int n_extra,
             const double[::1] x0,
             double r,
             double r_max,
             double dt,
             int64_t n_steps,
             uint64_t seed,
             int64_t path_start,
             int8_t[::1] cause,
             double[::1] tau,
             double[::1] int_v,
             double[:, ::1] hit,
             int64_t[::1] steps,
             bint bridge=True,
             double lam=0.0,
             double log_floor=-1e308,
             const double[::1] grad=None,
             const int64_t[::1] grad_dims=None,
             const double[::1] grad_origin=None,
             const double[::1] grad_h=None):
    """Simulate ``len(cause)`` paths; path ``i`` uses stream ``path_start + i``.

    Slot order: ``d`` drift programs, the ``d(d+1)/2`` upper-triangle
    diffusion programs, the potential and ``n_extra`` drift corrections.
    """
    cdef int64_t n_paths = cause.shape[0]
    cdef int nt = d * (d + 1) // 2
    cdef int v_slot = d + nt
    cdef bint a_const = True
    cdef bint use_grid = grad is not None
    cdef int i, j, k, c
    cdef int64_t p, step
    cdef double x[MAX_D]
    cdef double xn[MAX_D]
    cdef double drift[MAX_D]
    cdef double g[MAX_D]
    cdef double xi[MAX_D]
    cdef double am[MAX_D * MAX_D]
    cdef double m2[MAX_D * MAX_D]
    cdef double L[MAX_D * MAX_D]
    cdef double rad, radn, v_old, v_new, acc, sq = sqrt(dt), d0, d1, q, t_now
    cdef Stream s
    cdef int8_t why
    cdef const int32_t* pc = &code[0]
    cdef const int32_t* po = &offsets[0]
    cdef const uint8_t* pk = &is_const[0]
    cdef const double* pv = &const_values[0]
    cdef const double* pcst = &consts[0]
    cdef const double* pg = NULL
    cdef const int64_t* pdims = NULL
    cdef const double* porg = NULL
    cdef const double* ph = NULL
    cdef int64_t total = 0

    if d < 1 or d > MAX_D:
        raise ValueError("dimension must be 1, 2 or 3")
    if offsets.shape[0] != v_slot + 2 + n_extra:
        raise ValueError("slot table does not match the dimension")
    if use_grid:
        pg, pdims, porg, ph = &grad[0], &grad_dims[0], &grad_origin[0], &grad_h[0]
    for k in range(d, v_slot):
        a_const = a_const and is_const[k]
    if a_const:
        _fill_a(am, pv, d)
        for k in range(d * d):
            m2[k] = 2.0 * am[k]
        if not cholesky(m2, L, d):
            raise ValueError("constant diffusion matrix is not positive definite")

    with nogil:
        for p in range(n_paths):
            stream_init(&s, seed, <uint64_t>(path_start + p))
            acc = 0.0
            for i in range(d):
                x[i] = x0[i]
                acc += x[i] * x[i]
            rad = sqrt(acc)
            why = -1
            step = 0
            int_v[p] = 0.0
            if rad <= r:
                why = HIT
                for i in range(d):
                    hit[p, i] = x[i]
            else:
                v_old = slot(v_slot, pc, po, pk, pv, pcst, x, d, rad)
                if not isfinite(v_old):
                    why = INVALID
            while why < 0:
                if step >= n_steps:
                    why = CENS_T
                    break
                for i in range(d):
                    drift[i] = slot(i, pc, po, pk, pv, pcst, x, d, rad)
                if not a_const:
                    k = d
                    for i in range(d):
                        for j in range(i, d):
                            am[i * d + j] = slot(k, pc, po, pk, pv, pcst, x, d, rad)
                            am[j * d + i] = am[i * d + j]
                            k += 1
                    for k in range(d * d):
                        m2[k] = 2.0 * am[k]
                    if not cholesky(m2, L, d):
                        why = INVALID
                        break
                for k in range(n_extra):
                    drift[k] += slot(v_slot + 1 + k, pc, po, pk, pv, pcst, x, d, rad)
                if use_grid:
                    if not interp_grad(pg, pdims, porg, ph, x, d, g):
                        why = LEFT_BOX
                        break
                    for i in range(d):
                        for j in range(d):
                            drift[i] += 2.0 * am[i * d + j] * g[j]
                for i in range(d):
                    xi[i] = normal(&s)
                acc = 0.0
                for i in range(d):
                    q = x[i] + drift[i] * dt
                    for j in range(i + 1):
                        q += L[i * d + j] * xi[j] * sq
                    xn[i] = q
                    acc += q * q
                radn = sqrt(acc)
                step += 1
                t_now = step * dt
                if not isfinite(radn):
                    why = INVALID
                    break
                v_new = slot(v_slot, pc, po, pk, pv, pcst, xn, d, radn)
                if not isfinite(v_new):
                    why = INVALID
                    break
                int_v[p] += 0.5 * (v_old + v_new) * dt
                v_old = v_new
                if radn <= r:
                    why = HIT
                elif bridge:
                    d0 = rad - r
                    d1 = radn - r
                    q = 0.0
                    for i in range(d):
                        for j in range(d):
                            q += x[i] * am[i * d + j] * x[j]
                    q = d0 * d1 * rad * rad / (q * dt)
                    if q < 50.0 and uniform(&s) < exp(-q):
                        why = HIT
                if why == HIT:
                    for i in range(d):
                        hit[p, i] = r * xn[i] / radn
                    break
                for i in range(d):
                    x[i] = xn[i]
                rad = radn
                if rad >= r_max:
                    why = CENS_R
                    break
                if int_v[p] - lam * t_now < log_floor:
                    why = LOW_WEIGHT
                    break
            cause[p] = why
            tau[p] = step * dt
            steps[p] = step
            if why != HIT:
                for i in range(d):
                    hit[p, i] = x[i]
            total += step
    return total


cdef void _fill_a(double* am, const double* cval, int d) noexcept:
    cdef int i, j, k = d
    for i in range(d):
        for j in range(i, d):
            am[i * d + j] = cval[k]
            am[j * d + i] = cval[k]
            k += 1


def uniforms(uint64_t seed, uint64_t path, int64_t n):
    """First ``n`` uniforms of a path stream (for cross-backend checks)."""
    cdef Stream s
    cdef int64_t k
    out = np.empty(n)
    cdef double[::1] o = out
    stream_init(&s, seed, path)
    for k in range(n):
        o[k] = uniform(&s)
    return out
