# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled replication loop for catalog models.

Mirrors ``modev._core_py.run_catalog`` draw for draw: the uniforms come
from the same Philox4x32-10 counters, and all per-step tables (tilts,
tilted means, thresholds) are precomputed in Python and passed in.
"""

from cython.parallel cimport parallel, prange
from libc.math cimport cos, log, sin, sqrt, tanh
from libc.stdlib cimport free, malloc

cdef unsigned int M0 = 0xD2511F53u
cdef unsigned int M1 = 0xCD9E8D57u
cdef unsigned int W0 = 0x9E3779B9u
cdef unsigned int W1 = 0xBB67AE85u
cdef double TWO_M53 = 1.1102230246251565e-16
cdef double TWO_PI = 6.283185307179586


cdef inline void philox(unsigned int* c, unsigned int k0, unsigned int k1) noexcept nogil:
    cdef unsigned long long p0, p1
    cdef unsigned int c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3]
    cdef int r
    for r in range(10):
        p0 = <unsigned long long> M0 * c0
        p1 = <unsigned long long> M1 * c2
        c0, c1, c2, c3 = (<unsigned int> (p1 >> 32)) ^ c1 ^ k0, <unsigned int> p1, \
                         (<unsigned int> (p0 >> 32)) ^ c3 ^ k1, <unsigned int> p0
        k0 = k0 + W0
        k1 = k1 + W1
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


cdef inline double to_unit(unsigned int hi, unsigned int lo) noexcept nogil:
    cdef unsigned long long bits = ((<unsigned long long> (hi >> 5)) << 26) | (lo >> 6)
    return (<double> bits + 0.5) * TWO_M53


cdef inline void fill_uniforms(double* u, int blocks, unsigned int step, unsigned long long rep,
                               unsigned int k0, unsigned int k1) noexcept nogil:
    cdef unsigned int c[4]
    cdef int b
    for b in range(blocks):
        c[0] = step
        c[1] = <unsigned int> b
        c[2] = <unsigned int> (rep & 0xFFFFFFFFu)
        c[3] = <unsigned int> (rep >> 32)
        philox(c, k0, k1)
        u[2 * b] = to_unit(c[0], c[1])
        u[2 * b + 1] = to_unit(c[2], c[3])


def philox_block(unsigned int c0, unsigned int c1, unsigned int c2, unsigned int c3,
                 unsigned int k0, unsigned int k1):
    """Single Philox4x32-10 block (for cross-checks against the Python version)."""
    cdef unsigned int c[4]
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3
    philox(c, k0, k1)
    return c[0], c[1], c[2], c[3]


def run_catalog(
    long long[::1] reps,
    unsigned long long seed,
    int n,
    double c1,
    double[::1] x0,
    double[:, ::1] bn0,
    int drift_code,
    double[:, ::1] B,
    double[::1] cvec,
    double[::1] kappa,
    int kernel_code,
    int n_unif,
    double[:, ::1] root,
    double[:, ::1] shift,
    long long[::1] codes,
    double[::1] scales,
    double[:, ::1] thr,
    double[:, ::1] rate_p,
    double[:, ::1] rate_m,
    double[:, ::1] atoms,
    double[:, ::1] cdf,
    double[:, ::1] alphas,
    double[:, ::1] wmean,
    double hsum,
    double[:, ::1] phi,
    int use_phi,
    double[:, :, ::1] paths,
    int store,
    double[:, ::1] y_out,
    double[:, ::1] x_out,
    double[::1] sup_y,
    double[::1] max_w,
    double[::1] sup_gap,
    double[::1] loglr,
    int threads,
):
    cdef Py_ssize_t N = reps.shape[0]
    cdef int d = x0.shape[0]
    cdef int blocks = (n_unif + 1) // 2
    cdef int natoms = atoms.shape[0]
    cdef unsigned int k0 = <unsigned int> (seed & 0xFFFFFFFFu)
    cdef unsigned int k1 = <unsigned int> (seed >> 32)
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t r
    cdef int i, a, b, idx
    cdef double* buf
    cdef double* x
    cdef double* y
    cdef double* W
    cdef double* noise
    cdef double* bx
    cdef double* u
    cdef double* z
    cdef double acc, s, nrm, lr, rr, th, mag, best_y, best_w, best_g

    with nogil, parallel(num_threads=threads):
        buf = <double*> malloc(sizeof(double) * (6 * d + 2 * blocks + 2))
        x = buf
        y = buf + d
        W = buf + 2 * d
        noise = buf + 3 * d
        bx = buf + 4 * d
        z = buf + 5 * d
        u = buf + 6 * d
        for r in prange(N, schedule="static"):
            for a in range(d):
                x[a] = x0[a]
                y[a] = 0.0
                W[a] = 0.0
            lr = 0.0
            best_y = 0.0
            best_w = 0.0
            best_g = 0.0
            if use_phi:
                nrm = 0.0
                for a in range(d):
                    nrm = nrm + phi[0, a] * phi[0, a]
                best_g = sqrt(nrm)
            for i in range(n):
                fill_uniforms(u, blocks, <unsigned int> i, <unsigned long long> reps[r], k0, k1)
                # noise draw
                if kernel_code == 0:
                    for b in range((d + 1) // 2):
                        rr = sqrt(-2.0 * log(u[2 * b]))
                        th = TWO_PI * u[2 * b + 1]
                        z[2 * b] = rr * cos(th)
                        if 2 * b + 1 < d:
                            z[2 * b + 1] = rr * sin(th)
                    for a in range(d):
                        acc = 0.0
                        for b in range(d):
                            acc = acc + root[a, b] * z[b]
                        noise[a] = acc + shift[i, a]
                elif kernel_code == 1:
                    for a in range(d):
                        s = scales[a]
                        if codes[a] == 0:
                            noise[a] = 0.0
                        elif codes[a] == 1:
                            noise[a] = s if u[2 * a] < thr[i, a] else -s
                        elif codes[a] == 2:
                            noise[a] = s * (sqrt(-2.0 * log(u[2 * a])) * cos(TWO_PI * u[2 * a + 1])) + shift[i, a]
                        else:
                            if u[2 * a] < thr[i, a]:
                                noise[a] = -log(u[2 * a + 1]) / rate_p[i, a]
                            else:
                                noise[a] = -(-log(u[2 * a + 1]) / rate_m[i, a])
                else:
                    idx = 0
                    for b in range(natoms):
                        if cdf[i, b] < u[0]:
                            idx = idx + 1
                    if idx > natoms - 1:
                        idx = natoms - 1
                    for a in range(d):
                        noise[a] = atoms[idx, a]
                # drift at the current state
                if drift_code == 0:
                    for a in range(d):
                        acc = 0.0
                        for b in range(d):
                            acc = acc + B[a, b] * x[b]
                        bx[a] = acc + cvec[a]
                else:
                    for a in range(d):
                        bx[a] = cvec[a] - kappa[a] * tanh(x[a])
                # recursions and running diagnostics
                nrm = 0.0
                for a in range(d):
                    lr = lr - noise[a] * alphas[i, a]
                    y[a] = y[a] + c1 * (bx[a] - bn0[i, a]) + c1 * noise[a]
                    x[a] = x[a] + (bx[a] + noise[a]) * inv_n
                    W[a] = W[a] + c1 * (noise[a] - wmean[i, a])
                    nrm = nrm + y[a] * y[a]
                nrm = sqrt(nrm)
                if nrm > best_y:
                    best_y = nrm
                nrm = 0.0
                for a in range(d):
                    nrm = nrm + W[a] * W[a]
                nrm = sqrt(nrm)
                if nrm > best_w:
                    best_w = nrm
                if use_phi:
                    nrm = 0.0
                    for a in range(d):
                        nrm = nrm + (y[a] - phi[i + 1, a]) * (y[a] - phi[i + 1, a])
                    nrm = sqrt(nrm)
                    if nrm > best_g:
                        best_g = nrm
                if store:
                    for a in range(d):
                        paths[r, i + 1, a] = y[a]
            for a in range(d):
                y_out[r, a] = y[a]
                x_out[r, a] = x[a]
            sup_y[r] = best_y
            max_w[r] = best_w
            sup_gap[r] = best_g
            loglr[r] = lr + hsum
        free(buf)
