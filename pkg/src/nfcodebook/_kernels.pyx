# Compiled correlation kernels.
#
# Both kernels evaluate |sum exp(j * phase)| for quadratic element phases
# without materialising the beam vectors.  The phase along one array axis is
# a quadratic in the centred element index u, so consecutive terms follow a
# second-order complex recurrence: term(u+1) = term(u) * ratio(u) and
# ratio(u+1) = ratio(u) * exp(2j * quad).  Recurrences are re-seeded from
# sin/cos every RESEED steps to keep accumulated rounding near 1e-14.

from libc.math cimport sin, cos, sqrt

cdef enum:
    RESEED = 32


cdef inline void _line_sum(double lin, double quad, int n, double u0,
                           double z_re, double z_im, double r_re, double r_im,
                           double s_re, double s_im,
                           double* out_re, double* out_im) noexcept nogil:
    """Accumulate sum_{m<n} exp(j(lin*u + quad*u^2)), u = u0 + m.

    (z, r) are the first term and first ratio; s = exp(2j*quad).
    """
    cdef double acc_re = 0.0, acc_im = 0.0
    cdef double u, ph, t
    cdef int m
    for m in range(n):
        if m > 0 and m % RESEED == 0:
            u = u0 + m
            ph = lin * u + quad * u * u
            z_re = cos(ph)
            z_im = sin(ph)
            ph = lin + quad * (2.0 * u + 1.0)
            r_re = cos(ph)
            r_im = sin(ph)
        acc_re += z_re
        acc_im += z_im
        t = z_re * r_re - z_im * r_im
        z_im = z_re * r_im + z_im * r_re
        z_re = t
        t = r_re * s_re - r_im * s_im
        r_im = r_re * s_im + r_im * s_re
        r_re = t
    out_re[0] = acc_re
    out_im[0] = acc_im


def line_correlation(const double[::1] lin, const double[::1] quad, int n,
                     double[::1] out):
    """out[i] = |sum_u exp(j(lin[i] u + quad[i] u^2))| / n over centred u."""
    cdef Py_ssize_t i, count = lin.shape[0]
    cdef double re, im, a, b, ph, ph2
    cdef double u0 = -(n - 1) / 2.0
    with nogil:
        for i in range(count):
            a = lin[i]
            b = quad[i]
            ph = a * u0 + b * u0 * u0
            ph2 = a + b * (2.0 * u0 + 1.0)
            _line_sum(a, b, n, u0, cos(ph), sin(ph), cos(ph2), sin(ph2),
                      cos(2.0 * b), sin(2.0 * b), &re, &im)
            out[i] = sqrt(re * re + im * im) / n


def plane_correlation(const double[:, ::1] coeffs, int n, double[::1] out):
    """Planar analogue of line_correlation.

    coeffs[i] = (a_x, a_y, a_xx, a_yy, a_xy) multiplies (u, v, u^2, v^2, u v)
    where u indexes the outer (x) axis and v the inner (y) axis.  Each row is
    a line sum with linear coefficient a_y + a_xy u; its seeds and the outer
    row factor exp(j(a_x u + a_xx u^2)) are themselves advanced recursively.
    """
    cdef Py_ssize_t i, count = coeffs.shape[0]
    cdef int m
    cdef double u0 = -(n - 1) / 2.0
    cdef double u, ph, t, re, im, acc_re, acc_im, lin
    cdef double ax, ay, axx, ayy, axy
    cdef double s_re, s_im            # exp(2j a_yy), inner ratio step
    cdef double z_re, z_im, dz_re, dz_im   # inner first term and its row step
    cdef double r_re, r_im, dr_re, dr_im   # inner first ratio and its row step
    cdef double o_re, o_im, q_re, q_im, w_re, w_im  # outer term, ratio, step
    with nogil:
        for i in range(count):
            ax = coeffs[i, 0]
            ay = coeffs[i, 1]
            axx = coeffs[i, 2]
            ayy = coeffs[i, 3]
            axy = coeffs[i, 4]
            s_re = cos(2.0 * ayy)
            s_im = sin(2.0 * ayy)
            dz_re = cos(axy * u0)
            dz_im = sin(axy * u0)
            dr_re = cos(axy)
            dr_im = sin(axy)
            w_re = cos(2.0 * axx)
            w_im = sin(2.0 * axx)
            acc_re = 0.0
            acc_im = 0.0
            for m in range(n):
                u = u0 + m
                lin = ay + axy * u
                if m % RESEED == 0:
                    ph = lin * u0 + ayy * u0 * u0
                    z_re = cos(ph)
                    z_im = sin(ph)
                    ph = lin + ayy * (2.0 * u0 + 1.0)
                    r_re = cos(ph)
                    r_im = sin(ph)
                    ph = ax * u + axx * u * u
                    o_re = cos(ph)
                    o_im = sin(ph)
                    ph = ax + axx * (2.0 * u + 1.0)
                    q_re = cos(ph)
                    q_im = sin(ph)
                _line_sum(lin, ayy, n, u0, z_re, z_im, r_re, r_im,
                          s_re, s_im, &re, &im)
                acc_re += o_re * re - o_im * im
                acc_im += o_re * im + o_im * re
                # advance row seeds
                t = z_re * dz_re - z_im * dz_im
                z_im = z_re * dz_im + z_im * dz_re
                z_re = t
                t = r_re * dr_re - r_im * dr_im
                r_im = r_re * dr_im + r_im * dr_re
                r_re = t
                t = o_re * q_re - o_im * q_im
                o_im = o_re * q_im + o_im * q_re
                o_re = t
                t = q_re * w_re - q_im * w_im
                q_im = q_re * w_im + q_im * w_re
                q_re = t
            out[i] = sqrt(acc_re * acc_re + acc_im * acc_im) / (<double>n * n)
