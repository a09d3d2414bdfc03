# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot-loop kernels: rotation random walk and coincidence matching.

Semantics mirror ``_purepy.py`` exactly; see the docstrings there.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, INFINITY

cnp.import_array()

BACKEND = "native"


cdef inline void _apply_axis_angle(double* r, double x, double y, double z,
                                   double angle) noexcept nogil:
    # r <- D @ r with D the Rodrigues matrix for unit axis (x, y, z).
    cdef double c = cos(angle)
    cdef double s = sin(angle)
    cdef double t = 1.0 - c
    cdef double d00 = c + x * x * t
    cdef double d01 = x * y * t - z * s
    cdef double d02 = x * z * t + y * s
    cdef double d10 = y * x * t + z * s
    cdef double d11 = c + y * y * t
    cdef double d12 = y * z * t - x * s
    cdef double d20 = z * x * t - y * s
    cdef double d21 = z * y * t + x * s
    cdef double d22 = c + z * z * t
    cdef double a, b, cc
    cdef int j
    for j in range(3):
        a = r[0 * 3 + j]
        b = r[1 * 3 + j]
        cc = r[2 * 3 + j]
        r[0 * 3 + j] = d00 * a + d01 * b + d02 * cc
        r[1 * 3 + j] = d10 * a + d11 * b + d12 * cc
        r[2 * 3 + j] = d20 * a + d21 * b + d22 * cc


def rotation_walk(rotation, axes, angles, int sample_stride=0):
    cdef cnp.ndarray[double, ndim=2] rot = np.array(rotation, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ax = np.ascontiguousarray(axes, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] an = np.ascontiguousarray(angles, dtype=np.float64)
    cdef Py_ssize_t n = an.shape[0]
    cdef Py_ssize_t n_samples = 0
    if sample_stride > 0:
        n_samples = n // sample_stride
    cdef cnp.ndarray[double, ndim=3] samples = np.empty((n_samples, 3, 3))
    cdef double* r = <double*> cnp.PyArray_DATA(rot)
    cdef double* s = <double*> cnp.PyArray_DATA(samples)
    cdef Py_ssize_t i, k, m
    with nogil:
        k = 0
        for i in range(n):
            _apply_axis_angle(r, ax[i, 0], ax[i, 1], ax[i, 2], an[i])
            if sample_stride > 0 and (i + 1) % sample_stride == 0:
                for m in range(9):
                    s[k * 9 + m] = r[m]
                k += 1
    return rot, samples


def greedy_match(ref_times, tag_times, double half_window):
    cdef cnp.ndarray[double, ndim=1] ref = np.ascontiguousarray(ref_times, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] tags = np.ascontiguousarray(tag_times, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] right_of = np.searchsorted(ref, tags).astype(np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(ref.shape[0], dtype=np.uint8)
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t j, left, right, best
    cdef double t, dl, dr, dist
    cdef long count = 0
    with nogil:
        for j in range(tags.shape[0]):
            t = tags[j]
            left = right_of[j] - 1
            while left >= 0 and used[left]:
                left -= 1
            right = right_of[j]
            while right < n and used[right]:
                right += 1
            dl = t - ref[left] if left >= 0 else INFINITY
            dr = ref[right] - t if right < n else INFINITY
            if dl <= dr:
                best = left
                dist = dl
            else:
                best = right
                dist = dr
            if dist <= half_window:
                used[best] = 1
                count += 1
    return count
