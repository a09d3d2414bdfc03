"""Pure-numpy fallback for the compiled hot-loop kernels.

Semantics must stay in lockstep with ``_native.pyx``: the benchmark and the
backend-equivalence tests compare the two implementations directly.
"""

import numpy as np

BACKEND = "python"


def _axis_angle_matrix(axis, angle):
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
            [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
        ]
    )


def rotation_walk(rotation, axes, angles, sample_stride=0):
    """Compose a sequence of small rotations onto ``rotation``.

    Each step i applies the rotation by ``angles[i]`` about unit vector
    ``axes[i]`` on the left (new = delta @ old).  If ``sample_stride`` > 0,
    the accumulated rotation is recorded after every ``sample_stride`` steps.

    Returns (final_rotation, samples) where samples has shape (k, 3, 3).
    """
    rotation = np.array(rotation, dtype=np.float64)
    axes = np.asarray(axes, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    n = angles.shape[0]
    samples = []
    for i in range(n):
        rotation = _axis_angle_matrix(axes[i], angles[i]) @ rotation
        if sample_stride > 0 and (i + 1) % sample_stride == 0:
            samples.append(rotation.copy())
    if sample_stride > 0:
        out = np.array(samples).reshape(len(samples), 3, 3)
    else:
        out = np.empty((0, 3, 3))
    return rotation, out


def greedy_match(ref_times, tag_times, half_window):
    """Count matches of ``tag_times`` against ``ref_times``.

    Both arrays must be sorted ascending.  Tags are processed in time order;
    each tag is matched to the nearest still-unused reference time within
    ``half_window`` (ties go to the earlier reference).  Each reference is
    used at most once.
    """
    ref_times = np.asarray(ref_times, dtype=np.float64)
    tag_times = np.asarray(tag_times, dtype=np.float64)
    n = ref_times.shape[0]
    used = np.zeros(n, dtype=bool)
    count = 0
    right_of = np.searchsorted(ref_times, tag_times)
    for j in range(tag_times.shape[0]):
        t = tag_times[j]
        left = right_of[j] - 1
        while left >= 0 and used[left]:
            left -= 1
        right = right_of[j]
        while right < n and used[right]:
            right += 1
        dl = t - ref_times[left] if left >= 0 else np.inf
        dr = ref_times[right] - t if right < n else np.inf
        if dl <= dr:
            best, dist = left, dl
        else:
            best, dist = right, dr
        if dist <= half_window:
            used[best] = True
            count += 1
    return count
