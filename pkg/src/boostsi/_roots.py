import math


def invert_increasing(f, target, center, scale, *, max_mult=64.0, xtol=1e-6, ftol=0.0, max_iter=200):
    """Solve ``f(x) = target`` for a nondecreasing ``f``.

    The bracket grows by doubling the distance from ``center`` (starting at
    ``scale``); if no crossing occurs within ``max_mult * scale`` the root is
    reported as ``+inf`` or ``-inf`` on that side.
    """
    f0 = f(center) - target
    if f0 == 0:
        return center
    direction = 1.0 if f0 < 0 else -1.0
    near, step = center, scale
    while True:
        far = center + direction * step
        if (f(far) - target) * direction >= 0:
            break
        near = far
        step *= 2
        if step > max_mult * scale:
            return direction * math.inf
    lo, hi = sorted((near, far))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid) - target
        if abs(fm) < ftol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < xtol * scale:
            break
    return 0.5 * (lo + hi)
