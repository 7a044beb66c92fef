"""Slow, literal OPTICS used as a test oracle for :func:`optics_order`.

Works on plain Python lists with an explicit seed dictionary, so it shares no
code with the vectorized implementation.
"""

import math


def _distance(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return math.sqrt(total)


def reference_optics(points, min_samples, max_eps=math.inf):
    """Return (ordering, reachability by position, core distance by row).

    Undefined distances are ``math.inf``.
    """
    pts = [list(map(float, p)) for p in points]
    n = len(pts)
    dist = [[_distance(pts[i], pts[j]) for j in range(n)] for i in range(n)]
    core = []
    for i in range(n):
        d = sorted(dist[i])[min_samples - 1]
        core.append(d if d <= max_eps else math.inf)

    processed = [False] * n
    reach = [math.inf] * n
    ordering = []

    def expand(p, seeds):
        for o in range(n):
            if processed[o] or dist[p][o] > max_eps:
                continue
            new = max(core[p], dist[p][o])
            if new < reach[o]:
                reach[o] = new
                seeds[o] = new

    # ties go to the lexicographically smallest point, then the lowest row
    key = [(tuple(pts[i]), i) for i in range(n)]
    for start in sorted(range(n), key=lambda i: key[i]):
        if processed[start]:
            continue
        processed[start] = True
        ordering.append(start)
        seeds = {}
        if core[start] < math.inf:
            expand(start, seeds)
        while seeds:
            q = min(seeds, key=lambda i: (seeds[i], key[i]))
            del seeds[q]
            processed[q] = True
            ordering.append(q)
            if core[q] < math.inf:
                expand(q, seeds)
    return ordering, [reach[i] for i in ordering], core
