"""Shared reference implementations used as oracles by several test modules.

These are deliberately naive: correctness over speed, no shared code with
the package under test.
"""

import numpy as np


def flood_fill_blobs(binary_map):
    """Four-connected components by breadth-first search, returned as a
    list of cell sets in raster discovery order."""
    rows, cols = binary_map.shape
    seen = np.zeros_like(binary_map, dtype=bool)
    blobs = []
    for u in range(rows):
        for v in range(cols):
            if not binary_map[u, v] or seen[u, v]:
                continue
            stack = [(u, v)]
            seen[u, v] = True
            cells = set()
            while stack:
                a, b = stack.pop()
                cells.add((a, b))
                for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    na, nb = a + da, b + db
                    if 0 <= na < rows and 0 <= nb < cols and binary_map[na, nb] and not seen[na, nb]:
                        seen[na, nb] = True
                        stack.append((na, nb))
            blobs.append(frozenset(cells))
    return blobs


def best_assignment_bruteforce(cost):
    """Exhaustive search over all partial one-to-one assignments.

    Maximizes the number of assigned pairs first, then minimizes the
    summed cost, mirroring the assignment contract. Infeasible edges are
    np.inf. Returns (num_pairs, total_cost).
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    best = [0, 0.0]

    def recurse(row, used, count, total):
        remaining = n - row
        if count + remaining < best[0]:
            return
        if row == n:
            if count > best[0] or (count == best[0] and total < best[1]):
                best[0], best[1] = count, total
            return
        for col in range(m):
            c = cost[row, col]
            if np.isfinite(c) and not used & (1 << col):
                recurse(row + 1, used | (1 << col), count + 1, total + c)
        recurse(row + 1, used, count, total)

    recurse(0, 0, 0, 0.0)
    return best[0], best[1]
