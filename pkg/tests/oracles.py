"""Slow, independent reference implementations used only by the tests."""
import math


def scalar_cost(X, Y, squared=False):
    C = []
    for x in X:
        row = []
        for y in Y:
            acc = 0.0
            for a, b in zip(x, y):
                acc += (float(a) - float(b)) ** 2
            row.append(acc if squared else math.sqrt(acc))
        C.append(row)
    return C


def enumerate_paths(n, m):
    """Every warping path from (0, 0) to (n-1, m-1)."""
    out = []

    def walk(i, j, path):
        if (i, j) == (n - 1, m - 1):
            out.append(list(path))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                path.append((a, b))
                walk(a, b, path)
                path.pop()

    walk(0, 0, [(0, 0)])
    return out


def path_cost(C, path):
    total = 0.0
    for i, j in path:
        total = C[i][j] + total
    return total


def brute_dtw(C):
    """Minimum over all enumerated warping paths."""
    n, m = len(C), len(C[0])
    return min(path_cost(C, p) for p in enumerate_paths(n, m))


def dp_dtw(C):
    """Textbook full-DTW recursion in pure Python."""
    n, m = len(C), len(C[0])
    D = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                D[i][j] = C[0][0]
            elif i == 0:
                D[i][j] = C[i][j] + D[i][j - 1]
            elif j == 0:
                D[i][j] = C[i][j] + D[i - 1][j]
            else:
                D[i][j] = C[i][j] + min(D[i - 1][j - 1], D[i - 1][j], D[i][j - 1])
    return D[n - 1][m - 1]


def brute_sdtw(C, dtw=dp_dtw):
    """min over every column span [s, e) of full DTW on that span."""
    m = len(C[0])
    best = math.inf
    for s in range(m):
        for e in range(s + 1, m + 1):
            best = min(best, dtw([row[s:e] for row in C]))
    return best


def scalar_velocity(positions):
    out = []
    for a, b in zip(positions[:-1], positions[1:]):
        out.append(abs(float(b[0]) - float(a[0])) + abs(float(b[1]) - float(a[1])) + abs(float(b[2]) - float(a[2])))
    return out


def scalar_mean(views):
    n = len(views)
    return [sum(float(v[k]) for v in views) / n for k in range(len(views[0]))]


def count_windows(lengths, h):
    total = 0
    for n in lengths:
        k = 0
        for start in range(n):
            if start + h <= n:
                k += 1
        total += k
    return total
