"""Independent reference implementations used to check the models.

Everything here is deliberately written the slow, obvious way (explicit
loops, direct quadrature, closed-form expectations) and stays
independent of the library code paths it verifies.
"""

import numpy as np
from scipy.integrate import solve_ivp


def hm_forward_oracle(x, xi, rate, kernel_adm, kernel_stay):
    """Direct double-loop evaluation of the occupancy model sums."""
    T = len(x)
    n = len(kernel_adm)
    u = np.zeros(T)
    v = np.zeros(T)
    for i in range(T):
        for k in range(max(0, i - n + 1), i + 1):
            u[i] += rate * xi[k] * x[k] * kernel_adm[i - k]
    for i in range(T):
        for k in range(max(0, i - n + 1), i + 1):
            v[i] += u[k] * kernel_stay[i - k]
    y = np.zeros(T + 1)
    for i in range(T):
        y[i + 1] = y[i] + u[i] - v[i]
    return u, v, y


def iwm_cohort_oracle(horizon, recovery_days_and_counts, grant_prob, waning_mean):
    """Expected immune count per day for one observable.

    Immunisation episodes are disjoint per entity in the constant-inflow
    scenario, so the expectation is the sum over recovery events of
    P(granted) * P(immunity still held d days later). With an
    exponential unit-mean waning factor and day-rounded end events,
    immunity still holds d days after its start iff
    ``round(y * mean) > d``, i.e. with probability
    ``exp(-(d + 0.5) / mean)``.
    """
    expected = np.zeros(horizon)
    for day, count in recovery_days_and_counts:
        if day >= horizon:
            continue
        lags = np.arange(horizon - max(day, 0)) + max(0, -day)
        survival = np.exp(-(lags + 0.5) / waning_mean)
        expected[max(day, 0):] += count * grant_prob * survival
    return expected


def scalar_sir_reference(s0, i0, r0, transmission, recovery, horizon):
    """Tightly-integrated scalar SIR, daily samples.

    ``transmission`` is the full mass-action coefficient: new infections
    per day = transmission * S * I.
    """
    def rhs(_t, y):
        s, i, _ = y
        flow = transmission * s * i
        return [-flow, flow - recovery * i, recovery * i]

    sol = solve_ivp(rhs, (0.0, float(horizon)), [s0, i0, r0],
                    t_eval=np.arange(horizon + 1), rtol=1e-10, atol=1e-10)
    assert sol.success
    return sol.y


def quadrature_lambda_oracle(kappa, density, ages):
    """Row-by-row trapezoid quadrature of the contact functional."""
    return np.array([np.trapezoid(kappa[i] * density, ages)
                     for i in range(len(ages))])


def find_cycle_edges(edges, cycle):
    """True if the node sequence is a genuine simple cycle over ``edges``."""
    if len(set(cycle)) != len(cycle):
        return False
    closed = list(cycle) + [cycle[0]]
    return all((a, b) in edges for a, b in zip(closed, closed[1:]))


def enumerate_cycles_dfs(nodes, edges):
    """Simple-cycle enumeration by plain DFS, canonically rotated."""
    adjacency = {node: [] for node in nodes}
    for a, b in edges:
        adjacency[a].append(b)
    for neighbors in adjacency.values():
        neighbors.sort()
    cycles = set()

    def walk(start, node, path, on_path):
        for nxt in adjacency[node]:
            if nxt == start:
                pivot = path.index(min(path))
                cycles.add(tuple(path[pivot:] + path[:pivot]))
            elif nxt > start and nxt not in on_path:
                path.append(nxt)
                on_path.add(nxt)
                walk(start, nxt, path, on_path)
                on_path.discard(nxt)
                path.pop()

    for start in sorted(nodes):
        walk(start, start, [start], {start})
    return sorted(cycles)
