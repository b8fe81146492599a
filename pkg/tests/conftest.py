import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def brute_knn(positions, query, k):
    """Sort every point by (distance, index); independent of the k-d tree."""
    d = np.sqrt(((positions - query) ** 2).sum(axis=1))
    order = sorted(range(len(positions)), key=lambda i: (d[i], i))
    return [(i, d[i]) for i in order[:k]]


def brute_ball(positions, center, radius, max_count):
    d = np.sqrt(((positions - center) ** 2).sum(axis=1))
    inside = [i for i in range(len(positions)) if d[i] <= radius]
    inside.sort(key=lambda i: (d[i], i))
    if not inside:
        return [brute_knn(positions, center, 1)[0][0]]
    return inside[:max_count]


def brute_sample(positions, num, mask, weights, aggregation, start):
    """Greedy selection that rescores every candidate against every chosen point at each step.

    No running aggregate is carried between steps, so this shares no state
    with the incremental implementation. O(n*m) work per step.
    """
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    chosen = [start]
    while len(chosen) < num:
        agg = None
        for c in chosen:
            dx, dy, dz = x - x[c], y - y[c], z - z[c]
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            if agg is None:
                agg = d
            elif aggregation == "min_distance":
                agg = np.minimum(agg, d)
            else:
                agg = agg + d
        score = agg if weights is None else agg * weights
        open_ = mask.copy()
        open_[chosen] = False
        cand = np.flatnonzero(open_)
        # first maximum in index order
        best = int(cand[np.flatnonzero(score[cand] == score[cand].max())[0]])
        chosen.append(best)
    return chosen


@pytest.fixture(scope="session")
def small_model():
    from pointface.morphable import make_toy_model

    return make_toy_model(400, 6, 3, seed=7)


def _central(f, x, i, h):
    old = x[i]
    x[i] = old + h
    fp = f()
    x[i] = old - h
    fm = f()
    x[i] = old
    return (fp - fm) / (2 * h)


def numeric_grad(f, x, h=1e-4):
    """Central differences of scalar ``f()`` with respect to ``x`` (perturbed in place).

    Two step sizes are combined by Richardson extrapolation, which cancels the
    h^2 truncation term, so h can be large enough that roundoff (loss ~10,
    entries ~1e-7) stays far below the tolerance.
    """
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        g[i] = (4.0 * _central(f, x, i, h / 2) - _central(f, x, i, h)) / 3.0
    return g


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


def tiny_network(seed=0, sampler="cps", embedding_dim=5):
    """A few-parameter three-stage network and prepared clouds for gradient checks."""
    from pointface.features import compute_features
    from pointface.morphable import generate_dataset, make_toy_model
    from pointface.network.model import NetworkConfig, SetAbstractionConfig, init_params, prepare_cloud
    from pointface.sampling import SamplingConfig

    model = make_toy_model(200, 4, 2, seed=3)
    clouds = [compute_features(c, k=10) for c in generate_dataset(model, 2, 2, seed=1 + seed)]
    stages = (
        SetAbstractionConfig(16, 0.3, 8, (6, 5), sampler, SamplingConfig(16)),
        SetAbstractionConfig(6, 0.6, 4, (5, 4), sampler, SamplingConfig(6)),
        SetAbstractionConfig(None, 0.0, 0, (4, 6), sampler),
    )
    config = NetworkConfig(stages, embedding_dim=embedding_dim, num_points=200)
    prepared = [prepare_cloud(c, config) for c in clouds]
    params = init_params(config, seed)
    rng = np.random.default_rng(seed)
    for k in params.weights:
        params.weights[k] = params.weights[k] + 0.1 * rng.standard_normal(params.weights[k].shape)
    return params, prepared


# acceptance verdicts, filled in by test_acceptance.py and echoed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
