import numpy as np

from pnpecg import gmm

# acceptance criterion lines, printed in the terminal summary
CRITERIA = []


def random_spd(rng, p, scale=1.0, cond=50.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = scale * np.geomspace(1.0, 1.0 / cond, p)
    return (Q * w) @ Q.T


def random_model(rng, k, p, zero_mean=False, scale=1.0):
    weights = rng.dirichlet(np.ones(k))
    means = np.zeros((k, p)) if zero_mean else rng.standard_normal((k, p))
    covs = np.stack([random_spd(rng, p, scale) for _ in range(k)])
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return gmm.GmmModel(weights, means, covs).validate()
