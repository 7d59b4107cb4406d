import numpy as np

from tucker_rtr import SampledTensor, random_tucker


def random_samples(dims, m, rng, values=None):
    total = int(np.prod(dims))
    lin = np.sort(rng.choice(total, m, replace=False))
    idx = np.stack(np.unravel_index(lin, dims), axis=1)
    vals = rng.standard_normal(m) if values is None else values[tuple(idx.T)]
    return SampledTensor(tuple(dims), idx, vals)


def random_instance(dims, ranks, m, rng, distribution="normal"):
    X = random_tucker(dims, ranks, rng, distribution=distribution)
    return X, random_samples(dims, m, rng)
