import numpy as np


def random_spd(rng, M, floor=0.3):
    A = rng.standard_normal((M, M))
    return A @ A.T / M + floor * np.eye(M)
