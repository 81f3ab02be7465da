"""Monte Carlo bound for the noisy memory-bound regression.

200 records per fit, features uniform in the ranges below, planted weights
W and intercept B, additive Gaussian noise with sigma = 1% of the mean
noiseless latency. Reports the distribution of the fitted model's mean
relative training residual over 500 seeds.
"""
import numpy as np

W = np.array([2e-6, 4e-6, 3e-6, 2.5e-6, 1.5e-6])
B = 3.0
LO = np.array([1e3, 1e3, 1e4, 1e4, 1e4])
HI = np.array([1e7, 1e6, 1e8, 1e8, 2e8])
N = 200

worst = []
for seed in range(500):
    rng = np.random.default_rng(seed)
    X = rng.uniform(LO, HI, size=(N, 5))
    y0 = X @ W + B
    y = y0 + rng.normal(0.0, 0.01 * y0.mean(), size=N)
    A = np.hstack([X, np.ones((N, 1))])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    worst.append(np.mean(np.abs(A @ beta - y) / y))
worst = np.array(worst)
print("mean_rel_err: mean", worst.mean(), "max", worst.max())
