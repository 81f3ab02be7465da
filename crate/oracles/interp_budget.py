"""Dense-scan interpolation error of planted saturating curves.

Throughput is peak*(x + b0)/(x + h) sampled at powers of two 32..8192 and
linearly interpolated between samples. Predicted duration scales with
k / throughput, so the duration error at k is thr_true(k)/thr_interp(k) - 1.
Prints the worst throughput and duration errors over every integer k.
"""
import numpy as np

HALVES = [32, 48, 64, 96, 128, 160, 256, 384, 512, 768, 1024]
OFFSETS = [0, 4, 8, 16, 32]
grid = 2.0 ** np.arange(5, 14)
ks = np.arange(32, 8193, dtype=np.float64)

worst_thr = worst_dur = 0.0
for h in HALVES:
    for b0 in OFFSETS:
        f = lambda x: 1000.0 * (x + b0) / (x + h)
        interp = np.interp(ks, grid, f(grid))
        true = f(ks)
        thr_err = np.abs(interp - true) / true
        dur_err = np.abs(true / interp - 1.0)
        worst_thr = max(worst_thr, thr_err.max())
        worst_dur = max(worst_dur, dur_err.max())

f = lambda x: 1000.0 * x / (x + 32.0)
err = np.abs(np.interp(ks, grid, f(grid)) - f(ks)) / f(ks)
print("worst throughput rel err", repr(worst_thr))
print("worst duration rel err", repr(worst_dur))
print("h=32,b0=0 worst", repr(err.max()), "at", int(ks[err.argmax()]))
