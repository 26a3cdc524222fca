"""Why long dot products tolerate a biased multiplier.

The relative error of a dot product is a weighted average of per-product
errors.  As the length grows its variance collapses while its mean stays put,
so a convolution output ends up scaled by roughly (1 + mean error).
"""

from approxmac.errstat import dot_error_convergence

rows = dot_error_convergence("mitchw:w=6:sign=c1", [1, 4, 16, 64, 256, 1024], trials=2000, seed=3)
print(f"{'length':>7}{'mean':>10}{'std':>10}")
for r in rows:
    print(f"{r['n']:>7}{r['mean']:>+10.3%}{r['variance'] ** 0.5:>10.3%}")
print(f"\nstd shrinks by ~sqrt(n); variance ratio 1024 vs 1: {rows[-1]['variance'] / rows[0]['variance']:.4f}")
