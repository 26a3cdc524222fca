"""How wrong is each multiplier on a single product?

Draws random nonzero Q16.16 operand pairs and prints the mean, spread and
extremes of the relative error for every multiplier kind.
"""

from approxmac.errstat import characterize

SPECS = ["mitchell", "mitchw:w=6:sign=c1", "mitchw:w=8:sign=c1", "drum:k=6", "iterlog:w=6", "bf16"]

print(f"{'multiplier':<22}{'mean':>9}{'std':>9}{'min':>10}{'max':>9}")
for spec in SPECS:
    ch = characterize(spec, n=200_000, seed=1)
    print(f"{ch.spec:<22}{ch.mean:>+9.3%}{ch.variance ** 0.5:>9.3%}{ch.min:>+10.3%}{ch.max:>+9.3%}")

print("\nMitchell and Mitch-w only ever shrink products, so their mean error is a")
print("systematic bias. DRUM forces the kept LSB to 1 and is nearly unbiased.")
