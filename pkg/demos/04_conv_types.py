"""Depthwise convolutions have short dot products, so less error averages out.

Same inputs, same multiplier; the only change is groups=1 versus groups=64.
"""

from approxmac.errstat import channel_variance_report
from approxmac.fixtures import load_fixture

for name in ("paired_conv", "paired_dw"):
    model, x = load_fixture(name)
    rep = channel_variance_report(model, "mitchw:w=6:sign=c1", x)[0]
    fan_in = model.nodes[0].blobs["weight"][0].size
    print(f"{name:<12} fan-in {fan_in:>4}  error/output variance (geo-mean) {rep.pct:.3f}%")
