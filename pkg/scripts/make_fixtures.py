"""Regenerate the synthetic model fixtures under src/approxmac/data/models.

    python scripts/make_fixtures.py

Output is deterministic: rerunning rewrites byte-identical files.
"""

import numpy as np

from approxmac.fixtures import build_paired, build_residual, build_stack20, models_dir
from approxmac.modelio import save_model


def main():
    out = models_dir()
    model, x = build_stack20()
    save_model(model, out / "stack20.json")
    np.save(out / "stack20_inputs.npy", x)

    conv, dw, x = build_paired()
    save_model(conv, out / "paired_conv.json")
    save_model(dw, out / "paired_dw.json")
    np.save(out / "paired_inputs.npy", x)

    model, x = build_residual()
    save_model(model, out / "residual.json")
    np.save(out / "residual_inputs.npy", x)
    print(f"wrote fixtures to {out}")


if __name__ == "__main__":
    main()
