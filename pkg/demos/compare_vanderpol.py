"""Van der Pol: constant, physics-based and neural disturbance models.

Runs the generic-reference presets with every disturbance model and prints
their tracking errors, then the learned physics-based parameters next to
the values that close the plant/model mismatch exactly.

    python3 demos/compare_vanderpol.py [steps]
"""

import sys

import numpy as np

from offsetfree import metrics, preset, run
from offsetfree.disturbance import VDP_PDM_TERMS


def exact_pdm_parameters(plant, model):
    theta = np.zeros(len(VDP_PDM_TERMS))
    terms = list(VDP_PDM_TERMS)
    theta[terms.index("vdot")] = plant.mu - model.mu
    theta[terms.index("vdot*v^2")] = model.mu * model.beta - plant.mu * plant.beta
    theta[terms.index("u")] = model.rho - plant.rho
    return theta


def main(steps=None):
    logs = {}
    print(f"{'model':<6}{'rms |y-r|':>12}{'tail |y-r|':>12}{'tail |e|':>12}")
    for fam in ("cdm", "pdm", "fnn"):
        sc = preset(f"vdp-generic-{fam}", steps=steps)
        logs[fam] = (sc, run(sc))
        m = metrics(logs[fam][1])
        print(f"{fam:<6}{m.rms_error:>12.3e}{m.max_tail_error:>12.3e}{m.max_tail_innovation:>12.3e}")

    sc, lg = logs["pdm"]
    exact = exact_pdm_parameters(sc.plant.params, sc.model.system.params)
    print("\nPDM parameters after", len(lg), "samples")
    for name, got, want in zip(VDP_PDM_TERMS, lg.theta[-1], exact):
        print(f"  {name:<10}{got:+9.4f}   exact {want:+.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else None)
