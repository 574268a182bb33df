"""Drive one closed loop by hand and watch the estimator learn.

Builds the CSTR preset with the physics-based disturbance model, steps the
loop sample by sample and prints the reference, the measured
concentration, the innovation and two learned coefficients every 25
samples.  Finally it writes the log to ``cstr_pdm.csv`` in the current
directory.

    python3 demos/step_by_step.py
"""

from offsetfree import ClosedLoop, preset
from offsetfree.disturbance import CSTR_PDM_TERMS


def main(steps=150):
    loop = ClosedLoop(preset("cstr-generic-pdm", steps=steps))
    print(f"{'k':>4}{'r':>10}{'y':>10}{'e':>11}   {CSTR_PDM_TERMS[2]:>10}{CSTR_PDM_TERMS[6]:>10}")
    for _ in range(steps):
        rec = loop.step()
        if rec["k"] % 25 == 0:
            th = rec["theta"]
            print(f"{rec['k']:>4}{rec['r'][0]:>10.4f}{rec['y'][0]:>10.4f}{rec['e'][0]:>11.2e}   "
                  f"{th[2]:>10.4f}{th[6]:>10.4f}")
    loop.log().to_csv("cstr_pdm.csv")
    print("log written to cstr_pdm.csv")


if __name__ == "__main__":
    main()
