"""Write a scenario file, edit it and run it through the library.

Starts from the piecewise-constant Van der Pol preset, swaps in a custom
set-point schedule and a longer horizon, saves the result as YAML (the
same format ``offsetfree --config`` reads) and simulates it.

    python3 demos/custom_config.py
"""

from pathlib import Path
import tempfile

from offsetfree import build_scenario, load_config, load_preset_config, metrics, run
from offsetfree.scenarios import save_config


def main():
    cfg = load_preset_config("vdp-pwc-pdm")
    cfg["name"] = "vdp-three-steps"
    cfg["steps"] = 120
    cfg["nmpc"]["N"] = 8
    cfg["reference"] = {"breakpoints": [[0, 0.0], [40, 1.0], [80, -0.5]], "kind": "piecewise-constant",
                        "nominal_input": "plant"}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "scenario.yaml"
        save_config(cfg, path)
        print(path.read_text())
        lg = run(build_scenario(load_config(path)))
    for k in (39, 79, 119):
        print(f"k={k:>3}  r={lg.r[k, 0]:+.2f}  y={lg.y[k, 0]:+.6f}")
    print(metrics(lg).report(cfg["name"]), end="")


if __name__ == "__main__":
    main()
