"""Smoke test for the phaseforge Python module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import json
import math
import tempfile

import phaseforge as pf


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    render = pf.RenderParams()
    surface = pf.Surface.generate(seed=3, width=32, height=16, depth_range=(0.0, 0.49 * pf.restricted_depth_sim(1.0)))

    ladder = [1.0, 2.0, 4.0, 8.0, 16.0]
    sets = [pf.render_set(surface, f, 4, render) for f in ladder]
    check(sets[-1].phase_steps == 4 and len(sets[-1].images) == 4, "render_set")

    wrapped = [pf.wrapped_phase(s) for s in sets]
    check(all(-math.pi < p <= math.pi for p in wrapped[-1].phase), "wrapped_phase range")

    absolute = pf.unwrap_ladder(wrapped)
    height = pf.height_from_phase(absolute[-1], render)
    err = max(abs(a - b) for a, b in zip(height.depth, surface.depth))
    check(err < 1e-6, f"unwrap + height, max error {err:.2e}")

    top, height2 = pf.classical_retrieve(sets, render)
    check(top.phase == absolute[-1].phase and height2.depth == height.depth, "classical_retrieve")

    check(abs(pf.restricted_depth(64.0) - 72.92) < 0.01, "restricted_depth")
    check(pf.order_error(0.49 * math.pi, 0.0)[1] and not pf.order_error(0.51 * math.pi, 0.0)[1], "order_error")

    config = json.loads(pf.resolve_config())
    config["seed"] = 4
    config["ladder"] = ladder
    config["dataset"]["splits"] = {"train": 2, "validation": 1, "test": 1}
    config["dataset"]["surface"].update(width=16, height=16, depth_range=[0.0, 0.4])
    config["network"]["width_multiplier"] = 0.125
    config["train"]["epochs"] = 2
    text = json.dumps(config)

    with tempfile.TemporaryDirectory() as tmp:
        a = pf.generate_dataset(f"{tmp}/a", text)
        b = pf.generate_dataset(f"{tmp}/b", text)
        check(a == b, "generate_dataset is deterministic")
        model, losses = pf.Model.train(f"{tmp}/a", text)
        check(len(losses) == 2 and all(math.isfinite(x) for x in losses), "Model.train")
        model.save(f"{tmp}/w.fptw")
        loaded = pf.Model.load(f"{tmp}/w.fptw")
        out = loaded.infer(16, 16, [[0.5] * 256])
        check(len(out) == 1 and out[0].frequency == 16.0 and out[0].phase_steps == 4, "Model.infer")

    try:
        pf.FringeSet(1.0, 2, 2, [[0.5] * 4, [0.5] * 4])
    except ValueError:
        check(True, "invalid input raises ValueError")
    else:
        raise SystemExit("FAIL: two-step set accepted")
    print("all ok")


if __name__ == "__main__":
    main()
