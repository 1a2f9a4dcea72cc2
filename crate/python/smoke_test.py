#!/usr/bin/env python3
"""Smoke test for the elastmono_py extension module.

Build the module first:

    cargo build --release -p elastmono-py

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys


def load_module():
    root = pathlib.Path(__file__).resolve().parents[1]
    candidates = [
        root / "target" / "release" / "libelastmono_py.so",
        root / "target" / "debug" / "libelastmono_py.so",
        root / "target" / "release" / "elastmono_py.dll",
        root / "target" / "release" / "libelastmono_py.dylib",
    ]
    for path in candidates:
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("elastmono_py", str(path))
            spec = importlib.util.spec_from_loader("elastmono_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit(
        "elastmono_py cdylib not found; run `cargo build --release -p elastmono-py` first"
    )


def scenario_json(**overrides):
    cfg = {
        "version": 1,
        "mesh": {"n": 10, "dirichlet_sides": ["bottom"], "data_refinement": 0},
        "background": {"lambda": 1.0, "mu": 1.0},
        "inclusions": [
            {
                "id": "disc",
                "shape": {"kind": "disc", "center": [0.45, 0.6], "radius": 0.22},
                "state": {"kind": "rigid"},
            }
        ],
        "test": {
            "tau": "calibrate",
            "beta": 0.5,
            "grid": 5,
            "mode": "full",
            "sign": "positive",
            "sides": "both",
        },
        "study": {"epsilons": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]},
        "seed": 1,
    }
    cfg.update(overrides)
    return json.dumps(cfg)


def main():
    em = load_module()
    print(f"loaded elastmono_py {em.__version__}")

    # mesh construction and refinement
    mesh = em.Mesh(4, ["bottom"])
    assert mesh.n_elements == 32 and mesh.n_nodes == 25
    fine = mesh.refine()
    assert fine.n_elements == 128
    assert abs(fine.h - mesh.h / 2) < 1e-15
    print(f"mesh ok: {mesh!r} -> {fine!r}")

    # measured ND data: symmetric, self-adjoint to round-off
    scenario = em.Scenario.from_json(scenario_json())
    nd = scenario.measured_nd()
    assert nd.dim == 2 * 3 * 10, nd.dim
    assert nd.presym_asymmetry <= 1e-10
    values = nd.values()
    assert abs(values[3][7] - values[7][3]) == 0.0
    print(f"nd ok: {nd!r}, asymmetry {nd.presym_asymmetry:.2e}")

    # Loewner order: the rigid phantom's ND map sits below the background's
    background = em.Scenario.from_json(scenario_json(inclusions=[]))
    nd_bg = background.measured_nd()
    min_eig = nd_bg.min_eig_vs(nd)
    norm = max(abs(v) for row in nd_bg.values() for v in row)
    assert min_eig >= -1e-10 * norm, min_eig
    print(f"loewner ok: min-eig(background - rigid phantom) = {min_eig:.3e}")

    # outer reconstruction: mask hits the disc, leaves the far corner alone
    tau = scenario.calibrate_tau()
    outer = scenario.reconstruct_outer()
    mask = outer.mask()
    centers = outer.centers()
    masked = outer.masked_pixels()
    assert masked, "outer mask is empty"
    inside = min(
        range(len(centers)),
        key=lambda k: (centers[k][0] - 0.45) ** 2 + (centers[k][1] - 0.6) ** 2,
    )
    corner = min(
        range(len(centers)),
        key=lambda k: (centers[k][0] - 0.9) ** 2 + (centers[k][1] - 0.1) ** 2,
    )
    assert mask[inside], "pixel over the inclusion not masked"
    assert not mask[corner], "far corner pixel masked"
    print(f"outer ok: tau {tau:.2e}, {outer!r}, inside pixel {inside} masked")

    # inner reconstruction stays inside the outer mask
    inner = scenario.reconstruct_inner()
    assert inner.masked_pixels(), "inner mask is empty"
    assert all(mask[k] for k in inner.masked_pixels())
    print(f"inner ok: {inner!r}")

    # truncation convergence rate
    points, slope, residual, ok = scenario.convergence_study()
    assert ok and slope >= 0.45 and len(points) == 5, (slope, residual)
    print(f"convergence ok: slope {slope:.3f}, residual {residual:.3f}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
