"""Wall-clock comparison of the compiled and numpy closed-loop kernels.

    python benchmarks/bench_kernels.py [--t-end 30] [--agents 5 20] [--repeat 3]
"""

import argparse
import time

import numpy as np

from elconsensus import config
from elconsensus.graph import path_topology
from elconsensus.kernels import BACKENDS
from elconsensus.simulate import integrate


def scenario_for(n, t_end):
    raw = config.load_json(config.shipped_scenario_path())
    topo = path_topology(n)
    raw["topology"] = {"adjacency": topo.adjacency.tolist(), "leader_weights": topo.leader_weights.tolist()}
    raw["sim"]["t_end"] = t_end
    return config.scenario_from_dict(raw)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=30.0)
    ap.add_argument("--agents", type=int, nargs="+", default=[5, 20])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"{'agents':>6} {'backend':>9} {'seconds':>9} {'steps/s':>10} {'speedup':>8}")
    for n in args.agents:
        sc = scenario_for(n, args.t_end)
        results = {}
        for name in sorted(BACKENDS):
            reps = 1 if name == "python" else args.repeat
            results[name] = best_of(lambda: integrate(sc, backend=name), reps)
        base = results["python"][0]
        for name, (sec, trace) in results.items():
            print(f"{n:>6} {name:>9} {sec:>9.3f} {sc.n_steps / sec:>10.0f} {base / sec:>7.1f}x")
        if len(results) == 2:
            diff = np.abs(results["compiled"][1].q - results["python"][1].q).max()
            print(f"{'':>6} max |q_compiled - q_python| = {diff:.2e} m")


if __name__ == "__main__":
    main()
