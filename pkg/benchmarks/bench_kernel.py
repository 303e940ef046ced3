"""Time the compiled and pure-numpy kernel backends on the same inputs.

    python benchmarks/bench_kernel.py [--steps 450] [--batch 32] [--hidden 32]

Reports the best of ``--repeat`` runs for each kernel and the speedup of
the compiled backend.  Without the extension only the numpy column is shown.
"""

import argparse
import time

import numpy as np

from hetseq import batched, kernel, training
from hetseq.events import Event, Sample, Schema


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def recurrence_inputs(T, B, H, seed=0):
    rng = np.random.default_rng(seed)
    zx = rng.standard_normal((T, B, 4 * H))
    j = rng.uniform(0, 1, size=(T, B, H))
    w_h = rng.uniform(-0.1, 0.1, size=(4 * H, H))
    peep = [rng.uniform(-0.1, 0.1, size=H) for _ in range(3)]
    return zx, j, w_h, peep


def synthetic_batch(T, B, H, seed=0):
    schema = Schema(M=50, C=100, U=20)
    rng = np.random.default_rng(seed)
    samples = []
    for b in range(B):
        times = np.sort(rng.uniform(0, 24, size=T))
        evs = tuple(
            Event(int(m), float(t), (int(2 * m),), ((int(m % 20), float(rng.standard_normal())),))
            for m, t in zip(rng.integers(0, 50, size=T), times)
        )
        samples.append(Sample(f"b{b}", b % 2, evs))
    config = training.TrainConfig(hidden=H, embed_dim=16, filter_hidden=16)
    params = training.init_params(training.Sizes.from_schema(schema, config), config)
    return batched.Batch.build(batched.encode_samples(samples), schema), params


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=450)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    T, B, H = args.steps, args.batch, args.hidden

    names = ["python"] + (["cython"] if kernel.compiled is not None else [])
    zx, j, w_h, peep = recurrence_inputs(T, B, H)
    rng = np.random.default_rng(1)
    dh = rng.standard_normal((B, H))
    times = np.sort(rng.uniform(0, 24, size=T * B))
    tau = np.exp(rng.uniform(1, 3, size=H))
    shift = rng.uniform(0, 1, size=H) * tau
    r_on = np.full(H, 0.05)
    dk = rng.standard_normal((T * B, H))
    batch, params = synthetic_batch(T, B, H)

    rows = {}
    for name in names:
        be = kernel.get_backend(name)
        states = be.forward(zx, j, w_h, *peep)
        rows[name] = {
            "recurrence forward": best_of(lambda: be.forward(zx, j, w_h, *peep), args.repeat),
            "recurrence backward": best_of(
                lambda: be.backward(dh, np.zeros_like(dh), j, w_h, *peep, *states), args.repeat
            ),
            "phase forward": best_of(lambda: be.phase_forward(times, tau, shift, r_on, 1e-3), args.repeat),
            "phase backward": best_of(lambda: be.phase_backward(dk, times, tau, shift, r_on, 1e-3), args.repeat),
            "loss + gradient": best_of(lambda: batched.loss_and_grad(params, batch, backend=be), args.repeat),
        }

    print(f"T={T} B={B} H={H}, best of {args.repeat} (milliseconds)")
    header = f"{'kernel':<22}" + "".join(f"{n:>10}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for key in rows["python"]:
        line = f"{key:<22}" + "".join(f"{1e3 * rows[n][key]:>10.1f}" for n in names)
        if len(names) == 2:
            line += f"{rows['python'][key] / rows['cython'][key]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
