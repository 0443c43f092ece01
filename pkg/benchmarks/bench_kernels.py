"""Compare the compiled and numpy warp kernels on frame-sized inputs.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from skyreg import kernels, synthetic


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    texture = synthetic.make_texture(640, 400, seed=0)
    h = synthetic.step_homography(synthetic.MotionStep(3.5, -1.25, 2.0, 1.01), (320, 180))
    h[:2, 2] += (100, 80)
    cases = {"frame 320x180": (180, 320), "patch 128x128": (128, 128)}
    backends = ["numpy"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"active backend: {kernels.BACKEND}")
    for label, shape in cases.items():
        ref, _ = kernels.warp_bilinear(texture, h, shape, backend="numpy")
        times = {}
        for b in backends:
            out, _ = kernels.warp_bilinear(texture, h, shape, backend=b)
            assert np.allclose(out, ref, atol=1e-12), b
            t = timeit.repeat(lambda: kernels.warp_bilinear(texture, h, shape, backend=b),
                              number=args.repeat, repeat=3)
            times[b] = min(t) / args.repeat * 1e3
        line = "  ".join(f"{b} {ms:8.3f} ms" for b, ms in times.items())
        if "cython" in times:
            line += f"  speedup {times['numpy'] / times['cython']:.1f}x"
        print(f"{label:>14}: {line}")


if __name__ == "__main__":
    main()
