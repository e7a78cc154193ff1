"""Compare the compiled and pure-Python mesh-sweep kernels.

    python3 benchmarks/bench_kernels.py [--levels 5] [--repeat 3]
"""
import argparse
import time

import numpy as np

from ddmres import _kernels_py
from ddmres.mesh import flow_aligned_strip_mesh, flow_order, red_refine_2d

try:
    from ddmres import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def best_of(func, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = func()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    mesh = flow_aligned_strip_mesh()
    print(f"{'triangles':>10} {'kernel':>15} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for _ in range(args.levels):
        fo = flow_order(mesh)
        data = (fo.order, fo.upstream, mesh.triangles, mesh.vertices, mesh.element_beta,
                mesh.elem_flux_sign)
        for name in ("p1conf_sweep", "backtrace_maps"):
            t_py, r_py = best_of(lambda: getattr(_kernels_py, name)(*data), args.repeat)
            if _kernels_cy is None:
                print(f"{mesh.n_elements:>10} {name:>15} {t_py:>10.4f} {'n/a':>10} {'':>8}")
                continue
            t_cy, r_cy = best_of(lambda: getattr(_kernels_cy, name)(*data), args.repeat)
            r_py = r_py if isinstance(r_py, tuple) else (r_py,)
            r_cy = r_cy if isinstance(r_cy, tuple) else (r_cy,)
            assert all(np.allclose(a, b, rtol=0, atol=1e-13) for a, b in zip(r_py, r_cy))
            print(f"{mesh.n_elements:>10} {name:>15} {t_py:>10.4f} {t_cy:>10.4f} {t_py / t_cy:>8.1f}")
        mesh = red_refine_2d(mesh)


if __name__ == "__main__":
    main()
