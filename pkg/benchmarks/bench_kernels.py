"""Compare the compiled and numpy block kernels on real MFMFE systems.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from mfmfe import kernels
from mfmfe.assembly import assemble_div, assemble_mass_blocks
from mfmfe.dofmap import build_dof_map, build_node_blocks
from mfmfe.mesh import example1_mesh, example2_mesh
from mfmfe.refbasis import build_nodal_basis
from mfmfe.verify import example1_case, example2_case

CASES = [
    ("ex1 level 4, k=3", example1_mesh, 4, example1_case, 3),
    ("ex2 level 1, k=2", example2_mesh, 1, example2_case, 2),
    ("ex2 level 2, k=1", example2_mesh, 2, example2_case, 1),
]


def system(mesh_fn, level, case_fn, k):
    mesh = mesh_fn(level)
    basis = build_nodal_basis(k, mesh.dim)
    dm = build_dof_map(mesh, basis)
    blocks = build_node_blocks(dm, mesh, basis)
    A = assemble_mass_blocks(mesh, dm, blocks, basis, case_fn().K)
    B = assemble_div(mesh, dm, basis)
    return A, B


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench(kb, A, B, repeat):
    sizes = A.sizes.astype(np.int64)
    Bt = sp.csr_matrix(B.T)
    x = np.random.default_rng(0).standard_normal(A.n)
    tf, L = best_of(lambda: kb.factorize(np.ascontiguousarray(A.values), A.vptr, sizes), repeat)
    ts, y = best_of(lambda: kb.block_solve(L, A.vptr, A.ptr, A.dofs, x), repeat)
    tr, S = best_of(lambda: kb.schur(L, A.vptr, A.ptr, A.dofs, Bt, B.shape[0]), repeat)
    S = sp.csr_matrix((S[2], (S[0], S[1])), shape=(B.shape[0],) * 2)
    return (tf, ts, tr), y, S


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = [("numpy", kernels.fallback)]
    if kernels.compiled is not None:
        backends.append(("cython", kernels.compiled))
    else:
        print("compiled kernels not built; timing numpy only")
    print(f"{'case':<18} {'backend':<8} {'factor':>9} {'solve':>9} {'schur':>9}")
    for name, mesh_fn, level, case_fn, k in CASES:
        A, B = system(mesh_fn, level, case_fn, k)
        ref = None
        for bname, kb in backends:
            t, y, S = bench(kb, A, B, args.repeat)
            print(f"{name:<18} {bname:<8} " + " ".join(f"{v:9.4f}" for v in t))
            if ref is None:
                ref = (y, S)
            else:
                dy = np.abs(y - ref[0]).max() / np.abs(ref[0]).max()
                dS = abs(S - ref[1]).max() / abs(ref[1]).max()
                print(f"{'':<18} max rel. difference: solve {dy:.1e}, schur {dS:.1e}")


if __name__ == "__main__":
    main()
