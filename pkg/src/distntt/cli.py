"""Command line interface: ``distntt {generate,decompose,reconstruct,metrics,bench}``.

Exit codes: 0 success, 2 bad flags or unreadable input, 3 dimension or
rank errors, 4 numerical failure.
"""

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from ._validation import check_grid, check_rank_vector, parse_int_list
from .comm import CATEGORIES, LOCAL_CATEGORIES, MPIComm, ProcessGrid, run_spmd
from .datagen import GenSpec, generate
from .distmatrix import DistTensor
from .exceptions import (
    DegenerateInputError,
    DimensionError,
    NonnegativityError,
    NumericalError,
    RankError,
    StoreError,
)
from .store import ChunkedTensorStore, load_train, save_train
from .tensor import compression_ratio, reconstruct, relative_error, ssim
from .tt import METHODS, TtConfig, default_grid, dist_ntt, dist_relative_error

STAGE_COLUMNS = ["stage", "eps", "rank", "compression", "rel_error", *CATEGORIES, "total_s"]
BENCH_COLUMNS = ["p", "grid", *CATEGORIES, "total_s", "nmf_s", "wall_s"]


class UsageError(Exception):
    """Bad flag values or missing inputs (exit code 2)."""


def _int_list(text):
    try:
        return parse_int_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _float_list(text):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cannot parse float list from {text!r}") from exc


def _resolve_grid(spec, shape):
    """``None`` -> one rank; a single int -> spread over the modes; else the literal grid."""
    if spec is None:
        return (1,) * len(shape)
    if len(spec) == 1 and len(shape) > 1:
        return default_grid(shape, spec[0])
    return check_grid(spec, shape)


def _open_store(path):
    if not Path(path).is_dir():
        raise UsageError(f"input store not found: {path}")
    return ChunkedTensorStore.open(path)


def _block(store, grid, rank):
    coords = ProcessGrid(grid).coords(rank)
    blk = [n // g for n, g in zip(store.shape, grid)]
    starts = [c * b for c, b in zip(coords, blk)]
    stops = [s + b for s, b in zip(starts, blk)]
    return DistTensor(store.shape, grid, coords, store.read_region(starts, stops))


def _spmd(args, size, fn, *fargs):
    """Rank-0 result of ``fn(comm, *fargs)`` on the chosen backend (None on other MPI ranks)."""
    if getattr(args, "backend", "threads") == "mpi":
        comm = MPIComm()
        if comm.size != size:
            raise DimensionError(f"grid needs {size} ranks, MPI world has {comm.size}")
        out = fn(comm, *fargs)
        return out if comm.rank == 0 else None
    return run_spmd(size, fn, *fargs)[0]


def _gather_max(comm, timings):
    """Per-category maximum over ranks."""
    every = comm.allgather_obj(timings)
    return {k: max(t[k] for t in every) for k in CATEGORIES}


# generate


def _generate_rank(comm, spec, grid, out):
    a = generate(spec, grid, comm)
    if comm.rank == 0:
        ChunkedTensorStore.create(out, spec.shape, a.block_shape)
    comm.barrier()
    store = ChunkedTensorStore(out, spec.shape, a.block_shape)
    store.write_chunk(a.coords, a.local)
    comm.barrier()
    return a.shape


def cmd_generate(args):
    shape = tuple(args.shape)
    ranks = check_rank_vector(args.ranks, len(shape))
    spec = GenSpec(shape, ranks, seed=args.seed, noise_var=args.noise_var, clip=args.clip, noise_seed=args.noise_seed)
    grid = _resolve_grid(args.grid, shape)
    _spmd(args, int(np.prod(grid)), _generate_rank, spec, grid, args.out)
    print(f"wrote {args.out} shape={list(shape)} ranks={ranks}")
    return 0


# decompose


def _decompose_rank(comm, path, grid, cfg, n_probes, probe_seed):
    store = ChunkedTensorStore.open(path)
    a = _block(store, grid, comm.rank)
    comm.timers.reset()
    stages = []
    start = time.perf_counter()
    tt = dist_ntt(a, cfg, comm, stages=stages)
    wall = time.perf_counter() - start
    err = dist_relative_error(a, tt, comm, n_probes=n_probes, seed=probe_seed)
    stage_times = [_gather_max(comm, s.timings) for s in stages]
    total = _gather_max(comm, comm.timers.as_dict())
    wall = max(comm.allgather_obj(wall))
    return tt, stages, err, stage_times, total, wall


def _stage_rows(tt, stages, err, stage_times, total):
    rows = []
    for info, times in zip(stages, stage_times):
        rel = info.residual / info.x_norm if info.x_norm else 0.0
        rows.append(
            {
                "stage": info.stage,
                "eps": "" if info.eps is None else info.eps,
                "rank": info.rank,
                "compression": "",
                "rel_error": rel,
                **times,
                "total_s": sum(times.values()),
            }
        )
    rows.append(
        {
            "stage": "all",
            "eps": "",
            "rank": "-".join(str(r) for r in tt.ranks),
            "compression": compression_ratio(tt.shape, tt.ranks),
            "rel_error": err,
            **total,
            "total_s": sum(total.values()),
        }
    )
    return rows


def _timing_table(times):
    total = sum(times.values()) or 1.0
    lines = [f"{'category':<8} {'seconds':>12} {'share':>7}"]
    for k in CATEGORIES:
        lines.append(f"{k:<8} {times[k]:>12.6f} {100 * times[k] / total:>6.1f}%")
    lines.append(f"{'total':<8} {sum(times.values()):>12.6f}")
    return "\n".join(lines)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_decompose(args):
    if (args.eps is None) == (args.ranks is None):
        raise UsageError("give exactly one of --eps or --ranks")
    store = _open_store(args.input)
    grid = _resolve_grid(args.grid, store.shape)
    cfg = TtConfig(
        eps=args.eps if args.eps is not None else 0.1,
        ranks=args.ranks,
        method=args.method,
        max_iters=args.iters,
        delta=args.delta,
        seed=args.seed,
        tol=args.tol,
        global_eps=args.global_eps,
        literal_alg3_steps=args.literal_alg3_steps,
    )
    if cfg.ranks is None:
        cfg.stage_eps(len(store.shape))
    else:
        check_rank_vector(cfg.ranks, len(store.shape))
    out = _spmd(args, int(np.prod(grid)), _decompose_rank, args.input, grid, cfg, args.probe_error, args.seed)
    if out is None:
        return 0
    tt, stages, err, stage_times, total, wall = out
    ratio = compression_ratio(tt.shape, tt.ranks)

    print(f"method            {cfg.method}")
    print(f"grid              {'x'.join(str(g) for g in grid)}")
    print(f"ranks             {tt.ranks}")
    print(f"compression_ratio {ratio:.6f}")
    print(f"relative_error    {err:.6e}")
    print(f"wall_s            {wall:.6f}")
    print(_timing_table(total))

    rows = _stage_rows(tt, stages, err, stage_times, total)
    if args.csv:
        _write_csv(args.csv, STAGE_COLUMNS, rows)
    if args.out:
        meta = {
            "method": cfg.method,
            "eps": None if args.eps is None else float(args.eps),
            "global_eps": cfg.global_eps,
            "seed": cfg.seed,
            "iters": cfg.max_iters,
            "delta": cfg.delta,
            "literal_alg3_steps": cfg.literal_alg3_steps,
            "grid": list(grid),
            "compression_ratio": ratio,
            "relative_error": err,
            "error_probes": args.probe_error,
            "probe_seed": args.seed,
            "stages": [
                {
                    "stage": s.stage,
                    "matrix_shape": list(s.matrix_shape),
                    "matrix_grid": list(s.grid),
                    "eps": s.eps,
                    "rank": s.rank,
                    "residual": s.residual,
                    "corrections": s.corrections,
                }
                for s in stages
            ],
        }
        timings = None
        if args.timings:
            timings = {"total": total, "wall_s": wall, "stages": stage_times}
        save_train(args.out, tt, meta, timings)
        print(f"archive           {args.out}")
    return 0


# reconstruct / metrics


def cmd_reconstruct(args):
    if not Path(args.archive).is_dir():
        raise UsageError(f"archive not found: {args.archive}")
    tt, _ = load_train(args.archive)
    ChunkedTensorStore.from_array(args.out, reconstruct(tt))
    print(f"wrote {args.out} shape={list(tt.shape)}")
    return 0


def _slice2d(a, index):
    if a.ndim < 2:
        raise DimensionError("SSIM needs at least two modes")
    rest = list(index or [0] * (a.ndim - 2))
    if len(rest) != a.ndim - 2:
        raise DimensionError(f"--slice needs {a.ndim - 2} indices for shape {a.shape}")
    return a[(slice(None), slice(None), *rest)]


def cmd_metrics(args):
    a = _open_store(args.a).read()
    b = _open_store(args.b).read()
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    print(f"relative_error {relative_error(a, b):.6e}")
    if args.ssim:
        print(f"ssim           {ssim(_slice2d(a, args.slice), _slice2d(b, args.slice)):.6f}")
    return 0


# bench


def cmd_bench(args):
    if args.input:
        store = _open_store(args.input)
        shape = store.shape
        path = args.input
        tmp = None
    else:
        import tempfile

        shape = tuple(args.shape)
        tmp = tempfile.TemporaryDirectory(prefix="distntt-bench-")
        path = str(Path(tmp.name) / "input")
        spec = GenSpec(shape, check_rank_vector(args.ranks, len(shape)), seed=args.seed)
        run_spmd(1, _generate_rank, spec, (1,) * len(shape), path)
    ranks = check_rank_vector(args.ranks, len(shape))
    cfg = TtConfig(ranks=ranks, method=args.method, max_iters=args.iters, seed=args.seed)
    rows = []
    try:
        for p in args.grid_list:
            grid = default_grid(shape, p)
            acc = dict.fromkeys(CATEGORIES, 0.0)
            nmf = wall = 0.0
            for _ in range(args.repeat):
                out = _spmd(args, p, _decompose_rank, path, grid, cfg, None, args.seed)
                if out is None:
                    continue
                _, stages, _, stage_times, total, w = out
                for k in CATEGORIES:
                    acc[k] += total[k]
                nmf += sum(s.factor_s for s in stages)
                wall += w
            n = args.repeat
            row = {"p": p, "grid": "x".join(str(g) for g in grid)}
            row.update({k: acc[k] / n for k in CATEGORIES})
            row["total_s"] = sum(acc.values()) / n
            row["nmf_s"] = nmf / n
            row["wall_s"] = wall / n
            rows.append(row)
    finally:
        if tmp is not None:
            tmp.cleanup()
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.csv:
        Path(args.csv).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    missing = [r["p"] for r in rows if min(r[k] for k in LOCAL_CATEGORIES) <= 0]
    if missing:
        print(f"warning: zero local timing category for p={missing}", file=sys.stderr)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="distntt", description="Distributed nonnegative tensor-train decomposition.")
    sub = parser.add_subparsers(dest="command", required=True)

    def backend(p):
        p.add_argument("--backend", choices=("threads", "mpi"), default="threads",
                       help="in-process ranks (default) or an mpirun-launched world")

    g = sub.add_parser("generate", help="write a synthetic tensor with known TT ranks")
    g.add_argument("--shape", type=_int_list, required=True, help="e.g. 8,8,8,8")
    g.add_argument("--ranks", type=_int_list, required=True, help="full, inner, or single rank")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-var", type=float, default=0.0)
    g.add_argument("--noise-seed", type=int, default=None)
    g.add_argument("--clip", action=argparse.BooleanOptionalAction, default=True,
                   help="clip negative values after adding noise")
    g.add_argument("--grid", type=_int_list, default=None, help="p1xp2x... or a rank count")
    g.add_argument("--out", required=True)
    backend(g)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("decompose", help="decompose a stored tensor into a tensor train")
    d.add_argument("input")
    d.add_argument("--eps", type=float, default=None)
    d.add_argument("--ranks", type=_int_list, default=None)
    d.add_argument("--method", choices=METHODS, default="ntt-bcd")
    d.add_argument("--grid", type=_int_list, default=None, help="p1xp2x... or a rank count")
    d.add_argument("--iters", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--delta", type=float, default=0.9999)
    d.add_argument("--tol", type=float, default=None)
    d.add_argument("--out", default=None, help="archive directory")
    d.add_argument("--csv", default=None, help="per-stage metrics CSV")
    d.add_argument("--timings", action="store_true", help="also write timings.json into the archive")
    d.add_argument("--probe-error", type=int, default=None, metavar="N",
                   help="estimate the error on N random entries")
    d.add_argument("--global-eps", action="store_true", help="split eps over the stages (extension)")
    d.add_argument("--literal-alg3-steps", action="store_true",
                   help="divide the H gradient by sqrt(||W^T W||)")
    backend(d)
    d.set_defaults(func=cmd_decompose)

    r = sub.add_parser("reconstruct", help="materialize an archive as a dense store")
    r.add_argument("--archive", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    m = sub.add_parser("metrics", help="relative error and SSIM between two stores")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--ssim", action="store_true")
    m.add_argument("--slice", type=_int_list, default=None, help="indices of the trailing modes")
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bench", help="per-category timings over several rank counts")
    b.add_argument("--input", default=None, help="store to decompose (default: generate one)")
    b.add_argument("--shape", type=_int_list, default=[32, 32, 32, 32])
    b.add_argument("--ranks", type=_int_list, default=[1, 4, 4, 4, 1])
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--method", choices=METHODS, default="ntt-bcd")
    b.add_argument("--grid-list", type=_int_list, default=[1, 2, 4])
    b.add_argument("--repeat", type=int, default=10)
    b.add_argument("--iters", type=int, default=100)
    b.add_argument("--csv", default=None)
    backend(b)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"distntt: error: {exc}", file=sys.stderr)
        return 2
    except (DimensionError, RankError, NonnegativityError, DegenerateInputError) as exc:
        print(f"distntt: error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"distntt: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (StoreError, ValueError) as exc:
        print(f"distntt: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
