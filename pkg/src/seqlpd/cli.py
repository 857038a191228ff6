"""Command-line front end: describe -> cluster -> match -> eval, plus synth.

Every failure exits nonzero after printing exactly one machine-parsable
line "E:<code>:<detail>" on stderr.  All commands are deterministic for a
fixed seed: rerunning produces byte-identical output files.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import cluster as cluster_mod
from . import config as config_mod
from . import metrics, net, placemap, seqmatch, synth
from ._accel import thread_count
from .cloud import Pose, accumulate_submap, load_csv, load_kitti_bin, normalize_submap
from .errors import (EmptyInput, FormatError, InsufficientHistory, InvalidParams,
                     IoError, SeqLPDError)
from .features import local_features


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def _list_frames(input_dir) -> list:
    try:
        names = sorted(os.listdir(input_dir))
    except OSError as exc:
        raise IoError(f"{input_dir}: {exc}") from exc
    frames = [n for n in names
              if n.endswith(".bin") or (n.endswith(".csv") and n != "poses.csv")]
    if not frames:
        raise EmptyInput(f"no .bin or .csv frames in {input_dir}")
    return frames


def _load_poses(input_dir):
    """poses.csv as {frame_id: Pose}, or None when the file is absent."""
    path = os.path.join(input_dir, "poses.csv")
    if not os.path.exists(path):
        return None
    poses = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or (ln == 1 and text.lower().startswith("frame_id")):
                continue
            parts = text.split(",")
            if len(parts) != 4:
                raise FormatError(f"{path}:{ln}: expected frame_id,x,y,z")
            try:
                fid = int(parts[0])
                x, y, z = (float(p) for p in parts[1:])
            except ValueError:
                raise FormatError(f"{path}:{ln}: malformed row") from None
            poses[fid] = Pose(x, y, z, fid)
    return poses


def _net_config(cfg: config_mod.Config) -> net.NetConfig:
    return net.NetConfig(k_graph=cfg.k_graph, vlad_clusters=cfg.vlad_clusters,
                         descriptor_dim=cfg.descriptor_dim)


def _describe_dir(input_dir, cfg: config_mod.Config, ws):
    """Load, accumulate, normalize and describe every frame of a directory.

    Returns (frame_ids, poses, descriptors, stats) where stats holds
    (point_count, seconds) per frame.  Frames run in a thread pool capped by
    SEQLPD_THREADS; each frame is an independent job, so any worker count
    yields identical descriptors.
    """
    names = _list_frames(input_dir)
    pose_table = _load_poses(input_dir)
    clouds = []
    ids = []
    for i, name in enumerate(names):
        path = os.path.join(input_dir, name)
        stem = name.rsplit(".", 1)[0]
        fid = int(stem) if stem.isdigit() else i
        pc = load_kitti_bin(path, fid) if name.endswith(".bin") else load_csv(path, fid)
        clouds.append(pc)
        ids.append(fid)
    if pose_table is not None:
        for fid in ids:
            if fid not in pose_table:
                raise FormatError(f"{input_dir}/poses.csv: missing frame {fid}")
        poses = [pose_table[fid] for fid in ids]
    else:
        poses = [Pose(0.0, 0.0, 0.0, fid) for fid in ids]

    netcfg = _net_config(cfg)

    def job(i: int):
        t0 = time.perf_counter()
        if pose_table is not None:
            pc = accumulate_submap(clouds[:i + 1], poses[:i + 1], 20.0)
        else:
            pc = clouds[i]
        sub = normalize_submap(pc, cfg.n_sub, seed=cfg.seed + i)
        lf = local_features(sub, cfg.k_local)
        if ws is None:
            desc = net.baseline_descriptor(sub, lf)
        else:
            desc = net.describe(sub, lf, ws, netcfg)
        return desc, (len(pc), time.perf_counter() - t0)

    workers = min(thread_count(), max(1, len(clouds)))
    if workers == 1:
        results = [job(i) for i in range(len(clouds))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(clouds))))
    descs = [r[0] for r in results]
    stats = [r[1] for r in results]
    return ids, poses, descs, stats


def _build_config(args) -> config_mod.Config:
    cfg = config_mod.Config()
    if getattr(args, "config", None):
        cfg = config_mod.load(args.config, cfg)
    overrides = {}
    for flag, key in getattr(args, "_cfg_flags", ()):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return config_mod.apply(cfg, overrides).validate()


def _load_ws(args, cfg: config_mod.Config):
    if getattr(args, "baseline", False):
        return None
    return net.load_weights(args.weights, _net_config(cfg))


def cmd_describe(args) -> int:
    cfg = _build_config(args)
    ws = _load_ws(args, cfg)
    ids, poses, descs, stats = _describe_dir(args.input, cfg, ws)
    pmap = placemap.PlaceMap()
    for fid, pose, desc, (npts, dt) in zip(ids, poses, descs, stats):
        pmap.insert(placemap.PlaceEntry(fid, pose, desc))
        print(f"frame={fid} points={npts} t={dt * 1000.0:.1f}ms")
    placemap.save(pmap, args.out)
    print(f"wrote {args.out} entries={len(pmap)}")
    return 0


def cmd_cluster(args) -> int:
    cfg = _build_config(args)
    if cfg.D is None:
        raise InvalidParams("D is required (flag --D or config key D)")
    pmap = placemap.load(args.map)
    if len(pmap) == 0:
        raise EmptyInput("empty place map")
    desc = pmap.descriptor_matrix().astype(np.float64)
    if len(pmap) == 1:
        clustering = cluster_mod.Clustering(K=1, centers=desc[:1].copy(),
                                            assignment=np.zeros(1, dtype=np.int64),
                                            distortion=0.0, history=(0.0,))
        constraint_ok = True
    else:
        res = cluster_mod.elbow_select(
            desc, cluster_mod.ClusterParams(D=cfg.D, K_max=cfg.K_max, seed=cfg.seed))
        clustering = res.clustering
        constraint_ok = res.constraint_ok
    skf = cluster_mod.super_keyframes(pmap, clustering)
    cluster_mod.save_clusters(skf, cfg.D, args.out)
    flag = "true" if constraint_ok else "false"
    print(f"K={clustering.K} distortion={clustering.distortion:.6f} constraint_ok={flag}")
    fids = pmap.frame_ids()
    for k in range(skf.K):
        print(f"cluster={k} size={skf.cluster_size(k)} keyframe={fids[skf.keyframes[k]]}")
    print(f"wrote {args.out}")
    return 0


def cmd_match(args) -> int:
    cfg = _build_config(args)
    ws = _load_ws(args, cfg)
    pmap = placemap.load(args.map)
    skf, _ = cluster_mod.load_clusters(args.clusters, pmap)
    qids, _, qdescs, _ = _describe_dir(args.query, cfg, ws)
    if len(qdescs) < cfg.W:
        raise InsufficientHistory(f"{len(qdescs)} query frames, need at least W={cfg.W}")
    params = seqmatch.MatchParams(W=cfg.W, v_min=cfg.v_min, v_max=cfg.v_max,
                                  v_step=cfg.v_step, accept_ratio=cfg.accept_ratio,
                                  mirror=cfg.mirror)
    if args.diffmat:
        m = seqmatch.difference_matrix(np.stack(qdescs), pmap.descriptor_matrix())
        if args.diffmat.endswith(".csv"):
            seqmatch.export_csv(m, args.diffmat)
        else:
            seqmatch.export_pgm(m, args.diffmat)
    fids = pmap.frame_ids()
    for qi in range(cfg.W - 1, len(qdescs)):
        window = np.stack(qdescs[qi - cfg.W + 1:qi + 1])
        r = seqmatch.detect_loop(window, pmap, skf, params)
        ref = str(int(fids[r.ref_end])) if r.accepted else "none"
        ok = "true" if r.accepted else "false"
        print(f"frame={qids[qi]} ref={ref} v={r.velocity:.2f} "
              f"score={r.score:.6f} accepted={ok} cluster={r.cluster_id}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    if cfg.gt_radius is None:
        raise InvalidParams("gt_radius is required (flag --gt-radius or config key gt_radius)")
    ws = _load_ws(args, cfg)
    pmap = placemap.load(args.map)
    if not os.path.exists(os.path.join(args.query, "poses.csv")):
        raise InvalidParams("query poses.csv is required for evaluation")
    qids, qposes, qdescs, _ = _describe_dir(args.query, cfg, ws)
    try:
        n_list = [int(v) for v in args.n.split(",") if v.strip()]
    except ValueError:
        raise InvalidParams(f"bad N list '{args.n}'") from None
    if not n_list:
        raise InvalidParams("empty N list")
    qd = np.stack(qdescs)
    qp = np.array([[p.x, p.y, p.z] for p in qposes], dtype=np.float64)
    rows = []
    for n in n_list:
        r = metrics.recall_at_n(qd, qp, pmap, cfg.gt_radius, n)
        rows.append((f"recall_at_{n}", r.percentage, n, cfg.gt_radius, len(pmap)))
    r1p = metrics.recall_at_one_percent(qd, qp, pmap, cfg.gt_radius)
    rows.append(("recall_at_1pct", r1p.percentage, r1p.N, cfg.gt_radius, len(pmap)))
    if len(qdescs) >= metrics.RUN_LEN:
        runs = [(qd[i:i + metrics.RUN_LEN], qp[i:i + metrics.RUN_LEN])
                for i in range(0, len(qdescs) - metrics.RUN_LEN + 1, metrics.RUN_LEN)]
        pct = metrics.seq_protocol(runs, pmap, cfg.gt_radius, cfg.min_successes)
        rows.append(("seq_protocol", pct, metrics.RUN_LEN, cfg.gt_radius, len(pmap)))
    for line in metrics.report_lines(rows):
        print(line)
    return 0


def cmd_synth(args) -> int:
    info = synth.generate(args.out, args.scenario, sigma=args.sigma, seed=args.seed,
                          places=args.places, points=args.points)
    print(f"scenario={info['scenario']} map_frames={info['map_frames']} "
          f"query_frames={info['query_frames']} gt_rows={info['gt_rows']}")
    return 0


def _add_describe_flags(p, with_weights=True):
    if with_weights:
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--weights", help="LPDW weight file")
        group.add_argument("--baseline", action="store_true",
                           help="use the weight-free histogram descriptor")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--n-sub", type=int, default=None, dest="n_sub")
    p.add_argument("--k-local", type=int, default=None, dest="k_local")
    p.add_argument("--k-graph", type=int, default=None, dest="k_graph")
    p.add_argument("--vlad-clusters", type=int, default=None, dest="vlad_clusters")
    p.add_argument("--descriptor-dim", type=int, default=None, dest="descriptor_dim")
    p.add_argument("--seed", type=int, default=None)
    return [("n_sub", "n_sub"), ("k_local", "k_local"), ("k_graph", "k_graph"),
            ("vlad_clusters", "vlad_clusters"), ("descriptor_dim", "descriptor_dim"),
            ("seed", "seed")]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqlpd",
                     description="LiDAR loop-closure pipeline: describe, cluster, "
                                 "match, eval, synth")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("describe", help="turn a frame directory into an LPDM map")
    p.add_argument("input", help="directory of .bin/.csv frames (optional poses.csv)")
    p.add_argument("-o", "--out", required=True, help="output LPDM path")
    flags = _add_describe_flags(p)
    p.set_defaults(func=cmd_describe, _cfg_flags=flags)

    p = sub.add_parser("cluster", help="cluster an LPDM map into an LPDC file")
    p.add_argument("map", help="LPDM map path")
    p.add_argument("-o", "--out", required=True, help="output LPDC path")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--D", type=float, default=None, dest="D",
                   help="distance ceiling (required here or in the config)")
    p.add_argument("--k-max", type=int, default=None, dest="K_max")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_cluster,
                   _cfg_flags=[("D", "D"), ("K_max", "K_max"), ("seed", "seed")])

    p = sub.add_parser("match", help="loop detection of query frames against a map")
    p.add_argument("map", help="LPDM map path")
    p.add_argument("clusters", help="LPDC clusters path")
    p.add_argument("query", help="directory of query frames")
    flags = _add_describe_flags(p)
    p.add_argument("--W", type=int, default=None, dest="W")
    p.add_argument("--v-min", type=float, default=None, dest="v_min")
    p.add_argument("--v-max", type=float, default=None, dest="v_max")
    p.add_argument("--v-step", type=float, default=None, dest="v_step")
    p.add_argument("--accept-ratio", type=float, default=None, dest="accept_ratio")
    p.add_argument("--mirror", action="store_true", default=None,
                   help="also search reversed reference runs")
    p.add_argument("--diffmat", help="export the query x map difference matrix "
                                     "(.pgm or .csv)")
    flags += [("W", "W"), ("v_min", "v_min"), ("v_max", "v_max"),
              ("v_step", "v_step"), ("accept_ratio", "accept_ratio"),
              ("mirror", "mirror")]
    p.set_defaults(func=cmd_match, _cfg_flags=flags)

    p = sub.add_parser("eval", help="retrieval metrics of query frames against a map")
    p.add_argument("map", help="LPDM map path")
    p.add_argument("query", help="directory of query frames with poses.csv")
    flags = _add_describe_flags(p)
    p.add_argument("--gt-radius", type=float, default=None, dest="gt_radius")
    p.add_argument("--n", default="1", help="comma-separated N list for Recall@N")
    p.add_argument("--min-successes", type=int, default=None, dest="min_successes")
    flags += [("gt_radius", "gt_radius"), ("min_successes", "min_successes")]
    p.set_defaults(func=cmd_eval, _cfg_flags=flags)

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("out", help="output directory")
    p.add_argument("--scenario", required=True, choices=synth.SCENARIOS)
    p.add_argument("--sigma", type=float, default=0.0, help="per-point jitter std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--places", type=int, default=60)
    p.add_argument("--points", type=int, default=1024)
    p.set_defaults(func=cmd_synth, _cfg_flags=[])

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _Usage as exc:
        sys.stderr.write(f"E:UsageError:{_one_line(exc)}\n")
        return 2
    except SeqLPDError as exc:
        sys.stderr.write(f"E:{exc.code}:{_one_line(exc)}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
