"""Command-line front end: ``jointchar <command> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical
failure. Every command that writes files records a run in
``manifest.json`` next to its outputs.
"""

import argparse
import datetime
import hashlib
import json
import sys
import time
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .cube import (
    DEFAULT_EXCLUDE,
    CubeMeta,
    apply_band_exclusions,
    cube_to_matrix,
    data_path_for,
    read_cube,
    spatial_subset,
    write_cube,
)
from .errors import DataError, JointCharError, LengthMismatch
from .fileio import atomic_write, read_csv, write_csv
from .joint import (
    build_joint_space,
    footprint_overlay,
    geographic_footprint,
    pairwise_spectrum_difference,
    perplexity_sweep,
    read_joint_csv,
    read_roi_file,
    roi_stats,
    select_roi,
    td_matrix,
    write_dispersion_csv,
    write_joint_csv,
)
from .linalg import DataMatrix, fit_pca, project, write_model_csv, write_scores_csv
from .plot import column, plot_csv, scatter_svg
from .synthetic import RgbImage, gen_figure, gen_vegetation_cube, image_to_matrix, read_ppm, write_pgm, write_ppm
from .tsne import TsneConfig, embedding_metadata, run_tsne, write_embedding_csv, write_metadata


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def record_run(out_dir, argv, inputs, seeds, started, extra=None):
    """Append this run to ``out_dir/manifest.json``."""
    out_dir = Path(out_dir)
    path = out_dir / "manifest.json"
    runs = []
    if path.exists():
        runs = json.loads(path.read_text(encoding="utf-8")).get("runs", [])
    run = {
        "command": ["jointchar", *argv],
        "seeds": list(seeds),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "version": __version__,
        "started": datetime.datetime.fromtimestamp(started, datetime.timezone.utc).isoformat(timespec="seconds"),
        "duration_s": round(time.time() - started, 3),
    }
    if extra:
        run.update(extra)
    runs.append(run)
    atomic_write(path, json.dumps({"runs": runs}, indent=2) + "\n")


class Loaded:
    """An input resolved to a DataMatrix plus what we know about its source."""

    def __init__(self, X, files, wavelengths=None, shape=None, image=None, flagged=0):
        self.X = X
        self.files = files
        self.wavelengths = wavelengths
        self.shape = shape  # (lines, samples) of the source raster
        self.image = image  # RgbImage for PPM inputs
        self.flagged = flagged


def _header_for(path):
    path = Path(path)
    if path.suffix.lower() == ".hdr":
        return path
    for cand in (path.with_suffix(".hdr"), Path(str(path) + ".hdr")):
        if cand.exists():
            return cand
    return None


def parse_subset(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--subset expects LINE,SAMPLE,HEIGHT,WIDTH, got {text!r}") from exc
    if len(vals) != 4:
        raise UsageError(f"--subset expects LINE,SAMPLE,HEIGHT,WIDTH, got {text!r}")
    return vals


def load_input(path, args):
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        img = read_ppm(path)
        return Loaded(image_to_matrix(img), [path], shape=(img.height, img.width), image=img)
    if suffix == ".csv":
        return _load_csv(path)
    header = _header_for(path)
    if header is None:
        raise DataError(f"cannot tell the format of {path} (expected .ppm, .csv or an ENVI cube with .hdr)")
    data = path if path != header else data_path_for(header)
    cube = read_cube(header, data, reflectance_scale=getattr(args, "reflectance_scale", 1.0))
    exclude = getattr(args, "exclude_bands", None)
    if exclude is None:
        exclude = DEFAULT_EXCLUDE if cube.bands == 224 else ""
    cube = apply_band_exclusions(cube, exclude)
    if getattr(args, "subset", None):
        cube = spatial_subset(cube, *parse_subset(args.subset))
    X, flagged = cube_to_matrix(cube)
    if flagged:
        print(f"note: {flagged} pixels flagged out of range and dropped", file=sys.stderr)
    return Loaded(X, [header, data], wavelengths=cube.retained_wavelengths,
                  shape=(cube.origin[0] + cube.lines, cube.origin[1] + cube.samples), flagged=flagged)


def _load_csv(path):
    header, rows = read_csv(path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    lower = [h.lower() for h in header]
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from exc
    if data.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    if "pixel_row" in lower and "pixel_col" in lower:
        idx_cols = [lower.index("pixel_row"), lower.index("pixel_col")]
        index = data[:, idx_cols].astype(np.int64)
        feats = [j for j in range(len(header)) if j not in idx_cols]
    else:
        index = None
        feats = list(range(len(header)))
    X = DataMatrix(data[:, feats], index)
    shape = tuple(int(v) + 1 for v in X.row_index.max(axis=0))
    return Loaded(X, [path], shape=shape)


def subsample(X, max_samples, seed):
    if max_samples is None or X.n_samples <= max_samples:
        return X
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(X.n_samples, size=max_samples, replace=False))
    return X.take(keep)


def parse_input_space(text):
    if text in (None, "", "data"):
        return None
    if text.startswith("pc:"):
        try:
            k = int(text[3:])
        except ValueError:
            k = 0
        if k >= 1:
            return k
    raise UsageError(f"--input-space expects 'data' or 'pc:K', got {text!r}")


def parse_perplexities(text):
    """'5:50:5' (inclusive) or '5,10,30'."""
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            vals = list(np.arange(lo, hi + step * 1e-9, step))
        else:
            vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse perplexity list {text!r}") from exc
    return [int(v) if float(v).is_integer() else float(v) for v in vals]


def parse_seeds(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse seed list {text!r}") from exc


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def tsne_config(args, seed=None):
    return TsneConfig(
        perplexity=args.perplexity,
        early_exaggeration=args.early_exaggeration,
        learning_rate=args.learning_rate,
        iterations=args.iterations,
        theta=args.theta,
        seed=args.seed if seed is None else seed,
    )


# -- commands -----------------------------------------------------------------------

def cmd_synth(args, argv, started):
    out = Path(args.out)
    if args.figure == "veg":
        values, wl, labels = gen_vegetation_cube(lines=args.lines, samples=args.samples, noise=args.noise, seed=args.seed)
        meta = CubeMeta(samples=args.samples, lines=args.lines, bands=values.shape[2], interleave="bil",
                        data_type="int16", wavelengths=tuple(wl), reflectance_scale=1e-4)
        header = write_cube(out, values, meta)
        labels_path = out.with_name(out.stem + "_labels.pgm")
        write_pgm(labels_path, labels.astype(np.uint8))
        print(f"wrote {out} ({args.lines}x{args.samples}x{values.shape[2]} int16, scale 1e-4), {header}, {labels_path}")
    else:
        img = gen_figure(int(args.figure))
        write_ppm(out, img)
        n_distinct = len({tuple(p) for p in img.pixels.reshape(-1, 3)})
        print(f"wrote {out} ({img.width}x{img.height}, {n_distinct} distinct colors)")
    record_run(out.parent, argv, [], [args.seed] if args.figure == "veg" else [], started)


def cmd_pca(args, argv, started):
    src = load_input(args.input, args)
    model = fit_pca(src.X, k=args.k, standardize=args.standardize)
    scores = project(model, src.X)
    out = Path(args.out_dir)
    write_model_csv(out / "model.csv", model)
    write_scores_csv(out / "scores.csv", src.X.row_index, scores)
    ratios = ", ".join(f"{r:.6g}" for r in model.explained_variance_ratio)
    print(f"PCA on {src.X.n_samples} x {src.X.n_features}; explained variance ratio: {ratios}")
    record_run(out, argv, src.files, [], started)


def cmd_tsne(args, argv, started):
    _set_threads(args.threads)
    src = load_input(args.input, args)
    k = parse_input_space(args.input_space)
    X = src.X
    if k is not None:
        model = fit_pca(X, k=min(k, X.n_features), standardize=args.standardize)
        X = DataMatrix(project(model, X), X.row_index)
    n_total = X.n_samples
    X = subsample(X, args.max_samples, args.seed)
    cfg = tsne_config(args)
    emb = run_tsne(X, cfg)
    out = Path(args.out_dir)
    write_embedding_csv(out / "embedding.csv", X.row_index, emb)
    meta = embedding_metadata(emb, {
        "n_samples": X.n_samples,
        "n_input_samples": n_total,
        "n_features": X.n_features,
        "input_space": args.input_space or "data",
        "deterministic": bool(args.deterministic),
    })
    write_metadata(out / "embedding.meta", meta)
    print(f"t-SNE on {X.n_samples} x {X.n_features} (perplexity {cfg.perplexity}, theta {emb.theta}, "
          f"seed {cfg.seed}); KL {emb.initial_kl:.4g} -> {emb.final_kl:.4g}")
    record_run(out, argv, src.files, [cfg.seed], started)


def cmd_joint(args, argv, started):
    scores_src = _load_csv(Path(args.scores))
    emb_src = _load_csv(Path(args.embedding))
    if emb_src.X.n_features != 2:
        raise LengthMismatch(f"{args.embedding}: expected 2 embedding columns, got {emb_src.X.n_features}")
    scores = scores_src.X
    if args.k is not None:
        scores = DataMatrix(scores.values[:, : args.k], scores.row_index)
    emb_index = emb_src.X.row_index
    if scores.n_samples != emb_src.X.n_samples:
        # embedding of a subsample: keep the score rows it covers, in score order
        wanted = {tuple(p) for p in emb_index.tolist()}
        keep = np.array([tuple(p) in wanted for p in scores.row_index.tolist()])
        if keep.sum() != emb_src.X.n_samples:
            raise LengthMismatch(
                f"embedding has {emb_src.X.n_samples} rows, {int(keep.sum())} of them match score rows"
            )
        scores = scores.take(np.flatnonzero(keep))
    space = build_joint_space(scores.values, emb_src.X.values, scores.row_index, emb_index)
    out = Path(args.out_dir)
    write_joint_csv(out / "joint.csv", space)
    print(f"joint space: {space.n} rows, axes {', '.join(space.axes)}")
    record_run(out, argv, [Path(args.scores), Path(args.embedding)], [], started)


def cmd_roi(args, argv, started):
    space = read_joint_csv(args.joint)
    rois = read_roi_file(args.rois, axes=space.axes)
    src = load_input(args.input, args)
    lookup = {tuple(p): i for i, p in enumerate(src.X.row_index.tolist())}
    try:
        rows = np.array([lookup[tuple(p)] for p in space.row_index.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise LengthMismatch(f"joint pixel {exc.args[0]} is not present in {args.input}") from exc
    X = src.X.take(rows)
    wl = src.wavelengths if src.wavelengths is not None else np.arange(1, X.n_features + 1, dtype=float)
    out = Path(args.out_dir)

    masks, stats, summary = [], [], []
    for roi in rois:
        mask = select_roi(space, roi)
        masks.append(mask)
        s = roi_stats(X, mask, wl, name=roi.name)
        stats.append(s)
        summary.append([roi.name, roi.x_axis, roi.y_axis, s.member_count])
        write_csv(out / f"roi_{roi.name}_stats.csv", ["wavelength_nm", "mean_reflectance"], zip(wl, s.mean))
    write_csv(out / "roi_summary.csv", ["roi", "x_axis", "y_axis", "member_count"], summary)

    if len(stats) >= 2:
        pairs = list(combinations(range(len(stats)), 2))
        diffs = [pairwise_spectrum_difference(stats[a], stats[b])[1] for a, b in pairs]
        names = [f"{stats[a].name}-{stats[b].name}" for a, b in pairs]
        write_csv(out / "roi_differences.csv", ["wavelength_nm", *names], (
            [w, *(d[i] for d in diffs)] for i, w in enumerate(wl)))
        M = td_matrix(stats)
        write_csv(out / "td_matrix.csv", ["roi", *(s.name for s in stats)],
                  ([s.name, *M[i]] for i, s in enumerate(stats)))

    lines, samples = src.shape
    labels = geographic_footprint(space, masks, lines, samples)
    write_pgm(out / "footprint.pgm", labels.astype(np.uint8))
    background = src.image.pixels if src.image is not None else None
    write_ppm(out / "footprint.ppm", RgbImage(footprint_overlay(labels, background)))
    for name, _, _, n in summary:
        print(f"{name}: {n} members")
    record_run(out, argv, [Path(args.joint), Path(args.rois), *src.files], [], started)


def _value_groups(X):
    """Group identical input rows; names are the values joined with '/'."""
    _, inverse = np.unique(X.values, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    groups = {}
    for g in range(inverse.max() + 1):
        members = np.flatnonzero(inverse == g)
        groups["/".join(f"{v:g}" for v in X.values[members[0]])] = members
    return groups


def cmd_sweep(args, argv, started):
    _set_threads(args.threads)
    src = load_input(args.input, args)
    perplexities = parse_perplexities(args.perplexities)
    seeds = parse_seeds(args.seeds)
    X = subsample(src.X, args.max_samples, args.subsample_seed)
    groups = _value_groups(X)
    for p in perplexities:
        TsneConfig(perplexity=p).validate(X.n_samples)
    base = tsne_config(args, seed=0)

    def progress(p, s):
        print(f"perplexity {p} seed {s} done", file=sys.stderr)

    rows = perplexity_sweep(X, groups, perplexities, seeds, base, progress=progress)
    out = Path(args.out_dir)
    write_dispersion_csv(out / "dispersion.csv", rows)
    print(f"sweep: {len(perplexities)} perplexities x {len(seeds)} seeds x {len(groups)} groups = {len(rows)} rows")
    record_run(out, argv, src.files, seeds, started, {"subsample_seed": args.subsample_seed})


def cmd_plot(args, argv, started):
    out = Path(args.out)
    if args.image:
        header, rows = read_csv(args.csv)
        lower = [h.lower() for h in header]
        x = np.array(column(header, rows, args.x), dtype=float)
        y = np.array(column(header, rows, args.y), dtype=float)
        if "pixel_row" not in lower or "pixel_col" not in lower:
            raise DataError(f"{args.csv}: --image needs pixel_row and pixel_col columns")
        r = np.array(column(header, rows, "pixel_row"), dtype=float).astype(int)
        c = np.array(column(header, rows, "pixel_col"), dtype=float).astype(int)
        img = read_ppm(args.image)
        if r.max(initial=0) >= img.height or c.max(initial=0) >= img.width:
            raise DataError(f"pixel coordinates exceed the {img.width}x{img.height} image")
        atomic_write(out, scatter_svg(x, y, args.x, args.y, args.title, rgb=img.pixels[r, c]))
        n = len(x)
    else:
        n = plot_csv(args.csv, out, args.x, args.y, args.color_by, args.categorical, args.title)
    print(f"wrote {out} ({n} points)")
    inputs = [Path(args.csv)] + ([Path(args.image)] if args.image else [])
    record_run(out.parent, argv, inputs, [], started)


def cmd_cube_info(args, argv, started):
    header = _header_for(args.header)
    if header is None:
        raise DataError(f"no ENVI header found for {args.header}")
    cube = read_cube(header, reflectance_scale=args.reflectance_scale)
    exclude = args.exclude_bands
    if exclude is None:
        exclude = DEFAULT_EXCLUDE if cube.bands == 224 else ""
    cube = apply_band_exclusions(cube, exclude)
    m = cube.meta
    wl = cube.wavelengths
    info = {
        "samples": m.samples,
        "lines": m.lines,
        "bands": m.bands,
        "interleave": m.interleave,
        "data_type": m.data_type,
        "byte_order": m.byte_order,
        "header_offset": m.header_offset,
        "wavelength_range_nm": [float(wl[0]), float(wl[-1])] if m.wavelengths is not None else None,
        "excluded": exclude,
        "retained_bands": cube.retained_bands,
    }
    if args.json:
        print(json.dumps(info, indent=2))
    else:
        for k, v in info.items():
            print(f"{k}: {v}")


# -- parser -------------------------------------------------------------------------

def _add_cube_flags(p):
    p.add_argument("--exclude-bands", default=None, metavar="RANGES",
                   help=f"1-based band ranges to drop (default for 224 bands: {DEFAULT_EXCLUDE}; '' keeps all)")
    p.add_argument("--reflectance-scale", type=float, default=1.0,
                   help="multiplier for integer cube data, e.g. 1e-4")
    p.add_argument("--subset", default=None, metavar="LINE,SAMPLE,HEIGHT,WIDTH", help="spatial window of a cube")


def _add_tsne_flags(p):
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=200.0)
    p.add_argument("--early-exaggeration", type=float, default=12.0)
    p.add_argument("--theta", type=float, default=None,
                   help="Barnes-Hut opening angle; 0 forces exact (default: 0.5 above 5000 samples)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int, default=10000, help="uniform random subsample above this size")
    p.add_argument("--deterministic", action="store_true", help="fixed reduction order (always the case here)")
    p.add_argument("--threads", type=int, default=None)


def build_parser():
    parser = _Parser(prog="jointchar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"jointchar {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic test image (PPM) or vegetation cube (ENVI)")
    p.add_argument("--figure", required=True, choices=["1", "2", "3", "veg"])
    p.add_argument("--out", required=True)
    p.add_argument("--lines", type=int, default=64)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pca", help="PCA model and scores")
    p.add_argument("input", help="PPM, CSV, or ENVI cube (.hdr or data file)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out-dir", required=True)
    _add_cube_flags(p)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("tsne", help="2-D t-SNE embedding")
    p.add_argument("input")
    p.add_argument("--input-space", default=None, metavar="data|pc:K")
    p.add_argument("--standardize", action="store_true", help="with pc:K, standardize before PCA")
    p.add_argument("--out-dir", required=True)
    _add_tsne_flags(p)
    _add_cube_flags(p)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("joint", help="join PC scores and t-SNE coordinates")
    p.add_argument("--scores", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--k", type=int, default=None, help="keep only the first K PCs")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("roi", help="ROI statistics, divergence and footprints")
    p.add_argument("--joint", required=True)
    p.add_argument("--rois", required=True)
    p.add_argument("--input", required=True, help="source of the spectra (PPM, CSV or cube)")
    p.add_argument("--out-dir", required=True)
    _add_cube_flags(p)
    p.set_defaults(func=cmd_roi)

    p = sub.add_parser("sweep", help="cluster dispersion across perplexities and seeds")
    p.add_argument("input")
    p.add_argument("--perplexities", default="5:50:5")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--subsample-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_tsne_flags(p)
    _add_cube_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="SVG scatter of two CSV columns")
    p.add_argument("csv")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--color-by", default=None)
    p.add_argument("--categorical", action="store_true")
    p.add_argument("--image", default=None, help="color points by their pixel in this PPM")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("cube-info", help="describe an ENVI cube")
    p.add_argument("header")
    p.add_argument("--exclude-bands", default=None)
    p.add_argument("--reflectance-scale", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cube_info, out_dir=None)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        args.func(args, argv, started)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except JointCharError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
