"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. Options resolve as
command-line flag, then the JSON ``--config`` file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import ChipQAError

log = logging.getLogger("chipqa")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
THREADS_ENV = "CHIPQA_NUM_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _KVFormatter(logging.Formatter):
    def format(self, record):
        base = f"ts={time.strftime('%Y-%m-%dT%H:%M:%S')} level={record.levelname.lower()} msg={json.dumps(record.getMessage())}"
        extra = getattr(record, "kv", None)
        if extra:
            base += " " + " ".join(f"{k}={json.dumps(v, default=str)}" for k, v in extra.items())
        return base


def _log(msg, **kv):
    log.info(msg, extra={"kv": kv})


def _setup_logging(level: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_KVFormatter())
    log.handlers[:] = [handler]
    log.setLevel(level.upper())
    log.propagate = False


DEFAULTS = {
    "t_prime": 5, "R": None, "stride": 1, "niqe_every": 1, "flow": "farneback",
    "jobs": None, "format": "420", "depth": 8, "fps": 30,
    "patch_size": 96, "video_stride": 30,
    "folds": 5, "seed": 0, "kernel": "rbf", "C": None, "gamma": None, "epsilon": None,
    "splits": 1000, "bins": 101, "range": [-4.0, 4.0],
}


class _Opts:
    """Merged view: explicit flag > config file entry > default."""

    def __init__(self, args, config: dict):
        self._args = args
        self._config = config

    def __getattr__(self, key):
        val = getattr(self._args, key, None)
        if val is not None:
            return val
        if key in self._config:
            return self._config[key]
        return DEFAULTS.get(key)

    def resolved(self) -> dict:
        """Every option with its effective value, minus ones that cannot change outputs."""
        skip = {"func", "config", "jobs", "log_level", "command"}
        keys = set(vars(self._args)) | set(self._config)
        return {k: getattr(self, k) for k in sorted(keys - skip)}


def _write_provenance(o, command: str) -> None:
    from ._atomic import atomic_open

    doc = {"command": command, "version": __version__, "options": o.resolved()}
    with atomic_open(o.out + ".json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_config(path: Optional[str], command: str) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    # per-command sections override top-level keys
    merged = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    merged.update(doc.get(command, {}) if isinstance(doc.get(command), dict) else {})
    return {k.replace("-", "_"): v for k, v in merged.items()}


def _jobs(o) -> int:
    if o.jobs is not None:
        return max(1, int(o.jobs))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _apply_threads():
    env = os.environ.get(THREADS_ENV)
    if env and env.isdigit():
        import cv2

        cv2.setNumThreads(int(env))


def _require_file(path):
    if not path:
        raise UsageError("missing required path")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _geometry(o):
    if o.width is None and o.height is None:
        return None
    return {"width": o.width, "height": o.height, "format": o.format, "depth": o.depth, "fps": o.fps}


def _extract_config(o):
    from .pipeline import ExtractConfig

    tp = int(o.t_prime)
    R = int(o.R) if o.R is not None else tp
    if R != tp and not o.allow_unequal:
        raise UsageError(f"--R {R} differs from --t-prime {tp}; pass --allow-unequal for experiments")
    try:
        return ExtractConfig(t_prime=tp, R=R, allow_unequal=bool(o.allow_unequal),
                             temporal_stride=int(o.stride), niqe_every=int(o.niqe_every), flow=o.flow)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_mos(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "video_id" not in rows[0] or "mos" not in rows[0]:
        raise ChipQAError(f"{path}: expected columns video_id,mos")
    return {r["video_id"]: float(r["mos"]) for r in rows}


def _join_mos(features_path, mos_path):
    from .errors import LengthMismatch
    from .pipeline import read_features_csv

    X, vids, cids = read_features_csv(features_path)
    mos = _read_mos(mos_path)
    missing = [v for v in vids if v not in mos]
    if missing:
        raise LengthMismatch(f"{len(missing)} videos lack a MOS entry, e.g. {missing[0]!r}")
    return X, np.array([mos[v] for v in vids]), vids, cids


def _train_kwargs(o):
    from .model import TrainConfig

    kw = {"folds": int(o.folds), "kernel": o.kernel}
    for key in ("C", "gamma", "epsilon"):
        val = getattr(o, key)
        if val is not None:
            kw[key] = tuple(float(x) for x in (val if isinstance(val, (list, tuple)) else [val]))
    try:
        TrainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return kw


def cmd_extract(o) -> int:
    from . import dumps, niqe, pipeline, videoio

    cfg = _extract_config(o)
    model = niqe.load_pristine(_require_file(o.pristine)) if o.pristine else None
    if model is None:
        _log("no pristine model given; spatial score set to 0 and flagged")
    videos = []
    chip_records = []

    def keep_chip(t, scale, domain, S):
        if scale == 1 and domain == "pixel":
            chip_records.append(S)

    for path in o.inputs:
        src = videoio.open_source(_require_file(path), _geometry(o))
        t0 = time.perf_counter()
        vf = pipeline.extract_video(src, cfg, model, content_id=o.content_id or "",
                                    jobs=_jobs(o), on_chip_frame=keep_chip if o.dump_chips else None)
        if not vf.content_id:
            vf.content_id = vf.video_id
        _log("extracted", path=path, frames=src.frame_count, instants=len(vf.per_instant),
             seconds=round(time.perf_counter() - t0, 3), flags=int(vf.flags))
        videos.append(vf)
    pipeline.write_features_csv(o.out, videos, per_instant=bool(o.per_instant))
    pipeline.write_sidecar(o.out + ".json", videos, cfg,
                           {"options": o.resolved(), "version": __version__})
    if o.dump_chips:
        dumps.write_fields(o.dump_chips, chip_records)
    return EXIT_OK


def cmd_fit_pristine(o) -> int:
    from . import niqe

    if not os.path.isdir(o.corpus):
        raise FileNotFoundError(f"no such directory: {o.corpus}")
    model = niqe.fit_pristine(niqe.corpus_frames(o.corpus, int(o.video_stride)), int(o.patch_size))
    niqe.save_pristine(model, o.out)
    _log("pristine model written", out=o.out)
    return EXIT_OK


def cmd_train(o) -> int:
    from . import model as mdl

    X, y, _, cids = _join_mos(_require_file(o.features), _require_file(o.mos))
    cfg = mdl.TrainConfig(seed=int(o.seed), **_train_kwargs(o))
    m = mdl.train(X, y, cids, cfg)
    mdl.save_model(m, o.out)
    _log("model trained", out=o.out, C=m.C, gamma=m.gamma, epsilon=m.epsilon,
         cv_srocc=m.info.get("cv_srocc"), support_vectors=len(m.dual_coefs))
    return EXIT_OK


def cmd_predict(o) -> int:
    from . import model as mdl
    from .pipeline import read_features_csv

    m = mdl.load_model(_require_file(o.model))
    X, vids, _ = read_features_csv(_require_file(o.features))
    scores = mdl.predict(m, X) if len(X) else np.zeros(0)
    from ._atomic import atomic_open

    with atomic_open(o.out, "w") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "score"])
        for v, s in zip(vids, np.atleast_1d(scores)):
            w.writerow([v, repr(float(s))])
    return EXIT_OK


def cmd_evaluate(o) -> int:
    from . import evaluation

    X, y, _, cids = _join_mos(_require_file(o.features), _require_file(o.mos))
    report = evaluation.run_protocol(X, y, cids, int(o.splits), int(o.seed),
                                     train_kwargs=_train_kwargs(o), jobs=_jobs(o))
    report["options"] = o.resolved()
    csv_path = os.path.splitext(o.out)[0] + ".csv"
    evaluation.write_report(report, o.out, csv_path)
    _log("evaluation done", median_srocc=report["median_srocc"], median_lcc=report["median_lcc"],
         failed=report["n_failed"])
    return EXIT_OK


def cmd_distort(o) -> int:
    from . import distortlab, videoio

    try:
        spec = distortlab.DistortionSpec(o.kind, int(o.severity), int(o.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    src = videoio.open_source(_require_file(o.inp), _geometry(o))
    frames = list(videoio.iter_luma(src))
    out = distortlab.apply(spec, frames)
    videoio.write_y4m(o.out, out, src.pixel_format, src.bit_depth, src.frame_rate)
    _log("distorted", kind=spec.kind, severity=spec.severity, frames=len(out), out=o.out)
    return EXIT_OK


def cmd_histdump(o) -> int:
    from . import dumps

    series = {}
    for item in o.dump:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).stem, item
        series[label] = list(dumps.read_fields(_require_file(path)))
    lo, hi = (float(x) for x in o.range)
    dumps.histogram_dump(series, o.out, int(o.bins), (lo, hi))
    return EXIT_OK


def _add_geometry(p):
    g = p.add_argument_group("raw YUV geometry (ignored for Y4M)")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--pix-fmt", "--format", dest="format", choices=("420", "422", "444", "mono"))
    g.add_argument("--bit-depth", "--depth", dest="depth", type=int, choices=(8, 10))
    g.add_argument("--fps", type=float)


def _add_train(p):
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel", choices=("rbf", "linear"))
    p.add_argument("--C", type=float, nargs="+", help="grid values")
    p.add_argument("--gamma", type=float, nargs="+", help="grid values")
    p.add_argument("--epsilon", type=float, nargs="+", help="grid values")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--jobs", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    p = _Parser(prog="chipqa", description="Space-time chip video quality features and regressor.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", parents=[common], help="compute 109-dim features per video")
    e.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="VIDEO")
    e.add_argument("--out", required=True, help="feature CSV (a .json sidecar is written beside it)")
    e.add_argument("--pristine", help="NIQE pristine model (.niqm)")
    e.add_argument("--t-prime", dest="t_prime", type=int)
    e.add_argument("--R", type=int, help="chip length (defaults to T')")
    e.add_argument("--allow-unequal", action="store_true", default=None)
    e.add_argument("--stride", type=int, help="temporal stride between instants")
    e.add_argument("--niqe-every", dest="niqe_every", type=int)
    e.add_argument("--flow", choices=("farneback", "zero"))
    e.add_argument("--content-id", dest="content_id")
    e.add_argument("--per-instant", dest="per_instant", action="store_true", default=None)
    e.add_argument("--dump-chips", dest="dump_chips", help="write scale-1 pixel chip frames here")
    _add_geometry(e)
    e.set_defaults(func=cmd_extract)

    f = sub.add_parser("fit-pristine", parents=[common], help="fit the NIQE pristine model")
    f.add_argument("--corpus", required=True, help="directory of images and/or Y4M clips")
    f.add_argument("--out", required=True)
    f.add_argument("--patch-size", dest="patch_size", type=int)
    f.add_argument("--video-stride", dest="video_stride", type=int)
    f.set_defaults(func=cmd_fit_pristine)

    t = sub.add_parser("train", parents=[common], help="train the SVR on features + MOS")
    t.add_argument("--features", required=True)
    t.add_argument("--mos", required=True, help="CSV with video_id,mos")
    t.add_argument("--out", required=True)
    _add_train(t)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="score feature rows with a model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--features", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", parents=[common], help="repeated content-separated splits")
    ev.add_argument("--features", required=True)
    ev.add_argument("--mos", required=True)
    ev.add_argument("--splits", type=int)
    ev.add_argument("--out", required=True, help="JSON report (CSV summary written beside it)")
    _add_train(ev)
    ev.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("distort", parents=[common], help="apply a synthetic distortion")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--kind", required=True)
    d.add_argument("--severity", type=int, required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True)
    _add_geometry(d)
    d.set_defaults(func=cmd_distort)

    h = sub.add_parser("histdump", parents=[common], help="unit-area histograms of chip dumps")
    h.add_argument("--dump", nargs="+", required=True, metavar="LABEL=PATH")
    h.add_argument("--bins", type=int)
    h.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_histdump)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.log_level)
    try:
        o = _Opts(args, _load_config(args.config, args.command))
        _apply_threads()
        code = args.func(o)
        if code == EXIT_OK and args.command not in ("extract", "evaluate"):
            _write_provenance(o, args.command)
        return code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"chipqa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChipQAError, OSError, ValueError) as exc:
        print(f"chipqa: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
