"""``radar-odom`` command line: run, eval, sim, sweep, diagnostics."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .config import load_toml
from .core import Trajectory
from .errors import DegenerateInputError, InvalidParamsError, MissingFileError, RadarOdomError
from .evaluation import DEFAULT_PAIR_TOLERANCE, evaluate, series_csv, umeyama_align_se2
from .ingest import Dataset, load_coloradar_adapter, load_dataset, read_groundtruth
from .ingest import write_dataset as _write_dataset
from .odometry import IcpMode, PipelineConfig, estimates_to_json, run_pipeline
from .preprocess import Method
from .sim import FIXTURES, fixture, load_scene_config, simulate

log = logging.getLogger("radar_odom")

ICP_VARIANTS = ("wICP", "Sampling+wICP", "Sampling+mwICP")


class _Outputs:
    """Collects files in a staging directory and publishes them all at once.

    Nothing appears in ``out_dir`` unless every file was produced.
    """

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = out_dir
        self.files: dict[str, str | bytes] = {}

    def add(self, name: str, content: str | bytes) -> None:
        self.files[name] = content

    def publish(self) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        try:
            for name, content in self.files.items():
                p = stage / name
                p.parent.mkdir(parents=True, exist_ok=True)
                if isinstance(content, bytes):
                    p.write_bytes(content)
                else:
                    p.write_text(content)
            out = []
            for name in self.files:
                dst = self.out_dir / name
                dst.parent.mkdir(parents=True, exist_ok=True)
                os.replace(stage / name, dst)
                out.append(dst)
            return out
        finally:
            shutil.rmtree(stage, ignore_errors=True)


def _manifest(command: str, config: Mapping[str, Any], dataset: str | None, started: float,
              outputs: Sequence[str]) -> str:
    doc = {
        "command": command,
        "version": __version__,
        "dataset": dataset,
        "config": config,
        "duration_s": round(time.perf_counter() - started, 6),
        "outputs": sorted([*outputs, "manifest.json"]),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# --- config handling ----------------------------------------------------------------


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"config file not found: {p}")
    return load_toml(p)


def _pipeline_config(cfg: Mapping[str, Any], args: argparse.Namespace) -> PipelineConfig:
    pc = PipelineConfig.from_mapping(cfg)
    over: dict[str, Any] = {}
    if getattr(args, "preprocessor", None):
        over["preprocessor"] = Method(args.preprocessor)
    if getattr(args, "k", None) is not None:
        over["k"] = args.k
    if getattr(args, "icp", None):
        over["icp_mode"] = IcpMode(args.icp)
    if getattr(args, "seed", None) is not None:
        over["ransac"] = dataclasses.replace(pc.ransac, seed=args.seed)
    return dataclasses.replace(pc, **over) if over else pc


def _eval_tolerance(cfg: Mapping[str, Any], args: argparse.Namespace) -> float:
    tol = getattr(args, "tol", None)
    if tol is None:
        tol = float(cfg.get("eval", {}).get("tolerance", DEFAULT_PAIR_TOLERANCE))
    return tol


def _load(args: argparse.Namespace) -> Dataset:
    root = Path(args.dataset)
    if not root.exists():
        raise MissingFileError(f"dataset path not found: {root}")
    if args.adapter == "coloradar":
        if not args.adapter_config:
            raise InvalidParamsError("--adapter coloradar needs --adapter-config")
        return load_coloradar_adapter(root, args.adapter_config)
    return load_dataset(root)


def _read_trajectory(path: str | Path) -> Trajectory:
    """Either ``t x y yaw`` lines or the 8-column ground-truth format."""
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"trajectory file not found: {p}")
    rows = [ln.split() for ln in p.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if rows and len(rows[0]) == 8:
        return read_groundtruth(p)
    return Trajectory.from_text(p.read_text())


# --- commands -------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = _pipeline_config(_load_config(args.config), args)
    ds = _load(args)
    debug: list[dict[str, Any]] | None = [] if args.debug else None
    traj, estimates = run_pipeline(ds, cfg, debug)
    out = _Outputs(Path(args.out))
    out.add("trajectory.txt", traj.to_text())
    out.add("estimates.json", estimates_to_json(estimates))
    if debug is not None:
        out.add("debug.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in debug))
    out.add("manifest.json", _manifest("run", cfg.to_mapping(), str(args.dataset), started, list(out.files)))
    out.publish()
    n_flag = sum(1 for e in estimates if e.flags.icp_failed or e.flags.velocity_fallback)
    print(f"{len(traj)} poses written to {args.out} ({n_flag} flagged frames)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = _load_config(args.config)
    tol = _eval_tolerance(cfg, args)
    est, ref = _read_trajectory(args.est), _read_trajectory(args.ref)
    report = evaluate(est, ref, tol)
    _, aligned = umeyama_align_se2(est, ref, tol)
    out = _Outputs(Path(args.out))
    out.add("metrics.json", report.to_json())
    out.add("cum_sq_yaw_err.csv", series_csv(report.cum_sq_yaw_err))
    out.add("rpe_series.csv", series_csv(report.rpe_series))
    out.add("aligned_trajectory.txt", aligned.to_text())
    out.add("manifest.json", _manifest("eval", {"eval": {"tolerance": tol}}, None, started, list(out.files)))
    out.publish()
    print(f"yaw RMSE {report.yaw_rmse_deg:.3f} deg, RPE mean {report.rpe_mean_m:.4f} m over {report.n_pairs} pairs")
    return 0


def cmd_sim(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if (args.fixture is None) == (args.config is None):
        raise InvalidParamsError("give exactly one of --fixture or --config")
    seed = 0 if args.seed is None else args.seed
    if args.fixture is not None:
        scene, motion = fixture(args.fixture, seed)
        snapshot: dict[str, Any] = {"fixture": args.fixture, "seed": seed}
    else:
        scene, motion = load_scene_config(args.config)
        if args.seed is not None:
            scene = dataclasses.replace(scene, seed=args.seed)
        snapshot = {"scene_config": str(args.config), "seed": scene.seed}
    ds, _ = simulate(scene, motion)
    out_dir = Path(args.out)
    # the dataset writer creates many files; stage the whole tree then move it in
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        _write_dataset(ds, stage)
        names = sorted(str(p.relative_to(stage)) for p in stage.rglob("*") if p.is_file())
        for name in names:
            dst = out_dir / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(stage / name, dst)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    (out_dir / "manifest.json").write_text(_manifest("sim", snapshot, str(out_dir), started, names))
    print(f"{len(ds.cascade_frames)} cascade / {len(ds.singlechip_frames)} single-chip frames written to {out_dir}")
    return 0


def variant_config(cfg: PipelineConfig, name: str) -> PipelineConfig:
    """``cfg`` switched to one of ``ICP_VARIANTS``."""
    if name == "wICP":
        return dataclasses.replace(cfg, sampling=None, icp_mode=IcpMode.ONE_WAY)
    base = cfg.sampling if cfg.sampling is not None else PipelineConfig().sampling
    if name == "Sampling+wICP":
        return dataclasses.replace(cfg, sampling=base, icp_mode=IcpMode.ONE_WAY)
    return dataclasses.replace(cfg, sampling=base, icp_mode=IcpMode.TWO_WAY)


def sweep(ds: Dataset, cfg: PipelineConfig, tol: float = DEFAULT_PAIR_TOLERANCE) -> list[dict[str, Any]]:
    """Every preprocessor under every ICP variant, scored against the dataset's ground truth."""
    if ds.ground_truth is None:
        raise MissingFileError("sweep needs ground truth in the dataset")
    rows = []
    for method in Method:
        for name in ICP_VARIANTS:
            run_cfg = variant_config(dataclasses.replace(cfg, preprocessor=method), name)
            traj, estimates = run_pipeline(ds, run_cfg)
            rep = evaluate(traj, ds.ground_truth, tol)
            rows.append({
                "preprocessor": method.value,
                "icp": name,
                "yaw_rmse_deg": rep.yaw_rmse_deg,
                "rpe_mean_m": rep.rpe_mean_m,
                "failed_frames": sum(e.flags.icp_failed for e in estimates),
            })
    return rows


def _table(rows: list[dict[str, Any]], metric: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["preprocessor", *ICP_VARIANTS])
    for method in Method:
        vals = {r["icp"]: r[metric] for r in rows if r["preprocessor"] == method.value}
        w.writerow([method.value, *(repr(float(vals[v])) for v in ICP_VARIANTS)])
    return buf.getvalue()


def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    raw = _load_config(args.config)
    cfg = _pipeline_config(raw, args)
    tol = _eval_tolerance(raw, args)
    rows = sweep(_load(args), cfg, tol)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    out = _Outputs(Path(args.out))
    out.add("sweep.csv", buf.getvalue())
    out.add("sweep_yaw_rmse_deg.csv", _table(rows, "yaw_rmse_deg"))
    out.add("sweep_rpe_mean_m.csv", _table(rows, "rpe_mean_m"))
    out.add("manifest.json", _manifest("sweep", cfg.to_mapping(), str(args.dataset), started, list(out.files)))
    out.publish()
    print(_table(rows, "rpe_mean_m"), end="")
    return 0


def summarize_debug(records: Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Per-frame match/neglect/remove counts from ``run --debug`` records."""
    out = []
    for r in records:
        labels = r.get("labels", [])
        out.append({
            "frame": r["frame"],
            "t": r["t"],
            "dyaw_deg": r["dyaw"] * 180.0 / 3.141592653589793,
            "iterations": r.get("iterations", 0),
            "converged": r.get("converged", False),
            "match": sum(1 for x in labels if x >= 0),
            "neglect": sum(1 for x in labels if x == -1),
            "remove": sum(1 for x in labels if x == -2),
            "icp_failed": r.get("icp_failed", False),
        })
    return out


def cmd_diagnostics(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    p = Path(args.debug)
    if not p.is_file():
        raise MissingFileError(f"debug file not found: {p}")
    try:
        records = [json.loads(ln) for ln in p.read_text().splitlines() if ln.strip()]
    except json.JSONDecodeError as e:
        raise DegenerateInputError(f"{p}: not a JSON-lines debug file ({e})") from None
    rows = summarize_debug(records)
    buf = io.StringIO()
    fields = ["frame", "t", "dyaw_deg", "iterations", "converged", "match", "neglect", "remove", "icp_failed"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    out = _Outputs(Path(args.out))
    out.add("diagnostics.csv", buf.getvalue())
    out.add("manifest.json", _manifest("diagnostics", {}, None, started, list(out.files)))
    out.publish()
    print(f"{len(rows)} frames summarised")
    return 0


# --- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radar-odom", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def dataset_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--dataset", required=True)
        p.add_argument("--adapter", choices=["coloradar"], default=None)
        p.add_argument("--adapter-config", default=None)

    def pipeline_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="TOML pipeline config")
        p.add_argument("--preprocessor", choices=[m.value for m in Method], default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--icp", choices=[m.value for m in IcpMode], default=None)
        p.add_argument("--seed", type=int, default=None, help="RANSAC seed")

    p = sub.add_parser("run", help="estimate a trajectory")
    dataset_args(p)
    pipeline_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--debug", action="store_true", help="also write per-frame debug.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a trajectory against a reference")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--tol", type=float, default=None, help="pairing tolerance, s")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sim", help="write a synthetic dataset")
    p.add_argument("--fixture", choices=FIXTURES, default=None)
    p.add_argument("--config", default=None, help="TOML scene config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("sweep", help="compare preprocessors and ICP variants")
    dataset_args(p)
    pipeline_args(p)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnostics", help="summarise a run's debug records")
    p.add_argument("--debug", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnostics)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RadarOdomError, OSError) as e:
        print(f"radar-odom {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
