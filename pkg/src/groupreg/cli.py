"""Command-line surface.

Subcommands: simulate, fit, fit-baseline, waic-scan, summarize, inverse-warp,
audit. Every artifact-producing run writes a manifest.json (resolved config,
config hash, seed, package version); re-running with the manifest's config
reproduces the outputs bit-exactly. Outputs are staged in a scratch
directory and promoted only on success, so failed runs leave no partial
artifacts. Exit codes: 0 ok, 2 config error, 3 numerical failure,
4 invariant-audit failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import tempfile

import numpy as np

from . import __version__
from .baseline import fit_conventional, inverse_warp
from .config import RunConfig, load_config, parse_config
from .errors import ConfigError, GroupregError, NumericalError, ValidationError
from .grids import read_map_csv, write_map_csv
from .sampler import run_chain, summarize
from .store import export_csv, load_store, save_store
from .synth import ScenarioSpec, generate
from .audit import run_all_audits
from .transforms import AffineTransform


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="groupreg",
        description="Probabilistic symmetric group-wise registration to a latent GP template")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    common(p)

    for name, hint in (("fit", "fit the symmetric (or chosen) model"),
                       ("fit-baseline", "fit the conventional kernel-template model")):
        p = sub.add_parser(name, help=hint)
        common(p)
        p.add_argument("--model", choices=("symmetric", "conventional"), default=None)
        p.add_argument("--lambda-r", type=float, default=None, dest="lambda_r")

    p = sub.add_parser("waic-scan", help="fit per lambda_r grid value, emit a WAIC table")
    common(p)
    p.add_argument("--lambda-r-grid", default=None, dest="lambda_r_grid",
                   help="comma-separated lambda_r values")

    p = sub.add_parser("summarize", help="posterior summaries of a sample store")
    p.add_argument("store", help="path to a samples.bin store")
    common(p)
    p.add_argument("--level", type=float, default=None, help="credible level")

    p = sub.add_parser("inverse-warp", help="pull subject maps back to template space")
    p.add_argument("store", help="path to a samples.bin store")
    common(p)

    p = sub.add_parser("audit", help="run the invariant audit suite")
    common(p, needs_out=False)
    return parser


def _load_run_config(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig().validate()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "model", None):
        updates["model"] = args.model
    if getattr(args, "lambda_r", None) is not None:
        updates["lambda_r"] = args.lambda_r
    grid = getattr(args, "lambda_r_grid", None)
    if grid:
        updates["lambda_r_grid"] = tuple(float(s) for s in grid.split(",") if s.strip())
    if getattr(args, "level", None) is not None:
        updates["credible_level"] = args.level
    if updates:
        cfg = dataclasses.replace(cfg, **updates).validate()
    return cfg


def _load_maps(cfg):
    """Subject maps from config paths, or generated from the scenario spec."""
    if cfg.maps:
        return [read_map_csv(p) for p in cfg.maps], None
    if not cfg.scenario:
        raise ValidationError("config needs either maps=... or scenario=...")
    spec = ScenarioSpec(scenario=cfg.scenario, n_subjects=cfg.n_subjects,
                        noise_sd=cfg.noise_sd, seed=cfg.effective_sim_seed())
    maps, truth = generate(spec)
    return maps, truth


def _write_manifest(staging, command, cfg, artifacts):
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
        "artifacts": sorted(artifacts),
    }
    with open(os.path.join(staging, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Staging:
    """Write artifacts to a scratch dir; promote on success, drop on failure."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        parent = os.path.dirname(os.path.abspath(out_dir)) or "."
        os.makedirs(parent, exist_ok=True)
        self.dir = tempfile.mkdtemp(prefix=".groupreg-staging-", dir=parent)

    def path(self, name):
        full = os.path.join(self.dir, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def promote(self):
        os.makedirs(self.out_dir, exist_ok=True)
        for name in sorted(os.listdir(self.dir)):
            src = os.path.join(self.dir, name)
            dst = os.path.join(self.out_dir, name)
            if os.path.isdir(dst):
                shutil.rmtree(dst)
            elif os.path.exists(dst):
                os.remove(dst)
            shutil.move(src, dst)
        shutil.rmtree(self.dir, ignore_errors=True)

    def discard(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_simulate(args):
    cfg = _load_run_config(args)
    if not cfg.scenario:
        raise ValidationError("simulate needs scenario=... in the config")
    maps, truth = _load_maps(cfg)
    staging = _Staging(args.out)
    try:
        names = []
        for i, amap in enumerate(maps):
            name = f"map{i:02d}.csv"
            write_map_csv(amap, staging.path(name))
            names.append(name)
        write_map_csv(truth.template, staging.path("template.csv"))
        truth_doc = {
            "scenario": cfg.scenario,
            "noise_sd": truth.noise_sd,
            "transforms": [t.matrix.tolist() for t in truth.transforms],
            "angles_deg": list(truth.angles_deg),
            "template": "template.csv",
        }
        _json_dump(truth_doc, staging.path("truth.json"))
        _write_manifest(staging.dir, "simulate", cfg,
                        names + ["template.csv", "truth.json"])
        staging.promote()
    except BaseException:
        staging.discard()
        raise
    print(f"wrote {len(maps)} maps + truth to {args.out}")
    return 0


def _fit_once(cfg, maps):
    if cfg.model == "conventional":
        return fit_conventional(maps, cfg)
    return run_chain(maps, cfg)


def _cmd_fit(args, force_model=None):
    cfg = _load_run_config(args)
    if force_model:
        cfg = dataclasses.replace(cfg, model=force_model).validate()
    maps, _ = _load_maps(cfg)
    store, diagnostics = _fit_once(cfg, maps)
    staging = _Staging(args.out)
    try:
        save_store(store, staging.path("samples.bin"))
        export_csv(store, staging.path("samples.csv"))
        _json_dump(diagnostics, staging.path("diagnostics.json"))
        _write_manifest(staging.dir, "fit", cfg,
                        ["samples.bin", "samples.csv", "diagnostics.json"])
        staging.promote()
    except BaseException:
        staging.discard()
        raise
    print(f"model={cfg.model} samples={store.n_samples} "
          f"waic={diagnostics.get('waic', float('nan')):.4f} "
          f"ic_error={diagnostics.get('mean_ic_error', float('nan')):.5f} -> {args.out}")
    return 0


def _cmd_waic_scan(args):
    cfg = _load_run_config(args)
    if cfg.model != "symmetric":
        raise ValidationError("waic-scan applies to the symmetric model")
    maps, _ = _load_maps(cfg)
    staging = _Staging(args.out)
    try:
        rows = []
        for lam in cfg.lambda_r_grid:
            sub_cfg = dataclasses.replace(cfg, lambda_r=lam).validate()
            store, diag = _fit_once(sub_cfg, maps)
            tag = f"lambda_{lam:g}"
            save_store(store, staging.path(os.path.join(tag, "samples.bin")))
            _json_dump(diag, staging.path(os.path.join(tag, "diagnostics.json")))
            rows.append((lam, diag["waic"], diag["mean_ic_error"]))
            print(f"lambda_r={lam:g}: waic={diag['waic']:.4f} "
                  f"ic_error={diag['mean_ic_error']:.5f}")
        with open(staging.path("waic_table.csv"), "w", encoding="utf-8") as fh:
            fh.write("lambda_r,waic,mean_ic_error\n")
            for lam, w, ic in rows:
                fh.write(f"{lam!r},{w!r},{ic!r}\n")
        _write_manifest(staging.dir, "waic-scan", cfg, ["waic_table.csv"])
        staging.promote()
    except BaseException:
        staging.discard()
        raise
    best = min(rows, key=lambda r: r[1])
    print(f"best lambda_r by WAIC: {best[0]:g} -> {args.out}/waic_table.csv")
    return 0


def _store_lattice(store):
    from .grids import Lattice

    return Lattice(shape=tuple(store.meta["shape"]),
                   spacing=np.array(store.meta["spacing"]),
                   origin=np.array(store.meta["origin"]))


def _cmd_summarize(args):
    cfg = _load_run_config(args)
    store = load_store(args.store)
    summary = summarize(store, level=cfg.credible_level)
    lattice = _store_lattice(store)
    from .grids import ActivationMap

    staging = _Staging(args.out)
    try:
        grids = {
            "template_mean.csv": summary.mean,
            "template_sd.csv": summary.sd,
            "template_ratio.csv": summary.ratio,
            "template_lower.csv": summary.lower,
            "template_upper.csv": summary.upper,
        }
        for name, vals in grids.items():
            write_map_csv(ActivationMap(lattice, vals), staging.path(name))
        with open(staging.path("transforms_mean.csv"), "w", encoding="utf-8") as fh:
            fh.write("subject,direction,entries\n")
            for i, t in enumerate(summary.mean_forward):
                fh.write(f"{i},forward," +
                         ";".join(repr(v) for v in t.matrix.ravel()) + "\n")
            for i, t in enumerate(summary.mean_reverse):
                fh.write(f"{i},reverse," +
                         ";".join(repr(v) for v in t.matrix.ravel()) + "\n")
        _write_manifest(staging.dir, "summarize", cfg,
                        list(grids) + ["transforms_mean.csv"])
        staging.promote()
    except BaseException:
        staging.discard()
        raise
    print(f"summaries (level {cfg.credible_level}) -> {args.out}")
    return 0


def _cmd_inverse_warp(args):
    cfg = _load_run_config(args)
    maps, _ = _load_maps(cfg)
    store = load_store(args.store)
    summary = summarize(store, level=cfg.credible_level)
    if len(summary.mean_forward) != len(maps):
        raise ValidationError(
            f"store has {len(summary.mean_forward)} subjects, config supplies {len(maps)} maps")
    warped, mean_map = inverse_warp(maps, summary.mean_forward)
    staging = _Staging(args.out)
    try:
        names = []
        for i, amap in enumerate(warped):
            name = f"warped{i:02d}.csv"
            write_map_csv(amap, staging.path(name))
            names.append(name)
        write_map_csv(mean_map, staging.path("warped_mean.csv"))
        _write_manifest(staging.dir, "inverse-warp", cfg, names + ["warped_mean.csv"])
        staging.promote()
    except BaseException:
        staging.discard()
        raise
    print(f"inverse-warped {len(warped)} maps -> {args.out}")
    return 0


def _cmd_audit(args):
    cfg = _load_run_config(args)
    results, passed = run_all_audits(seed=cfg.seed)
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"[{status}] {r['name']}: value={r['value']:.3e} tol={r['tol']:.3e}")
    if not passed:
        print("audit: FAILED")
        return 4
    print("audit: all checks passed")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "fit": _cmd_fit,
        "fit-baseline": lambda a: _cmd_fit(a, force_model="conventional"),
        "waic-scan": _cmd_waic_scan,
        "summarize": _cmd_summarize,
        "inverse-warp": _cmd_inverse_warp,
        "audit": _cmd_audit,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, GroupregError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
