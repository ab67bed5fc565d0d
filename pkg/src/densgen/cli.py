"""Command-line pipeline: density, pointcloud, encode/tokenize/detokenize,
train, generate, eval.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant
violation. Every random choice flows through the --seed flag of its command.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import density as dens
from .encode import EncodedMolecule, encode_molecule, training_example
from .fsmiles import FsmilesError, VOCAB, detokenize, tokenize
from .generate import GenerationConfig, generate
from .geom import DiscretizationParams, ToleranceConfig
from .metrics import recovery_and_diversity
from .model import ModelConfig, init_params, toy_config
from .mol import MolError
from .sdf import SdfError, read_sdf, write_sdf
from .smiles import SmilesError, parse_smiles, write_smiles
from .train import (CheckpointError, TrainConfig, load_checkpoint,
                    save_checkpoint, train)

_INPUT_ERRORS = (MolError, SmilesError, SdfError, FsmilesError,
                 dens.DensityError, CheckpointError, ValueError,
                 OSError, json.JSONDecodeError)


class _Sections:
    """Run-config JSON with one optional object per subsystem."""

    def __init__(self, data: dict):
        known = {"seed", "model", "train", "discretization", "tolerance",
                 "generation", "density"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        self.seed = data.get("seed")
        self.model = _build(ModelConfig, data.get("model", {}))
        self.train = _build(TrainConfig, data.get("train", {}))
        self.discretization = _build(DiscretizationParams, data.get("discretization", {}))
        self.tolerance = _build(ToleranceConfig, data.get("tolerance", {}))
        self.generation_overrides = _check_keys(GenerationConfig, data.get("generation", {}))
        self.density = _check_keys(None, data.get("density", {}),
                                   allowed={"d_min", "n_points", "padding",
                                            "form_factor", "B"})


def _check_keys(cls, data: dict, allowed: set[str] | None = None) -> dict:
    names = allowed if allowed is not None else {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data


def _build(cls, data: dict):
    return cls(**_check_keys(cls, data))


def _load_sections(path: str | None) -> _Sections:
    if path is None:
        return _Sections({})
    return _Sections(json.loads(Path(path).read_text()))


def _first_molecule(path: str):
    mols = read_sdf(Path(path).read_text())
    if not mols:
        raise ValueError(f"no molecules in {path}")
    return mols[0]


def cmd_density(args) -> int:
    cfg = _load_sections(args.config)
    mol = _first_molecule(args.infile)
    if args.d_min <= 0:
        raise ValueError(f"d_min must be positive, got {args.d_min}")
    cell = dens.build_cell(mol, padding=args.padding)
    ff = dens.FormFactorModel(args.form_factor, B=args.b_smear)
    sf = dens.structure_factors(mol, cell, d_min=args.d_min, ff=ff)
    grid = dens.density_from_factors(sf)
    Path(args.out).write_text(dens.write_grid(grid))
    total = grid.total_density()
    print(f"millers={len(sf)} dims={grid.dims[0]}x{grid.dims[1]}x{grid.dims[2]} "
          f"sum_rho_voxvol={total:.6f}")
    return 0


def cmd_pointcloud(args) -> int:
    grid = dens.read_grid(Path(args.grid).read_text())
    mol = _first_molecule(args.mol)
    cloud = dens.sample_point_cloud(grid, mol, n=args.n, seed=args.seed,
                                    d_min=args.d_min)
    Path(args.out).write_text(cloud.to_json())
    print(f"points={cloud.n}")
    return 0


def cmd_encode(args) -> int:
    cfg = _load_sections(args.config)
    mol = _first_molecule(args.sdf)
    enc = encode_molecule(mol, cfg.discretization)
    Path(args.out).write_text(enc.to_json())
    print(f"tokens={len(enc.token_ids)}")
    return 0


def cmd_tokenize(args) -> int:
    mol = parse_smiles(args.smiles)
    events = tokenize(mol)
    print(" ".join(e.token for e in events))
    return 0


def cmd_detokenize(args) -> int:
    enc = EncodedMolecule.from_json(Path(args.infile).read_text())
    events = _events_from_ids(enc.token_ids)
    mol = detokenize(events)
    print(write_smiles(mol))
    return 0


def _events_from_ids(token_ids):
    from .fsmiles import TokenEvent, Vocab
    events = []
    n_atoms = 0
    for tid in token_ids:
        token = VOCAB.token_of(int(tid))
        kind = Vocab.kind(token)
        idx = n_atoms if kind == "atom" else None
        if kind == "atom":
            n_atoms += 1
        events.append(TokenEvent(token, int(tid), kind, idx))
    return events


def cmd_train(args) -> int:
    cfg = _load_sections(args.config)
    seed = args.seed if args.seed is not None else (cfg.seed or 0)
    train_cfg = cfg.train
    if args.steps is not None:
        from dataclasses import replace
        train_cfg = replace(train_cfg, steps=args.steps,
                            decay_steps=max(args.steps, train_cfg.warmup_steps + 1))

    data_dir = Path(args.data)
    sdf_paths = sorted(data_dir.glob("*.sdf"))
    if not sdf_paths:
        raise ValueError(f"no .sdf files under {data_dir}")
    dataset = []
    for sdf_path in sdf_paths:
        cloud_path = sdf_path.with_suffix(".pc.json")
        if not cloud_path.exists():
            raise ValueError(f"missing point cloud {cloud_path}")
        mol = _first_molecule(str(sdf_path))
        cloud = dens.LabeledPointCloud.from_json(cloud_path.read_text())
        dataset.append(training_example(mol, cloud, cfg.discretization))

    params = init_params(cfg.model, seed=seed)
    log_lines = ["step,loss"]

    def log_fn(step, loss):
        log_lines.append(f"{step},{loss:.6f}")

    train(dataset, cfg.model, train_cfg, params, seed=seed, log_fn=log_fn)
    save_checkpoint(params, args.out)
    if args.log:
        Path(args.log).write_text("\n".join(log_lines) + "\n")
    print(f"trained steps={train_cfg.steps} examples={len(dataset)} "
          f"final_loss={log_lines[-1].split(',')[1]}")
    return 0


def cmd_generate(args) -> int:
    cfg = _load_sections(args.config)
    params = load_checkpoint(args.ckpt, cfg.model)
    cloud = dens.LabeledPointCloud.from_json(Path(args.pointcloud).read_text())
    overrides = dict(cfg.generation_overrides)
    overrides.update({"n_samples": args.n, "temperature": args.temperature,
                      "seed": args.seed})
    overrides.setdefault("tolerance", cfg.tolerance)
    if isinstance(overrides.get("tolerance"), dict):
        overrides["tolerance"] = ToleranceConfig(**overrides["tolerance"])
    gen_cfg = GenerationConfig(**overrides)
    results = generate(cloud, params, cfg.model, gen_cfg, cfg.discretization)

    complete = [r.molecule for r in results if r.status == "complete"]
    Path(args.out).write_text(write_sdf(complete))
    sidecar = {"n_samples": len(results), "results": [
        {"status": r.status, "error": r.error,
         "tokens": [VOCAB.token_of(t) for t in r.token_trace],
         "residuals": r.residuals} for r in results]}
    Path(args.out + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"complete={len(complete)}/{len(results)}")
    return 0


def cmd_eval(args) -> int:
    gen = read_sdf(Path(args.gen).read_text())
    ref_lines = [ln.strip() for ln in Path(args.ref).read_text().splitlines()
                 if ln.strip()]
    refs = [parse_smiles(ln.split()[0]) for ln in ref_lines]
    if not gen or not refs:
        raise ValueError("generated set and reference set must be non-empty")
    report = recovery_and_diversity(gen, refs)
    Path(args.out).write_text(report.to_json())
    print(f"recovered={report.recovered} div={report.div:.4f} "
          f"mean_mw={report.mean_mw:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densgen",
        description="Electron-density-conditioned molecule generation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("density", help="compute an electron density grid from an SDF")
    p.add_argument("--in", dest="infile", required=True, help="input SDF (first record)")
    p.add_argument("--d-min", type=float, default=dens.DEFAULT_D_MIN,
                   help="resolution cutoff in angstroms (default 3.5)")
    p.add_argument("--form-factor", choices=["constant_Z", "gaussian"],
                   default="constant_Z", help="scattering model (default constant_Z)")
    p.add_argument("--b-smear", type=float, default=dens.DEFAULT_B_SMEAR,
                   help="gaussian B in angstrom^2 (default 20)")
    p.add_argument("--padding", type=float, default=dens.DEFAULT_PADDING,
                   help="cell padding in angstroms (default 4)")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--out", required=True, help="output EDGRID path")
    p.set_defaults(fn=cmd_density)

    p = sub.add_parser("pointcloud", help="sample a labeled point cloud from a grid")
    p.add_argument("--grid", required=True, help="EDGRID file")
    p.add_argument("--mol", required=True, help="SDF used for pharmacophore labels")
    p.add_argument("--n", type=int, default=dens.DEFAULT_N_POINTS,
                   help="number of points (default 199)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.add_argument("--d-min", type=float, default=dens.DEFAULT_D_MIN,
                   help="resolution recorded in the output (default 3.5)")
    p.add_argument("--out", required=True, help="output point-cloud JSON")
    p.set_defaults(fn=cmd_pointcloud)

    p = sub.add_parser("encode", help="encode an SDF molecule into token/coord/geom ids")
    p.add_argument("--sdf", required=True)
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--out", required=True, help="output sequence JSON")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("tokenize", help="print the token sequence of a SMILES string")
    p.add_argument("--smiles", required=True)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("detokenize", help="print the SMILES of an encoded sequence")
    p.add_argument("--in", dest="infile", required=True, help="sequence JSON")
    p.set_defaults(fn=cmd_detokenize)

    p = sub.add_parser("train", help="train the model on paired .sdf/.pc.json files")
    p.add_argument("--data", required=True, help="directory of NAME.sdf + NAME.pc.json")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--steps", type=int, help="override training steps")
    p.add_argument("--seed", type=int, help="seed (default: config seed or 0)")
    p.add_argument("--log", help="write step,loss CSV here")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="generate molecules conditioned on a point cloud")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--pointcloud", required=True, help="point-cloud JSON")
    p.add_argument("--n", type=int, default=1, help="number of rollouts (default 1)")
    p.add_argument("--temperature", type=float, default=0.7,
                   help="sampling temperature (default 0.7)")
    p.add_argument("--seed", type=int, default=0, help="rollout seed (default 0)")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--out", required=True, help="output SDF (+ .json sidecar)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="similarity metrics of generated vs reference sets")
    p.add_argument("--gen", required=True, help="generated molecules SDF")
    p.add_argument("--ref", required=True, help="reference actives, one SMILES per line")
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
