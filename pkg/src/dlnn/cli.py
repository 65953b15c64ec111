"""Command-line entry point: datasets, training, rollouts, extraction, reports.

Subcommands
    datagen  build an experiment dataset (CSV + JSON manifest)
    train    fit the scalar-Lagrangian network (or the baseline) on a dataset
    evolve   roll a checkpoint forward or backward in time
    extract  recover governing matrices from a checkpoint's input-Hessian
    eval     compare trajectory files (max error, percent RMS, IoU, baseline table)

Exit codes: 0 success, 2 configuration, 3 I/O, 4 training divergence,
5 integrator abort. Figure-style outputs are CSV files; pass --plot-script
to also emit a small matplotlib script next to them.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .datagen import load_batch, save_batch
from .evolve import (
    RolloutConfig,
    baseline_rate,
    learned_rate_diffusion,
    learned_rate_mechanics,
    load_trajectory,
    rollout,
    save_trajectory,
)
from .lagrangian import extract_K_diffusion, extract_matrices_mechanics
from .network import NonFiniteLossError
from .oracle import IntegrationAbort
from .train import (
    CheckpointError,
    TrainingDiverged,
    load_checkpoint,
    load_checkpoint_meta,
    save_checkpoint,
    train_baseline,
    train_dlnn,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_INTEGRATOR = 5


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files: `key = value` lines, dotted keys nest
# ---------------------------------------------------------------------------

def parse_config_file(path) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{path}:{lineno}: key {key!r} conflicts")
        node[parts[-1]] = parsed
    return out


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        return parse_config_file(args.config)
    return {}


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError as exc:
        raise ConfigError(f"bad vector {text!r}: {exc}") from exc


def _write_plot_script(out_dir: Path, csv_names):
    lines = [
        "import matplotlib",
        'matplotlib.use("Agg")',
        "import matplotlib.pyplot as plt",
        "import numpy as np",
        "",
    ]
    for name in csv_names:
        lines += [
            f'data = np.loadtxt("{name}", delimiter=",", skiprows=1, ndmin=2)',
            "plt.figure()",
            "for col in range(1, data.shape[1]):",
            "    plt.plot(data[:, 0], data[:, col])",
            'plt.xlabel("t")',
            f'plt.savefig("{Path(name).stem}.png", dpi=150)',
        ]
    (out_dir / "plot.py").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# datagen
# ---------------------------------------------------------------------------

def cmd_datagen(args) -> int:
    cfg = _load_config(args)
    overrides = dict(cfg.get("datagen", {}))
    if args.tol is not None:
        overrides["tol"] = args.tol
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    batch = experiments.build_dataset(args.experiment, seed=args.seed,
                                      split=args.split, **overrides)
    save_batch(batch, out / "dataset.csv", out / "manifest.json")

    if args.experiment in ("microstructure", "reverse_shapes"):
        from .datagen import (default_microstructure_mask, gen_precipitate_shapes,
                              microstructure_grid)
        mask = default_microstructure_mask()
        grid = microstructure_grid(mask,
                                   cell_size=overrides.get("cell_size", 1.0))
        np.savetxt(out / "diffusivity.csv", grid.diffusivity, delimiter=",",
                   fmt="%.17g")
        np.savetxt(out / "phase_mask.csv", mask.values, delimiter=",", fmt="%d")
        if args.experiment == "reverse_shapes":
            n_steps = int(batch.provenance["n_steps_per_shape"])
            per_shape = batch.states.reshape(4, n_steps, -1)
            for i, shape in enumerate(gen_precipitate_shapes()):
                np.savetxt(out / f"shape_{shape.name}.csv", shape.values,
                           delimiter=",", fmt="%d")
                observed = per_shape[i, -1].reshape(grid.ny, grid.nx)
                np.savetxt(out / f"observed_{shape.name}.csv", observed,
                           delimiter=",", fmt="%.17g")
    print(f"wrote {batch.n_samples} samples to {out / 'dataset.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_dir = Path(args.data)
    batch = load_batch(data_dir / "dataset.csv", data_dir / "manifest.json")

    arch = tuple(cfg.get("arch", experiments.default_architecture(args.experiment)))
    train_overrides = dict(cfg.get("train", {}))
    if args.target_loss is not None:
        train_overrides["target_loss"] = args.target_loss
    if args.max_epochs is not None:
        train_overrides["max_epochs"] = args.max_epochs
    tcfg = experiments.default_train_config(args.experiment, seed=args.seed,
                                            **train_overrides)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "baseline" if args.baseline else "dlnn"
    meta = {"experiment": args.experiment, "model": name, "kind": batch.kind,
            "seed": args.seed, "arch": list(arch)}

    try:
        if args.baseline:
            params, report = train_baseline(batch, arch, tcfg)
        else:
            params, report = train_dlnn(batch, arch, tcfg)
    except TrainingDiverged as exc:
        _write_training_log(out / f"{name}_log.csv", exc.report)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE

    save_checkpoint(params, out / f"{name}.npz", report, meta=meta)
    _write_training_log(out / f"{name}_log.csv", report)
    print(f"{name}: loss {report.final_loss:.3e} after {report.epochs_run} "
          f"epochs ({report.wall_time:.1f}s) -> {out / (name + '.npz')}")
    return EXIT_OK


def _write_training_log(path, report):
    times = (report.epoch_times if report.epoch_times is not None
             else np.zeros_like(report.loss_history))
    epochs = np.arange(1, len(report.loss_history) + 1)
    table = np.column_stack([epochs, report.loss_history, times])
    np.savetxt(path, table, delimiter=",", header="epoch,loss,wall_time",
               comments="", fmt=("%d", "%.17g", "%.6f"))


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------

def _rate_from_checkpoint(checkpoint_path, mass_file=None):
    params = load_checkpoint(checkpoint_path)
    meta = load_checkpoint_meta(checkpoint_path).get("meta", {})
    model = meta.get("model", "dlnn")
    kind = meta.get("kind", "diffusion")
    if model == "baseline":
        if kind == "mechanics":
            n = params.n_out

            def rate(t, y, _net=baseline_rate(params)):
                return np.concatenate([y[n:], _net(t, y)])

            return rate
        return baseline_rate(params)
    if kind == "mechanics":
        n = params.n_in // 2
        m_mat = (np.loadtxt(mass_file, delimiter=",", ndmin=2)
                 if mass_file else np.eye(n))
        return learned_rate_mechanics(params, m_mat)
    return learned_rate_diffusion(params)


def cmd_evolve(args) -> int:
    if args.ic is not None:
        ics = [_parse_vector(args.ic)]
    elif args.ic_file is not None:
        ics = list(np.loadtxt(args.ic_file, delimiter=",", ndmin=2))
    else:
        raise ConfigError("one of --ic / --ic-file is required")

    rate = _rate_from_checkpoint(args.checkpoint, args.mass)
    t0, t1 = args.t_start, args.t_end
    times = np.linspace(t0, t1, args.n_times)
    if args.direction == "reverse":
        times = times[::-1]
    cfg = RolloutConfig(t_span=(t0, t1), direction=args.direction,
                        tol=args.tol, output_times=times)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    code = EXIT_OK
    for i, ic in enumerate(ics):
        name = f"trajectory_{i:03d}.csv" if len(ics) > 1 else "trajectory.csv"
        try:
            traj = rollout(rate, ic, cfg)
        except IntegrationAbort as exc:
            save_trajectory(exc.trajectory, out / name)
            print(f"error: rollout {i} aborted: {exc} (partial output written)",
                  file=sys.stderr)
            code = EXIT_INTEGRATOR
            continue
        save_trajectory(traj, out / name)
        written.append(name)
    if args.plot_script and written:
        _write_plot_script(out, written)
    print(f"wrote {len(written)}/{len(ics)} trajectories to {out}")
    return code


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------

def cmd_extract(args) -> int:
    params = load_checkpoint(args.checkpoint)
    meta = load_checkpoint_meta(args.checkpoint).get("meta", {})
    kind = args.kind or meta.get("kind", "diffusion")

    if args.probe is not None:
        probes = [_parse_vector(p) for p in args.probe]
    elif args.probe_file is not None:
        probes = list(np.loadtxt(args.probe_file, delimiter=",", ndmin=2))
    else:
        probes = [np.zeros(params.n_in)]
    for p in probes:
        if p.size != params.n_in:
            raise ConfigError(
                f"probe has {p.size} entries, network takes {params.n_in}"
            )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if kind == "mechanics":
        names = ("M_hat", "K_hat", "C_sym_hat")
        per_probe = [extract_matrices_mechanics(params, p) for p in probes]
    else:
        names = ("K_hat",)
        per_probe = [(extract_K_diffusion(params, p),) for p in probes]

    for j, name in enumerate(names):
        np.savetxt(out / f"{name}.csv", per_probe[0][j], delimiter=",",
                   fmt="%.17g")
    if len(probes) > 1:
        lines = []
        for j, name in enumerate(names):
            stack = np.stack([mats[j] for mats in per_probe])
            spread = stack.max(axis=0) - stack.min(axis=0)
            np.savetxt(out / f"{name}_probe_spread.csv", spread, delimiter=",",
                       fmt="%.17g")
            lines.append(f"{name}: max probe-to-probe spread "
                         f"{spread.max():.3e}")
        report = "\n".join(lines)
        (out / "probe_variation.txt").write_text(report + "\n")
        print(report)
    print(f"wrote {', '.join(n + '.csv' for n in names)} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _align(pred, truth, resample: bool):
    if (pred.times.shape == truth.times.shape
            and np.allclose(pred.times, truth.times, atol=1e-12)):
        return pred.states, ""
    if not resample:
        raise ConfigError(
            "time grids differ; pass --resample to interpolate predictions "
            "onto the truth grid"
        )
    states = np.column_stack([
        np.interp(truth.times, pred.times, pred.states[:, j])
        for j in range(pred.states.shape[1])
    ])
    return states, "predictions resampled onto the truth time grid\n"


def trajectory_metrics(pred_states, truth_states) -> dict:
    err = pred_states - truth_states
    denom = np.linalg.norm(truth_states)
    return {
        "max_abs_error": float(np.abs(err).max()),
        "percent_rms": float(100.0 * np.linalg.norm(err) / denom)
        if denom > 0 else float("nan"),
    }


def intersection_over_union(image, mask, threshold=0.5) -> float:
    pred = np.asarray(image) >= threshold
    true = np.asarray(mask) >= 0.5
    union = np.logical_or(pred, true).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, true).sum() / union)


def cmd_eval(args) -> int:
    truth = load_trajectory(args.truth)
    pred = load_trajectory(args.pred)
    pred_states, note = _align(pred, truth, args.resample)
    metrics = trajectory_metrics(pred_states, truth.states)

    lines = [note] if note else []
    lines.append(f"max_abs_error = {metrics['max_abs_error']:.6e}")
    lines.append(f"percent_rms = {metrics['percent_rms']:.4f}")

    if args.baseline_pred:
        base = load_trajectory(args.baseline_pred)
        base_states, _ = _align(base, truth, args.resample)
        bmetrics = trajectory_metrics(base_states, truth.states)
        lines.append("")
        lines.append("model      max_abs_error   percent_rms")
        lines.append(f"dlnn       {metrics['max_abs_error']:<15.6e} "
                     f"{metrics['percent_rms']:.4f}")
        lines.append(f"baseline   {bmetrics['max_abs_error']:<15.6e} "
                     f"{bmetrics['percent_rms']:.4f}")

    if args.mask:
        mask = np.loadtxt(args.mask, delimiter=",", ndmin=2)
        final = pred_states[-1].reshape(mask.shape)
        iou = intersection_over_union(final, mask, threshold=args.threshold)
        lines.append(f"iou = {iou:.4f}")

    report = "\n".join(lines)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlnn",
        description="learn, extract and evolve dissipative dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="build an experiment dataset")
    p.add_argument("--experiment", required=True, choices=experiments.EXPERIMENTS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--experiment", required=True, choices=experiments.EXPERIMENTS)
    p.add_argument("--data", required=True, help="directory with dataset.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", action="store_true",
                   help="train the direct rate-regression network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-loss", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evolve", help="roll out a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--direction", choices=("forward", "reverse"),
                   default="forward")
    p.add_argument("--ic", default=None, help="comma-separated state")
    p.add_argument("--ic-file", default=None, help="CSV of states, one per row")
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--n-times", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--mass", default=None,
                   help="CSV mass matrix for mechanics checkpoints")
    p.add_argument("--plot-script", action="store_true")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("extract", help="recover matrices from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("mechanics", "diffusion"), default=None)
    p.add_argument("--probe", action="append", default=None,
                   help="comma-separated probe point (repeatable)")
    p.add_argument("--probe-file", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="compare trajectory files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--baseline-pred", default=None)
    p.add_argument("--mask", default=None, help="CSV mask for IoU")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--resample", action="store_true",
                   help="interpolate onto the truth time grid if grids differ")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except IntegrationAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
