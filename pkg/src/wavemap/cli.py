"""Command-line interface: gen-data, train, eval, solve, reproduce.

Every command accepts ``--config FILE`` with flat ``key = value`` lines
(``#`` starts a comment, keys are option names); flags given on the command
line win.  Exit codes: 0 success, 1 runtime failure or failed gate, 2 usage
error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import platform
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__, containers
from .analytic import SCHRODINGER, WAVE, NamedCondition, WavePacketSpec, sigma_set
from .datasets import (
    Dataset,
    PacketFamily,
    assemble_simo,
    assemble_siso,
    assemble_time_conditioned,
    assemble_ximo,
    wave_number_set,
)
from .evaluation import (
    ErrorReport,
    ExperimentSpec,
    TestCase,
    component_errors,
    evaluate_experiment,
    reports_csv,
)
from .experiments import EXPERIMENT_IDS, SCALES, canonical, recipe, recipe_config, run_recipe, sha256_bytes
from .grid import GridSpec, TimeGrid, parse_mask
from .network import Architecture, NetworkParams, forward, he_init
from .solvers import LINEAR, NlsModel, Potential, SolverRun, reference_on_larger_domain
from .training import TrainConfig, train, write_loss_csv

log = logging.getLogger("wavemap")

EQUATIONS = ("wave", "schr-linear", "schr-cubic", "schr-mu")


class UsageError(Exception):
    """Bad flags or configuration; exit status 2."""


# ---------------------------------------------------------------- config files


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _convert(action: argparse.Action, text: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{action.dest}: expected a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    conv = action.type or str
    if action.nargs in ("+", "*") or isinstance(action.nargs, int) or isinstance(action, argparse._AppendAction):
        items = [conv(v) for v in text.replace(",", " ").split()]
        if isinstance(action.nargs, int) and len(items) != action.nargs:
            raise UsageError(f"{action.dest}: expected {action.nargs} values")
        return items
    value = conv(text)
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"{action.dest}: {value!r} is not one of {list(action.choices)}")
    return value


def apply_config(parser: argparse.ArgumentParser, config: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, text in config.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"unknown configuration key {key!r}")
        try:
            defaults[key] = _convert(actions[key], text)
        except ValueError as exc:
            raise UsageError(f"{key}: {exc}") from None
    parser.set_defaults(**defaults)


# ---------------------------------------------------------------- manifests


def versions() -> dict:
    return {"wavemap": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def resolved(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "log_level", "argv"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_manifest(path: Path, command: str, args: argparse.Namespace, artifacts: dict[str, str],
                   extra: dict | None = None) -> None:
    body = {"command": command, "argv": getattr(args, "argv", []), "config": resolved(args), "artifacts": dict(sorted(artifacts.items())),
            "versions": versions()}
    if extra:
        body.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical(body) + "\n", encoding="utf-8")


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------- gen-data


def _grid_from_args(args) -> GridSpec:
    lo, hi = args.domain
    dim = args.grid_dim or args.dim
    return GridSpec.box(lo, hi, args.nx, dim=dim, periodic=args.periodic)


def _model_for(args) -> NlsModel:
    if args.equation in ("wave", "schr-linear"):
        return LINEAR
    if args.equation == "schr-cubic":
        return NlsModel(beta=-1.0, mu=1)
    return NlsModel(beta=-1.0, mu=args.mu)


def _potentials(args) -> list[Potential]:
    return [
        Potential(kind="separable", E0=e0, gamma=g, t0=args.pot_t0, omega=w)
        for e0, g, w in itertools.product(args.pot_e0, args.pot_gamma, args.pot_omega)
    ]


def cmd_gen_data(args) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    equation = WAVE if args.equation == "wave" else SCHRODINGER
    source = args.source or ("analytic" if args.equation in ("wave", "schr-linear") else
                             "cnfd" if args.equation == "schr-mu" else "spectral")
    if args.equation == "wave" and source != "analytic":
        raise UsageError("wave-equation data only comes from the analytic source")
    if args.equation in ("schr-cubic", "schr-mu") and source == "analytic":
        raise UsageError(f"no analytic solutions for {args.equation}; use --source spectral or cnfd")
    if source == "spectral" and not args.periodic:
        raise UsageError("--source spectral needs --periodic")
    grid = _grid_from_args(args)
    mask = parse_mask(args.mask, grid)
    times = args.times
    kind = args.kind
    model = _model_for(args)
    if kind == "ximo":
        if equation != SCHRODINGER:
            raise UsageError("potential-driven datasets are Schrödinger only")
        if not args.periodic:
            raise UsageError("potential-driven datasets use the spectral solver; add --periodic")
        cond = NamedCondition(args.condition)
        from .analytic import named_initial

        ds = assemble_ximo(_potentials(args), named_initial(cond, grid), grid, mask, times, model,
                           args.dt, args.expand, args.rescale, args.lam, args.seed)
    else:
        family = PacketFamily(wave_number_set(args.k_set, args.dim), sigma_set(args.sigma_set), equation,
                              source, model, args.dt, args.expand)
        kw = dict(rescale=args.rescale, lam=args.lam, granularity=args.granularity, seed=args.seed)
        if kind == "siso":
            if len(times) != 1:
                raise UsageError("--kind siso takes exactly one time")
            ds = assemble_siso(family, grid, mask, times[0], **kw)
        elif kind == "simo":
            ds = assemble_simo(family, grid, mask, times, **kw)
        else:
            ds = assemble_time_conditioned(family, grid, mask, times, **kw)
    out = Path(args.out)
    blob = ds.save(out)
    write_manifest(manifest_path(out), "gen-data", args, {out.name: sha256_bytes(blob)},
                   {"rows": ds.n, "m_in": ds.inputs.shape[1], "m_out": ds.outputs.shape[1]})
    print(f"wrote {out}: {ds.kind} {ds.n} rows, {ds.inputs.shape[1]} -> {ds.outputs.shape[1]}")
    return 0


# ---------------------------------------------------------------- train


def _architecture(args, m_in: int, m_out: int) -> Architecture:
    if args.net == "fcnn":
        return Architecture("fcnn", m_in, m_out, args.width, args.depth)
    return Architecture("resnet", m_in, m_out, args.width, args.depth, (args.depth,) * args.blocks)


def cmd_train(args) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    ds = Dataset.load(args.data)
    if args.init is not None:
        params = NetworkParams.load(args.init)
        if params.arch.m_in != ds.inputs.shape[1] or params.arch.m_out != ds.outputs.shape[1]:
            raise ValueError(
                f"dataset is {ds.inputs.shape[1]} -> {ds.outputs.shape[1]}, "
                f"network is {params.arch.m_in} -> {params.arch.m_out}"
            )
    else:
        params = he_init(_architecture(args, ds.inputs.shape[1], ds.outputs.shape[1]), args.activation, args.seed)
    out = Path(args.out)
    config = TrainConfig(
        epochs=args.epochs, lr=args.lr, decay_every=args.decay_every, batch=args.batch,
        batch_size=args.batch_size, seed=args.seed, lbfgs_iters=args.lbfgs_iters,
        lbfgs_history=args.lbfgs_history, checkpoint_every=args.checkpoint_every,
        checkpoint_dir=str(out.parent / (out.stem + "_checkpoints")) if args.checkpoint_every else None,
    )
    result = train(config, ds.inputs, ds.outputs, params)
    result.params.meta.update({"seed": args.seed, "dataset_sha256": sha256_bytes(Path(args.data).read_bytes())})
    blob = result.params.save(out)
    loss_path = out.with_name(out.stem + ".loss.csv")
    write_loss_csv(loss_path, result)
    arch = result.params.arch
    write_manifest(
        manifest_path(out), "train", args,
        {out.name: sha256_bytes(blob), loss_path.name: sha256_bytes(loss_path.read_bytes())},
        {"architecture": arch.to_dict(), "layer_shapes": [list(s) for s in arch.layer_shapes()],
         "parameter_count": arch.parameter_count(), "final_loss": result.final_loss,
         "lbfgs": None if result.lbfgs is None else
         {"iterations": result.lbfgs.iterations, "reason": result.lbfgs.reason,
          "line_search_failed": result.lbfgs.line_search_failed}},
    )
    print(f"wrote {out}: {arch.parameter_count()} parameters, final loss {result.final_loss:.6e}")
    return 0


# ---------------------------------------------------------------- eval


def _parse_test(text: str, times: tuple[float, ...]) -> TestCase:
    name, _, kt = text.partition("@")
    try:
        NamedCondition(name)
        k_tilde = float(kt) if kt else None
    except ValueError:
        raise UsageError(f"bad test {text!r}; expected NAME or NAME@k") from None
    return TestCase(text, condition=name, k_tilde=k_tilde, times=times)


def _self_reports(params: NetworkParams, ds: Dataset, experiment: str) -> list[ErrorReport]:
    """Errors of the model on its own training rows, one report per row and snapshot."""
    pred = forward(params, ds.inputs)
    equation = ds.meta["equation"]
    times = ds.meta["times"]
    width = ds.outputs.shape[1] // (1 if ds.time_input else len(times))
    reports = []
    for row in range(ds.n):
        for i in range(ds.outputs.shape[1] // width):
            t = ds.inputs[row, -1] if ds.time_input else times[i]
            sl = slice(i * width, (i + 1) * width)
            reports.append(ErrorReport(experiment, equation, params.activation, "", "", ds.rescale.lam,
                                       params.meta.get("seed", ""), f"row{row}", float(t),
                                       component_errors(pred[row, sl], ds.outputs[row, sl], equation)))
    return reports


def cmd_eval(args) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    for p in (args.model, args.data):
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    params = NetworkParams.load(args.model)
    ds = Dataset.load(args.data)
    experiment = args.experiment_id or Path(args.model).stem
    fields = {}
    if not args.test:
        reports = _self_reports(params, ds, experiment)
    else:
        if "family" not in ds.meta:
            raise UsageError("named tests need a packet-family dataset")
        family = PacketFamily.from_dict(ds.meta["family"])
        reference = {"spectral-large": "spectral"}.get(args.reference, args.reference)
        times = tuple(args.times) if args.times else tuple(ds.meta["times"])
        tests = tuple(_parse_test(t, times) for t in args.test)
        seed = int(params.meta.get("seed", 0))
        spec = ExperimentSpec(
            id=experiment, equation=ds.meta["equation"], grid=ds.grid, family=family,
            times=tuple(ds.meta["times"]), tests=tests,
            mask=_mask_text(ds), kind="time" if ds.time_input else ("siso" if ds.kind == "SISO" else "simo"),
            lam=ds.rescale.lam, rescale=ds.rescale.mode, granularity=ds.rescale.granularity,
            arch=params.arch.to_dict(), activation=params.activation, seeds=(seed,), reference=reference,
            reference_dt=args.dt or family.dt, expansion=args.expand or family.expansion,
        )
        result = evaluate_experiment(spec, dataset=ds, models={seed: params}, timing=args.timing)
        reports, fields = result.reports, result.fields
    blob = reports_csv(reports)
    out = Path(args.out)
    artifacts = {}
    if args.dump_fields:
        dump = Path(args.dump_fields)
        for (seed, test, t), (pred, ref) in sorted(fields.items()):
            name = f"seed{seed}_{test}_t{t:g}.wpkf"
            meta = {"test": test, "time": t, "seed": seed, "layout": ["prediction", "reference"]}
            artifacts[name] = sha256_bytes(containers.write(dump / name, containers.FIELD_MAGIC, meta, [pred, ref]))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    artifacts[out.name] = sha256_bytes(blob)
    write_manifest(manifest_path(out), "eval", args, artifacts)
    print(f"wrote {out}: {len(reports)} rows")
    return 0


def _mask_text(ds: Dataset) -> str:
    m = ds.meta["mask"]
    if m["kind"] == "disk":
        return f"disk:{m['radius']!r}"
    return m["kind"]


# ---------------------------------------------------------------- solve


def cmd_solve(args) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    if args.equation == "wave":
        raise UsageError("solve covers the Schrödinger equations; wave references are analytic")
    if args.solver == "spectral" and not args.periodic:
        raise UsageError("--solver spectral needs --periodic")
    grid = _grid_from_args(args)
    model = _model_for(args)
    if args.packet:
        *k, s2 = args.packet
        from .datasets import initial_fields

        initial = initial_fields(WavePacketSpec(tuple(k), s2, SCHRODINGER), grid)
    else:
        from .analytic import named_initial

        initial = named_initial(args.condition, grid)
    snaps = tuple(args.snapshots or (args.T,))
    steps = max(1, int(round(args.T / args.dt)))
    run = SolverRun(grid, TimeGrid(0.0, args.T, steps), initial, model, snaps)
    fields = reference_on_larger_domain(run, args.expand, args.solver)
    arrays = []
    for f in fields:
        arrays += [f.first, f.second]
    meta = {"grid": grid.to_dict(), "snapshots": list(snaps), "model": model.to_dict(), "solver": args.solver,
            "expansion": args.expand, "layout": "p,q per snapshot"}
    out = Path(args.out)
    blob = containers.save_fields(out, arrays, meta)
    write_manifest(manifest_path(out), "solve", args, {out.name: sha256_bytes(blob)})
    print(f"wrote {out}: {len(snaps)} snapshots")
    return 0


# ---------------------------------------------------------------- reproduce


def cmd_reproduce(args) -> int:
    if args.id not in EXPERIMENT_IDS:
        raise UsageError(f"unknown experiment {args.id!r}; valid ids: {', '.join(EXPERIMENT_IDS)}")
    seeds = tuple(range(args.seed, args.seed + args.seeds))
    rec = recipe(args.id, args.scale, seeds, args.epochs)
    out = Path(args.out) / args.id
    result = run_recipe(rec, out, timing=args.timing)
    write_manifest(out / "manifest.json", "reproduce", args, result.artifacts,
                   {"seeds": list(seeds), "recipe": recipe_config(rec)})
    for res in result.results.values():
        for r in res.medians if len(seeds) > 1 else res.reports:
            errs = ", ".join(f"{k}={v:.3e}" for k, v in r.errors.items())
            print(f"{r.experiment_id} {r.test_condition} t={r.snapshot_time:g} [{r.seed}]: {errs}")
    if not result.gates:
        print(f"{args.id}: no acceptance gate for this experiment")
    for gate in result.gates:
        print(gate.line())
    return 0 if result.passed else 1


# ---------------------------------------------------------------- parser


def _floats(text: str) -> float:
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavemap", description="Learn wave propagation maps on bounded domains.")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    parser.add_argument("--version", action="version", version=f"wavemap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file with defaults for this command")

    def grid_flags(p):
        p.add_argument("--equation", choices=EQUATIONS, default="wave")
        p.add_argument("--dim", type=int, default=1, help="packet dimension")
        p.add_argument("--grid-dim", type=int, default=None, help="grid dimension (cross-section when below --dim)")
        p.add_argument("--domain", type=_floats, nargs=2, default=[-8.0, 8.0], metavar=("LO", "HI"))
        p.add_argument("--nx", type=int, default=201, help="points per axis")
        p.add_argument("--periodic", action="store_true", help="periodic grid (required by the spectral solver)")
        p.add_argument("--mu", type=int, default=1, help="nonlinearity power for schr-mu")
        p.add_argument("--dt", type=float, default=1e-3, help="solver time step")
        p.add_argument("--expand", type=int, default=2, help="reference domain expansion factor")

    g = sub.add_parser("gen-data", help="assemble a training dataset")
    common(g)
    grid_flags(g)
    g.add_argument("--mask", default="full", help="full, disk:R or lshape")
    g.add_argument("--k-set", default="1:10")
    g.add_argument("--sigma-set", default="L", help="L, E:h or a comma list")
    g.add_argument("--kind", choices=("siso", "simo", "ximo", "time"), default="siso")
    g.add_argument("--times", type=_floats, nargs="+", default=[1.0])
    g.add_argument("--lambda", dest="lam", type=float, default=1.0)
    g.add_argument("--rescale", choices=("normalized", "literal", "none"), default="normalized")
    g.add_argument("--granularity", choices=("sample", "dataset"), default="dataset")
    g.add_argument("--source", choices=("analytic", "spectral", "cnfd"), default=None)
    g.add_argument("--condition", default="nls-sech", help="shared initial condition for --kind ximo")
    g.add_argument("--pot-e0", type=_floats, nargs="+", default=[1.0])
    g.add_argument("--pot-gamma", type=_floats, nargs="+", default=[1.0])
    g.add_argument("--pot-omega", type=_floats, nargs="+", default=[1.0])
    g.add_argument("--pot-t0", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a network on a dataset")
    common(t)
    t.add_argument("--data", required=False)
    t.add_argument("--net", choices=("fcnn", "resnet"), default="fcnn")
    t.add_argument("--depth", type=int, default=5, help="FCNN depth, or depth of each residual block")
    t.add_argument("--width", type=int, default=100)
    t.add_argument("--blocks", type=int, default=2, help="number of residual blocks")
    t.add_argument("--activation", choices=("relu", "tanh", "sigmoid", "elu"), default="tanh")
    t.add_argument("--epochs", type=int, default=20000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--decay-every", type=int, default=0, help="halve the learning rate every N epochs")
    t.add_argument("--batch", choices=("full", "minibatch", "sample"), default="full")
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lbfgs-iters", type=int, default=0)
    t.add_argument("--lbfgs-history", type=int, default=10)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--init", help="start from this model instead of He initialization")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model")
    common(e)
    e.add_argument("--model", required=False)
    e.add_argument("--data", required=False, help="the model's training dataset")
    e.add_argument("--test", action="append", default=[], help="named condition, optionally NAME@k")
    e.add_argument("--times", type=_floats, nargs="+", default=None)
    e.add_argument("--reference", choices=("analytic", "spectral-large", "cnfd"), default="analytic")
    e.add_argument("--dt", type=float, default=None)
    e.add_argument("--expand", type=int, default=None)
    e.add_argument("--experiment-id", default=None)
    e.add_argument("--dump-fields", default=None, help="directory for prediction/reference dumps")
    e.add_argument("--timing", action="store_true", help="fill wall_seconds (CSV no longer byte-stable)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("solve", help="run a reference solver")
    common(s)
    grid_flags(s)
    s.add_argument("--solver", choices=("spectral", "cnfd"), default="spectral")
    s.add_argument("--condition", default="nls-sech")
    s.add_argument("--packet", type=_floats, nargs="+", default=None, metavar="K... SIGMA2")
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--snapshots", type=_floats, nargs="+", default=None)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("reproduce", help="run a named experiment end to end")
    common(r)
    r.add_argument("id", help=f"one of: {', '.join(EXPERIMENT_IDS)}")
    r.add_argument("--scale", choices=SCALES, default="desk")
    r.add_argument("--seeds", type=int, default=1, help="number of seeds (medians are gated)")
    r.add_argument("--seed", type=int, default=0, help="first seed")
    r.add_argument("--epochs", type=int, default=None, help="override training length")
    r.add_argument("--timing", action="store_true")
    r.add_argument("--out", default="runs")
    r.set_defaults(func=cmd_reproduce)
    return parser


def _thread_limit():
    value = os.environ.get("WAVEMAP_THREADS")
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            subparser = parser._subparsers._group_actions[0].choices[args.command]
            apply_config(subparser, read_config(args.config))
            args = parser.parse_args(argv)
        if args.command in ("train",) and not args.data:
            raise UsageError("--data is required")
        if args.command == "eval" and not (args.model and args.data):
            raise UsageError("--model and --data are required")
        args.argv = argv
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"wavemap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError, containers.ContainerError) as exc:
        print(f"wavemap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
