"""Command line interface.

Subcommands: ``cell``, ``macro``, ``dns``, ``compare``, ``energy`` and
``emit-config``.  Exit codes: 0 success, 2 configuration error, 3 solver
failure, 4 monitor trip.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as tio
from .config import default_config, load_config
from .errors import ConfigError, MonitorTrip, TissueScaleError, ValidationError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MONITOR = 0, 2, 3, 4
MODES = {"quasi": "quasi_stationary", "evolutionary": "evolutionary"}
TENSORS = ("E_hom", "K_p", "D", "D_b")
ENERGY_COLUMNS = ("t", "elastic", "elastic_rate", "pressure", "kinetic", "dissipation", "gamma_bound")


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "mode", None):
        cfg = cfg.copy(modes__elasticity=MODES[args.mode])
    return cfg


def _out(args, cfg):
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _homogenizer(cfg, resolution=None):
    from .homogenizer import UnitCellHomogenizer

    return UnitCellHomogenizer.from_config(cfg, resolution=resolution).fit()


# ------------------------------------------------------------------ commands
def cmd_emit_config(args):
    cfg = _config(args) if args.config else default_config()
    text = cfg.to_text(annotate=True)
    if args.out:
        path = Path(args.out)
        if path.suffix == "":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "config.ini"
        path.write_text(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_cell(args):
    cfg = _config(args)
    out = _out(args, cfg)
    h = _homogenizer(cfg)
    coef = h.coefficients_
    key = cfg.hash()
    for name in TENSORS:
        tio.write_tensor_csv(out / f"tensor_{name}.csv", name, getattr(coef, name), key)
    tio.write_csv(out / "coefficients.csv", ["name", "value"], list(coef.scalars().items()), key)
    cache = tio.cache_path(cfg)
    tio.save_coefficients(cache, coef, key)
    print(f"effective coefficients written to {out}; cache {cache}")
    print(f"  E_hom diag = {np.diag(coef.E_hom).round(6).tolist()}, K_p = {np.diag(coef.K_p).round(6).tolist()}")
    return EXIT_OK


def _load_cached(cfg):
    path = tio.cache_path(cfg)
    if not path.exists():
        raise ConfigError(f"no cached effective coefficients for this configuration ({path}); "
                          f"run `tissuescale cell` with the same --config first")
    return tio.load_coefficients(path)


def cmd_macro(args):
    from .macro import MacroSolver

    cfg = _config(args)
    out = _out(args, cfg)
    coef = _load_cached(cfg)
    hom = _homogenizer(cfg) if cfg.modes.fluid == "full" else None
    solver = MacroSolver(cfg, coef, hom)
    key = cfg.hash()
    if args.restart:
        state, text = tio.load_checkpoint(args.restart)
        if text != cfg.to_text(annotate=False):
            raise ConfigError(f"checkpoint {args.restart} was written with a different configuration")
        solver.state = state
    n_total = int(round(cfg.time.T / cfg.time.dt))
    n_steps = n_total - solver.state.step if args.steps is None else args.steps
    every = cfg.output.vtk_every

    def snapshot(st):
        if every and st.step % every == 0:
            _write_macro_vtk(out / f"macro_{st.step:05d}.vtk", solver, st, key)

    series = solver.run(max(n_steps, 0), callback=snapshot)
    tio.write_series(out / "macro_series.csv", series, key)
    tio.save_checkpoint(out / "checkpoint.bin", solver.state, cfg)
    last = series[-1]
    print(f"macro run to t={last['t']:.6g}: |u|={last['u_L2']:.6e} |p|={last['p_L2']:.6e} "
          f"min density={last['min_density']:.3e}")
    return EXIT_OK


def _write_macro_vtk(path, solver, st, key):
    pd = {"u": st.u.reshape(-1, 2), "p": st.p, "b1": st.b[:, 0], "b2": st.b[:, 1], "b3": st.b[:, 2], "c": st.c}
    tio.write_vtk(path, solver.grid, pd, key, cell_data={"Q": st.Q})


def cmd_dns(args):
    from .micro import MicroSolver

    cfg = _config(args)
    out = _out(args, cfg)
    key = cfg.hash()
    cells = args.cells or list(cfg.dns.cells)
    for N in cells:
        solver = MicroSolver(cfg, N)
        series = solver.run()
        tio.write_series(out / f"dns_N{N}.csv", series, key)
        avg = solver.cell_averages()
        rows = [[k, *avg["u"][k], avg["p"][k], *avg["b"][k], avg["c"][k]] for k in range(N * N)]
        tio.write_csv(out / f"dns_N{N}_cells.csv", ["cell", "u1", "u2", "p", "b1", "b2", "b3", "c"], rows, key)
        last = series[-1]
        print(f"dns N={N}: t={last['t']:.6g} |p|={last['p_L2']:.6e} max div={max(s['divergence'] for s in series):.2e}")
    return EXIT_OK


def cmd_compare(args):
    from .compare import FIELDS, compare_two_scale

    cfg = _config(args)
    out = _out(args, cfg)
    key = cfg.hash()
    rep = compare_two_scale(cfg, cells=args.cells)
    cols = [c for c in rep.columns if c != "runtime_s"]
    tio.write_csv(out / "compare.csv", cols, [r[:-1] for r in rep.rows()], key)
    energy_cols = ["t", "macro"] + [f"N{N}" for N in rep.cells]
    rows = np.column_stack([rep.times, rep.macro_energy] + list(rep.micro_energy))
    tio.write_csv(out / "compare_energy.csv", energy_cols, rows.tolist(), key)
    print(rep.summary())
    print("monotone decrease:", "yes" if rep.monotone(FIELDS) else "no")
    return EXIT_OK


def cmd_energy(args):
    from .energy import energy_series

    cfg = _config(args)
    out = _out(args, cfg)
    gamma = cfg.dns.gamma if args.gamma is None else args.gamma
    inputs = args.inputs or [str(out / "macro_series.csv")]
    for path in inputs:
        _, cols, data = tio.read_csv(path)
        missing = [c for c in ENERGY_COLUMNS if c not in cols]
        if missing:
            raise ValidationError(f"{path} lacks the energy columns {missing}")
        idx = {c: cols.index(c) for c in ENERGY_COLUMNS}
        records = [{c: row[idx[c]] for c in ENERGY_COLUMNS} for row in data]
        E = energy_series(records, data[:, idx["t"]], gamma)
        target = out / (Path(path).stem + "_energy.csv")
        tio.write_csv(target, ["t", "energy"], np.column_stack([data[:, idx["t"]], E]).tolist(), cfg.hash())
        print(f"{path}: energy at t={data[-1, idx['t']]:.6g} is {E[-1]:.6e} (gamma={gamma:g}) -> {target}")
    return EXIT_OK


# ------------------------------------------------------------------- parsing
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (key = value with [section] headers)")
    common.add_argument("--out", help="output directory (default: output.dir of the config)")
    common.add_argument("--threads", type=int, help="limit the BLAS thread pools")
    common.add_argument("--mode", choices=sorted(MODES), help="elasticity mode override")
    p = argparse.ArgumentParser(prog="tissuescale", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"tissuescale {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("cell", parents=[common], help="solve the cell problems and cache the coefficients")
    m = sub.add_parser("macro", parents=[common], help="run the homogenized model")
    m.add_argument("--restart", help="continue from a checkpoint file")
    m.add_argument("--steps", type=int, help="number of steps (default: up to time.T)")
    d = sub.add_parser("dns", parents=[common], help="run direct simulations on N x N tissues")
    d.add_argument("--cells", type=int, nargs="+", help="tissue sizes (default: dns.cells)")
    c = sub.add_parser("compare", parents=[common], help="compare direct simulations with the macro model")
    c.add_argument("--cells", type=int, nargs="+", help="tissue sizes (default: dns.cells)")
    e = sub.add_parser("energy", parents=[common], help="weighted energy of stored series")
    e.add_argument("inputs", nargs="*", help="series CSV files (default: macro_series.csv in --out)")
    e.add_argument("--gamma", type=float, help="weight exponent (default: dns.gamma)")
    sub.add_parser("emit-config", parents=[common], help="print the annotated default configuration")
    return p


COMMANDS = {"cell": cmd_cell, "macro": cmd_macro, "dns": cmd_dns, "compare": cmd_compare,
            "energy": cmd_energy, "emit-config": cmd_emit_config}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except MonitorTrip as exc:
        print(f"tissuescale: monitor trip: {exc}", file=sys.stderr)
        return EXIT_MONITOR
    except ValidationError as exc:
        print(f"tissuescale: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"tissuescale: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TissueScaleError as exc:
        print(f"tissuescale: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
