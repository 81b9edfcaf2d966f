"""Command-line entry point: ``ils <subcommand> ...``.

Exit codes: 0 success, 1 bad input, 2 numerical failure, 3 internal error.
Every command that writes files also writes ``meta.json`` recording all
flags, seeds and library versions (no timestamps, so reruns are
byte-identical).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .controller import (ComfortConstraint, DimmingVector, PowerModel, SolutionCache, energy_report,
                         evaluate_config, optimize_exhaustive, optimize_greedy, timeline_energy)
from .dali import (DaliBus, Dapc, DaliError, GatewayClient, Gateway, GearState, Short,
                   Command, QUERY_ACTUAL_LEVEL, format_log, parse_log, replay)
from .fixtures import data_path
from .geometry import VisibilityIndex
from .perception import (DEFAULT_RAYS, cast_receivers, incident_map, read_receivers_csv,
                         save_raster_csv, save_raster_pgm)
from .photometry import CurveError
from .radiosity import (ConvergenceError, load_solution_csv, problem_from_scene, save_solution_csv,
                        solve_direct, solve_iterative)
from .scene import SceneError, load_scene, occupant_from_dict
from .transport import assemble_for_solve, canonical_mode, load_npz, save_npz, assemble

log = logging.getLogger("ils")

EXIT_INPUT, EXIT_NUMERICAL, EXIT_INTERNAL = 1, 2, 3
CLI_SAMPLES = 16
POLICIES = ("none", "ils-greedy", "ils-exhaustive")


class InputError(Exception):
    pass


# --- helpers ------------------------------------------------------------------------

def _resolve_scene_path(ref, base=None):
    p = Path(ref)
    if base is not None and not p.is_absolute() and (Path(base) / p).exists():
        return Path(base) / p
    if p.exists():
        return p
    bundled = data_path(p.name)
    if bundled.exists():
        return bundled
    raise InputError(f"scene file not found: {ref}")


def _scene(args):
    if not args.scene:
        raise InputError("--scene is required")
    return load_scene(_resolve_scene_path(args.scene))


def _out_dir(args):
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _versions():
    import numba
    import scipy
    return {"ils": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version(), "workers": 1}


def _write_meta(out, command, args, extra=None):
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func",)}
    meta = {"command": command, "flags": flags, "versions": _versions()}
    if extra:
        meta.update(extra)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _matrices(scene, args, index, mode=None):
    """Transport and sensing matrices, reusing an on-disk cache when --cache is given."""
    mode = canonical_mode(mode or args.mode)
    h = scene.geometry_hash()
    plain = None
    if getattr(args, "cache", None):
        cdir = Path(args.cache)
        cdir.mkdir(parents=True, exist_ok=True)
        f = cdir / f"plain-{h[:16]}-s{args.samples}-r{args.seed}.npz"
        if f.exists():
            plain, stored = load_npz(f)
            if stored != h:
                plain = None
        if plain is None:
            plain = assemble(scene, args.samples, args.seed, "plain", index)
            save_npz(plain, f, h)
    return assemble_for_solve(scene, args.samples, args.seed, mode, index, base=plain)


def _solve(scene, transport, sense, args, levels=None):
    p = problem_from_scene(scene, transport, levels, sense)
    if args.solver == "direct":
        return solve_direct(p)
    return solve_iterative(p, tol=args.tol, max_iters=args.max_iters, scheme=args.solver)


def _parse_levels(text, n):
    vals = [int(x) for x in text.replace(",", " ").split()]
    if len(vals) != n:
        raise InputError(f"expected {n} levels, got {len(vals)}")
    return DimmingVector(tuple(vals))


def _constraint(args):
    return ComfortConstraint(args.min_lux, args.max_delta_lux)


def _allowed(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


# --- subcommands -----------------------------------------------------------------

def cmd_validate(args):
    scene = _scene(args)
    lo, hi = scene.bounds
    print(f"patches: {scene.n}")
    print(f"total area: {scene.areas.sum():.6g} m^2")
    print(f"luminaires: {len(scene.luminaires)}")
    print(f"installed power: {scene.installed_power:.6g} W")
    print(f"sensors: {len(scene.sensors)}")
    print(f"occupants: {len(scene.occupants)}")
    print(f"bounds: {lo.tolist()} .. {hi.tolist()}")
    print(f"geometry hash: {scene.geometry_hash()}")
    print("OK")
    return 0


def _sensor_rows(scene, sol):
    return [(s.id, s.patch, float(sol.H[scene.patch_index[s.patch]]))
            for s in scene.sensors if s.patch is not None]


def cmd_solve(args):
    scene = _scene(args)
    out = _out_dir(args)
    index = VisibilityIndex(scene.patches)
    transport, sense = _matrices(scene, args, index)
    sol = _solve(scene, transport, sense, args)
    save_solution_csv(scene, sol, out / "solution.csv")
    with open(out / "sensors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_id", "patch_id", "H"])
        for sid, pid, h in _sensor_rows(scene, sol):
            w.writerow([sid, pid, repr(h)])
    extra = {"iterations": sol.iterations, "residual": sol.residual, "n": scene.n,
             "scene_hash": scene.geometry_hash(), "mode": canonical_mode(args.mode)}
    if args.diff_mode:
        t2, s2 = _matrices(scene, args, index, args.diff_mode)
        other = _solve(scene, t2, s2, args)
        save_solution_csv(scene, other, out / f"solution_{canonical_mode(args.diff_mode)}.csv")
        with open(out / "diff.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sensor_id", "patch_id", f"H_{canonical_mode(args.mode)}",
                        f"H_{canonical_mode(args.diff_mode)}", "difference"])
            for (sid, pid, a), (_, _, b) in zip(_sensor_rows(scene, sol), _sensor_rows(scene, other)):
                w.writerow([sid, pid, repr(a), repr(b), repr(a - b)])
        extra["diff_mode"] = canonical_mode(args.diff_mode)
    _write_meta(out, "solve", args, extra)
    print(f"solved n={scene.n} iterations={sol.iterations} residual={sol.residual:.3e} -> {out}")
    return 0


def _load_solution(scene, path):
    p = Path(path)
    if not p.exists():
        raise InputError(f"solution file not found: {path}")
    ids, sol = load_solution_csv(p)
    if ids != [pp.id for pp in scene.patches]:
        raise InputError("solution does not match the scene's patches")
    return sol


def cmd_map(args):
    scene = _scene(args)
    sol = _load_solution(scene, args.solution)
    out = _out_dir(args)
    r = incident_map(scene, sol, args.grid, args.plane, args.rays, args.seed)
    save_raster_csv(r, out / "map.csv")
    save_raster_pgm(r, out / "map.pgm")
    _write_meta(out, "map", args, {"empty": r.empty, "max_lux": float(r.lux.max()) if r.lux.size else 0.0})
    print(f"map {r.lux.shape[1] if r.lux.size else 0}x{r.lux.shape[0] if r.lux.size else 0} -> {out}")
    return 0


def cmd_sense(args):
    scene = _scene(args)
    sol = _load_solution(scene, args.solution)
    if not Path(args.receivers).exists():
        raise InputError(f"receivers file not found: {args.receivers}")
    recv = read_receivers_csv(args.receivers)
    out = _out_dir(args)
    bundles = cast_receivers(VisibilityIndex(scene.patches), recv, args.rays, args.seed)
    with open(out / "sense.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lux"])
        for r, b in zip(recv, bundles):
            w.writerow([r.id, repr(float(b.read(sol.B)[0]))])
    _write_meta(out, "sense", args)
    print(f"{len(recv)} receivers -> {out / 'sense.csv'}")
    return 0


def _optimizer(policy):
    return {"ils-greedy": optimize_greedy, "ils-exhaustive": optimize_exhaustive}[policy]


def cmd_optimize(args):
    scene = _scene(args)
    out = _out_dir(args)
    index = VisibilityIndex(scene.patches)
    transport, sense = _matrices(scene, args, index)
    cache = SolutionCache(scene, transport, sense, args.rays, args.seed, index)
    d = _optimizer("ils-" + args.method)(scene, cache, None, _constraint(args), _allowed(args.levels))
    ev = evaluate_config(scene, cache, d)
    rep = energy_report(d, cache.power, args.hours, args.overhead, ev.delta_lux)
    text = rep.text()
    if d.infeasible:
        text += "constraint infeasible: falling back to full-lit\n"
    text += "".join(f"occupant {o.id} lux: {lx:.4f}\n" for o, lx in zip(scene.occupants, ev.lux))
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(rep.csv())
    _write_meta(out, "optimize", args, {"levels": list(d.levels), "infeasible": d.infeasible})
    sys.stdout.write(text)
    return 0


def cmd_report(args):
    scene = _scene(args)
    d = _parse_levels(args.config, len(scene.luminaires))
    rep = energy_report(d, PowerModel.from_scene(scene), args.hours, args.overhead)
    sys.stdout.write(rep.text())
    if args.out_dir:
        out = _out_dir(args)
        (out / "report.txt").write_text(rep.text())
        (out / "report.csv").write_text(rep.csv())
        _write_meta(out, "report", args)
    return 0


# --- simulation --------------------------------------------------------------------

def load_scenario(path):
    try:
        p = _resolve_scene_path(path)
    except InputError:
        raise InputError(f"scenario file not found: {path}") from None
    try:
        sc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: parse error: {exc}") from None
    for key in ("scene", "timeline"):
        if key not in sc:
            raise InputError(f"scenario: missing key {key!r}")
    policy = sc.get("policy", "ils-exhaustive")
    if policy not in POLICIES:
        raise InputError(f"scenario: unknown policy {policy!r}")
    times = [float(s["t"]) for s in sc["timeline"]]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InputError("scenario: timeline times must be strictly increasing")
    sc["_base"] = str(p.parent)
    return sc


class _LocalLink:
    """Master-controller link straight onto an in-process bus."""

    def __init__(self, bus):
        self.bus = bus

    def dapc(self, short, level):
        self.bus.send(Short(short), Dapc(level))

    def query(self, short):
        return self.bus.send(Short(short), Command(QUERY_ACTUAL_LEVEL))

    def close(self):
        pass


class _TcpLink:
    def __init__(self, client):
        self.client = client

    def dapc(self, short, level):
        resp = self.client.dapc(short, level)
        if resp != "OK":
            raise DaliError(f"gateway refused DAPC: {resp}")

    def query(self, short):
        return self.client.query(short)

    def close(self):
        self.client.close()


def run_scenario(sc, scene, cache, policy=None, link=None, constraint=None):
    """Drive the control loop over a scenario; returns (rows, steps for energy accounting)."""
    policy = policy or sc.get("policy", "ils-exhaustive")
    constraint = constraint or ComfortConstraint(**sc.get("constraint", {}))
    allowed = tuple(sc.get("levels", (0, 254)))
    known = {o.id for o in scene.occupants}
    lums = scene.luminaires
    current = DimmingVector(tuple(l.level for l in lums))
    timeline = sc["timeline"]
    end = float(sc.get("end", float(timeline[-1]["t"]) + 1.0))
    rows, steps = [], []
    for k, step in enumerate(timeline):
        occ = [occupant_from_dict(o) for o in step.get("occupants", [])]
        if known and any(o.id not in known for o in occ):
            raise InputError(f"scenario step {k}: unknown occupant id")
        if policy == "none":
            d = current
        else:
            d = _optimizer(policy)(scene, cache, occ, constraint, allowed)
            if d.infeasible:
                log.warning("step %d: constraint infeasible, staying full-lit", k)
        for lum, old, new in zip(lums, current.levels, d.levels):
            if old != new:
                link.dapc(lum.dali, new)
        status = [link.query(l.dali) for l in lums]
        if status != list(d.levels):
            raise DaliError(f"step {k}: gear status {status} differs from commanded {list(d.levels)}")
        current = DimmingVector(d.levels)
        ev = evaluate_config(scene, cache, current, occ)
        t0 = float(step["t"])
        t1 = float(timeline[k + 1]["t"]) if k + 1 < len(timeline) else end
        steps.append(((t1 - t0) / 3600.0, current))
        rows.append({"t": t0, "levels": current.levels, "delta_watt": ev.delta_watt,
                     "lux": [float(x) for x in ev.lux], "delta_lux": [float(x) for x in ev.delta_lux],
                     "occupants": [o.id for o in occ], "infeasible": d.infeasible})
    return rows, steps


def cmd_simulate(args):
    sc = load_scenario(args.scenario)
    scene = load_scene(_resolve_scene_path(sc["scene"], sc["_base"]))
    policy = args.policy or sc.get("policy", "ils-exhaustive")
    if policy not in POLICIES:
        raise InputError(f"unknown policy {policy!r}")
    out = _out_dir(args)
    index = VisibilityIndex(scene.patches)
    transport, sense = _matrices(scene, args, index)
    cache = SolutionCache(scene, transport, sense, args.rays, args.seed, index)
    gears = [GearState(l.dali, l.level) for l in scene.luminaires]
    bus = gateway = None
    if args.gateway in (None, "", "inprocess"):
        bus = DaliBus(gears)
        link = _LocalLink(bus)
    elif args.gateway == "local":
        bus = DaliBus(gears)
        gateway = Gateway(bus).start()
        link = _TcpLink(GatewayClient(*gateway.address))
    else:
        host, _, port = args.gateway.rpartition(":")
        try:
            link = _TcpLink(GatewayClient(host or "127.0.0.1", int(port)))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot reach gateway {args.gateway}: {exc}") from None
    try:
        rows, steps = run_scenario(sc, scene, cache, policy, link)
    finally:
        link.close()
        if gateway is not None:
            gateway.stop()
    occ_ids = sorted({i for r in rows for i in r["occupants"]})
    with open(out / "timeline.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "levels", "delta_watt"] + [f"lux_{i}" for i in occ_ids]
                   + [f"delta_lux_{i}" for i in occ_ids] + ["infeasible"])
        for r in rows:
            lux = dict(zip(r["occupants"], r["lux"]))
            dl = dict(zip(r["occupants"], r["delta_lux"]))
            w.writerow([repr(r["t"]), " ".join(map(str, r["levels"])), repr(r["delta_watt"])]
                       + [repr(lux[i]) if i in lux else "" for i in occ_ids]
                       + [repr(dl[i]) if i in dl else "" for i in occ_ids] + [int(r["infeasible"])])
    kwh, pct = timeline_energy(steps, cache.power, args.overhead)
    lines = [f"policy: {policy}", f"steps: {len(rows)}",
             f"energy saved: {kwh:.6f} kWh", f"saving: {pct:.2f} %",
             "formula: kWh = sum over steps of (dW - P_overhead) * hours / 1000; "
             "percent = saved / sum of (P_full + P_overhead) * hours"]
    extra = {"policy": policy, "kwh": kwh, "percent": pct}
    if bus is not None:
        (out / "frames.log").write_text(format_log(bus.log))
        replayed = replay(bus.initial, parse_log((out / "frames.log").read_text()))
        ok = replayed == bus.state
        lines.append(f"frames: {len(bus.log)}; replay reproduces final gear state: {ok}")
        extra["replay_ok"] = ok
        if not ok:
            raise RuntimeError("frame log replay diverged from the bus state")
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report)
    _write_meta(out, "simulate", args, extra)
    sys.stdout.write(report)
    return 0


# --- argument parsing ---------------------------------------------------------------

def _common(p, scene=True):
    if scene:
        p.add_argument("--scene", help="scene file (path, or name of a bundled fixture)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")


def _transport_flags(p):
    p.add_argument("--samples", type=int, default=CLI_SAMPLES, help="Monte Carlo samples per patch pair")
    p.add_argument("--mode", default="ldc+lsc", help="plain | ldc | lsc | ldc+lsc (or no_LDC, no_LSC, ...)")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--solver", choices=("direct", "jacobi", "gauss_seidel"), default="direct")
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--cache", help="directory for reusable form-factor archives")


def build_parser():
    ap = argparse.ArgumentParser(prog="ils", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load and check a scene file")
    p.add_argument("--scene")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="assemble form factors and solve the radiosity system")
    _common(p)
    _transport_flags(p)
    p.add_argument("--diff-mode", help="also solve in this mode and write sensor differences")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("map", help="horizontal illuminance raster from a solution")
    _common(p)
    p.add_argument("--solution", required=True)
    p.add_argument("--grid", type=float, default=0.25)
    p.add_argument("--plane", type=float, default=0.75)
    p.add_argument("--rays", type=int, default=1024)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("sense", help="evaluate a batch of receivers from a CSV file")
    _common(p)
    p.add_argument("--solution", required=True)
    p.add_argument("--receivers", required=True)
    p.add_argument("--rays", type=int, default=DEFAULT_RAYS)
    p.set_defaults(func=cmd_sense)

    p = sub.add_parser("optimize", help="invisible-light-switch dimming for the scene's occupants")
    _common(p)
    _transport_flags(p)
    p.add_argument("--method", choices=("exhaustive", "greedy"), default="exhaustive")
    p.add_argument("--levels", default="0,254", help="allowed arc levels")
    p.add_argument("--max-delta-lux", type=float, default=200.0)
    p.add_argument("--min-lux", type=float)
    p.add_argument("--rays", type=int, default=DEFAULT_RAYS)
    p.add_argument("--hours", type=float, default=8.0)
    p.add_argument("--overhead", type=float, default=0.0, help="processing-unit power, W")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="run a scenario through the control loop and DALI bus")
    _common(p, scene=False)
    _transport_flags(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--gateway", help="inprocess (default), local (TCP on loopback) or HOST:PORT")
    p.add_argument("--rays", type=int, default=DEFAULT_RAYS)
    p.add_argument("--overhead", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="energy report for a dimming configuration")
    p.add_argument("--scene")
    p.add_argument("--config", required=True, help="arc level per luminaire, e.g. '0 0 254 254 0 0 0 0'")
    p.add_argument("--hours", type=float, default=8.0)
    p.add_argument("--overhead", type=float, default=0.0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:  # LinAlgError is a ValueError
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, SceneError, CurveError, DaliError, FileNotFoundError, ValueError,
            KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
