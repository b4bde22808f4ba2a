"""Scenario-driven command line front end.

Pipeline per scenario: discretize -> classify -> predict -> simulate ->
verify, with CSV reports (17 significant digits, RFC-4180) written to the
output directory.  Runs are deterministic: a fixed seed drives any random
test-label choices and is recorded in the outputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import analysis, dynamics, envelope, initial, protocols
from ._backend import BACKEND

COMMANDS = ("classify", "predict", "simulate", "verify", "converge", "all")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    data: initial.InitialData
    protocol: protocols.Protocol
    n_schedule: tuple[int, ...]
    horizon: float
    sample_times: tuple[float, ...]
    snap: tuple[float, ...]
    test_pairs: tuple[tuple[float, float], ...]
    n_random_pairs: int
    k_intervals: tuple[tuple[float, float], ...]
    opts: dynamics.AdvanceOptions
    seed: int


def load_scenario(path: Path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    def section(name, required=True):
        if name not in cfg:
            if required:
                raise ConfigError(f"{path}: missing [{name}] section")
            return {}
        return cfg[name]

    sc = section("scenario")
    try:
        name = sc["name"]
        horizon = float(sc["horizon"])
        n_schedule = tuple(int(n) for n in sc["n_schedule"])
        sample_times = tuple(float(t) for t in sc["sample_times"])
        seed = int(sc.get("seed", 0))
    except KeyError as exc:
        raise ConfigError(f"{path}: [scenario] is missing field {exc}") from exc
    if horizon <= 0.0:
        raise ConfigError(f"{path}: scenario.horizon must be positive")
    if list(n_schedule) != sorted(set(n_schedule)):
        raise ConfigError(f"{path}: scenario.n_schedule must be strictly increasing")

    init = section("initial")
    try:
        data = initial.initial_data(init.get("atoms", ()), init.get("blocks", ()))
    except initial.InitialDataError as exc:
        raise ConfigError(f"{path}: [initial] {exc}") from exc
    try:
        proto = protocols.from_config(section("protocol"))
    except (protocols.ProtocolError, KeyError) as exc:
        raise ConfigError(f"{path}: [protocol] {exc}") from exc

    labels = section("labels", required=False)
    snap = tuple(float(s) for s in labels.get("snap", ()))
    pairs = tuple((float(a), float(b)) for a, b in labels.get("pairs", ()))
    n_random = int(labels.get("random_pairs", 0))
    ks = labels.get("k", ())
    if ks and not isinstance(ks[0], (list, tuple)):
        ks = [ks]
    k_intervals = tuple((float(a), float(b)) for a, b in ks)

    tol = section("tolerances", required=False)
    opts = dynamics.AdvanceOptions(
        rtol=float(tol.get("rtol", 1e-10)),
        merge_eps_rel=float(tol.get("merge_eps_rel", 1e-12)),
    )
    return Scenario(name, data, proto, n_schedule, horizon, sample_times,
                    snap, pairs, n_random, k_intervals, opts, seed)


def bundled_scenario_path(name: str) -> Path:
    from importlib.resources import files
    p = files("stickycs") / "scenarios" / f"{name}.toml"
    return Path(str(p))


def bundled_scenario_names() -> list[str]:
    from importlib.resources import files
    d = files("stickycs") / "scenarios"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".toml"))


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class Pipeline:
    scenario: Scenario
    x0: initial.QuantileFn
    flux: initial.Flux
    env: envelope.Envelope
    regions: envelope.RegionDecomposition
    prediction: analysis.Prediction
    snap: tuple[float, ...]
    pairs: tuple[tuple[float, float], ...]


def build_pipeline(scn: Scenario, seed: Optional[int] = None) -> Pipeline:
    seed = scn.seed if seed is None else seed
    x0 = initial.quantile_from_data(scn.data)
    psi0 = initial.build_psi0(scn.data, scn.protocol)
    flux = initial.build_flux(psi0, x0)
    env = envelope.lower_convex_envelope(flux)
    regions = envelope.classify_regions(flux, env)

    pairs = list(scn.test_pairs)
    if scn.n_random_pairs:
        rng = np.random.default_rng(seed)
        min_gap = 4.0 / max(scn.n_schedule)
        while len(pairs) < len(scn.test_pairs) + scn.n_random_pairs:
            a, b = np.sort(rng.uniform(-0.45, 0.45, size=2))
            if b - a >= min_gap:
                pairs.append((float(a), float(b)))

    k_map = {}
    for k_iv in scn.k_intervals:
        comp = regions.component_of(0.5 * (k_iv[0] + k_iv[1]))
        if comp is None:
            raise ConfigError(f"labels.k interval {k_iv} is not inside a "
                              "supercritical component")
        k_map[comp] = k_iv
    pred = analysis.predict(regions, x0, flux, env, scn.protocol,
                            scn.data.diameter, k_intervals=k_map,
                            test_pairs=pairs)
    snap = sorted(set(scn.snap) | set(pred.required_snaps()))
    return Pipeline(scn, x0, flux, env, regions, pred, tuple(snap), tuple(pairs))


def run_simulations(pipe: Pipeline, ns=None) -> dict[int, dynamics.Trajectory]:
    scn = pipe.scenario
    out = {}
    for n in (ns or scn.n_schedule):
        disc = initial.discretize(scn.data, scn.protocol, n, snap=pipe.snap,
                                  flux=pipe.flux, x0=pipe.x0)
        out[n] = dynamics.simulate(disc, scn.horizon, scn.sample_times, scn.opts)
    return out


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_regions(pipe: Pipeline, out: Path) -> None:
    rows = []
    for a, b in pipe.regions.sigma_plus:
        rows.append(("subcritical", a, b, "half_open"))
    for a, b in pipe.regions.sigma_zero:
        rows.append(("critical", a, b, "half_open"))
    for a, b in pipe.regions.sigma_minus:
        rows.append(("supercritical", a, b, "open"))
    rows.sort(key=lambda r: r[1])
    for note in pipe.regions.notes:
        rows.append(("note", 0.0, 0.0, note))
    _write_csv(out / "regions.csv", ("region", "m_lo", "m_hi", "interval_type"), rows)


def write_prediction(pipe: Pipeline, out: Path) -> None:
    rows = []
    pred = pipe.prediction
    for i, v in enumerate(pred.verdicts):
        rows.append(("verdict", i, v.kind, v.theorem, v.interval[0], v.interval[1],
                     int(v.closed_left),
                     v.time_bound if v.time_bound is not None else "",
                     v.rate if v.rate is not None else "", ""))
    base = len(pred.verdicts)
    for j, s in enumerate(pred.separations):
        rows.append(("separation", base + j, "separation", s.theorem,
                     s.m_lo, s.m_hi, 0, "",
                     s.sup_phi if s.sup_phi is not None else "", s.c0))
    _write_csv(out / "prediction.csv",
               ("type", "id", "kind", "theorem", "m_lo", "m_hi", "closed_left",
                "time_bound", "rate", "c0"), rows)


def write_trajectory(traj: dynamics.Trajectory, n: int, out: Path) -> None:
    rows = []
    for s in traj.samples:
        x = s.positions()
        v = s.velocities()
        psi = s.psi()
        gid = s.group_ids()
        for i in range(len(x)):
            rows.append((s.t, i, x[i], v[i], psi[i], gid[i]))
    _write_csv(out / f"trajectory_N{n}.csv", ("t", "i", "x", "v", "psi", "group_id"),
               rows)
    ev_rows = []
    for k, ev in enumerate(sorted(traj.events, key=lambda e: e.t)):
        for lo, hi, v_pre, psi_pre in ev.parts:
            ev_rows.append((k, ev.t, ev.lo, ev.hi, lo, hi, v_pre, psi_pre,
                            ev.v_post, ev.psi_post))
    _write_csv(out / f"events_N{n}.csv",
               ("event_id", "t", "merged_lo", "merged_hi", "part_lo", "part_hi",
                "v_pre", "psi_pre", "v_post", "psi_post"), ev_rows)


def write_verdicts(rows, out: Path) -> None:
    _write_csv(out / "verdicts.csv",
               ("pred_id", "theorem", "kind", "time", "empirical", "bound",
                "margin", "status"),
               [(r.pred_id, r.theorem, r.kind, r.time, r.empirical, r.bound,
                 r.margin, r.status) for r in rows])


def write_wasserstein(table, out: Path) -> None:
    _write_csv(out / "wasserstein.csv", ("n_coarse", "n_fine", "t", "w1"), table)


def write_meta(scn: Scenario, seed: int, out: Path) -> None:
    _write_csv(out / "run_meta.csv", ("scenario", "seed", "backend"),
               [(scn.name, seed, BACKEND)])


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run(config: Path, command: str, out_dir: Path,
        n_override: Optional[int] = None, seed: Optional[int] = None) -> int:
    scn = load_scenario(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = scn.seed if seed is None else seed
    try:
        pipe = build_pipeline(scn, seed)
    except analysis.PredictionError as exc:
        print(f"prediction refused: {exc}", file=sys.stderr)
        return 3
    write_meta(scn, seed, out_dir)
    ns = [n_override] if n_override else list(scn.n_schedule)

    if command in ("classify", "all"):
        write_regions(pipe, out_dir)
    if command in ("predict", "all"):
        write_prediction(pipe, out_dir)
    if command == "classify" or command == "predict":
        return 0

    trajs = run_simulations(pipe, ns)
    for n, traj in trajs.items():
        write_trajectory(traj, n, out_dir)
    status = 0
    if command in ("verify", "all"):
        rows = analysis.verify(pipe.prediction, list(trajs.values()),
                               scn.sample_times)
        write_verdicts(rows, out_dir)
        if any(r.status == "FAIL" for r in rows):
            status = 1
    if command in ("converge", "all"):
        table = analysis.wasserstein_table(list(trajs.values()), scn.sample_times)
        write_wasserstein(table, out_dir)
    return status


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="stickycs",
        description="Sticky-particle alignment simulator and cluster predictor")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True,
                    help="scenario file path, or the name of a bundled scenario")
    ap.add_argument("--out", required=True, help="output directory for reports")
    ap.add_argument("--n", type=int, default=None, help="override the N schedule")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    args = ap.parse_args(argv)
    config = Path(args.config)
    if not config.exists():
        candidate = bundled_scenario_path(args.config)
        if candidate.exists():
            config = candidate
        else:
            print(f"config not found: {args.config}", file=sys.stderr)
            return 2
    try:
        return run(config, args.command, Path(args.out), args.n, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
