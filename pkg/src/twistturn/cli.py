"""Command-line harness: deterministic experiments with structured outputs.

Every experiment writes self-describing comma-separated tables (metadata
in '#'-prefixed header lines), optional binary accumulator dumps, and a
manifest listing each output file with its checksum. Identical
(config, seed) pairs produce byte-identical data files regardless of the
worker count.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-suite failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import math
import os
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, calibration, gpe, multimode
from .config import (EXPERIMENT_KINDS, ExperimentConfig,
                     read_config_file, resolve_config)
from .dicke import build_hamiltonian, css_state, evolve_series, q_function
from .dicke import spin_moments_exact
from .errors import ConfigError, SimulationError, SqueezingUndefinedError
from .observables import metrology_record, spin_moments_from_fields
from .observables import spin_moments_from_two_mode_series
from .params import derive_couplings
from .two_mode import evolve_two_mode, sample_initial_two_mode

METROLOGY_COLUMNS = (
    "t", "jx", "jy", "jz", "var_jx", "var_jy", "var_jz", "cov_yz",
    "xi", "theta_min", "qfi", "theta_max", "n_mean",
    "se_jx", "se_jy", "se_jz", "se_var_jx", "se_var_jy", "se_var_jz",
    "se_cov_yz", "se_xi", "se_qfi",
)
_SE_COLUMN = {"jx": "se_jx", "jy": "se_jy", "jz": "se_jz",
              "var_jx": "se_var_jx", "var_jy": "se_var_jy",
              "var_jz": "se_var_jz", "cov_yz": "se_cov_yz",
              "xi": "se_xi", "qfi": "se_qfi"}


@dataclass
class RunManifest:
    """Execution record written next to the data files."""

    config_hash: str
    code_version: str
    kind: str
    started_at: str
    finished_at: str = ""
    outputs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def add_file(self, path: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.outputs.append({"path": path.name, "sha256": digest})

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        payload = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "kind": self.kind,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "outputs": self.outputs,
            "warnings": self.warnings,
            "config": self.config,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_table(path: Path, columns, rows, metadata) -> None:
    """Comma-separated table with '#'-prefixed metadata header lines."""
    lines = [f"# {key}: {value}" for key, value in metadata.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_table(path) -> dict:
    """Load a harness table back into {column: array}."""
    names = None
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if names is None:
            names = line.split(",")
            continue
        rows.append([float(v) for v in line.split(",")])
    if names is None or not rows:
        raise ValueError(f"{path} does not look like a harness table")
    data = np.asarray(rows)
    if data.shape[1] != len(names):
        raise ValueError(f"{path} has ragged rows")
    return {name: data[:, i] for i, name in enumerate(names)}


def _metrology_rows(moments):
    rows = []
    for m in moments:
        try:
            rec = metrology_record(m)
            xi, th_min, se_xi = rec.xi, rec.theta_min, rec.se_xi
            f_q, th_max, se_q = rec.qfi, rec.theta_max, rec.se_qfi
        except SqueezingUndefinedError:
            from .observables import qfi as qfi_only
            f_q, th_max = qfi_only(m)
            xi = th_min = se_xi = math.nan
            se_q = 4.0 * m.se_cov[1, 1]
        rows.append([
            m.time, m.mean_j[0], m.mean_j[1], m.mean_j[2],
            m.cov_j[0, 0], m.cov_j[1, 1], m.cov_j[2, 2], m.cov_j[1, 2],
            xi, th_min, f_q, th_max, m.n_mean,
            m.se_mean[0], m.se_mean[1], m.se_mean[2],
            m.se_cov[0, 0], m.se_cov[1, 1], m.se_cov[2, 2], m.se_cov[1, 2],
            se_xi, se_q,
        ])
    return rows


def write_metrology(path: Path, moments, metadata) -> None:
    meta = {"columns in SI units; t in s; spin moments dimensionless": "",
            **metadata}
    write_table(path, METROLOGY_COLUMNS, _metrology_rows(moments), meta)


def compare_runs(series_a: dict, series_b: dict, metric: str) -> dict:
    """Deviation report between two metrology tables on common times.

    Linearly interpolates both series onto the overlap of their time
    ranges and reports the maximum and RMS deviation in units of the
    combined standard error.
    """
    if metric not in _SE_COLUMN:
        raise ValueError(f"unsupported metric {metric!r}")
    se_col = _SE_COLUMN[metric]
    for name, series in (("a", series_a), ("b", series_b)):
        for col in ("t", metric, se_col):
            if col not in series:
                raise ValueError(f"series {name} lacks column {col!r}")
    lo = max(series_a["t"][0], series_b["t"][0])
    hi = min(series_a["t"][-1], series_b["t"][-1])
    if hi <= lo:
        raise ValueError("the two series have disjoint time ranges")
    times = np.linspace(lo, hi, 200)

    def interp(series, col):
        return np.interp(times, series["t"], series[col])

    va, vb = interp(series_a, metric), interp(series_b, metric)
    se = np.sqrt(interp(series_a, se_col) ** 2 + interp(series_b, se_col) ** 2)
    dev = np.abs(va - vb)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev == 0, 0.0, np.inf))
    return {"metric": metric, "t_lo": float(lo), "t_hi": float(hi),
            "n_points": int(times.size),
            "max_dev_se": float(np.max(z)),
            "rms_dev_se": float(np.sqrt(np.mean(z**2))),
            "max_dev_abs": float(np.max(dev))}


def _resolve_grid(config: ExperimentConfig, params, couplings):
    g = config["grid"]
    if g["extent"] is None:
        base = gpe.default_grid(config["n_atoms"], couplings.u1d_aa, params,
                                n_points=g["n_points"])
        return base
    return gpe.SpatialGrid(n_points=g["n_points"], extent=g["extent"])


def _chi_reference(config: ExperimentConfig, params, case, couplings):
    """Explicit chi from the config, else the density-overlap estimate."""
    if config.get("chi") is not None:
        return float(config["chi"]), None
    grid = _resolve_grid(config, params, couplings) if "grid" in config.raw \
        else gpe.default_grid(config["n_atoms"], couplings.u1d_aa, params)
    ground = gpe.ground_state(grid, config["n_atoms"], couplings.u1d_aa, params)
    mode = ground / math.sqrt(config["n_atoms"])
    with_modes = derive_couplings(case, params, mode_a=mode, dx=grid.spacing)
    return float(with_modes.chi), with_modes


def _resolve_times(config: ExperimentConfig, chi: float | None) -> np.ndarray:
    tg = config["t_grid"]
    if tg.get("times") is not None:
        return np.asarray(tg["times"], dtype=float)
    n_times = int(tg["n_times"])
    if tg.get("chi_t_final") is not None:
        if not chi or chi <= 0:
            raise ConfigError("'chi_t_final' needs a positive chi")
        t_final = tg["chi_t_final"] / chi
    else:
        t_final = float(tg["t_final"])
    return np.linspace(t_final / n_times, t_final, n_times)


def _split_angle(config: ExperimentConfig, case):
    policy = config["split"]
    return multimode.SplitPolicy(kind=policy["policy"],
                                 angle=policy["angle"]).resolve(case)


def _omega_policy(config: ExperimentConfig) -> multimode.OmegaPolicy:
    o = config["omega"]
    return multimode.OmegaPolicy(kind=o["policy"], fraction=o["fraction"],
                                 value=o["value"], chi=o["chi"])


def _omega_r_policy(config: ExperimentConfig) -> multimode.OmegaRPolicy:
    o = config["omega_r"]
    return multimode.OmegaRPolicy(kind=o["policy"], value=o["value"])


def _tw_config(config: ExperimentConfig, params, case, grid,
               times) -> multimode.TwEnsembleConfig:
    return multimode.TwEnsembleConfig(
        case=case, n_atoms=config["n_atoms"], n_traj=config["n_traj"],
        grid=grid, t_grid=times, seed=config["seed"], params=params,
        omega=_omega_policy(config) if "omega" in config.raw
        else multimode.OmegaPolicy(),
        omega_r=_omega_r_policy(config) if "omega_r" in config.raw
        else multimode.OmegaRPolicy(),
        split=multimode.SplitPolicy(kind=config["split"]["policy"],
                                    angle=config["split"]["angle"]),
        correction_mode=config.get("correction_mode", "paper"),
        dt=config.get("dt"), label=config.get("label", ""))


def _overlap_rows(acc: multimode.EnsembleAccumulators):
    eta = acc.mean_overlap_eta()
    rows = []
    for k, t in enumerate(acc.times):
        rows.append([t, eta[k],
                     float(acc.norm_a[k].mean()), float(acc.norm_b[k].mean())])
    return rows


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1,
                   quiet: bool = False) -> RunManifest:
    """Dispatch one experiment and write its outputs plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config_hash=config.hash(), code_version=__version__, kind=config.kind,
        started_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        config=config.raw)
    meta = {"config_hash": config.hash(), "kind": config.kind,
            "code_version": __version__}

    def say(msg):
        if not quiet:
            print(msg)

    params = config.physical_params()
    case = config.scattering_case()
    couplings = derive_couplings(case, params)
    kind = config.kind

    if kind == "ground_state":
        grid = _resolve_grid(config, params, couplings)
        ground = gpe.ground_state(grid, config["n_atoms"], couplings.u1d_aa,
                                  params)
        path = out_dir / "ground_state.csv"
        rows = [[x, d, p] for x, d, p in zip(grid.x, ground**2, ground)]
        write_table(path, ("x", "density", "psi"),
                    rows, {**meta, "x in m; density in 1/m": ""})
        manifest.add_file(path)
        fields = gpe.FieldPair(grid, ground.astype(complex),
                               np.zeros_like(ground, dtype=complex))
        energy = gpe.energy_total(fields, couplings, 0.0, params)
        report = {"energy_per_atom_J": energy / config["n_atoms"],
                  "extent_m": grid.extent, "n_points": grid.n_points}
        rpath = out_dir / "ground_state.json"
        rpath.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        manifest.add_file(rpath)

    elif kind in ("single_mode_exact", "single_mode_tw"):
        chi, _ = _chi_reference(config, params, case, couplings)
        times = _resolve_times(config, chi)
        angle = _split_angle(config, case)
        omega = _omega_policy(config).resolve(config["n_atoms"], chi)
        say(f"{kind}: chi = {chi:.6g} rad/s, omega = {omega:.6g} rad/s")
        if kind == "single_mode_exact":
            n = int(config["n_atoms"])
            h = build_hamiltonian(chi, config["chi_minus"], omega, n)
            psi0 = css_state(n, angle, 0.0)
            moments = [dataclasses.replace(spin_moments_exact(s), time=float(t))
                       for t, s in zip(times, evolve_series(psi0, h, times))]
        else:
            ens = sample_initial_two_mode(int(config["n_atoms"]),
                                          config["n_traj"], config["seed"],
                                          mixing_angle=angle)
            series = evolve_two_mode(ens, chi, omega, times,
                                     dt=config.get("dt"))
            moments = spin_moments_from_two_mode_series(series)
        path = out_dir / "metrology.csv"
        write_metrology(path, moments, {**meta, "chi_rad_per_s": chi,
                                        "omega_rad_per_s": omega})
        manifest.add_file(path)

    elif kind == "gpe":
        grid = _resolve_grid(config, params, couplings)
        ground = gpe.ground_state(grid, config["n_atoms"], couplings.u1d_aa,
                                  params)
        angle = _split_angle(config, case)
        fields = gpe.beamsplitter_pair(
            gpe.FieldPair(grid, ground.astype(complex),
                          np.zeros_like(ground, dtype=complex)), angle)
        times = _resolve_times(config, None)
        omega_r_policy = _omega_r_policy(config)
        if omega_r_policy.kind == "auto":
            omega_r = multimode.calibrate_omega_r(ground, grid, params,
                                                  couplings, angle,
                                                  dt=config.get("dt"))
        elif omega_r_policy.kind == "explicit":
            omega_r = omega_r_policy.value
        else:
            omega_r = 0.0
        chi_est = None
        omega_pol = _omega_policy(config)
        if omega_pol.kind in ("tnt", "fraction") and omega_pol.chi is None:
            chi_est, _ = _chi_reference(config, params, case, couplings)
        omega = omega_pol.resolve(config["n_atoms"], chi_est or 0.0)
        series = gpe.evolve_gpe(fields, couplings, omega, omega_r,
                                config.get("dt"), times, params)
        widths = []
        for k, t in enumerate(times):
            pair = series.at(k)
            dpath = out_dir / f"density_{k:04d}.csv"
            rows = [[x, na, nb] for x, na, nb in zip(
                grid.x, np.abs(pair.psi_a) ** 2, np.abs(pair.psi_b) ** 2)]
            write_table(dpath, ("x", "density_a", "density_b"),
                        rows, {**meta, "t_s": t})
            manifest.add_file(dpath)
            widths.append([t, gpe.density_overlap(pair),
                           gpe.rms_width(pair.psi_a, grid),
                           gpe.rms_width(pair.psi_b, grid)])
        opath = out_dir / "overlap.csv"
        write_table(opath, ("t", "eta", "width_a", "width_b"), widths, meta)
        manifest.add_file(opath)

    elif kind in ("multimode_tw", "calibrate_chi"):
        grid = _resolve_grid(config, params, couplings)
        times = _resolve_times(config, None)
        tw_config = _tw_config(config, params, case, grid, times)
        if kind == "calibrate_chi":
            tw_config = dataclasses.replace(tw_config,
                                            omega=multimode.OmegaPolicy())
        acc = multimode.run_ensemble(tw_config, workers=threads)
        manifest.warnings.extend(acc.warnings)
        acc.config_hash = config.hash()
        apath = out_dir / "accumulators.bin"
        multimode.save_accumulators(acc, apath)
        manifest.add_file(apath)
        moments = spin_moments_from_fields(acc)
        mpath = out_dir / "metrology.csv"
        write_metrology(mpath, moments, {
            **meta, "chi_estimate_rad_per_s": acc.chi_estimate,
            "omega_rad_per_s": acc.omega, "omega_r_rad_per_s": acc.omega_r,
            "split_angle_rad": acc.split_angle})
        manifest.add_file(mpath)
        opath = out_dir / "overlap.csv"
        write_table(opath, ("t", "eta", "norm_a", "norm_b"),
                    _overlap_rows(acc), meta)
        manifest.add_file(opath)
        if kind == "calibrate_chi":
            tilt = acc.split_angle
            window = config.get("fit_window")
            ratio = acc.chi_minus_estimate / acc.chi_estimate \
                if acc.chi_estimate else 0.0
            fit = calibration.fit_chi(
                moments, config["n_atoms"],
                window=tuple(window) if window else None,
                chi_estimate=acc.chi_estimate, tilt_theta=tilt,
                chi_minus_ratio=ratio, reference=config.hash()[:16])
            say(f"fitted chi = {fit.chi_hat:.6g} rad/s "
                f"(density estimate {acc.chi_estimate:.6g})")
            fpath = out_dir / "chi_fit.json"
            fpath.write_text(json.dumps({
                "chi_hat_rad_per_s": fit.chi_hat,
                "fit_residual": fit.fit_residual,
                "time_window_s": list(fit.time_window),
                "chi_density_estimate_rad_per_s": acc.chi_estimate,
                "reference": fit.reference}, indent=2, sort_keys=True) + "\n")
            manifest.add_file(fpath)

    elif kind == "scan_omega":
        grid = _resolve_grid(config, params, couplings)
        times = _resolve_times(config, None)
        base = _tw_config(config, params, case, grid, times)
        chi_hat = config.get("chi")
        if chi_hat is None:
            raise ConfigError(
                "scan_omega requires 'chi' (run calibrate_chi first)")
        result = calibration.scan_omega(base, config["fractions"], chi_hat,
                                        workers=threads)
        say(f"best fraction: {result.best_fraction}")
        spath = out_dir / "scan.json"
        spath.write_text(json.dumps({
            "fractions": list(result.fractions),
            "peak_variance": list(result.peak_variance),
            "peak_se": list(result.peak_se),
            "best_fraction": result.best_fraction,
            "chi_hat_rad_per_s": chi_hat}, indent=2, sort_keys=True) + "\n")
        manifest.add_file(spath)
        rows = [[f, v, s] for f, v, s in zip(result.fractions,
                                             result.peak_variance,
                                             result.peak_se)]
        tpath = out_dir / "scan.csv"
        write_table(tpath, ("fraction", "peak_variance", "peak_se"), rows, meta)
        manifest.add_file(tpath)

    elif kind == "q_function":
        n = int(config["n_atoms"])
        chi = float(config["chi"])
        omega = 0.0 if config["hamiltonian"] == "oat" else chi * n / 2.0
        h = build_hamiltonian(chi, 0.0, omega, n)
        angle = _split_angle(config, case)
        psi0 = css_state(n, angle, 0.0)
        thetas = np.linspace(0.0, math.pi, int(config["theta_points"]))
        phis = np.linspace(-math.pi, math.pi, int(config["phi_points"]),
                           endpoint=False)
        chi_ts = config["chi_t"]
        states = evolve_series(psi0, h, [ct / chi for ct in chi_ts])
        for ct, state in zip(chi_ts, states):
            q = q_function(state, thetas, phis)
            rows = []
            for i, th in enumerate(thetas):
                for j, ph in enumerate(phis):
                    rows.append([th, ph, q[i, j]])
            qpath = out_dir / f"qfunction_chit_{ct:g}.csv"
            write_table(qpath, ("theta", "phi", "q"), rows,
                        {**meta, "chi_t": ct,
                         "hamiltonian": config["hamiltonian"]})
            manifest.add_file(qpath)

    else:  # pragma: no cover - guarded by config validation
        raise ConfigError(f"unhandled kind {kind!r}")

    manifest.finished_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
    mpath = manifest.write(out_dir)
    say(f"wrote {len(manifest.outputs)} files to {out_dir} "
        f"(manifest {mpath.name})")
    return manifest


def _resolve_threads(arg_value) -> int:
    if arg_value is not None:
        return max(int(arg_value), 1)
    env = os.environ.get("TNT_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="twistturn",
        description="Twisting and twist-and-turn entanglement generation in "
                    "two-component condensates")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_parser(kind):
        p = sub.add_parser(kind.replace("_", "-"),
                           help=f"run a {kind} experiment")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON experiment file (defaults apply if omitted)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides config out_dir)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trajectories", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--quiet", action="store_true")
        p.set_defaults(kind=kind)
        return p

    for kind in EXPERIMENT_KINDS:
        add_run_parser(kind)

    pc = sub.add_parser("compare", help="compare two metrology tables")
    pc.add_argument("series_a", type=Path)
    pc.add_argument("series_b", type=Path)
    pc.add_argument("--metric", default="var_jy",
                    choices=sorted(_SE_COLUMN))
    pc.add_argument("--quiet", action="store_true")

    pv = sub.add_parser("verify", help="run the acceptance test suite")
    pv.add_argument("--tests", type=Path, default=Path("tests"))
    pv.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)

    try:
        if args.command == "compare":
            report = compare_runs(read_table(args.series_a),
                                  read_table(args.series_b), args.metric)
            print(json.dumps(report, indent=2, sort_keys=True))
            return 0
        if args.command == "verify":
            target = args.tests / "test_acceptance.py"
            if not target.exists():
                print(f"acceptance suite not found at {target}", file=sys.stderr)
                return 2
            cmd = [sys.executable, "-m", "pytest", str(target), "-v", "-s"]
            if args.quiet:
                cmd = [sys.executable, "-m", "pytest", str(target), "-q"]
            result = subprocess.run(cmd)
            return 0 if result.returncode == 0 else 4

        raw = read_config_file(args.config) if args.config else {}
        raw["kind"] = args.kind
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.trajectories is not None:
            raw["n_traj"] = args.trajectories
        config = resolve_config(raw)
        out_dir = args.out if args.out is not None else Path(config["out_dir"])
        run_experiment(config, out_dir, threads=_resolve_threads(args.threads),
                       quiet=args.quiet)
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (SimulationError, ValueError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
