"""Multimode truncated-Wigner ensemble of the two-component condensate.

Trajectories start from the single-component ground state plus half a
quantum of complex Gaussian vacuum noise per grid mode and component, get
the beamsplitter pulse, and evolve through the stochastic-field drift
(the mean-field equations with the half-quantum density subtractions).
Averages over trajectories estimate symmetrically ordered operator
moments; see `observables` for the conversion constants.

Trajectories are integrated in fixed-size blocks with one counter-based
RNG stream per trajectory, so accumulated results are bit-identical for
any worker count.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gpe
from .errors import ConfigError, IntegrationError
from .params import (PhysicalParams, ScatteringCase, breathe_together_ratio,
                     derive_couplings)
from .two_mode import DEFAULT_SPLIT_PHASE, _trajectory_noise

BLOCK_SIZE = 64  # trajectories integrated together; fixed so that batching
#                  (and therefore every FFT) is independent of worker count
TW_OCCUPANCY_FLOOR = 10.0  # warn when atoms per grid mode drop below this

# density-subtraction quanta (self, cross) per correction mode
CORRECTION_MODES = {
    "paper": (1.0, 1.0),
    "weyl": (1.0, 0.5),
    "none": (0.0, 0.0),
}

ACCUM_MAGIC = b"TWISTTURN-ACCUM1"
ACCUM_VERSION = 1


@dataclass(frozen=True)
class OmegaPolicy:
    """How the Rabi rotation rate is chosen before a run starts.

    kind:
      zero      -> Omega = 0 (pure twisting)
      tnt       -> Omega = chi N / 2
      fraction  -> Omega = fraction * chi N / 2
      explicit  -> Omega = value (rad/s)
    `chi` feeds the tnt/fraction kinds; when None the run falls back to
    the density-overlap estimate computed from the ground state.
    """

    kind: str = "zero"
    fraction: float = 1.0
    value: float = 0.0
    chi: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "tnt", "fraction", "explicit"):
            raise ConfigError(f"unknown omega policy kind {self.kind!r}")

    def resolve(self, n_atoms: float, chi_estimate: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "explicit":
            return self.value
        chi = self.chi if self.chi is not None else chi_estimate
        base = chi * n_atoms / 2.0
        return base if self.kind == "tnt" else self.fraction * base


@dataclass(frozen=True)
class OmegaRPolicy:
    """off | auto (fit the mean-field relative-phase drift) | explicit."""

    kind: str = "off"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("off", "auto", "explicit"):
            raise ConfigError(f"unknown omega_r policy kind {self.kind!r}")


@dataclass(frozen=True)
class SplitPolicy:
    """symmetric (pi/2) | breathe_together (from the case) | explicit angle."""

    kind: str = "symmetric"
    angle: float = math.pi / 2.0

    def __post_init__(self):
        if self.kind not in ("symmetric", "breathe_together", "explicit"):
            raise ConfigError(f"unknown split policy kind {self.kind!r}")

    def resolve(self, case: ScatteringCase) -> float:
        if self.kind == "symmetric":
            return math.pi / 2.0
        if self.kind == "explicit":
            return self.angle
        ratio = breathe_together_ratio(case)
        if ratio is None:
            raise ConfigError(
                "no breathe-together split exists for this scattering case")
        # population fraction in a is cos^2(angle/2) = ratio / (1 + ratio)
        return 2.0 * math.acos(math.sqrt(ratio / (1.0 + ratio)))


@dataclass(frozen=True)
class TwEnsembleConfig:
    """Everything a multimode run needs, resolvable before it starts."""

    case: ScatteringCase
    n_atoms: float
    n_traj: int
    grid: gpe.SpatialGrid
    t_grid: np.ndarray
    seed: int
    params: PhysicalParams = field(default_factory=PhysicalParams)
    omega: OmegaPolicy = field(default_factory=OmegaPolicy)
    omega_r: OmegaRPolicy = field(default_factory=OmegaRPolicy)
    split: SplitPolicy = field(default_factory=SplitPolicy)
    correction_mode: str = "paper"
    dt: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.n_traj < 2:
            raise ConfigError("n_traj must be at least 2")
        if self.correction_mode not in CORRECTION_MODES:
            raise ConfigError(f"unknown correction mode {self.correction_mode!r}")
        object.__setattr__(self, "t_grid",
                           np.asarray(self.t_grid, dtype=float))


@dataclass
class EnsembleAccumulators:
    """Per-trajectory spin symbols and populations at every output time.

    Everything downstream (moments, standard errors, overlap diagnostics)
    is recomputable from this record without re-running trajectories.
    """

    times: np.ndarray  # (T,)
    j_x: np.ndarray  # (T, n_traj)
    j_y: np.ndarray
    j_z: np.ndarray
    n_tot: np.ndarray
    overlap: np.ndarray  # (T, n_traj) complex, integral psi_a* psi_b dx
    norm_a: np.ndarray
    norm_b: np.ndarray
    n_points: int
    dx: float
    n_atoms: float
    seed: int
    omega: float
    omega_r: float
    split_angle: float
    correction_mode: str
    chi_estimate: float
    chi_minus_estimate: float
    failed_trajectories: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config_hash: str = ""

    @property
    def n_traj(self) -> int:
        return self.j_x.shape[1]

    def mean_overlap_eta(self) -> np.ndarray:
        """Ensemble mean of |int psi_a* psi_b| / sqrt(N_a N_b) vs time."""
        eta = np.abs(self.overlap) / np.sqrt(self.norm_a * self.norm_b)
        return eta.mean(axis=1)


def sample_wigner_initial(ground: np.ndarray, grid: gpe.SpatialGrid,
                          n_traj: int, seed: int,
                          traj_offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Vacuum-noise samples around the ground state, one stream per trajectory.

    psi_a = Psi_0 + eta_a and psi_b = eta_b with independent complex
    Gaussian noise of variance 1/(2 dx) per point, component and
    trajectory; quadratures each carry variance 1/(4 dx). `traj_offset`
    shifts the stream indices so a block can draw its own slice.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    m = grid.n_points
    if ground.shape != (m,):
        raise ValueError("ground-state profile does not match the grid")
    std = math.sqrt(0.25 / grid.spacing)
    psi_a = np.empty((n_traj, m), dtype=np.complex128)
    psi_b = np.empty((n_traj, m), dtype=np.complex128)
    for k in range(n_traj):
        z = _trajectory_noise(seed, traj_offset + k, 4 * m) * std
        psi_a[k] = ground + z[0:m] + 1j * z[m:2 * m]
        psi_b[k] = z[2 * m:3 * m] + 1j * z[3 * m:4 * m]
    return psi_a, psi_b


def beamsplitter_fields(pair, mixing_angle: float,
                        phase: float = DEFAULT_SPLIT_PHASE):
    """Pointwise 2x2 mixing of a FieldPair or a batched (B, M) array pair."""
    if isinstance(pair, gpe.FieldPair):
        return gpe.beamsplitter_pair(pair, mixing_angle, phase)
    psi_a, psi_b = pair
    c = math.cos(mixing_angle / 2.0)
    s = math.sin(mixing_angle / 2.0)
    ph = complex(math.cos(phase), math.sin(phase))
    return (c * psi_a + ph * s * psi_b,
            -np.conj(ph) * s * psi_a + c * psi_b)


def evolve_tw(fields: gpe.FieldPair, couplings, omega: float, omega_r: float,
              t_grid, params: PhysicalParams, dt: float | None = None,
              correction_mode: str = "paper") -> gpe.FieldSeries:
    """Single stochastic trajectory through the subtracted-density drift.

    With correction_mode="none" the subtractions vanish and this is
    exactly the mean-field propagator (useful as a diagnostic limit).
    """
    sub_self, sub_cross = CORRECTION_MODES[correction_mode]
    if dt is None:
        dt = gpe.default_time_step(fields.grid, params)
    out_a, out_b = gpe.split_step_evolve(
        fields.psi_a, fields.psi_b, fields.grid, params, couplings,
        omega, omega_r, dt, t_grid,
        subtract_self=sub_self, subtract_cross=sub_cross,
        t_start=fields.time)
    return gpe.FieldSeries(grid=fields.grid, times=np.asarray(t_grid, float),
                           psi_a=out_a, psi_b=out_b)


def _block_symbols(psi_a, psi_b, dx):
    ov = np.sum(np.conj(psi_a) * psi_b, axis=-1) * dx
    na = np.sum(psi_a.real**2 + psi_a.imag**2, axis=-1) * dx
    nb = np.sum(psi_b.real**2 + psi_b.imag**2, axis=-1) * dx
    return ov, na, nb


def _run_block(task):
    """Integrate one fixed block of trajectories; top level for pickling."""
    (block_start, block_size, ground, grid, params, couplings, omega,
     omega_r, dt, t_grid, split_angle, seed, sub_self, sub_cross) = task
    psi_a, psi_b = sample_wigner_initial(ground, grid, block_size, seed,
                                         traj_offset=block_start)
    psi_a, psi_b = beamsplitter_fields((psi_a, psi_b), split_angle)
    n_out = len(t_grid)
    ov = np.empty((n_out, block_size), dtype=np.complex128)
    na = np.empty((n_out, block_size))
    nb = np.empty((n_out, block_size))

    def record(k, pa, pb):
        ov[k], na[k], nb[k] = _block_symbols(pa, pb, grid.spacing)

    gpe.split_step_evolve(psi_a, psi_b, grid, params, couplings, omega,
                          omega_r, dt, t_grid, subtract_self=sub_self,
                          subtract_cross=sub_cross, record=record)
    return block_start, ov, na, nb


def calibrate_omega_r(ground: np.ndarray, grid: gpe.SpatialGrid,
                      params: PhysicalParams, couplings, split_angle: float,
                      dt: float | None = None, t_span: float = 20e-3,
                      n_samples: int = 80) -> float:
    """Fit the linear drift rate of the mean-field relative phase.

    Runs the noiseless pair with Omega = 0 and returns the least-squares
    slope of unwrap(arg integral psi_a* psi_b dx); feeding this back as
    omega_r cancels the drift.
    """
    fields = gpe.beamsplitter_pair(
        gpe.FieldPair(grid, ground.astype(complex),
                      np.zeros_like(ground, dtype=complex)), split_angle)
    ts = np.linspace(t_span / n_samples, t_span, n_samples)
    series = gpe.evolve_gpe(fields, couplings, 0.0, 0.0, dt, ts, params)
    ov = np.sum(np.conj(series.psi_a) * series.psi_b, axis=1) * grid.spacing
    phase = np.unwrap(np.angle(ov))
    ts_c = ts - ts.mean()
    return float(np.sum(ts_c * (phase - phase.mean())) / np.sum(ts_c**2))


def run_ensemble(config: TwEnsembleConfig, workers: int = 1) -> EnsembleAccumulators:
    """Integrate the full ensemble and accumulate per-trajectory symbols.

    Deterministic for fixed (config, seed): trajectories are sampled from
    per-index Philox streams and integrated in fixed blocks of
    BLOCK_SIZE, so the result is byte-identical for any `workers`.
    Aborts when more than 1% of trajectories leave the finite range
    (silently dropping more would bias the moments).
    """
    params = config.params
    run_warnings = []
    if config.n_traj < 100:
        run_warnings.append(
            f"n_traj = {config.n_traj} is below the recommended 100 for "
            "production statistics")
    if config.n_atoms / config.grid.n_points < TW_OCCUPANCY_FLOOR:
        msg = (f"TW validity heuristic: N/n_points = "
               f"{config.n_atoms / config.grid.n_points:.1f} < "
               f"{TW_OCCUPANCY_FLOOR:g} atoms per mode")
        warnings.warn(msg, stacklevel=2)
        run_warnings.append(msg)

    couplings = derive_couplings(config.case, params)
    ground = gpe.ground_state(config.grid, config.n_atoms, couplings.u1d_aa,
                              params)
    mode = ground / math.sqrt(config.n_atoms)
    with_modes = derive_couplings(config.case, params, mode_a=mode,
                                  dx=config.grid.spacing)
    chi_estimate = with_modes.chi
    split_angle = config.split.resolve(config.case)
    omega = config.omega.resolve(config.n_atoms, chi_estimate)
    if config.omega_r.kind == "off":
        omega_r = 0.0
    elif config.omega_r.kind == "explicit":
        omega_r = config.omega_r.value
    else:
        omega_r = calibrate_omega_r(ground, config.grid, params, couplings,
                                    split_angle, dt=config.dt)
    dt = config.dt if config.dt is not None else gpe.default_time_step(
        config.grid, params)
    sub_self, sub_cross = CORRECTION_MODES[config.correction_mode]

    tasks = []
    start = 0
    while start < config.n_traj:
        size = min(BLOCK_SIZE, config.n_traj - start)
        tasks.append((start, size, ground, config.grid, params, couplings,
                      omega, omega_r, dt, config.t_grid, split_angle,
                      config.seed, sub_self, sub_cross))
        start += size

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, tasks))
    else:
        results = [_run_block(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    n_out = len(config.t_grid)
    ov = np.concatenate([r[1] for r in results], axis=1)
    na = np.concatenate([r[2] for r in results], axis=1)
    nb = np.concatenate([r[3] for r in results], axis=1)
    assert ov.shape == (n_out, config.n_traj)

    finite = np.isfinite(ov) & np.isfinite(na) & np.isfinite(nb)
    failed = np.nonzero(~finite.all(axis=0))[0].tolist()
    if failed:
        if len(failed) > 0.01 * config.n_traj:
            raise IntegrationError(
                f"{len(failed)} of {config.n_traj} trajectories diverged",
                trajectory_indices=failed)
        run_warnings.append(
            f"dropped {len(failed)} diverged trajectories: {failed}")
        keep = np.setdiff1d(np.arange(config.n_traj), failed)
        ov, na, nb = ov[:, keep], na[:, keep], nb[:, keep]

    return EnsembleAccumulators(
        times=config.t_grid.copy(),
        j_x=np.ascontiguousarray(ov.real),
        j_y=np.ascontiguousarray(-ov.imag),
        j_z=0.5 * (na - nb),
        n_tot=na + nb,
        overlap=ov,
        norm_a=na,
        norm_b=nb,
        n_points=config.grid.n_points,
        dx=config.grid.spacing,
        n_atoms=config.n_atoms,
        seed=config.seed,
        omega=omega,
        omega_r=omega_r,
        split_angle=split_angle,
        correction_mode=config.correction_mode,
        chi_estimate=chi_estimate,
        chi_minus_estimate=with_modes.chi_minus,
        failed_trajectories=failed,
        warnings=run_warnings,
    )


_ARRAY_FIELDS = ("times", "j_x", "j_y", "j_z", "n_tot", "overlap",
                 "norm_a", "norm_b")
_SCALAR_FIELDS = ("n_points", "dx", "n_atoms", "seed", "omega", "omega_r",
                  "split_angle", "correction_mode", "chi_estimate",
                  "chi_minus_estimate", "failed_trajectories", "warnings",
                  "config_hash")


def save_accumulators(acc: EnsembleAccumulators, path) -> None:
    """Versioned binary dump: 16-byte magic, version, config hash, arrays."""
    header = {name: getattr(acc, name) for name in _SCALAR_FIELDS}
    header["arrays"] = [
        {"name": name,
         "shape": list(getattr(acc, name).shape),
         "dtype": str(getattr(acc, name).dtype)}
        for name in _ARRAY_FIELDS
    ]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(ACCUM_MAGIC)
        fh.write(ACCUM_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in _ARRAY_FIELDS:
            fh.write(np.ascontiguousarray(getattr(acc, name)).tobytes())


def load_accumulators(path) -> EnsembleAccumulators:
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != ACCUM_MAGIC:
            raise ValueError(f"not an accumulator dump: bad magic {magic!r}")
        version = int.from_bytes(fh.read(4), "little")
        if version != ACCUM_VERSION:
            raise ValueError(f"unsupported accumulator version {version}")
        blob_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(blob_len).decode())
        arrays = {}
        for spec in header.pop("arrays"):
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            data = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arrays[spec["name"]] = data.reshape(spec["shape"]).copy()
    return EnsembleAccumulators(**arrays, **header)
