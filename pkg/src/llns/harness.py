"""Initial data, snapshot files, resumable sweeps, observables and ensemble distances."""
import csv
import hashlib
import json
import os
import shutil
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from llns import _philox
from llns.besov import decompose
from llns.config import ExperimentConfig, InitialMeasureSpec
from llns.integrator import AUDIT_TERMS, cutoff_exponent, make_params, run
from llns.noise import RngStream, keyed_normals
from llns.shell import ShellParams, ShellState, k41_state, ks_critical, re_independence_report, transition_ensemble
from llns.spectral import (
    SpectralField, TorusGrid, divergence_residual, energy, leray_project, project_cutoff, to_spectral,
)

MAGIC = b"LLNS"
FORMAT_VERSION = 1
NO_CUTOFF = 0xFFFFFFFF
_HEADER = struct.Struct("<4sIIIId")


# ---------------------------------------------------------------- initial data

def taylor_green(grid):
    x = grid.coordinates()
    if grid.d == 2:
        u = [np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])]
    else:
        u = [np.sin(x[0]) * np.cos(x[1]) * np.cos(x[2]), -np.cos(x[0]) * np.sin(x[1]) * np.cos(x[2]),
             np.zeros(grid.shape)]
    f = to_spectral(np.stack(u))
    # sampling leaves rounding noise in the mean and far modes
    coeffs = np.where(np.abs(f.coeffs) > 1e-14, f.coeffs, 0)
    return f.with_coeffs(coeffs, is_divergence_free=True, cutoff_m=1)


def synthetic_besov(grid, sigma, seed, target_energy, m=None, member=0):
    """Random-phase divergence-free field with |u(k)| ~ |k|^-(2 sigma + d)/2.

    Phases come from the keyed generator, so the field depends only on
    ``(seed, member)`` and the retained band.
    """
    m = grid.max_cutoff_exponent if m is None else m
    d = grid.d
    ks = grid.wavenumbers(True)
    k2 = grid.k2(True)
    amp = np.where(k2 > 0, np.maximum(k2, 1.0) ** (-(2 * sigma + d) / 4), 0.0)
    z = keyed_normals(ks, seed, member, 1, d, _philox.DOMAIN_INITIAL)
    z = np.moveaxis(z, -1, 0)
    z = z / np.maximum(np.sqrt(np.sum(np.abs(z) ** 2, axis=0)), 1e-300)
    f = SpectralField(grid, amp * z)
    f = leray_project(project_cutoff(f, m))
    e = energy(f)
    if e > 0 and target_energy > 0:
        f = f * float(np.sqrt(target_energy / e))
    elif target_energy == 0:
        f = f * 0.0
    return f.with_coeffs(f.coeffs, is_divergence_free=True, cutoff_m=m)


def sample_initial(spec, grid, m=None, member=0):
    """Zero-mean divergence-free initial field band-limited to 2^m (grid band by default)."""
    m = grid.max_cutoff_exponent if m is None else m
    if spec.kind == "synthetic_besov":
        return synthetic_besov(grid, spec.sigma, spec.seed, spec.energy, m, member)
    if spec.field == "zero":
        f = SpectralField(grid, np.zeros((grid.d,) + grid.spectral_shape(True), complex))
    elif spec.field == "taylor_green":
        f = taylor_green(grid)
    else:
        f, _ = read_snapshot(spec.path)
        if f.grid != grid:
            raise ValueError(f"snapshot {spec.path} lives on {f.grid}, expected {grid}")
    f = leray_project(project_cutoff(f, m))
    coeffs = f.coeffs.copy()
    coeffs[(slice(None),) + (0,) * grid.d] = 0
    return f.with_coeffs(coeffs)


# ---------------------------------------------------------------- snapshots

def _band_index(n, d):
    lead = np.concatenate([np.arange(n - n // 2 + 1, n), np.arange(0, n // 2)])
    return [lead] * (d - 1) + [np.arange(0, n // 2)]


def _checksum(data):
    return hashlib.blake2b(data, digest_size=8).digest()


def encode_snapshot(f, t):
    """Bytes of the snapshot format for a real field at time t."""
    if not f.real:
        raise ValueError("only real fields can be stored")
    g = f.grid
    n, d = g.n, g.d
    nyq = g.kinf(True) >= n // 2
    if np.any(f.coeffs[:, nyq]):
        raise ValueError("field has Nyquist content, which the snapshot band excludes")
    cut = NO_CUTOFF if f.cutoff_m is None else int(f.cutoff_m)
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, d, n, cut, float(t))
    band = f.coeffs[(slice(None),) + np.ix_(*_band_index(n, d))]
    body = np.ascontiguousarray(band, dtype="<c16").tobytes()
    payload = head + body
    return payload + _checksum(payload)


def decode_snapshot(data):
    if len(data) < _HEADER.size + 8:
        raise ValueError("snapshot is truncated")
    payload, check = data[:-8], data[-8:]
    if _checksum(payload) != check:
        raise ValueError("snapshot checksum mismatch")
    magic, version, d, n, cut, t = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise ValueError("not an LLNS snapshot")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    grid = TorusGrid(d, n)
    idx = _band_index(n, d)
    shape = (d,) + tuple(len(i) for i in idx)
    body = np.frombuffer(payload, dtype="<c16", offset=_HEADER.size)
    if body.size != int(np.prod(shape)):
        raise ValueError("snapshot body has the wrong length")
    coeffs = np.zeros((d,) + grid.spectral_shape(True), dtype=np.complex128)
    coeffs[(slice(None),) + np.ix_(*idx)] = body.reshape(shape)
    scale = float(np.max(np.abs(coeffs), initial=0.0))
    f = SpectralField(grid, coeffs, False, None if cut == NO_CUTOFF else cut, True)
    div_free = divergence_residual(f) <= 1e-12 * max(scale, 1e-300) * n
    return f.with_coeffs(coeffs, is_divergence_free=bool(div_free)), t


def write_snapshot(path, f, t):
    data = encode_snapshot(f, t)
    _atomic_write(Path(path), data)
    return hashlib.sha256(data).hexdigest()


def read_snapshot(path):
    return decode_snapshot(Path(path).read_bytes())


def _atomic_write(path, data):
    tmp = path.with_name(path.name + ".part")
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": ""}
    with open(tmp, mode, **kwargs) as fh:
        fh.write(data)
    os.replace(tmp, path)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- reports

def write_csv(path, header, rows):
    """UTF-8 comma-separated values with one header row; floats in repr form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- observables

def low_mode_tests(d, kmax=2):
    """(k, component) pairs for |k|_inf <= kmax, one of each +-k pair."""
    out = []
    for k in np.ndindex(*([2 * kmax + 1] * d)):
        kk = tuple(int(v) - kmax for v in k)
        nz = [v for v in kk if v]
        if nz and [v for v in reversed(kk) if v][0] > 0:
            out.extend((kk, i) for i in range(d))
    return out


def _mode_name(k, i):
    return "mode_" + "_".join(str(v) for v in k) + f"_c{i}"


def observable(traj, kind):
    """Time series ``(times, {column: values})`` of an observable kind.

    Kinds: 'energy', 'low_modes' (real and imaginary parts of <u, phi>
    for |k|_inf <= 2), 'corridor_energies' (energy in each corridor) and
    'mode:<k1>,<k2>[,<k3>]:<component>:<re|im|abs>'.
    """
    times = np.asarray(traj.times, dtype=float)
    snaps = traj.snapshots
    if kind == "energy":
        return times, {"energy": np.array([energy(u) for u in snaps])}
    if kind == "low_modes":
        cols = {}
        for k, i in low_mode_tests(snaps[0].d):
            vals = np.array([u.coefficient(k)[i] for u in snaps])
            cols[_mode_name(k, i) + "_re"] = vals.real
            cols[_mode_name(k, i) + "_im"] = vals.imag
        return times, cols
    if kind == "corridor_energies":
        blocks = [decompose(u).blocks for u in snaps]
        nb = max(len(b) for b in blocks)
        cols = {}
        for j in range(nb):
            cols[f"corridor_{j}"] = np.array([energy(b[j]) if j < len(b) else 0.0 for b in blocks])
        return times, cols
    if kind.startswith("mode:"):
        try:
            _, kstr, comp, part = kind.split(":")
            k = tuple(int(v) for v in kstr.split(","))
            comp = int(comp)
            fn = {"re": np.real, "im": np.imag, "abs": np.abs}[part]
        except (ValueError, KeyError) as exc:
            raise ValueError(f"malformed mode observable {kind!r}") from exc
        return times, {kind: fn(np.array([u.coefficient(k)[comp] for u in snaps]))}
    raise ValueError(f"unknown observable kind {kind!r}")


def _marginal(ens, obs, t):
    if isinstance(ens, np.ndarray) or (isinstance(ens, (list, tuple)) and ens and np.isscalar(ens[0])):
        return np.asarray(ens, dtype=float)
    vals = []
    for traj in ens:
        times, cols = observable(traj, obs)
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t}")
        vals.append(next(iter(cols.values()))[i])
    return np.asarray(vals)


def ensemble_distance(ens_a, ens_b, observable_kind=None, t=None, min_members=50):
    """Two-sample KS statistic between the observable's marginals at time t.

    Ensembles are lists of trajectories, or arrays of already extracted
    marginal samples (then ``observable_kind`` and ``t`` are ignored).
    """
    a = _marginal(ens_a, observable_kind, t)
    b = _marginal(ens_b, observable_kind, t)
    if a.size < min_members or b.size < min_members:
        raise ValueError(f"each ensemble needs at least {min_members} members")
    return float(ks_2samp(a, b).statistic)


# ---------------------------------------------------------------- manifest and sweeps

def params_hash(cfg):
    blob = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class EnsembleManifest:
    experiment_id: str
    nus: tuple
    cutoffs: tuple
    members: int
    seeds: tuple
    params_hash: str
    sample_every: int
    observables: tuple
    config: dict

    @classmethod
    def from_config(cls, cfg, seed=None):
        if seed is not None:
            cfg = _with_seed(cfg, seed)
        cutoffs = tuple(cutoff_exponent(nu, cfg.alpha) for nu in cfg.nus) if cfg.model == "pde" else ()
        return cls(cfg.experiment_id, tuple(cfg.nus), cutoffs, cfg.members,
                   tuple(range(cfg.members)), params_hash(cfg), cfg.sample_every,
                   tuple(cfg.observables), cfg.canonical())

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n"


def _with_seed(cfg, seed):
    from dataclasses import replace

    return replace(cfg, seed=int(seed))


def grid_for(cfg, m):
    n = cfg.n if cfg.n is not None else 2 ** (m + 1)
    return TorusGrid(cfg.d, n)


def params_for(cfg, nu):
    m = cutoff_exponent(nu, cfg.alpha)
    grid = grid_for(cfg, m)
    return make_params(nu, cfg.alpha, cfg.d, grid, cfg.dt, cfg.t_end, cfg.forcing.to_spec(),
                       cfg.theta, cfg.nonlinear, cfg.noise)


def simulate_member(cfg, nu, member):
    """One trajectory of the configured experiment."""
    p = params_for(cfg, nu)
    u0 = sample_initial(cfg.initial, p.grid, p.m, member)
    return run(u0, p, RngStream(int(cfg.seed), member), cfg.sample_every)


AUDIT_HEADER = ("step", "t", "energy") + AUDIT_TERMS + ("residual",)


def write_member(traj, cfg, out_dir):
    """Snapshots, audit and observable reports of one trajectory; returns the file inventory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for step, t, u in zip(traj.steps, traj.times, traj.snapshots):
        name = f"snap_{step:08d}.llns"
        files[name] = write_snapshot(out_dir / name, u, t)
    a = traj.audit
    e = a["energy"]
    r = np.diff(e) - sum(a[k] for k in AUDIT_TERMS)
    rows = ([n + 1, (n + 1) * traj.params.dt, e[n + 1]] + [a[k][n] for k in AUDIT_TERMS] + [r[n]]
            for n in range(len(r)))
    write_csv(out_dir / "audit.csv", AUDIT_HEADER, rows)
    files["audit.csv"] = file_sha256(out_dir / "audit.csv")
    cols = {}
    for kind in cfg.observables:
        times, c = observable(traj, kind)
        cols.update(c)
    header = ["t"] + list(cols)
    write_csv(out_dir / "observables.csv", header,
              ([t] + [cols[c][i] for c in cols] for i, t in enumerate(traj.times)))
    files["observables.csv"] = file_sha256(out_dir / "observables.csv")
    return files


def _member_job(args):
    cfg, nu_index, nu, member, root = args
    final = Path(root) / f"nu_{nu_index:02d}" / f"member_{member:04d}"
    work = final.with_name(final.name + ".tmp")
    if work.exists():
        shutil.rmtree(work)
    try:
        traj = simulate_member(cfg, nu, member)
        files = write_member(traj, cfg, work)
    except (FloatingPointError, ValueError) as exc:
        if work.exists():
            shutil.rmtree(work)
        final.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(final.with_name(final.name + ".failed"), f"{type(exc).__name__}: {exc}\n")
        return nu_index, member, None
    done = {"files": dict(sorted(files.items())), "nu": nu, "member": member}
    _atomic_write(work / "DONE.json", json.dumps(done, indent=2, sort_keys=True) + "\n")
    if final.exists():
        shutil.rmtree(final)
    os.replace(work, final)
    failed = final.with_name(final.name + ".failed")
    if failed.exists():
        failed.unlink()
    return nu_index, member, files


def member_complete(path):
    """True if the member directory holds a DONE record whose checksums all verify."""
    path = Path(path)
    done = path / "DONE.json"
    if not done.is_file():
        return False
    record = json.loads(done.read_text(encoding="utf-8"))
    return all((path / name).is_file() and file_sha256(path / name) == digest
               for name, digest in record["files"].items())


def run_sweep(cfg, out, resume=False, seed=None, workers=None):
    """Run every (nu, member) of a PDE experiment into ``out``.

    Completed members are skipped when resuming, so a finished sweep is left
    byte-for-byte unchanged. Returns the manifest.
    """
    if cfg.model != "pde":
        raise ValueError("run_sweep handles PDE experiments; use run_shell_sweep for the shell model")
    manifest = EnsembleManifest.from_config(cfg, seed)
    if seed is not None:
        cfg = _with_seed(cfg, seed)
    out = Path(out)
    mpath = out / "manifest.json"
    if mpath.exists():
        old = json.loads(mpath.read_text(encoding="utf-8"))
        if old.get("params_hash") != manifest.params_hash:
            raise FileExistsError(f"{out} holds a different experiment (params hash mismatch)")
        if not resume:
            raise FileExistsError(f"{out} already holds this experiment; resume to continue (--resume)")
    out.mkdir(parents=True, exist_ok=True)
    _write_if_changed(mpath, manifest.to_json())
    jobs = []
    for i, nu in enumerate(cfg.nus):
        for member in range(cfg.members):
            path = out / f"nu_{i:02d}" / f"member_{member:04d}"
            if not member_complete(path):
                jobs.append((cfg, i, nu, member, str(out)))
    workers = cfg.workers if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_member_job, jobs))
    else:
        results = [_member_job(j) for j in jobs]
    failures = [(i, m) for i, m, files in results if files is None]
    _write_inventory(out)
    if failures:
        raise RuntimeError(f"{len(failures)} member(s) failed; rerun with resume to retry: {failures}")
    return manifest


def _write_if_changed(path, text):
    if path.exists() and path.read_text(encoding="utf-8") == text:
        return
    _atomic_write(path, text)


def _write_inventory(out):
    inventory = {}
    for done in sorted(Path(out).glob("nu_*/member_*/DONE.json")):
        record = json.loads(done.read_text(encoding="utf-8"))
        rel = done.parent.relative_to(out).as_posix()
        for name, digest in record["files"].items():
            inventory[f"{rel}/{name}"] = digest
    _write_if_changed(Path(out) / "inventory.json", json.dumps(inventory, indent=2, sort_keys=True) + "\n")


def load_member(out, nu_index, member):
    """Snapshots of a stored member as ``(times, fields)``."""
    path = Path(out) / f"nu_{nu_index:02d}" / f"member_{member:04d}"
    times, fields = [], []
    for snap in sorted(path.glob("snap_*.llns")):
        f, t = read_snapshot(snap)
        times.append(t)
        fields.append(f)
    return times, fields


def verify_inventory(out):
    """Names of inventory files that are missing or fail their checksum."""
    out = Path(out)
    inventory = json.loads((out / "inventory.json").read_text(encoding="utf-8"))
    return sorted(name for name, digest in inventory.items()
                  if not (out / name).is_file() or file_sha256(out / name) != digest)


def tree_digest(out):
    """sha256 over every regular file (relative path and contents) under ``out``."""
    h = hashlib.sha256()
    out = Path(out)
    for path in sorted(p for p in out.rglob("*") if p.is_file()):
        h.update(path.relative_to(out).as_posix().encode())
        h.update(file_sha256(path).encode())
    return h.hexdigest()


# ---------------------------------------------------------------- shell sweeps

def shell_params_for(cfg, nu):
    sc = cfg.shell
    return ShellParams(N=sc.N, nu=nu, dt=sc.dt_for(nu), t_end=cfg.t_end, lam=sc.lam, k0=sc.k0,
                       forcing=sc.force_tuple(), nonlinear=cfg.nonlinear, noise=cfg.noise)


def shell_initial(cfg, p):
    """Keyed K41 phases on the first ``initial_shells`` shells, zero elsewhere."""
    u = np.zeros(p.N, dtype=np.complex128)
    k = cfg.shell.initial_shells
    u[:k] = k41_state(p, seed=cfg.initial.seed).u[:k]
    return ShellState(u)


SHELL_KS_HEADER = ("observable", "t", "nu_a", "nu_b", "ks", "critical", "trend")


def run_shell_sweep(cfg, out, resume=False, seed=None):
    """Shell-model ensembles over the viscosity ladder plus KS and variance reports."""
    if cfg.model != "shell":
        raise ValueError("run_shell_sweep needs model 'shell'")
    manifest = EnsembleManifest.from_config(cfg, seed)
    if seed is not None:
        cfg = _with_seed(cfg, seed)
    out = Path(out)
    mpath = out / "manifest.json"
    if mpath.exists():
        old = json.loads(mpath.read_text(encoding="utf-8"))
        if old.get("params_hash") != manifest.params_hash:
            raise FileExistsError(f"{out} holds a different experiment (params hash mismatch)")
        if not resume:
            raise FileExistsError(f"{out} already holds this experiment; resume to continue (--resume)")
    out.mkdir(parents=True, exist_ok=True)
    _write_if_changed(mpath, manifest.to_json())
    obs = list(cfg.shell.observables)
    t_sample = cfg.t_end if cfg.shell.t_sample is None else cfg.shell.t_sample
    marginals = {}
    for i, nu in enumerate(cfg.nus):
        mfile = out / f"shell_marginals_nu_{i:02d}.csv"
        if resume and mfile.exists():
            rows = read_csv(mfile)
            marginals[nu] = {o: np.array([float(r[o]) for r in rows]) for o in obs}
            continue
        p = shell_params_for(cfg, nu)
        every = max(1, int(round(cfg.sample_every * cfg.dt / p.dt)))
        ens = transition_ensemble(shell_initial(cfg, p), p, cfg.members, obs, int(cfg.seed), every)
        cols = {}
        for o in obs:
            cols[f"{o}_mean"] = ens.paths[o].mean(axis=0)
            cols[f"{o}_var"] = ens.paths[o].var(axis=0, ddof=1)
        write_csv(out / f"shell_stats_nu_{i:02d}.csv", ["t"] + list(cols),
                  ([t] + [cols[c][j] for c in cols] for j, t in enumerate(ens.times)))
        marginals[nu] = {o: ens.marginal(o, t_sample) for o in obs}
        write_csv(mfile, ["member"] + obs,
                  ([j] + [marginals[nu][o][j] for o in obs] for j in range(cfg.members)))
    rows, reports = [], {}
    if len(cfg.nus) >= 3:
        ensembles = [_MarginalEnsemble(nu, marginals[nu], t_sample) for nu in cfg.nus]
        for o in obs:
            rep = re_independence_report(ensembles, o, t_sample, min_members=min(cfg.members, 200))
            reports[o] = rep
            for a, b, dist, crit in zip(rep.nus[:-1], rep.nus[1:], rep.distances, rep.critical):
                rows.append([o, t_sample, a, b, dist, crit, rep.trend])
        write_csv(out / "shell_ks.csv", SHELL_KS_HEADER, rows)
    _write_inventory_files(out, sorted(out.glob("shell_*.csv")))
    return manifest, reports


@dataclass
class _MarginalEnsemble:
    nu: float
    values: dict
    t: float

    @property
    def params(self):
        return self

    def marginal(self, name, t):
        return self.values[name]


def _write_inventory_files(out, paths):
    inventory = {p.relative_to(out).as_posix(): file_sha256(p) for p in paths}
    _write_if_changed(Path(out) / "inventory.json", json.dumps(inventory, indent=2, sort_keys=True) + "\n")


__all__ = [
    "run_shell_sweep", "shell_params_for", "shell_initial",
    "ExperimentConfig", "InitialMeasureSpec", "EnsembleManifest", "taylor_green", "synthetic_besov",
    "sample_initial", "encode_snapshot", "decode_snapshot", "write_snapshot", "read_snapshot",
    "write_csv", "read_csv", "observable", "ensemble_distance", "params_hash", "run_sweep",
    "simulate_member", "write_member", "member_complete", "load_member", "verify_inventory",
    "tree_digest", "low_mode_tests",
]
