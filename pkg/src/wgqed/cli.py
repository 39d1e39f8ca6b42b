"""Command line entry point: parse a config, run an experiment, write tables.

Config files are flat INI-style text: ``[section]`` headers, ``key =
value`` pairs, ``#`` comments.  Every physical value is dimensionless
(k0 = 1, gamma0 = 1); a value with a unit suffix is rejected.  All
constraint violations are collected and reported together with their
line numbers, so one edit round fixes a broken file.

Exit codes: 0 success (including runs with <= 1% skipped trials, which
are noted in the output header), 2 configuration error, 3 numerical or
I/O failure.  Environment variables WGQED_SEED, WGQED_THREADS and
WGQED_OUT override the config; command line flags override both.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .ensemble import SamplingSpec, run_monte_carlo, sample_configuration
from .errors import ConfigError, DomainError, NumericalError
from .evolve import initial_state, population_trace, propagate
from .greens import AtomEnsemble, build_effective_hamiltonian
from .spectrum import collective_spectrum, spectrum_histogram, spectrum_table
from .steady import ScatteringSetup, polarization_profile, transmission
from .tables import ResultTable
from .waveguide import TruncationPolicy, WaveguideGeometry

EXPERIMENTS = ("dynamics", "steady", "spectrum", "sweep")

# (section, key) -> parser kind; unknown pairs are config errors.
_SCHEMA = {
    ("run", "experiment"): "str",
    ("run", "seed"): "int",
    ("run", "trials"): "int",
    ("run", "threads"): "int",
    ("run", "evanescent"): "bool",
    ("run", "out"): "str",
    ("geometry", "a"): "float",
    ("geometry", "b"): "float",
    ("sampling", "atoms"): "int",
    ("sampling", "density"): "float",
    ("sampling", "length"): "float",
    ("atoms", "positions"): "positions",
    ("atoms", "excited_atom"): "int",
    ("atoms", "excited_sublevel"): "int",
    ("dynamics", "t_max"): "float",
    ("dynamics", "samples"): "int",
    ("probe", "delta"): "grid",
    ("probe", "source_sublevel"): "int",
    ("probe", "standoff"): "float",
    ("probe", "profile"): "bool",
    ("probe", "bin_width"): "float",
    ("spectrum", "histogram"): "bool",
    ("spectrum", "shift_bins"): "int",
    ("spectrum", "decay_bins"): "int",
    ("sweep", "variable"): "str",
    ("sweep", "values"): "floats",
    ("sweep", "delta"): "float",
    ("truncation", "kappa_z_product"): "float",
    ("truncation", "kappa_max"): "float",
    ("truncation", "max_index"): "int",
    ("truncation", "z_switch"): "float",
}


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved experiment description."""

    experiment: str
    geometry: WaveguideGeometry
    seed: int
    trials: int
    threads: int
    evanescent: bool
    out: str
    truncation: TruncationPolicy
    atoms: np.ndarray | None = None
    excited_atom: int = 0
    excited_sublevel: int = -1
    t_max: float = 10.0
    t_samples: int = 400
    deltas: np.ndarray = field(default_factory=lambda: np.zeros(1))
    source_sublevel: int = -1
    standoff: float = 500.0
    profile: bool = False
    bin_width: float = 25.0
    histogram: bool = False
    shift_bins: int = 60
    decay_bins: int = 60
    sweep_variable: str | None = None
    sweep_values: np.ndarray | None = None
    sweep_delta: float = 0.0
    sampling_fields: tuple[int | None, float | None, float | None] = (None, None, None)

    def sampling_spec(self) -> SamplingSpec:
        n_atoms, density, length = self.sampling_fields
        return SamplingSpec(
            n_atoms=n_atoms,
            density=density,
            length=length,
            seed=self.seed,
            trials=self.trials,
        )

    @property
    def uses_sampling(self) -> bool:
        return any(v is not None for v in self.sampling_fields)


# ---------------------------------------------------------------------------
# Parsing


def _scan(text: str):
    """Split config text into ((section, key) -> (raw value, line)) plus errors."""
    entries: dict[tuple[str, str], tuple[str, int]] = {}
    errors: list[str] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if section is None:
            errors.append(f"line {lineno}: key outside any [section]")
            continue
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if (section, key) in entries:
            errors.append(
                f"line {lineno}: duplicate key [{section}] {key} "
                f"(first at line {entries[(section, key)][1]})"
            )
            continue
        entries[(section, key)] = (value.strip(), lineno)
    return entries, errors


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(
            f"not a number: {raw!r} (values are dimensionless, k0=1 and gamma0=1; "
            "no unit suffixes)"
        ) from None


def _parse_grid(raw: str) -> np.ndarray:
    """A detuning grid: single value, 'start:stop:count', or comma list."""
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid must be start:stop:count, got {raw!r}")
        start, stop = _parse_float(parts[0]), _parse_float(parts[1])
        count = int(parts[2])
        if count < 1:
            raise ValueError("grid count must be at least 1")
        return np.linspace(start, stop, count)
    return np.array([_parse_float(p) for p in raw.split(",") if p.strip() != ""])


def _parse_positions(raw: str) -> np.ndarray:
    rows = []
    for i, chunk in enumerate(p for p in raw.split(";") if p.strip()):
        comps = [c for c in chunk.split(",") if c.strip() != ""]
        if len(comps) != 3:
            raise ValueError(f"atom {i}: expected 'x, y, z', got {chunk.strip()!r}")
        rows.append([_parse_float(c) for c in comps])
    if not rows:
        raise ValueError("no atom positions given")
    return np.array(rows)


_PARSERS = {
    "str": lambda raw: raw,
    "int": lambda raw: int(raw),
    "float": _parse_float,
    "bool": _parse_bool,
    "grid": _parse_grid,
    "floats": lambda raw: np.array(
        [_parse_float(p) for p in raw.split(",") if p.strip() != ""]
    ),
    "positions": _parse_positions,
}


class _Extractor:
    """Typed config access that records every failure instead of raising."""

    def __init__(self, entries):
        self.entries = entries
        self.errors: list[str] = []
        self.consumed: set[tuple[str, str]] = set()

    def get(self, section, key, default=None, required=False, check=None):
        pair = (section, key)
        self.consumed.add(pair)
        if pair not in self.entries:
            if required:
                self.errors.append(f"missing required key [{section}] {key}")
            return default
        raw, lineno = self.entries[pair]
        try:
            value = _PARSERS[_SCHEMA[pair]](raw)
        except ValueError as exc:
            self.errors.append(f"line {lineno}: [{section}] {key}: {exc}")
            return default
        if check is not None:
            message = check(value)
            if message:
                self.errors.append(f"line {lineno}: [{section}] {key}: {message}")
                return default
        return value

    def reject_unknown(self):
        for (section, key), (_, lineno) in sorted(
            self.entries.items(), key=lambda item: item[1][1]
        ):
            if (section, key) not in _SCHEMA:
                self.errors.append(f"line {lineno}: unknown key [{section}] {key}")
            elif (section, key) not in self.consumed:
                self.errors.append(
                    f"line {lineno}: key [{section}] {key} is not used by this experiment"
                )


def _positive(value):
    return None if value > 0 else f"must be positive, got {value}"


def _non_negative(value):
    return None if value >= 0 else f"must be non-negative, got {value}"


def _sublevel(value):
    return None if value in (-1, 0, 1) else f"must be -1, 0 or +1, got {value}"


def parse_config(
    text: str,
    experiment: str | None = None,
    seed_override: int | None = None,
    threads_override: int | None = None,
    out_override: str | None = None,
) -> RunConfig:
    """Validate config text into a RunConfig, reporting all violations at once."""
    entries, errors = _scan(text)
    ex = _Extractor(entries)
    ex.errors.extend(errors)

    declared = ex.get("run", "experiment", check=lambda v: None if v in EXPERIMENTS else f"must be one of {EXPERIMENTS}")
    if experiment is None:
        experiment = declared
        if experiment is None:
            ex.errors.append("missing required key [run] experiment (or subcommand)")
    elif declared is not None and declared != experiment:
        ex.errors.append(
            f"[run] experiment = {declared} conflicts with the '{experiment}' subcommand"
        )

    seed = ex.get("run", "seed", default=0, check=_non_negative)
    threads = ex.get("run", "threads", default=os.cpu_count() or 1, check=_positive)
    evanescent = ex.get("run", "evanescent", default=True)
    out = ex.get("run", "out", default=".")
    if seed_override is not None:
        seed = seed_override
    if threads_override is not None:
        threads = threads_override
    if out_override is not None:
        out = out_override

    a = ex.get("geometry", "a", required=True, check=_positive)
    b = ex.get("geometry", "b", required=True, check=_positive)

    trunc_kwargs = {}
    for key in ("kappa_z_product", "kappa_max", "z_switch"):
        val = ex.get("truncation", key, check=_positive)
        if val is not None:
            trunc_kwargs[key] = val
    max_index = ex.get("truncation", "max_index", check=_positive)
    if max_index is not None:
        trunc_kwargs["max_index"] = max_index

    n_atoms = ex.get("sampling", "atoms", check=_positive)
    density = ex.get("sampling", "density", check=_positive)
    length = ex.get("sampling", "length", check=_positive)
    sampling_given = any(v is not None for v in (n_atoms, density, length))

    atoms = ex.get("atoms", "positions")
    excited_atom = ex.get("atoms", "excited_atom", default=0, check=_non_negative)
    excited_sublevel = ex.get("atoms", "excited_sublevel", default=-1, check=_sublevel)

    kwargs: dict = {}
    if experiment in ("dynamics", "spectrum"):
        if atoms is None and not sampling_given:
            ex.errors.append(
                f"{experiment} needs either [atoms] positions or a [sampling] section"
            )
        if atoms is not None and sampling_given:
            ex.errors.append(
                f"{experiment}: give [atoms] positions or [sampling], not both"
            )
    elif experiment in ("steady", "sweep"):
        if atoms is not None:
            ex.errors.append(f"{experiment} uses [sampling], not explicit [atoms]")
        if not sampling_given:
            ex.errors.append(f"{experiment} requires a [sampling] section")

    if experiment == "dynamics":
        default_tmax = 10.0 if atoms is not None else 25.0
        kwargs["t_max"] = ex.get("dynamics", "t_max", default=default_tmax, check=_positive)
        kwargs["t_samples"] = ex.get("dynamics", "samples", default=400, check=_positive)
        default_trials = 200
    elif experiment == "steady":
        deltas = ex.get("probe", "delta", required=True)
        profile = ex.get("probe", "profile", default=False)
        if deltas is not None:
            if deltas.size == 0:
                ex.errors.append("[probe] delta grid is empty")
            elif profile and deltas.size != 1:
                ex.errors.append(
                    "[probe] profile = true needs a single delta, got a grid of "
                    f"{deltas.size}"
                )
            else:
                kwargs["deltas"] = deltas
        kwargs["profile"] = profile
        kwargs["source_sublevel"] = ex.get("probe", "source_sublevel", default=-1, check=_sublevel)
        kwargs["standoff"] = ex.get("probe", "standoff", default=500.0, check=_positive)
        kwargs["bin_width"] = ex.get("probe", "bin_width", default=25.0, check=_positive)
        default_trials = 10_000 if profile else 1000
    elif experiment == "spectrum":
        kwargs["histogram"] = ex.get("spectrum", "histogram", default=False)
        kwargs["shift_bins"] = ex.get("spectrum", "shift_bins", default=60, check=_positive)
        kwargs["decay_bins"] = ex.get("spectrum", "decay_bins", default=60, check=_positive)
        default_trials = 100
    elif experiment == "sweep":
        variable = ex.get(
            "sweep",
            "variable",
            required=True,
            check=lambda v: None if v in ("b", "length") else "must be 'b' or 'length'",
        )
        values = ex.get("sweep", "values", required=True)
        if values is not None and values.size == 0:
            ex.errors.append("[sweep] values is empty")
            values = None
        kwargs["sweep_variable"] = variable
        kwargs["sweep_values"] = values
        kwargs["sweep_delta"] = ex.get("sweep", "delta", default=0.0)
        kwargs["source_sublevel"] = ex.get("probe", "source_sublevel", default=-1, check=_sublevel)
        kwargs["standoff"] = ex.get("probe", "standoff", default=500.0, check=_positive)
        if variable == "length":
            if length is not None:
                ex.errors.append(
                    "[sweep] variable = length replaces [sampling] length; do not set both"
                )
            if density is None or n_atoms is not None:
                ex.errors.append(
                    "sweeping length requires [sampling] density (and not a fixed atom count)"
                )
        default_trials = 1000
    else:
        default_trials = 1

    trials = ex.get("run", "trials", default=default_trials, check=_positive)

    ex.reject_unknown()

    # Construction-time validation adds its own messages.
    geometry = None
    if a is not None and b is not None:
        try:
            geometry = WaveguideGeometry(a, b)
        except ValueError as exc:
            ex.errors.append(str(exc))
    truncation = TruncationPolicy()
    try:
        truncation = TruncationPolicy(**trunc_kwargs)
    except ValueError as exc:
        ex.errors.append(str(exc))
    if sampling_given:
        try:
            spec = SamplingSpec(
                n_atoms=n_atoms, density=density, length=length, seed=seed, trials=trials
            )
            if geometry is not None and (experiment != "sweep" or length is not None):
                spec.resolve(geometry)
        except ConfigError as exc:
            ex.errors.extend(exc.messages)
    if atoms is not None and geometry is not None:
        try:
            AtomEnsemble(atoms, geometry)
        except ValueError as exc:
            ex.errors.append(f"[atoms] positions: {exc}")
        if not 0 <= excited_atom < len(atoms):
            ex.errors.append(
                f"[atoms] excited_atom = {excited_atom} out of range for {len(atoms)} atoms"
            )

    if ex.errors:
        raise ConfigError(ex.errors)

    return RunConfig(
        experiment=experiment,
        geometry=geometry,
        seed=seed,
        trials=trials,
        threads=threads,
        evanescent=evanescent,
        out=out,
        truncation=truncation,
        atoms=atoms,
        excited_atom=excited_atom,
        excited_sublevel=excited_sublevel,
        sampling_fields=(n_atoms, density, length),
        **kwargs,
    )


# ---------------------------------------------------------------------------
# Config echo


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, np.ndarray):
        if value.ndim == 2:
            return "; ".join(",".join(f"{c:.17g}" for c in row) for row in value)
        return ",".join(f"{v:.17g}" for v in value)
    return str(value)


def config_echo(config: RunConfig) -> dict[str, str]:
    """Resolved configuration as ordered header metadata.

    Keys are ``section.key`` in config syntax, so a run can be
    reproduced from its own output header; derived quantities and the
    code version ride along under reserved prefixes.
    """
    echo: dict[str, str] = {
        "version": __version__,
        "units": "k0 = 1, gamma0 = 1, lengths in 1/k0, times in 1/gamma0",
        "run.experiment": config.experiment,
        "run.seed": _fmt(config.seed),
        "run.trials": _fmt(config.trials),
        "run.threads": _fmt(config.threads),
        "run.evanescent": _fmt(config.evanescent),
        "geometry.a": _fmt(config.geometry.a),
        "geometry.b": _fmt(config.geometry.b),
    }
    tr = config.truncation
    echo["truncation.kappa_z_product"] = _fmt(tr.kappa_z_product)
    if tr.kappa_max is not None:
        echo["truncation.kappa_max"] = _fmt(tr.kappa_max)
    echo["truncation.max_index"] = _fmt(tr.max_index)
    echo["truncation.z_switch"] = _fmt(tr.z_switch)

    n_atoms, density, length = config.sampling_fields
    if n_atoms is not None:
        echo["sampling.atoms"] = _fmt(n_atoms)
    if density is not None:
        echo["sampling.density"] = _fmt(density)
    if length is not None:
        echo["sampling.length"] = _fmt(length)
    if config.atoms is not None:
        echo["atoms.positions"] = _fmt(config.atoms)
        echo["atoms.excited_atom"] = _fmt(config.excited_atom)
        echo["atoms.excited_sublevel"] = _fmt(config.excited_sublevel)

    if config.experiment == "dynamics":
        echo["dynamics.t_max"] = _fmt(config.t_max)
        echo["dynamics.samples"] = _fmt(config.t_samples)
        if config.atoms is None:
            echo["atoms.excited_sublevel"] = _fmt(config.excited_sublevel)
    elif config.experiment == "steady":
        echo["probe.delta"] = _fmt(config.deltas)
        echo["probe.source_sublevel"] = _fmt(config.source_sublevel)
        echo["probe.standoff"] = _fmt(config.standoff)
        echo["probe.profile"] = _fmt(config.profile)
        echo["probe.bin_width"] = _fmt(config.bin_width)
    elif config.experiment == "spectrum":
        echo["spectrum.histogram"] = _fmt(config.histogram)
        echo["spectrum.shift_bins"] = _fmt(config.shift_bins)
        echo["spectrum.decay_bins"] = _fmt(config.decay_bins)
    elif config.experiment == "sweep":
        echo["sweep.variable"] = config.sweep_variable
        echo["sweep.values"] = _fmt(config.sweep_values)
        echo["sweep.delta"] = _fmt(config.sweep_delta)
        echo["probe.source_sublevel"] = _fmt(config.source_sublevel)
        echo["probe.standoff"] = _fmt(config.standoff)

    if config.uses_sampling and config.experiment != "sweep":
        spec = config.sampling_spec()
        rn, rd, rl = spec.resolve(config.geometry)
        echo["derived.n_atoms"] = _fmt(rn)
        echo["derived.density"] = _fmt(rd)
        echo["derived.length"] = _fmt(rl)
    return echo


def echo_to_config_text(meta: dict[str, str]) -> str:
    """Rebuild a config file from an output header's echo lines."""
    sections: dict[str, list[str]] = {}
    for key, value in meta.items():
        if "." not in key or key.startswith("derived."):
            continue
        section, _, name = key.partition(".")
        if section not in _section_names():
            continue
        sections.setdefault(section, []).append(f"{name} = {value}")
    parts = []
    for section, lines in sections.items():
        parts.append(f"[{section}]")
        parts.extend(lines)
        parts.append("")
    return "\n".join(parts)


def _section_names():
    return {section for section, _ in _SCHEMA}


# ---------------------------------------------------------------------------
# Experiment dispatch


def _guarded_trial_map(worker, trials: int, threads: int):
    """Ordered per-trial results with the shared failure policy."""
    catchable = (NumericalError, DomainError, np.linalg.LinAlgError)

    def guarded(t):
        try:
            return worker(t)
        except catchable as exc:
            return exc

    if threads <= 1:
        return [guarded(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, range(trials)))


def _run_dynamics(config: RunConfig, out_dir: str) -> list[str]:
    t_grid = np.linspace(0.0, config.t_max, config.t_samples)
    meta = config_echo(config)
    if config.atoms is not None:
        ensemble = AtomEnsemble(config.atoms, config.geometry)
        ham = build_effective_hamiltonian(
            ensemble, evanescent_flag=config.evanescent, truncation=config.truncation
        )
        s0 = initial_state(ensemble, config.excited_atom, config.excited_sublevel)
        table = population_trace(propagate(ham, s0, t_grid))
        table.meta.update(meta)
    else:
        spec = config.sampling_spec()

        def worker(trial: int) -> dict:
            ens = sample_configuration(spec, config.geometry, trial)
            ham = build_effective_hamiltonian(
                ens, evanescent_flag=config.evanescent, truncation=config.truncation
            )
            s0 = initial_state(ens, 0, config.excited_sublevel)
            states = propagate(ham, s0, t_grid)
            return {"p_total": np.array([st.total_population for st in states])}

        result = run_monte_carlo(worker, spec, threads=config.threads)
        stat = result["p_total"]
        table = ResultTable.from_columns(
            {"t": t_grid, "p_total_mean": stat.mean, "p_total_stderr": stat.stderr},
            meta=meta,
        )
        _note_failures(table, result.trials_used, result.trials_failed)
    path = os.path.join(out_dir, "dynamics.csv")
    table.write(path)
    return [path]


def _scattering_setup(config: RunConfig, spec: SamplingSpec | None = None) -> ScatteringSetup:
    return ScatteringSetup(
        geometry=config.geometry,
        sampling=spec if spec is not None else config.sampling_spec(),
        source_sublevel=config.source_sublevel,
        standoff=config.standoff,
        evanescent_flag=config.evanescent,
        truncation=config.truncation,
        threads=config.threads,
    )


def _run_steady(config: RunConfig, out_dir: str) -> list[str]:
    setup = _scattering_setup(config)
    meta = config_echo(config)
    table = transmission(setup, config.deltas)
    merged = dict(meta)
    merged.update(table.meta)
    table.meta = merged
    path = os.path.join(out_dir, "transmission.csv")
    table.write(path)
    paths = [path]
    if config.profile:
        ptable = polarization_profile(
            setup, float(config.deltas[0]), bin_width=config.bin_width
        )
        merged = dict(meta)
        merged.update(ptable.meta)
        ptable.meta = merged
        ppath = os.path.join(out_dir, "profile.csv")
        ptable.write(ppath)
        paths.append(ppath)
    return paths


def _run_spectrum(config: RunConfig, out_dir: str) -> list[str]:
    meta = config_echo(config)
    if config.atoms is not None:
        ensembles = {0: AtomEnsemble(config.atoms, config.geometry)}
        trials = 1
    else:
        spec = config.sampling_spec()
        trials = config.trials
        ensembles = None

    def worker(trial: int):
        if ensembles is not None:
            ens = ensembles[trial]
        else:
            ens = sample_configuration(spec, config.geometry, trial)
        ham = build_effective_hamiltonian(
            ens, evanescent_flag=config.evanescent, truncation=config.truncation
        )
        return collective_spectrum(ham)

    outcomes = _guarded_trial_map(worker, trials, config.threads)
    failures = [(t, o) for t, o in enumerate(outcomes) if isinstance(o, Exception)]
    if len(failures) > 0.01 * trials:
        raise NumericalError(
            f"{len(failures)}/{trials} spectrum trials failed (> 1%): "
            + "; ".join(f"trial {t}: {e}" for t, e in failures[:3])
        )
    pooled = []
    blocks = []
    for trial, outcome in enumerate(outcomes):
        if isinstance(outcome, Exception):
            continue
        pooled.extend(outcome)
        blocks.append(spectrum_table(outcome, trial=trial).rows)
    rows = np.vstack([b for b in blocks if b.size]) if blocks else np.empty((0, 5))
    table = ResultTable(
        columns=["trial", "re_lambda", "im_lambda", "decay_rate", "participation"],
        rows=rows,
        meta=meta,
    )
    _note_failures(table, trials - len(failures), len(failures))
    path = os.path.join(out_dir, "spectrum.csv")
    table.write(path)
    paths = [path]
    if config.histogram:
        htable = spectrum_histogram(
            pooled, shift_bins=config.shift_bins, decay_bins=config.decay_bins
        )
        htable.meta.update(meta)
        hpath = os.path.join(out_dir, "histogram.csv")
        htable.write(hpath)
        paths.append(hpath)
    return paths


def _run_sweep(config: RunConfig, out_dir: str) -> list[str]:
    n_base, d_base, l_base = config.sampling_fields
    rows = []
    for value in config.sweep_values:
        if config.sweep_variable == "b":
            geometry = WaveguideGeometry(config.geometry.a, float(value))
            fields = (n_base, d_base, l_base)
        else:
            geometry = config.geometry
            fields = (n_base, d_base, float(value))
        spec = SamplingSpec(
            n_atoms=fields[0],
            density=fields[1],
            length=fields[2],
            seed=config.seed,
            trials=config.trials,
        )
        setup = ScatteringSetup(
            geometry=geometry,
            sampling=spec,
            source_sublevel=config.source_sublevel,
            standoff=config.standoff,
            evanescent_flag=config.evanescent,
            truncation=config.truncation,
            threads=config.threads,
        )
        table = transmission(setup, np.array([config.sweep_delta]))
        n_atoms, _, _ = spec.resolve(geometry)
        rows.append(
            [
                float(value),
                n_atoms,
                config.sweep_delta,
                table.column("t_mean")[0],
                table.column("t_stderr")[0],
                table.column("lnt_mean")[0],
                table.column("lnt_stderr")[0],
                float(table.meta["trials_used"]),
            ]
        )
    table = ResultTable(
        columns=[
            config.sweep_variable,
            "n_atoms",
            "delta",
            "t_mean",
            "t_stderr",
            "lnt_mean",
            "lnt_stderr",
            "trials_used",
        ],
        rows=np.array(rows),
        meta=config_echo(config),
    )
    path = os.path.join(out_dir, "sweep.csv")
    table.write(path)
    return [path]


def _note_failures(table: ResultTable, used: int, failed: int) -> None:
    table.meta["trials_used"] = str(used)
    table.meta["trials_failed"] = str(failed)
    if failed:
        table.meta["warnings"] = f"{failed} trials failed and were excluded"


_DISPATCH = {
    "dynamics": _run_dynamics,
    "steady": _run_steady,
    "spectrum": _run_spectrum,
    "sweep": _run_sweep,
}


def run(config: RunConfig) -> list[str]:
    """Execute an experiment; returns the paths of the written tables."""
    out_dir = config.out
    os.makedirs(out_dir, exist_ok=True)
    return _DISPATCH[config.experiment](config, out_dir)


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wgqed",
        description=(
            "Collective scattering and decay of atoms in a rectangular "
            "conducting waveguide (dimensionless units: k0 = 1, gamma0 = 1)."
        ),
        epilog=(
            "Environment overrides: WGQED_SEED, WGQED_THREADS, WGQED_OUT "
            "(flags take precedence over both the environment and the config)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("dynamics", "time evolution of excitation amplitudes"),
        ("steady", "steady-state transmission and polarization profiles"),
        ("spectrum", "collective eigenvalue spectra"),
        ("sweep", "transmission versus guide width or cloud length"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--threads", type=int, default=None, help="override [run] threads")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument(
            "--dry-run",
            action="store_true",
            help="print the resolved configuration (with derived values) and exit",
        )
    return parser


def _env_override(name: str, cast):
    raw = os.environ.get(name)
    if raw is None:
        return None
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError([f"environment variable {name}={raw!r} is not valid"]) from None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        seed = args.seed if args.seed is not None else _env_override("WGQED_SEED", int)
        threads = (
            args.threads if args.threads is not None else _env_override("WGQED_THREADS", int)
        )
        out = args.out if args.out is not None else os.environ.get("WGQED_OUT")
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc}"]) from None
        config = parse_config(
            text,
            experiment=args.command,
            seed_override=seed,
            threads_override=threads,
            out_override=out,
        )
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for message in exc.messages:
            print(f"  {message}", file=sys.stderr)
        return 2

    if args.dry_run:
        for key, value in config_echo(config).items():
            print(f"{key} = {value}")
        return 0

    try:
        paths = run(config)
    except (NumericalError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
