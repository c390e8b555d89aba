"""Offline/online experiment orchestration and reporting.

A run directory holds every artifact the online stage needs::

    config.toml          the run configuration
    problem.json         problem, sensor and seed manifest
    model/               affine terms (sparse triplets) and the Gram matrix
    observation/         sensor functionals and the orthonormal basis W
    dictionary/          atoms, C = W^T R_U V, atom Gram matrix, parameters
    pod/                 POD modes of the prior snapshots and singular values
    sketch/              sketched affine blocks and embedding manifest
"""

import csv
import dataclasses
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import io
from .dictionary import (Dictionary, LarsCaps, best_in_library, build_dictionary,
                         evaluate_library, lars_path, path_to_library, recover_from_library)
from .errors import ArtifactError, ConfigError, IllPosedError
from .estimator import (ExactSurrogate, ObservationSpace, SketchedOffline, build_observation,
                        pbdw_coefficients, sketched_offline, stability_constants)
from .linalg import BasisMatrix, InnerProductSpace, pod
from .model import AffineModel, ParameterBox, solve_state
from .problems import (advection_diffusion_lite, sample_parameters, sensor_pattern,
                       sensors_radial, snapshots, thermal_block)
from .sketch import EmbeddingSpec, realize

__all__ = ["RunConfig", "ErrorTable", "offline", "online", "report", "load_run"]

COMPARATORS = ("A1_pod", "A2_dict", "A3_best")
EMBEDDING_KINDS = ("gaussian", "psrht", "composed", "identity", "exact")

# (section, key in file) for each RunConfig field
_LAYOUT = {
    "problem": ("problem", "name"),
    "n_h": ("problem", "n_h"),
    "kappa": ("problem", "kappa"),
    "velocity_scale": ("problem", "velocity_scale"),
    "sensor_pattern": ("sensors", "pattern"),
    "sensor_width": ("sensors", "width"),
    "K": ("dictionary", "K"),
    "prior_seed": ("dictionary", "seed"),
    "embedding": ("embedding", "kind"),
    "embedding_rows": ("embedding", "rows"),
    "embedding_inner_rows": ("embedding", "inner_rows"),
    "embedding_seed": ("embedding", "seed"),
    "alpha_floor_ratio": ("lars", "alpha_floor_ratio"),
    "max_spaces": ("lars", "max_spaces"),
    "sparsity_cap": ("lars", "sparsity_cap"),
    "test_size": ("test", "size"),
    "test_seed": ("test", "seed"),
    "threshold": ("pbdw", "threshold"),
    "comparators": ("", "comparators"),
    "output_dir": ("", "output_dir"),
}


@dataclasses.dataclass
class RunConfig:
    """Everything that determines a run; every random stream has an explicit seed."""

    problem: str = "thermal_block"
    n_h: int = 33
    kappa: float = None
    velocity_scale: float = None
    sensor_pattern: str = "m36"
    sensor_width: float = 2.0 ** -6
    K: int = 200
    prior_seed: int = 1
    embedding: str = "gaussian"
    embedding_rows: int = 100
    embedding_inner_rows: int = 0
    embedding_seed: int = 7
    alpha_floor_ratio: float = 1e-10
    max_spaces: int = None
    sparsity_cap: int = None
    test_size: int = 500
    test_seed: int = 2
    threshold: float = 1e-12
    comparators: tuple = COMPARATORS
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.comparators = tuple(self.comparators)
        self.validate()

    def validate(self):
        if self.problem not in ("thermal_block", "advection_diffusion_lite"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.embedding not in EMBEDDING_KINDS:
            raise ConfigError(f"unknown embedding {self.embedding!r}; expected {EMBEDDING_KINDS}")
        bad = set(self.comparators) - set(COMPARATORS)
        if bad or not self.comparators:
            raise ConfigError(f"comparators must be a nonempty subset of {COMPARATORS}")
        if self.K < 1 or self.test_size < 1 or self.embedding_rows < 1:
            raise ConfigError("K, test size and embedding rows must be positive")
        for name in ("prior_seed", "test_seed", "embedding_seed"):
            if not isinstance(getattr(self, name), int):
                raise ConfigError(f"{name} must be an explicit integer")

    def caps(self):
        return LarsCaps(self.alpha_floor_ratio, self.max_spaces, self.sparsity_cap)

    def to_toml(self):
        doc = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = list(value)
            section, key = _LAYOUT[f.name]
            (doc.setdefault(section, {}) if section else doc)[key] = value
        return tomli_w.dumps(doc)

    @classmethod
    def from_toml(cls, text):
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        kwargs = {}
        known = set()
        for name, (section, key) in _LAYOUT.items():
            src = doc.get(section, {}) if section else doc
            known.add((section, key))
            if key in src:
                kwargs[name] = src[key]
        for section, body in doc.items():
            if isinstance(body, dict):
                for key in body:
                    if (section, key) not in known:
                        raise ConfigError(f"unknown config key [{section}] {key}")
            elif ("", section) not in known:
                raise ConfigError(f"unknown config key {section}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path):
        Path(path).write_text(self.to_toml())

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_toml(path.read_text())


@dataclasses.dataclass
class ErrorTable:
    """Relative U-errors per method for one ``(K, m)`` run."""

    K: int
    m: int
    errors: dict  # method -> (N_test,) array

    def summary(self):
        return [(meth, self.K, self.m, float(np.mean(e)), float(np.max(e)))
                for meth, e in self.errors.items()]

    def write(self, directory):
        directory = Path(directory)
        with open(directory / "errors.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "K", "m", "mean_rel_error", "max_rel_error"])
            for meth, K, m, mean, mx in self.summary():
                writer.writerow([meth, K, m, repr(mean), repr(mx)])
        with open(directory / "samples.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            methods = list(self.errors)
            writer.writerow(["sample"] + methods)
            for i in range(len(next(iter(self.errors.values())))):
                writer.writerow([i] + [repr(float(self.errors[meth][i])) for meth in methods])

    @classmethod
    def read(cls, directory):
        directory = Path(directory)
        path = directory / "samples.csv"
        if not path.is_file():
            raise ArtifactError(f"missing online results: {path}")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        methods = rows[0][1:]
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        with open(directory / "errors.csv", newline="") as fh:
            first = list(csv.DictReader(fh))[0]
        return cls(int(first["K"]), int(first["m"]),
                   {meth: data[:, j] for j, meth in enumerate(methods)})


def _build_problem(config):
    kwargs = {"n_h": config.n_h}
    if config.problem == "thermal_block":
        if config.kappa is not None or config.velocity_scale is not None:
            raise ConfigError("kappa/velocity_scale apply to advection_diffusion_lite only")
        return thermal_block(**kwargs)
    if config.kappa is not None:
        kwargs["kappa"] = config.kappa
    if config.velocity_scale is not None:
        kwargs["velocity_scale"] = config.velocity_scale
    return advection_diffusion_lite(**kwargs)


def _problem_manifest(config, model, sensors):
    return {"model": model.manifest(), "sensors": sensors.manifest(),
            "prior_seed": config.prior_seed}


def offline(config, run_dir=None, force=False):
    """Build and persist every offline artifact; returns the run directory."""
    run_dir = Path(run_dir or config.output_dir)
    if run_dir.exists() and any(run_dir.iterdir()) and not force:
        raise ArtifactError(f"run directory {run_dir} is not empty (use --force to overwrite)")
    run_dir.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    space, model = _build_problem(config)
    sensors = sensor_pattern(config.sensor_pattern, config.sensor_width)
    obs = build_observation(space, sensors_radial(space, model.mesh, sensors))
    timings["problem"] = time.perf_counter() - t0

    config.save(run_dir / "config.toml")
    io.write_json(run_dir / "problem.json", _problem_manifest(config, model, sensors))
    for i, b in enumerate(model.operator_terms):
        io.save_sparse(run_dir / "model" / f"B{i}", b, role=f"operator term {i}")
    for j, f in enumerate(model.rhs_terms):
        io.save_array(run_dir / "model" / f"f{j}", f, role=f"rhs term {j}")
    io.save_sparse(run_dir / "model" / "gram", space.gram, role="Gram matrix R_U")
    io.save_array(run_dir / "model" / "theta_linear", model.theta_linear, role="coefficient map")
    io.save_array(run_dir / "model" / "theta_offset", model.theta_offset, role="coefficient offset")
    io.write_json(run_dir / "model" / "manifest.json", model.manifest())
    io.save_array(run_dir / "observation" / "sensors", obs.sensors, role="sensor functionals")
    io.save_array(run_dir / "observation" / "W", obs.W.columns, role="observation basis")

    t0 = time.perf_counter()
    params = sample_parameters(model.box, config.K, config.prior_seed)
    snaps = snapshots(model, params)
    dictionary = build_dictionary(space, obs, snaps, params=params)
    timings["snapshots"] = time.perf_counter() - t0
    io.save_array(run_dir / "dictionary" / "atoms", dictionary.atoms, role="dictionary atoms",
                  seed=config.prior_seed)
    io.save_array(run_dir / "dictionary" / "C", dictionary.C, role="measurement matrix")
    io.save_array(run_dir / "dictionary" / "gram", dictionary.gram, role="atom Gram matrix")
    io.save_array(run_dir / "dictionary" / "params", dictionary.params, role="snapshot parameters",
                  seed=config.prior_seed)

    t0 = time.perf_counter()
    modes, sv = pod(space, snaps, min(obs.m, snaps.shape[1]))
    io.save_array(run_dir / "pod" / "modes", modes.columns, role="POD modes")
    io.save_array(run_dir / "pod" / "singular_values", sv, role="POD singular values")
    timings["pod"] = time.perf_counter() - t0

    if config.embedding != "exact":
        t0 = time.perf_counter()
        rows = space.factor_rows if config.embedding == "identity" else config.embedding_rows
        spec = EmbeddingSpec(config.embedding, rows, space.factor_rows, config.embedding_seed,
                             config.embedding_inner_rows)
        emb = realize(spec, space)
        sketched_offline(model, obs, dictionary.atoms, emb).save(run_dir / "sketch")
        timings["sketch"] = time.perf_counter() - t0
    io.write_json(run_dir / "timings.json", timings)
    return run_dir


@dataclasses.dataclass
class Run:
    """Artifacts of a run directory, loaded lazily by mode."""

    config: RunConfig
    manifest: dict
    dictionary: Dictionary
    offline: SketchedOffline = None
    space: InnerProductSpace = None
    model: AffineModel = None
    obs: ObservationSpace = None
    pod_modes: BasisMatrix = None


def load_run(run_dir, truth=True):
    """Load a run; with ``truth=False`` no state-sized array is read."""
    run_dir = Path(run_dir)
    if not (run_dir / "config.toml").is_file():
        raise ArtifactError(f"{run_dir} is not a run directory (config.toml missing)")
    config = RunConfig.load(run_dir / "config.toml")
    manifest = io.read_json(run_dir / "problem.json")
    d = run_dir / "dictionary"
    offline_art = None
    if config.embedding != "exact":
        offline_art = SketchedOffline.load(run_dir / "sketch")
    if not truth:
        dictionary = Dictionary(None, io.load_array(d / "C"), io.load_array(d / "gram"),
                                io.load_array(d / "params"))
        return Run(config, manifest, dictionary, offline_art)
    dictionary = Dictionary(io.load_array(d / "atoms"), io.load_array(d / "C"),
                            io.load_array(d / "gram"), io.load_array(d / "params"))
    mm = io.read_json(run_dir / "model" / "manifest.json")
    space = InnerProductSpace(io.load_sparse(run_dir / "model" / "gram"))
    box = ParameterBox(mm["box"]["lower"], mm["box"]["upper"], mm["box"]["sampling"])
    model = AffineModel([io.load_sparse(run_dir / "model" / f"B{i}") for i in range(mm["m_B"] + 1)],
                        [io.load_array(run_dir / "model" / f"f{j}") for j in range(mm["m_f"] + 1)],
                        box, space, io.load_array(run_dir / "model" / "theta_linear"),
                        io.load_array(run_dir / "model" / "theta_offset"), name=mm["name"])
    W = BasisMatrix(io.load_array(run_dir / "observation" / "W"), u_orthonormal=True)
    obs = ObservationSpace(space, io.load_array(run_dir / "observation" / "sensors"), W)
    modes = BasisMatrix(io.load_array(run_dir / "pod" / "modes"), u_orthonormal=True)
    return Run(config, manifest, dictionary, offline_art, space, model, obs, modes)


def _u_norm(space, x):
    return float(np.linalg.norm(space.apply_factor(x)))


def _pod_best(run, u, w, threshold):
    """Smallest PBDW error over the nested POD spaces ``V_1 .. V_m``."""
    space, obs = run.space, run.obs
    C = obs.cross_gramian(run.pod_modes)
    best = np.inf
    for n in range(1, run.pod_modes.size + 1):
        try:
            v, eta, _ = pbdw_coefficients(C[:, :n], w, threshold)
        except IllPosedError:
            continue
        state = obs.W.columns @ eta + run.pod_modes.columns[:, :n] @ v
        best = min(best, _u_norm(space, u - state))
    return best


def _surrogate(run):
    if run.offline is not None:
        return run.offline
    if run.model is None:
        raise ConfigError("the exact surrogate needs state-sized artifacts; not allowed with --no-truth")
    return ExactSurrogate(run.model, run.obs, run.dictionary.atoms)


def _one_sample(run, xi, index, emit_dir):
    cfg = run.config
    u = solve_state(run.model, xi)
    unorm = _u_norm(run.space, u)
    w = run.obs.observe(u)
    out = {"w": w}
    if "A1_pod" in cfg.comparators:
        out["A1_pod"] = _pod_best(run, u, w, cfg.threshold) / unorm
    if {"A2_dict", "A3_best"} & set(cfg.comparators):
        path = lars_path(run.dictionary.C, w, cfg.caps())
        if emit_dir is not None:
            path.write_csv(Path(emit_dir) / f"path_{index:05d}.csv")
        library = path_to_library(run.dictionary, path)
        cands = evaluate_library(run.dictionary, run.obs, library, w, cfg.threshold)
        if "A2_dict" in cfg.comparators:
            res = recover_from_library(run.dictionary, run.obs, library, w, _surrogate(run),
                                       cfg.threshold, candidates=cands)
            out["A2_dict"] = _u_norm(run.space, u - res.state) / unorm
        if "A3_best" in cfg.comparators:
            res = best_in_library(library, run.obs, w, u, run.dictionary, cfg.threshold,
                                  candidates=cands)
            out["A3_best"] = _u_norm(run.space, u - res.state) / unorm
    out["proj"] = [_u_norm(run.space, u - run.pod_modes.columns[:, :n]
                           @ (run.pod_modes.columns[:, :n].T @ (run.space.gram @ u)))
                   for n in range(1, run.pod_modes.size + 1)]
    return out


def _constants(run, proj_errors):
    """Rows ``(n, eps_n, beta_n, mu_n, eps_n mu_n)`` over the nested POD spaces."""
    eps = np.max(np.asarray(proj_errors), axis=0)
    rows = []
    for n in range(1, run.pod_modes.size + 1):
        beta, mu = stability_constants(run.obs, BasisMatrix(run.pod_modes.columns[:, :n],
                                                            u_orthonormal=True))
        rows.append((n, float(eps[n - 1]), beta, mu, float(eps[n - 1]) * mu))
    return rows


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _read_observations(path, m):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    data = np.array([[float(v) for v in r] for r in rows])
    if data.ndim != 2 or data.shape[1] != m:
        raise ArtifactError(f"observations file must have {m} columns per row")
    return data


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def online(run_dir, test_seed=None, no_truth=False, workers=1, observations=None,
           emit_path_debug=False):
    """Run the requested comparators over the test set.

    In benchmark mode (default) test states are solved, observed and the
    relative U-errors written to ``errors.csv``/``samples.csv`` together with
    ``constants.csv``; returns an :class:`ErrorTable`.  With ``no_truth=True``
    only the dictionary-based recovery is run, from the observation vectors
    in ``observations`` (CSV, one row per sample), using coefficient-space
    artifacts only; recovered coefficients go to ``recoveries.csv`` and the
    list of results is returned.
    """
    run_dir = Path(run_dir)
    run = load_run(run_dir, truth=not no_truth)
    cfg = run.config
    emit_dir = None
    if emit_path_debug:
        emit_dir = run_dir / "paths"
        emit_dir.mkdir(exist_ok=True)
    pool = ThreadPoolExecutor(max_workers=max(1, int(workers)))

    if no_truth:
        if observations is None:
            raise ConfigError("--no-truth needs an observations file")
        surrogate = _surrogate(run)
        data = _read_observations(observations, run.dictionary.m)

        def task(i):
            w = data[i]
            path = lars_path(run.dictionary.C, w, cfg.caps())
            if emit_dir is not None:
                path.write_csv(emit_dir / f"path_{i:05d}.csv")
            library = path_to_library(run.dictionary, path)
            res = recover_from_library(run.dictionary, None, library, w, surrogate, cfg.threshold)
            res.termination_reason = path.termination_reason
            return res

        with pool:
            results = list(pool.map(task, range(len(data))))
        rows = [(i, " ".join(map(str, r.support)), r.surrogate_value,
                 " ".join(repr(float(c)) for c in r.correction_coeffs),
                 " ".join(f"{k}:{r.atom_coeffs[k]!r}" for k in r.support),
                 r.termination_reason) for i, r in enumerate(results)]
        _write_rows(run_dir / "recoveries.csv",
                    ["sample", "support", "surrogate_value", "correction_coeffs", "atom_coeffs",
                     "termination_reason"], rows)
        return results

    seed = cfg.test_seed if test_seed is None else int(test_seed)
    params = sample_parameters(run.model.box, cfg.test_size, seed)
    with pool:
        outs = list(pool.map(lambda i: _one_sample(run, params[i], i, emit_dir), range(len(params))))
    methods = [c for c in COMPARATORS if c in cfg.comparators]
    table = ErrorTable(cfg.K, run.obs.m, {meth: np.array([o[meth] for o in outs]) for meth in methods})
    table.write(run_dir)
    _write_rows(run_dir / "observations.csv", [f"w{j}" for j in range(run.obs.m)],
                [[float(v) for v in o["w"]] for o in outs])
    _write_rows(run_dir / "constants.csv", ["n", "eps_n", "beta_n", "mu_n", "eps_mu"],
                _constants(run, [o["proj"] for o in outs]))
    io.write_json(run_dir / "online.json", {"test_seed": seed, "test_size": cfg.test_size})
    return table


def _problem_key(manifest):
    return {"model": manifest["model"], "sensors": manifest["sensors"]}


def report(run_dirs, out):
    """Merge online results into ``error_vs_K.csv`` and ``constants.csv`` under ``out``."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reference = None
    rows, const_rows = [], []
    for rd in run_dirs:
        rd = Path(rd)
        manifest = io.read_json(rd / "problem.json")
        key = _problem_key(manifest)
        if reference is None:
            reference = key
        elif key != reference:
            raise ArtifactError(f"problem manifest of {rd} differs from {run_dirs[0]}; refusing to merge")
        rows.extend(ErrorTable.read(rd).summary())
        cpath = rd / "constants.csv"
        if cpath.is_file():
            K = RunConfig.load(rd / "config.toml").K
            with open(cpath, newline="") as fh:
                for r in csv.DictReader(fh):
                    const_rows.append((K, int(r["n"]), float(r["eps_n"]), float(r["beta_n"]),
                                       float(r["mu_n"]), float(r["eps_mu"])))
    rows.sort(key=lambda r: (r[2], COMPARATORS.index(r[0]), r[1]))
    _write_rows(out / "error_vs_K.csv", ["method", "K", "m", "mean_rel_error", "max_rel_error"],
                [(meth, K, m, mean, mx) for meth, K, m, mean, mx in rows])
    const_rows.sort()
    _write_rows(out / "constants.csv", ["K", "n", "eps_n", "beta_n", "mu_n", "eps_mu"], const_rows)
    return out
