"""Command-line orchestration: presets, run configs, and artifact emission.

The ``lyapbound`` entry point exposes the pipeline as subcommands::

    cover    build a covering and its symbolic image, prune, save
    weights  weigh a saved graph under a metric checkpoint
    rwo      run the path-length ladder and report the witness cycle
    inp      run the metric-adaptation loop with checkpointing
    analyze  equilibrium / periodic-orbit exponent and dimension report
    floquet  sample the optimal periodic metric along a refined orbit
    export   re-emit saved binary artifacts as plot-ready CSV

Configuration comes from a TOML file with sections mirroring the library
modules; command-line flags override file values, which override preset
defaults.  Exit codes: 0 success, 2 configuration error, 3 numeric
failure, 4 resource cap.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import importlib
import importlib.resources
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from . import __version__
from .adapt import InpConfig, load_state, run_inp, write_history_csv
from .covering import (build_covering, build_heuristic_image,
                       build_rough_image, export_graph_csv, load_graph,
                       prune_sinks_sources, save_graph)
from .dynamics import (equilibria_rabinovich, henon_equilibrium_analysis,
                       henon_step, henon_trapping_quadrilateral,
                       lyapunov_dimension_from_exponents,
                       rabinovich_vector_field, refine_periodic_orbit,
                       rescale_rabinovich_point)
from .errors import ConfigError, LyapboundError, TooLarge, TooManyCubes
from .floquet import floquet_metric
from .metrics import (euclidean_metric, henon_polynomial_metric,
                      read_checkpoint, serialize_params,
                      symmetric_network_metric)
from .ode import integrate, integrate_sampled
from .paths import (extract_max_multiplicity_cycle, max_weight_path,
                    ratio_search, upper_bound_ladder, write_bound_report,
                    write_cycle_csv)
from .weights import (WeightSpec, load_weight_table, save_weight_table,
                      weigh_graph)

OUTPUT_DIR_ENV = "LYAPBOUND_OUT_DIR"

# Anchor guess for the short unstable periodic orbit of the rescaled
# three-mode flow; refined by Newton shooting before every use.
GAMMA_GUESS_POINT = (0.078, 0.143, -0.374)
GAMMA_GUESS_PERIOD = 3.52324

PRESETS = {
    "henon": {
        "system": {"name": "henon", "a": 1.4, "b": 0.3},
        "covering": {"box": [[-2.0, 2.0], [-2.0, 2.0]], "epsilon": 0.01,
                     "seed": "quadrilateral"},
        "graph": {"kind": "rough", "grid_density": 100, "tau": 1.0,
                  "inflate_scale": 2.0, "time_scale": 2.0},
        "metric": {"family": "henon_polynomial", "checkpoint": "table"},
        "weights": {"d": 1.0, "mode": "grid_then_local",
                    "grid_points_per_axis": 3, "batch": 4096},
        "rwo": {"ladder": [10, 100, 1000, 10000], "t_witness": 10000,
                "tol": 1e-9},
        "inp": {"iterations": 50, "strategy": "none", "eps_reg": 0.0,
                "t_path": 1000, "w_h": 0.005, "n_ref": 10,
                "trust_half_width": 0.01, "degree_scale": 0.025},
        "analyze": {},
        "floquet": {"samples": 256},
        "output": {"dir": "out"},
        "seed": 0,
        "threads": 1,
    },
    "rabinovich": {
        "system": {"name": "rabinovich", "sigma": 2.5, "r": 1.25, "b": 1.0,
                   "a": -40.0},
        "covering": {"box": [[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]],
                     "epsilon": 0.01, "seed": "all"},
        "graph": {"kind": "heuristic", "ktau": 5, "t0": 3.52324,
                  "sample_step": 1e-3, "horizon": 3e4, "transient": 500.0,
                  "perturbation": 1e-4, "time_scale": 1.0,
                  "grid_density": 30, "inflate_scale": None, "tau": None},
        "metric": {"family": "euclidean", "checkpoint": None,
                   "hidden": 200},
        "weights": {"d": 1.0, "mode": "grid_then_local",
                    "grid_points_per_axis": 3, "batch": 4096},
        "rwo": {"ladder": [100, 1000, 10000], "t_witness": 10000,
                "tol": 1e-9},
        "inp": {"iterations": 200, "strategy": "CR", "eps_reg": 0.0,
                "t_path": 1000, "w_h": 0.005, "n_ref": 10,
                "trust_half_width": 0.01, "degree_scale": 0.025},
        "analyze": {"orbit_guess": list(GAMMA_GUESS_POINT),
                    "orbit_period": GAMMA_GUESS_PERIOD},
        "floquet": {"samples": 256},
        "output": {"dir": "out"},
        "seed": 0,
        "threads": 1,
    },
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


class RunConfig:
    """Merged preset + file + flag configuration with validation."""

    def __init__(self, data: dict):
        self.data = data

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def get(self, section: str, field: str, default=None):
        return self.section(section).get(field, default)

    def require(self, section: str, field: str):
        value = self.get(section, field)
        if value is None:
            raise ConfigError(f"{section}.{field}: required value missing")
        return value

    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def stamp(self) -> str:
        return f"lyapbound={__version__} config={self.hash()}"

    @property
    def out_dir(self) -> str:
        return self.get("output", "dir", "out")

    def path(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)


def _flag_overrides(args: argparse.Namespace) -> dict:
    """Map parsed flags onto their config sections (None means unset)."""
    mapping = {
        "eps": ("covering", "epsilon"),
        "kind": ("graph", "kind"),
        "grid_density": ("graph", "grid_density"),
        "ktau": ("graph", "ktau"),
        "horizon": ("graph", "horizon"),
        "d": ("weights", "d"),
        "mode": ("weights", "mode"),
        "family": ("metric", "family"),
        "checkpoint": ("metric", "checkpoint"),
        "hidden": ("metric", "hidden"),
        "ladder": ("rwo", "ladder"),
        "t": ("rwo", "t_witness"),
        "iterations": ("inp", "iterations"),
        "strategy": ("inp", "strategy"),
        "eps_reg": ("inp", "eps_reg"),
        "orbit_guess": ("analyze", "orbit_guess"),
        "orbit_period": ("analyze", "orbit_period"),
        "samples": ("floquet", "samples"),
        "out": ("output", "dir"),
        "seed": ("", "seed"),
        "threads": ("", "threads"),
    }
    out: dict = {}
    for flag, (section, field) in mapping.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "ladder":
            value = [int(v) for v in str(value).split(",") if v]
        if flag == "orbit_guess" and isinstance(value, str):
            value = [float(v) for v in value.split(",")]
        if section:
            out.setdefault(section, {})[field] = value
        else:
            out[field] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Build the effective config: preset <- file <- env <- flags."""
    file_data: dict = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config: file {args.config!r} does not exist")
        try:
            with open(args.config, "rb") as fh:
                file_data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: {exc}") from exc

    preset = getattr(args, "preset", None) \
        or file_data.get("system", {}).get("name")
    if preset is None:
        raise ConfigError(
            "system.name: no preset given (use --preset or a config file)")
    if preset not in PRESETS and ":" not in str(preset):
        raise ConfigError(
            f"system.name: unknown preset {preset!r}; expected one of "
            f"{sorted(PRESETS)} or a plugin spec 'module:function'")

    if preset in PRESETS:
        data = copy.deepcopy(PRESETS[preset])
    else:
        data = copy.deepcopy(PRESETS["henon"])
        data["system"] = {"name": preset}
    data = _deep_merge(data, file_data)

    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        data.setdefault("output", {})["dir"] = env_dir

    data = _deep_merge(data, _flag_overrides(args))
    cfg = RunConfig(data)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    eps = cfg.get("covering", "epsilon")
    if eps is not None and not (0.0 < float(eps) <= 1e6):
        raise ConfigError(f"covering.epsilon: must be positive, got {eps}")
    box = cfg.get("covering", "box")
    if box is not None:
        arr = np.asarray(box, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or np.any(arr[:, 1] <= arr[:, 0]):
            raise ConfigError("covering.box: expected per-axis [lo, hi] "
                              "pairs with lo < hi")
    kind = cfg.get("graph", "kind")
    if kind is not None and kind not in ("rough", "heuristic"):
        raise ConfigError(f"graph.kind: expected rough|heuristic, got "
                          f"{kind!r}")
    d = cfg.get("weights", "d")
    if d is not None and box is not None and not (0.0 < float(d) <= len(box)):
        raise ConfigError(f"weights.d: must lie in (0, {len(box)}], got {d}")
    mode = cfg.get("weights", "mode")
    if mode is not None and mode not in ("grid", "local_from_center",
                                         "grid_then_local"):
        raise ConfigError(f"weights.mode: unknown mode {mode!r}")
    ladder = cfg.get("rwo", "ladder")
    if ladder is not None and (not ladder
                               or any(int(t) < 1 for t in ladder)):
        raise ConfigError("rwo.ladder: expected positive path lengths")
    strategy = cfg.get("inp", "strategy")
    if strategy is not None and str(strategy).upper() not in ("NONE", "IR",
                                                              "CR"):
        raise ConfigError(f"inp.strategy: expected none|ir|cr, got "
                          f"{strategy!r}")
    for section, field in (("metric", "checkpoint"), ("graph", "file"),
                           ("weights", "cache")):
        value = cfg.get(section, field)
        if isinstance(value, str) and value not in ("table", "euclidean") \
                and ("/" in value or value.endswith((".json", ".symg",
                                                     ".npz"))):
            if not os.path.exists(value):
                raise ConfigError(
                    f"{section}.{field}: file {value!r} does not exist")
    threads = cfg.data.get("threads")
    if threads is not None and int(threads) < 1:
        raise ConfigError(f"threads: must be >= 1, got {threads}")


# ---------------------------------------------------------------------------
# system / metric resolution
# ---------------------------------------------------------------------------

def _plugin(spec: str):
    module_name, _, attr = spec.partition(":")
    try:
        module = importlib.import_module(module_name)
        return getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"system.name: cannot load plugin {spec!r}: "
                          f"{exc}") from exc


class SystemBundle:
    """Everything the pipeline needs to know about one dynamical system.

    ``transition(points)`` realizes a single graph transition (used for
    rough-image construction); ``system(points, tau)`` serves weighing and
    adaptation; ``field`` is the flow's vector field when one exists.
    """

    def __init__(self, name, dim, transition, system, field=None,
                 tau_default=1.0):
        self.name = name
        self.dim = dim
        self.transition = transition
        self.system = system
        self.field = field
        self.tau_default = tau_default


def resolve_system(cfg: RunConfig) -> SystemBundle:
    sysc = cfg.section("system")
    name = sysc.get("name")
    if name == "henon":
        a = float(sysc.get("a", 1.4))
        b = float(sysc.get("b", 0.3))

        def transition(points):
            return henon_step(points, a=a, b=b, steps=2)

        def system(points, tau):
            return henon_step(points, a=a, b=b, steps=2 * int(round(tau)))

        return SystemBundle("henon", 2, transition, system)
    if name == "rabinovich":
        field = rabinovich_vector_field(
            sigma=float(sysc.get("sigma", 2.5)), r=float(sysc.get("r", 1.25)),
            b=float(sysc.get("b", 1.0)), a=float(sysc.get("a", -40.0)))
        from .dynamics import integrate_with_variational_batch

        tau_default = _rabinovich_tau(cfg)

        def transition(points):
            return integrate_with_variational_batch(field, points,
                                                    tau_default)

        def system(points, tau):
            return integrate_with_variational_batch(field, points,
                                                    float(tau))

        return SystemBundle("rabinovich", 3, transition, system, field=field,
                            tau_default=tau_default)
    factory = _plugin(str(name))
    bundle = factory(cfg.section("system"))
    if not isinstance(bundle, SystemBundle):
        raise ConfigError("system.name: plugin factory must return a "
                          "SystemBundle")
    return bundle


def _rabinovich_tau(cfg: RunConfig) -> float:
    t0 = float(cfg.get("graph", "t0", GAMMA_GUESS_PERIOD))
    ktau = int(cfg.get("graph", "ktau", 5))
    h = float(cfg.get("graph", "sample_step", 1e-3))
    lag = max(1, int(round(t0 / ktau / h)))
    return lag * h


def _packaged_checkpoint(name: str):
    ref = importlib.resources.files("lyapbound") / "data" / name
    with importlib.resources.as_file(ref) as path:
        if not os.path.exists(path):
            raise ConfigError(f"metric.checkpoint: packaged file {name!r} "
                              "is not available")
        return read_checkpoint(path)


def resolve_metric(cfg: RunConfig, dim: int):
    """Metric model + parameters per the config; ``params`` may be None."""
    family = cfg.get("metric", "family", "euclidean")
    checkpoint = cfg.get("metric", "checkpoint")
    if family == "euclidean":
        return euclidean_metric(dim), None
    if family == "henon_polynomial":
        model = henon_polynomial_metric()
        if checkpoint == "table":
            model, params, _ = _packaged_checkpoint("henon_metric_table.json")
            return model, params
    elif family == "symmetric_network":
        if checkpoint == "network":
            model, params, _ = _packaged_checkpoint(
                "rabinovich_network_small.json")
            return model, params
        model = symmetric_network_metric(
            hidden=int(cfg.get("metric", "hidden", 200)))
    else:
        raise ConfigError(f"metric.family: unknown family {family!r}")
    if checkpoint in (None, "zeros"):
        return model, np.zeros(model.n_params)
    if checkpoint == "random":
        return model, model.init_params(int(cfg.data.get("seed", 0)))
    model2, params, _ = _read_checkpoint_file(model, checkpoint)
    return model2, params


def _read_checkpoint_file(model, path):
    if not os.path.exists(path):
        raise ConfigError(f"metric.checkpoint: file {path!r} does not exist")
    return read_checkpoint(path)


# ---------------------------------------------------------------------------
# rabinovich pseudo-trajectories
# ---------------------------------------------------------------------------

def rabinovich_trajectory_generators(cfg: RunConfig, field):
    """Lazy block generators for the six sampled pseudo-trajectories.

    Three seeds — a generic point after a transient, and the two
    perturbed saddles — plus the reflection of each under the flow's
    ``(x, y, z) -> (-x, -y, z)`` symmetry.  Each base trajectory is
    materialized (in float32 blocks) only while it and its mirror are
    being consumed, keeping peak memory at one trajectory.
    """
    g = cfg.section("graph")
    h = float(g.get("sample_step", 1e-3))
    horizon = float(g.get("horizon", 3e4))
    transient = float(g.get("transient", 500.0))
    delta = float(g.get("perturbation", 1e-4))

    eq = equilibria_rabinovich(rescaled=True)
    seeds = [rescale_rabinovich_point(np.array([0.1, 1.0, -1.0])),
             eq[0]["point"] + np.array([delta, 0.0, 0.0]),
             eq[1]["point"] + np.array([delta, 0.0, 0.0])]
    mirror = np.array([-1.0, -1.0, 1.0], dtype=np.float32)

    def rhs(t, y):
        return field.rhs(y)

    def make_pair(seed):
        cache: dict = {}

        def base():
            q = np.asarray(seed, dtype=float)
            if transient > 0.0:
                q, _ = integrate(rhs, q, 0.0, transient, atol=1e-8)
            blocks: list = []
            integrate_sampled(rhs, q, 0.0, horizon, h,
                              lambda s: blocks.append(
                                  s.astype(np.float32)),
                              atol=1e-8)
            cache["blocks"] = blocks
            yield from blocks

        def mirrored():
            for block in cache.pop("blocks"):
                yield block * mirror

        return base(), mirrored()

    out = []
    for seed in seeds:
        out.extend(make_pair(seed))
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_cover(cfg: RunConfig, args) -> int:
    bundle = resolve_system(cfg)
    box = np.asarray(cfg.require("covering", "box"), dtype=float)
    eps = float(cfg.require("covering", "epsilon"))
    seed = cfg.get("covering", "seed", "all")
    if seed == "quadrilateral":
        if bundle.name != "henon":
            raise ConfigError("covering.seed: quadrilateral seed is a "
                              "henon preset feature")
        seed = henon_trapping_quadrilateral(
            a=float(cfg.get("system", "a", 1.4)),
            b=float(cfg.get("system", "b", 0.3)))
    elif isinstance(seed, list):
        seed = np.asarray(seed, dtype=float)
    covering = build_covering(box, eps, seed_region=seed)

    kind = cfg.get("graph", "kind", "rough")
    if kind == "rough":
        g = build_rough_image(
            covering, bundle.transition,
            tau_assignment=float(cfg.get("graph", "tau")
                                 or bundle.tau_default),
            grid_density=int(cfg.get("graph", "grid_density", 100)),
            inflate_scale=cfg.get("graph", "inflate_scale"))
    else:
        if bundle.field is None:
            raise ConfigError("graph.kind: heuristic images need a flow "
                              "with trajectories")
        h = float(cfg.get("graph", "sample_step", 1e-3))
        tau = _rabinovich_tau(cfg)
        lag = int(round(tau / h))
        trajectories = rabinovich_trajectory_generators(cfg, bundle.field)
        g = build_heuristic_image(covering, trajectories, tau=tau,
                                  lag_samples=lag)
    raw_counts = (g.n_vertices, g.n_edges)
    g = prune_sinks_sources(g)
    path = cfg.path("graph.symg")
    save_graph(g, path)
    escaped = g.build_meta.get("escaped", 0)
    print(f"covering: {covering.n_cubes} cubes at eps={eps}")
    print(f"image ({kind}): {raw_counts[0]} vertices, {raw_counts[1]} edges"
          f"; escaped samples: {escaped}")
    print(f"pruned: {g.n_vertices} vertices, {g.n_edges} edges")
    print(f"saved {path}")
    return 0


def _load_graph_for(cfg: RunConfig):
    path = cfg.get("graph", "file") or cfg.path("graph.symg")
    if not os.path.exists(path):
        raise ConfigError(f"graph.file: {path!r} does not exist; run "
                          "`cover` first or point graph.file at a graph")
    return load_graph(path)


def _weigh(cfg: RunConfig, g, bundle):
    metric, params = resolve_metric(cfg, bundle.dim)
    spec = WeightSpec(
        d=float(cfg.get("weights", "d", 1.0)), metric=metric, params=params,
        mode=cfg.get("weights", "mode", "grid_then_local"),
        grid_points_per_axis=int(cfg.get("weights", "grid_points_per_axis",
                                         3)))
    table = weigh_graph(g, spec, bundle.system,
                        parallelism=int(cfg.data.get("threads", 1)),
                        batch=int(cfg.get("weights", "batch", 4096)))
    return table, metric, params


def cmd_weights(cfg: RunConfig, args) -> int:
    bundle = resolve_system(cfg)
    g = _load_graph_for(cfg)
    table, _, _ = _weigh(cfg, g, bundle)
    csv_path = cfg.path("weights.csv")
    cache_path = cfg.path("weights.npz")
    save_weight_table(table, g, csv_path, cache_path=cache_path,
                      header_comment=cfg.stamp())
    print(f"weighed {g.n_vertices} vertices "
          f"({table.eval_count} observable evaluations)")
    print(f"max weight {table.weights.max():.12g} at vertex "
          f"{int(np.argmax(table.weights))}")
    print(f"saved {csv_path} and {cache_path}")
    return 0


def _load_or_compute_table(cfg: RunConfig, g, bundle):
    cache = cfg.get("weights", "cache")
    if cache is None:
        default = cfg.path("weights.npz")
        cache = default if os.path.exists(default) else None
    if cache is not None:
        table = load_weight_table(cache)
        if len(table.weights) != g.n_vertices:
            raise ConfigError("weights.cache: cached table size does not "
                              "match the graph")
        return table
    table, _, _ = _weigh(cfg, g, bundle)
    return table


def cmd_rwo(cfg: RunConfig, args) -> int:
    bundle = resolve_system(cfg)
    g = _load_graph_for(cfg)
    table = _load_or_compute_table(cfg, g, bundle)
    return _rwo_report(cfg, g, table)


def _rwo_report(cfg: RunConfig, g, table) -> int:
    time_scale = float(cfg.get("graph", "time_scale", 1.0))
    ladder = [int(t) for t in cfg.get("rwo", "ladder", [10, 100, 1000])]
    uniform = bool(np.all(g.tau == g.tau[0]))
    if uniform:
        rows = [(t, bound / time_scale, v)
                for t, bound, v in upper_bound_ladder(g, table, ladder)]
    else:
        t = max(ladder)
        (lo, hi), witness = ratio_search(
            g, table, t=t, tol=float(cfg.get("rwo", "tol", 1e-9)))
        rows = [(t, hi / time_scale, int(witness.vertices[0]))]
    bounds_path = cfg.path("bounds.csv")
    write_bound_report(rows, bounds_path, header_comment=cfg.stamp())
    for t, bound, _ in rows:
        print(f"t={t}: bound {bound:.12g}")

    t_wit = min(int(cfg.get("rwo", "t_witness", 10000)), max(r[0] for r in rows))
    path = max_weight_path(g, table, t_wit)
    report = extract_max_multiplicity_cycle(path, g, table)
    cycle_path = cfg.path("cycle.csv")
    write_cycle_csv(report, g, cycle_path, header_comment=cfg.stamp())
    print(f"witness cycle: length {len(report.cycle.vertices)}, "
          f"multiplicity {report.multiplicity_in_path}, relative weight "
          f"{report.cycle.relative_weight / time_scale:.12g}")
    print(f"saved {bounds_path} and {cycle_path}")
    return 0


def cmd_inp(cfg: RunConfig, args) -> int:
    bundle = resolve_system(cfg)
    g = _load_graph_for(cfg)
    metric, params = resolve_metric(cfg, bundle.dim)
    if metric.n_params == 0:
        raise ConfigError("metric.family: adaptation needs a parameterized "
                          "family, not euclidean")
    inp = cfg.section("inp")
    strategy = str(inp.get("strategy", "none"))
    strategy = strategy.upper() if strategy.lower() != "none" else "none"
    config = InpConfig(
        d=float(cfg.get("weights", "d", 1.0)),
        trust_half_width=float(inp.get("trust_half_width", 0.01)),
        degree_scale=float(inp.get("degree_scale", 0.025)),
        w_h=float(inp.get("w_h", 0.005)),
        n_ref=int(inp.get("n_ref", 10)),
        t_path=int(inp.get("t_path", 1000)),
        strategy=strategy,
        strategy_eps=float(inp.get("eps_reg", 0.0)),
        max_iterations=int(inp.get("iterations", 50)),
        weight_mode=cfg.get("weights", "mode", "grid_then_local"),
        grid_points_per_axis=int(cfg.get("weights", "grid_points_per_axis",
                                         3)))
    state = None
    if getattr(args, "resume", False):
        state_path = cfg.path("state_latest.json")
        if not os.path.exists(state_path):
            raise ConfigError(f"--resume: {state_path!r} does not exist")
        state = load_state(state_path, bundle.system)
        print(f"resuming from iteration {state.iteration}")
    try:
        state = run_inp(g, bundle.system, metric, params, config,
                        out_dir=cfg.out_dir, state=state)
    except KeyboardInterrupt:
        print("interrupted; latest checkpoint and state were kept intact",
              file=sys.stderr)
        raise
    write_history_csv(state.history, cfg.path("history.csv"),
                      header_comment=cfg.stamp())
    if state.history:
        last = state.history[-1]
        print(f"finished at iteration {last['iter']}: optimized reference "
              f"weight {last['optimized_ref_weight']:.12g} "
              f"({last['nlp_status']})")

    final_ckpt = cfg.path("checkpoint_final.json")
    serialize_params(metric, state.params, final_ckpt)
    print(f"saved {final_ckpt}")
    spec = WeightSpec(d=config.d, metric=metric, params=state.params,
                      mode=config.weight_mode,
                      grid_points_per_axis=config.grid_points_per_axis)
    table = weigh_graph(g, spec, bundle.system)
    return _rwo_report(cfg, g, table)


def cmd_analyze(cfg: RunConfig, args) -> int:
    bundle = resolve_system(cfg)
    report: dict = {"system": bundle.name}
    if bundle.name == "henon":
        info = henon_equilibrium_analysis(
            a=float(cfg.get("system", "a", 1.4)),
            b=float(cfg.get("system", "b", 0.3)))
        report["fixed_points"] = [
            {"point": [float(v) for v in fp["point"]],
             "lambda1": fp["exponents"][0],
             "dimension": fp["dimension"]}
            for fp in info["fixed_points"]]
        print(f"lambda1 = {info['lambda1']:.7f}")
        print(f"dimension = {info['dimension']:.7f}")
        report["lambda1"] = info["lambda1"]
        report["dimension"] = info["dimension"]
    else:
        eqs = equilibria_rabinovich(
            sigma=float(cfg.get("system", "sigma", 2.5)),
            r=float(cfg.get("system", "r", 1.25)),
            b=float(cfg.get("system", "b", 1.0)),
            a=float(cfg.get("system", "a", -40.0)))
        report["equilibria"] = []
        for label, eq in zip(("q0", "q+", "q-"), eqs):
            print(f"{label}: lambda1 = {eq['lambda1']:.5f}, "
                  f"dimension = {eq['dimension']:.4f}")
            report["equilibria"].append({
                "label": label,
                "point": [float(v) for v in eq["point"]],
                "lambda1": eq["lambda1"],
                "dimension": eq["dimension"]})
        guess = cfg.get("analyze", "orbit_guess")
        period = cfg.get("analyze", "orbit_period")
        if guess is not None and period is not None:
            orbit = refine_periodic_orbit(bundle.field,
                                          np.asarray(guess, dtype=float),
                                          float(period))
            exps = np.sort(np.log(np.abs(orbit.multipliers))
                           / orbit.period)[::-1]
            dim = lyapunov_dimension_from_exponents(exps)
            print(f"orbit: period = {orbit.period:.7f}, lambda1 = "
                  f"{exps[0]:.5f}, dimension = {dim:.5f} "
                  f"(residual {orbit.residual:.1e})")
            report["orbit"] = {
                "point": [float(v) for v in orbit.point],
                "period": float(orbit.period),
                "lambda1": float(exps[0]),
                "exponents": [float(v) for v in exps],
                "dimension": float(dim),
                "residual": float(orbit.residual)}
    out = cfg.path("analyze.json")
    with open(out, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    print(f"saved {out}")
    return 0


def cmd_floquet(cfg: RunConfig, args) -> int:
    bundle = resolve_system(cfg)
    if bundle.field is None:
        raise ConfigError("floquet: needs a flow preset (rabinovich)")
    guess = cfg.get("analyze", "orbit_guess", list(GAMMA_GUESS_POINT))
    period = float(cfg.get("analyze", "orbit_period", GAMMA_GUESS_PERIOD))
    orbit = refine_periodic_orbit(bundle.field,
                                  np.asarray(guess, dtype=float), period)
    n_samples = int(cfg.get("floquet", "samples", 256))
    fieldm = floquet_metric(bundle.field, orbit.point, orbit.period,
                            n_samples=n_samples)
    out = cfg.path("floquet.csv")
    n = bundle.dim
    upper = [(i, j) for i in range(n) for j in range(i, n)]
    with open(out, "w") as fh:
        fh.write(f"# {cfg.stamp()}\n")
        cols = ",".join(f"q_{k}" for k in range(n))
        pcols = ",".join(f"p_{i}{j}" for i, j in upper)
        fh.write(f"time,{cols},{pcols}\n")
        for k in range(len(fieldm.times)):
            q = ",".join(repr(float(v)) for v in fieldm.points[k])
            p = ",".join(repr(float(fieldm.metrics[k][i, j]))
                         for i, j in upper)
            fh.write(f"{float(fieldm.times[k])!r},{q},{p}\n")
    print(f"orbit period {orbit.period:.7f}; exponents "
          + ", ".join(f"{v:.5f}" for v in fieldm.exponents))
    print(f"saved {out} ({len(fieldm.times)} samples)")
    return 0


def cmd_export(cfg: RunConfig, args) -> int:
    what = args.what
    src = getattr(args, "input", None)
    if what == "graph":
        path = src or cfg.path("graph.symg")
        if not os.path.exists(path):
            raise ConfigError(f"export: graph file {path!r} does not exist")
        g = load_graph(path)
        weights = None
        cache = cfg.path("weights.npz")
        if os.path.exists(cache):
            table = load_weight_table(cache)
            if len(table.weights) == g.n_vertices:
                weights = table.weights
        edges, vertices = cfg.path("edges.csv"), cfg.path("vertices.csv")
        export_graph_csv(g, edges, vertices, weights=weights,
                         header_comment=cfg.stamp())
        print(f"saved {edges} and {vertices}")
        return 0
    if what == "weights":
        path = src or cfg.path("weights.npz")
        if not os.path.exists(path):
            raise ConfigError(f"export: cache {path!r} does not exist")
        table = load_weight_table(path)
        g = _load_graph_for(cfg)
        out = cfg.path("weights.csv")
        save_weight_table(table, g, out, header_comment=cfg.stamp())
        print(f"saved {out}")
        return 0
    if what == "checkpoint":
        path = src or cfg.path("checkpoint_latest.json")
        if not os.path.exists(path):
            raise ConfigError(f"export: checkpoint {path!r} does not exist")
        with open(path) as fh:
            doc = json.load(fh)
        out = cfg.path("params.csv")
        with open(out, "w") as fh:
            fh.write(f"# {cfg.stamp()}\n")
            fh.write("index,value\n")
            for i, v in enumerate(doc.get("params", [])):
                fh.write(f"{i},{float(v)!r}\n")
        print(f"saved {out}")
        return 0
    raise ConfigError(f"export: unknown artifact {what!r}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyapbound",
        description="Upper bounds for uniform Lyapunov exponents and "
                    "attractor dimension via weighted symbolic images.")
    parser.add_argument("--version", action="version",
                        version=f"lyapbound {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="built-in system preset")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--threads", type=int, help="parallelism cap")
        p.add_argument("--eps", type=float, help="cube side length")

    p = sub.add_parser("cover", help="build covering + symbolic image")
    common(p)
    p.add_argument("--kind", choices=["rough", "heuristic"])
    p.add_argument("--grid-density", dest="grid_density", type=int,
                   help="samples per cube side (rough images)")
    p.add_argument("--ktau", type=int, help="transition-time divisor")
    p.add_argument("--horizon", type=float,
                   help="trajectory length (heuristic images)")

    p = sub.add_parser("weights", help="weigh a saved graph")
    common(p)
    p.add_argument("--d", type=float, help="singular-value order")
    p.add_argument("--mode", choices=["grid", "local_from_center",
                                      "grid_then_local"])
    p.add_argument("--family", help="metric family")
    p.add_argument("--checkpoint", help="metric checkpoint "
                   "(path | table | zeros | random)")
    p.add_argument("--hidden", type=int, help="network hidden width")

    p = sub.add_parser("rwo", help="path-length ladder + witness cycle")
    common(p)
    p.add_argument("--d", type=float, help="singular-value order")
    p.add_argument("--mode", choices=["grid", "local_from_center",
                                      "grid_then_local"])
    p.add_argument("--family", help="metric family")
    p.add_argument("--checkpoint", help="metric checkpoint")
    p.add_argument("--hidden", type=int)
    p.add_argument("--ladder", help="comma-separated path lengths")
    p.add_argument("--t", type=int, help="witness path length")

    p = sub.add_parser("inp", help="run the metric-adaptation loop")
    common(p)
    p.add_argument("--d", type=float)
    p.add_argument("--family", help="metric family")
    p.add_argument("--checkpoint", help="initial parameters")
    p.add_argument("--hidden", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--strategy", choices=["none", "ir", "cr", "IR", "CR"])
    p.add_argument("--eps-reg", dest="eps_reg", type=float,
                   help="regularization margin")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest saved state")

    p = sub.add_parser("analyze", help="equilibrium / orbit report")
    common(p)
    p.add_argument("--orbit-guess", dest="orbit_guess",
                   help="comma-separated orbit anchor guess")
    p.add_argument("--orbit-period", dest="orbit_period", type=float)

    p = sub.add_parser("floquet", help="sample the periodic-orbit metric")
    common(p)
    p.add_argument("--orbit-guess", dest="orbit_guess")
    p.add_argument("--orbit-period", dest="orbit_period", type=float)
    p.add_argument("--samples", type=int, help="grid points per period")

    p = sub.add_parser("export", help="re-emit binary artifacts as CSV")
    common(p)
    p.add_argument("--what", required=True,
                   choices=["graph", "weights", "checkpoint"])
    p.add_argument("--in", dest="input", help="source artifact path")
    return parser


COMMANDS = {
    "cover": cmd_cover,
    "weights": cmd_weights,
    "rwo": cmd_rwo,
    "inp": cmd_inp,
    "analyze": cmd_analyze,
    "floquet": cmd_floquet,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TooManyCubes, TooLarge, MemoryError) as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return 4
    except (LyapboundError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
