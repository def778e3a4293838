"""Batch drivers for cavity eigenfrequency studies.

Subcommands
-----------
track               radius sweep with identity-preserving mode tracking
uq                  collocation study: moment tables for tracked modes
kl-fit              covariance reduction of a station observation matrix
grid                stand-alone collocation grid construction
pillbox-reference   closed-form labeled mode table of the cylinder cavity
bench               linear-solve count comparison: tracking vs. direct solves

Every subcommand takes --config PATH (JSON), --out DIR, --workers N and
--seed S.  Exit codes: 0 success, 2 configuration error, 3 numerical failure.

Config schema (strict: unknown keys are rejected)
-------------------------------------------------
problem (track, uq, bench):
  kind: "pillbox"
    radius: nominal radius in meters (uq/bench)
    length: cavity length in meters
    p_max: highest axial order kept (default 2)
    distribution: {family: "uniform", support: [lo, hi]}   (uq/bench)
  kind: "deformed-disk" (uq)
    radius: base disk radius in meters
    criterion: variance fraction for the covariance truncation
    observations: CSV path of station offsets (radial, equally spaced angles)
    synthetic: {variables: int, samples: int, seed: int}  (alternative source)
    model: path of a saved reduction (kl-fit output, third alternative)
discretization:
  degree: B-spline degree (default 2)
  elements: elements per direction (pillbox, default 16)
  refinement: dyadic refinement levels of the disk patch (deformed-disk)
modes: number of tracked eigenmodes
sweep (track): {start, stop, samples}  radii in meters
grid (uq, bench, grid):
  {kind: "tensor", family, orders: [n, ...]} or
  {kind: "smolyak", family, level}
  The support of uniform families and the dimension are derived from the
  problem; the stand-alone grid command accepts explicit "support"/"dim".
tracking (optional): step-control overrides, keys as in TrackConfig
kl-fit config: {observations: path, criterion: fraction}
pillbox-reference config: {radius, length, count}
"""

import argparse
import csv
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import scipy.sparse.linalg as spla

from . import geometry, oracle, uq
from .assembly import DiscreteSpace, assemble
from .eigen import Eigenpair, solve_smallest
from .errors import CavityError, ConfigError, SolverError
from .pencil import (
    HomotopyPencil,
    ParametricPencil,
    block_pencil,
    build_pillbox_pencil,
    eigenvalue_to_frequency,
)
from .tracking import TrackConfig, track_chain, track_modes

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_REQUIRED = object()


# -- strict configuration parsing -------------------------------------------

class _Section:
    """Dict wrapper that consumes keys and rejects leftovers."""

    def __init__(self, data, where):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
        self._data = dict(data)
        self.where = where

    def take(self, key, default=_REQUIRED, kind=None, choices=None, lo=None, hi=None):
        if key in self._data:
            value = self._data.pop(key)
        elif default is _REQUIRED:
            raise ConfigError(f"{self.where}: missing required key {key!r}")
        else:
            return default
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ConfigError(f"{self.where}.{key}: expected an integer, got {value!r}")
            value = int(value)
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{self.where}.{key}: expected a number, got {value!r}")
            value = float(value)
        elif kind is str and not isinstance(value, str):
            raise ConfigError(f"{self.where}.{key}: expected a string, got {value!r}")
        if choices is not None and value not in choices:
            raise ConfigError(f"{self.where}.{key}: {value!r} not one of {tuple(choices)}")
        if lo is not None and value < lo:
            raise ConfigError(f"{self.where}.{key}: {value} is below the minimum {lo}")
        if hi is not None and value > hi:
            raise ConfigError(f"{self.where}.{key}: {value} exceeds the maximum {hi}")
        return value

    def section(self, key, default=_REQUIRED):
        value = self.take(key, default=default)
        if value is default and default is not _REQUIRED:
            return None if value is None else _Section(value, f"{self.where}.{key}")
        return _Section(value, f"{self.where}.{key}")

    def done(self):
        if self._data:
            extra = ", ".join(sorted(self._data))
            raise ConfigError(f"{self.where}: unknown keys: {extra}")


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _parse_tracking(sec):
    if sec is None:
        return TrackConfig()
    kwargs = {}
    kwargs["n1"] = sec.take("n1", default=TrackConfig.n1, kind=int, lo=1)
    kwargs["n2"] = sec.take("n2", default=TrackConfig.n2, kind=int, lo=2)
    kwargs["eta1"] = sec.take("eta1", default=TrackConfig.eta1, kind=float)
    kwargs["eta2"] = sec.take("eta2", default=TrackConfig.eta2, kind=float)
    kwargs["newton_tol"] = sec.take("newton_tol", default=TrackConfig.newton_tol, kind=float, lo=0.0)
    kwargs["newton_max_iter"] = sec.take(
        "newton_max_iter", default=TrackConfig.newton_max_iter, kind=int, lo=1
    )
    kwargs["min_step"] = sec.take("min_step", default=TrackConfig.min_step, kind=float)
    kwargs["initial_step"] = sec.take("initial_step", default=TrackConfig.initial_step, kind=float)
    sec.done()
    try:
        return TrackConfig(**kwargs)
    except CavityError as exc:
        raise ConfigError(f"{sec.where}: {exc}") from None


def _grid_from_section(sec, dim, support, allow_explicit):
    kind = sec.take("kind", kind=str, choices=("tensor", "smolyak"))
    family = sec.take("family", kind=str, choices=uq.RULE_FAMILIES)
    if allow_explicit:
        support = sec.take("support", default=support)
        if support is not None:
            support = _check_interval(support, f"{sec.where}.support", allow_empty=False)
    rule_support = None if family == "gauss-hermite" else support
    try:
        if kind == "tensor":
            orders = sec.take("orders")
            if not isinstance(orders, list) or not orders or not all(
                isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in orders
            ):
                raise ConfigError(f"{sec.where}.orders: expected a list of positive integers")
            if dim is not None and len(orders) != dim:
                raise ConfigError(
                    f"{sec.where}.orders: expected {dim} entries for this problem, "
                    f"got {len(orders)}"
                )
            sec.done()
            rules = [uq.rule_1d(family, n, rule_support) for n in orders]
            return uq.build_tensor_grid(rules)
        level = sec.take("level", kind=int, lo=0)
        if allow_explicit:
            dim = sec.take("dim", default=dim, kind=int, lo=1)
        if dim is None:
            raise ConfigError(f"{sec.where}: smolyak grids need a dimension")
        sec.done()
        return uq.build_smolyak_grid(dim, level, family, rule_support)
    except ConfigError:
        raise
    except CavityError as exc:
        raise ConfigError(f"{sec.where}: {exc}") from None


def _check_interval(value, where, allow_empty):
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ConfigError(f"{where}: expected [lo, hi]")
    lo, hi = float(value[0]), float(value[1])
    if hi < lo or (hi == lo and not allow_empty):
        raise ConfigError(f"{where}: need lo < hi, got [{lo}, {hi}]")
    return lo, hi


def _degenerate_rule(family, value):
    # zero-width distribution: a single unit-weight node
    return uq.Rule1D(family, 1, np.array([value]), np.array([1.0]), (value, value))


# -- pillbox pipeline helpers ------------------------------------------------

_PENCIL_CACHE = {}


def _pillbox_parametric(base_radius, length, p_max, degree, elements):
    key = ("pillbox", base_radius, length, p_max, degree, elements)
    if key not in _PENCIL_CACHE:
        space = DiscreteSpace(degree, elements)
        _PENCIL_CACHE[key] = build_pillbox_pencil(base_radius, length, p_max, space)
    return _PENCIL_CACHE[key]


def _block_spurious(block, pen, pair, overlap=0.5, rtol=1e-6):
    """Constant-mode branch test in block-local coordinates."""
    if block.spurious is None:
        return False
    ones = np.ones(pen.n)
    m_ones = pen.mass @ ones
    ov = abs(pair.vector @ m_ones) / math.sqrt(ones @ m_ones)
    return abs(pair.value - block.spurious) <= rtol * (1.0 + block.spurious) and ov >= overlap


def _select_pillbox_modes(par, base_delta, n_modes):
    """Lowest physical modes at the base point, solved block by block.

    Returns [(block_index, Eigenpair in block coordinates), ...] ascending.
    Per-block solves keep exactly degenerate cross-family coincidences from
    mixing and let the spurious constant branch be filtered locally.
    """
    combined = par.at(base_delta)
    candidates = []
    for bi, b in enumerate(par.blocks):
        pen_b = block_pencil(combined, b)
        k = min(n_modes + 2, pen_b.n - 1)
        for pr in solve_smallest(pen_b, k):
            if _block_spurious(b, pen_b, pr):
                continue
            candidates.append((pr.value, bi, len(candidates), pr))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    if len(candidates) < n_modes:
        raise SolverError(
            f"only {len(candidates)} physical candidates found for {n_modes} modes"
        )
    return [(bi, pr) for _, bi, _, pr in candidates[:n_modes]]


def _group_by_block(selected):
    groups = {}
    for j, (bi, pair) in enumerate(selected):
        groups.setdefault(bi, []).append((j, pair))
    return dict(sorted(groups.items()))


def _pillbox_node_task(payload):
    """Track every selected mode from the base radius to one node radius.

    Stateless across processes: the pencil is rebuilt (and memoized) per
    worker.  Returns (node_index, [(mode, lambda, newton_log, solves,
    rejects, flagged), ...]).
    """
    (node_index, node_r, base_r, length, p_max, degree, elements, groups, cfg) = payload
    par = _pillbox_parametric(base_r, length, p_max, degree, elements)
    results = []
    if node_r == base_r:
        for bi, members in groups.items():
            for j, pair in members:
                results.append((j, pair.value, [], 0, 0, False))
        return node_index, sorted(results)
    pen_base = par.at([base_r])
    pen_node = par.at([node_r])
    for bi, members in groups.items():
        b = par.blocks[bi]
        homotopy = HomotopyPencil(block_pencil(pen_base, b), block_pencil(pen_node, b))
        starts = [pair for _, pair in members]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            states = track_modes(homotopy, starts, cfg)
        for (j, _), st in zip(members, states):
            results.append(
                (j, st.eigenpair.value, list(st.newton_log), st.n_solves,
                 st.n_rejects, st.flagged)
            )
    return node_index, sorted(results)


def _run_tasks(payloads, worker, n_workers):
    if n_workers <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(worker, payloads))


# -- deformed-disk pipeline helpers -----------------------------------------

def _station_angles(n):
    return np.arange(n) * (2.0 * math.pi / n)


def _disk_model_key(radius, refinement, degree, mean, modes, angles, kind):
    return (
        "disk-model", radius, refinement, degree, kind,
        mean.tobytes(), modes.tobytes(), angles.tobytes(),
    )


def _disk_parametric(radius, refinement, degree, mean, modes, angles, kind):
    key = _disk_model_key(radius, refinement, degree, mean, modes, angles, kind)
    if key not in _PENCIL_CACHE:
        base = geometry.refine_patch(geometry.build_disk_patch(radius), refinement)
        sampler = geometry.BoundarySampler(angles, kind)
        reduced = SimpleNamespace(mean=mean, scaled_modes=modes)
        model = geometry.deformation_from_kl(reduced, base, sampler)
        space = DiscreteSpace(degree, 2**refinement)

        def evaluate(delta):
            return assemble(geometry.deform(model, delta), space, bc="dirichlet")

        _PENCIL_CACHE[key] = ParametricPencil(
            evaluate, modes.shape[1], base_delta=np.zeros(modes.shape[1])
        )
    return _PENCIL_CACHE[key]


def _disk_node_task(payload):
    (node_index, node, radius, refinement, degree, mean, modes, angles, kind,
     starts, cfg) = payload
    par = _disk_parametric(radius, refinement, degree, mean, modes, angles, kind)
    base_delta = np.zeros(modes.shape[1])
    if np.array_equal(node, base_delta):
        return node_index, [
            (j, pr.value, [], 0, 0, False) for j, pr in enumerate(starts)
        ]
    homotopy = HomotopyPencil(par.at(base_delta), par.at(node))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        states = track_modes(homotopy, starts, cfg)
    return node_index, [
        (j, st.eigenpair.value, list(st.newton_log), st.n_solves, st.n_rejects,
         st.flagged)
        for j, st in enumerate(states)
    ]


# -- shared reporting --------------------------------------------------------

def _write_mode_table(path, freq, label="node"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode"] + [f"{label}_{k}_f_hz" for k in range(freq.shape[1])])
        for j, row in enumerate(freq):
            writer.writerow([j] + [f"{v:.17g}" for v in row])


def _write_moments(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "family", "axial_order", "base_f_hz", "mean_f_hz", "sd_f_hz"])
        for row in rows:
            writer.writerow(row)


def _newton_summary(logs):
    flat = [it for log in logs for it in log]
    if not flat:
        return {"accepted_steps": 0, "mean": None, "max": None}
    return {
        "accepted_steps": len(flat),
        "mean": float(np.mean(flat)),
        "max": int(max(flat)),
    }


def _summary_payload(**kw):
    doc = {"timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    doc.update(kw)
    return doc


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommand: uq ----------------------------------------------------------

def _parse_pillbox_problem(sec, need_distribution):
    length = sec.take("length", kind=float, lo=1e-6)
    p_max = sec.take("p_max", default=2, kind=int, lo=1, hi=12)
    radius = sec.take("radius", default=None, kind=float, lo=1e-6)
    distribution = None
    if need_distribution:
        dist = sec.section("distribution")
        family = dist.take("family", kind=str, choices=("uniform",))
        support = _check_interval(dist.take("support"), f"{dist.where}.support", allow_empty=True)
        dist.done()
        distribution = (family, support)
    sec.done()
    return SimpleNamespace(length=length, p_max=p_max, radius=radius, distribution=distribution)


def _parse_pillbox_discretization(sec):
    if sec is None:
        return 2, 16
    degree = sec.take("degree", default=2, kind=int, lo=1, hi=6)
    elements = sec.take("elements", default=16, kind=int, lo=2, hi=256)
    sec.done()
    return degree, elements


def _pillbox_uq_pipeline(cfg, args):
    """Shared by cmd_uq and cmd_bench: returns the tracked run artifacts."""
    root = _Section(cfg, "config")
    prob_sec = root.section("problem")
    kind = prob_sec.take("kind", kind=str, choices=("pillbox", "deformed-disk"))
    if kind != "pillbox":
        raise ConfigError("this pipeline needs problem.kind = 'pillbox'")
    problem = _parse_pillbox_problem(prob_sec, need_distribution=True)
    degree, elements = _parse_pillbox_discretization(root.section("discretization", default=None))
    n_modes = root.take("modes", kind=int, lo=1, hi=64)
    cfg_track = _parse_tracking(root.section("tracking", default=None))
    family, (lo, hi) = problem.distribution
    base_r = problem.radius if problem.radius is not None else 0.5 * (lo + hi)
    grid_sec = root.section("grid")
    if lo == hi:
        grid_sec.take("kind", kind=str, choices=("tensor",))
        gfam = grid_sec.take("family", kind=str, choices=uq.RULE_FAMILIES)
        grid_sec.take("orders", default=[1])
        grid_sec.done()
        grid = uq.build_tensor_grid([_degenerate_rule(gfam, lo)])
        base_r = lo
    else:
        grid = _grid_from_section(grid_sec, dim=1, support=(lo, hi), allow_explicit=False)
    root.done()

    par = _pillbox_parametric(base_r, problem.length, problem.p_max, degree, elements)
    selected = _select_pillbox_modes(par, [base_r], n_modes)
    groups = _group_by_block(selected)
    payloads = [
        (k, float(node[0]), base_r, problem.length, problem.p_max, degree, elements,
         groups, cfg_track)
        for k, node in enumerate(grid.nodes)
    ]
    outcomes = _run_tasks(payloads, _pillbox_node_task, args.workers)
    outcomes.sort(key=lambda o: o[0])

    values = np.empty((n_modes, grid.n_nodes))
    newton_logs = []
    totals = {"n_solves": 0, "n_rejects": 0, "flagged": 0}
    for node_index, rows in outcomes:
        for j, lam, log, solves, rejects, flagged in rows:
            values[j, node_index] = lam
            newton_logs.append(log)
            totals["n_solves"] += solves
            totals["n_rejects"] += rejects
            totals["flagged"] += int(flagged)
    freq = np.vectorize(eigenvalue_to_frequency)(values)
    return SimpleNamespace(
        problem=problem, base_r=base_r, degree=degree, elements=elements,
        n_modes=n_modes, grid=grid, par=par, selected=selected, values=values,
        freq=freq, newton_logs=newton_logs, totals=totals, cfg_track=cfg_track,
    )


def _parse_disk_problem(sec, args):
    radius = sec.take("radius", kind=float, lo=1e-6)
    criterion = sec.take("criterion", default=0.95, kind=float)
    obs_path = sec.take("observations", default=None)
    synth = sec.section("synthetic", default=None)
    model_path = sec.take("model", default=None)
    sec.done()
    sources = [s for s in (obs_path, synth, model_path) if s is not None]
    if len(sources) != 1:
        raise ConfigError(
            "problem: give exactly one of observations, synthetic, model"
        )
    if model_path is not None:
        sampler, mean, modes = geometry.load_deformation_spec(model_path)
        return radius, sampler.angles, sampler.kind, mean, modes, None
    if obs_path is not None:
        obs = uq.load_observations(obs_path)
    else:
        variables = synth.take("variables", default=18, kind=int, lo=1, hi=512)
        samples = synth.take("samples", default=5000, kind=int, lo=2)
        seed = synth.take("seed", default=20240817, kind=int)
        synth.done()
        if args.seed is not None:
            seed = args.seed
        cov = uq.default_correlated_covariance(variables)
        obs = uq.generate_synthetic_observations(cov, np.zeros(variables), samples, seed)
    kl = uq.fit_kl(obs, criterion)
    angles = _station_angles(obs.n_variables)
    return radius, angles, "radial", kl.mean, kl.scaled_modes, kl


def cmd_uq(cfg, args):
    out = _out_dir(args)
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    kind = cfg.get("problem", {}).get("kind") if isinstance(cfg.get("problem"), dict) else None
    if kind == "pillbox":
        run = _pillbox_uq_pipeline(cfg, args)
        mean, var = uq.estimate_moments(run.freq, run.grid)
        sd = np.sqrt(np.maximum(var, 0.0))
        uq.save_grid_csv(out / "grid.csv", run.grid)
        _write_mode_table(out / "mode_table.csv", run.freq)
        rows = []
        for j, (bi, pair) in enumerate(run.selected):
            b = run.par.blocks[bi]
            base_f = eigenvalue_to_frequency(pair.value)
            rows.append(
                (j, b.family, b.axial, f"{base_f:.17g}",
                 f"{mean[j]:.17g}", f"{sd[j]:.17g}")
            )
        _write_moments(out / "moments.csv", rows)
        summary = _summary_payload(
            problem="pillbox",
            base_radius_m=run.base_r,
            nodes=run.grid.n_nodes,
            modes=run.n_modes,
            workers=args.workers,
            newton=_newton_summary(run.newton_logs),
            bordered_solves=run.totals["n_solves"],
            rejected_steps=run.totals["n_rejects"],
            degenerate_flags=run.totals["flagged"],
        )
        _write_json(out / "summary.json", summary)
        print(f"pillbox uq: {run.n_modes} modes over {run.grid.n_nodes} nodes")
        return

    if kind != "deformed-disk":
        raise ConfigError("problem.kind must be 'pillbox' or 'deformed-disk'")
    root = _Section(cfg, "config")
    prob_sec = root.section("problem")
    prob_sec.take("kind", kind=str)
    radius, angles, skind, mean_vec, modes_mat, kl = _parse_disk_problem(prob_sec, args)
    disc = root.section("discretization", default=None)
    if disc is None:
        degree, refinement = 2, 3
    else:
        degree = disc.take("degree", default=2, kind=int, lo=1, hi=6)
        refinement = disc.take("refinement", default=3, kind=int, lo=1, hi=8)
        disc.done()
    n_modes = root.take("modes", kind=int, lo=1, hi=64)
    cfg_track = _parse_tracking(root.section("tracking", default=None))
    n_t = modes_mat.shape[1]
    grid = _grid_from_section(root.section("grid"), dim=n_t, support=None, allow_explicit=False)
    root.done()

    if kl is not None:
        print(f"covariance reduction: {len(mean_vec)} variables -> {n_t} retained")
    print(f"collocation nodes: {grid.n_nodes}")

    par = _disk_parametric(radius, refinement, degree, mean_vec, modes_mat, angles, skind)
    starts = solve_smallest(par.at(np.zeros(n_t)), n_modes)
    payloads = [
        (k, node.copy(), radius, refinement, degree, mean_vec, modes_mat, angles,
         skind, starts, cfg_track)
        for k, node in enumerate(grid.nodes)
    ]
    outcomes = _run_tasks(payloads, _disk_node_task, args.workers)
    outcomes.sort(key=lambda o: o[0])
    values = np.empty((n_modes, grid.n_nodes))
    newton_logs = []
    totals = {"n_solves": 0, "n_rejects": 0, "flagged": 0}
    for node_index, rows in outcomes:
        for j, lam, log, solves, rejects, flagged in rows:
            values[j, node_index] = lam
            newton_logs.append(log)
            totals["n_solves"] += solves
            totals["n_rejects"] += rejects
            totals["flagged"] += int(flagged)
    freq = np.vectorize(eigenvalue_to_frequency)(values)
    mean, var = uq.estimate_moments(freq, grid)
    sd = np.sqrt(np.maximum(var, 0.0))

    uq.save_grid_csv(out / "grid.csv", grid)
    _write_mode_table(out / "mode_table.csv", freq)
    base_idx = int(np.argmax(np.all(grid.nodes == 0.0, axis=1))) if (grid.nodes == 0.0).all(
        axis=1
    ).any() else 0
    rows = [
        (j, "cross-section", 0, f"{freq[j, base_idx]:.17g}", f"{mean[j]:.17g}", f"{sd[j]:.17g}")
        for j in range(n_modes)
    ]
    _write_moments(out / "moments.csv", rows)
    summary = _summary_payload(
        problem="deformed-disk",
        radius_m=radius,
        retained_variables=n_t,
        captured_ratio=None if kl is None else kl.captured_ratio,
        nodes=grid.n_nodes,
        modes=n_modes,
        workers=args.workers,
        newton=_newton_summary(newton_logs),
        bordered_solves=totals["n_solves"],
        rejected_steps=totals["n_rejects"],
        degenerate_flags=totals["flagged"],
    )
    _write_json(out / "summary.json", summary)


def _base_node(grid, base_r):
    hits = np.nonzero(grid.nodes[:, 0] == base_r)[0]
    return int(hits[0]) if hits.size else int(np.argmin(np.abs(grid.nodes[:, 0] - base_r)))


# -- subcommand: track -------------------------------------------------------

def cmd_track(cfg, args):
    out = _out_dir(args)
    root = _Section(cfg, "config")
    prob_sec = root.section("problem")
    kind = prob_sec.take("kind", kind=str, choices=("pillbox",))
    problem = _parse_pillbox_problem(prob_sec, need_distribution=False)
    degree, elements = _parse_pillbox_discretization(root.section("discretization", default=None))
    n_modes = root.take("modes", kind=int, lo=1, hi=64)
    sweep = root.section("sweep")
    start = sweep.take("start", kind=float, lo=1e-6)
    stop = sweep.take("stop", kind=float, lo=1e-6)
    samples = sweep.take("samples", kind=int, lo=1, hi=10_000)
    sweep.done()
    cfg_track = _parse_tracking(root.section("tracking", default=None))
    root.done()

    radii = np.array([start]) if start == stop else np.linspace(start, stop, samples)
    par = _pillbox_parametric(start, problem.length, problem.p_max, degree, elements)
    selected = _select_pillbox_modes(par, [start], n_modes)
    groups = _group_by_block(selected)

    table_l = np.full((n_modes, radii.size), np.nan)
    table_f = np.full((n_modes, radii.size), np.nan)
    ok = np.zeros((n_modes, radii.size), dtype=bool)
    per_mode_stats = {}
    failures = []

    for bi, members in groups.items():
        block = par.blocks[bi]
        block_par = ParametricPencil(
            lambda d, _b=block: block_pencil(par.at(d), _b), 1, base_delta=[start]
        )
        starts_b = [pair for _, pair in members]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mode_table, _, stats = track_chain(
                    block_par, [[r] for r in radii], starts_b, cfg_track
                )
        except CavityError as exc:
            failures.append(
                {"block": f"{block.family}{block.axial}", "error": str(exc)}
            )
            continue
        for row, (j, _) in enumerate(members):
            table_l[j] = mode_table.values[row]
            table_f[j] = np.vectorize(eigenvalue_to_frequency)(mode_table.values[row])
            ok[j] = mode_table.ok[row]
            per_mode_stats[j] = {
                "newton_mean": float(np.mean(stats["newton_iterations"]))
                if stats["newton_iterations"] else None,
                "newton_max": int(max(stats["newton_iterations"]))
                if stats["newton_iterations"] else None,
                "bordered_solves": stats["n_solves"],
                "rejected_steps": stats["n_rejects"],
            }

    for j in range(n_modes):
        if not ok[j].any():
            continue
        with open(out / f"mode_{j:02d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["radius_m", "lambda", "f_hz"])
            for k, r in enumerate(radii):
                if ok[j, k]:
                    writer.writerow(
                        [f"{r:.17g}", f"{table_l[j, k]:.17g}", f"{table_f[j, k]:.17g}"]
                    )

    with open(out / "discrete_samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius_m"] + [f"rank_{j}_f_hz" for j in range(n_modes)])
        for r in radii:
            picked = _select_pillbox_modes(par, [r], n_modes)
            fs = [eigenvalue_to_frequency(pr.value) for _, pr in picked]
            writer.writerow([f"{r:.17g}"] + [f"{v:.17g}" for v in fs])

    crossing = _locate_crossing(radii, table_f, ok)
    summary = _summary_payload(
        problem="pillbox",
        sweep={"start_m": start, "stop_m": stop, "samples": int(radii.size)},
        modes=n_modes,
        per_mode=per_mode_stats,
        crossing_radius_m=crossing,
        failures=failures,
    )
    _write_json(out / "summary.json", summary)
    if crossing is not None:
        print(f"fundamental-mode crossing at r = {crossing:.6g} m")
    if failures:
        raise SolverError(f"{len(failures)} block(s) failed to track; see summary.json")


def _locate_crossing(radii, table_f, ok):
    """First sign change of f0 - f1 along the sweep, linearly interpolated."""
    if table_f.shape[0] < 2 or not (ok[0].all() and ok[1].all()):
        return None
    d = table_f[0] - table_f[1]
    for k in range(len(radii) - 1):
        if d[k] == 0.0:
            return float(radii[k])
        if d[k] * d[k + 1] < 0.0:
            w = d[k] / (d[k] - d[k + 1])
            return float(radii[k] + w * (radii[k + 1] - radii[k]))
    return None


# -- subcommand: kl-fit ------------------------------------------------------

def cmd_kl_fit(cfg, args):
    out = _out_dir(args)
    root = _Section(cfg, "config")
    obs_path = root.take("observations", kind=str)
    criterion = root.take("criterion", default=0.95, kind=float)
    root.done()
    obs = uq.load_observations(obs_path)
    kl = uq.fit_kl(obs, criterion)
    sampler = geometry.BoundarySampler(_station_angles(obs.n_variables), "radial")
    geometry.save_deformation_spec(out / "kl_model.json", sampler, kl.mean, kl.scaled_modes)

    X = obs.data - obs.data.mean(axis=0)
    spectrum = np.sort(np.linalg.eigvalsh((X.T @ X) / (obs.n_samples - 1)))[::-1]
    cum = np.cumsum(spectrum) / spectrum.sum()
    with open(out / "kl_spectrum.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "variance", "cumulative_ratio"])
        for j, (v, c) in enumerate(zip(spectrum, cum)):
            writer.writerow([j, f"{v:.17g}", f"{c:.17g}"])

    summary = _summary_payload(
        observations=str(obs_path),
        n_samples=obs.n_samples,
        n_variables=obs.n_variables,
        criterion=criterion,
        retained=kl.n_modes,
        captured_ratio=kl.captured_ratio,
        total_variance=kl.total_variance,
    )
    _write_json(out / "summary.json", summary)
    print(f"retained {kl.n_modes} of {obs.n_variables} variables "
          f"({kl.captured_ratio:.4f} of the variance)")


# -- subcommand: grid --------------------------------------------------------

def cmd_grid(cfg, args):
    out = _out_dir(args)
    root = _Section(cfg, "config")
    grid = _grid_from_section(root.section("grid"), dim=None, support=None, allow_explicit=True)
    root.done()
    uq.save_grid_csv(out / "grid.csv", grid)
    print(f"{grid.kind} grid: {grid.n_nodes} nodes in dimension {grid.dim}")


# -- subcommand: pillbox-reference -------------------------------------------

def cmd_pillbox_reference(cfg, args):
    out = _out_dir(args)
    root = _Section(cfg, "config")
    radius = root.take("radius", kind=float, lo=1e-6)
    length = root.take("length", kind=float, lo=1e-6)
    count = root.take("count", default=10, kind=int, lo=1, hi=500)
    root.done()
    table = oracle.pillbox_frequencies(radius, length, count)
    with open(out / "pillbox_reference.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "m", "n", "p", "degeneracy", "f_hz"])
        for label, f in table:
            writer.writerow(
                [label.family, label.m, label.n, label.p, label.degeneracy, f"{f:.17g}"]
            )
    print(f"{len(table)} labeled modes written for r={radius} m, l={length} m")


# -- subcommand: bench -------------------------------------------------------

def _counted_direct_solve(pen, k, sigma):
    """Shift-invert Lanczos for the k lowest modes, counting linear solves."""
    counter = [0]
    op = spla.splu((pen.stiffness - sigma * pen.mass).tocsc())

    def apply(x):
        counter[0] += 1
        return op.solve(x)

    opinv = spla.LinearOperator(pen.stiffness.shape, matvec=apply)
    v0 = np.full(pen.n, 1.0 / math.sqrt(pen.n))
    spla.eigsh(
        pen.stiffness, k=k, M=pen.mass, sigma=sigma, which="LA",
        v0=v0, OPinv=opinv, return_eigenvectors=False,
    )
    return counter[0]


def cmd_bench(cfg, args):
    out = _out_dir(args)
    t0 = time.perf_counter()
    run = _pillbox_uq_pipeline(cfg, args)
    tracked_wall = time.perf_counter() - t0

    k_direct = min(2 * run.n_modes, run.par.at([run.base_r]).n - 1)
    sigma = 0.9 * float(run.values.min())
    direct_counts = []
    t0 = time.perf_counter()
    for node in run.grid.nodes:
        pen = run.par.at([float(node[0])])
        direct_counts.append(_counted_direct_solve(pen, k_direct, sigma))
    direct_wall = time.perf_counter() - t0

    off_nodes = sum(1 for node in run.grid.nodes if float(node[0]) != run.base_r)
    pairs = run.n_modes * off_nodes
    base_count = direct_counts[_base_node(run.grid, run.base_r)]
    tracked_total = base_count + run.totals["n_solves"]
    direct_total = int(np.sum(direct_counts))
    doc = _summary_payload(
        nodes=run.grid.n_nodes,
        modes=run.n_modes,
        tracked={
            "bordered_solves": run.totals["n_solves"],
            "base_eigensolve_solves": base_count,
            "total_solves": tracked_total,
            "per_mode_point": run.totals["n_solves"] / pairs if pairs else None,
            "wall_s": tracked_wall,
        },
        direct={
            "modes_computed": k_direct,
            "solves_per_node": direct_counts,
            "total_solves": direct_total,
            "per_mode_point": (direct_total - base_count) / pairs if pairs else None,
            "wall_s": direct_wall,
        },
        solve_ratio=direct_total / tracked_total,
    )
    _write_json(out / "bench.json", doc)
    print(
        f"tracked {tracked_total} solves vs direct {direct_total} solves "
        f"(ratio {direct_total / tracked_total:.2f})"
    )


# -- entry point -------------------------------------------------------------

_HANDLERS = {
    "track": cmd_track,
    "uq": cmd_uq,
    "kl-fit": cmd_kl_fit,
    "grid": cmd_grid,
    "pillbox-reference": cmd_pillbox_reference,
    "bench": cmd_bench,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cavityuq",
        description="Eigenfrequency sensitivity studies for deformed cavities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "track": "radius sweep with identity-preserving mode tracking",
        "uq": "collocation moments of tracked eigenfrequencies",
        "kl-fit": "covariance reduction of a station observation matrix",
        "grid": "write a collocation grid as CSV",
        "pillbox-reference": "closed-form labeled cylinder mode table",
        "bench": "linear-solve comparison: tracking vs direct eigensolves",
    }
    for name, handler in _HANDLERS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", required=True, help="JSON study configuration")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the sampling seed of synthetic sources")
        sp.set_defaults(handler=handler)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load_config(args.config)
        args.handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CavityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
