"""Eigenvalue tracking along matrix homotopies.

One tracked mode advances through t in [0, 1] by first-order prediction from
bordered-system derivatives, Newton correction against the pencil at the new
t, and a step-size controller driven by the Newton iteration count: fast
convergence grows the step, slow or failed correction rejects it and shrinks.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .eigen import Eigenpair, group_clusters
from .errors import (
    DegeneracyError,
    DomainError,
    IncompleteTableError,
    NewtonFailure,
    TrackingFailure,
)
from .pencil import HomotopyPencil, eigenvalue_to_frequency

START_GAP_WARN = 1e-6


@dataclass(frozen=True)
class TrackConfig:
    """Step-size and Newton parameters.

    Convergence in at most n1 iterations grows the next step by eta1; more
    than n2 iterations (or divergence) rejects the step and retries at eta2
    times the size; anything between keeps the step.
    """

    n1: int = 3
    eta1: float = 1.1
    n2: int = 5
    eta2: float = 2.0 / 3.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 8
    min_step: float = 1e-6
    initial_step: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.eta2 < 1.0 < self.eta1):
            raise DomainError(f"need 0 < eta2 < 1 < eta1, got {self.eta2}, {self.eta1}")
        if not 0 < self.n1 < self.n2:
            raise DomainError(f"need 0 < n1 < n2, got {self.n1}, {self.n2}")
        if self.min_step <= 0 or self.initial_step <= 0:
            raise DomainError("steps must be positive")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise DomainError("bad Newton parameters")


@dataclass
class TrackState:
    """Tracker position with its accepted history."""

    t: float
    eigenpair: Eigenpair
    c: np.ndarray
    step: float
    trajectory: list = field(default_factory=list)   # (t, lambda) accepted
    newton_log: list = field(default_factory=list)   # iterations per accepted step
    n_solves: int = 0                                # bordered solves, total
    n_rejects: int = 0
    min_overlap: float = 1.0
    flagged: bool = False                            # degenerate start


def _scaled_residual(K, M, lam, e, norm_k, norm_m):
    r = K @ e - lam * (M @ e)
    return float(np.linalg.norm(r) / ((norm_k + abs(lam) * norm_m) * np.linalg.norm(e)))


def _bordered_solve(K, M, lam, e, c, rhs):
    """Solve [[K - lam M, -M e], [c^T, 0]] x = rhs by sparse LU."""
    Me = M @ e
    A = sp.bmat(
        [[(K - lam * M).tocsc(), -Me[:, None]], [sp.csr_matrix(c[None, :]), None]],
        format="csc",
    )
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise DegeneracyError(
            "bordered matrix is singular; eigenvalue nearly multiple or "
            "normalization vector orthogonal to the eigenvector"
        ) from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise DegeneracyError("bordered solve produced non-finite values")
    return x, A


def eigenpair_derivative(pencil, pair, k_prime, m_prime, c):
    """t-derivatives (e', lambda') of an isolated eigenpair.

    Differentiating K e = lambda M e and c^T e = 1 gives the bordered system
    [[K - lambda M, -M e], [c^T, 0]] [e'; lambda'] = [-K' e + lambda M' e; 0].
    """
    e, lam = pair.vector, pair.value
    rhs = np.empty(e.size + 1)
    rhs[:-1] = -(k_prime @ e) + lam * (m_prime @ e)
    rhs[-1] = 0.0
    x, A = _bordered_solve(pencil.stiffness, pencil.mass, lam, e, c, rhs)
    resid = np.linalg.norm(A @ x - rhs)
    scale = spla.norm(A, np.inf) * np.linalg.norm(x) + np.linalg.norm(rhs) + 1e-300
    if resid > 1e-10 * scale:
        raise DegeneracyError(f"bordered solve residual {resid / scale:.3e} too large")
    return x[:-1], float(x[-1])


def predict(pair, derivative, dt):
    """First-order Taylor step: (e + dt e', lambda + dt lambda')."""
    de, dlam = derivative
    return pair.vector + dt * de, pair.value + dt * dlam


def newton_correct(pencil, e0, lam0, c, tol, max_iter):
    """Newton-Raphson on the eigenproblem plus normalization constraint.

    Converged when the scaled eigenproblem residual drops below tol and the
    last eigenvalue update satisfies |dlam| <= tol (1 + |lambda|).  Returns
    (Eigenpair, iterations); raises NewtonFailure on divergence or cap.
    The failure carries .iterations for the step-size controller.
    """
    K, M = pencil.stiffness, pencil.mass
    norm_k = spla.norm(K, np.inf)
    norm_m = spla.norm(M, np.inf)
    e = np.asarray(e0, dtype=float).copy()
    lam = float(lam0)
    if not (np.all(np.isfinite(e)) and math.isfinite(lam)):
        raise NewtonFailure("non-finite initial guess")
    dlam = None
    for it in range(max_iter + 1):
        res = _scaled_residual(K, M, lam, e, norm_k, norm_m)
        if res <= tol and (dlam is None or abs(dlam) <= tol * (1.0 + abs(lam))):
            return Eigenpair(lam, e, res), it
        if it == max_iter:
            break
        rhs = np.empty(e.size + 1)
        rhs[:-1] = -(K @ e - lam * (M @ e))
        rhs[-1] = -(c @ e - 1.0)
        try:
            x, _ = _bordered_solve(K, M, lam, e, c, rhs)
        except DegeneracyError as exc:
            failure = NewtonFailure(f"bordered Jacobian failed: {exc}")
            failure.iterations = it
            raise failure from exc
        e += x[:-1]
        dlam = x[-1]
        lam += dlam
        if not (np.all(np.isfinite(e)) and math.isfinite(lam)):
            failure = NewtonFailure("iteration diverged to non-finite values")
            failure.iterations = it + 1
            raise failure
    failure = NewtonFailure(f"no convergence within {max_iter} iterations")
    failure.iterations = max_iter
    raise failure


def _normalized_accept(pencil, pair, prev_vector):
    """M-normalize, keep orientation continuous, refresh c = M e."""
    M = pencil.mass
    e = pair.vector / math.sqrt(pair.vector @ (M @ pair.vector))
    overlap = float(prev_vector @ (M @ e))
    if overlap < 0.0:
        e = -e
        overlap = -overlap
    c = M @ e
    return Eigenpair(pair.value, e, pair.residual), c, overlap


def track(homotopy, start, cfg=TrackConfig(), keep_trajectory=True):
    """Carry one eigenpair from t = 0 to t = 1 along the homotopy."""
    pen0 = homotopy.at(0.0)
    K0, M0 = pen0.stiffness, pen0.mass
    e = np.asarray(start.vector, dtype=float)
    e = e / math.sqrt(e @ (M0 @ e))
    lam = float(start.value)
    res0 = _scaled_residual(K0, M0, lam, e, spla.norm(K0, np.inf), spla.norm(M0, np.inf))
    if res0 > 1e-8:
        raise DomainError(f"start pair residual {res0:.3e} violates the invariant at t=0")

    state = TrackState(
        t=0.0,
        eigenpair=Eigenpair(lam, e, res0),
        c=M0 @ e,
        step=min(cfg.initial_step, 1.0),
    )
    if keep_trajectory:
        state.trajectory.append((0.0, lam))

    k_prime, m_prime = homotopy.derivative()
    derivative = None
    pen_t = pen0
    while state.t < 1.0:
        if derivative is None:
            derivative = eigenpair_derivative(pen_t, state.eigenpair, k_prime, m_prime, state.c)
            state.n_solves += 1
        dt = min(state.step, 1.0 - state.t)
        t_new = state.t + dt
        e_guess, lam_guess = predict(state.eigenpair, derivative, dt)
        pen_new = homotopy.at(t_new)
        try:
            pair_new, iters = newton_correct(
                pen_new, e_guess, lam_guess, state.c,
                cfg.newton_tol, min(cfg.newton_max_iter, cfg.n2),
            )
            state.n_solves += iters
            accepted = True
        except NewtonFailure as exc:
            state.n_solves += getattr(exc, "iterations", cfg.n2)
            accepted = False
            iters = None
        if accepted:
            pair_acc, c, overlap = _normalized_accept(pen_new, pair_new, state.eigenpair.vector)
            state.t = t_new
            state.eigenpair = pair_acc
            state.c = c
            state.min_overlap = min(state.min_overlap, overlap)
            state.newton_log.append(iters)
            if keep_trajectory:
                state.trajectory.append((t_new, pair_acc.value))
            pen_t = pen_new
            derivative = None
            if iters <= cfg.n1:
                state.step *= cfg.eta1
        else:
            state.n_rejects += 1
            state.step *= cfg.eta2
            if state.step < cfg.min_step:
                raise TrackingFailure(
                    f"step underflow at t={state.t:.6f} (step {state.step:.3e} "
                    f"< min_step {cfg.min_step:.3e})",
                    state=state,
                )
    return state


def track_modes(homotopy, starts, cfg=TrackConfig()):
    """Track several start pairs independently; flag degenerate clusters.

    Near-degenerate start values (relative gap below 1e-6) violate the
    isolated-mode assumption; they are tracked anyway with one normalization
    vector per member, relying on the discretization split, and flagged.
    """
    values = [p.value for p in starts]
    order = np.argsort(values, kind="stable")
    flagged = set()
    for grp in group_clusters([values[i] for i in order], rtol=START_GAP_WARN):
        if len(grp) > 1:
            flagged.update(int(order[i]) for i in grp)
    if flagged:
        warnings.warn(
            f"{len(flagged)} start eigenvalues are nearly degenerate "
            f"(relative gap < {START_GAP_WARN:g}); tracked identities inside "
            "each cluster follow the discretization split",
            stacklevel=2,
        )
    results = []
    for j, start in enumerate(starts):
        st = track(homotopy, start, cfg)
        st.flagged = j in flagged
        results.append(st)
    _reorthogonalize_clusters(results, homotopy.at(1.0).mass)
    return results


def _reorthogonalize_clusters(states, M, rtol=1e-9):
    """M-orthogonalize final vectors of members that still share an eigenvalue."""
    order = np.argsort([s.eigenpair.value for s in states], kind="stable")
    vals = [states[i].eigenpair.value for i in order]
    for grp in group_clusters(vals, rtol=rtol):
        members = [states[order[i]] for i in grp]
        if len(members) < 2 or not all(m.flagged for m in members):
            continue
        done = []
        for st in members:
            v = st.eigenpair.vector.copy()
            for u in done:
                v -= (u @ (M @ v)) * u
            v /= math.sqrt(v @ (M @ v))
            done.append(v)
            st.eigenpair = Eigenpair(st.eigenpair.value, v, st.eigenpair.residual)
            st.c = M @ v


@dataclass
class ModeTable:
    """Per-mode eigenvalues across parametric points, identity-consistent.

    Row j follows tracked mode j; column k is one parametric point.  ok
    marks entries whose track succeeded.
    """

    values: np.ndarray
    ok: np.ndarray

    @property
    def complete(self):
        return bool(self.ok.all())

    def require_complete(self):
        if not self.complete:
            bad = int((~self.ok).sum())
            raise IncompleteTableError(f"mode table has {bad} failed entries")

    def frequencies(self):
        self.require_complete()
        return np.vectorize(eigenvalue_to_frequency)(self.values)


def match_modes(base_pairs, tracked_columns):
    """Assemble the mode table from per-point tracking outcomes.

    tracked_columns[k][j] is the TrackState for mode j at point k, or None
    where tracking failed.  Rows keep the identity of base_pairs.
    """
    n_modes = len(base_pairs)
    n_pts = len(tracked_columns)
    values = np.full((n_modes, n_pts), np.nan)
    ok = np.zeros((n_modes, n_pts), dtype=bool)
    for k, column in enumerate(tracked_columns):
        if len(column) != n_modes:
            raise DomainError(f"column {k} has {len(column)} entries, expected {n_modes}")
        for j, st in enumerate(column):
            if st is not None:
                values[j, k] = st.eigenpair.value
                ok[j, k] = True
    return ModeTable(values, ok)


def track_chain(parametric, deltas, starts, cfg=TrackConfig()):
    """Track modes through a sequence of waypoints by chained homotopies.

    Returns (ModeTable over the waypoints, final TrackStates, stats) where
    stats aggregates Newton counts and bordered solves across all legs.
    """
    deltas = [np.atleast_1d(np.asarray(d, dtype=float)) for d in deltas]
    if len(deltas) < 1:
        raise DomainError("need at least one waypoint")
    n_modes = len(starts)
    values = np.full((n_modes, len(deltas)), np.nan)
    ok = np.zeros((n_modes, len(deltas)), dtype=bool)
    values[:, 0] = [p.value for p in starts]
    ok[:, 0] = True
    current = list(starts)
    stats = {"newton_iterations": [], "n_solves": 0, "n_rejects": 0, "flagged": False}
    finals = None
    for k in range(1, len(deltas)):
        homotopy = HomotopyPencil(parametric.at(deltas[k - 1]), parametric.at(deltas[k]))
        finals = track_modes(homotopy, current, cfg)
        for j, st in enumerate(finals):
            values[j, k] = st.eigenpair.value
            ok[j, k] = True
            stats["newton_iterations"].extend(st.newton_log)
            stats["n_solves"] += st.n_solves
            stats["n_rejects"] += st.n_rejects
            stats["flagged"] = stats["flagged"] or st.flagged
        current = [st.eigenpair for st in finals]
    return ModeTable(values, ok), finals, stats


def save_trajectory_csv(path, state):
    """Dump accepted samples: t, lambda, f, step, newton_iters."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "lambda", "f", "step", "newton_iters"])
        prev_t = 0.0
        for i, (t, lam) in enumerate(state.trajectory):
            iters = 0 if i == 0 else state.newton_log[i - 1]
            writer.writerow(
                [f"{t:.17g}", f"{lam:.17g}", f"{eigenvalue_to_frequency(lam):.17g}",
                 f"{t - prev_t:.17g}", iters]
            )
            prev_t = t
