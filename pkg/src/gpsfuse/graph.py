"""Factor-graph estimator: Levenberg-Marquardt over navigation states and
the GPS extrinsics, with a sliding-window scope and a full-graph scope.

States older than the window are fixed by :meth:`GraphProblem.solve_window`
and stay untouched by later window solves. :meth:`GraphProblem.solve_full`
re-optimises every state (the full-graph pass) unless asked to respect the
fixation mask.
"""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import factors as F
from .imu import GRAVITY, NavState

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

EXT = "ext"
_POSE_FREE = np.arange(6, 15)
_ALL = np.arange(15)


class GraphError(ValueError):
    """Invalid problem construction, e.g. a factor referencing a missing state."""


@dataclass
class SolverSettings:
    max_iterations: int = 20
    lambda_init: float = 1e-4
    lambda_min: float = 1e-9
    lambda_max: float = 1e4
    rel_tol: float = 1e-8
    grad_tol: float = 1e-10
    step_tol: float = 1e-10
    window_size: int = 10
    max_gps_delay: float = 0.5
    gps_loss: str = "none"  # "none" | "cauchy"
    gps_loss_scale: float = 3.0
    dense_limit: int = 600
    gravity: tuple = tuple(GRAVITY)

    @classmethod
    def from_mapping(cls, data: dict) -> SolverSettings:
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown solver settings: {sorted(unknown)}")
        out = cls()
        for k, v in data.items():
            default = getattr(out, k)
            if isinstance(default, tuple):
                v = tuple(float(x) for x in v)
            elif isinstance(default, bool):
                v = bool(v)
            elif isinstance(default, int):
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            setattr(out, k, v)
        return out

    @classmethod
    def from_file(cls, path) -> SolverSettings:
        """Read ``key = value`` lines (TOML syntax)."""
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gravity"] = list(self.gravity)
        return d


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    reason: str
    cost_history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.reason not in ("max_iterations", "stalled")


@dataclass
class _Scope:
    variable: list  # state ids, ordered
    anchored: set
    ext_variable: bool
    gps: list
    gps_frozen: list
    relpose: list
    imu: list
    priors: list


@dataclass
class _Batch:
    slots: dict
    order: list
    n_var: int
    gps: tuple | None = None
    imu: tuple | None = None
    rel: tuple | None = None
    priors: list = field(default_factory=list)
    frozen: tuple | None = None
    keep: np.ndarray | None = None
    ext_variable: bool = False
    layout: dict | None = None


class GraphProblem:
    def __init__(self, settings: SolverSettings | None = None, ext: F.ExtrinsicsGW | None = None):
        self.settings = settings or SolverSettings()
        self.states: dict[int, NavState] = {}
        self.fixed: dict[int, bool] = {}
        self.ext = ext
        self.gps_factors: list[F.GpsFactor] = []
        self.relpose_factors: list[F.RelPoseFactor] = []
        self.imu_factors: list[F.ImuFactor] = []
        self.prior_factors: list[F.BiasPriorFactor] = []
        self._times: list[float] = []
        self._ids: list[int] = []
        self._attached: dict[int, list] = {}
        self._version: dict[int, int] = {}
        self._frozen_cache: dict[int, tuple] = {}

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.settings.gravity, dtype=float)

    # --- construction ------------------------------------------------------

    def add_state(self, state: NavState, fixed: bool = False) -> int:
        if self._times and state.t < self._times[-1]:
            raise GraphError("states must be added in time order")
        sid = len(self._ids)
        self.states[sid] = state
        self.fixed[sid] = fixed
        self._ids.append(sid)
        self._times.append(state.t)
        self._attached[sid] = []
        self._version[sid] = 0
        return sid

    def set_state(self, sid: int, state: NavState) -> None:
        if sid not in self.states:
            raise GraphError(f"unknown state {sid}")
        self.states[sid] = state
        self._version[sid] += 1

    def set_extrinsics(self, ext: F.ExtrinsicsGW) -> None:
        self.ext = ext

    def add_factor(self, factor) -> int:
        if isinstance(factor, F.GpsFactor):
            self._require(factor.state_id)
            if self.ext is None:
                raise GraphError("GPS factors need initialised extrinsics")
            lst, ids = self.gps_factors, (factor.state_id,)
        elif isinstance(factor, F.RelPoseFactor):
            lst, ids = self.relpose_factors, (factor.i, factor.j)
        elif isinstance(factor, F.ImuFactor):
            lst, ids = self.imu_factors, (factor.i, factor.j)
        elif isinstance(factor, F.BiasPriorFactor):
            lst, ids = self.prior_factors, (factor.state_id,)
        else:
            raise GraphError(f"unsupported factor type {type(factor).__name__}")
        for i in ids:
            self._require(i)
        lst.append(factor)
        for i in set(ids):
            self._attached[i].append(factor)
        return len(lst) - 1

    def _require(self, sid):
        if sid not in self.states:
            raise GraphError(f"factor references missing state {sid}")

    @property
    def num_factors(self) -> int:
        return (len(self.gps_factors) + len(self.relpose_factors) + len(self.imu_factors)
                + len(self.prior_factors))

    def state_ids(self) -> list[int]:
        return list(self._ids)

    def anchor_state_for(self, t: float, eps: float = 1e-9) -> int | None:
        """Most recent state at or before ``t``."""
        k = bisect.bisect_right(self._times, t + eps) - 1
        return self._ids[k] if k >= 0 else None

    def last_gps_state(self) -> int | None:
        if not self.gps_factors:
            return None
        return max(f.state_id for f in self.gps_factors)

    def fix_older_than(self, sid: int) -> None:
        for i in self._ids:
            if i >= sid:
                break
            self.fixed[i] = True

    # --- scopes ------------------------------------------------------------

    def _scope(self, variable: list, anchored: set) -> _Scope:
        var = set(variable)
        gps, gps_frozen, rel, imu, pri = [], [], [], [], []
        seen = set()
        for sid in variable:
            for f in self._attached[sid]:
                if id(f) in seen:
                    continue
                seen.add(id(f))
                if isinstance(f, F.GpsFactor):
                    gps.append(f)
                elif isinstance(f, F.RelPoseFactor):
                    rel.append(f)
                elif isinstance(f, F.ImuFactor):
                    imu.append(f)
                else:
                    pri.append(f)
        ext_var = self.ext is not None and not self.ext.fixed and bool(self.gps_factors)
        if ext_var:
            gps_frozen = [f for f in self.gps_factors if f.state_id not in var]
        return _Scope(variable, anchored, ext_var, gps, gps_frozen, rel, imu, pri)

    def _needs_gauge(self, variable: list) -> bool:
        var = set(variable)
        if any(self.fixed[i] or i not in var for i in self._ids):
            # a held state already pins the gauge (if connected)
            return False
        if self.ext is not None and self.ext.fixed and self.gps_factors:
            return False
        return True

    # --- evaluation ----------------------------------------------------------

    def _loss_batch(self, s: np.ndarray):
        """Robust cost ``rho(s)`` and its derivative for squared norms ``s``."""
        if self.settings.gps_loss == "cauchy":
            c2 = self.settings.gps_loss_scale ** 2
            return c2 * np.log1p(s / c2), 1.0 / (1.0 + s / c2)
        return s, np.ones_like(s)

    def _frozen_terms(self, f: F.GpsFactor):
        sid = f.state_id
        key = id(f)
        cached = self._frozen_cache.get(key)
        if cached is not None and cached[0] == (sid, self._version[sid]):
            return cached[1], cached[2]
        pred, cov, _ = F.predicted_pose(f, self.states[sid], self.gravity)
        x = F.antenna_position(pred, f.p_SA)
        A = np.hstack((-np.eye(3), F.skew(pred.C @ f.p_SA)))
        M = A @ cov[0:6, 0:6] @ A.T
        self._frozen_cache[key] = ((sid, self._version[sid]), x, M)
        return x, M

    def _frozen_batch(self, scope: _Scope):
        """GPS factors on held states, reduced to terms that only depend on T_GW."""
        if not scope.gps_frozen:
            return None
        n = len(scope.gps_frozen)
        X = np.empty((n, 3))
        M = np.empty((n, 3, 3))
        for k, f in enumerate(scope.gps_frozen):
            X[k], M[k] = self._frozen_terms(f)
        Z = np.array([f.measurement.z for f in scope.gps_frozen])
        S0 = np.array([f.measurement.cov for f in scope.gps_frozen])
        return X, M, Z, S0

    def _frozen_eval(self, batch, ext: F.ExtrinsicsGW, jac: bool):
        X, M, Z, S0 = batch
        C = ext.C
        W = np.linalg.inv(S0 + np.einsum("ij,njk,lk->nil", C, M, C))
        CX = X @ C.T
        E = Z - CX - ext.p_GW
        rho, wts = self._loss_batch(np.einsum("ni,nij,nj->n", E, W, E))
        cost = 0.5 * float(np.sum(rho))
        if not jac:
            return cost, None, None
        Je = np.zeros((len(X), 3, 4))
        Je[:, 0, 0] = Je[:, 1, 1] = Je[:, 2, 2] = -1.0
        Je[:, :, 3] = np.cross(CX, F.EZ)
        WJ = wts[:, None, None] * (W @ Je)
        H = np.einsum("nji,njk->ik", Je, WJ)
        g = np.einsum("nji,nj->i", WJ, E)
        return cost, H, g

    def _prepare(self, scope: _Scope) -> _Batch:
        """Slot layout and stacked factor data for one optimisation."""
        slots = {sid: k for k, sid in enumerate(scope.variable)}
        for f in scope.gps:
            slots.setdefault(f.state_id, len(slots))
        for f in scope.relpose + scope.imu:
            slots.setdefault(f.i, len(slots))
            slots.setdefault(f.j, len(slots))
        for f in scope.priors:
            slots.setdefault(f.state_id, len(slots))
        b = _Batch(slots=slots, order=sorted(slots, key=slots.get), n_var=len(scope.variable))
        if scope.gps:
            b.gps = (F.pack_gps(scope.gps), np.array([slots[f.state_id] for f in scope.gps]))
        if scope.imu:
            b.imu = (F.pack_imu(scope.imu), np.array([slots[f.i] for f in scope.imu]),
                     np.array([slots[f.j] for f in scope.imu]))
        if scope.relpose:
            b.rel = (F.pack_relpose(scope.relpose), np.array([slots[f.i] for f in scope.relpose]),
                     np.array([slots[f.j] for f in scope.relpose]))
        if scope.priors:
            b.priors = [(slots[f.state_id], f) for f in scope.priors]
        b.frozen = self._frozen_batch(scope)
        # error-state columns kept in the linear system
        keep = np.ones(15 * b.n_var + (4 if scope.ext_variable else 0), dtype=bool)
        for sid in scope.anchored:
            if sid in slots and slots[sid] < b.n_var:
                keep[15 * slots[sid]:15 * slots[sid] + 6] = False
        b.keep = keep
        b.ext_variable = scope.ext_variable
        return b

    def _evaluate(self, b: _Batch, states: dict, ext, jac: bool):
        """Total cost and, if ``jac``, whitened Hessian/gradient contributions.

        Contributions are returned as ``(pairs, grads, ext_terms)`` where
        ``pairs`` holds ``(slot_a, slot_b, blocks)`` with
        ``blocks[k] = J_a^T J_b``.
        """
        grav = self.gravity
        sa = F.StateArrays.from_states(states[sid] for sid in b.order)
        cost = 0.0
        pairs, grads = [], []
        H_ee = np.zeros((4, 4))
        g_e = np.zeros(4)
        H_se = None

        if b.gps is not None:
            pk, si = b.gps
            e, W, Js, Je = F.gps_batch(pk, sa.take(si), ext, grav, jac)
            rho, wts = self._loss_batch(np.einsum("ni,nij,nj->n", e, W, e))
            cost += 0.5 * float(np.sum(rho))
            if jac:
                WJ = wts[:, None, None] * (W @ Js)
                pairs.append((si, si, Js.transpose(0, 2, 1) @ WJ))
                grads.append((si, np.einsum("nji,nj->ni", WJ, e)))
                if b.ext_variable:
                    WJe = wts[:, None, None] * (W @ Je)
                    H_ee += np.einsum("nji,njk->ik", Je, WJe)
                    g_e += np.einsum("nji,nj->i", WJe, e)
                    H_se = (si, Js.transpose(0, 2, 1) @ WJe)

        for pack, kernel in ((b.imu, "imu"), (b.rel, "rel")):
            if pack is None:
                continue
            pk, ii, jj = pack
            if kernel == "imu":
                r, Ji, Jj = F.imu_batch(pk, sa.take(ii), sa.take(jj), grav, jac)
            else:
                r, Ji, Jj = F.relpose_batch(pk, sa.take(ii), sa.take(jj), jac)
            U = pk["sqrt_info"]
            r = np.einsum("nij,nj->ni", U, r)
            cost += 0.5 * float(np.sum(r * r))
            if jac:
                Ji, Jj = U @ Ji, U @ Jj
                JiT, JjT = Ji.transpose(0, 2, 1), Jj.transpose(0, 2, 1)
                Hij = JiT @ Jj
                pairs += [(ii, ii, JiT @ Ji), (jj, jj, JjT @ Jj), (ii, jj, Hij),
                          (jj, ii, Hij.transpose(0, 2, 1))]
                grads += [(ii, np.einsum("nji,nj->ni", Ji, r)), (jj, np.einsum("nji,nj->ni", Jj, r))]

        for slot, f in b.priors:
            r, J = F.bias_prior_residual(f, states[b.order[slot]])
            r, J = f.sqrt_info @ r, f.sqrt_info @ J
            cost += 0.5 * float(r @ r)
            if jac:
                idx = np.array([slot])
                pairs.append((idx, idx, (J.T @ J)[None]))
                grads.append((idx, (J.T @ r)[None]))

        if b.frozen is not None:
            c, Hf, gf = self._frozen_eval(b.frozen, ext, jac)
            cost += c
            if jac:
                H_ee += Hf
                g_e += gf
        if not jac:
            return cost, None
        return cost, (pairs, grads, (H_ee, g_e, H_se))

    def _layout(self, b: _Batch, terms):
        """Flat target indices of every Hessian/gradient entry (fixed per solve)."""
        pairs, grads, (_, _, H_se) = terms
        S = b.n_var
        ar = np.arange(15)
        keep = b.keep
        new = np.cumsum(keep) - 1
        n = int(keep.sum())
        h_rows, h_cols, h_sel, g_idx, g_sel = [], [], [], [], []
        for ia, ib, blk in pairs:
            ra = np.broadcast_to((ia * 15)[:, None, None] + ar[None, :, None], blk.shape)
            cb = np.broadcast_to((ib * 15)[:, None, None] + ar[None, None, :], blk.shape)
            ok = ((ia < S) & (ib < S))[:, None, None]
            ok = ok & keep[np.minimum(ra, len(keep) - 1)] & keep[np.minimum(cb, len(keep) - 1)]
            ok = ok.ravel()
            h_sel.append(ok)
            h_rows.append(new[ra.ravel()[ok]])
            h_cols.append(new[cb.ravel()[ok]])
        for ia, vec in grads:
            idx = ((ia * 15)[:, None] + ar[None, :]).ravel()
            ok = np.repeat(ia < S, 15) & keep[np.minimum(idx, len(keep) - 1)]
            g_sel.append(ok)
            g_idx.append(new[idx[ok]])
        ext = None
        if b.ext_variable:
            ae = new[15 * S + np.arange(4)]
            se = None
            if H_se is not None:
                ia, blk = H_se
                ra = np.broadcast_to((ia * 15)[:, None, None] + ar[None, :, None], blk.shape)
                ok = ((ia < S)[:, None, None] & keep[np.minimum(ra, len(keep) - 1)]).ravel()
                ce = np.broadcast_to(ae[None, None, :], blk.shape).ravel()[ok]
                se = (ok, new[ra.ravel()[ok]], ce)
            ext = (ae, se)
        rows = np.concatenate(h_rows) if h_rows else np.zeros(0, dtype=int)
        cols = np.concatenate(h_cols) if h_cols else np.zeros(0, dtype=int)
        if ext is not None:
            ae, se = ext
            rows = np.concatenate((rows, np.repeat(ae, 4)))
            cols = np.concatenate((cols, np.tile(ae, 4)))
            if se is not None:
                rows = np.concatenate((rows, se[1], se[2]))
                cols = np.concatenate((cols, se[2], se[1]))
        g_all = np.concatenate(g_idx) if g_idx else np.zeros(0, dtype=int)
        if ext is not None:
            g_all = np.concatenate((g_all, ext[0]))
        return dict(n=n, rows=rows, cols=cols, flat=rows * n + cols, h_sel=h_sel,
                    g_sel=g_sel, g_idx=g_all, ext=ext,
                    dense=n <= self.settings.dense_limit)

    def _assemble(self, b: _Batch, terms):
        """Hessian (dense array or CSR) and gradient over the kept columns."""
        if b.layout is None:
            b.layout = self._layout(b, terms)
        L = b.layout
        pairs, grads, (H_ee, g_e, H_se) = terms
        vals = [blk.ravel()[ok] for (_, _, blk), ok in zip(pairs, L["h_sel"])]
        gvals = [vec.ravel()[ok] for (_, vec), ok in zip(grads, L["g_sel"])]
        if L["ext"] is not None:
            vals.append(H_ee.ravel())
            gvals.append(g_e)
            se = L["ext"][1]
            if se is not None:
                v = H_se[1].ravel()[se[0]]
                vals += [v, v]
        vals = np.concatenate(vals) if vals else np.zeros(0)
        gv = np.concatenate(gvals) if gvals else np.zeros(0)
        n = L["n"]
        g = np.bincount(L["g_idx"], weights=gv, minlength=n)
        if L["dense"]:
            H = np.bincount(L["flat"], weights=vals, minlength=n * n).reshape(n, n)
        else:
            H = scipy.sparse.coo_matrix((vals, (L["rows"], L["cols"])), shape=(n, n)).tocsr()
        return H, g

    def _index(self, b: _Batch) -> dict:
        index = {}
        new = np.cumsum(b.keep) - 1
        for k in range(b.n_var):
            cols = np.flatnonzero(b.keep[15 * k:15 * k + 15])
            index[b.order[k]] = (int(new[15 * k + cols[0]]), cols)
        if b.ext_variable:
            index[EXT] = (int(new[15 * b.n_var]), np.arange(4))
        return index

    def linearize(self, variable: list | None = None, anchored: set | None = None):
        """Normal equations ``(H, g)`` at the current estimate.

        Returns ``(H, g, index)``; ``H`` is dense, ``index`` maps a state id or
        ``"ext"`` to ``(offset, error-state columns)``.
        """
        variable = list(self._ids) if variable is None else list(variable)
        scope = self._scope(variable, anchored or set())
        b = self._prepare(scope)
        _, terms = self._evaluate(b, self.states, self.ext, True)
        H, g = self._assemble(b, terms)
        return (H if isinstance(H, np.ndarray) else H.toarray()), g, self._index(b)

    def cost(self) -> float:
        """Total cost of every factor at the current estimate."""
        scope = self._scope(list(self._ids), set())
        scope.gps_frozen = []
        c, _ = self._evaluate(self._prepare(scope), self.states, self.ext, False)
        return c

    # --- solving -------------------------------------------------------------

    def _retract(self, b: _Batch, dx, states, ext):
        full = np.zeros(len(b.keep))
        full[b.keep] = dx
        new_states = dict(states)
        for k in range(b.n_var):
            sid = b.order[k]
            new_states[sid] = states[sid].retract(full[15 * k:15 * k + 15])
        new_ext = ext
        if b.ext_variable:
            new_ext = ext.retract(full[15 * b.n_var:])
        return new_states, new_ext

    def _solve_linear(self, H, g, lam):
        n = len(g)
        d = H.diagonal()
        D = d + 1e-12 * max(1.0, float(d.max()) if n else 1.0)
        if isinstance(H, np.ndarray):
            A = H.copy()
            A[np.diag_indices(n)] += lam * D
            try:
                c = scipy.linalg.cho_factor(A, check_finite=False)
                return -scipy.linalg.cho_solve(c, g, check_finite=False)
            except np.linalg.LinAlgError:
                return None
        A = (H + scipy.sparse.diags(lam * D)).tocsc()
        try:
            dx = -scipy.sparse.linalg.splu(A).solve(g)
        except RuntimeError:
            return None
        return dx if np.all(np.isfinite(dx)) else None

    def _optimise(self, scope: _Scope) -> SolveReport:
        s = self.settings
        b = self._prepare(scope)
        n = int(b.keep.sum())
        states = {sid: self.states[sid] for sid in b.order}
        ext = self.ext
        if n == 0:
            c, _ = self._evaluate(b, states, ext, False)
            return SolveReport(c, c, 0, "no_variables", [c])
        cost, terms = self._evaluate(b, states, ext, True)
        initial = cost
        history = [cost]
        lam = s.lambda_init
        reason = "max_iterations"
        it = 0
        H = None
        while it < s.max_iterations:
            H, g = self._assemble(b, terms)
            if np.max(np.abs(g)) < s.grad_tol:
                reason = "gradient"
                break
            accepted = False
            while True:
                dx = self._solve_linear(H, g, lam)
                if dx is not None:
                    trial_states, trial_ext = self._retract(b, dx, states, ext)
                    trial_cost, _ = self._evaluate(b, trial_states, trial_ext, False)
                    if np.isfinite(trial_cost) and trial_cost <= cost:
                        accepted = True
                        break
                if lam >= s.lambda_max:
                    break
                lam = min(lam * 10.0, s.lambda_max)
            if not accepted:
                reason = "stalled"
                break
            it += 1
            lam = max(lam / 10.0, s.lambda_min)
            rel = (cost - trial_cost) / max(cost, 1e-300)
            states, ext, cost = trial_states, trial_ext, trial_cost
            history.append(cost)
            if cost == 0.0 or rel < s.rel_tol:
                reason = "relative_change"
                break
            if np.max(np.abs(dx)) < s.step_tol:
                reason = "step"
                break
            cost, terms = self._evaluate(b, states, ext, True)
        for k in range(b.n_var):
            self.set_state(b.order[k], states[b.order[k]])
        if b.ext_variable:
            self.ext = ext
        diag = self._diagnostics(H, self._index(b)) if H is not None else {}
        return SolveReport(initial, cost, it, reason, history, diag)

    @staticmethod
    def _diagnostics(H, index) -> dict:
        """Condition numbers of the diagonal Hessian blocks."""
        groups: dict[int, list] = {}
        out = {}
        for key, (off, c) in index.items():
            blk = H[off:off + len(c), off:off + len(c)]
            blk = blk if isinstance(blk, np.ndarray) else blk.toarray()
            if key == EXT:
                ev = np.linalg.eigvalsh(0.5 * (blk + blk.T))
                out["ext_condition"] = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
                out["ext_min_eigenvalue"] = float(ev[0])
            else:
                groups.setdefault(len(c), []).append(blk)
        worst = 0.0
        for blks in groups.values():
            A = np.array(blks)
            ev = np.linalg.eigvalsh(0.5 * (A + A.transpose(0, 2, 1)))
            with np.errstate(divide="ignore"):
                cond = np.where(ev[:, 0] > 0, ev[:, -1] / np.where(ev[:, 0] > 0, ev[:, 0], 1.0), np.inf)
            worst = max(worst, float(cond.max()))
        out["state_condition_max"] = worst
        return out

    def window_ids(self, window: int | None = None) -> list[int]:
        K = window or self.settings.window_size
        free = [i for i in self._ids if not self.fixed[i]]
        return free[-K:]

    def solve_window(self, window: int | None = None) -> SolveReport:
        """Optimise the last ``window`` non-fixed states; older ones become fixed."""
        ids = self.window_ids(window)
        if not ids:
            raise GraphError("empty window")
        self.fix_older_than(ids[0])
        anchored = {ids[0]} if self._needs_gauge(ids) else set()
        return self._optimise(self._scope(ids, anchored))

    def solve_full(self, respect_fixation: bool = False) -> SolveReport:
        """Optimise the whole graph; the first pose is held when the gauge is free."""
        if respect_fixation:
            ids = [i for i in self._ids if not self.fixed[i]]
        else:
            ids = list(self._ids)
        if not ids:
            raise GraphError("no states to optimise")
        if respect_fixation:
            anchored = {ids[0]} if self._needs_gauge(ids) else set()
        else:
            gps_pins = self.ext is not None and self.ext.fixed and bool(self.gps_factors)
            anchored = set() if gps_pins else {ids[0]}
        return self._optimise(self._scope(ids, anchored))

    # --- export ----------------------------------------------------------------

    def dump_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
                        "bgx", "bgy", "bgz", "bax", "bay", "baz", "fixed"])
            for sid in self._ids:
                s = self.states[sid]
                w.writerow([sid, repr(s.t), *map(repr, s.p), *map(repr, s.q.q), *map(repr, s.v),
                            *map(repr, s.bg), *map(repr, s.ba), int(self.fixed[sid])])


def add_state(problem: GraphProblem, state: NavState, fixed: bool = False) -> int:
    return problem.add_state(state, fixed)


def add_factor(problem: GraphProblem, factor) -> int:
    return problem.add_factor(factor)


def solve_window(problem: GraphProblem, window: int | None = None) -> SolveReport:
    return problem.solve_window(window)


def solve_full(problem: GraphProblem, respect_fixation: bool = False) -> SolveReport:
    return problem.solve_full(respect_fixation)
