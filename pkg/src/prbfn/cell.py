"""Switch-state search for a reconfigurable unit cell.

For every target state the search looks for the binary switch vector whose
reduced 3-port response best matches the target amplitudes and phase
difference, worst case over the frequency grid, subject to matching,
isolation and loss limits handled as an exact penalty.

Switch states are encoded as integers with bit ``q`` of the vector stored
at position ``Q - 1 - q``, so the integer order equals the lexicographic
order of bit strings.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cascade import UnitTarget, wrap_phase
from .network import PixelNetwork, SwitchModel, default_freq_grid, reduce_batch, surrogate_cell, z_to_s

EXHAUSTIVE_MAX_Q = 20
MAX_Q = 64
_CHUNK = 1024


@dataclass(frozen=True)
class CellObjective:
    """Weights, thresholds and the penalty multiplier.

    ``t_s`` and ``t_m`` are in dB, ``t_loss`` is a linear power fraction.
    ``freqs`` selects a subset of the network grid (``None`` for all points).
    """

    c1: float = 1.0
    c2: float = 0.5
    t_s: float = -10.0
    t_m: float = -15.0
    t_loss: float = 0.37
    penalty: float = 1e3
    freqs: tuple | None = None

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("weights must be >= 0")
        if not all(math.isfinite(v) for v in (self.t_s, self.t_m, self.t_loss, self.penalty)):
            raise ValueError("thresholds must be finite")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")

    def freq_indices(self, net: PixelNetwork) -> np.ndarray:
        if self.freqs is None:
            return np.arange(net.freqs.size)
        idx = []
        for f in self.freqs:
            hit = np.flatnonzero(np.isclose(net.freqs, f, rtol=1e-12, atol=0))
            if hit.size == 0:
                raise ValueError(f"frequency {f} Hz is not on the network grid")
            idx.append(int(hit[0]))
        return np.asarray(idx)


@dataclass(frozen=True)
class SearchOptions:
    method: str = "anneal"
    budget: int | None = None
    seed: int = 0
    population: int = 32
    chains: int = 8

    def __post_init__(self):
        if self.method not in ("exhaustive", "anneal", "genetic"):
            raise ValueError(f"unknown search method {self.method!r}")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.population < 4 or self.chains < 1:
            raise ValueError("population must be >= 4 and chains >= 1")

    def resolved_budget(self, Q: int) -> int:
        if self.budget is not None:
            return int(self.budget)
        return int(min(20 * 2 ** Q, 200_000))


def _db(x):
    return 20.0 * np.log10(np.maximum(x, 1e-300))


def _target_arrays(target):
    if isinstance(target, UnitTarget):
        return target.amp1, target.amp2, target.dphase
    a1, a2, d = (np.atleast_1d(np.asarray(v, dtype=float)) for v in target)
    return a1, a2, d


def eval_s(S, target, obj: CellObjective = CellObjective()) -> dict:
    """Evaluation terms for 3x3 scattering data ``S`` of shape ``(..., F, 3, 3)``.

    ``target`` is a :class:`UnitTarget` or ``(amp1, amp2, dphase)`` arrays of
    length ``N``. Returned arrays have shape ``(..., N)``; frequency has been
    reduced to the worst case.
    """
    S = np.asarray(S)
    a1, a2, d = _target_arrays(target)
    s21, s31 = S[..., 1, 0], S[..., 2, 0]
    m21, m31 = np.abs(s21), np.abs(s31)
    g3 = m21 ** 2 + m31 ** 2
    root = np.sqrt(g3)
    safe = np.where(root > 0, root, 1.0)
    n21 = np.where(root > 0, m21 / safe, 0.0)[..., None]
    n31 = np.where(root > 0, m31 / safe, 0.0)[..., None]
    g1 = (n21 - a1) ** 2 + (n31 - a2) ** 2
    g2 = wrap_phase(np.angle(s21)[..., None] - np.angle(s31)[..., None] - d) ** 2
    refl = _db(np.max(np.abs(np.diagonal(S, axis1=-2, axis2=-1)), axis=-1))
    iso = _db(np.abs(S[..., 1, 2]))
    worst = np.max(obj.c1 * g1 + obj.c2 * g2, axis=-2)
    m_s = obj.t_s - np.max(refl, axis=-1)
    m_m = obj.t_m - np.max(iso, axis=-1)
    m_l = obj.t_loss - np.max(1.0 - g3, axis=-1)
    viol = np.maximum(0, -m_s) + np.maximum(0, -m_m) + np.maximum(0, -m_l)
    shape = worst.shape
    bc = lambda v: np.broadcast_to(np.asarray(v)[..., None], shape)
    return {
        "G1": np.max(g1, axis=-2), "G2": np.max(g2, axis=-2),
        "G3": bc(np.min(g3, axis=-1)),
        "weighted": worst,
        "margin_reflection_db": bc(m_s), "margin_isolation_db": bc(m_m),
        "margin_loss": bc(m_l),
        "feasible": bc((m_s >= 0) & (m_m >= 0) & (m_l >= 0)),
        "objective": worst + obj.penalty * bc(viol),
    }


class _Evaluator:
    """Reduces switch states to objective vectors (one entry per target state), with a cache."""

    def __init__(self, net, targets, obj, sw):
        self.net, self.targets, self.obj, self.sw = net, targets, obj, sw
        self.fidx = obj.freq_indices(net)
        self.sub = PixelNetwork(z=net.z[self.fidx], freqs=net.freqs[self.fidx], n_feed=net.n_feed,
                                z0=net.z0, reciprocal=False)
        self.Q = net.Q
        self.cache: dict[int, np.ndarray] = {}

    def s_params(self, X):
        return z_to_s(reduce_batch(self.sub, X, self.sw), self.net.z0)

    def terms(self, X):
        return eval_s(self.s_params(X), self.targets, self.obj)

    def objectives(self, codes) -> np.ndarray:
        codes = [int(c) for c in codes]
        new = sorted({c for c in codes if c not in self.cache})
        for s in range(0, len(new), _CHUNK):
            chunk = new[s:s + _CHUNK]
            vals = self.terms(codes_to_bits(chunk, self.Q))["objective"]
            for c, v in zip(chunk, vals):
                self.cache[c] = v
        return np.array([self.cache[c] for c in codes])


def codes_to_bits(codes, Q: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64).reshape(-1)
    shifts = np.arange(Q - 1, -1, -1, dtype=np.uint64)
    return ((codes[:, None] >> shifts) & np.uint64(1)).astype(np.int8)


def bits_to_code(bits) -> int:
    return int("".join(str(int(b)) for b in bits) or "0", 2)


def bit_string(bits, group: int = 4) -> str:
    s = "".join(str(int(b)) for b in bits)
    return " ".join(s[i:i + group] for i in range(0, len(s), group))


def parse_bit_string(text: str) -> np.ndarray:
    s = text.replace(" ", "")
    if set(s) - {"0", "1"}:
        raise ValueError(f"not a bit string: {text!r}")
    return np.array([int(c) for c in s], dtype=np.int8)


# mirror structure --------------------------------------------------------

def check_involution(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(perm.size)) or np.any(perm[perm] != np.arange(perm.size)):
        raise ValueError("permutation must be an involution on 0..Q-1")
    return perm


def mirror_state(x, perm) -> np.ndarray:
    """``y[q] = x[perm[q]]`` for an involution ``perm``."""
    x = np.asarray(x)
    perm = check_involution(perm)
    if perm.size != x.shape[-1]:
        raise ValueError("permutation length must equal Q")
    return x[..., perm]


def group_swap_permutation(Q: int = 20, group: int = 8) -> np.ndarray:
    """Swap bits ``0..group-1`` with ``group..2*group-1`` and fix the rest."""
    if 2 * group > Q:
        raise ValueError("two groups do not fit in Q bits")
    perm = np.arange(Q)
    perm[:group] = np.arange(group, 2 * group)
    perm[group:2 * group] = np.arange(group)
    return perm


def prune_switches(states) -> dict:
    """Switches fixed across all states: always off (remove) or always on (wire)."""
    X = np.atleast_2d(np.asarray(states.states if isinstance(states, StateSet) else states))
    if X.shape[0] == 0:
        raise ValueError("need at least one state")
    off = np.flatnonzero(np.all(X == 0, axis=0)).tolist()
    on = np.flatnonzero(np.all(X == 1, axis=0)).tolist()
    return {"removable_open": off, "replace_with_wire": on, "rematch_required": bool(on)}


# state sets --------------------------------------------------------------

@dataclass
class StateSet:
    states: np.ndarray  # (N, Q) int8
    records: list
    method: str = ""
    objective_params: dict = field(default_factory=dict)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r["objective"] for r in self.records])

    @property
    def feasible(self) -> np.ndarray:
        return np.array([r["feasible"] for r in self.records], dtype=bool)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "objective_params": self.objective_params,
            "states": [dict(bits=bit_string(x), **rec) for x, rec in zip(self.states, self.records)],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StateSet":
        states = np.array([parse_bit_string(s["bits"]) for s in doc["states"]], dtype=np.int8)
        recs = [{k: v for k, v in s.items() if k != "bits"} for s in doc["states"]]
        return cls(states=states, records=recs, method=doc.get("method", ""),
                   objective_params=doc.get("objective_params", {}))


def _records(ev: _Evaluator, X, targets) -> list:
    t = ev.terms(X)
    a1, a2, d = _target_arrays(targets)
    out = []
    for n in range(X.shape[0]):
        out.append({k: (bool(v[n, n]) if k == "feasible" else float(v[n, n])) for k, v in t.items()})
        out[-1]["target"] = {"amp1": float(a1[n]), "amp2": float(a2[n]), "dphase_rad": float(d[n])}
    return out


def eval_state(net: PixelNetwork, x, target, obj: CellObjective = CellObjective(),
               sw: SwitchModel = SwitchModel()) -> dict:
    """Evaluation record of one switch state against one target state."""
    a1, a2, d = _target_arrays(target)
    if a1.size != 1:
        raise ValueError("eval_state takes a single target state; use UnitTarget.subset")
    ev = _Evaluator(net, (a1, a2, d), obj, sw)
    return _records(ev, np.atleast_2d(np.asarray(x, dtype=np.int8)), (a1, a2, d))[0]


def _better(v, c, best_v, best_c):
    return v < best_v or (v == best_v and c < best_c)


def _exhaustive(ev: _Evaluator, n_states: int, Q: int):
    best_v = np.full(n_states, np.inf)
    best_c = np.zeros(n_states, dtype=np.int64)
    for s in range(0, 2 ** Q, _CHUNK):
        codes = np.arange(s, min(s + _CHUNK, 2 ** Q))
        vals = ev.terms(codes_to_bits(codes, Q))["objective"]
        k = np.argmin(vals, axis=0)  # first minimum, i.e. lowest code in the chunk
        for n in range(n_states):
            if vals[k[n], n] < best_v[n]:
                best_v[n], best_c[n] = vals[k[n], n], codes[k[n]]
    return best_c, best_v


def _anneal(ev: _Evaluator, n: int, Q: int, budget: int, rng, chains: int):
    best_v, best_c = np.inf, 0
    used = 0
    probe = rng.integers(0, 2, (min(20, budget), Q))
    pv = ev.objectives([bits_to_code(x) for x in probe])[:, n]
    used += len(pv)
    for c, v in zip((bits_to_code(x) for x in probe), pv):
        if _better(v, c, best_v, best_c):
            best_v, best_c = v, c
    spread = float(np.std(pv)) if np.std(pv) > 0 else 1.0
    t0, t_ratio = spread, 1e-3
    steps = max(1, (budget - used) // chains)
    for _ in range(chains):
        if used >= budget:
            break
        code = int(rng.integers(0, 2 ** Q)) if Q < 63 else bits_to_code(rng.integers(0, 2, Q))
        cur = ev.objectives([code])[0, n]
        used += 1
        if _better(cur, code, best_v, best_c):
            best_v, best_c = cur, code
        flips = rng.integers(0, Q, steps)
        draws = rng.random(steps)
        for k in range(steps):
            if used >= budget:
                break
            cand = code ^ (1 << (Q - 1 - int(flips[k])))
            v = ev.objectives([cand])[0, n]
            used += 1
            if _better(v, cand, best_v, best_c):
                best_v, best_c = v, cand
            temp = t0 * t_ratio ** (k / steps)
            if v <= cur or draws[k] < math.exp(-(v - cur) / temp):
                code, cur = cand, v
    return best_c, best_v


def _genetic(ev: _Evaluator, n: int, Q: int, budget: int, rng, pop_size: int):
    """Generational GA: size-3 tournaments, uniform crossover, bit-flip mutation.

    Two elites survive each generation, a quarter of the population is
    replaced by random immigrants, and the population restarts from scratch
    after 20 generations without improvement.
    """
    pop_size = int(min(pop_size, max(4, budget)))
    n_imm = pop_size // 4
    pop = rng.integers(0, 2, (pop_size, Q)).astype(np.int8)
    codes = [bits_to_code(x) for x in pop]
    fit = ev.objectives(codes)[:, n]
    used = pop_size
    order = np.lexsort((codes, fit))
    best_v, best_c = fit[order[0]], codes[order[0]]
    p_mut = 1.0 / Q
    stale = 0
    while used + pop_size <= budget:
        if stale >= 20:
            child = rng.integers(0, 2, (pop_size, Q)).astype(np.int8)
            stale = 0
        else:
            contenders = rng.integers(0, pop_size, (pop_size, 2, 3))
            winners = np.argmin(fit[contenders], axis=-1)
            parents = np.take_along_axis(contenders, winners[..., None], axis=-1)[..., 0]
            mask = rng.random((pop_size, Q)) < 0.5
            child = np.where(mask, pop[parents[:, 0]], pop[parents[:, 1]])
            child ^= (rng.random((pop_size, Q)) < p_mut).astype(np.int8)
            child[pop_size - n_imm:] = rng.integers(0, 2, (n_imm, Q))
            child[:2] = pop[np.lexsort((codes, fit))[:2]]
        pop = child
        codes = [bits_to_code(x) for x in pop]
        fit = ev.objectives(codes)[:, n]
        used += pop_size
        improved = False
        for c, v in zip(codes, fit):
            if _better(v, c, best_v, best_c):
                best_v, best_c, improved = v, c, True
        stale = 0 if improved else stale + 1
    return best_c, best_v


def search_states(net: PixelNetwork, targets, obj: CellObjective = CellObjective(),
                  opts: SearchOptions = SearchOptions(), sw: SwitchModel = SwitchModel(),
                  mirror_perm=None) -> StateSet:
    """Best switch state for every target state.

    With ``mirror_perm`` only the first ``ceil(N/2)`` states are searched;
    state ``N-n+1`` is the mirror image of state ``n`` and is evaluated, not
    copied. Infeasible states are returned with ``feasible=False``.
    """
    Q = net.Q
    if Q > MAX_Q:
        raise ValueError(f"Q={Q} exceeds {MAX_Q}")
    if opts.method == "exhaustive" and Q > EXHAUSTIVE_MAX_Q:
        raise ValueError(f"exhaustive search needs Q <= {EXHAUSTIVE_MAX_Q}")
    if net.n_feed != 3:
        raise ValueError("unit cells have exactly 3 feed ports")
    a1, a2, d = _target_arrays(targets)
    N = a1.size
    if mirror_perm is not None:
        mirror_perm = check_involution(mirror_perm)
        if mirror_perm.size != Q:
            raise ValueError("mirror permutation length must equal Q")
    n_search = (N + 1) // 2 if mirror_perm is not None else N
    sub = (a1[:n_search], a2[:n_search], d[:n_search])
    ev = _Evaluator(net, sub, obj, sw)
    budget = opts.resolved_budget(Q)
    if opts.method == "exhaustive":
        codes, _ = _exhaustive(ev, n_search, Q)
    else:
        codes = []
        for n in range(n_search):
            rng = np.random.default_rng(np.random.SeedSequence(int(opts.seed), spawn_key=(n,)))
            if opts.method == "anneal":
                c, _ = _anneal(ev, n, Q, budget, rng, opts.chains)
            else:
                c, _ = _genetic(ev, n, Q, budget, rng, opts.population)
            codes.append(c)
    X = codes_to_bits(codes, Q) if Q else np.zeros((n_search, 0), dtype=np.int8)
    if mirror_perm is not None:
        X = np.vstack([X, mirror_state(X[:N - n_search][::-1], mirror_perm)])
    full = _Evaluator(net, (a1, a2, d), obj, sw)
    params = asdict(obj)
    params.update(method=opts.method, budget=budget, seed=int(opts.seed))
    return StateSet(states=X.astype(np.int8), records=_records(full, X, (a1, a2, d)),
                    method=opts.method, objective_params=params)


# planting ----------------------------------------------------------------

@dataclass
class PlantedInstance:
    net: PixelNetwork
    targets: UnitTarget
    planted: np.ndarray  # (N, Q)


def plant_instance(Q: int, n_states: int, seed: int = 0, obj: CellObjective = CellObjective(),
                   sw: SwitchModel = SwitchModel(), center_hz: float = 2.6e9,
                   max_tries: int = 200, **surrogate_kw) -> PlantedInstance:
    """Single-frequency surrogate whose targets are reproduced exactly by known states.

    Surrogates are drawn until at least ``n_states`` switch states satisfy
    all constraints; targets are read off ``n_states`` of them, so the
    optimum objective is zero (up to rounding) and feasible.
    """
    if Q > 16:
        raise ValueError("planting enumerates all states; use Q <= 16")
    rng = np.random.default_rng(seed)
    freqs = default_freq_grid(center_hz, n=1)
    for _ in range(max_tries):
        net = surrogate_cell(Q, seed=int(rng.integers(2 ** 63)), freqs=freqs, **surrogate_kw)
        X = codes_to_bits(np.arange(2 ** Q), Q)
        S = z_to_s(reduce_batch(net, X, sw), net.z0)
        ok = eval_s(S, ([1.0], [0.0], [0.0]), obj)["feasible"][:, 0]
        good = np.flatnonzero(ok)
        if good.size < n_states:
            continue
        pick = np.sort(rng.choice(good, n_states, replace=False))
        s21, s31 = S[pick, 0, 1, 0], S[pick, 0, 2, 0]
        g = np.sqrt(np.abs(s21) ** 2 + np.abs(s31) ** 2)
        a1, a2 = np.abs(s21) / g, np.abs(s31) / g
        nrm = np.sqrt(a1 ** 2 + a2 ** 2)
        targets = UnitTarget(a1 / nrm, a2 / nrm, wrap_phase(np.angle(s21) - np.angle(s31)))
        return PlantedInstance(net=net, targets=targets, planted=X[pick])
    raise RuntimeError(f"no surrogate with {n_states} feasible states in {max_tries} tries")
