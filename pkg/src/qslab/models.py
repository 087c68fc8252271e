"""Absorbed continuous-time population models.

Two model families share one transition interface:

* birth-death chains on {1, 2, ...} with birth, death and catastrophe rates,
  where the cemetery is reached from k = 1 by death, from any k >= 2 by
  catastrophe, and from k = 1 by catastrophe as well;
* multi-type competition models on vectors with every coordinate >= 1, either
  with user-supplied per-type rates or built from per-capita coefficients with
  absorption triggered at the coordinate-one boundary.

States are plain ints (one-dimensional) or tuples of ints (multi-type). A
transition whose target would leave the state space contributes its rate to
absorption instead. Models are immutable and hold no interior caches, so they
are safe to share across workers; anything that needs speed tabulates rates on
its own.
"""

from __future__ import annotations

import ast
import configparser
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

__all__ = [
    "State",
    "TransitionList",
    "BDCModel",
    "MultiTypeModel",
    "ModelError",
    "enumerate_states",
    "state_index_map",
    "make_preset",
    "parse_model_file",
    "PRESETS",
]

State = int | tuple[int, ...]


class ModelError(ValueError):
    """Malformed model definition or rate evaluation problem."""


def _check_rate(value: float, what: str, state) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise ModelError(f"{what} rate {value!r} at state {state} is not a finite nonnegative number")
    return value


@dataclass(frozen=True)
class TransitionList:
    """Outgoing transitions of one state: retained moves plus absorption.

    Zero-rate entries are omitted from ``moves``; ``absorption`` collects every
    path to the cemetery, including moves whose target would leave the state
    space.
    """

    state: State
    moves: tuple[tuple[State, float], ...]
    absorption: float

    @property
    def total_rate(self) -> float:
        return sum(r for _, r in self.moves) + self.absorption


@dataclass(frozen=True)
class BDCModel:
    """Birth-death chain on {1, 2, ...} with catastrophes.

    ``b``, ``d``, ``a`` map a positive integer k to the birth rate k -> k+1,
    the death rate k -> k-1 and the catastrophe rate k -> cemetery. The death
    channel at k = 1 leads to the cemetery, so the absorption rate from 1 is
    a(1) + d(1).
    """

    b: Callable[[int], float]
    d: Callable[[int], float]
    a: Callable[[int], float]
    name: str = "bdc"

    kind = "bdc"

    def rates(self, k: int) -> tuple[float, float, float]:
        if k < 1:
            raise ModelError(f"state {k} outside {{1, 2, ...}}")
        return (
            _check_rate(self.b(k), "birth", k),
            _check_rate(self.d(k), "death", k),
            _check_rate(self.a(k), "catastrophe", k),
        )

    def transitions_from(self, k: int) -> TransitionList:
        bk, dk, ak = self.rates(k)
        moves: list[tuple[State, float]] = []
        absorption = ak
        if bk > 0.0:
            moves.append((k + 1, bk))
        if k == 1:
            absorption += dk
        elif dk > 0.0:
            moves.append((k - 1, dk))
        return TransitionList(state=k, moves=tuple(moves), absorption=absorption)

    def validate(self, bound: int = 200):
        from .reports import LyapunovReport, Verdict

        issues: list[str] = []
        all_kill_zero = True
        for k in range(1, bound + 1):
            try:
                bk, dk, ak = self.rates(k)
            except ModelError as exc:
                issues.append(str(exc))
                continue
            if bk <= 0.0:
                issues.append(f"b({k}) = {bk} is not positive")
            if dk <= 0.0:
                issues.append(f"d({k}) = {dk} is not positive")
            if ak > 0.0:
                all_kill_zero = False
        notes = ["catastrophe rate is identically zero on the scanned range"] if all_kill_zero else []
        verdict = Verdict.HOLDS if not issues else Verdict.FAILS
        return LyapunovReport(
            criterion="model-validation",
            verdict=verdict,
            scan_range=(1, bound),
            constants={},
            notes=tuple(issues[:20] + notes),
        )


def _vec(x: Sequence[int]) -> tuple[int, ...]:
    t = tuple(int(c) for c in x)
    if not t or any(c < 1 for c in t):
        raise ModelError(f"state {x!r} must have every coordinate >= 1")
    return t


@dataclass(frozen=True)
class MultiTypeModel:
    """Multi-type competitive population with absorption.

    Either mode produces per-type birth moves x -> x + e_i and death moves
    x -> x - e_i; a death that would push a coordinate below 1 is rerouted to
    absorption.

    Plain mode (``from_rates``): ``birth_i(i, x)``, ``death_i(i, x)`` and
    ``kill(x)`` give the raw rates.

    Interior-absorption mode (``interior_absorption``): per-capita coefficients
    beta_i(x), delta_i(x), c_ij(x) and a catastrophe profile alpha(x) assemble

        b_i(x) = beta_i(x) x_i
        d_i(x) = [x_i != 1] (delta_i(x) x_i + c_ii(x) x_i (x_i - 1)
                             + sum_{j != i} c_ij(x) x_i x_j)
        absorption(x) = alpha(x) + sum_{i: x_i = 1} (delta_i(x)
                             + sum_{j != i} c_ij(x) x_j)
    """

    r: int
    birth_i: Callable[[int, tuple[int, ...]], float]
    death_i: Callable[[int, tuple[int, ...]], float]
    kill: Callable[[tuple[int, ...]], float]
    name: str = "multitype"
    # coefficient accessors, present only in interior-absorption mode
    beta: Callable[[int, tuple[int, ...]], float] | None = None
    delta: Callable[[int, tuple[int, ...]], float] | None = None
    comp: Callable[[int, int, tuple[int, ...]], float] | None = None
    alpha: Callable[[tuple[int, ...]], float] | None = None
    # optional 1D envelope (bar_b, under_d) as functions of |x|, for domination checks
    envelope: tuple[Callable[[int], float], Callable[[int], float]] | None = None

    kind = "multitype"

    @classmethod
    def from_rates(cls, r, birth_i, death_i, kill, name="multitype", envelope=None):
        return cls(r=int(r), birth_i=birth_i, death_i=death_i, kill=kill, name=name, envelope=envelope)

    @classmethod
    def interior_absorption(cls, r, beta, delta, comp, alpha, name="multitype", envelope=None):
        r = int(r)

        def birth_i(i, x):
            return beta(i, x) * x[i]

        def death_i(i, x):
            if x[i] == 1:
                return 0.0
            tot = delta(i, x) * x[i] + comp(i, i, x) * x[i] * (x[i] - 1)
            for j in range(r):
                if j != i:
                    tot += comp(i, j, x) * x[i] * x[j]
            return tot

        def kill(x):
            tot = alpha(x)
            for i in range(r):
                if x[i] == 1:
                    tot += delta(i, x)
                    for j in range(r):
                        if j != i:
                            tot += comp(i, j, x) * x[j]
            return tot

        return cls(
            r=r, birth_i=birth_i, death_i=death_i, kill=kill, name=name,
            beta=beta, delta=delta, comp=comp, alpha=alpha, envelope=envelope,
        )

    def transitions_from(self, x: Sequence[int]) -> TransitionList:
        x = _vec(x)
        if len(x) != self.r:
            raise ModelError(f"state {x} has {len(x)} coordinates, model has r = {self.r}")
        moves: list[tuple[State, float]] = []
        absorption = _check_rate(self.kill(x), "kill", x)
        for i in range(self.r):
            bi = _check_rate(self.birth_i(i, x), f"birth[{i}]", x)
            if bi > 0.0:
                moves.append((x[:i] + (x[i] + 1,) + x[i + 1:], bi))
            di = _check_rate(self.death_i(i, x), f"death[{i}]", x)
            if di > 0.0:
                if x[i] >= 2:
                    moves.append((x[:i] + (x[i] - 1,) + x[i + 1:], di))
                else:
                    # the move would leave the state space
                    absorption += di
        return TransitionList(state=x, moves=tuple(moves), absorption=absorption)

    def validate(self, bound: int = 12):
        from .reports import LyapunovReport, Verdict

        issues: list[str] = []
        min_diag = math.inf
        for x in enumerate_states(self.r, bound):
            try:
                self.transitions_from(x)
            except ModelError as exc:
                issues.append(str(exc))
                if len(issues) >= 20:
                    break
                continue
            if self.comp is not None:
                for i in range(self.r):
                    cii = self.comp(i, i, x)
                    min_diag = min(min_diag, cii)
                    if cii <= 0.0:
                        issues.append(f"c[{i},{i}]({x}) = {cii} has no positive lower bound")
                        break
        notes = []
        if self.comp is not None and math.isfinite(min_diag):
            notes.append(f"min diagonal competition on range: {min_diag:.6g}")
        verdict = Verdict.HOLDS if not issues else Verdict.FAILS
        return LyapunovReport(
            criterion="model-validation",
            verdict=verdict,
            scan_range=(self.r, bound),
            constants={},
            notes=tuple(issues[:20] + notes),
        )


def enumerate_states(r: int, max_total: int, min_total: int | None = None) -> list[tuple[int, ...]]:
    """All states with coordinates >= 1 and min_total <= |x| <= max_total.

    Graded lexicographic: sorted by |x| first, then lexicographically inside
    each shell. This is the linearization order used by spectral truncation.
    """
    if min_total is None:
        min_total = r
    out: list[tuple[int, ...]] = []

    def shell(prefix: tuple[int, ...], remaining: int, slots: int):
        if slots == 1:
            if remaining >= 1:
                out.append(prefix + (remaining,))
            return
        for c in range(1, remaining - (slots - 1) + 1):
            shell(prefix + (c,), remaining - c, slots - 1)

    for s in range(max(min_total, r), max_total + 1):
        shell((), s, r)
    return out


def state_index_map(states: Sequence[tuple[int, ...]]) -> dict[tuple[int, ...], int]:
    return {x: i for i, x in enumerate(states)}


# ---------------------------------------------------------------------------
# presets

def logistic(b: float = 1.0, d: float = 1.0, c: float = 1.0, kill: float | Callable[[int], float] = 0.0):
    """Logistic chain: b_k = b k, d_k = d k + c k (k - 1)."""
    if b <= 0 or d <= 0 or c < 0:
        raise ModelError("logistic preset needs b > 0, d > 0, c >= 0")
    a_fn = kill if callable(kill) else (lambda k, v=float(kill): v)
    return BDCModel(
        b=lambda k: b * k,
        d=lambda k: d * k + c * k * (k - 1),
        a=a_fn,
        name=f"logistic(b={b},d={d},c={c})",
    )


def logistic_osc_kill(b: float = 1.0, d: float = 1.0, c: float = 1.0,
                      base: float = 1.0, amp: float = 0.5):
    """Logistic chain with bounded oscillating catastrophes a_k = base + amp*(k mod 2)."""
    return BDCModel(
        b=lambda k: b * k,
        d=lambda k: d * k + c * k * (k - 1),
        a=lambda k: base + amp * (k % 2),
        name=f"logistic-osc-kill(base={base},amp={amp})",
    )


def logistic_drift_kill(b: float = 1.0, d: float = 1.0, c: float = 1.0,
                        slope: float = 0.5, amp: float = 0.3, power: float = 0.4):
    """Logistic chain with growing catastrophes around a monotone trend.

    a_k = slope*k + amp * k**power * (-1)**k, so the distance to the trend is
    O(k**power) with power < 1.
    """
    def a_fn(k: int) -> float:
        return slope * k + amp * (k ** power) * (1.0 if k % 2 == 0 else -1.0)

    return BDCModel(
        b=lambda k: b * k,
        d=lambda k: d * k + c * k * (k - 1),
        a=a_fn,
        name=f"logistic-drift-kill(slope={slope},amp={amp},power={power})",
    )


def cubic_martingale(scale: float = 1.0):
    """Zero-drift chain b_k = d_k = scale * k^3."""
    return BDCModel(
        b=lambda k: scale * k ** 3,
        d=lambda k: scale * k ** 3,
        a=lambda k: 0.0,
        name=f"cubic-martingale(scale={scale})",
    )


def supercritical(b: float = 2.0, d: float = 1.0):
    """Linear chain b_k = b k, d_k = d k with b > d: explosive population, no return from infinity."""
    return BDCModel(
        b=lambda k: b * k,
        d=lambda k: d * k,
        a=lambda k: 0.0,
        name=f"supercritical(b={b},d={d})",
    )


def two_state():
    """Two live states: 1 -> 2 at rate 1, 2 -> 1 at rate 1, 1 -> cemetery at rate 1.

    Truncated at N = 2 this has generator [[-2, 1], [1, -1]] with closed-form
    decay rate (3 - sqrt 5)/2.
    """
    return BDCModel(
        b=lambda k: 1.0 if k == 1 else 0.0,
        d=lambda k: 1.0,
        a=lambda k: 0.0,
        name="two-state",
    )


def _as_vector(v, r, what):
    if isinstance(v, (int, float)):
        return [float(v)] * r
    vv = [float(c) for c in v]
    if len(vv) != r:
        raise ModelError(f"{what} needs {r} entries, got {len(vv)}")
    return vv


def lv_interior(r: int = 2, beta=1.0, delta=0.0, c=1.0, alpha=0.0):
    """Competitive Lotka-Volterra with interior absorption from the coordinate-one boundary.

    ``c`` is a constant, an r x r matrix of constants, or a callable
    c(i, j, x). ``alpha`` is a constant or a callable of the state.
    """
    r = int(r)
    betav = _as_vector(beta, r, "beta")
    deltav = _as_vector(delta, r, "delta")
    if callable(c):
        comp = c
    elif isinstance(c, (int, float)):
        comp = lambda i, j, x, v=float(c): v
    else:
        cm = [[float(e) for e in row] for row in c]
        if len(cm) != r or any(len(row) != r for row in cm):
            raise ModelError(f"competition matrix must be {r} x {r}")
        comp = lambda i, j, x, m=cm: m[i][j]
    alpha_fn = alpha if callable(alpha) else (lambda x, v=float(alpha): v)

    # 1D envelope in the style of the linear-birth quadratic-death bound
    beta_bar = max(betav)
    delta_bar = min(deltav)
    cmin = None
    if not callable(c):
        cmin = float(c) if isinstance(c, (int, float)) else min(min(row) for row in cm)

    envelope = None
    if cmin is not None and cmin > 0:
        envelope = (
            lambda s, B=beta_bar: B * s,
            lambda s, D=delta_bar, C=cmin: D * s + C * s * (s - 1),
        )
    return MultiTypeModel.interior_absorption(
        r=r,
        beta=lambda i, x, v=betav: v[i],
        delta=lambda i, x, v=deltav: v[i],
        comp=comp,
        alpha=alpha_fn,
        name=f"lv-interior(r={r})",
        envelope=envelope,
    )


def lv_mutation(r: int = 2, beta=1.0, delta=1.0, m: float = 0.1, c=1.0):
    """Lotka-Volterra with mutation births: b_i = beta_i x_i + m sum_{j != i} x_j.

    Deaths are ungated (a death at x_i = 1 goes to the cemetery). Used for
    envelope domination checks.
    """
    r = int(r)
    betav = _as_vector(beta, r, "beta")
    deltav = _as_vector(delta, r, "delta")
    cc = float(c)
    mm = float(m)

    def birth_i(i, x):
        return betav[i] * x[i] + mm * sum(x[j] for j in range(r) if j != i)

    def death_i(i, x):
        tot = deltav[i] * x[i] + cc * x[i] * (x[i] - 1)
        for j in range(r):
            if j != i:
                tot += cc * x[i] * x[j]
        return tot

    beta_bar = max(betav) + (r - 1) * mm
    delta_bar = min(deltav)
    envelope = (
        lambda s, B=beta_bar: B * s,
        lambda s, D=delta_bar, C=cc: D * s + C * s * (s - 1),
    )
    return MultiTypeModel.from_rates(
        r=r, birth_i=birth_i, death_i=death_i, kill=lambda x: 0.0,
        name=f"lv-mutation(r={r},m={mm})", envelope=envelope,
    )


def lv_boundary_kill(r: int = 2, beta=1.0, delta=1.0, c=1.0, kill0: float = 1.0):
    """Gated competitive deaths with a bounded kill rate on the coordinate-one boundary."""
    r = int(r)
    betav = _as_vector(beta, r, "beta")
    deltav = _as_vector(delta, r, "delta")
    cc = float(c)

    def birth_i(i, x):
        return betav[i] * x[i]

    def death_i(i, x):
        if x[i] == 1:
            return 0.0
        tot = deltav[i] * x[i] + cc * x[i] * (x[i] - 1)
        for j in range(r):
            if j != i:
                tot += cc * x[i] * x[j]
        return tot

    def kill(x):
        return float(kill0) if any(c_ == 1 for c_ in x) else 0.0

    delta_bar = min(float(kill0), min(deltav))
    envelope = (
        lambda s, B=max(betav): B * s,
        lambda s, D=delta_bar, C=cc, R=r: D + C * s * max(s - R, 0),
    )
    return MultiTypeModel.from_rates(
        r=r, birth_i=birth_i, death_i=death_i, kill=kill,
        name=f"lv-boundary-kill(r={r})", envelope=envelope,
    )


def lv_cross(gamma: float = 1.0):
    """Two types with state-dependent cross competition c_12(x) = gamma * x_1.

    With gamma = 1 this is the instance whose diagonal competition cannot
    dominate the cross term.
    """
    def comp(i, j, x):
        if i == 0 and j == 1:
            return gamma * x[0]
        return 1.0

    return MultiTypeModel.interior_absorption(
        r=2,
        beta=lambda i, x: 1.0,
        delta=lambda i, x: 1.0,
        comp=comp,
        alpha=lambda x: 0.0,
        name=f"lv-cross(gamma={gamma})",
    )


PRESETS: dict[str, Callable[..., BDCModel | MultiTypeModel]] = {
    "logistic": logistic,
    "logistic-osc-kill": logistic_osc_kill,
    "logistic-drift-kill": logistic_drift_kill,
    "cubic-martingale": cubic_martingale,
    "supercritical": supercritical,
    "two-state": two_state,
    "lv-interior": lv_interior,
    "lv-mutation": lv_mutation,
    "lv-boundary-kill": lv_boundary_kill,
    "lv-cross": lv_cross,
}


def make_preset(name: str, **params):
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name](**params)


# ---------------------------------------------------------------------------
# model definition files

_EXPR_NAMES = {
    "sqrt": math.sqrt, "log": math.log, "exp": math.exp, "sin": math.sin,
    "cos": math.cos, "floor": math.floor, "ceil": math.ceil, "abs": abs,
    "min": min, "max": max, "pi": math.pi,
}


def _rate_expr(expr: str, what: str) -> Callable[[int], float]:
    try:
        code = compile(expr, f"<{what}>", "eval")
    except SyntaxError as exc:
        raise ModelError(f"cannot parse {what} expression {expr!r}: {exc}") from exc

    def fn(k: int) -> float:
        try:
            return float(eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "k": k}))
        except Exception as exc:
            raise ModelError(f"{what} expression {expr!r} failed at k = {k}: {exc}") from exc

    return fn


def _parse_param(raw: str):
    raw = raw.strip()
    if raw.startswith("[") or raw.startswith("("):
        try:
            return ast.literal_eval(raw)
        except (ValueError, SyntaxError) as exc:
            raise ModelError(f"cannot parse parameter value {raw!r}: {exc}") from exc
    if ";" in raw:
        return [[float(e) for e in row.replace(",", " ").split()] for row in raw.split(";")]
    if "," in raw:
        return [float(e) for e in raw.split(",")]
    try:
        f = float(raw)
    except ValueError:
        return raw
    return int(f) if f.is_integer() and "." not in raw and "e" not in raw.lower() else f


def parse_model_file(path: str) -> BDCModel | MultiTypeModel:
    """Read a model definition file.

    INI format with a [model] section. Either a preset with parameters::

        [model]
        kind = bdc
        preset = logistic
        b = 1.0
        d = 1.0
        c = 1.0

    or, for kind = bdc, rate expressions in the variable k::

        [model]
        kind = bdc
        birth = 2*k
        death = k + k*(k-1)
        kill = 0.0
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ModelError(f"cannot read model file {path!r}")
    if "model" not in cp:
        raise ModelError(f"model file {path!r} has no [model] section")
    sec = dict(cp["model"])
    kind = sec.pop("kind", None)
    if kind not in ("bdc", "multitype"):
        raise ModelError(f"model file {path!r}: kind must be 'bdc' or 'multitype', got {kind!r}")
    preset = sec.pop("preset", None)
    if preset is not None:
        params = {key: _parse_param(val) for key, val in sec.items()}
        model = make_preset(preset, **params)
        if model.kind != kind:
            raise ModelError(f"preset {preset!r} is a {model.kind} model, file says {kind}")
        return model
    if kind == "bdc":
        missing = [key for key in ("birth", "death") if key not in sec]
        if missing:
            raise ModelError(f"bdc expression model needs 'birth' and 'death'; missing {missing}")
        return BDCModel(
            b=_rate_expr(sec["birth"], "birth"),
            d=_rate_expr(sec["death"], "death"),
            a=_rate_expr(sec.get("kill", "0.0"), "kill"),
            name=sec.get("name", "bdc-expr"),
        )
    raise ModelError("multitype models are defined through presets; add a 'preset' key")
