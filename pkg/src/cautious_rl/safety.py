"""The pessimistic learner.

The agent keeps a count-based estimate of its own dynamics (``BeliefKernel``)
and, at every step, runs a short worst-case Bellman recursion over the states
it can currently see. The result bounds the probability that an action leads
out of the safe region within the lookahead horizon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from cautious_rl.automata import Ldba, step
from cautious_rl.product import Epsilon, ProductAction, ProductState, action_key

__all__ = [
    "BeliefKernel",
    "PaddingParams",
    "LocalSafety",
    "init_belief",
    "record_transition",
    "local_safety_values",
    "violation_bound",
    "permissive_actions",
    "schedule_kappa",
    "schedule_horizon",
]

State = Hashable
Prior = Callable[[State, int], "Sequence[tuple[State, float]] | None"]


class BeliefKernel:
    """Visit counts ``psi(s, a, s')`` and totals ``Psi(s, a)`` over environment states.

    Unseen pairs read ``Psi = 1`` and ``psi = 0``. Their estimated
    distribution comes from the optional prior and is empty without one.
    """

    def __init__(self, prior: Prior | None = None):
        self.prior = prior
        self._total: dict[tuple[State, int], int] = {}
        self._counts: dict[tuple[State, int], dict[State, int]] = {}
        self._departures: dict[State, int] = {}

    def Psi(self, s: State, a: int) -> int:
        return self._total.get((s, a), 1)

    def psi(self, s: State, a: int, s2: State) -> int:
        row = self._counts.get((s, a))
        return row.get(s2, 0) if row else 0

    def record(self, s: State, a: int, s2: State) -> None:
        key = (s, a)
        total = self._total.get(key, 1) + 1
        self._total[key] = total
        row = self._counts.setdefault(key, {})
        # the first real visit jumps straight to 2 so that psi / Psi = 1
        row[s2] = 2 if total == 2 else row.get(s2, 0) + 1
        self._departures[s] = self._departures.get(s, 0) + 1

    def distribution(self, s: State, a: int) -> Sequence[tuple[State, float]]:
        row = self._counts.get((s, a))
        if row:
            total = self._total[(s, a)]
            return [(s2, c / total) for s2, c in row.items()]
        if self.prior is not None:
            return self.prior(s, a) or ()
        return ()

    def visits(self, s: State) -> int:
        """Visit count v(s): one plus the number of recorded departures from ``s``."""
        return 1 + self._departures.get(s, 0)

    def rows(self) -> Iterable[tuple[State, int, State, int, int]]:
        for (s, a), row in self._counts.items():
            for s2, c in row.items():
                yield s, a, s2, c, self._total[(s, a)]


def init_belief(prior: Prior | None = None) -> BeliefKernel:
    return BeliefKernel(prior)


def record_transition(b: BeliefKernel, s: State, a: int, s2: State) -> BeliefKernel:
    b.record(s, a, s2)
    return b


@dataclass(frozen=True)
class PaddingParams:
    r_o: int = 2
    p_critical: float = 0.82
    n_h: int = 20

    def __post_init__(self):
        if self.r_o < 1:
            raise ValueError("r_o must be >= 1")
        if not 0.0 < self.p_critical <= 1.0:
            raise ValueError("p_critical must lie in (0, 1]")
        if self.n_h < 1:
            raise ValueError("n_h must be >= 1")


def schedule_kappa(v: int, n: int) -> int:
    """Permissive prefix length: ``min(n, 1 + floor(log2 v))``."""
    if v < 1 or n < 1:
        raise ValueError("v and n must be >= 1")
    return min(n, int(v).bit_length())


def schedule_horizon(v: int, r_o: int, n_h: int = 20) -> int:
    """Lookahead horizon: ``max(1, r_o - floor(v / n_h))``."""
    if v < 1:
        raise ValueError("v must be >= 1")
    return max(1, r_o - v // n_h)


class LocalSafety:
    """Lazily evaluated worst-case staying probabilities ``u_k`` on one window.

    ``u_H(x)`` is 1 on safe visible states and 0 elsewhere. For ``k < H``,
    ``u_k(x) = 1_safe(x) * min_a sum_x' P(x, a, x') u_{k+1}(x')`` where the
    sum runs over the belief's support; mass leaving the window or missing
    from the belief scores 0. Only the states an action query touches are
    ever evaluated.
    """

    def __init__(
        self,
        horizon: int,
        actions: Callable[[State], Iterable[int]],
        distribution: Callable[[State, int], Iterable[tuple[State, float]]],
        in_window: Callable[[State], bool],
        safe: Callable[[State], bool],
    ):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = horizon
        self._actions = actions
        self._distribution = distribution
        self._in_window = in_window
        self._safe = safe
        self._ok: dict[State, bool] = {}
        self._memo: dict[tuple[State, int], float] = {}

    @classmethod
    def for_product(
        cls,
        view,
        ldba: Ldba,
        belief: BeliefKernel,
        ps: ProductState,
        horizon: int,
        r_o: int,
    ) -> "LocalSafety":
        s, q = ps
        sinks = ldba.sinks
        return cls(
            horizon,
            view.actions,
            belief.distribution,
            lambda x: view.within(s, x, r_o),
            lambda x: step(ldba, q, view.label(x)) not in sinks,
        )

    def usable(self, x: State) -> bool:
        ok = self._ok.get(x)
        if ok is None:
            ok = self._in_window(x) and self._safe(x)
            self._ok[x] = ok
        return ok

    def u(self, x: State, k: int = 0) -> float:
        key = (x, k)
        val = self._memo.get(key)
        if val is not None:
            return val
        if not self.usable(x):
            val = 0.0
        elif k >= self.horizon:
            val = 1.0
        else:
            val = None
            for a in self._actions(x):
                total = 0.0
                for x2, p in self._distribution(x, a):
                    total += p * self.u(x2, k + 1)
                if val is None or total < val:
                    val = total
                    if val == 0.0:
                        break
            if val is None:
                val = 0.0
        self._memo[key] = val
        return val

    def get(self, x: State, default: float = 0.0) -> float:
        """``u_0(x)``, the mapping interface used by :func:`violation_bound`."""
        return self.u(x, 0)


SafetyValues = dict


def local_safety_values(
    s: State,
    ps: ProductState,
    view,
    ldba: Ldba,
    belief: BeliefKernel,
    horizon: int,
    r_o: int,
) -> SafetyValues:
    """``u_0`` over every state visible from ``s``."""
    ls = LocalSafety.for_product(view, ldba, belief, ProductState(s, ps.q), horizon, r_o)
    return {x: ls.u(x, 0) for x, _ in view.observe(s, r_o)}


def violation_bound(
    ps: ProductState,
    a: ProductAction,
    belief: BeliefKernel,
    u0: Mapping[State, float] | LocalSafety,
    ldba: Ldba | None = None,
) -> float:
    """Upper bound on the chance of leaving the safe region after taking ``a``.

    Successors missing from ``u0`` count as unsafe. Epsilon actions do not
    move the environment, so they score 1 if their target is a sink and 0
    otherwise.
    """
    if isinstance(a, Epsilon):
        if ldba is None:
            raise ValueError("epsilon actions need the automaton")
        return 1.0 if a.target in ldba.sinks else 0.0
    stay = 0.0
    for s2, p in belief.distribution(ps.s, a):
        stay += p * u0.get(s2, 0.0)
    return min(1.0, max(0.0, 1.0 - stay))


def permissive_actions(
    bounds: Mapping[ProductAction, float], p_critical: float, kappa: int
) -> list[ProductAction]:
    """Actions with bound below ``p_critical``, safest first, cut to ``kappa``.

    Ties are broken by the fixed action order. An empty list means every
    action is critical; the caller decides the fallback.
    """
    allowed = [a for a, u in bounds.items() if u < p_critical]
    allowed.sort(key=lambda a: (bounds[a], action_key(a)))
    return allowed[: max(0, kappa)]
