"""Strongly connected components (iterative Tarjan)."""

from __future__ import annotations

from typing import Callable, Hashable, Iterable, TypeVar

V = TypeVar("V", bound=Hashable)


def tarjan_scc(vertices: Iterable[V], successors: Callable[[V], Iterable[V]]) -> list[list[V]]:
    """Return the SCCs of a directed graph in reverse topological order.

    Components are emitted sinks-first: every edge leaving a component points
    into a component listed earlier. Iterative, so deep graphs do not hit the
    recursion limit.
    """
    index: dict[V, int] = {}
    lowlink: dict[V, int] = {}
    on_stack: set[V] = set()
    stack: list[V] = []
    components: list[list[V]] = []
    counter = 0

    for root in vertices:
        if root in index:
            continue
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(successors(root)))]
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = lowlink[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(successors(w))))
                    advanced = True
                    break
                if w in on_stack:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                components.append(comp)
    return components
