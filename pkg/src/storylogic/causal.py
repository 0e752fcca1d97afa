"""Global causal verification: graph construction, state tracking, transition
validation and refinement-instruction generation.

The graph is built by simulating the key events in order: one node per
distinct story state, one edge per event from the state before it to the
state after it. Consecutive events therefore stay connected even when their
predicates do not overlap, and a repeated state shows up as a cycle, which
is rejected.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

from .domain import KeyEvent, PanelSpec, StatePredicate, canonical_predicate

INITIAL_STATE_PREDICATE = StatePredicate(entity="story", attribute="phase", value="initial")


class GraphError(ValueError):
    """Raised for malformed graphs (cycles, dangling edges) or bad updates."""


def _attr_key(canon: str) -> str:
    entity, attribute, _ = canon.split("|", 2)
    return f"{entity}|{attribute}"


def _apply(state: frozenset[str], effects: Iterable[StatePredicate]) -> frozenset[str]:
    """Overwrite predicates sharing (entity, attribute); add the rest."""
    out = {_attr_key(c): c for c in state}
    for p in effects:
        c = canonical_predicate(p)
        out[_attr_key(c)] = c
    return frozenset(out.values())


@dataclass(frozen=True)
class GraphNode:
    id: str
    predicates: frozenset[str]
    label: str
    event_index: int  # earliest event producing this state; 0 = initial

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "predicates": sorted(self.predicates), "label": self.label}


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    event: int

    def to_dict(self) -> dict[str, Any]:
        return {"from": self.src, "to": self.dst, "event": self.event}


@dataclass(frozen=True)
class CausalGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("node ids must be unique")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise GraphError(f"edge {e.src}->{e.dst} references unknown node")
        cycle = self._find_cycle()
        if cycle:
            raise GraphError("graph contains a cycle through edges: " + ", ".join(f"{s}->{d}" for s, d in cycle))

    def _adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            adj[e.src].append(e.dst)
        return adj

    def _find_cycle(self) -> list[tuple[str, str]] | None:
        adj = self._adjacency()
        color: dict[str, int] = {}  # 0 unseen, 1 on stack, 2 done
        stack_edges: list[tuple[str, str]] = []

        def visit(u: str) -> list[tuple[str, str]] | None:
            color[u] = 1
            for v in adj[u]:
                if color.get(v, 0) == 1:
                    return stack_edges + [(u, v)]
                if color.get(v, 0) == 0:
                    stack_edges.append((u, v))
                    found = visit(v)
                    if found:
                        return found
                    stack_edges.pop()
            color[u] = 2
            return None

        for node in adj:
            if color.get(node, 0) == 0:
                found = visit(node)
                if found:
                    return found
        return None

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def topological_order(self) -> list[str]:
        adj = self._adjacency()
        indeg = {n.id: 0 for n in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        order = []
        while ready:
            u = ready.pop(0)
            order.append(u)
            for v in adj[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
        return order

    def to_dict(self) -> dict[str, Any]:
        return {"nodes": [n.to_dict() for n in self.nodes], "edges": [e.to_dict() for e in self.edges]}

    def to_dot(self) -> str:
        """Graph description for external rendering."""
        lines = ["digraph causal {"]
        for n in self.nodes:
            label = n.label.replace('"', "'")
            lines.append(f'  {n.id} [label="{n.id}: {label}"];')
        for e in self.edges:
            lines.append(f'  {e.src} -> {e.dst} [label="event {e.event}"];')
        lines.append("}")
        return "\n".join(lines)


def build_graph(events: Sequence[KeyEvent]) -> CausalGraph:
    """Simulate events in order into a state graph; reject cycles."""
    if not events:
        raise GraphError("cannot build a causal graph from zero events")
    for e in events:
        if not e.effects:
            raise GraphError(f"event {e.index} has no effects")

    initial = events[0].preconditions or (INITIAL_STATE_PREDICATE,)
    state = frozenset(canonical_predicate(p) for p in initial)

    nodes: list[GraphNode] = [GraphNode(id="n0", predicates=state, label="initial state", event_index=0)]
    index_of: dict[frozenset[str], str] = {state: "n0"}
    edges: list[GraphEdge] = []
    for ev in events:
        nxt = _apply(state, ev.effects)
        if nxt not in index_of:
            nid = f"n{len(nodes)}"
            nodes.append(GraphNode(id=nid, predicates=nxt, label=ev.result or f"after event {ev.index}", event_index=ev.index))
            index_of[nxt] = nid
        edges.append(GraphEdge(src=index_of[state], dst=index_of[nxt], event=ev.index))
        state = nxt
    return CausalGraph(nodes=tuple(nodes), edges=tuple(edges))  # cycle check in constructor


@dataclass(frozen=True)
class StateTransition:
    """Observed pre-state, action, post-state of one panel."""

    pre: frozenset[str]
    action: str
    post: frozenset[str]

    def __post_init__(self) -> None:
        if not self.pre or not self.post:
            raise GraphError("transition pre and post states must be non-empty")

    @classmethod
    def from_predicates(
        cls, pre: Iterable[StatePredicate], action: str, post: Iterable[StatePredicate]
    ) -> "StateTransition":
        return cls(
            pre=frozenset(canonical_predicate(p) for p in pre),
            action=action,
            post=frozenset(canonical_predicate(p) for p in post),
        )


@dataclass(frozen=True)
class TransitionVerdict:
    valid: bool
    reason: str | None = None


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def match_state(g: CausalGraph, query: frozenset[str]) -> GraphNode | None:
    """Node with maximal Jaccard overlap; ties break to the earliest event.

    Returns None when no node overlaps the query at all.
    """
    best: GraphNode | None = None
    best_score = 0.0
    for n in g.nodes:
        score = _jaccard(n.predicates, query)
        if score == 0.0:
            continue
        if best is None or score > best_score or (score == best_score and n.event_index < best.event_index):
            best = n
            best_score = score
    return best


def validate_transition(g: CausalGraph, tr: StateTransition) -> TransitionVerdict:
    """Valid iff the matched pre-node reaches the matched post-node via >=1 edge."""
    pre_node = match_state(g, tr.pre)
    post_node = match_state(g, tr.post)
    if pre_node is None or post_node is None:
        return TransitionVerdict(valid=False, reason="unmatched-state")
    adj = g._adjacency()
    seen: set[str] = set()
    frontier = list(adj[pre_node.id])
    while frontier:
        u = frontier.pop()
        if u in seen:
            continue
        seen.add(u)
        if u == post_node.id:
            return TransitionVerdict(valid=True)
        frontier.extend(adj[u])
    return TransitionVerdict(valid=False, reason="no-path")


@dataclass(frozen=True)
class StateRecorder:
    """Tracks which story states have been visually realized so far."""

    events: tuple[KeyEvent, ...]
    current: frozenset[str]
    realized_events: frozenset[int]
    history: tuple[tuple[int, tuple[str, ...]], ...] = ()  # (panel, applied canon predicates)

    @classmethod
    def initial(cls, events: Sequence[KeyEvent]) -> "StateRecorder":
        initial = (events[0].preconditions if events else ()) or (INITIAL_STATE_PREDICATE,)
        return cls(
            events=tuple(events),
            current=frozenset(canonical_predicate(p) for p in initial),
            realized_events=frozenset(),
        )

    def event(self, index: int) -> KeyEvent:
        for e in self.events:
            if e.index == index:
                return e
        raise KeyError(f"no event with index {index}")


def apply_effects(recorder: StateRecorder, event_indices: Sequence[int], panel_index: int = 0) -> StateRecorder:
    """Realize events in order; same (entity, attribute) gets overwritten.

    Re-applying an already realized event is an error.
    """
    current = recorder.current
    applied: list[str] = []
    realized = set(recorder.realized_events)
    for idx in event_indices:
        if idx in realized:
            raise GraphError(f"event {idx} already realized")
        ev = recorder.event(idx)
        current = _apply(current, ev.effects)
        applied.extend(canonical_predicate(p) for p in ev.effects)
        realized.add(idx)
    return StateRecorder(
        events=recorder.events,
        current=current,
        realized_events=frozenset(realized),
        history=recorder.history + ((panel_index, tuple(applied)),),
    )


def replay_history(recorder: StateRecorder) -> frozenset[str]:
    """Refold the recorded history from the initial state; must equal current."""
    initial = (recorder.events[0].preconditions if recorder.events else ()) or (INITIAL_STATE_PREDICATE,)
    state = frozenset(canonical_predicate(p) for p in initial)
    for _, applied in recorder.history:
        state = _apply(state, (StatePredicate.from_canonical(c) for c in applied))
    return state


@dataclass(frozen=True)
class RefinementInstruction:
    panel_index: int
    verdict: str  # "aligned" | "misaligned"
    missing_predicates: tuple[StatePredicate, ...]
    contradicting_predicates: tuple[StatePredicate, ...]
    instruction_text: str

    def __post_init__(self) -> None:
        if self.verdict == "aligned" and (
            self.missing_predicates or self.contradicting_predicates or self.instruction_text
        ):
            raise GraphError("aligned verdicts carry no missing/contradicting predicates or text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "panel_index": self.panel_index,
            "verdict": self.verdict,
            "missing_predicates": [p.to_dict() for p in self.missing_predicates],
            "contradicting_predicates": [p.to_dict() for p in self.contradicting_predicates],
            "instruction_text": self.instruction_text,
        }


def fallback_instruction(
    missing: Sequence[StatePredicate], contradictions: Sequence[tuple[StatePredicate, StatePredicate]]
) -> str:
    """Deterministic edit text usable with no text backend at all."""
    contradicted_keys = {(e.entity.lower(), e.attribute.lower()) for e, _ in contradictions}
    adds = [p for p in missing if (p.entity.lower(), p.attribute.lower()) not in contradicted_keys]
    parts = []
    if adds:
        parts.append("Add: " + "; ".join(f"{p.entity} {p.attribute} {p.value}" for p in adds) + ".")
    if contradictions:
        parts.append(
            "Fix: " + "; ".join(f"{e.entity} {e.attribute} should be {e.value}, not {o.value}" for e, o in contradictions) + "."
        )
    return " ".join(parts)


def verify_panel(
    g: CausalGraph,
    recorder: StateRecorder,
    panel: PanelSpec,
    observed: Iterable[StatePredicate],
    covered_events: Sequence[int] = (),
    instruction_renderer: Callable[[Mapping[str, str]], str] | None = None,
) -> RefinementInstruction:
    """Compare observed predicates against the expected visual state.

    Expected = recorder.current plus the effects of the panel's covered
    events. Missing predicates are expected-minus-observed; contradictions
    are observed values that clash with an expected (entity, attribute).
    The verdict is pure; only the instruction text may involve a backend,
    and it falls back to a deterministic fill when rendering fails.
    """
    expected = recorder.current
    for idx in covered_events:
        expected = _apply(expected, recorder.event(idx).effects)
    observed_set = frozenset(canonical_predicate(p) for p in observed)

    missing = sorted(expected - observed_set)
    expected_by_key = {_attr_key(c): c for c in expected}
    contradictions: list[tuple[StatePredicate, StatePredicate]] = []
    for c in sorted(observed_set):
        want = expected_by_key.get(_attr_key(c))
        if want is not None and want != c:
            contradictions.append((StatePredicate.from_canonical(want), StatePredicate.from_canonical(c)))

    if not missing and not contradictions:
        return RefinementInstruction(panel.index, "aligned", (), (), "")

    missing_preds = tuple(StatePredicate.from_canonical(c) for c in missing)
    contr_preds = tuple(o for _, o in contradictions)
    text = fallback_instruction(missing_preds, contradictions)
    if instruction_renderer is not None:
        context = {
            "panel": str(panel.index),
            "expected": "; ".join(f"{p.entity} {p.attribute} {p.value}" for p in missing_preds) or "none",
            "observed": "; ".join(f"{o.entity} {o.attribute} {o.value}" for o in contr_preds) or "none",
            "scene": panel.scene_description,
        }
        try:
            rendered = instruction_renderer(context).strip()
            if rendered:
                text = rendered
        except Exception:
            pass  # deterministic fallback already set
    return RefinementInstruction(panel.index, "misaligned", missing_preds, contr_preds, text)
