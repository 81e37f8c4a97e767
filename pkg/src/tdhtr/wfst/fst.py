"""Weighted finite-state transducers over the tropical semiring (min, +).

Labels are positive integers; 0 is epsilon. Weights are floats, ``inf``
is the semiring zero and ``0.0`` the semiring one. A state is final iff it
has an entry in ``finals``.
"""

import heapq
from collections import defaultdict, deque, namedtuple

from ..exceptions import DomainError, ResourceError

EPS = 0
INF = float("inf")
# weights are compared on a 2**-40 grid when used as hash keys
_QUANTUM = 2.0 ** -40

Arc = namedtuple("Arc", "ilabel olabel weight nextstate")


def quantize(w):
    return w if w == INF else round(w / _QUANTUM) * _QUANTUM


class Fst:
    def __init__(self):
        self.arcs = []
        self.finals = {}
        self.start = None

    # -- construction -------------------------------------------------------

    def add_state(self):
        self.arcs.append([])
        return len(self.arcs) - 1

    def add_states(self, n):
        for _ in range(n):
            self.add_state()

    def add_arc(self, src, ilabel, olabel, weight, dst):
        if not (0 <= src < len(self.arcs) and 0 <= dst < len(self.arcs)):
            raise DomainError(f"arc {src}->{dst} references a missing state")
        if weight != weight:
            raise DomainError("NaN arc weight")
        self.arcs[src].append(Arc(int(ilabel), int(olabel), float(weight), int(dst)))

    def set_final(self, state, weight=0.0):
        if weight != weight:
            raise DomainError("NaN final weight")
        if weight == INF:
            self.finals.pop(state, None)
        else:
            self.finals[state] = float(weight)

    def set_start(self, state):
        if not 0 <= state < len(self.arcs):
            raise DomainError(f"start state {state} does not exist")
        self.start = state

    # -- queries --------------------------------------------------------------

    @property
    def num_states(self):
        return len(self.arcs)

    @property
    def num_arcs(self):
        return sum(len(a) for a in self.arcs)

    def final_weight(self, state):
        return self.finals.get(state, INF)

    def states(self):
        return range(len(self.arcs))

    def is_acceptor(self):
        return all(a.ilabel == a.olabel for arcs in self.arcs for a in arcs)

    def has_input_epsilons(self):
        return any(a.ilabel == EPS for arcs in self.arcs for a in arcs)

    def is_input_deterministic(self):
        for arcs in self.arcs:
            labels = [a.ilabel for a in arcs]
            if EPS in labels or len(labels) != len(set(labels)):
                return False
        return True

    def input_labels(self):
        return {a.ilabel for arcs in self.arcs for a in arcs} - {EPS}

    def output_labels(self):
        return {a.olabel for arcs in self.arcs for a in arcs} - {EPS}

    def copy(self):
        out = Fst()
        out.arcs = [list(a) for a in self.arcs]
        out.finals = dict(self.finals)
        out.start = self.start
        return out

    def validate(self):
        n = len(self.arcs)
        if n and (self.start is None or not 0 <= self.start < n):
            raise DomainError("start state missing")
        for s, arcs in enumerate(self.arcs):
            for a in arcs:
                if not 0 <= a.nextstate < n:
                    raise DomainError(f"arc from {s} to missing state {a.nextstate}")
                if a.weight != a.weight:
                    raise DomainError("NaN weight")
        for s, w in self.finals.items():
            if not 0 <= s < n or w != w:
                raise DomainError(f"bad final entry {s} {w}")
        return self

    # -- text format ----------------------------------------------------------

    def to_text(self):
        """AT&T-style text: ``src dst ilabel olabel weight`` / ``state weight``.

        The start state's lines come first, which is how readers identify it.
        """
        if self.start is None:
            return ""
        lines = []
        order = [self.start] + [s for s in self.states() if s != self.start]
        for s in order:
            for a in self.arcs[s]:
                lines.append(f"{s} {a.nextstate} {a.ilabel} {a.olabel} {a.weight!r}")
            if s in self.finals:
                lines.append(f"{s} {self.finals[s]!r}")
        if not self.arcs[self.start] and self.start not in self.finals:
            lines.insert(0, f"{self.start} {INF!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fst = cls()
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows:
            return fst

        def ensure(s):
            while fst.num_states <= s:
                fst.add_state()

        for i, r in enumerate(rows):
            src = int(r[0])
            ensure(src)
            if i == 0:
                fst.start = src
            if len(r) in (4, 5):
                dst = int(r[1])
                ensure(dst)
                w = float(r[4]) if len(r) == 5 else 0.0
                fst.add_arc(src, int(r[2]), int(r[3]), w, dst)
            elif len(r) in (1, 2):
                fst.set_final(src, float(r[1]) if len(r) == 2 else 0.0)
            else:
                raise DomainError(f"line {i + 1}: expected 1, 2, 4 or 5 fields")
        return fst

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def write_symbols(path, symbols):
    """Sidecar symbol table: ``symbol id`` per line, ``<eps> 0`` first.

    ``symbols`` maps label id to its string; whitespace symbols are written
    as ``<space>``.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write("<eps> 0\n")
        for i in sorted(symbols):
            name = symbols[i]
            f.write(f"{'<space>' if name == ' ' else name} {i}\n")


def read_symbols(path):
    table = {}
    with open(path, encoding="utf-8") as f:
        for ln in f:
            if not ln.strip():
                continue
            name, i = ln.rsplit(None, 1)
            if int(i) != EPS:
                table[int(i)] = " " if name == "<space>" else name
    return table


# -- basic algorithms -----------------------------------------------------------

def connect(fst):
    """Drop states that are not both accessible and co-accessible."""
    if fst.start is None or not fst.num_states:
        return Fst()
    acc = {fst.start}
    stack = [fst.start]
    while stack:
        s = stack.pop()
        for a in fst.arcs[s]:
            if a.nextstate not in acc:
                acc.add(a.nextstate)
                stack.append(a.nextstate)
    rev = defaultdict(list)
    for s in acc:
        for a in fst.arcs[s]:
            rev[a.nextstate].append(s)
    coacc = {s for s in fst.finals if s in acc}
    stack = list(coacc)
    while stack:
        s = stack.pop()
        for p in rev[s]:
            if p not in coacc:
                coacc.add(p)
                stack.append(p)
    out = Fst()
    if fst.start not in coacc:
        out.set_start(out.add_state())
        return out
    keep = sorted(coacc)
    remap = {s: i for i, s in enumerate(keep)}
    out.add_states(len(keep))
    out.set_start(remap[fst.start])
    for s in keep:
        for a in fst.arcs[s]:
            if a.nextstate in remap:
                out.arcs[remap[s]].append(a._replace(nextstate=remap[a.nextstate]))
        if s in fst.finals:
            out.finals[remap[s]] = fst.finals[s]
    return out


def shortest_distance_to_final(fst):
    """Tropical distance from every state to a final state (Bellman-Ford queue)."""
    n = fst.num_states
    rev = [[] for _ in range(n)]
    for s in fst.states():
        for a in fst.arcs[s]:
            rev[a.nextstate].append((s, a.weight))
    dist = [INF] * n
    queue = deque()
    for s, w in fst.finals.items():
        dist[s] = w
        queue.append(s)
    inq = [False] * n
    for s in queue:
        inq[s] = True
    relax = 0
    while queue:
        s = queue.popleft()
        inq[s] = False
        for p, w in rev[s]:
            nd = w + dist[s]
            if nd < dist[p]:
                dist[p] = nd
                relax += 1
                if relax > 50 * (n + 1) * (fst.num_arcs + 1):
                    raise DomainError("negative-weight cycle")
                if not inq[p]:
                    inq[p] = True
                    queue.append(p)
    return dist


def _epsilon_closure(fst, state):
    """Distances over pure-epsilon arcs (ilabel = olabel = 0) from ``state``."""
    dist = {state: 0.0}
    heap = [(0.0, state)]
    while heap:
        d, s = heapq.heappop(heap)
        if d > dist.get(s, INF):
            continue
        for a in fst.arcs[s]:
            if a.ilabel == EPS and a.olabel == EPS:
                nd = d + a.weight
                if nd < dist.get(a.nextstate, INF):
                    dist[a.nextstate] = nd
                    heapq.heappush(heap, (nd, a.nextstate))
    return dist


def rmepsilon(fst):
    """Remove arcs whose input and output are both epsilon.

    Epsilon weights are assumed non-negative (backoff costs are).
    """
    out = Fst()
    out.add_states(fst.num_states)
    out.start = fst.start
    for s in fst.states():
        closure = _epsilon_closure(fst, s)
        best = {}
        final = INF
        for r, d in closure.items():
            final = min(final, d + fst.final_weight(r))
            for a in fst.arcs[r]:
                if a.ilabel == EPS and a.olabel == EPS:
                    continue
                key = (a.ilabel, a.olabel, a.nextstate)
                w = d + a.weight
                if w < best.get(key, INF):
                    best[key] = w
        for (il, ol, nxt), w in sorted(best.items()):
            out.arcs[s].append(Arc(il, ol, w, nxt))
        if final < INF:
            out.finals[s] = final
    return connect(out)


# -- composition ------------------------------------------------------------------

def compose(a, b, connect_result=True):
    """Tropical composition with a two-state epsilon filter.

    Filter state 0 allows ``a`` to advance alone on an output epsilon;
    once ``b`` has advanced alone on an input epsilon (state 1), ``a`` may
    not move alone until a matched step resets the filter. Each pair of
    paths therefore yields exactly one composed path.
    """
    out = Fst()
    if a.start is None or b.start is None:
        return out
    b_index = []
    for arcs in b.arcs:
        idx = defaultdict(list)
        for arc in arcs:
            idx[arc.ilabel].append(arc)
        b_index.append(idx)
    ids = {}
    queue = deque()

    def state(q1, q2, f):
        key = (q1, q2, f)
        if key not in ids:
            ids[key] = out.add_state()
            queue.append(key)
        return ids[key]

    out.set_start(state(a.start, b.start, 0))
    while queue:
        q1, q2, f = key = queue.popleft()
        s = ids[key]
        fw = a.final_weight(q1) + b.final_weight(q2)
        if fw < INF:
            out.finals[s] = fw
        for arc1 in a.arcs[q1]:
            if arc1.olabel == EPS:
                if f == 0:
                    out.arcs[s].append(Arc(arc1.ilabel, EPS, arc1.weight, state(arc1.nextstate, q2, 0)))
                continue
            for arc2 in b_index[q2].get(arc1.olabel, ()):
                out.arcs[s].append(Arc(arc1.ilabel, arc2.olabel, arc1.weight + arc2.weight,
                                       state(arc1.nextstate, arc2.nextstate, 0)))
        for arc2 in b_index[q2].get(EPS, ()):
            out.arcs[s].append(Arc(EPS, arc2.olabel, arc2.weight, state(q1, arc2.nextstate, 1)))
    return connect(out) if connect_result else out


# -- determinization ----------------------------------------------------------------

def determinize(fst, max_states=1_000_000):
    """Input-deterministic equivalent of an input-epsilon-free machine.

    Acceptors use weighted subset construction. Transducers must be
    functional; pending output is carried in each subset element and
    released one label per arc, and any output still pending at a final
    state is flushed through an epsilon-input chain.
    """
    if fst.start is None:
        return Fst()
    if fst.has_input_epsilons():
        raise DomainError("determinize needs an input-epsilon-free machine; run rmepsilon first")
    fst = connect(fst)
    if not fst.num_states:
        return fst
    acceptor = fst.is_acceptor()
    out = Fst()
    ids = {}
    queue = deque()

    def state(subset):
        if subset not in ids:
            if len(ids) >= max_states:
                raise ResourceError(f"determinization exceeded {max_states} states")
            ids[subset] = out.add_state()
            queue.append(subset)
        return ids[subset]

    out.set_start(state(((fst.start, 0.0, ()),)))
    while queue:
        subset = queue.popleft()
        s = ids[subset]
        _det_final(fst, out, s, subset)
        by_label = defaultdict(dict)
        for q, w, pending in subset:
            for a in fst.arcs[q]:
                emitted = pending if acceptor or a.olabel == EPS else pending + (a.olabel,)
                key = (a.nextstate, emitted)
                nw = w + a.weight
                group = by_label[a.ilabel]
                if nw < group.get(key, INF):
                    group[key] = nw
        for label in sorted(by_label):
            group = by_label[label]
            wmin = min(group.values())
            if acceptor:
                olabel = label
                elems = tuple(sorted((q, quantize(w - wmin), ()) for (q, _), w in group.items()))
            else:
                outs = [e for (_, e) in group]
                head = outs[0][0] if outs[0] and all(o and o[0] == outs[0][0] for o in outs) else EPS
                cut = 1 if head != EPS else 0
                merged = {}
                for (q, e), w in group.items():
                    k = (q, e[cut:])
                    merged[k] = min(merged.get(k, INF), w - wmin)
                seen = {}
                for (q, e) in merged:
                    if q in seen and seen[q] != e:
                        raise DomainError("transducer is not functional; cannot determinize")
                    seen[q] = e
                olabel = head
                elems = tuple(sorted((q, quantize(w), e) for (q, e), w in merged.items()))
            out.arcs[s].append(Arc(label, olabel, wmin, state(elems)))
    return out


def _det_final(fst, out, s, subset):
    best = None
    for q, w, pending in subset:
        fw = fst.final_weight(q)
        if fw < INF and (best is None or w + fw < best[0]):
            best = (w + fw, pending)
    if best is None:
        return
    weight, pending = best
    if not pending:
        out.finals[s] = weight
        return
    cur = s
    for i, lab in enumerate(pending):
        nxt = out.add_state()
        out.arcs[cur].append(Arc(EPS, lab, weight if i == 0 else 0.0, nxt))
        cur = nxt
    out.finals[cur] = 0.0


# -- minimization ----------------------------------------------------------------

def push_weights(fst):
    """Move weight toward the start so each state's best completion costs 0.

    Returns a new machine. The start state's residual is folded into its
    outgoing arcs and final weight; when the start has incoming arcs a fresh
    start state is added to carry it.
    """
    fst = connect(fst)
    if not fst.num_states:
        return fst
    dist = shortest_distance_to_final(fst)
    out = Fst()
    out.add_states(fst.num_states)
    out.start = fst.start
    for s in fst.states():
        for a in fst.arcs[s]:
            out.arcs[s].append(a._replace(weight=a.weight + dist[a.nextstate] - dist[s]))
        if s in fst.finals:
            out.finals[s] = fst.finals[s] - dist[s]
    d0 = dist[fst.start]
    if d0 != 0.0:
        has_incoming = any(a.nextstate == fst.start for arcs in fst.arcs for a in arcs)
        st = fst.start
        if has_incoming:
            st = out.add_state()
            out.arcs[st] = list(out.arcs[fst.start])
            if fst.start in out.finals:
                out.finals[st] = out.finals[fst.start]
            out.start = st
        out.arcs[st] = [a._replace(weight=a.weight + d0) for a in out.arcs[st]]
        if st in out.finals:
            out.finals[st] += d0
    return out


def _partition_minimize(fst):
    """Merge equivalent states of a deterministic machine (Moore refinement),
    treating each (ilabel, olabel, weight) triple as one symbol."""
    n = fst.num_states
    klass = [0] * n
    finals = sorted({quantize(w) for w in fst.finals.values()})
    fclass = {w: i + 1 for i, w in enumerate(finals)}
    for s in range(n):
        klass[s] = fclass.get(quantize(fst.final_weight(s)), 0) if s in fst.finals else 0
    count = len(set(klass))
    while True:
        sigs = {}
        new = [0] * n
        for s in range(n):
            sig = (klass[s], tuple(sorted((a.ilabel, a.olabel, quantize(a.weight), klass[a.nextstate])
                                          for a in fst.arcs[s])))
            new[s] = sigs.setdefault(sig, len(sigs))
        klass = new
        if len(sigs) == count:
            break
        count = len(sigs)
    out = Fst()
    out.add_states(count)
    out.start = klass[fst.start]
    done = set()
    for s in range(n):
        c = klass[s]
        if c in done:
            continue
        done.add(c)
        seen = set()
        for a in fst.arcs[s]:
            key = (a.ilabel, a.olabel, klass[a.nextstate])
            if key not in seen:
                seen.add(key)
                out.arcs[c].append(a._replace(nextstate=klass[a.nextstate]))
        if s in fst.finals:
            out.finals[c] = fst.finals[s]
    return out


def minimize(fst):
    """Minimal equivalent of a deterministic machine: push, then merge."""
    if fst.start is None:
        return Fst()
    base = connect(fst)
    if not base.num_states:
        return base
    pushed = _partition_minimize(push_weights(base))
    if pushed.num_states <= base.num_states:
        return pushed
    return _partition_minimize(base)


# -- evaluation helpers ---------------------------------------------------------------

def transduce(fst, ilabels, max_output=64):
    """All outputs for an input string with their best weights.

    Returns ``{output_tuple: weight}``. Epsilon arcs are followed with a
    bound on output length so epsilon-output cycles terminate.
    """
    ilabels = list(ilabels)
    if fst.start is None:
        return {}
    best = {}
    # states are (fst state, position, output); Dijkstra-like with a bounded output
    frontier = {(fst.start, 0, ()): 0.0}
    heap = [(0.0, fst.start, 0, ())]
    result = {}
    while heap:
        w, s, pos, outp = heapq.heappop(heap)
        if w > frontier.get((s, pos, outp), INF):
            continue
        if pos == len(ilabels) and s in fst.finals:
            tot = w + fst.finals[s]
            if tot < result.get(outp, INF):
                result[outp] = tot
        for a in fst.arcs[s]:
            if a.ilabel == EPS:
                npos = pos
            elif pos < len(ilabels) and a.ilabel == ilabels[pos]:
                npos = pos + 1
            else:
                continue
            nout = outp if a.olabel == EPS else outp + (a.olabel,)
            if len(nout) > max_output:
                continue
            key = (a.nextstate, npos, nout)
            nw = w + a.weight
            if nw < frontier.get(key, INF):
                frontier[key] = nw
                heapq.heappush(heap, (nw, a.nextstate, npos, nout))
    return result


def string_weight(fst, ilabels):
    """Best weight of any path accepting ``ilabels`` (any output)."""
    res = transduce(fst, ilabels)
    return min(res.values()) if res else INF


def shortest_path(fst):
    """Best complete path: ``(weight, ilabels, olabels)``; weight inf if none."""
    if fst.start is None:
        return INF, [], []
    dist = {fst.start: 0.0}
    back = {}
    heap = [(0.0, fst.start)]
    best = (INF, None)
    done = set()
    while heap:
        d, s = heapq.heappop(heap)
        if s in done:
            continue
        done.add(s)
        if s in fst.finals and d + fst.finals[s] < best[0]:
            best = (d + fst.finals[s], s)
        for a in fst.arcs[s]:
            nd = d + a.weight
            if nd < dist.get(a.nextstate, INF):
                dist[a.nextstate] = nd
                back[a.nextstate] = (s, a)
                heapq.heappush(heap, (nd, a.nextstate))
    if best[1] is None:
        return INF, [], []
    il, ol = [], []
    s = best[1]
    while s != fst.start:
        s, a = back[s]
        if a.ilabel:
            il.append(a.ilabel)
        if a.olabel:
            ol.append(a.olabel)
    return best[0], il[::-1], ol[::-1]
