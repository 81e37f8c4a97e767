"""Frame-synchronous Viterbi beam search over a search graph."""

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError, DomainError
from .fst import EPS, INF, transduce


@dataclass
class DecodeResult:
    labels: list  # output labels of the best path, None when nothing survived
    score: float

    @property
    def found(self):
        return self.labels is not None


def _trace(bp):
    out = []
    while bp is not None:
        label, bp = bp
        out.append(label)
    return out[::-1]


def _eps_closure(fst, tokens):
    """Relax input-epsilon arcs in place; tokens map state -> (cost, backpointer)."""
    heap = [(c, s) for s, (c, _) in tokens.items()]
    heapq.heapify(heap)
    while heap:
        c, s = heapq.heappop(heap)
        if c > tokens[s][0]:
            continue
        bp = tokens[s][1]
        for a in fst.arcs[s]:
            if a.ilabel != EPS:
                continue
            nc = c + a.weight
            if nc < tokens.get(a.nextstate, (INF,))[0]:
                tokens[a.nextstate] = (nc, bp if a.olabel == EPS else (a.olabel, bp))
                heapq.heappush(heap, (nc, a.nextstate))


def decode(log_posteriors, graph, beam=INF, acoustic_scale=1.0):
    """Best output sequence for ``(T, A + 1)`` log posteriors.

    Arc cost is graph weight plus ``acoustic_scale`` times the negative log
    posterior of the frame label the arc reads (input label ``j`` reads
    column ``j - 1``). After each frame, tokens worse than the best by more
    than ``beam`` are dropped. Returns ``DecodeResult(None, inf)`` if no
    path survives to a final state.
    """
    fst = getattr(graph, "fst", graph)
    lp = np.asarray(log_posteriors, np.float64)
    if lp.ndim != 2:
        raise DimensionError(f"expected (T, A+1) log posteriors, got shape {lp.shape}")
    if not beam > 0:
        raise DomainError("beam must be positive")
    if fst.start is None:
        return DecodeResult(None, INF)
    k = lp.shape[1]
    big = max((a.ilabel for arcs in fst.arcs for a in arcs), default=0)
    if big > k:
        raise DimensionError(f"graph reads label {big} but posteriors have {k} columns")
    cost = -acoustic_scale * lp
    tokens = {fst.start: (0.0, None)}
    _eps_closure(fst, tokens)
    for t in range(lp.shape[0]):
        row = cost[t]
        nxt = {}
        for s, (c, bp) in tokens.items():
            for a in fst.arcs[s]:
                if a.ilabel == EPS:
                    continue
                nc = c + a.weight + row[a.ilabel - 1]
                if nc < nxt.get(a.nextstate, (INF,))[0]:
                    nxt[a.nextstate] = (nc, bp if a.olabel == EPS else (a.olabel, bp))
        _eps_closure(fst, nxt)
        if nxt and beam < INF:
            cut = min(c for c, _ in nxt.values()) + beam
            nxt = {s: v for s, v in nxt.items() if v[0] <= cut}
        tokens = nxt
        if not tokens:
            return DecodeResult(None, INF)
    best = (INF, None)
    for s, (c, bp) in sorted(tokens.items()):
        total = c + fst.final_weight(s)
        if total < best[0]:
            best = (total, bp)
    if best[0] == INF:
        return DecodeResult(None, INF)
    return DecodeResult(_trace(best[1]), float(best[0]))


def brute_force_decode(log_posteriors, graph, acoustic_scale=1.0):
    """Minimum over every frame-label string of acoustic cost plus graph cost."""
    fst = getattr(graph, "fst", graph)
    lp = np.asarray(log_posteriors, np.float64)
    steps, k = lp.shape
    best = DecodeResult(None, INF)
    for frames in itertools.product(range(k), repeat=steps):
        ac = -acoustic_scale * sum(lp[t, j] for t, j in enumerate(frames))
        outs = transduce(fst, [j + 1 for j in frames])
        for out, w in sorted(outs.items()):
            if ac + w < best.score:
                best = DecodeResult(list(out), float(ac + w))
    return best
