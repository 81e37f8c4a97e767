"""Token, lexicon and grammar transducers and the composed search graph.

Label conventions for an alphabet of ``A`` characters:

* character ``alphabet[k]`` has label ``k + 1``;
* the CTC blank has input label ``A + 1`` in the token transducer, so input
  label ``j`` reads posterior column ``j - 1``;
* lexicon units are numbered from 1 in the order given.
"""

from dataclasses import dataclass, field

from ..exceptions import ConfigurationError, DomainError
from .fst import EPS, Fst, compose, connect, determinize, minimize, rmepsilon
from .lm import EOS, GrammarModel


def build_token_fst(alphabet_size):
    """CTC collapse: blank* c+ blank* per character, output once.

    State 0 means "after a blank or at the start"; state ``c`` means "inside
    a run of character ``c``". Repeats loop on ``c`` emitting nothing, a
    blank returns to 0, and a different character starts a new run. Every
    state is final, so the empty frame string maps to the empty output.
    """
    a = int(alphabet_size)
    if a < 1:
        raise DomainError("alphabet size must be >= 1")
    blank = a + 1
    t = Fst()
    t.add_states(a + 1)
    t.set_start(0)
    t.add_arc(0, blank, EPS, 0.0, 0)
    for s in range(a + 1):
        for c in range(1, a + 1):
            if s == c:
                t.add_arc(s, c, EPS, 0.0, c)
            else:
                t.add_arc(s, c, c, 0.0, c)
        if s:
            t.add_arc(s, blank, EPS, 0.0, 0)
        t.set_final(s, 0.0)
    return t


@dataclass
class Lexicon:
    """Units with character spellings; ``separator`` joins consecutive units."""
    units: list  # [(name, spelling)]
    separator: str = None
    unit_ids: dict = field(init=False)

    def __post_init__(self):
        names = [u for u, _ in self.units]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ConfigurationError(f"duplicate lexicon units: {dup}")
        for name, spelling in self.units:
            if not spelling:
                raise DomainError(f"unit {name!r} has an empty spelling")
        if self.separator is not None and self.separator in names:
            raise ConfigurationError("separator collides with a unit name")
        self.unit_ids = {u: i + 1 for i, u in enumerate(names)}
        if self.separator is not None:
            self.unit_ids[self.separator] = len(names) + 1

    @classmethod
    def characters(cls, alphabet):
        return cls([(c, c) for c in alphabet])

    def symbols(self):
        return {i: u for u, i in self.unit_ids.items()}


def build_lexicon_fst(lexicon, alphabet):
    """Map character strings to unit strings.

    The unit label sits on the first arc of each spelling. Without a
    separator every unit is a loop through the start state (for single
    characters that is the identity). With one, units must be joined by the
    separator character, which maps to its own unit label.
    """
    if not isinstance(lexicon, Lexicon):
        lexicon = Lexicon(list(lexicon))
    chars = {c: i + 1 for i, c in enumerate(alphabet)}
    for name, spelling in lexicon.units:
        missing = set(spelling) - set(chars)
        if missing:
            raise DomainError(f"unit {name!r} uses characters outside the alphabet: {sorted(missing)}")
    L = Fst()
    start = L.add_state()
    L.set_start(start)
    end = start
    if lexicon.separator is not None:
        if lexicon.separator not in chars:
            raise DomainError("separator must be a character of the alphabet")
        end = L.add_state()
        L.add_arc(end, chars[lexicon.separator], lexicon.unit_ids[lexicon.separator], 0.0, start)
        L.set_final(end, 0.0)
    else:
        L.set_final(start, 0.0)
    for name, spelling in lexicon.units:
        prev = start
        for k, ch in enumerate(spelling):
            nxt = end if k == len(spelling) - 1 else L.add_state()
            L.add_arc(prev, chars[ch], lexicon.unit_ids[name] if k == 0 else EPS, 0.0, nxt)
            prev = nxt
    return L


def build_grammar_fst(model, symbols):
    """Backoff n-gram acceptor: one state per stored context.

    ``symbols`` maps each vocabulary token to its label. Seen successors get
    arcs weighted ``-log p``; each non-empty context has an epsilon arc to
    its shortened context weighted ``-log alpha``. End-of-sentence
    probability becomes the final weight.
    """
    missing = [w for w in model.vocab if w not in symbols]
    if missing:
        raise DomainError(f"grammar tokens without labels: {missing[:5]}")
    ctxs = model.contexts()
    sid = {h: i for i, h in enumerate(ctxs)}
    G = Fst()
    G.add_states(len(ctxs))
    G.set_start(sid[model.state_of(("<s>",))] if model.order > 1 else sid[()])
    succ = {h: [] for h in ctxs}
    for ng, lp in model.logp.items():
        if ng[:-1] in succ:
            succ[ng[:-1]].append((ng[-1], lp))
    for h in ctxs:
        s = sid[h]
        for w, lp in sorted(succ[h]):
            if w == EOS:
                G.set_final(s, -lp)
            elif w in symbols:
                G.add_arc(s, symbols[w], symbols[w], -lp, sid[model.state_of(h + (w,))])
        if h:
            G.add_arc(s, EPS, EPS, -model.logbow[h], sid[model.state_of(h[1:])])
    if not model.use_end:
        for h in ctxs:
            G.set_final(sid[h], 0.0)
    return G


@dataclass
class SearchGraph:
    fst: Fst
    alphabet: str
    output_symbols: dict  # label -> unit string
    lg_states: int = 0

    def labels_to_text(self, labels, joiner=""):
        return joiner.join(self.output_symbols[l] for l in labels)


def build_lg(grammar, alphabet, lexicon=None, max_states=1_000_000, optimize=True):
    """min(det(L o G)) with epsilons removed before determinization."""
    lexicon = lexicon or Lexicon.characters(alphabet)
    L = build_lexicon_fst(lexicon, alphabet)
    G = build_grammar_fst(grammar, lexicon.unit_ids)
    LG = compose(L, G)
    if not optimize:
        return LG, lexicon
    LG = rmepsilon(LG)
    return minimize(determinize(LG, max_states=max_states)), lexicon


def build_search_graph(grammar, alphabet, lexicon=None, max_states=1_000_000, optimize=True):
    """T o min(det(L o G)); ``optimize=False`` gives the uncompressed T o L o G."""
    if isinstance(grammar, Fst):
        raise ConfigurationError("pass a GrammarModel, not a compiled Fst")
    lg, lexicon = build_lg(grammar, alphabet, lexicon, max_states, optimize)
    S = connect(compose(build_token_fst(len(alphabet)), lg))
    return SearchGraph(S, alphabet, lexicon.symbols(), lg.num_states)


def grammar_from_texts(texts, order=8, alphabet=None):
    return GrammarModel.train(texts, order=order, vocab=list(alphabet) if alphabet else None)
