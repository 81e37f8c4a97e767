"""Character n-gram grammar with Witten-Bell smoothing, stored in backoff form.

Interpolated Witten-Bell::

    p(w | h) = (c(h, w) + N1(h) p(w | h')) / (c(h) + N1(h))

where ``N1(h)`` counts distinct successors of ``h`` and ``h'`` drops the
oldest token. Seen n-grams store this probability directly, every history
stores ``alpha(h) = N1(h) / (c(h) + N1(h))``, and unseen successors back off
through ``alpha``. The unigram level interpolates with a uniform
distribution over the vocabulary plus the end symbol, so every token has a
unigram entry and no mass is lost.
"""

import math
from collections import Counter, defaultdict

from ..exceptions import ConfigurationError, DomainError

BOS = "<s>"
EOS = "</s>"
_LOG10 = math.log(10.0)


def _tok_out(t):
    return "<space>" if t == " " else t


def _tok_in(t):
    return " " if t == "<space>" else t


class GrammarModel:
    """Backoff n-gram model with natural-log probabilities.

    ``logp`` maps ``history + (word,)`` to ``log p(word | history)`` for every
    stored n-gram; ``logbow`` maps a history to its log backoff weight.
    ``use_end`` false means strings end at no cost (no ``</s>`` prediction).
    """

    def __init__(self, order, vocab, logp, logbow, use_end=True):
        if order < 1:
            raise ConfigurationError("grammar order must be >= 1")
        self.order = int(order)
        self.vocab = list(vocab)
        self.logp = dict(logp)
        self.logbow = dict(logbow)
        self.use_end = use_end
        self.logbow.setdefault((), 0.0)
        for ng in self.logp:
            if len(ng) > 1:
                self.logbow.setdefault(ng[:-1], 0.0)

    # -- estimation ---------------------------------------------------------

    @classmethod
    def train(cls, sentences, order=8, vocab=None):
        """Estimate from an iterable of token sequences (strings are split into characters)."""
        sentences = [list(s) for s in sentences]
        if order < 1:
            raise ConfigurationError("grammar order must be >= 1")
        seen = sorted({t for s in sentences for t in s})
        vocab = sorted(set(vocab) | set(seen)) if vocab is not None else seen
        if not vocab:
            raise DomainError("empty vocabulary")
        if BOS in vocab or EOS in vocab:
            raise DomainError("vocabulary may not contain sentence markers")
        counts = defaultdict(Counter)  # history -> successor counts
        for s in sentences:
            padded = [BOS] + s + [EOS]
            for i in range(1, len(padded)):
                for k in range(order):
                    if i - k < 0:
                        break
                    counts[tuple(padded[i - k:i])][padded[i]] += 1
        targets = vocab + [EOS]
        uniform = 1.0 / len(targets)
        logp, logbow = {}, {}

        def prob(w, h):
            while h and h not in counts:
                h = h[1:]
            if (*h, w) in logp:
                return math.exp(logp[(*h, w)])
            if not h:
                return uniform
            return math.exp(logbow[h]) * prob(w, h[1:])

        uni = counts.get((), Counter())
        total, n1 = sum(uni.values()), len(uni)
        for w in targets:
            if total:
                p = (uni[w] + n1 * uniform) / (total + n1)
            else:
                p = uniform
            logp[(w,)] = math.log(p)
        logbow[()] = 0.0
        for h in sorted(counts, key=len):
            if not h:
                continue
            c = counts[h]
            total, n1 = sum(c.values()), len(c)
            alpha = n1 / (total + n1)
            logbow[h] = math.log(alpha)
            for w, cw in c.items():
                logp[(*h, w)] = math.log((cw + n1 * prob(w, h[1:])) / (total + n1))
        return cls(order, vocab, logp, logbow)

    @classmethod
    def uniform(cls, vocab):
        """Order-1 model: every token costs log|V| and strings end for free."""
        vocab = list(vocab)
        if not vocab:
            raise DomainError("empty vocabulary")
        lp = -math.log(len(vocab))
        return cls(1, vocab, {(w,): lp for w in vocab}, {(): 0.0}, use_end=False)

    # -- queries -------------------------------------------------------------

    def contexts(self):
        return sorted(self.logbow, key=lambda h: (len(h), h))

    def state_of(self, history):
        """Longest stored suffix of ``history`` (at most order-1 tokens)."""
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        while h and h not in self.logbow:
            h = h[1:]
        return h

    def log_prob(self, word, history=()):
        h = self.state_of(history)
        bow = 0.0
        while True:
            if (*h, word) in self.logp:
                return bow + self.logp[(*h, word)]
            if not h:
                raise DomainError(f"token {word!r} is outside the vocabulary")
            bow += self.logbow[h]
            h = h[1:]

    def successors(self, history):
        """Explicitly stored successors of a context."""
        h = tuple(history)
        return sorted(ng[-1] for ng in self.logp if ng[:-1] == h)

    def score(self, tokens):
        """Negative log probability of a complete sentence."""
        hist = [BOS] if self.order > 1 else []
        cost = 0.0
        for t in tokens:
            cost -= self.log_prob(t, hist)
            hist.append(t)
        if self.use_end:
            cost -= self.log_prob(EOS, hist)
        return cost

    def check_normalized(self, tol=1e-6):
        """Largest deviation from 1 of any context's successor mass."""
        targets = self.vocab + ([EOS] if self.use_end else [])
        worst = 0.0
        for h in self.logbow:
            total = sum(math.exp(self.log_prob(w, h)) for w in targets)
            worst = max(worst, abs(total - 1.0))
        if worst > tol:
            raise DomainError(f"grammar is not normalized (max deviation {worst:.3g})")
        return worst

    # -- ARPA ---------------------------------------------------------------

    def write_arpa(self, path):
        by_order = defaultdict(list)
        for ng in self.logp:
            by_order[len(ng)].append(ng)
        if self.order > 1 and (BOS,) not in self.logp:
            by_order[1].append((BOS,))
        with open(path, "w", encoding="utf-8") as f:
            f.write("\\data\\\n")
            for k in sorted(by_order):
                f.write(f"ngram {k}={len(by_order[k])}\n")
            for k in sorted(by_order):
                f.write(f"\n\\{k}-grams:\n")
                for ng in sorted(by_order[k]):
                    lp = -99.0 if ng == (BOS,) else self.logp[ng] / _LOG10
                    line = f"{lp!r}\t{' '.join(_tok_out(t) for t in ng)}"
                    if ng in self.logbow and ng != ():
                        line += f"\t{self.logbow[ng] / _LOG10!r}"
                    f.write(line + "\n")
            f.write("\n\\end\\\n")

    @classmethod
    def read_arpa(cls, path):
        logp, logbow = {}, {}
        order = 0
        section = None
        with open(path, encoding="utf-8") as f:
            for raw in f:
                line = raw.strip()
                if not line or line.startswith("ngram ") or line == "\\data\\":
                    continue
                if line == "\\end\\":
                    break
                if line.startswith("\\") and line.endswith("-grams:"):
                    section = int(line[1:line.index("-")])
                    order = max(order, section)
                    continue
                if section is None:
                    raise DomainError(f"{path}: malformed ARPA header")
                parts = line.split()
                if len(parts) not in (section + 1, section + 2):
                    raise DomainError(f"{path}: bad {section}-gram line {line!r}")
                ng = tuple(_tok_in(t) for t in parts[1:section + 1])
                if ng != (BOS,):
                    logp[ng] = float(parts[0]) * _LOG10
                if len(parts) == section + 2:
                    logbow[ng] = float(parts[-1]) * _LOG10
        if not logp:
            raise DomainError(f"{path}: no n-grams")
        vocab = sorted({ng[0] for ng in logp if len(ng) == 1} - {BOS, EOS})
        use_end = (EOS,) in logp
        return cls(order, vocab, logp, logbow, use_end=use_end)
