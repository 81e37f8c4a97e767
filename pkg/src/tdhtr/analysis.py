"""Error rates, decoder feature-magnitude profiles and the clipping sweep."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError


@dataclass
class ErrorReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self):
        if self.reference_length == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.reference_length


def edit_distance(ref, hyp):
    """Unit-cost Levenshtein alignment with S/I/D counts.

    The backtrace prefers substitution (or match), then deletion, then
    insertion when several predecessors are optimal.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    s = ins = dele = 0
    i, j = n, m
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i, j] == d[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorReport(int(s), ins, dele, n)


def _units(text, unit):
    if unit == "word":
        return text.split()
    if unit in ("char", "label"):
        return list(text)
    raise DomainError(f"unit must be 'label', 'char' or 'word', got {unit!r}")


def corpus_error_rate(pairs, unit="label"):
    """Total edit operations over total reference length (micro average)."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("empty corpus")
    errors = total = 0
    for ref, hyp in pairs:
        r = _units(ref, unit) if isinstance(ref, str) else list(ref)
        h = _units(hyp, unit) if isinstance(hyp, str) else list(hyp)
        rep = edit_distance(r, h)
        errors += rep.errors
        total += rep.reference_length
    if total == 0:
        raise DomainError("corpus has zero total reference length")
    return errors / total


# -- feature magnitudes -------------------------------------------------------

@dataclass
class MagnitudeProfile:
    values: np.ndarray  # mean |activation| per feature, feature order

    @property
    def sorted(self):
        """Descending by magnitude, as (feature_index, value) pairs."""
        order = np.argsort(-self.values, kind="stable")
        return order, self.values[order]

    @property
    def std(self):
        return float(np.std(self.values))

    def write_csv(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "magnitude_unsorted.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("index", "value"))
            w.writerows((i, repr(float(v))) for i, v in enumerate(self.values))
        order, vals = self.sorted
        with open(os.path.join(out_dir, "magnitude_sorted.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("index", "value"))
            w.writerows((int(i), repr(float(v))) for i, v in zip(order, vals))


def profile_from_features(feature_seqs):
    """Mean absolute value per feature over every frame of every sequence."""
    feature_seqs = list(feature_seqs)
    if not feature_seqs:
        raise DomainError("empty dataset")
    total = None
    frames = 0
    for f in feature_seqs:
        s = np.abs(np.asarray(f, np.float64)).sum(axis=0)
        total = s if total is None else total + s
        frames += f.shape[0]
    return MagnitudeProfile(total / frames)


def magnitude_profile(model, images):
    """Profile of the first decoder's top-layer forward-direction outputs."""
    if len(images) == 0:
        raise DomainError("empty dataset")
    return profile_from_features(model.top_features(im) for im in images)


# -- clipping sweep -----------------------------------------------------------

@dataclass
class ClipSweep:
    gammas: list
    errors: list
    unclipped: float

    def write_csv(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "clip_sweep.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("gamma", "error_rate"))
            w.writerows((repr(float(g)), repr(float(e))) for g, e in zip(self.gammas, self.errors))

    def error_at(self, gamma):
        return self.errors[self.gammas.index(gamma)]


def clip_sweep(model, dataset, gammas):
    """Greedy label error with top decoder features clamped to [-gamma, gamma]."""
    from .training import label_error

    gammas = [float(g) for g in gammas]
    if any(not g > 0 for g in gammas):
        raise DomainError("clipping thresholds must be positive")
    errors = [label_error(model, dataset, clip=g) for g in gammas]
    return ClipSweep(gammas, errors, label_error(model, dataset))


# -- plots --------------------------------------------------------------------

def svg_bars(values, path, title="", color="#3366cc", width=640, height=240):
    """Minimal dependency-free bar chart."""
    values = np.asarray(values, np.float64)
    top = float(values.max()) if values.size and values.max() > 0 else 1.0
    bw = width / max(len(values), 1)
    bars = "".join(
        f'<rect x="{i * bw:.2f}" y="{height - v / top * (height - 20):.2f}" width="{max(bw - 0.5, 0.5):.2f}" '
        f'height="{v / top * (height - 20):.2f}" fill="{color}"/>' for i, v in enumerate(values))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
                f'<text x="4" y="14" font-size="12">{title}</text>{bars}</svg>\n')


def svg_lines(xs, series, path, title="", width=640, height=240):
    """Line chart of ``{label: ys}`` against shared ``xs``."""
    colors = ["#cc3333", "#3366cc", "#339933", "#996633"]
    xs = np.asarray(xs, np.float64)
    ymax = max(max(ys) for ys in series.values()) or 1.0
    x0, x1 = xs.min(), xs.max() if xs.max() > xs.min() else xs.min() + 1

    def pt(x, y):
        return f"{40 + (x - x0) / (x1 - x0) * (width - 60):.2f},{height - 20 - y / ymax * (height - 40):.2f}"

    lines = "".join(
        f'<polyline fill="none" stroke="{colors[k % len(colors)]}" points="{" ".join(pt(x, y) for x, y in zip(xs, ys))}"/>'
        f'<text x="{width - 120}" y="{16 + 14 * k}" font-size="11" fill="{colors[k % len(colors)]}">{label}</text>'
        for k, (label, ys) in enumerate(series.items()))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
                f'<text x="4" y="14" font-size="12">{title}</text>{lines}</svg>\n')
