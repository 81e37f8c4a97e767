"""Synthetic text-line corpus: 5x7 bitmap glyphs rendered into 64-px lines.

On disk a split is ``<root>/<split>/images/<id>.pgm`` (8-bit binary PGM,
dark ink on white) plus ``<root>/<split>/index.tsv`` with columns
``id, width, transcript``. Loaded images are inverted to [0, 1] with ink
as 1 and background 0; no other preprocessing is applied.
"""

import csv
import io
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DomainError
from .numerics import Rng

LINE_HEIGHT = 64
FRAME_WIDTH = 4

_FONT_ROWS = {
    "a": [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
    "b": ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."],
    "d": ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"],
    "e": [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
    "h": ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    "i": ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."],
    "l": [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "n": [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    "o": [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."],
    "r": [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."],
    "s": [".....", ".....", ".####", "#....", ".###.", "....#", "####."],
    "t": [".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##."],
    " ": [".....", ".....", ".....", ".....", ".....", ".....", "....."],
}
FONT = {ch: np.array([[c == "#" for c in row] for row in rows], dtype=np.uint8)
        for ch, rows in _FONT_ROWS.items()}
# "b" is drawable but not in the default alphabet
DEFAULT_ALPHABET = "adehilnorst "

WORDS = (
    "a an and as at ate dine dish do done door each ear east eat edit end "
    "hand hat he head hen her hero hide hill his hit hold home hot idea in "
    "inn into is it lad laid land late lead lean lid lie line lion list load "
    "lord lost lot near need nest net no nod noise none nor north not note "
    "oar odd old on one or other rain raise rat read red rest rich ride road "
    "rod roll rose rot sad said salt sand sat sea seat see send shade she "
    "shed shin shoe shore shot side silent sit slate sled slide slot so soil "
    "sold son sore star steel stone store tail tale tan tea ten the then "
    "these this those tide tile tin to toad toe told tone torn trade trail "
    "train tree trial".split()
)
WORDS = tuple(w for w in WORDS if set(w) <= set(DEFAULT_ALPHABET))


@dataclass
class SyntheticDatasetSpec:
    alphabet: str = DEFAULT_ALPHABET
    min_glyphs: int = 4
    max_glyphs: int = 12
    scale: int = 3  # integer glyph magnification
    gap: int = 3  # blank columns after each glyph
    margin: int = 4
    jitter_y: int = 2
    jitter_x: int = 1
    width_variation: bool = True  # horizontal scale drawn from scale-1..scale+1
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    seed: int = 1234

    def __post_init__(self):
        missing = set(self.alphabet) - set(FONT)
        if missing:
            raise DomainError(f"no bitmap for glyphs {sorted(missing)}")
        if not 1 <= self.min_glyphs <= self.max_glyphs:
            raise DomainError("need 1 <= min_glyphs <= max_glyphs")

    def to_dict(self):
        return asdict(self)


def sample_text(spec, rng):
    """A line of words over the alphabet, ``min_glyphs..max_glyphs`` long."""
    words = [w for w in WORDS if set(w) <= set(spec.alphabet)]
    target = int(rng.integers(spec.min_glyphs, spec.max_glyphs + 1))
    if not words:
        return "".join(spec.alphabet[int(i)] for i in rng.integers(0, len(spec.alphabet), target))
    text = ""
    while len(text) < target:
        w = words[int(rng.integers(0, len(words)))]
        text = w if not text else text + " " + w
    text = text[:target].strip()
    while len(text) < spec.min_glyphs:
        text += words[0][: spec.min_glyphs - len(text)]
    return text


def render_line(text, spec, rng=None):
    """Render ``text`` as a ``64 x W`` float image, ink 1 on background 0.

    Without ``rng`` (or with all jitter disabled) glyphs are placed at their
    nominal scale and spacing, so the line is an exact concatenation of the
    magnified bitmaps.
    """
    s = spec.scale
    glyph_h = 7 * s
    pieces = []
    for ch in text:
        sx = s
        dy = dx = 0
        if rng is not None:
            if spec.width_variation:
                sx = s + int(rng.integers(-1, 2))
            if spec.jitter_y:
                dy = int(rng.integers(-spec.jitter_y, spec.jitter_y + 1))
            if spec.jitter_x:
                dx = int(rng.integers(-spec.jitter_x, spec.jitter_x + 1))
        bmp = np.kron(FONT[ch], np.ones((s, max(sx, 1)), np.uint8))
        pieces.append((bmp, dy, max(spec.gap + dx, 1)))
    width = 2 * spec.margin + sum(b.shape[1] + g for b, _, g in pieces)
    width += (-width) % FRAME_WIDTH
    img = np.zeros((LINE_HEIGHT, width), np.float32)
    top0 = (LINE_HEIGHT - glyph_h) // 2
    x = spec.margin
    for bmp, dy, g in pieces:
        top = top0 + dy
        img[top:top + glyph_h, x:x + bmp.shape[1]] = np.maximum(
            img[top:top + glyph_h, x:x + bmp.shape[1]], bmp)
        x += bmp.shape[1] + g
    return img


def pad_width(img, multiple=FRAME_WIDTH, value=0.0):
    extra = (-img.shape[1]) % multiple
    if not extra:
        return img
    return np.pad(img, ((0, 0), (0, extra)), constant_values=value)


# -- PGM ------------------------------------------------------------------

def write_pgm(path, img01):
    """Store a [0,1] ink image as dark-on-white 8-bit PGM."""
    gray = np.round(255.0 * (1.0 - np.clip(img01, 0.0, 1.0))).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM and return the inverted [0,1] ink image."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) > 255:
        raise DomainError(f"{path}: only 8-bit binary PGM (P5) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], np.uint8).reshape(h, w)
    return 1.0 - pixels.astype(np.float32) / 255.0


# -- datasets -------------------------------------------------------------

class LineDataset:
    """In-memory list of ``(image, transcript)`` pairs."""

    def __init__(self, images, texts, ids=None):
        if len(images) != len(texts):
            raise DomainError("images and transcripts differ in length")
        self.images = [pad_width(np.asarray(im, np.float32)) for im in images]
        self.texts = list(texts)
        self.ids = list(ids) if ids is not None else [f"{i:06d}" for i in range(len(texts))]

    def __len__(self):
        return len(self.texts)

    def __getitem__(self, i):
        return self.images[i], self.texts[i]

    def subset(self, idx):
        return LineDataset([self.images[i] for i in idx], [self.texts[i] for i in idx],
                           [self.ids[i] for i in idx])

    @classmethod
    def load(cls, split_dir):
        images, texts, ids = [], [], []
        with open(os.path.join(split_dir, "index.tsv"), encoding="utf-8", newline="") as f:
            for row in csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE):
                if not row or row[0] == "id":
                    continue
                ids.append(row[0])
                texts.append(row[2])
                img = read_pgm(os.path.join(split_dir, "images", row[0] + ".pgm"))
                if img.shape[0] != LINE_HEIGHT or img.shape[1] != int(row[1]):
                    raise DomainError(f"{row[0]}: image shape {img.shape} disagrees with index")
                images.append(img)
        return cls(images, texts, ids)

    def save(self, split_dir):
        os.makedirs(os.path.join(split_dir, "images"), exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n", escapechar="\\")
        w.writerow(["id", "width", "transcript"])
        for i, img, text in zip(self.ids, self.images, self.texts):
            write_pgm(os.path.join(split_dir, "images", i + ".pgm"), img)
            w.writerow([i, img.shape[1], text])
        with open(os.path.join(split_dir, "index.tsv"), "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())


def make_split(spec, n, rng):
    texts = [sample_text(spec, rng) for _ in range(n)]
    images = [render_line(t, spec, rng) for t in texts]
    return LineDataset(images, texts)


def generate_dataset(spec, root=None):
    """Render train/val/test splits; write them under ``root`` when given."""
    rng = Rng(spec.seed, "dataset")
    splits = {}
    for name, n in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        splits[name] = make_split(spec, n, rng.child(name))
        if root is not None:
            splits[name].save(os.path.join(root, name))
    return splits


def encode_text(text, alphabet):
    try:
        return [alphabet.index(ch) for ch in text]
    except ValueError:
        bad = sorted(set(text) - set(alphabet))
        raise DomainError(f"transcript contains glyphs outside the alphabet: {bad}") from None


def decode_labels(labels, alphabet):
    return "".join(alphabet[i] for i in labels)


def iter_batches(dataset, batch_size, order_rng=None):
    """Width-sorted batches, yielded in shuffled order when ``order_rng`` is set.

    Each item is ``(indices, images, frame_lengths)`` with images right-padded
    with background to the widest line in the batch.
    """
    widths = np.array([im.shape[1] for im in dataset.images])
    order = np.argsort(widths, kind="stable")
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if order_rng is not None:
        chunks = [chunks[i] for i in order_rng.permutation(len(chunks))]
    for idx in chunks:
        wmax = int(widths[idx].max())
        batch = np.zeros((len(idx), LINE_HEIGHT, wmax), np.float32)
        for j, i in enumerate(idx):
            batch[j, :, :widths[i]] = dataset.images[i]
        yield idx, batch, widths[idx] // FRAME_WIDTH
