"""Synthetic scene-text corpus with character, word and line ground truth.

Images hold a few lines of rendered words plus non-text clutter. Even-indexed
images are dark text on a light background, odd-indexed ones the inverse.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .component_tree import DARK_ON_LIGHT, LIGHT_ON_DARK
from .evaluation import write_rects
from .linking import union_box

Box = tuple[int, int, int, int]


@dataclass
class CharBox:
    char: str
    bbox: Box


@dataclass
class Word:
    text: str
    bbox: Box
    chars: list[CharBox]


@dataclass
class Line:
    bbox: Box
    words: list[Word]


@dataclass
class Annotation:
    name: str
    polarity: str
    width: int
    height: int
    lines: list[Line] = field(default_factory=list)

    @property
    def words(self) -> list[Word]:
        return [w for line in self.lines for w in line.words]

    @property
    def chars(self) -> list[CharBox]:
        return [c for w in self.words for c in w.chars]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Annotation":
        d = json.loads(text)
        lines = [
            Line(tuple(l["bbox"]), [
                Word(w["text"], tuple(w["bbox"]), [CharBox(c["char"], tuple(c["bbox"])) for c in w["chars"]])
                for w in l["words"]
            ])
            for l in d["lines"]
        ]
        return cls(d["name"], d["polarity"], d["width"], d["height"], lines)


def _font(size: int):
    return ImageFont.load_default(size=size)


def _random_word(rng) -> str:
    n = int(rng.integers(3, 9))
    style = rng.random()
    letters = string.ascii_uppercase if style < 0.3 else string.ascii_lowercase
    word = "".join(rng.choice(list(letters), n))
    if 0.3 <= style < 0.6:
        word = word[0].upper() + word[1:]
    return word


def _ink_box(size: tuple[int, int], xy, ch, font) -> Box | None:
    layer = Image.new("L", size, 0)
    ImageDraw.Draw(layer).text(xy, ch, font=font, fill=255)
    arr = np.asarray(layer)
    ys, xs = np.nonzero(arr > 96)
    if xs.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def _overlaps(box: Box, others, pad: int = 0) -> bool:
    x, y, w, h = box
    for ox, oy, ow, oh in others:
        if x - pad < ox + ow and ox < x + w + pad and y - pad < oy + oh and oy < y + h + pad:
            return True
    return False


def render_fixture(rng, name: str = "fixture", width: int = 640, height: int = 480,
                   polarity: str = DARK_ON_LIGHT, noise: float = 2.0) -> tuple[np.ndarray, Annotation]:
    """Render one image; returns (HxWx3 uint8 RGB, annotation)."""
    bg_level = int(rng.integers(200, 256))
    fg_level = int(rng.integers(0, 60))
    canvas = Image.new("L", (width, height), bg_level)
    mask = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(mask)
    ann = Annotation(name, polarity, width, height)
    occupied: list[Box] = []

    n_lines = int(rng.integers(2, 5))
    y = int(rng.integers(10, 40))
    for _ in range(n_lines):
        size = int(rng.integers(22, 49))
        font = _font(size)
        words = [_random_word(rng) for _ in range(int(rng.integers(1, 4)))]
        space = font.getlength(" ") * rng.uniform(1.4, 2.2)
        total = sum(font.getlength(w) for w in words) + space * (len(words) - 1)
        if total > width - 20:
            words = words[:1]
            total = font.getlength(words[0])
        if total > width - 20 or y + 1.6 * size > height - 10:
            break
        x = float(rng.uniform(10, width - 10 - total))
        line_words = []
        for text in words:
            chars = []
            for i, ch in enumerate(text):
                cx = x + font.getlength(text[:i])
                box = _ink_box((width, height), (cx, y), ch, font)
                draw.text((cx, y), ch, font=font, fill=255)
                if box is not None:
                    chars.append(CharBox(ch, box))
            x += font.getlength(text) + space
            if chars:
                line_words.append(Word(text, union_box([c.bbox for c in chars]), chars))
        if line_words:
            line = Line(union_box([w.bbox for w in line_words]), line_words)
            ann.lines.append(line)
            occupied.append(line.bbox)
        y += int(size * rng.uniform(1.5, 2.2))

    cdraw = ImageDraw.Draw(mask)
    for _ in range(int(rng.integers(2, 6))):
        for _attempt in range(20):
            w = int(rng.integers(15, 120))
            h = int(rng.integers(15, 120))
            x0 = int(rng.integers(0, width - w))
            y0 = int(rng.integers(0, height - h))
            if not _overlaps((x0, y0, w, h), occupied, pad=12):
                break
        else:
            continue
        occupied.append((x0, y0, w, h))
        kind = rng.integers(0, 3)
        shape = [x0, y0, x0 + w - 1, y0 + h - 1]
        level = int(rng.integers(120, 256))
        if kind == 0:
            cdraw.rectangle(shape, outline=level, width=int(rng.integers(2, 6)))
        elif kind == 1:
            cdraw.ellipse(shape, fill=level)
        else:
            cdraw.line(shape, fill=level, width=int(rng.integers(2, 8)))

    alpha = np.asarray(mask, dtype=np.float64) / 255.0
    gray = np.asarray(canvas, dtype=np.float64) * (1 - alpha) + fg_level * alpha
    if noise > 0:
        gray = gray + rng.normal(0.0, noise, gray.shape)
    gray = np.clip(np.rint(gray), 0, 255)
    if polarity == LIGHT_ON_DARK:
        gray = 255 - gray
    tint = rng.integers(-8, 9, size=3)
    rgb = np.clip(gray[..., None] + tint[None, None, :], 0, 255).astype(np.uint8)
    return rgb, ann


def generate_corpus(out_dir, n: int = 20, seed: int = 0, width: int = 640, height: int = 480,
                    prefix: str = "fixture") -> list[str]:
    """Write ``images/``, ``gt/`` (word boxes) and ``annotations/`` under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("images", "gt", "annotations"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        name = f"{prefix}_{i:03d}"
        polarity = DARK_ON_LIGHT if i % 2 == 0 else LIGHT_ON_DARK
        rgb, ann = render_fixture(rng, name, width, height, polarity)
        Image.fromarray(rgb).save(out / "images" / f"{name}.png")
        write_rects(out / "gt" / f"{name}.txt", [w.bbox for w in ann.words], [w.text for w in ann.words])
        (out / "annotations" / f"{name}.json").write_text(ann.to_json(), encoding="utf-8")
        names.append(name)
    return names


def load_corpus(corpus_dir) -> list[tuple[Path, Annotation]]:
    root = Path(corpus_dir)
    items = []
    for ann_path in sorted((root / "annotations").glob("*.json")):
        ann = Annotation.from_json(ann_path.read_text(encoding="utf-8"))
        items.append((root / "images" / f"{ann.name}.png", ann))
    return items
