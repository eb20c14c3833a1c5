"""Procedural synthetic document pages with exact word-level ground truth.

Pages are grayscale float grids in [0, 1] (1 = paper, 0 = ink). Words are
placed on non-overlapping text lines below a reserved blank header band, so
the prompt-on-image baseline can render a question without re-layout.
Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import group_lines, raster_text
from .errors import CapacityExceeded, ConfigError
from .fonts import GlyphFont, builtin_font
from .util import derive_seed

DEFAULT_WORDS = (
    "the", "and", "for", "with", "from", "this", "that", "are", "was", "has",
    "have", "not", "but", "all", "one", "two", "six", "ten", "new", "old",
    "big", "red", "blue", "gray", "cold", "warm", "fast", "slow", "open",
    "shut", "down", "over", "under", "near", "far", "then", "when", "where",
    "here", "there", "item", "unit", "page", "line", "form", "note", "plan",
    "cost", "fee", "due", "paid", "cash", "card", "bank", "loan", "debt",
    "firm", "dept", "memo", "desk", "file", "case", "task", "goal", "team",
    "week", "year", "day", "hour", "city", "zone", "area", "road", "lane",
    "park", "mill", "farm", "shop", "store",
)

DEFAULT_KEYS = (
    "total", "date", "rate", "qty", "sum", "tax", "id", "cost", "name",
    "code", "ref", "zip", "fee", "age", "row", "col", "lot", "bin", "box",
    "net", "due", "vat", "tip", "unit", "size", "mass", "temp", "year",
    "week", "day", "hour", "min", "max", "avg", "seq", "page", "rank",
    "score", "level", "count",
)


@dataclass(frozen=True)
class WordBox:
    """A rendered word and its pixel-exact bounding box (top-left origin)."""

    text: str
    x: int
    y: int
    w: int
    h: int

    def intersection_area(self, other: "WordBox") -> int:
        dx = min(self.x + self.w, other.x + other.w) - max(self.x, other.x)
        dy = min(self.y + self.h, other.y + other.h) - max(self.y, other.y)
        return max(0, dx) * max(0, dy)


@dataclass
class DocumentImage:
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    words: list[WordBox]
    page_id: str
    seed: int

    @property
    def word_count(self) -> int:
        return len(self.words)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class VqaTriple:
    page_id: str
    question: str
    answers: tuple[str, ...]
    locality: tuple[int, int, int, int]  # x, y, w, h of the supporting words


@dataclass(frozen=True)
class SynthConfig:
    page_height: int = 256
    page_width: int = 128
    words: int = 24                # exact word count per page
    num_lines: int | None = None   # None = wrap greedily
    kv_rows: int = 2               # "key: value" pairs per page (2 words each)
    margin: int = 2
    line_gap: int = 2
    word_vocab: tuple[str, ...] = DEFAULT_WORDS
    key_vocab: tuple[str, ...] = DEFAULT_KEYS
    value_digits: tuple[int, int] = (1, 3)
    # corpus-level knobs
    pages: int = 16
    min_words: int = 10
    max_words: int = 48

    def font(self) -> GlyphFont:
        return builtin_font()

    @property
    def header_height(self) -> int:
        return builtin_font().height + 4

    @property
    def line_tol(self) -> float:
        return builtin_font().height / 2.0


def _draw_text(pixels: np.ndarray, font: GlyphFont, text: str, x: int, y: int) -> None:
    raster = font.render_text(text)
    h, w = raster.shape
    region = pixels[y : y + h, x : x + w]
    region[raster == 1] = 0.0


def _build_units(config: SynthConfig, rng: random.Random) -> list[list[str]]:
    """Word groups to lay out; a key/value pair is one atomic 2-word unit."""
    n = config.words
    kv_count = min(config.kv_rows, len(config.key_vocab), n // 2)
    lo, hi = config.value_digits
    units: list[list[str]] = []
    for key in rng.sample(list(config.key_vocab), kv_count):
        value = "".join(rng.choice("0123456789") for _ in range(rng.randint(lo, hi)))
        units.append([key + ":", value])
    for _ in range(n - 2 * kv_count):
        units.append([rng.choice(config.word_vocab)])
    rng.shuffle(units)
    return units


def generate_page(config: SynthConfig, seed: int, page_id: str | None = None) -> DocumentImage:
    """Render exactly config.words non-overlapping words in text lines.

    Deterministic in (config, seed). Raises CapacityExceeded when the words
    cannot be placed on the configured page.
    """
    font = config.font()
    rng = random.Random(seed)
    units = _build_units(config, rng)

    usable_w = config.page_width - 2 * config.margin
    pitch = font.height + config.line_gap
    top = config.header_height + config.line_gap
    max_lines = (config.page_height - top - font.height) // pitch + 1
    if max_lines < 1:
        raise CapacityExceeded("page too short for a single text line")

    # Assign units to lines.
    lines: list[list[str]] = [[]]
    widths = [0]
    space = font.width
    if config.num_lines is not None:
        if config.num_lines > max_lines:
            raise CapacityExceeded(
                f"{config.num_lines} lines requested, page fits {max_lines}"
            )
        n_words = sum(len(u) for u in units)
        base, extra = divmod(n_words, config.num_lines)
        quotas = [base + (1 if i < extra else 0) for i in range(config.num_lines)]
        lines = [[] for _ in range(config.num_lines)]
        widths = [0] * config.num_lines
        li = 0
        for unit in units:
            while li < config.num_lines and len(lines[li]) >= max(1, quotas[li]):
                li += 1
            if li >= config.num_lines:
                li = config.num_lines - 1
            for word in unit:
                w = font.text_width(word)
                widths[li] += (space if lines[li] else 0) + w
                lines[li].append(word)
        for i, used in enumerate(widths):
            if used > usable_w:
                raise CapacityExceeded(
                    f"line {i} needs {used}px, only {usable_w}px available"
                )
    else:
        for unit in units:
            unit_w = sum(font.text_width(w) for w in unit) + space * (len(unit) - 1)
            if unit_w > usable_w:
                raise CapacityExceeded(f"unit {unit!r} wider than the page")
            needed = unit_w + (space if lines[-1] else 0)
            if widths[-1] + needed > usable_w:
                lines.append([])
                widths.append(0)
                needed = unit_w
            if len(lines) > max_lines:
                raise CapacityExceeded(
                    f"{config.words} words need more than {max_lines} lines"
                )
            lines[-1].extend(unit)
            widths[-1] += needed

    pixels = np.ones((config.page_height, config.page_width), dtype=np.float32)
    boxes: list[WordBox] = []
    for li, line in enumerate(lines):
        y = top + li * pitch
        x = config.margin
        for word in line:
            w = font.text_width(word)
            _draw_text(pixels, font, word, x, y)
            boxes.append(WordBox(text=word, x=x, y=y, w=w, h=font.height))
            x += w + space

    if page_id is None:
        page_id = f"page-{seed:016x}"
    return DocumentImage(pixels=pixels, words=boxes, page_id=page_id, seed=seed)


def render_prompt_on_image(page: DocumentImage, prompt: str, font: GlyphFont | None = None) -> DocumentImage:
    """Copy of the page with `prompt` rendered into the blank header band."""
    font = font or builtin_font()
    margin = 2
    band_h = font.height + 4
    if np.any(page.pixels[:band_h] < 1.0):
        raise ConfigError("header band is not blank")
    out = DocumentImage(
        pixels=page.pixels.copy(),
        words=list(page.words),
        page_id=page.page_id,
        seed=page.seed,
    )
    if not prompt:
        return out
    unknown = [c for c in prompt if c not in font.charset]
    if unknown:
        raise ConfigError(f"prompt contains unsupported characters: {unknown!r}")
    if margin + font.text_width(prompt) > page.width - margin:
        raise CapacityExceeded(
            f"prompt needs {font.text_width(prompt)}px, header fits "
            f"{page.width - 2 * margin}px"
        )
    _draw_text(out.pixels, font, prompt, margin, 2)
    return out


def kv_pairs(page: DocumentImage, line_tol: float | None = None) -> list[tuple[str, str, WordBox]]:
    """(key, value, value_box) for every rendered "key: value" row."""
    tol = builtin_font().height / 2.0 if line_tol is None else line_tol
    pairs = []
    for line in group_lines(page.words, tol):
        for left, right in zip(line, line[1:]):
            if left.text.endswith(":") and len(left.text) > 1:
                pairs.append((left.text[:-1], right.text, right))
    return pairs


def generate_vqa(
    page: DocumentImage,
    seed: int,
    max_word_after: int = 3,
    max_line_index: int = 2,
    templates: tuple[str, ...] = ("kv", "word_after", "line_index"),
) -> list[VqaTriple]:
    """Templated question/answer triples grounded in the page's word boxes."""
    if page.word_count < 2:
        raise ConfigError("need at least 2 words to build questions")
    rng = random.Random(seed)
    tol = builtin_font().height / 2.0
    lines = group_lines(page.words, tol)
    flat = [box for line in lines for box in line]
    triples: list[VqaTriple] = []

    if "kv" in templates:
        for key, value, box in kv_pairs(page, tol):
            triples.append(
                VqaTriple(
                    page_id=page.page_id,
                    question=f"what is the value of {key}?",
                    answers=(value,),
                    locality=(box.x, box.y, box.w, box.h),
                )
            )

    if "word_after" in templates:
        counts: dict[str, int] = {}
        for box in flat:
            counts[box.text] = counts.get(box.text, 0) + 1
        candidates = [
            i for i in range(len(flat) - 1) if counts[flat[i].text] == 1
        ]
        picked = sorted(rng.sample(candidates, min(max_word_after, len(candidates))))
        for i in picked:
            nxt = flat[i + 1]
            triples.append(
                VqaTriple(
                    page_id=page.page_id,
                    question=f"what is the word after {flat[i].text}?",
                    answers=(nxt.text,),
                    locality=(nxt.x, nxt.y, nxt.w, nxt.h),
                )
            )

    if "line_index" in templates:
        picked = sorted(rng.sample(range(len(lines)), min(max_line_index, len(lines))))
        for li in picked:
            line = lines[li]
            x0 = min(b.x for b in line)
            y0 = min(b.y for b in line)
            x1 = max(b.x + b.w for b in line)
            y1 = max(b.y + b.h for b in line)
            triples.append(
                VqaTriple(
                    page_id=page.page_id,
                    question=f"which word appears in line {li + 1}?",
                    answers=tuple(b.text for b in line),
                    locality=(x0, y0, x1 - x0, y1 - y0),
                )
            )
    return triples


def density_corpus(
    config: SynthConfig, thresholds: list[int], seed: int
) -> dict[int, list[DocumentImage]]:
    """Overlapping page groups keyed by minimum word count.

    Word counts are drawn uniformly from [config.min_words, config.max_words];
    a page belongs to every group whose threshold it meets.
    """
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError("thresholds must be strictly increasing")
    pages = generate_corpus(config, seed)
    return {t: [p for p in pages if p.word_count >= t] for t in thresholds}


def generate_corpus(config: SynthConfig, seed: int) -> list[DocumentImage]:
    """config.pages pages whose word counts span [min_words, max_words]."""
    rng = random.Random(derive_seed(seed, "corpus"))
    pages = []
    for i in range(config.pages):
        n = rng.randint(config.min_words, config.max_words)
        page_seed = derive_seed(seed, i)
        cfg = replace(config, words=n)
        pages.append(generate_page(cfg, page_seed, page_id=f"page-{i:05d}"))
    return pages


def page_text(page: DocumentImage, line_tol: float | None = None) -> str:
    tol = builtin_font().height / 2.0 if line_tol is None else line_tol
    return raster_text(page.words, tol)
