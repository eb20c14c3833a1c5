"""Corpus persistence: line-delimited JSON manifest plus one image per page.

Image format is chosen by file extension: lossless 8-bit grayscale PNG or
binary PGM. Manifests are byte-stable for identical inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synth import DocumentImage, VqaTriple, WordBox
from .util import canonical_json

MANIFEST_NAME = "manifest.jsonl"


@dataclass
class CorpusEntry:
    page: DocumentImage
    triples: list[VqaTriple]

    @property
    def word_count(self) -> int:
        return self.page.word_count


def save_image(pixels: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    data = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    if path.suffix == ".png":
        from PIL import Image

        Image.fromarray(data, mode="L").save(path, format="PNG")
    elif path.suffix == ".pgm":
        header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + data.tobytes())
    else:
        raise ValueError(f"unsupported image extension: {path.suffix!r}")


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".png":
        from PIL import Image

        data = np.asarray(Image.open(path).convert("L"))
    elif path.suffix == ".pgm":
        raw = path.read_bytes()
        fields = []
        pos = 0
        while len(fields) < 4:
            nxt = min(i for i in (raw.find(b" ", pos), raw.find(b"\n", pos)) if i >= 0)
            fields.append(raw[pos:nxt])
            pos = nxt + 1
        if fields[0] != b"P5":
            raise ValueError("not a binary PGM file")
        w, h = int(fields[1]), int(fields[2])
        data = np.frombuffer(raw[pos:], dtype=np.uint8).reshape(h, w)
    else:
        raise ValueError(f"unsupported image extension: {path.suffix!r}")
    return (data.astype(np.float32) / 255.0).astype(np.float32)


def entry_record(entry: CorpusEntry, image_path: str) -> dict:
    page = entry.page
    return {
        "page_id": page.page_id,
        "image_path": image_path,
        "seed": page.seed,
        "word_count": page.word_count,
        "words": [
            {"text": b.text, "x": b.x, "y": b.y, "w": b.w, "h": b.h}
            for b in page.words
        ],
        "vqa": [
            {
                "question": t.question,
                "answers": list(t.answers),
                "locality": list(t.locality),
            }
            for t in entry.triples
        ],
    }


def save_corpus(entries: list[CorpusEntry], out_dir: str | Path, image_format: str = "png") -> Path:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for entry in entries:
        rel = f"images/{entry.page.page_id}.{image_format}"
        save_image(entry.page.pixels, out_dir / rel)
        lines.append(canonical_json(entry_record(entry, rel)))
    manifest = out_dir / MANIFEST_NAME
    manifest.write_bytes(("\n".join(lines) + "\n" if lines else "").encode("utf-8"))
    return manifest


def load_corpus(corpus_dir: str | Path) -> list[CorpusEntry]:
    corpus_dir = Path(corpus_dir)
    entries = []
    manifest = corpus_dir / MANIFEST_NAME
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        words = [
            WordBox(text=w["text"], x=w["x"], y=w["y"], w=w["w"], h=w["h"])
            for w in rec["words"]
        ]
        page = DocumentImage(
            pixels=load_image(corpus_dir / rec["image_path"]),
            words=words,
            page_id=rec["page_id"],
            seed=rec["seed"],
        )
        triples = [
            VqaTriple(
                page_id=rec["page_id"],
                question=t["question"],
                answers=tuple(t["answers"]),
                locality=tuple(t["locality"]),
            )
            for t in rec["vqa"]
        ]
        entries.append(CorpusEntry(page=page, triples=triples))
    return entries
