"""Heatmap rendering of prompt-to-image cross-attention.

Attention weights captured at a merge layer live on that stage's grid; a
token's map is normalized, nearest-neighbour upsampled to page resolution,
and composited as a warm translucent overlay on the page.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import AttentionRecord
from .synth import DocumentImage


@dataclass
class HeatmapImage:
    """RGBA overlay aligned pixel-for-pixel with its source page."""

    rgba: np.ndarray  # (H, W, 4) float in [0, 1]

    @property
    def alpha(self) -> np.ndarray:
        return self.rgba[..., 3]

    def composite(self, page: DocumentImage) -> np.ndarray:
        """Alpha-blend the overlay onto the grayscale page; returns (H, W, 3)."""
        base = np.repeat(page.pixels[..., None], 3, axis=-1).astype(np.float64)
        alpha = self.rgba[..., 3:4]
        return (1.0 - alpha) * base + alpha * self.rgba[..., :3]


def _token_map(record: AttentionRecord, token_index: int, head: int | None) -> np.ndarray:
    heads, h, w, t_p = record.weights.shape
    if not 0 <= token_index < t_p:
        raise IndexError(f"token index {token_index} out of range [0, {t_p})")
    if head is None:
        return record.weights[:, :, :, token_index].mean(axis=0)
    return record.weights[head, :, :, token_index]


def _normalize(grid: np.ndarray) -> np.ndarray:
    span = grid.max() - grid.min()
    if span <= 0:
        return np.full_like(grid, 0.5)
    return (grid - grid.min()) / span


def _upsample_overlay(grid: np.ndarray, page: DocumentImage, max_alpha: float) -> HeatmapImage:
    h, w = grid.shape
    sy, sx = page.height // h, page.width // w
    if sy * h != page.height or sx * w != page.width:
        raise ValueError(
            f"attention grid {h}x{w} does not tile page {page.height}x{page.width}"
        )
    up = np.kron(grid, np.ones((sy, sx)))
    rgba = np.zeros((page.height, page.width, 4), dtype=np.float64)
    rgba[..., 0] = 1.0          # warm overlay: red with intensity-scaled green
    rgba[..., 1] = 0.35 * up
    rgba[..., 3] = max_alpha * up
    return HeatmapImage(rgba=rgba)


def token_heatmap(
    record: AttentionRecord,
    token_index: int,
    page: DocumentImage,
    head: int | None = None,
    max_alpha: float = 0.6,
) -> HeatmapImage:
    """Overlay of one prompt token's attention over the page (head-averaged
    by default)."""
    grid = _normalize(_token_map(record, token_index, head))
    return _upsample_overlay(grid, page, max_alpha)


def aggregate_heatmap(
    record: AttentionRecord,
    token_indices: list[int],
    page: DocumentImage,
    head: int | None = None,
    max_alpha: float = 0.6,
) -> HeatmapImage:
    """Element-wise maximum over the selected tokens' maps, normalized once."""
    if not token_indices:
        raise IndexError("need at least one token index")
    stacked = np.stack([_token_map(record, i, head) for i in token_indices])
    grid = _normalize(stacked.max(axis=0))
    return _upsample_overlay(grid, page, max_alpha)


def save_heatmap_png(heatmap: HeatmapImage, page: DocumentImage, path: str | Path) -> None:
    from PIL import Image

    rgb = np.clip(np.round(heatmap.composite(page) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")


def heatmap_filename(page_id: str, stage: int, token: int | str) -> str:
    return f"{page_id}_{stage}_{token}.png"


def dump_attention_maps(
    records: list[AttentionRecord],
    page: DocumentImage,
    prompt: str,
    out_dir: str | Path,
    last_layer_only: bool = True,
) -> list[Path]:
    """Write per-token heatmaps (last merge layer by default) plus one
    all-token aggregate; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    chosen = records[-1:] if last_layer_only else records
    for record in chosen:
        t_p = record.weights.shape[-1]
        for t in range(t_p):
            path = out_dir / heatmap_filename(page.page_id, record.stage, t)
            save_heatmap_png(token_heatmap(record, t, page), page, path)
            written.append(path)
        agg = aggregate_heatmap(record, list(range(t_p)), page)
        path = out_dir / heatmap_filename(page.page_id, record.stage, "all")
        save_heatmap_png(agg, page, path)
        written.append(path)
    return written


def contact_sheet(
    records: list[AttentionRecord],
    page: DocumentImage,
    prompt: str,
    path: str | Path,
    head: int | None = None,
) -> None:
    """Tile every prompt token's map of the last layer into one image."""
    from PIL import Image

    record = records[-1]
    t_p = record.weights.shape[-1]
    cols = min(t_p, 8)
    rows = (t_p + cols - 1) // cols
    gap = 2
    sheet = np.ones(
        (rows * (page.height + gap) - gap, cols * (page.width + gap) - gap, 3)
    )
    for t in range(t_p):
        tile = token_heatmap(record, t, page, head=head).composite(page)
        r, c = divmod(t, cols)
        y, x = r * (page.height + gap), c * (page.width + gap)
        sheet[y : y + page.height, x : x + page.width] = tile
    rgb = np.clip(np.round(sheet * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")
