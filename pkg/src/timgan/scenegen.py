"""Synthetic multi-object scenes, paired edits, and templated instructions.

Scenes live on a 3x3 grid over a 64x64 canvas. Every sample is a before/after
image pair plus an instruction produced by a closed grammar:

    add a {size} {color} {shape} to the {position}
    remove the object at the {position}
    make the object at the {position} a {size} {color} {shape}
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import EmptySceneError

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow", "gray")
SIZES = ("small", "large")
OPS = ("add", "remove", "modify")

GRID = 3
DEFAULT_CANVAS = 64

ROW_WORDS = ("top", "middle", "bottom")
COL_WORDS = ("left", "center", "right")

BACKGROUND_RGB = (204, 204, 204)
COLOR_RGB = {
    "red": (217, 26, 26),
    "green": (26, 179, 26),
    "blue": (26, 51, 217),
    "yellow": (230, 217, 26),
    "gray": (89, 89, 89),
}

TEMPLATES = (
    "add a {size} {color} {shape} to the {position}",
    "remove the object at the {position}",
    "make the object at the {position} a {size} {color} {shape}",
)


def position_phrase(cell: tuple[int, int]) -> str:
    r, c = cell
    return f"{ROW_WORDS[r]} {COL_WORDS[c]}"


def parse_position(row_word: str, col_word: str) -> tuple[int, int]:
    return (ROW_WORDS.index(row_word), COL_WORDS.index(col_word))


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    cell: tuple[int, int]

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.size not in SIZES:
            raise ValueError(f"unknown size {self.size!r}")
        r, c = self.cell
        if not (0 <= r < GRID and 0 <= c < GRID):
            raise ValueError(f"cell {self.cell} off the {GRID}x{GRID} grid")


@dataclass
class SceneDescription:
    objects: list[SceneObject] = field(default_factory=list)
    canvas_size: int = DEFAULT_CANVAS

    def __post_init__(self):
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ValueError("at most one object per cell")
        if len(self.objects) > GRID * GRID:
            raise ValueError("too many objects")

    def occupied(self) -> set[tuple[int, int]]:
        return {o.cell for o in self.objects}

    def free_cells(self) -> list[tuple[int, int]]:
        occ = self.occupied()
        return [(r, c) for r in range(GRID) for c in range(GRID) if (r, c) not in occ]

    def object_at(self, cell: tuple[int, int]) -> Optional[SceneObject]:
        for o in self.objects:
            if o.cell == cell:
                return o
        return None


@dataclass(frozen=True)
class Instruction:
    op: str
    target_cell: tuple[int, int]
    shape: Optional[str] = None
    color: Optional[str] = None
    size: Optional[str] = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown op {self.op!r}")
        if self.op in ("add", "modify") and None in (self.shape, self.color, self.size):
            raise ValueError(f"{self.op} instruction needs shape/color/size")

    @property
    def text(self) -> str:
        return format_instruction(self)


@dataclass
class EditSample:
    id: str
    x: np.ndarray  # (3, H, W) float32 in [0, 1]
    y: np.ndarray
    instruction: Instruction

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must share a shape")


def format_instruction(ins: Instruction) -> str:
    pos = position_phrase(ins.target_cell)
    if ins.op == "add":
        return f"add a {ins.size} {ins.color} {ins.shape} to the {pos}"
    if ins.op == "remove":
        return f"remove the object at the {pos}"
    return f"make the object at the {pos} a {ins.size} {ins.color} {ins.shape}"


def parse_instruction(text: str) -> Instruction:
    """Inverse of format_instruction; raises ValueError on anything else."""
    w = text.lower().split()
    try:
        if w[0] == "add" and w[1] == "a" and w[5:7] == ["to", "the"] and len(w) == 9:
            return Instruction(
                op="add", target_cell=parse_position(w[7], w[8]),
                size=w[2], color=w[3], shape=w[4],
            )
        if w[0] == "remove" and w[1:5] == ["the", "object", "at", "the"] and len(w) == 7:
            return Instruction(op="remove", target_cell=parse_position(w[5], w[6]))
        if w[0] == "make" and w[1:5] == ["the", "object", "at", "the"] and w[7] == "a" \
                and len(w) == 11:
            return Instruction(
                op="modify", target_cell=parse_position(w[5], w[6]),
                size=w[8], color=w[9], shape=w[10],
            )
    except (ValueError, IndexError) as exc:
        raise ValueError(f"cannot parse instruction {text!r}") from exc
    raise ValueError(f"cannot parse instruction {text!r}")


# ---------------------------------------------------------------------------
# rasterization


def cell_box(cell: tuple[int, int], canvas: int) -> tuple[int, int, int, int]:
    """Pixel bounding box (y0, y1, x0, x1), end-exclusive, of a grid cell."""
    r, c = cell
    y0, y1 = r * canvas // GRID, (r + 1) * canvas // GRID
    x0, x1 = c * canvas // GRID, (c + 1) * canvas // GRID
    return y0, y1, x0, x1


def _draw_object(img: np.ndarray, obj: SceneObject, canvas: int) -> None:
    y0, y1, x0, x1 = cell_box(obj.cell, canvas)
    cy, cx = (y0 + y1) // 2, (x0 + x1) // 2
    half = 8 if obj.size == "large" else 4
    color = np.array(COLOR_RGB[obj.color], dtype=np.uint8)

    if obj.shape == "square":
        img[cy - half:cy + half, cx - half:cx + half] = color
    elif obj.shape == "circle":
        yy, xx = np.ogrid[:img.shape[0], :img.shape[1]]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= half * half
        img[mask] = color
    else:  # upward triangle, scanline fill, no anti-aliasing
        for i in range(2 * half):
            w = (i * half) // (2 * half - 1)
            img[cy - half + i, cx - w:cx + w + 1] = color


def render_scene(scene: SceneDescription) -> np.ndarray:
    """Rasterize a scene to a (3, H, W) float32 image in [0, 1].

    Integer-only drawing: the same scene always yields bit-identical pixels.
    """
    canvas = scene.canvas_size
    img = np.empty((canvas, canvas, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    for obj in scene.objects:
        _draw_object(img, obj, canvas)
    return (img.astype(np.float32) / 255.0).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# edits


def apply_instruction(scene: SceneDescription, ins: Instruction) -> SceneDescription:
    cell = ins.target_cell
    objects = [o for o in scene.objects if o.cell != cell]
    if ins.op == "add":
        if scene.object_at(cell) is not None:
            raise EmptySceneError(f"cell {cell} already occupied")
        objects = list(scene.objects)
        objects.append(SceneObject(ins.shape, ins.color, ins.size, cell))
    elif ins.op == "remove":
        if scene.object_at(cell) is None:
            raise EmptySceneError(f"no object at {cell}")
    else:  # modify
        if scene.object_at(cell) is None:
            raise EmptySceneError(f"no object at {cell}")
        objects.append(SceneObject(ins.shape, ins.color, ins.size, cell))
    return SceneDescription(objects=objects, canvas_size=scene.canvas_size)


def _legal_ops(scene: SceneDescription) -> list[str]:
    ops = []
    if scene.free_cells():
        ops.append("add")
    if scene.objects:
        ops.extend(["remove", "modify"])
    return ops


def sample_edit(
    scene: SceneDescription,
    rng: random.Random,
    op: Optional[str] = None,
) -> tuple[Instruction, SceneDescription]:
    """Draw a single-object edit. Forcing an illegal op raises EmptySceneError;
    with op=None the draw is restricted to the legal ops."""
    legal = _legal_ops(scene)
    if not legal:
        raise EmptySceneError("no legal edit exists for this scene")
    if op is None:
        op = rng.choice(legal)
    elif op not in legal:
        raise EmptySceneError(f"op {op!r} illegal for this scene")

    if op == "add":
        cell = rng.choice(scene.free_cells())
        ins = Instruction(
            op="add", target_cell=cell,
            shape=rng.choice(SHAPES), color=rng.choice(COLORS), size=rng.choice(SIZES),
        )
    elif op == "remove":
        target = rng.choice(scene.objects)
        ins = Instruction(op="remove", target_cell=target.cell)
    else:
        target = rng.choice(scene.objects)
        while True:
            shape = rng.choice(SHAPES)
            color = rng.choice(COLORS)
            size = rng.choice(SIZES)
            if (shape, color, size) != (target.shape, target.color, target.size):
                break
        ins = Instruction(
            op="modify", target_cell=target.cell, shape=shape, color=color, size=size
        )
    return ins, apply_instruction(scene, ins)


def random_scene(rng: random.Random, canvas: int = DEFAULT_CANVAS) -> SceneDescription:
    """Scene with 1..6 objects so every op is always legal."""
    n = rng.randint(1, 6)
    cells = [(r, c) for r in range(GRID) for c in range(GRID)]
    chosen = rng.sample(cells, n)
    objects = [
        SceneObject(rng.choice(SHAPES), rng.choice(COLORS), rng.choice(SIZES), cell)
        for cell in chosen
    ]
    return SceneDescription(objects=objects, canvas_size=canvas)


# ---------------------------------------------------------------------------
# dataset persistence


@dataclass
class DatasetConfig:
    train: int
    test: int
    seed: int
    canvas: int = DEFAULT_CANVAS

    def __post_init__(self):
        if self.train < 1 or self.test < 1:
            raise ValueError("split sizes must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "DatasetConfig":
        with open(path) as f:
            raw = json.load(f)
        return cls(**raw)


def _sample_rng(seed: int, split: str, index: int) -> random.Random:
    # String seeding is stable across processes (sha512 based, no PYTHONHASHSEED).
    return random.Random(f"{seed}:{split}:{index}")


def generate_sample(cfg: DatasetConfig, split: str, index: int) -> EditSample:
    rng = _sample_rng(cfg.seed, split, index)
    scene = random_scene(rng, cfg.canvas)
    forced = OPS[index % len(OPS)]
    try:
        ins, after = sample_edit(scene, rng, op=forced)
    except EmptySceneError:
        # resample policy: fall back to a legal op (unreachable with 1..6 objects)
        ins, after = sample_edit(scene, rng)
    return EditSample(
        id=f"{split}_{index:06d}",
        x=render_scene(scene),
        y=render_scene(after),
        instruction=ins,
    )


def _save_png(img: np.ndarray, path: Path) -> None:
    arr = np.round(img.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def build_dataset(cfg: DatasetConfig, root: str | Path) -> None:
    """Write <root>/{train,test}/samples.jsonl plus PNG pairs under img/."""
    root = Path(root)
    for split, count in (("train", cfg.train), ("test", cfg.test)):
        split_dir = root / split
        img_dir = split_dir / "img"
        try:
            img_dir.mkdir(parents=True, exist_ok=True)
            lines = []
            for i in range(count):
                s = generate_sample(cfg, split, i)
                _save_png(s.x, img_dir / f"{s.id}_x.png")
                _save_png(s.y, img_dir / f"{s.id}_y.png")
                record = {
                    "id": s.id,
                    "input": f"img/{s.id}_x.png",
                    "output": f"img/{s.id}_y.png",
                    "instruction": s.instruction.text,
                    "op": s.instruction.op,
                }
                lines.append(json.dumps(record))
            (split_dir / "samples.jsonl").write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise OSError(f"failed writing dataset split under {split_dir}: {exc}") from exc
    manifest = {"train": cfg.train, "test": cfg.test, "seed": cfg.seed, "canvas": cfg.canvas}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(root: str | Path, split: str) -> list[EditSample]:
    split_dir = Path(root) / split
    samples = []
    with open(split_dir / "samples.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            samples.append(
                EditSample(
                    id=rec["id"],
                    x=load_png(split_dir / rec["input"]),
                    y=load_png(split_dir / rec["output"]),
                    instruction=parse_instruction(rec["instruction"]),
                )
            )
    return samples


def grammar_tokens() -> list[str]:
    """Every word the instruction grammar can produce, sorted."""
    words = set()
    for t in TEMPLATES:
        for w in t.split():
            if not w.startswith("{"):
                words.add(w)
    words.update(SHAPES, COLORS, SIZES, ROW_WORDS, COL_WORDS)
    return sorted(words)
