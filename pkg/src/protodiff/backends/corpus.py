"""Synthetic road-scene corpus: labeled rectangles under scenario effects.

Desk-scale stand-in for driving imagery: every rendered image carries an
exact layout, a template prompt and a scenario tag, so parser totality and
region metrics can be checked without external data.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import uniform_filter

from ..errors import ParameterError, VocabularyError
from ..layouts import Layout, LayoutBox, Prompt, build_prompt, serialize_kitti_labels

CORPUS_SCENARIOS = ("clean", "snow", "fog", "night", "defocus")


@dataclass
class ToyCorpusSpec:
    height: int = 32
    width: int = 64
    # per-class (width range, height range) priors in pixels
    box_priors: dict = field(
        default_factory=lambda: {
            "car": ((12, 22), (8, 12)),
            "pedestrian": ((3, 5), (9, 14)),
            "cyclist": ((4, 7), (6, 12)),
        }
    )
    scenarios: tuple = CORPUS_SCENARIOS
    scenario_weights: tuple = (0.4, 0.15, 0.15, 0.15, 0.15)
    min_objects: int = 1
    max_objects: int = 4
    snow_density: float = 0.05
    fog_strength: float = 0.55
    fog_gray: float = 0.72
    night_scale: float = 0.3
    blur_radius: int = 2

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise ParameterError("object count bounds must satisfy 1 <= min <= max")
        if len(self.scenario_weights) != len(self.scenarios):
            raise ParameterError("one weight per scenario required")


@dataclass
class ToySample:
    stem: str
    image: np.ndarray             # uint8 [H, W, 3]
    layout: Layout
    prompt: Prompt
    scenario: str


_CLASS_COLORS = {
    "car": (0.16, 0.32, 0.74),
    "pedestrian": (0.80, 0.46, 0.24),
    "cyclist": (0.22, 0.68, 0.30),
}


def render_clean_scene(spec: ToyCorpusSpec, rng: np.random.Generator):
    """One clean scene as a float image in [0, 1] plus its exact layout.

    The first object is always a car so every image has an object-region
    bounding box large enough for windowed metrics.
    """
    h, w = spec.height, spec.width
    img = np.empty((h, w, 3), dtype=np.float64)
    sky = 0.46 + rng.uniform(-0.05, 0.05)
    road = 0.24 + rng.uniform(-0.04, 0.04)
    horizon = h // 3
    img[:horizon] = sky
    img[horizon:] = road
    img[horizon] = road + 0.12  # horizon line
    img += rng.normal(0.0, 0.012, size=img.shape)

    n_objects = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    boxes = []
    for i in range(n_objects):
        cls = "car" if i == 0 else str(rng.choice(list(spec.box_priors)))
        (w_lo, w_hi), (h_lo, h_hi) = spec.box_priors[cls]
        bw = int(rng.integers(w_lo, w_hi + 1))
        bh = int(rng.integers(h_lo, h_hi + 1))
        x0 = int(rng.integers(0, w - bw + 1))
        y0 = int(rng.integers(max(0, horizon - 2), h - bh + 1))
        color = np.array(_CLASS_COLORS[cls]) + rng.uniform(-0.08, 0.08, size=3)
        patch = np.tile(color, (bh, bw, 1))
        if cls == "car":
            patch[: max(1, bh // 3)] += 0.16  # window band
        elif cls == "pedestrian":
            patch[: max(1, bh // 5)] -= 0.16  # head
        else:
            patch[-max(1, bh // 4) :] -= 0.20  # wheels
        img[y0 : y0 + bh, x0 : x0 + bw] = patch
        boxes.append(
            LayoutBox(cls=cls, left=float(x0), top=float(y0), right=float(x0 + bw), bottom=float(y0 + bh))
        )
    np.clip(img, 0.0, 1.0, out=img)
    return img, Layout(boxes=boxes, image_size=(w, h))


def apply_scenario_effect(image: np.ndarray, scenario: str, spec: ToyCorpusSpec, rng: np.random.Generator):
    """Render rule for one scenario over a clean base image in [0, 1]."""
    if scenario == "clean":
        return image.copy()
    if scenario == "snow":
        speckle = rng.random(image.shape[:2]) < spec.snow_density
        out = image.copy()
        out[speckle] = out[speckle] * 0.1 + 0.9
        return out
    if scenario == "fog":
        return spec.fog_gray + (image - spec.fog_gray) * (1.0 - spec.fog_strength)
    if scenario == "night":
        return image * spec.night_scale
    if scenario == "defocus":
        size = 2 * spec.blur_radius + 1
        return np.stack(
            [uniform_filter(image[..., c], size=size) for c in range(image.shape[2])],
            axis=2,
        )
    raise VocabularyError(f"unknown corpus scenario {scenario!r}")


def generate_toy_corpus(spec: ToyCorpusSpec, n: int, seed: int):
    """Deterministically generate ``n`` samples (images, layouts, prompts, tags)."""
    if n < 1:
        raise ParameterError("corpus size must be >= 1")
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        clean, layout = render_clean_scene(spec, rng)
        scenario = str(rng.choice(spec.scenarios, p=np.asarray(spec.scenario_weights)))
        rendered = apply_scenario_effect(clean, scenario, spec, rng)
        image = np.clip(np.rint(rendered * 255.0), 0, 255).astype(np.uint8)
        samples.append(
            ToySample(
                stem=f"{i:06d}",
                image=image,
                layout=layout,
                prompt=build_prompt(layout),
                scenario=scenario,
            )
        )
    return samples


def write_corpus(samples, out_dir: str) -> None:
    """PNG images + KITTI label sidecars + a scenario manifest."""
    images_dir = os.path.join(out_dir, "images")
    labels_dir = os.path.join(out_dir, "labels")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(labels_dir, exist_ok=True)
    lines = []
    for sample in samples:
        Image.fromarray(sample.image, mode="RGB").save(
            os.path.join(images_dir, f"{sample.stem}.png")
        )
        with open(os.path.join(labels_dir, f"{sample.stem}.txt"), "w") as fh:
            fh.write(serialize_kitti_labels(sample.layout))
        lines.append(f"{sample.stem}\t{sample.scenario}\t{sample.prompt.text}")
    with open(os.path.join(out_dir, "manifest.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(corpus_dir: str) -> dict:
    """stem -> scenario tag from a corpus manifest."""
    tags = {}
    with open(os.path.join(corpus_dir, "manifest.tsv")) as fh:
        for line in fh:
            if line.strip():
                stem, scenario, _ = line.rstrip("\n").split("\t", 2)
                tags[stem] = scenario
    return tags


def read_corpus(corpus_dir: str):
    """Load a written corpus back into ToySample records."""
    from ..layouts import parse_kitti_labels

    tags = read_manifest(corpus_dir)
    samples = []
    for stem in sorted(tags):
        with Image.open(os.path.join(corpus_dir, "images", f"{stem}.png")) as img:
            image = np.asarray(img.convert("RGB"), dtype=np.uint8)
        h, w = image.shape[:2]
        with open(os.path.join(corpus_dir, "labels", f"{stem}.txt")) as fh:
            layout = parse_kitti_labels(fh.read(), (w, h), source=stem)
        samples.append(
            ToySample(
                stem=stem,
                image=image,
                layout=layout,
                prompt=build_prompt(layout),
                scenario=tags[stem],
            )
        )
    return samples
