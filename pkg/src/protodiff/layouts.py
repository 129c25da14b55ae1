"""KITTI-style label parsing/serialization and prompt templating."""

from dataclasses import dataclass, field
from typing import Optional

from .errors import ContractError, LabelParseError, VocabularyError

DEFAULT_VOCABULARY = ("car", "pedestrian", "cyclist")
SCENARIOS = ("snow", "fog", "rain", "night", "defocus", "sandstorm")
DEFAULT_SCENARIO_SUFFIXES = {
    "snow": ", in the snow",
    "fog": ", in the fog",
    "rain": ", in the rain",
    "sandstorm": ", in the sandstorm",
    "night": ", at night",
    "defocus": ", out of focus",
}
EMPTY_LAYOUT_PROMPT = "A photo of a road scene"

# KITTI label line: class trunc occl alpha left top right bottom h w l x y z ry [score]
_MIN_FIELDS = 15
_BBOX_SLICE = slice(4, 8)


@dataclass(frozen=True)
class LayoutBox:
    cls: str                      # normalized lowercase class word
    left: float
    top: float
    right: float
    bottom: float
    passthrough_pre: tuple = ()   # truncation, occlusion, alpha (verbatim)
    passthrough_post: tuple = ()  # 3D dims, location, rotation_y, ... (verbatim)

    def __post_init__(self):
        if not self.cls:
            raise ContractError("class word must be nonempty")
        if not (self.left < self.right and self.top < self.bottom):
            raise ContractError(
                f"degenerate box ({self.left}, {self.top}, {self.right}, {self.bottom})"
            )


@dataclass
class Layout:
    boxes: list
    image_size: tuple             # (W, H) pixels
    source: Optional[str] = None

    def __len__(self):
        return len(self.boxes)


def parse_kitti_labels(
    text: str,
    image_size: tuple,
    vocabulary=DEFAULT_VOCABULARY,
    source: Optional[str] = None,
) -> Layout:
    """Parse KITTI label-file contents into a Layout.

    ``DontCare`` lines and classes outside the vocabulary produce no box;
    structural problems (wrong arity, non-numeric or inverted bbox) raise
    LabelParseError with the offending line number. Boxes are clamped to the
    image bounds.
    """
    width, height = image_size
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < _MIN_FIELDS:
            raise LabelParseError(
                f"expected >= {_MIN_FIELDS} fields, got {len(fields)}", lineno
            )
        cls = fields[0]
        if cls == "DontCare":
            continue
        norm = cls.lower()
        if norm not in vocabulary:
            continue
        try:
            left, top, right, bottom = (float(v) for v in fields[_BBOX_SLICE])
        except ValueError as exc:
            raise LabelParseError(f"non-numeric bbox field: {exc}", lineno) from None
        if left >= right or top >= bottom:
            raise LabelParseError(
                f"inverted bbox ({left}, {top}, {right}, {bottom})", lineno
            )
        left, right = max(0.0, left), min(float(width), right)
        top, bottom = max(0.0, top), min(float(height), bottom)
        if left >= right or top >= bottom:
            raise LabelParseError("bbox lies outside the image bounds", lineno)
        boxes.append(
            LayoutBox(
                cls=norm,
                left=left,
                top=top,
                right=right,
                bottom=bottom,
                passthrough_pre=tuple(fields[1:4]),
                passthrough_post=tuple(fields[8:]),
            )
        )
    return Layout(boxes=boxes, image_size=(width, height), source=source)


def serialize_kitti_labels(layout: Layout) -> str:
    """Emit KITTI label text; bbox fields at fixed 2-decimal formatting."""
    lines = []
    for box in layout.boxes:
        pre = box.passthrough_pre or ("0.00", "0", "0.00")
        post = box.passthrough_post or ("0.00",) * 7
        fields = [
            box.cls.capitalize(),
            *pre,
            f"{box.left:.2f}",
            f"{box.top:.2f}",
            f"{box.right:.2f}",
            f"{box.bottom:.2f}",
            *post,
        ]
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class Prompt:
    text: str
    words: tuple
    scenario: Optional[str] = None


def words_to_prompt(words) -> Prompt:
    """Template prompt for an ordered word list (no vocabulary check)."""
    words = tuple(words)
    if not words:
        return Prompt(text=EMPTY_LAYOUT_PROMPT, words=())
    if len(words) == 1:
        text = f"A photo of {words[0]}"
    elif len(words) == 2:
        text = f"A photo of {words[0]} and {words[1]}"
    else:
        text = "A photo of " + ", ".join(words[:-1]) + f", and {words[-1]}"
    return Prompt(text=text, words=words)


def build_prompt(layout: Layout, vocabulary=DEFAULT_VOCABULARY) -> Prompt:
    """Template prompt listing the layout's class words in order."""
    words = tuple(box.cls for box in layout.boxes)
    for word in words:
        if word not in vocabulary:
            raise VocabularyError(f"unknown class word {word!r}")
    return words_to_prompt(words)


def apply_scenario(
    prompt: Prompt, scenario: str, suffixes=None
) -> Prompt:
    """Append the scenario suffix to a prompt; refuses double application."""
    table = DEFAULT_SCENARIO_SUFFIXES if suffixes is None else suffixes
    if scenario not in table:
        raise VocabularyError(f"unknown scenario {scenario!r}")
    if prompt.scenario is not None:
        raise ContractError(f"prompt already carries scenario {prompt.scenario!r}")
    return Prompt(text=prompt.text + table[scenario], words=prompt.words, scenario=scenario)
