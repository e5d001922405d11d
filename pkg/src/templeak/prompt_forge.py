"""Prompt-space construction: collocation registries, descriptor grids,
rendered prompt specs, and seed schedules."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import percept
from .store import digest_obj


class PromptError(Exception):
    pass


# The six visual-pattern descriptors used for grid expansion, in their
# canonical order.
DEFAULT_DESCRIPTORS = ("Galaxy", "Floral", "Abstract Art", "I Heart ML", "blue", "red")

DEFAULT_TEMPLATE = "{descriptor} {collocation}"


@dataclass(frozen=True)
class Collocation:
    """A short product-category noun phrase used as the prompt core."""

    text: str
    category_tag: str = ""
    source_site: str = ""
    segmentation_class: str | None = None

    def __post_init__(self):
        if not self.text or self.text != self.text.strip() or "\n" in self.text:
            raise PromptError(f"invalid collocation text {self.text!r}")
        if self.segmentation_class is not None and self.segmentation_class not in percept.DEFAULT_REGISTRY:
            raise PromptError(
                f"segmentation class {self.segmentation_class!r} is not registered"
            )

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "category_tag": self.category_tag,
            "source_site": self.source_site,
            "segmentation_class": self.segmentation_class,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Collocation":
        # Deserializing recorded provenance must not fail in a process that
        # never registered the class; trust the record and register it.
        seg = obj.get("segmentation_class")
        if seg:
            percept.DEFAULT_REGISTRY.register(seg)
        return cls(
            text=obj["text"],
            category_tag=obj.get("category_tag", ""),
            source_site=obj.get("source_site", ""),
            segmentation_class=seg,
        )


@dataclass(frozen=True)
class Descriptor:
    """A visual-pattern phrase prepended to collocations."""

    text: str

    def __post_init__(self):
        if not self.text or self.text != self.text.strip():
            raise PromptError(f"invalid descriptor text {self.text!r}")


def render_prompt(template: str, descriptor: str, collocation: str) -> str:
    if "{descriptor}" not in template or "{collocation}" not in template:
        raise PromptError("template must contain {descriptor} and {collocation}")
    return template.replace("{descriptor}", descriptor).replace("{collocation}", collocation)


@dataclass(frozen=True)
class PromptSpec:
    """One descriptor x collocation prompt, rendered deterministically."""

    descriptor: Descriptor
    collocation: Collocation
    template: str
    rendered: str

    @classmethod
    def make(cls, descriptor: Descriptor, collocation: Collocation, template: str = DEFAULT_TEMPLATE) -> "PromptSpec":
        rendered = render_prompt(template, descriptor.text, collocation.text)
        return cls(descriptor=descriptor, collocation=collocation, template=template, rendered=rendered)

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor.text,
            "collocation": self.collocation.to_dict(),
            "template": self.template,
            "rendered": self.rendered,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PromptSpec":
        return cls(
            descriptor=Descriptor(obj["descriptor"]),
            collocation=Collocation.from_dict(obj["collocation"]),
            template=obj["template"],
            rendered=obj["rendered"],
        )


def parse_collocation_record(record: str) -> Collocation:
    """Parse one `text|category_tag|source_site|segmentation_class` record
    (last two fields optional)."""
    fields = [f.strip() for f in record.split("|")]
    if len(fields) < 2 or len(fields) > 4 or not fields[0]:
        raise PromptError(f"malformed collocation record {record!r}")
    fields += [""] * (4 - len(fields))
    text, tag, site, seg = fields
    return Collocation(
        text=text,
        category_tag=tag,
        source_site=site,
        segmentation_class=seg or None,
    )


def load_collocations(path: str | Path) -> list[Collocation]:
    """Load a collocation file: one record per line, `#` comments, duplicates
    collapsed case-insensitively to the first occurrence."""
    path = Path(path)
    if not path.exists():
        raise PromptError(f"no collocation file {path}")
    out: list[Collocation] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            col = parse_collocation_record(line)
        except PromptError as exc:
            raise PromptError(f"{path}, line {lineno}: {exc}") from exc
        key = col.text.lower()
        if key in seen:
            continue
        seen.add(key)
        out.append(col)
    if not out:
        raise PromptError(f"no collocations in {path}")
    return out


def save_collocations(path: str | Path, collocations: Sequence[Collocation]) -> None:
    lines = []
    for c in collocations:
        lines.append("|".join([c.text, c.category_tag, c.source_site, c.segmentation_class or ""]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def expand_grid(
    descriptors: Sequence[Descriptor],
    collocations: Sequence[Collocation],
    template: str = DEFAULT_TEMPLATE,
) -> list[PromptSpec]:
    """Full descriptor x collocation grid in row-major order (descriptor
    outer, collocation inner)."""
    if not descriptors:
        raise PromptError("no descriptors")
    if not collocations:
        raise PromptError("no collocations")
    if "{descriptor}" not in template or "{collocation}" not in template:
        raise PromptError("template must contain {descriptor} and {collocation}")
    return [
        PromptSpec.make(d, c, template)
        for d in descriptors
        for c in collocations
    ]


def seed_schedule(start: int, count: int) -> list[int]:
    """Contiguous seed range [start, start + count)."""
    if count < 1:
        raise PromptError("seed count must be >= 1")
    return list(range(start, start + count))


def default_descriptors() -> list[Descriptor]:
    return [Descriptor(t) for t in DEFAULT_DESCRIPTORS]


@dataclass(frozen=True)
class SweepConfig:
    """A full sweep: ordered prompts, seed schedule, and provider target."""

    prompts: tuple[PromptSpec, ...]
    seeds: tuple[int, ...]
    provider_id: str
    steps: int = 50
    width: int = 512
    height: int = 512
    guidance: float = 7.5
    run_label: str = ""

    def __post_init__(self):
        if not self.prompts:
            raise PromptError("sweep needs at least one prompt")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise PromptError("seeds must be non-empty and distinct")
        if self.steps < 1:
            raise PromptError("steps must be >= 1")
        for dim, name in ((self.width, "width"), (self.height, "height")):
            if dim <= 0 or dim % 8 != 0:
                raise PromptError(f"{name} must be a positive multiple of 8")
        if self.guidance < 0:
            raise PromptError("guidance must be >= 0")

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "run_label": self.run_label,
            "provider_id": self.provider_id,
            "steps": self.steps,
            "width": self.width,
            "height": self.height,
            "guidance": self.guidance,
            "seeds": list(self.seeds),
            "prompts": [p.to_dict() for p in self.prompts],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepConfig":
        return cls(
            prompts=tuple(PromptSpec.from_dict(p) for p in obj["prompts"]),
            seeds=tuple(obj["seeds"]),
            provider_id=obj["provider_id"],
            steps=obj["steps"],
            width=obj["width"],
            height=obj["height"],
            guidance=obj["guidance"],
            run_label=obj.get("run_label", ""),
        )

    def digest(self) -> str:
        return digest_obj(self.to_dict())

    def run_id(self) -> str:
        # Deterministic: identical configs map to one resumable run, which is
        # what makes re-sweeps cache hits and reports byte-reproducible.
        return "r" + self.digest()[:24]
