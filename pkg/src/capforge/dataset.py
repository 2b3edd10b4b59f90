"""Record types for raw and enhanced datasets and their line-delimited JSON files."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import InconsistentPool, IoFailure, MalformedLine, MissingField

MANIFEST_SUFFIX = ".manifest.json"


@dataclass(frozen=True)
class AnnotationEntry:
    image_id: str
    image_ref: str
    caption: str
    line_no: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not self.caption.strip():
            raise ValueError("caption must be non-empty")


@dataclass(frozen=True)
class GeneratedCaption:
    text: str
    model_id: str
    sheared: bool
    raw_token_count: int
    # set only on placeholder slots kept under drop_policy="keep"
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"text": self.text, "model_id": self.model_id, "sheared": self.sheared, "raw_token_count": self.raw_token_count}
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratedCaption":
        return cls(
            text=d["text"],
            model_id=d["model_id"],
            sheared=bool(d["sheared"]),
            raw_token_count=int(d["raw_token_count"]),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class EnhancedEntry:
    image_id: str
    image_ref: str
    caption: str
    generated: tuple[GeneratedCaption, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "generated", tuple(self.generated))

    @property
    def pool_ids(self) -> tuple[str, ...]:
        return tuple(g.model_id for g in self.generated)

    def captions(self) -> list[str]:
        """Raw caption followed by every non-placeholder generated caption."""
        return [self.caption] + [g.text for g in self.generated if g.error is None]

    def to_dict(self) -> dict:
        return {
            "id": self.image_id,
            "image": self.image_ref,
            "caption": self.caption,
            "generated": [g.to_dict() for g in self.generated],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnhancedEntry":
        return cls(
            image_id=d["id"],
            image_ref=d["image"],
            caption=d["caption"],
            generated=tuple(GeneratedCaption.from_dict(g) for g in d["generated"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    entry_count: int
    pool_ids: tuple[str, ...]
    shear_policy_digest: str
    created_at: str

    def to_dict(self) -> dict:
        return {
            "entry_count": self.entry_count,
            "pool_ids": list(self.pool_ids),
            "shear_policy_digest": self.shear_policy_digest,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(int(d["entry_count"]), tuple(d["pool_ids"]), d["shear_policy_digest"], d["created_at"])


def manifest_path(data_path: str | Path) -> Path:
    p = Path(data_path)
    return p.with_name(p.name + MANIFEST_SUFFIX)


def _iter_json_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, exc.msg) from None
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "record is not an object")
            yield line_no, obj


def parse_annotation(obj: dict, line_no: int) -> AnnotationEntry:
    for name in ("image", "caption"):
        if name not in obj:
            raise MissingField(line_no, name)
        if not isinstance(obj[name], str):
            raise MalformedLine(line_no, f"{name} is not a string")
    image_id = obj.get("id") or obj["image"]
    if not isinstance(image_id, str):
        raise MalformedLine(line_no, "id is not a string")
    try:
        return AnnotationEntry(image_id, obj["image"], obj["caption"], line_no)
    except ValueError as exc:
        raise MalformedLine(line_no, str(exc)) from None


def read_annotations(path: str | Path) -> Iterator[AnnotationEntry]:
    """Stream raw annotation records in file order.

    Blank lines are skipped but still counted, so ``line_no`` always points at
    the physical line in the file.
    """
    for line_no, obj in _iter_json_lines(Path(path)):
        yield parse_annotation(obj, line_no)


def read_enhanced(path: str | Path) -> Iterator[EnhancedEntry]:
    for line_no, obj in _iter_json_lines(Path(path)):
        try:
            yield EnhancedEntry.from_dict(obj)
        except KeyError as exc:
            raise MissingField(line_no, exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise MalformedLine(line_no, str(exc)) from None


def dumps_entry(entry: EnhancedEntry) -> str:
    return json.dumps(entry.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"


def check_pool(entry: EnhancedEntry, pool_ids: Sequence[str]) -> None:
    got = entry.pool_ids
    if len(got) != len(pool_ids):
        raise InconsistentPool(entry.image_id, f"{len(got)} captions for a pool of {len(pool_ids)}")
    if tuple(got) != tuple(pool_ids):
        raise InconsistentPool(entry.image_id, f"order {list(got)} != {list(pool_ids)}")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_json_atomic(path: str | Path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_manifest(data_path: str | Path, manifest: DatasetManifest) -> Path:
    p = manifest_path(data_path)
    write_json_atomic(p, manifest.to_dict())
    return p


def read_manifest(data_path: str | Path) -> DatasetManifest:
    with manifest_path(data_path).open("r", encoding="utf-8") as fh:
        return DatasetManifest.from_dict(json.load(fh))


def write_enhanced(
    entries: Iterable[EnhancedEntry],
    path: str | Path,
    *,
    pool_ids: Sequence[str] | None = None,
    shear_policy_digest: str = "",
    created_at: str | None = None,
) -> DatasetManifest:
    """Write one record per line plus a ``<path>.manifest.json`` sidecar.

    When ``pool_ids`` is omitted the first entry fixes the pool order and every
    later entry must agree with it.
    """
    path = Path(path)
    expected = tuple(pool_ids) if pool_ids is not None else None
    count = 0
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tmp.open("w", encoding="utf-8", newline="\n") as fh:
            for entry in entries:
                if expected is None:
                    expected = entry.pool_ids
                check_pool(entry, expected)
                fh.write(dumps_entry(entry))
                count += 1
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink()
    manifest = DatasetManifest(count, expected or (), shear_policy_digest, created_at or utc_now())
    write_manifest(path, manifest)
    return manifest


def count_lines(path: str | Path) -> int:
    n = 0
    with Path(path).open("rb") as fh:
        for _ in fh:
            n += 1
    return n
