"""Shard, caption, checkpoint and merge an annotation file.

Run directory layout::

    <run>/shard_<i>.jsonl                 enhanced entries of shard i
    <run>/shard_<i>.jsonl.manifest.json   written once shard i is complete
    <run>/shard_<i>.ckpt.json             progress of shard i
    <run>/report.json                     run report, written by merge

The checkpoint stores the byte length of the shard output at the last
completed entry, so a crash between appending a line and saving the
checkpoint is repaired on resume by truncating the output back.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import dataset as ds
from .dataset import AnnotationEntry, DatasetManifest, EnhancedEntry, GeneratedCaption
from .errors import (
    CheckpointMismatch,
    EmptyInput,
    ImageUnreadable,
    Interrupted,
    InconsistentPool,
    MissingShard,
    NoValidClause,
)
from .gateway import CaptionerPool, GatewayError
from .shear import DEFAULT_TOKENIZER, ShearPolicy, TokenizerSpec, shear_caption

log = logging.getLogger(__name__)

DROP = "drop"
KEEP = "keep"


@dataclass(frozen=True)
class ShardPlan:
    total_lines: int
    boundaries: tuple[tuple[int, int], ...]

    @property
    def shard_count(self) -> int:
        return len(self.boundaries)

    def to_dict(self) -> dict:
        return {"total_lines": self.total_lines, "shard_count": self.shard_count, "boundaries": [list(b) for b in self.boundaries]}


def split_ranges(total: int, shard_count: int) -> tuple[tuple[int, int], ...]:
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    base, extra = divmod(total, shard_count)
    out = []
    start = 0
    for i in range(shard_count):
        size = base + (1 if i < extra else 0)
        out.append((start, start + size))
        start += size
    return tuple(out)


def plan_shards(annotation_path: str | Path, shard_count: int) -> ShardPlan:
    """Split the file's physical lines into ``shard_count`` contiguous ranges."""
    total = ds.count_lines(annotation_path)
    if total == 0:
        raise EmptyInput(f"{annotation_path} has no lines")
    return ShardPlan(total, split_ranges(total, shard_count))


@dataclass
class Failure:
    line: int
    model_id: str
    error_kind: str


@dataclass
class ShardCheckpoint:
    shard_index: int
    start_line: int
    end_line: int
    last_completed_line: int
    output_bytes: int = 0
    failures: list[Failure] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    images_seen: int = 0
    images_enhanced: int = 0
    captions_generated: int = 0
    captions_sheared_by_fallback: int = 0
    complete: bool = False

    @classmethod
    def fresh(cls, index: int, start: int, end: int) -> "ShardCheckpoint":
        return cls(index, start, end, start - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ShardCheckpoint":
        d = dict(d)
        d["failures"] = [Failure(**f) for f in d.get("failures", [])]
        return cls(**d)

    def save(self, path: Path) -> None:
        ds.write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path: Path) -> "ShardCheckpoint":
        with path.open("r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunReport:
    images_total: int = 0
    images_enhanced: int = 0
    captions_generated: int = 0
    captions_sheared_by_fallback: int = 0
    per_model_failures: dict[str, int] = field(default_factory=dict)
    dropped_lines: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def shard_output_path(run_dir: str | Path, index: int) -> Path:
    return Path(run_dir) / f"shard_{index}.jsonl"


def checkpoint_path(run_dir: str | Path, index: int) -> Path:
    return Path(run_dir) / f"shard_{index}.ckpt.json"


def _default_image_loader(base_dir: Path) -> Callable[[AnnotationEntry], tuple[bytes, str]]:
    def load(entry: AnnotationEntry) -> tuple[bytes, str]:
        path = Path(entry.image_ref)
        if not path.is_absolute():
            path = base_dir / path
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ImageUnreadable(entry.line_no, entry.image_ref, exc.strerror or str(exc)) from None
        if not data:
            raise ImageUnreadable(entry.line_no, entry.image_ref, "empty file")
        mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return data, mime

    return load


def _read_range(annotation_path: Path, start: int, end: int) -> Iterable[AnnotationEntry]:
    """Annotation entries whose 0-based physical line index is in [start, end)."""
    with annotation_path.open("r", encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if idx >= end:
                break
            if idx < start or not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ds.MalformedLine(idx + 1, exc.msg) from None
            if not isinstance(obj, dict):
                raise ds.MalformedLine(idx + 1, "record is not an object")
            yield ds.parse_annotation(obj, idx + 1)


def enhance_entry(
    entry: AnnotationEntry,
    image: tuple[bytes, str],
    pool: CaptionerPool,
    policy: ShearPolicy,
    spec: TokenizerSpec,
) -> tuple[list[GeneratedCaption], list[Failure], int]:
    """Caption one image with every pool member and shear the results.

    Returns the generated slots (failed slots carry ``error``), the slot
    failures and how many captions needed the fallback.
    """
    image_bytes, mime = image
    slots: list[GeneratedCaption] = []
    failures: list[Failure] = []
    fallback = 0
    for model_id, result in zip(pool.model_ids, pool.caption_multiview(image_bytes, mime)):
        if isinstance(result, GatewayError):
            failures.append(Failure(entry.line_no, model_id, result.kind))
            slots.append(GeneratedCaption("", model_id, False, 0, error=result.kind))
            continue
        try:
            sheared = shear_caption(result.text, policy, spec)
        except NoValidClause as exc:
            failures.append(Failure(entry.line_no, model_id, exc.kind))
            slots.append(GeneratedCaption("", model_id, False, 0, error=exc.kind))
            continue
        fallback += sheared.used_fallback
        slots.append(GeneratedCaption(sheared.text, model_id, sheared.sheared, sheared.raw_token_count))
    return slots, failures, fallback


def process_shard(
    plan: ShardPlan,
    shard_index: int,
    annotation_path: str | Path,
    run_dir: str | Path,
    pool: CaptionerPool,
    shear_policy: ShearPolicy,
    *,
    spec: TokenizerSpec = DEFAULT_TOKENIZER,
    drop_policy: str = DROP,
    resume: bool = True,
    image_loader: Callable[[AnnotationEntry], tuple[bytes, str]] | None = None,
    stop: threading.Event | None = None,
) -> ShardCheckpoint:
    """Caption every entry of one shard, checkpointing after each entry.

    With ``resume`` an existing checkpoint is honoured and work continues
    after its ``last_completed_line``; without it the shard starts over.
    Setting ``stop`` makes the shard return early with ``Interrupted`` once
    the entry in progress is checkpointed.
    """
    if drop_policy not in (DROP, KEEP):
        raise ValueError(f"drop_policy must be {DROP!r} or {KEEP!r}")
    annotation_path = Path(annotation_path)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    start, end = plan.boundaries[shard_index]
    out_path = shard_output_path(run_dir, shard_index)
    ckpt_path = checkpoint_path(run_dir, shard_index)
    loader = image_loader or _default_image_loader(annotation_path.parent)
    digest = shear_policy.digest(spec)

    ckpt = None
    if resume and ckpt_path.exists():
        ckpt = ShardCheckpoint.load(ckpt_path)
        if (ckpt.shard_index, ckpt.start_line, ckpt.end_line) != (shard_index, start, end):
            raise CheckpointMismatch(f"checkpoint {ckpt_path} does not belong to shard {shard_index} [{start}, {end})")
        if ckpt.complete and ds.manifest_path(out_path).exists():
            return ckpt
    if ckpt is None:
        ckpt = ShardCheckpoint.fresh(shard_index, start, end)
        ds.manifest_path(out_path).unlink(missing_ok=True)
        out_path.write_bytes(b"")
        ckpt.save(ckpt_path)

    with out_path.open("r+b") as out:
        # drop anything written after the last checkpointed entry
        out.truncate(ckpt.output_bytes)
        out.seek(ckpt.output_bytes)
        for entry in _read_range(annotation_path, ckpt.last_completed_line + 1, end):
            if stop is not None and stop.is_set():
                raise Interrupted(f"shard {shard_index} stopped after line {ckpt.last_completed_line + 1}")
            line_idx = entry.line_no - 1
            ckpt.images_seen += 1
            try:
                image = loader(entry)
            except ImageUnreadable as exc:
                log.warning("%s", exc)
                ckpt.failures.append(Failure(entry.line_no, "", exc.kind))
                image = None
            if image is None:
                slots = [GeneratedCaption("", mid, False, 0, error=ImageUnreadable.kind) for mid in pool.model_ids]
                failures, fallback = [], 0
            else:
                slots, failures, fallback = enhance_entry(entry, image, pool, shear_policy, spec)
            ckpt.failures.extend(failures)
            hard_failure = image is None or any(s.error is not None for s in slots)
            if hard_failure and drop_policy == DROP:
                ckpt.dropped.append(entry.line_no)
            else:
                enhanced = EnhancedEntry(entry.image_id, entry.image_ref, entry.caption, tuple(slots))
                out.write(ds.dumps_entry(enhanced).encode("utf-8"))
                out.flush()
                os.fsync(out.fileno())
                ckpt.images_enhanced += 1
                ckpt.captions_generated += sum(1 for s in slots if s.error is None)
                ckpt.captions_sheared_by_fallback += fallback
            ckpt.output_bytes = out.tell()
            ckpt.last_completed_line = line_idx
            ckpt.save(ckpt_path)

    ckpt.last_completed_line = end - 1
    ckpt.complete = True
    ckpt.save(ckpt_path)
    manifest = DatasetManifest(ckpt.images_enhanced, pool.model_ids, digest, "")
    ds.write_manifest(out_path, manifest)
    return ckpt


def merge_shards(
    run_dir: str | Path,
    shard_count: int,
    output_path: str | Path,
    *,
    images_total: int | None = None,
    created_at: str | None = None,
    wall_time: float = 0.0,
) -> tuple[DatasetManifest, RunReport]:
    """Concatenate complete shard outputs in shard order into ``output_path``."""
    run_dir = Path(run_dir)
    manifests = []
    checkpoints = []
    for i in range(shard_count):
        out = shard_output_path(run_dir, i)
        if not out.exists() or not ds.manifest_path(out).exists():
            raise MissingShard(i)
        manifests.append(ds.read_manifest(out))
        ckpt_file = checkpoint_path(run_dir, i)
        checkpoints.append(ShardCheckpoint.load(ckpt_file) if ckpt_file.exists() else None)

    pool_ids = manifests[0].pool_ids
    digest = manifests[0].shear_policy_digest
    for i, m in enumerate(manifests):
        if m.pool_ids != pool_ids:
            raise InconsistentPool(f"shard_{i}", f"pool {list(m.pool_ids)} != {list(pool_ids)}")
        if m.shear_policy_digest != digest:
            raise InconsistentPool(f"shard_{i}", "shards were produced with different shear policies")

    def entries():
        for i in range(shard_count):
            yield from ds.read_enhanced(shard_output_path(run_dir, i))

    manifest = ds.write_enhanced(entries(), output_path, pool_ids=pool_ids, shear_policy_digest=digest, created_at=created_at)

    report = RunReport(wall_time=wall_time)
    failures: Counter[str] = Counter()
    for ckpt in checkpoints:
        if ckpt is None:
            continue
        report.images_total += ckpt.images_seen
        report.images_enhanced += ckpt.images_enhanced
        report.captions_generated += ckpt.captions_generated
        report.captions_sheared_by_fallback += ckpt.captions_sheared_by_fallback
        report.dropped_lines.extend(ckpt.dropped)
        for f in ckpt.failures:
            failures[f.model_id or "<image>"] += 1
    if images_total is not None:
        report.images_total = images_total
    report.per_model_failures = dict(sorted(failures.items()))
    ds.write_json_atomic(run_dir / "report.json", report.to_dict())
    return manifest, report


def run_pipeline(
    annotation_path: str | Path,
    run_dir: str | Path,
    output_path: str | Path,
    pool: CaptionerPool,
    shear_policy: ShearPolicy,
    *,
    shard_count: int = 1,
    workers: int = 1,
    spec: TokenizerSpec = DEFAULT_TOKENIZER,
    drop_policy: str = DROP,
    resume: bool = True,
    created_at: str | None = None,
    image_loader: Callable[[AnnotationEntry], tuple[bytes, str]] | None = None,
    stop: threading.Event | None = None,
) -> tuple[DatasetManifest, RunReport]:
    """plan_shards, process every shard with ``workers`` threads, merge."""
    t0 = time.monotonic()
    plan = plan_shards(annotation_path, shard_count)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ds.write_json_atomic(run_dir / "plan.json", plan.to_dict())

    def work(i: int) -> ShardCheckpoint:
        return process_shard(
            plan, i, annotation_path, run_dir, pool, shear_policy,
            spec=spec, drop_policy=drop_policy, resume=resume, image_loader=image_loader, stop=stop,
        )

    if workers <= 1:
        for i in range(plan.shard_count):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            # list() re-raises the first worker exception
            list(ex.map(work, range(plan.shard_count)))
    return merge_shards(
        run_dir, plan.shard_count, output_path,
        created_at=created_at, wall_time=time.monotonic() - t0,
    )

