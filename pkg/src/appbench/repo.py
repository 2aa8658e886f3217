"""Content-addressed on-disk repository: four pools plus executed runs.

Every pool entry is stored at pools/<pool>/<id>.json where the id is the
digest of the payload's canonical bytes — identical payloads collapse to one
entry no matter how often or in what formatting they are submitted. Runs live
under runs/<run_id>/ with the submitted script, its report, and traces.

The store is a plain directory tree of JSON documents: inspectable with any
editor, diffable, no database.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .digest import fnv1a64_hex
from .dsl import ScriptError, format_number, parse_script
from .model import (
    ModelSyntaxError,
    ModelValidationError,
    canonical_json,
    parse_app_model,
    serialize_app_model,
)
from .pipeline import ManifestError, load_manifest, manifest_to_json_dict
from .runner import ScriptRunError, run_script

POOLS = ("microservices", "requests", "scripts", "benchmarks")

_METADATA_KEYS = ("submitter", "description", "test_results")
_UTEST_KEYS = ("id", "technique", "op", "input", "expect")


class UnknownPool(Exception):
    pass


class NotFound(Exception):
    pass


class ValidationFailure(Exception):
    """Payload or request body rejected; the message says why."""


@dataclass(frozen=True)
class PoolEntry:
    pool: str
    id: str
    payload: Any  # canonical JSON value, or raw text for script payloads
    metadata: dict[str, Any]


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    script_id: str
    status: str  # "queued" | "running" | "done" | "failed"
    error: str | None
    report: dict[str, Any] | None  # parsed report.json when done


def _normalize_metadata(metadata: dict[str, Any] | None) -> dict[str, Any]:
    metadata = metadata or {}
    if not isinstance(metadata, dict):
        raise ValidationFailure("metadata must be an object")
    unknown = set(metadata) - set(_METADATA_KEYS)
    if unknown:
        raise ValidationFailure(f"unknown metadata keys: {sorted(unknown)}")
    out: dict[str, Any] = {
        "submitter": metadata.get("submitter", ""),
        "description": metadata.get("description", ""),
    }
    if not isinstance(out["submitter"], str) or not isinstance(out["description"], str):
        raise ValidationFailure("submitter and description must be strings")
    if "test_results" in metadata:
        results = metadata["test_results"]
        if not isinstance(results, list) or not all(isinstance(r, str) for r in results):
            raise ValidationFailure("test_results must be a list of digest strings")
        out["test_results"] = list(results)
    return out


class Repository:
    """One directory tree; safe for concurrent readers, writes serialized."""

    def __init__(self, root: Path, queued: bool = False):
        self.root = Path(root)
        self.pools_dir = self.root / "pools"
        self.runs_dir = self.root / "runs"
        self.workspace = self.root / "workspace"  # file sources in service scripts
        for pool in POOLS:
            (self.pools_dir / pool).mkdir(parents=True, exist_ok=True)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()
        self._queue: queue.Queue[str] | None = None
        if queued:
            self._queue = queue.Queue()
            worker = threading.Thread(target=self._drain_queue, daemon=True)
            worker.start()

    # -- canonicalization ---------------------------------------------------

    def _canonicalize(self, pool: str, payload: Any) -> tuple[str, Any]:
        """(canonical bytes as text, normalized payload value) for a pool.

        Benchmarks and manifests normalize through their parsers so key order
        and whitespace differences collapse to one id; scripts keep their
        exact text (comments are part of a script); requests normalize to the
        two-field object.
        """
        if pool == "benchmarks":
            text = payload if isinstance(payload, str) else canonical_json(payload)
            try:
                model = parse_app_model(text)
            except (ModelSyntaxError, ModelValidationError) as exc:
                raise ValidationFailure(f"benchmark rejected: {exc}") from exc
            canon = serialize_app_model(model)
            return canon, json.loads(canon)
        if pool == "microservices":
            text = payload if isinstance(payload, str) else canonical_json(payload)
            try:
                manifest = load_manifest(text)
            except ManifestError as exc:
                raise ValidationFailure(f"manifest rejected: {exc}") from exc
            canon = canonical_json(manifest_to_json_dict(manifest))
            return canon, json.loads(canon)
        if pool == "scripts":
            if isinstance(payload, dict):  # a unit-test document
                unknown = set(payload) - set(_UTEST_KEYS)
                missing = set(_UTEST_KEYS) - set(payload)
                if unknown or missing:
                    raise ValidationFailure(
                        f"unit-test document keys: missing {sorted(missing)}, "
                        f"unknown {sorted(unknown)}"
                    )
                normalized = {k: payload[k] for k in _UTEST_KEYS}
                canon = canonical_json(normalized)
                return canon, normalized
            if not isinstance(payload, str):
                raise ValidationFailure("script payload must be text or a unit-test object")
            try:
                parse_script(payload)
            except ScriptError as exc:
                raise ValidationFailure(f"script rejected: {exc}") from exc
            return payload, payload
        if pool == "requests":
            if not isinstance(payload, dict):
                raise ValidationFailure("service request must be an object")
            unknown = set(payload) - {"need", "attached_script"}
            if unknown:
                raise ValidationFailure(f"unknown request keys: {sorted(unknown)}")
            need = payload.get("need")
            if not isinstance(need, str) or not need:
                raise ValidationFailure("request needs a non-empty `need` text")
            normalized = {"need": need}
            if "attached_script" in payload:
                script_id = payload["attached_script"]
                if not isinstance(script_id, str):
                    raise ValidationFailure("attached_script must be an entry id")
                if not self._entry_path("scripts", script_id).is_file():
                    raise ValidationFailure(
                        f"attached_script {script_id} is not in the scripts pool"
                    )
                normalized["attached_script"] = script_id
            return canonical_json(normalized), normalized
        raise UnknownPool(f"unknown pool {pool!r}")

    def _entry_path(self, pool: str, entry_id: str) -> Path:
        if pool not in POOLS:
            raise UnknownPool(f"unknown pool {pool!r}")
        if not entry_id.replace("_", "").isalnum():
            raise NotFound(f"no entry {entry_id!r} in pool {pool!r}")
        return self.pools_dir / pool / f"{entry_id}.json"

    # -- pool operations ----------------------------------------------------

    def put_entry(
        self, pool: str, payload: Any, metadata: dict[str, Any] | None = None
    ) -> str:
        """Store a payload; returns its content id. Re-putting an identical
        payload is a no-op returning the same id."""
        if pool not in POOLS:
            raise UnknownPool(f"unknown pool {pool!r}")
        canon, normalized = self._canonicalize(pool, payload)
        entry_id = fnv1a64_hex(canon.encode("utf-8"))
        path = self._entry_path(pool, entry_id)
        with self._write_lock:
            if not path.is_file():
                doc = {
                    "id": entry_id,
                    "pool": pool,
                    "metadata": _normalize_metadata(metadata),
                    "payload": normalized,
                }
                path.write_text(canonical_json(doc), encoding="utf-8")
        return entry_id

    def get_entry(self, pool: str, entry_id: str) -> PoolEntry:
        path = self._entry_path(pool, entry_id)
        if not path.is_file():
            raise NotFound(f"no entry {entry_id} in pool {pool!r}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        return PoolEntry(pool, doc["id"], doc["payload"], doc["metadata"])

    def list_entries(self, pool: str, query: str = "") -> list[tuple[str, str]]:
        """(id, description) of entries whose description contains the query,
        in id order."""
        if pool not in POOLS:
            raise UnknownPool(f"unknown pool {pool!r}")
        out: list[tuple[str, str]] = []
        for path in sorted((self.pools_dir / pool).glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            description = doc["metadata"].get("description", "")
            if query in description:
                out.append((doc["id"], description))
        return out

    def payload_text(self, pool: str, entry_id: str) -> str:
        """Entry payload as document text — the pool resolver scripts use.
        Raises KeyError so resolver callers treat it uniformly."""
        try:
            entry = self.get_entry(pool, entry_id)
        except (NotFound, UnknownPool) as exc:
            raise KeyError(str(exc)) from exc
        if isinstance(entry.payload, str):
            return entry.payload
        return canonical_json(entry.payload)

    def fsck(self) -> list[str]:
        """Recompute every stored id and every stored report digest; returns
        the list of problems (empty means the store is sound)."""
        problems: list[str] = []
        for pool in POOLS:
            for path in sorted((self.pools_dir / pool).glob("*.json")):
                try:
                    doc = json.loads(path.read_text(encoding="utf-8"))
                    canon, _ = self._canonicalize(pool, doc["payload"])
                except Exception as exc:
                    problems.append(f"{path}: unreadable or invalid payload: {exc}")
                    continue
                recomputed = fnv1a64_hex(canon.encode("utf-8"))
                if recomputed != doc.get("id") or f"{doc.get('id')}.json" != path.name:
                    problems.append(
                        f"{path}: stored id {doc.get('id')} != recomputed {recomputed}"
                    )
        from .runner import report_body_text

        for run_dir in sorted(self.runs_dir.iterdir()) if self.runs_dir.is_dir() else []:
            report_path = run_dir / "report.json"
            if not report_path.is_file():
                continue
            doc = json.loads(report_path.read_text(encoding="utf-8"))
            body = {k: v for k, v in doc.items() if k not in ("digest", "wall_clock")}
            if fnv1a64_hex(canonical_json(body).encode("utf-8")) != doc.get("digest"):
                problems.append(f"{report_path}: report digest mismatch")
        return problems

    # -- runs ----------------------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def _write_run_record(
        self, run_id: str, script_id: str, status: str, error: str | None = None
    ) -> None:
        doc = {"run_id": run_id, "script_id": script_id, "status": status, "error": error}
        (self._run_dir(run_id) / "run.json").write_text(
            canonical_json(doc), encoding="utf-8"
        )

    def submit_run(
        self, script_id: str | None = None, script_text: str | None = None
    ) -> str:
        """Execute (or enqueue) a script run; returns the run id.

        The run id digests the script id, the script's environment echo, and
        the package version — resubmitting the same script is idempotent and
        returns the already-executed run.
        """
        if (script_id is None) == (script_text is None):
            raise ValidationFailure("provide exactly one of script_id or script_text")
        if script_id is not None:
            text = self.payload_text_or_not_found("scripts", script_id)
        else:
            text = script_text  # type: ignore[assignment]
            script_id = fnv1a64_hex(text.encode("utf-8"))

        run_id = self._run_id_for(script_id, text)
        run_dir = self._run_dir(run_id)
        with self._write_lock:
            if (run_dir / "run.json").is_file():
                return run_id  # already executed (or queued): content-addressed
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "script.dscr").write_text(text, encoding="utf-8")
            self._write_run_record(run_id, script_id, "queued")
        if self._queue is not None:
            self._queue.put(run_id)
        else:
            self._execute_run(run_id)
        return run_id

    def payload_text_or_not_found(self, pool: str, entry_id: str) -> str:
        try:
            return self.payload_text(pool, entry_id)
        except KeyError as exc:
            raise NotFound(str(exc)) from exc

    def _run_id_for(self, script_id: str, text: str) -> str:
        try:
            script = parse_script(text)
            env = {k: format_number(v) for k, v in sorted(script.environment().items())}
            monitored = list(script.monitored_metrics())
        except ScriptError:
            env = {}
            monitored = []
        from . import __version__

        seed = canonical_json(
            {
                "script_id": script_id,
                "environment": env,
                "monitored": monitored,
                "version": __version__,
            }
        )
        return fnv1a64_hex(seed.encode("utf-8"))

    def _execute_run(self, run_id: str) -> None:
        run_dir = self._run_dir(run_id)
        record = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
        script_id = record["script_id"]
        text = (run_dir / "script.dscr").read_text(encoding="utf-8")
        self._write_run_record(run_id, script_id, "running")
        try:
            script = parse_script(text)
            run_script(
                script,
                workspace=self.workspace,
                resolve_pool=self.payload_text,
                out_dir=run_dir,
            )
        except (ScriptError, ScriptRunError) as exc:
            self._write_run_record(run_id, script_id, "failed", error=str(exc))
            return
        except Exception as exc:  # surface unexpected bugs in the record too
            self._write_run_record(run_id, script_id, "failed", error=f"internal: {exc}")
            return
        self._write_run_record(run_id, script_id, "done")

    def _drain_queue(self) -> None:
        assert self._queue is not None
        while True:
            run_id = self._queue.get()
            try:
                self._execute_run(run_id)
            finally:
                self._queue.task_done()

    def wait_for_runs(self) -> None:
        """Block until every queued run has executed (queued mode only)."""
        if self._queue is not None:
            self._queue.join()

    def get_run(self, run_id: str) -> RunRecord:
        run_dir = self._run_dir(run_id)
        record_path = run_dir / "run.json"
        if not record_path.is_file():
            raise NotFound(f"no run {run_id}")
        record = json.loads(record_path.read_text(encoding="utf-8"))
        report = None
        if record["status"] == "done":
            report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
        return RunRecord(
            run_id=record["run_id"],
            script_id=record["script_id"],
            status=record["status"],
            error=record.get("error"),
            report=report,
        )
