"""REST boundary over the repository.

JSON in, JSON out; 200 on success, 400 for anything invalid, 404 for anything
missing. Run submissions execute through the same engine the CLI uses, so a
report fetched from here is byte-identical to one produced locally from the
same inputs.
"""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .repo import NotFound, Repository, UnknownPool, ValidationFailure


def create_app(repo: Repository) -> FastAPI:
    app = FastAPI(title="app-analysis repository", docs_url=None, redoc_url=None)

    @app.exception_handler(ValidationFailure)
    @app.exception_handler(UnknownPool)
    def _invalid(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(RequestValidationError)
    def _bad_body(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": "invalid request body"})

    @app.exception_handler(NotFound)
    def _missing(request: Request, exc: NotFound) -> JSONResponse:
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.post("/pools/{pool}")
    def put_entry(pool: str, body: dict[str, Any]) -> dict[str, str]:
        if "payload" not in body:
            raise ValidationFailure("body must contain a payload")
        unknown = set(body) - {"payload", "metadata"}
        if unknown:
            raise ValidationFailure(f"unknown body keys: {sorted(unknown)}")
        entry_id = repo.put_entry(pool, body["payload"], body.get("metadata"))
        return {"id": entry_id}

    @app.get("/pools/{pool}/{entry_id}")
    def get_entry(pool: str, entry_id: str) -> dict[str, Any]:
        entry = repo.get_entry(pool, entry_id)
        return {
            "pool": entry.pool,
            "id": entry.id,
            "payload": entry.payload,
            "metadata": entry.metadata,
        }

    @app.get("/pools/{pool}")
    def list_entries(pool: str, q: str = "") -> dict[str, Any]:
        entries = repo.list_entries(pool, q)
        return {"entries": [{"id": i, "description": d} for i, d in entries]}

    @app.post("/runs")
    def submit_run(body: dict[str, Any]) -> dict[str, str]:
        unknown = set(body) - {"script_id", "script_text"}
        if unknown:
            raise ValidationFailure(f"unknown body keys: {sorted(unknown)}")
        run_id = repo.submit_run(
            script_id=body.get("script_id"), script_text=body.get("script_text")
        )
        return {"run_id": run_id}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str) -> dict[str, Any]:
        record = repo.get_run(run_id)
        return {
            "run_id": record.run_id,
            "script_id": record.script_id,
            "status": record.status,
            "error": record.error,
            "report": record.report,
        }

    return app
