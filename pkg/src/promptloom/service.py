"""HTTP API for the web UI and other clients.

Sessions are in-memory, one single-writer lock each; every mutation carries a
base version and conflicts answer 409. Runs execute on a worker thread and
are observed by polling.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, HTTPException, Query

from . import editlog
from .backends import Backend, MockBackend
from .executor import (
    BlockStatus,
    ChainState,
    FreezeStale,
    MissingUpstream,
    UnknownEntry,
    _run_plans,
    edit_entry,
    initial_state,
    plan_step,
)
from .library import (
    Seeds,
    SchemaError,
    ValidationError,
    builtin,
    BUILTIN_NAMES,
    load_spec_doc,
    record_to_json,
    save_spec,
)
from .model import (
    BranchCondition,
    Chain,
    DataLayer,
    Cardinality,
    EditKind,
    EditRejected,
    StructuralEdit,
    apply_edit,
)


@dataclass
class RunInfo:
    id: str
    step_id: str
    status: str  # running | done
    blocks: list[dict] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


@dataclass
class Session:
    id: str
    chain: Chain
    state: ChainState
    created_at: float
    version: int = 1
    lock: threading.Lock = field(default_factory=threading.Lock)
    runs: dict[str, RunInfo] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)


def _entry_to_json(e) -> dict:
    return {
        "id": e.id,
        "layer": e.layer,
        "text": e.text,
        "lineage": list(e.lineage),
        "frozen": e.frozen,
        "stale": e.stale,
        "origin": e.origin.value,
    }


def _edit_from_json(obj: dict) -> StructuralEdit:
    try:
        kind = EditKind(obj["kind"])
    except (KeyError, ValueError):
        raise HTTPException(422, detail="unknown or missing edit kind")

    def layer_of(o):
        return DataLayer(
            id=o["id"],
            name=o["name"],
            cardinality=Cardinality(o.get("cardinality", "single")),
            color_tag=int(o.get("colorTag", 0)),
            producer=o.get("producer"),
            is_root=bool(o.get("isRoot", False)),
        )

    step = None
    if obj.get("step") is not None:
        from .library import _step_from_doc

        step = _step_from_doc(obj["step"], "$.step")
    branch = None
    if obj.get("branch") is not None:
        branch = BranchCondition(obj["branch"]["guardLayer"], obj["branch"]["equalsLabel"])
    return StructuralEdit(
        kind=kind,
        step=step,
        layer=layer_of(obj["layer"]) if obj.get("layer") is not None else None,
        step_id=obj.get("stepId"),
        layer_id=obj.get("layerId"),
        name=obj.get("name"),
        inputs=tuple(obj["inputs"]) if obj.get("inputs") is not None else None,
        output=obj.get("output"),
        temperature=obj.get("temperature"),
        text=obj.get("text"),
        branch=branch,
        clear_branch=bool(obj.get("clearBranch", False)),
    )


def create_app(backend: Optional[Backend] = None) -> FastAPI:
    app = FastAPI(title="promptloom")
    app.state.backend = backend if backend is not None else MockBackend()

    chains: dict[str, tuple[Chain, Seeds]] = {name: builtin(name) for name in BUILTIN_NAMES}
    sessions: dict[str, Session] = {}
    app.state.chains = chains
    app.state.sessions = sessions

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, detail=f"unknown session {session_id}")
        return session

    def check_version(session: Session, base_version) -> None:
        if base_version is None:
            raise HTTPException(422, detail="baseVersion required")
        if int(base_version) != session.version:
            raise HTTPException(
                409, detail={"reason": "stale version", "currentVersion": session.version}
            )

    def snapshot(session: Session) -> dict:
        return {
            "id": session.id,
            "version": session.version,
            "chain": save_spec(session.chain),
            "entries": {
                lid: [_entry_to_json(e) for e in entries]
                for lid, entries in session.state.entries.items()
            },
            "runs": sorted(session.runs.keys()),
        }

    @app.get("/api/chains")
    def list_chains():
        return [
            {"id": cid, "name": chain.name, "builtin": cid in BUILTIN_NAMES}
            for cid, (chain, _) in sorted(chains.items())
        ]

    @app.get("/api/chains/{chain_id}")
    def get_chain(chain_id: str):
        if chain_id not in chains:
            raise HTTPException(404, detail=f"unknown chain {chain_id}")
        chain, seeds = chains[chain_id]
        doc = save_spec(chain, seeds)
        return doc

    @app.post("/api/chains", status_code=201)
    def register_chain(doc: dict):
        try:
            chain, seeds = load_spec_doc(doc)
        except SchemaError as exc:
            raise HTTPException(422, detail=str(exc))
        except ValidationError as exc:
            raise HTTPException(
                422,
                detail={
                    "violations": [
                        {"code": v.code, "subject": v.subject, "message": v.message}
                        for v in exc.report
                    ]
                },
            )
        chains[chain.id] = (chain, seeds)
        return {"id": chain.id}

    @app.post("/api/sessions", status_code=201)
    def create_session(body: dict):
        chain_id = body.get("chainId")
        if chain_id not in chains:
            raise HTTPException(404, detail=f"unknown chain {chain_id}")
        chain, seeds = chains[chain_id]
        session = Session(
            id=uuid.uuid4().hex,
            chain=chain,
            state=initial_state(chain, seeds),
            created_at=time.time(),
        )
        sessions[session.id] = session
        return snapshot(session)

    @app.get("/api/sessions/{session_id}")
    def get_session_snapshot(session_id: str):
        return snapshot(get_session(session_id))

    @app.patch("/api/sessions/{session_id}/entries/{entry_id}")
    def patch_entry(session_id: str, entry_id: str, body: dict):
        session = get_session(session_id)
        with session.lock:
            check_version(session, body.get("baseVersion"))
            try:
                edit_entry(
                    session.state,
                    entry_id,
                    text=body.get("text"),
                    freeze=body.get("frozen"),
                    delete=bool(body.get("delete", False)),
                )
            except UnknownEntry:
                raise HTTPException(404, detail=f"unknown entry {entry_id}")
            except FreezeStale:
                raise HTTPException(422, detail="cannot freeze a stale entry")
            session.version += 1
            return {"version": session.version}

    @app.patch("/api/sessions/{session_id}/structure")
    def patch_structure(session_id: str, body: dict):
        session = get_session(session_id)
        edit = _edit_from_json(body.get("edit") or {})
        with session.lock:
            check_version(session, body.get("baseVersion"))
            try:
                session.chain = apply_edit(session.chain, edit)
            except EditRejected as exc:
                raise HTTPException(
                    422,
                    detail={
                        "reason": exc.reason,
                        "violations": [
                            {"code": v.code, "subject": v.subject, "message": v.message}
                            for v in exc.report
                        ],
                    },
                )
            # Entries of removed layers are dropped with the layer.
            kept = {l.id for l in session.chain.layers}
            for lid in list(session.state.entries):
                if lid not in kept:
                    del session.state.entries[lid]
            for lid in kept:
                session.state.entries.setdefault(lid, [])
            session.version += 1
            return {"version": session.version}

    @app.get("/api/sessions/{session_id}/steps/{step_id}/preview")
    def preview(session_id: str, step_id: str, block: int = Query(0)):
        session = get_session(session_id)
        if not session.chain.has_step(step_id):
            raise HTTPException(404, detail=f"unknown step {step_id}")
        try:
            plans = plan_step(session.chain, session.state, session.chain.step(step_id))
        except MissingUpstream as exc:
            raise HTTPException(422, detail=str(exc))
        if block >= len(plans):
            raise HTTPException(404, detail=f"step has {len(plans)} blocks")
        plan = plans[block]
        return {
            "version": session.version,
            "block": block,
            "status": plan.status.value,
            "prompt": plan.prompt_preview.prompt,
            "temperature": plan.prompt_preview.temperature,
            "maxTokens": plan.prompt_preview.max_tokens,
            "stop": list(plan.prompt_preview.stop),
        }

    def _execute_run(session: Session, run: RunInfo, step_id: str, block: str, mode: str):
        with session.lock:
            try:
                step = session.chain.step(step_id)
                plans = plan_step(session.chain, session.state, step)
                if block != "all":
                    index = int(block)
                    plans = [p for p in plans if p.index == index]
                if mode == "stale":
                    from .executor import _block_is_stale

                    plans = [
                        p
                        for p in plans
                        if p.status is not BlockStatus.PENDING
                        or _block_is_stale(session.state, step, p)
                    ]
                run.blocks = [{"index": p.index, "status": p.status.value} for p in plans]
                records = _run_plans(session.chain, session.state, step, plans, app.state.backend, False)
                run.records = [record_to_json(r) for r in records]
                run.blocks = [{"index": p.index, "status": p.status.value} for p in plans]
            except Exception as exc:  # surfaced via polling, not a 500
                run.blocks.append({"index": -1, "status": "failed", "error": str(exc)})
            finally:
                session.version += 1
                run.status = "done"

    @app.post("/api/sessions/{session_id}/steps/{step_id}/run", status_code=202)
    def run_step_endpoint(
        session_id: str,
        step_id: str,
        block: str = Query("all"),
        mode: str = Query("full"),
    ):
        session = get_session(session_id)
        if not session.chain.has_step(step_id):
            raise HTTPException(404, detail=f"unknown step {step_id}")
        run = RunInfo(id=uuid.uuid4().hex, step_id=step_id, status="running")
        session.runs[run.id] = run
        worker = threading.Thread(
            target=_execute_run, args=(session, run, step_id, block, mode), daemon=True
        )
        worker.start()
        return {"runId": run.id}

    @app.get("/api/sessions/{session_id}/runs/{run_id}")
    def get_run(session_id: str, run_id: str):
        session = get_session(session_id)
        run = session.runs.get(run_id)
        if run is None:
            raise HTTPException(404, detail=f"unknown run {run_id}")
        return {
            "id": run.id,
            "stepId": run.step_id,
            "status": run.status,
            "blocks": run.blocks,
            "records": run.records,
        }

    @app.post("/api/sessions/{session_id}/events")
    def post_event(session_id: str, body: dict):
        session = get_session(session_id)
        try:
            editlog.event_from_json(body)
        except (KeyError, ValueError, TypeError) as exc:
            raise HTTPException(422, detail=f"malformed event: {exc}")
        session.events.append(body)
        return {"count": len(session.events)}

    @app.get("/api/sessions/{session_id}/stats")
    def get_stats(session_id: str):
        session = get_session(session_id)
        events = [editlog.event_from_json(e) for e in session.events]
        categories = editlog.classify_session(events)
        return editlog.stats_to_json(editlog.stats(categories))

    return app


def serve(
    backend: Optional[Backend] = None,
    host: str = "127.0.0.1",
    port: int = 8787,
    static_dir: Optional[str] = None,
) -> None:
    import uvicorn

    app = create_app(backend)
    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="warning")
