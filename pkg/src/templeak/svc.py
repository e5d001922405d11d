"""HTTP service for the triage loop: read-only views over runs, groups,
images, and findings, plus analyst verdicts and promotion of confirmed
collocations into new sweep configs.

The service holds no state of its own — every mutation is a manifest append,
so killing and restarting it loses nothing.
"""

from __future__ import annotations

import os

from fastapi import Depends, FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import prompt_forge
from .store import ManifestError, NotFoundError, RunState, Store

SVC_TOKEN_ENV = "TEMPLEAK_SVC_TOKEN"
UI_ORIGIN_ENV = "TEMPLEAK_UI_ORIGIN"

VALID_DECISIONS = ("confirmed", "rejected", "leakage_confirmed")


class VerdictIn(BaseModel):
    group_id: str
    decision: str
    analyst: str
    note: str = ""


class PromoteIn(BaseModel):
    run_id: str
    group_ids: list[str]
    target_provider_id: str


def _split_group_id(group_id: str) -> tuple[str, str]:
    if "-g" not in group_id:
        raise HTTPException(status_code=404, detail=f"unknown group {group_id}")
    run_id, _, suffix = group_id.rpartition("-g")
    return run_id, suffix


def _group_view(state: RunState, group: dict, masks: dict) -> dict:
    gid = group["group_id"]
    linked = [
        f
        for f in state.findings
        if f["subject"] == gid or f["subject"] in group["members"]
    ]
    return {
        "group_id": gid,
        "collocation": group["collocation"],
        "members": group["members"],
        "min_pairwise": group["min_pairwise"],
        "fingerprint_digest": group["fingerprint_digest"],
        "status": state.group_status(gid),
        "mask_overlays": {d: masks[d] for d in group["members"] if d in masks},
        "findings": linked,
        "verdicts": state.latest_verdicts(gid),
    }


def create_app(store: Store) -> FastAPI:
    app = FastAPI(title="templeak triage API", version="1.0")
    origin = os.environ.get(UI_ORIGIN_ENV, "*")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def require_auth(request: Request) -> None:
        token = os.environ.get(SVC_TOKEN_ENV)
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    auth = Depends(require_auth)

    def replay_or_409(run_id: str) -> RunState:
        if not store.run_exists(run_id):
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        try:
            return store.replay(run_id)
        except ManifestError as exc:
            raise HTTPException(status_code=409, detail=f"run not replayable: {exc}")

    def run_summary(state: RunState) -> dict:
        report = state.detection["report"] if state.detection else None
        return {
            "run_id": state.run_id,
            "status": state.status,
            "config_digest": state.config_digest,
            "run_label": (state.config or {}).get("run_label", ""),
            "n_generations": len(state.generations),
            "n_failures": len(state.failures),
            "n_groups": len(report["groups"]) if report else None,
            "n_findings": len(state.findings),
        }

    @app.get("/api/runs", dependencies=[auth])
    def list_runs():
        return [run_summary(replay_or_409(rid)) for rid in store.list_runs()]

    @app.get("/api/runs/{run_id}", dependencies=[auth])
    def get_run(run_id: str):
        state = replay_or_409(run_id)
        body = run_summary(state)
        body["config"] = state.config
        body["threshold"] = state.detection["report"]["threshold"] if state.detection else None
        return body

    @app.get("/api/runs/{run_id}/groups", dependencies=[auth])
    def get_groups(run_id: str):
        state = replay_or_409(run_id)
        if state.detection is None:
            return []
        masks = state.detection.get("masks", {})
        return [_group_view(state, g, masks) for g in state.detection["report"]["groups"]]

    @app.get("/api/groups/{group_id}", dependencies=[auth])
    def get_group(group_id: str):
        run_id, _ = _split_group_id(group_id)
        state = replay_or_409(run_id)
        if state.detection is not None:
            masks = state.detection.get("masks", {})
            for g in state.detection["report"]["groups"]:
                if g["group_id"] == group_id:
                    return _group_view(state, g, masks)
        raise HTTPException(status_code=404, detail=f"unknown group {group_id}")

    @app.get("/api/images/{digest}", dependencies=[auth])
    def get_image(digest: str):
        try:
            data = store.get_image(digest)
        except NotFoundError:
            raise HTTPException(status_code=404, detail=f"unknown image {digest}")
        return Response(content=data, media_type="image/png")

    @app.get("/api/runs/{run_id}/findings", dependencies=[auth])
    def get_findings(run_id: str):
        state = replay_or_409(run_id)
        return state.findings

    @app.post("/api/verdicts", status_code=201, dependencies=[auth])
    def post_verdict(verdict: VerdictIn):
        if verdict.decision not in VALID_DECISIONS:
            raise HTTPException(
                status_code=400,
                detail=f"invalid decision {verdict.decision!r}; one of {VALID_DECISIONS}",
            )
        if not verdict.analyst.strip():
            raise HTTPException(status_code=400, detail="analyst must be non-empty")
        run_id, _ = _split_group_id(verdict.group_id)
        state = replay_or_409(run_id)
        known = state.detection is not None and any(
            g["group_id"] == verdict.group_id for g in state.detection["report"]["groups"]
        )
        if not known:
            raise HTTPException(status_code=404, detail=f"unknown group {verdict.group_id}")
        store.append_event(
            run_id,
            {
                "kind": "verdict",
                "group_id": verdict.group_id,
                "decision": verdict.decision,
                "analyst": verdict.analyst,
                "note": verdict.note,
            },
        )
        fresh = store.replay(run_id)
        return {
            "group_id": verdict.group_id,
            "status": fresh.group_status(verdict.group_id),
        }

    @app.post("/api/sweeps/promote", dependencies=[auth])
    def promote(body: PromoteIn):
        if not body.group_ids:
            raise HTTPException(status_code=400, detail="group_ids must be non-empty")
        state = replay_or_409(body.run_id)
        if state.detection is None:
            raise HTTPException(status_code=404, detail=f"run {body.run_id} has no groups")
        by_id = {g["group_id"]: g for g in state.detection["report"]["groups"]}
        collocations: list[prompt_forge.Collocation] = []
        seen: set[str] = set()
        full_collocations = {}
        for gen in state.generations:
            col = gen.get("collocation") or {}
            if col.get("text"):
                full_collocations.setdefault(col["text"].lower(), col)
        for gid in body.group_ids:
            group = by_id.get(gid)
            if group is None:
                raise HTTPException(status_code=404, detail=f"unknown group {gid}")
            if state.group_status(gid) != "confirmed":
                raise HTTPException(
                    status_code=422, detail=f"group {gid} is not confirmed"
                )
            text = group["collocation"]
            if text.lower() in seen:
                continue
            seen.add(text.lower())
            col_dict = full_collocations.get(text.lower(), {"text": text})
            collocations.append(prompt_forge.Collocation.from_dict(col_dict))

        src = state.config or {}
        prompts = prompt_forge.expand_grid(
            prompt_forge.default_descriptors(), collocations, prompt_forge.DEFAULT_TEMPLATE
        )
        config = prompt_forge.SweepConfig(
            prompts=tuple(prompts),
            seeds=tuple(src.get("seeds") or prompt_forge.seed_schedule(0, 50)),
            provider_id=body.target_provider_id,
            steps=src.get("steps") or 50,
            width=src.get("width") or 512,
            height=src.get("height") or 512,
            guidance=src.get("guidance") if src.get("guidance") is not None else 7.5,
            run_label=f"promoted-from-{body.run_id}",
        )
        config_dict = config.to_dict()
        digest, path = store.save_config(config_dict)
        store.append_event(
            body.run_id,
            {
                "kind": "promotion",
                "config_digest": digest,
                "target_provider_id": body.target_provider_id,
                "group_ids": body.group_ids,
            },
        )
        return {"config_digest": digest, "config_path": str(path), "config": config_dict}

    @app.get("/api/spec", dependencies=[auth])
    def openapi_spec():
        return JSONResponse(app.openapi())

    return app
