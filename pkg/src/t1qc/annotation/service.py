"""HTTP surface for the annotation workflow.

JSON API consumed by the browser interface (and driven directly by tests);
slice PNGs are pre-generated files served statically for fast loading.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..model import (
    Annotation,
    Grades,
    ValidationFailed,
    annotation_to_dict,
    write_jsonl,
)
from .store import AnnotationStore, NotReady, UnknownImage, UnknownRater

PLANES = ("axial", "coronal", "sagittal")


class GradesBody(BaseModel):
    motion: int
    contrast: int
    noise: int


class AnnotationBody(BaseModel):
    rater_id: str
    straight_reject: bool
    gadolinium: bool | None = None
    grades: GradesBody | None = None
    timestamp: str = ""


class ResolutionBody(BaseModel):
    keep_sr: bool


def _slice_urls(image_id: str) -> dict[str, str]:
    return {plane: f"/api/images/{image_id}/slices/{plane}.png" for plane in PLANES}


def create_app(store: AnnotationStore, slices_dir: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="t1qc annotation service")
    slices_dir = Path(slices_dir)

    @app.get("/api/raters/{rater_id}/next")
    def next_image(rater_id: str) -> dict:
        try:
            image_id = store.next_image(rater_id)
        except UnknownRater:
            raise HTTPException(status_code=404, detail=f"unknown rater {rater_id!r}")
        if image_id is None:
            return {"exhausted": True}
        return {"exhausted": False, "image_id": image_id, "slices": _slice_urls(image_id)}

    @app.get("/api/images/{image_id}/slices/{plane}.png")
    def slice_png(image_id: str, plane: str) -> Response:
        if plane not in PLANES:
            raise HTTPException(status_code=404, detail=f"unknown plane {plane!r}")
        path = slices_dir / f"{image_id}_{plane}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no slice for image {image_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/api/images/{image_id}/annotations")
    def submit_annotation(image_id: str, body: AnnotationBody) -> dict:
        grades = None
        if body.grades is not None:
            try:
                grades = Grades(motion=body.grades.motion, contrast=body.grades.contrast, noise=body.grades.noise)
            except ValidationFailed as e:
                raise HTTPException(status_code=422, detail=str(e))
        try:
            annotation = Annotation(
                image_id=image_id,
                rater_id=body.rater_id,
                straight_reject=body.straight_reject,
                gadolinium=body.gadolinium,
                grades=grades,
                timestamp=body.timestamp,
            )
            version = store.submit(annotation)
        except ValidationFailed as e:
            raise HTTPException(status_code=422, detail=str(e))
        except UnknownImage:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        except UnknownRater as e:
            raise HTTPException(status_code=404, detail=f"unknown rater {e.args[0]!r}")
        return {"image_id": image_id, "version": version}

    @app.get("/api/images/{image_id}/annotations")
    def get_annotations(image_id: str) -> dict:
        try:
            history = store.history(image_id)
        except UnknownImage:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        return {
            "image_id": image_id,
            "current": {r: annotation_to_dict(a) for r, a in store.current(image_id).items()},
            "history": {
                r: [
                    {"version": s.version, "annotation": annotation_to_dict(s.annotation)}
                    for s in versions
                ]
                for r, versions in history.items()
            },
            "slices": _slice_urls(image_id),
        }

    @app.post("/api/images/{image_id}/consensus-resolution")
    def resolve(image_id: str, body: ResolutionBody) -> dict:
        try:
            label = store.resolve_sr(image_id, body.keep_sr)
        except UnknownImage:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        except NotReady as e:
            raise HTTPException(status_code=409, detail=str(e))
        except ValidationFailed as e:
            raise HTTPException(status_code=422, detail=str(e))
        from ..model import consensus_to_dict

        return {"image_id": image_id, "consensus": consensus_to_dict(label)}

    @app.get("/api/progress")
    def progress() -> dict:
        return store.progress().to_dict()

    @app.get("/api/export")
    def export() -> PlainTextResponse:
        return PlainTextResponse(write_jsonl(store.export()), media_type="application/x-ndjson")

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
