"""Annotation store semantics and the HTTP surface, driven endpoint by endpoint."""

import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from t1qc.annotation import AnnotationStore, NotReady, UnknownImage, UnknownRater, create_app
from t1qc.model import (
    Annotation,
    Grades,
    ValidationFailed,
    consensus_from_dict,
    read_jsonl,
    tier_from_grades,
)
from t1qc.nifti import write_slice_pngs
from t1qc.phantom import PhantomSpec, generate_phantom

IMAGES = [f"img{i}" for i in range(4)]
RATERS = ("alice", "bob")


def annotation(image_id, rater, sr=False, gado=False, grades=(0, 0, 0)):
    if sr:
        return Annotation(image_id=image_id, rater_id=rater, straight_reject=True)
    return Annotation(
        image_id=image_id,
        rater_id=rater,
        straight_reject=False,
        gadolinium=gado,
        grades=Grades(*grades),
    )


class TestStore:
    def test_next_image_per_rater_queues(self):
        store = AnnotationStore(IMAGES, RATERS)
        assert store.next_image("alice") == "img0"
        assert store.next_image("alice") == "img0"  # stable without submission
        store.submit(annotation("img0", "alice"))
        assert store.next_image("alice") == "img1"
        assert store.next_image("bob") == "img0"  # independent queue

    def test_exhausted(self):
        store = AnnotationStore(["img0"], RATERS)
        store.submit(annotation("img0", "alice"))
        assert store.next_image("alice") is None

    def test_unknown_rater(self):
        store = AnnotationStore(IMAGES, RATERS)
        with pytest.raises(UnknownRater):
            store.next_image("mallory")

    def test_resubmission_versions(self):
        store = AnnotationStore(IMAGES, RATERS)
        assert store.submit(annotation("img0", "alice")) == 1
        assert store.submit(annotation("img0", "alice", grades=(1, 0, 0))) == 2
        history = store.history("img0")["alice"]
        assert [h.version for h in history] == [1, 2]
        assert store.current("img0")["alice"].grades == Grades(1, 0, 0)

    def test_consensus_requires_both(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice"))
        with pytest.raises(NotReady):
            store.consensus("img0")

    def test_consensus_max_grades(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice", grades=(0, 0, 1)))
        store.submit(annotation("img0", "bob", grades=(0, 0, 2)))
        label = store.consensus("img0")
        assert label.grades == Grades(0, 0, 2)
        assert label.tier == tier_from_grades(label.grades)

    def test_sr_disagreement_queues_and_resolves(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice", sr=True))
        store.submit(annotation("img0", "bob", grades=(1, 0, 0)))
        assert store.consensus("img0") is None
        assert store.adjudication_queue() == ("img0",)
        label = store.resolve_sr("img0", keep_sr=True)
        assert label.straight_reject and label.sr_adjudicated
        assert store.adjudication_queue() == ()
        assert store.consensus("img0").straight_reject

    def test_resubmission_invalidates_resolution(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice", sr=True))
        store.submit(annotation("img0", "bob"))
        store.resolve_sr("img0", keep_sr=False)
        store.submit(annotation("img0", "alice", sr=True))  # re-opens the disagreement
        assert store.consensus("img0") is None
        assert store.adjudication_queue() == ("img0",)

    def test_unknown_image(self):
        store = AnnotationStore(IMAGES, RATERS)
        with pytest.raises(UnknownImage):
            store.submit(annotation("nope", "alice"))

    def test_progress_counts(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice"))
        store.submit(annotation("img0", "bob"))
        store.submit(annotation("img1", "alice", sr=True))
        summary = store.progress()
        assert summary.per_rater["alice"] == {"done": 2, "remaining": 2}
        assert summary.per_rater["bob"] == {"done": 1, "remaining": 3}
        assert summary.consensus_distribution == {"tier1": 1}

    def test_export_flags_pending(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice"))
        store.submit(annotation("img0", "bob"))
        store.submit(annotation("img1", "alice", grades=(0, 1, 0)))
        store.submit(annotation("img1", "bob", grades=(0, 0, 2)))
        store.submit(annotation("img2", "alice", sr=True))
        store.submit(annotation("img2", "bob"))
        lines = store.export()
        assert len(lines) == 3
        flags = {l["image_id"]: l["pending_adjudication"] for l in lines}
        assert flags == {"img0": False, "img1": False, "img2": True}

    def test_export_reimport_round_trip(self):
        store = AnnotationStore(IMAGES, RATERS)
        store.submit(annotation("img0", "alice", grades=(1, 0, 0), gado=True))
        store.submit(annotation("img0", "bob", grades=(0, 2, 0)))
        lines = [l for l in store.export() if not l["pending_adjudication"]]
        for line in lines:
            line.pop("pending_adjudication")
            assert consensus_from_dict(line) == store.consensus(line["image_id"])

    def test_log_replay_restores_state(self, tmp_path):
        log = tmp_path / "log.jsonl"
        store = AnnotationStore(IMAGES, RATERS, log_path=log)
        store.submit(annotation("img0", "alice", sr=True))
        store.submit(annotation("img0", "bob"))
        store.resolve_sr("img0", keep_sr=True)
        store.submit(annotation("img1", "alice", grades=(1, 1, 1)))
        store.submit(annotation("img1", "alice", grades=(2, 1, 1)))

        reloaded = AnnotationStore(IMAGES, RATERS, log_path=log)
        assert reloaded.consensus("img0").straight_reject
        assert [h.version for h in reloaded.history("img1")["alice"]] == [1, 2]
        assert reloaded.export() == store.export()

    def test_concurrent_submissions_keep_all_versions(self):
        store = AnnotationStore(["img0"], RATERS)

        def hammer(rater):
            for k in range(25):
                store.submit(annotation("img0", rater, grades=(k % 3, 0, 0)))

        threads = [threading.Thread(target=hammer, args=(r,)) for r in RATERS]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        history = store.history("img0")
        assert [h.version for h in history["alice"]] == list(range(1, 26))
        assert [h.version for h in history["bob"]] == list(range(1, 26))


@pytest.fixture()
def client(tmp_path):
    slices = tmp_path / "slices"
    for image_id in IMAGES:
        v = generate_phantom(PhantomSpec(shape=(12, 14, 10), seed=hash(image_id) % 1000))
        write_slice_pngs(v, image_id, slices)
    store = AnnotationStore(IMAGES, RATERS, log_path=tmp_path / "log.jsonl")
    app = create_app(store, slices)
    return TestClient(app)


def post_annotation(client, image_id, rater, sr=False, gado=False, grades=(0, 0, 0)):
    body = {"rater_id": rater, "straight_reject": sr}
    if not sr:
        body["gadolinium"] = gado
        body["grades"] = {"motion": grades[0], "contrast": grades[1], "noise": grades[2]}
    return client.post(f"/api/images/{image_id}/annotations", json=body)


class TestHttpApi:
    def test_next_and_slices(self, client):
        r = client.get("/api/raters/alice/next")
        assert r.status_code == 200
        body = r.json()
        assert body["image_id"] == "img0"
        for plane, url in body["slices"].items():
            png = client.get(url)
            assert png.status_code == 200
            assert png.headers["content-type"] == "image/png"
            assert png.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_rater_404(self, client):
        assert client.get("/api/raters/mallory/next").status_code == 404

    def test_submit_and_versions(self, client):
        assert post_annotation(client, "img0", "alice").json()["version"] == 1
        assert post_annotation(client, "img0", "alice", grades=(1, 0, 0)).json()["version"] == 2
        detail = client.get("/api/images/img0/annotations").json()
        assert len(detail["history"]["alice"]) == 2
        assert detail["current"]["alice"]["grades"]["motion"] == 1

    def test_invalid_payload_422(self, client):
        # SR with grades present violates the annotation invariant
        body = {
            "rater_id": "alice",
            "straight_reject": True,
            "grades": {"motion": 1, "contrast": 0, "noise": 0},
        }
        r = client.post("/api/images/img0/annotations", json=body)
        assert r.status_code == 422

    def test_unknown_image_404(self, client):
        assert post_annotation(client, "nope", "alice").status_code == 404
        assert client.get("/api/images/nope/annotations").status_code == 404

    def test_full_flow_with_adjudication(self, client):
        post_annotation(client, "img0", "alice", sr=True)
        post_annotation(client, "img0", "bob", grades=(1, 0, 0))
        progress = client.get("/api/progress").json()
        assert progress["adjudication_queue"] == ["img0"]

        r = client.post("/api/images/img0/consensus-resolution", json={"keep_sr": True})
        assert r.status_code == 200
        assert r.json()["consensus"]["straight_reject"] is True

        progress = client.get("/api/progress").json()
        assert progress["adjudication_queue"] == []

        post_annotation(client, "img1", "alice", grades=(0, 1, 0))
        post_annotation(client, "img1", "bob", grades=(0, 0, 2))
        export = client.get("/api/export")
        assert export.status_code == 200
        lines = list(read_jsonl(export.text))
        by_id = {l["image_id"]: l for l in lines}
        assert by_id["img0"]["straight_reject"] is True
        assert by_id["img1"]["grades"] == {"motion": 0, "contrast": 1, "noise": 2}
        assert by_id["img1"]["tier"] == 3

    def test_resolution_conflict_codes(self, client):
        r = client.post("/api/images/img0/consensus-resolution", json={"keep_sr": True})
        assert r.status_code == 409  # nobody has annotated yet
        post_annotation(client, "img0", "alice")
        post_annotation(client, "img0", "bob")
        r = client.post("/api/images/img0/consensus-resolution", json={"keep_sr": True})
        assert r.status_code == 422  # no SR disagreement to resolve
