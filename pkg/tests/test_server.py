from __future__ import annotations

import io
import json

import numpy as np
import pytest
import requests
from PIL import Image

from dupaudit.annotation import Session, parse_annotations, resume_session
from dupaudit.dataset_io import ImageRecord, Split
from dupaudit.features import FeatureMatrix
from dupaudit.mining import CandidatePair, CandidateQueue, QueueProvenance
from dupaudit.replacement import CandidatePool, ReplacementSession, duplicate_test_indices
from dupaudit.server import AuditServer, encode_png

from conftest import unit_rows

NAMES10 = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")


def shaded_record(label: int, shade: int) -> ImageRecord:
    return ImageRecord(fine_label=label, pixels=bytes([shade]) * 3072)


def small_world(rng, queue_len=6):
    train = Split(
        role="train",
        num_classes=10,
        records=tuple(shaded_record(i % 10, 20 + i) for i in range(12)),
    )
    test = Split(
        role="test",
        num_classes=10,
        records=tuple(shaded_record(i % 10, 120 + i) for i in range(10)),
        class_names=NAMES10,
    )
    pairs = tuple(
        CandidatePair(query_index=i, neighbor_index=i, neighbor_split="train", distance=i / 100)
        for i in range(queue_len)
    )
    queue = CandidateQueue(pairs=pairs, provenance=QueueProvenance.empty())
    return train, test, queue


@pytest.fixture
def live(rng):
    train, test, queue = small_world(rng)
    sink = io.StringIO()
    session = Session(queue, stop_threshold=3, annotator="tester", sink=sink)
    server = AuditServer(session, train, test, port=0)
    server.serve_in_thread()
    base = f"http://127.0.0.1:{server.port}"
    yield base, server, sink
    server.shutdown()


def test_session_and_progress_endpoints(live):
    base, _server, _sink = live
    payload = requests.get(f"{base}/api/session", timeout=5).json()
    assert payload["phase"] == "annotation"
    assert payload["queue_length"] == 6
    assert payload["state"] == "active"
    assert payload["stop_threshold"] == 3
    progress = requests.get(f"{base}/api/progress", timeout=5).json()
    assert progress["cursor"] == 0
    assert progress["counts"] == {"exact": 0, "near": 0, "similar": 0, "different": 0}


def test_label_flow_and_stopping_rule(live):
    base, server, sink = live
    labeled = 0
    while True:
        head = requests.get(f"{base}/api/pairs/next", timeout=5).json()
        if head["status"] == "session-complete":
            break
        assert head["pair_id"] == labeled
        assert head["test_image_url"].endswith(f"/test/{head['query_index']}.png")
        label = "near" if labeled == 0 else "different"
        resp = requests.post(
            f"{base}/api/pairs/{head['pair_id']}/label", json={"label": label}, timeout=5
        )
        assert resp.status_code == 200
        labeled += 1
    # 1 near + 3 consecutive different trip the threshold before queue end
    assert labeled == 4
    assert server.session.completed
    replayed = resume_session(parse_annotations(sink.getvalue()), server.session.queue, stop_threshold=3)
    assert replayed.state == "completed"
    assert replayed.records == server.session.records


def test_out_of_order_rejected(live):
    base, _server, _sink = live
    resp = requests.post(f"{base}/api/pairs/3/label", json={"label": "near"}, timeout=5)
    assert resp.status_code == 409
    assert resp.json()["code"] == "out-of-order"


def test_invalid_label_rejected(live):
    base, _server, _sink = live
    resp = requests.post(f"{base}/api/pairs/0/label", json={"label": "meh"}, timeout=5)
    assert resp.status_code == 400
    assert resp.json()["code"] == "invalid-label"


def test_completed_session_gives_410(live):
    base, server, _sink = live
    for i in range(3):
        requests.post(f"{base}/api/pairs/{i}/label", json={"label": "different"}, timeout=5)
    assert server.session.completed
    resp = requests.post(f"{base}/api/pairs/3/label", json={"label": "near"}, timeout=5)
    assert resp.status_code == 410
    assert resp.json()["code"] == "completed-session"


def test_images_and_diff_are_valid_pngs(live):
    base, server, _sink = live
    img = requests.get(f"{base}/api/images/test/2.png", timeout=5)
    assert img.status_code == 200
    assert img.headers["Content-Type"] == "image/png"
    decoded = Image.open(io.BytesIO(img.content))
    assert decoded.size == (32, 32)
    # shade of test record 2 is 122 everywhere
    assert decoded.getpixel((0, 0)) == (122, 122, 122)
    diff = requests.get(f"{base}/api/pairs/2/diff.png", timeout=5)
    decoded_diff = Image.open(io.BytesIO(diff.content))
    # test record 2 shade 122, train record 2 shade 22 -> diff 100
    assert decoded_diff.getpixel((5, 5)) == (100, 100, 100)
    assert requests.get(f"{base}/api/images/test/999.png", timeout=5).status_code == 404
    assert requests.get(f"{base}/api/images/bogus/0.png", timeout=5).status_code == 404


def test_candidates_404_without_pool(live):
    base, _server, _sink = live
    for i in range(3):
        requests.post(f"{base}/api/pairs/{i}/label", json={"label": "different"}, timeout=5)
    resp = requests.get(f"{base}/api/candidates/next", timeout=5)
    assert resp.status_code == 404
    assert resp.json()["code"] == "no-replacement-phase"


def test_static_ui_served(rng, tmp_path):
    train, test, queue = small_world(rng)
    (tmp_path / "index.html").write_text("<html><body>audit ui</body></html>")
    (tmp_path / "app.js").write_text("console.log('hi')")
    server = AuditServer(Session(queue), train, test, ui_dir=tmp_path, port=0)
    server.serve_in_thread()
    base = f"http://127.0.0.1:{server.port}"
    try:
        root = requests.get(f"{base}/", timeout=5)
        assert "audit ui" in root.text
        js = requests.get(f"{base}/app.js", timeout=5)
        assert "console.log" in js.text
        assert requests.get(f"{base}/../etc/passwd", timeout=5).status_code == 404
        assert requests.get(f"{base}/missing.css", timeout=5).status_code == 404
    finally:
        server.shutdown()


def test_replacement_phase_over_http(rng, tmp_path):
    train, test, queue = small_world(rng, queue_len=2)
    dim = 6
    train_feats = unit_rows(rng, len(train.records), dim)
    test_feats = unit_rows(rng, len(test.records), dim)
    pool_records = tuple(shaded_record(lab, 60 + i) for i, lab in enumerate([0, 1, 1]))
    pool = CandidatePool(
        Split(role="train", num_classes=10, records=pool_records),
        unit_rows(rng, 3, dim),
        [0, 1, 1],
    )
    session = Session(queue, stop_threshold=20, annotator="t")
    decisions_sink = io.StringIO()

    def factory(completed):
        return ReplacementSession(
            pool=pool,
            test_split=test,
            train_features=train_feats,
            test_features=test_feats,
            targets=duplicate_test_indices(completed.records),
            decider="t",
            sink=decisions_sink,
        )

    server = AuditServer(session, train, test, replacement_factory=factory, port=0)
    server.serve_in_thread()
    base = f"http://127.0.0.1:{server.port}"
    try:
        # replacement is gated while annotation is active
        early = requests.get(f"{base}/api/candidates/next", timeout=5)
        assert early.status_code == 409
        # label both pairs as duplicates: queries 0 and 1 become targets
        for i in range(2):
            requests.post(f"{base}/api/pairs/{i}/label", json={"label": "near"}, timeout=5)
        payload = requests.get(f"{base}/api/session", timeout=5).json()
        assert payload["phase"] == "replacement"
        assert payload["replacement"]["targets"] == 2

        offer = requests.get(f"{base}/api/candidates/next", timeout=5).json()
        assert offer["status"] == "ok"
        assert offer["target_index"] == 0
        assert offer["class_name"] == "airplane"
        assert len(offer["neighbors"]) == 3
        cand_png = requests.get(base + offer["candidate_image_url"], timeout=5)
        assert cand_png.headers["Content-Type"] == "image/png"

        decided = requests.post(
            f"{base}/api/candidates/{offer['candidate_id']}/decision",
            json={"approved": True},
            timeout=5,
        )
        assert decided.status_code == 200

        # target 1 (class automobile): reject first candidate, approve second
        offer = requests.get(f"{base}/api/candidates/next", timeout=5).json()
        assert offer["target_index"] == 1
        requests.post(
            f"{base}/api/candidates/{offer['candidate_id']}/decision",
            json={"approved": False},
            timeout=5,
        )
        offer2 = requests.get(f"{base}/api/candidates/next", timeout=5).json()
        assert offer2["candidate_id"] != offer["candidate_id"]
        requests.post(
            f"{base}/api/candidates/{offer2['candidate_id']}/decision",
            json={"approved": True},
            timeout=5,
        )
        done = requests.get(f"{base}/api/candidates/next", timeout=5).json()
        assert done["status"] == "replacement-complete"
        assert requests.get(f"{base}/api/session", timeout=5).json()["phase"] == "done"
        # decisions were persisted as they happened
        assert len(decisions_sink.getvalue().strip().splitlines()) == 3
    finally:
        server.shutdown()


def test_stale_decision_conflicts(rng):
    train, test, queue = small_world(rng, queue_len=1)
    dim = 4
    pool = CandidatePool(
        Split(role="train", num_classes=10, records=(shaded_record(0, 33),)),
        unit_rows(rng, 1, dim),
        [0],
    )

    def factory(completed):
        return ReplacementSession(
            pool=pool,
            test_split=test,
            train_features=unit_rows(rng, 5, dim),
            test_features=unit_rows(rng, len(test.records), dim),
            targets=duplicate_test_indices(completed.records),
        )

    server = AuditServer(Session(queue), train, test, replacement_factory=factory, port=0)
    server.serve_in_thread()
    base = f"http://127.0.0.1:{server.port}"
    try:
        requests.post(f"{base}/api/pairs/0/label", json={"label": "exact"}, timeout=5)
        offer = requests.get(f"{base}/api/candidates/next", timeout=5).json()
        stale = requests.post(
            f"{base}/api/candidates/{offer['candidate_id'] + 7}/decision",
            json={"approved": True},
            timeout=5,
        )
        assert stale.status_code == 409
    finally:
        server.shutdown()


def test_encode_png_round_trip():
    pixels = bytes(range(256)) * 12
    decoded = Image.open(io.BytesIO(encode_png(pixels)))
    arr = np.asarray(decoded)
    assert arr.shape == (32, 32, 3)
    # red plane first: pixel (row 0, col 1) red channel is byte 1
    assert arr[0, 1, 0] == 1
    assert arr[0, 1, 1] == (1024 + 1) % 256
