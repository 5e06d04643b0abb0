"""HTTP API tests for the annotation server, run against a live instance."""
import json
import threading
import urllib.error
import urllib.request

import pytest

from mintiqa.dataset import DEFAULT_VOCABULARIES
from mintiqa.server import AnnotationServer
from mintiqa.study import load_ratings_jsonl
from mintiqa.synth import make_synthetic_dataset


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return make_synthetic_dataset(root, n_prompts=2, seed=0)


@pytest.fixture
def server(corpus, tmp_path):
    app = AnnotationServer(corpus, tmp_path / "ratings.jsonl", seed=0)
    httpd = app.make_http_server("127.0.0.1", 0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield base, app
    httpd.shutdown()
    httpd.server_close()


def _get(url):
    try:
        with urllib.request.urlopen(url) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def _post(url, payload):
    body = json.dumps(payload).encode() if not isinstance(payload, bytes) \
        else payload
    req = urllib.request.Request(url, data=body,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def _valid_body():
    return {
        "scores": {"quality": 3.5, "authenticity": 2.0, "correspondence": 4.9},
        "choices": {f: vocab[0] for f, vocab in DEFAULT_VOCABULARIES.items()},
        "explanation": "slightly blurry edges",
    }


def test_session_requires_subject(server):
    base, _ = server
    status, body = _get(f"{base}/api/session")
    assert status == 400


def test_session_create_and_item_payload(server, corpus):
    base, _ = server
    status, sess = _get(f"{base}/api/session?subject_id=alice")
    assert status == 200
    assert sess["n_items"] == len(corpus.images)
    sid = sess["session_id"]
    status, item = _get(f"{base}/api/session/{sid}/item/0")
    assert status == 200
    assert item["perspectives"] == ["quality", "authenticity", "correspondence"]
    assert len(item["questions"]) == 5
    for q in item["questions"]:
        # options must be the server-side vocabulary verbatim
        assert q["options"] == list(DEFAULT_VOCABULARIES[q["id"]])
    assert item["image_id"] in corpus.images
    assert item["image_url"].startswith("/images/")
    assert item["prompt_text"]


def test_item_image_is_fetchable(server):
    base, _ = server
    _, sess = _get(f"{base}/api/session?subject_id=a")
    _, item = _get(f"{base}/api/session/{sess['session_id']}/item/0")
    with urllib.request.urlopen(base + item["image_url"]) as resp:
        assert resp.status == 200
        assert resp.read()[:8] == b"\x89PNG\r\n\x1a\n"


def test_item_index_bounds(server):
    base, _ = server
    _, sess = _get(f"{base}/api/session?subject_id=a")
    status, _ = _get(f"{base}/api/session/{sess['session_id']}/item/9999")
    assert status == 404
    status, _ = _get(f"{base}/api/session/nope/item/0")
    assert status == 404


def test_rating_round_trip_byte_exact(server):
    base, app = server
    _, sess = _get(f"{base}/api/session?subject_id=bob")
    sid = sess["session_id"]
    body = _valid_body()
    status, ack = _post(f"{base}/api/session/{sid}/item/0/rating", body)
    assert status == 200 and ack == {"accepted": True}
    with urllib.request.urlopen(f"{base}/api/export") as resp:
        export = resp.read().decode()
    record = json.loads(export.strip().splitlines()[-1])
    assert record["scores"] == body["scores"]
    assert record["choices"] == body["choices"]
    assert record["explanation"] == body["explanation"]
    assert record["subject_id"] == "bob"


def test_rating_out_of_range_rejected(server):
    base, _ = server
    _, sess = _get(f"{base}/api/session?subject_id=c")
    bad = _valid_body()
    bad["scores"]["quality"] = 5.1
    status, resp = _post(f"{base}/api/session/{sess['session_id']}/item/0/rating",
                         bad)
    assert status == 400
    assert resp["accepted"] is False
    assert "scores.quality" in resp["errors"]


def test_rating_missing_choice_rejected(server):
    base, _ = server
    _, sess = _get(f"{base}/api/session?subject_id=c")
    bad = _valid_body()
    del bad["choices"]["clarity"]
    status, resp = _post(f"{base}/api/session/{sess['session_id']}/item/0/rating",
                         bad)
    assert status == 400
    assert "choices.clarity" in resp["errors"]


def test_rating_out_of_vocabulary_choice_rejected(server):
    base, _ = server
    _, sess = _get(f"{base}/api/session?subject_id=c")
    bad = _valid_body()
    bad["choices"]["clarity"] = "crystal"
    status, resp = _post(f"{base}/api/session/{sess['session_id']}/item/0/rating",
                         bad)
    assert status == 400
    assert "choices.clarity" in resp["errors"]


def test_malformed_json_rejected(server):
    base, _ = server
    _, sess = _get(f"{base}/api/session?subject_id=c")
    status, resp = _post(f"{base}/api/session/{sess['session_id']}/item/0/rating",
                         b"{not json")
    assert status == 400


def test_concurrent_submissions_no_corruption(server):
    base, app = server
    n_clients, n_posts = 4, 5
    errors = []

    def worker(idx):
        try:
            _, sess = _get(f"{base}/api/session?subject_id=subj{idx}")
            for i in range(n_posts):
                status, _ = _post(
                    f"{base}/api/session/{sess['session_id']}/item/{i}/rating",
                    _valid_body())
                assert status == 200
        except Exception as exc:  # propagated to the main thread below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,))
               for i in range(n_clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    lines = app.out_path.read_text().strip().splitlines()
    assert len(lines) == n_clients * n_posts
    parsed = [json.loads(line) for line in lines]  # every line intact
    assert {p["subject_id"] for p in parsed} == \
        {f"subj{i}" for i in range(n_clients)}


def test_export_feeds_study_pipeline(server):
    base, app = server
    for subj in ("s1", "s2", "s3"):
        _, sess = _get(f"{base}/api/session?subject_id={subj}")
        for i in range(3):
            _post(f"{base}/api/session/{sess['session_id']}/item/{i}/rating",
                  _valid_body())
    records = load_ratings_jsonl(app.out_path)
    assert len(records) == 3 * 3 * 3  # subjects x items x perspectives


def test_session_order_randomized_but_seeded(corpus, tmp_path):
    a = AnnotationServer(corpus, tmp_path / "a.jsonl", seed=42)
    b = AnnotationServer(corpus, tmp_path / "b.jsonl", seed=42)
    sa = a.create_session("x")
    sb = b.create_session("x")
    assert sa.items == sb.items  # same seed, same order
    assert sorted(sa.items) == sorted(corpus.images)
    s2 = a.create_session("y")
    assert s2.items != sa.items  # per-session reshuffle


def test_root_serves_fallback_page(server):
    base, _ = server
    with urllib.request.urlopen(f"{base}/") as resp:
        assert resp.status == 200
        assert b"<!doctype html>" in resp.read().lower()


def test_path_traversal_blocked(server):
    base, _ = server
    status, _ = _get(f"{base}/images/../../etc/passwd")
    assert status in (403, 404)
