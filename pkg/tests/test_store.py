import json

import pytest

from templeak.store import (
    CompletedRunError,
    ManifestError,
    NotFoundError,
    Store,
    StoreError,
    canonical_png,
)

from conftest import block_image


class TestImages:
    def test_put_is_idempotent(self, store):
        img = block_image(1)
        d1 = store.put_image(img)
        d2 = store.put_image(img)
        assert d1 == d2
        assert store.get_image(d1) == canonical_png(img)

    def test_get_put_round_trip_on_canonical_png(self, store):
        canonical = canonical_png(block_image(2))
        assert store.get_image(store.put_image(canonical)) == canonical

    def test_unknown_digest_not_found(self, store):
        with pytest.raises(NotFoundError):
            store.get_image("0" * 64)

    def test_undecodable_bytes_error(self, store):
        with pytest.raises(StoreError, match="undecodable"):
            store.put_image(b"not a png")

    def test_digests_ignore_encoder_quirks(self, store):
        import io

        import numpy as np
        from PIL import Image

        arr = np.asarray(Image.open(io.BytesIO(block_image(3))), dtype=np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, "RGB").save(buf, format="PNG", compress_level=0)
        assert store.put_image(buf.getvalue()) == store.put_image(block_image(3))

    def test_thousand_distinct_images_distinct_digests(self, store):
        digests = {store.put_image(block_image(i, 16, 16)) for i in range(1000)}
        assert len(digests) == 1000


class TestManifest:
    def test_sequence_numbers_increase(self, store):
        store.create_run("run1", {"x": 1})
        s1 = store.append_event("run1", {"kind": "note"})
        s2 = store.append_event("run1", {"kind": "note"})
        assert (s1, s2) == (2, 3)  # run_created holds seq 1

    def test_append_to_missing_run(self, store):
        with pytest.raises(NotFoundError):
            store.append_event("ghost", {"kind": "note"})

    def test_append_after_complete_errors(self, store):
        store.create_run("run1", {})
        store.append_event("run1", {"kind": "status", "status": "complete"})
        with pytest.raises(CompletedRunError):
            store.append_event("run1", {"kind": "generation", "prompt_index": 0, "seed_index": 0})

    def test_triage_events_allowed_after_complete(self, store):
        store.create_run("run1", {})
        store.append_event("run1", {"kind": "status", "status": "complete"})
        seq = store.append_event(
            "run1", {"kind": "verdict", "group_id": "g", "decision": "confirmed", "analyst": "a"}
        )
        assert seq == 3

    def test_truncated_tail_dropped_on_replay(self, store):
        store.create_run("run1", {})
        store.append_event(
            "run1",
            {"kind": "generation", "prompt_index": 0, "seed_index": 0, "image_digest": "d"},
        )
        path = store.manifest_path("run1")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"v":1,"seq":3,"kind":"generation","prompt_i')  # torn write
        state = store.replay("run1")
        assert len(state.generations) == 1
        assert state.last_seq == 2
        # appending after recovery resumes at the next full sequence number
        # and the torn bytes never corrupt later records
        fresh = Store(store.root)
        seq = fresh.append_event("run1", {"kind": "note"})
        assert seq == 3
        assert fresh.replay("run1").last_seq == 3

    def test_corrupt_interior_record_errors_with_seq(self, store):
        store.create_run("run1", {})
        store.append_event("run1", {"kind": "note"})
        path = store.manifest_path("run1")
        lines = path.read_text().splitlines()
        lines[0] = '{"broken'
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError, match="sequence 1"):
            store.replay("run1")

    def test_replay_reconstructs_state(self, store):
        store.create_run("run1", {"a": 1})
        store.append_event(
            "run1",
            {"kind": "generation", "prompt_index": 0, "seed_index": 1, "image_digest": "d1"},
        )
        store.append_event(
            "run1",
            {"kind": "generation", "prompt_index": 0, "seed_index": 0, "image_digest": "d0"},
        )
        store.append_event("run1", {"kind": "finding", "finding": {"kind": "probe", "subject": "p"}})
        store.append_event("run1", {"kind": "status", "status": "complete"})
        state = store.replay("run1")
        assert state.config == {"a": 1}
        assert state.status == "complete"
        assert [g["image_digest"] for g in state.ordered_generations()] == ["d0", "d1"]
        assert state.findings == [{"kind": "probe", "subject": "p"}]

    def test_empty_run_replay(self, store):
        store.create_run("run1", {})
        state = store.replay("run1")
        assert state.generations == []
        assert state.status == "running"


class TestViews:
    def test_report_serialization_is_stable(self, store):
        store.create_run("run1", {})
        report = {"v": 1, "run_id": "run1", "threshold": 0.95, "groups": []}
        p1 = store.write_report("run1", report)
        b1 = p1.read_bytes()
        p2 = store.write_report("run1", json.loads(p1.read_text()))
        assert p2.read_bytes() == b1

    def test_findings_one_json_object_per_line(self, store):
        store.create_run("run1", {})
        findings = [{"v": 1, "kind": "probe", "subject": "a", "score": 0.5, "evidence": {}}]
        path = store.write_findings("run1", findings)
        lines = path.read_text().splitlines()
        assert [json.loads(ln) for ln in lines] == findings
