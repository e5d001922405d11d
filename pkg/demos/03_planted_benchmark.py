"""Validate the detector against planted ground truth.

plant_benchmark builds a corpus with known template groups plus unrelated
noise; the full pipeline must recover exactly the planted groups.
"""

import tempfile
import time

from templeak import percept, pipeline, synthcorpus
from templeak.store import Store


def main():
    store = Store(tempfile.mkdtemp(prefix="templeak-bench-"))
    t0 = time.time()
    bench = synthcorpus.plant_benchmark(5, 6, 20, 0, seed=0, store=store)
    print(f"planted {len(bench.images)} images: 5 groups x 6 members + 20 noise")

    run_id = pipeline.ingest_corpus_run(bench, store)
    report, _ = pipeline.detect_run(
        run_id,
        store,
        percept.StubExtractor(),
        segmenter=bench.make_segmenter(),
        threshold=0.95,
    )

    got = {frozenset(g["members"]) for g in report["groups"]}
    truth = {frozenset(m) for m in bench.truth_groups().values()}
    tp = len(got & truth)
    precision = tp / len(got) if got else 0.0
    recall = tp / len(truth)
    print(f"recovered {len(got)} groups in {time.time() - t0:.2f}s")
    print(f"precision {precision:.2f}, recall {recall:.2f}")
    assert precision == recall == 1.0


if __name__ == "__main__":
    main()
