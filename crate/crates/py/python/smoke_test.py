"""Smoke test for the labelinst extension module.

Build first with `cargo build -p labelinst-py --release`, then run
`python3 crates/py/python/smoke_test.py`. Set LABELINST_LIB to point at a
specific shared library.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def load_module():
    candidates = [os.environ.get("LABELINST_LIB")] + [
        str(ROOT / "target" / profile / "liblabelinst.so") for profile in ("release", "debug")
    ]
    for path in filter(None, candidates):
        if Path(path).exists():
            loader = importlib.machinery.ExtensionFileLoader("labelinst", path)
            spec = importlib.util.spec_from_loader("labelinst", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("liblabelinst.so not found; run `cargo build -p labelinst-py --release`")


def main():
    li = load_module()

    t, v = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]
    assert li.sum_fusion_query(t, v) == [1.0, 1.0, 0.0]
    assert li.weighted_fusion_query(t, v) == [1.0, 1.0, 0.0]
    assert abs(li.cosine(t, [1.0, 1.0, 0.0]) - 1 / math.sqrt(2)) < 1e-7
    assert abs(li.average_precision([1, 2, 3], [1, 3], 3) - (1 + 2 / 3) / 2) < 1e-12

    ds, bundle = li.synth(n_classes=3, images_per_class=10, dim=16, seed=1)
    assert ds.class_names() == ["alpha", "beta", "gamma"]
    assert len(ds) == 30
    bundle.validate(ds)

    with tempfile.TemporaryDirectory() as tmp:
        bundle.save(Path(tmp) / "embeddings.bin")
        again = li.EmbeddingBundle.load(Path(tmp) / "embeddings.bin")
        assert again.to_bytes() == bundle.to_bytes()
        ds.save(Path(tmp) / "annotations.json")
        assert li.Dataset.load(Path(tmp) / "annotations.json").image_ids() == ds.image_ids()

        index = li.VectorIndex.build(bundle, ds, seed=1)
        assert len(index) == 30 * 165
        query = bundle.text("a photo of beta")
        hits = index.search(query, k=10)
        assert hits == index.search_exact(query, k=10)
        index.save(Path(tmp) / "all.idx")
        assert li.VectorIndex.load(Path(tmp) / "all.idx").search(query, k=10) == hits
    top = {image for image, _ in hits[:5]}
    assert top <= set(ds.images_with_class("beta")), "text query should find its class"

    report, sets = li.compare(ds, bundle, methods=["pdc", "original_texts"], n_folds=3, seed=1, k=50)
    report = json.loads(report)
    assert [r["config"]["method"] for r in report["reports"]] == ["pdc", "original_texts"]
    pdc_sets = [s for s in sets if json.loads(s)["method"] == "pdc"]
    assert len(pdc_sets) == 9
    again = json.loads(li.evaluate(ds, bundle, pdc_sets, n_folds=3, seed=1, k=50))
    assert again["map"] == report["reports"][0]["map"]

    try:
        li.average_precision([1, 1], [1], 2)
    except li.LabelinstError:
        pass
    else:
        raise AssertionError("repeated id should raise")

    print(f"labelinst {li.__version__}: smoke test passed (pdc mAP {again['map']:.4f})")


if __name__ == "__main__":
    main()
