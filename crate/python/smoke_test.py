"""Smoke test for the semunit Python extension.

Run after `maturin develop -m crates/python/Cargo.toml`, or after
`cargo build -p semunit-python --features extension-module`, in which case
the freshly built library under target/ is picked up.
"""

import glob
import importlib
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_semunit():
    try:
        return importlib.import_module("semunit")
    except ImportError:
        pass
    built = sorted(
        glob.glob(os.path.join(ROOT, "target", "*", "libsemunit_python.so"))
        + glob.glob(os.path.join(ROOT, "target", "*", "libsemunit_python.dylib")),
        key=os.path.getmtime,
    )
    if not built:
        sys.exit("semunit extension not found; build crates/python first")
    dest = tempfile.mkdtemp()
    shutil.copy(built[-1], os.path.join(dest, "semunit.so"))
    sys.path.insert(0, dest)
    return importlib.import_module("semunit")


def main():
    su = load_semunit()

    assert su.validate_schedule(3, [1, 2, 3]) == [1, 2, 3]
    assert su.receptive_span(3, [1, 2, 3]) == 13
    try:
        su.validate_schedule(3, [2, 4, 8])
    except ValueError as e:
        assert "M_2 = 4 > K = 3" in str(e), e
    else:
        raise AssertionError("gridding schedule accepted")

    pred = [[True, False, True], [False, False, True]]
    gold = [[True, True, False], [False, False, True]]
    assert abs(su.hamming_loss(pred, gold) - 2 / 6) < 1e-12
    p, r, f1 = su.micro_prf(pred, gold)
    assert abs(p - 2 / 3) < 1e-12 and abs(r - 2 / 3) < 1e-12 and abs(f1 - 2 / 3) < 1e-12
    assert su.band_micro_f1(pred, gold, 1) == 0.5

    cfg = su.run_config("desk", epochs=3, hidden=16)
    assert cfg["hidden"] == 16 and cfg["attention_variant"] == "hybrid"

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "corpus")
        manifest = su.generate_corpus(data, seed=7, topics=6, corpus_size=300)
        assert (manifest["train"], manifest["dev"], manifest["test"]) == (240, 30, 30)

        run = os.path.join(tmp, "run")
        clf, summary = su.train(data, out=run, epochs=3, hidden=16, embed=16, bands=[2])
        assert len(summary["history"]) == 3
        assert "band_f1_k2" in summary["test"]
        assert len(clf.labels) == 6

        texts = [manifest["topics"][0]["phrases"][0] + " w1 w2 w3", "w4 w5 " + manifest["topics"][1]["phrases"][0]]
        first = clf.predict(texts)
        assert all(set(ls) <= set(clf.labels) for ls in first)

        again = su.Classifier.load(run)
        assert again.predict(texts) == first

        labels = [[manifest["topics"][0]["name"]], [manifest["topics"][1]["name"]]]
        report = again.evaluate(texts, labels, bands=[1])
        assert set(report) == {"hl", "p", "r", "f1", "band_f1_k1"}

    print(f"semunit smoke test passed: {clf!r}, dev F1 {summary['best_dev_f1']:.3f}")


if __name__ == "__main__":
    main()
