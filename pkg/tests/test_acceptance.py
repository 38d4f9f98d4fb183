"""Acceptance suite: one test per release criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion lines.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from dupaudit.annotation import DuplicateLabel, Session
from dupaudit.dataset_io import ImageRecord, Split, read_split, write_split
from dupaudit.errors import IncompletePurgeError, MalformedFileError, TruncatedFileError
from dupaudit.evalgap import build_report, gap
from dupaudit.features import FeatureMatrix, l2_normalize, read_features, write_features
from dupaudit.mining import (
    CandidatePair,
    CandidateQueue,
    QueueProvenance,
    build_queue,
    mine_cross,
    mine_within,
    pair_distance,
)
from dupaudit.replacement import (
    CandidatePool,
    NeighborHit,
    ReplacementDecision,
    apply_replacements,
    knn3,
)
from dupaudit.stats import compute_stats, top_classes

from test_evalgap import BENCH_CIFAR10, BENCH_CIFAR100, predictions_with_error
from test_mining import brute_force_nearest
from test_replacement import brute_force_knn3
from test_stats import CIFAR10_NAMES, fixture_annotations, label_split, note, per_class_fixture


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


# --- criterion 1: benchmark-table reproduction -------------------------------------


def test_benchmark_table_reproduction():
    with criterion("benchmark table: every gap cell within 0.01pp, means within tolerance, < 1s"):
        start = time.perf_counter()
        for name, orig, fair, gap_pp, rel_pp in BENCH_CIFAR10 + BENCH_CIFAR100:
            g_abs, g_rel = gap(orig / 100, fair / 100)
            assert abs(g_abs * 100 - gap_pp) <= 0.01, name
            assert abs(g_rel * 100 - rel_pp) <= 0.01, name

        def report_for(bench):
            labels = [0] * 10000
            models = [
                (name, predictions_with_error(10000, round(o * 100)),
                 predictions_with_error(10000, round(f * 100)))
                for name, o, f, _g, _r in bench
            ]
            return build_report(models, labels, labels)

        report10 = report_for(BENCH_CIFAR10)
        report100 = report_for(BENCH_CIFAR100)
        # headline averages (error-rate fractions): 0.41 and 2.73 percent points
        assert abs(report10.mean_gap_abs - 0.0041) <= 0.005
        assert abs(report100.mean_gap_abs - 0.0273) <= 0.005
        # and the exact arithmetic over the table's rounded cells
        assert report10.mean_gap_abs == pytest.approx(0.0250 / 6, abs=1e-12)
        assert report100.mean_gap_abs == pytest.approx(0.1643 / 6, abs=1e-12)
        # the one published ranking change is detected
        assert report10.swapped_pairs == (("DenseNet-BC", "WRN-28-10"),)
        assert report100.swapped_pairs == ()
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0, f"took {elapsed:.3f}s"


# --- criterion 2: duplicate statistics reproduction -----------------------------------


def test_statistics_reproduction():
    with criterion("duplicate statistics: 9.95% / 3.25% fractions and top-class heads, < 1s"):
        start = time.perf_counter()
        split = label_split([0] * 10000)
        hundred = compute_stats(fixture_annotations(891, 104), split)
        assert hundred.fraction == pytest.approx(0.0995, abs=0)
        ten = compute_stats(fixture_annotations(286, 39), split)
        assert ten.fraction == pytest.approx(0.0325, abs=0)

        stats10 = per_class_fixture({"frog": 59, "automobile": 55, "airplane": 47}, CIFAR10_NAMES)
        assert top_classes(stats10, 14, CIFAR10_NAMES)[0] == ("frog", 59)

        names100 = tuple(
            {11: "cockroach", 52: "orange", 40: "lawn mower"}.get(i, f"class_{i:02d}")
            for i in range(100)
        )
        stats100 = per_class_fixture(
            {"cockroach": 33, "orange": 29, "lawn mower": 28}, names100
        )
        ranked = top_classes(stats100, 14, names100)
        assert ranked[0] == ("cockroach", 33)
        assert ranked[:3] == [("cockroach", 33), ("orange", 29), ("lawn mower", 28)]
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0, f"took {elapsed:.3f}s"


# --- criterion 3: mining equals exhaustive oracles --------------------------------------


def test_mining_oracle_equivalence():
    with criterion("mining: 50 seeded instances equal brute force exactly, any thread count, < 30s"):
        start = time.perf_counter()
        rng = np.random.default_rng(424242)
        sizes = []
        for i in range(50):
            if i < 2:
                sizes.append((500, 2000, 64))  # the stated maxima
            else:
                sizes.append(
                    (int(rng.integers(3, 180)), int(rng.integers(3, 700)), int(rng.integers(2, 65)))
                )
        for i, (n_test, n_train, dim) in enumerate(sizes):
            test = l2_normalize(FeatureMatrix(rng.standard_normal((n_test, dim)).astype(np.float32)))
            train = l2_normalize(FeatureMatrix(rng.standard_normal((n_train, dim)).astype(np.float32)))

            cross = mine_cross(test, train)
            expected = brute_force_nearest(test.values, train.values, exclude_self=False)
            assert [(p.neighbor_index, p.distance) for p in cross] == expected

            if n_test >= 2:
                within = mine_within(test)
                expected_within = brute_force_nearest(test.values, test.values, exclude_self=True)
                assert [(p.neighbor_index, p.distance) for p in within] == expected_within

            query = l2_normalize(FeatureMatrix(rng.standard_normal((1, dim)).astype(np.float32)))
            refs = [("train", train.values), ("test", test.values)]
            assert list(knn3(query.values[0], refs)) == brute_force_knn3(query.values[0], refs)

            if i % 10 == 0:  # thread-count independence, bitwise
                for threads in (2, 7):
                    assert mine_cross(test, train, threads=threads) == cross
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"took {elapsed:.3f}s"


# --- criterion 4: planted-duplicate recall -----------------------------------------------


def test_planted_duplicate_recall():
    with criterion("planted duplicates: 20 exact + 20 near copies fill the first 40 queue slots"):
        rng = np.random.default_rng(77)
        dim = 64
        train = l2_normalize(FeatureMatrix(rng.standard_normal((1000, dim)).astype(np.float32)))
        test_values = l2_normalize(
            FeatureMatrix(rng.standard_normal((200, dim)).astype(np.float32))
        ).values.copy()

        exact_plants = {int(q): int(t) for q, t in zip(range(0, 40, 2), range(100, 140, 2))}
        noisy_plants = {int(q): int(t) for q, t in zip(range(1, 40, 2), range(500, 540, 2))}
        for q, t in exact_plants.items():
            test_values[q] = train.values[t]
        for q, t in noisy_plants.items():
            noisy = train.values[t].astype(np.float64)
            noise = rng.standard_normal(dim)
            noisy = noisy + 0.02 * noise / np.linalg.norm(noise)
            test_values[q] = (noisy / np.linalg.norm(noisy)).astype(np.float32)
        test = FeatureMatrix(test_values, normalized=True)

        # fixture sanity: planted distances < 0.05, all other nearest neighbors > 0.1
        t64 = test.values.astype(np.float64)
        r64 = train.values.astype(np.float64)
        planted = {**exact_plants, **noisy_plants}
        for q, t in planted.items():
            assert pair_distance(t64[q], r64[t]) < 0.05
        queue = build_queue(mine_cross(test, train))
        for p in queue.pairs:
            if p.query_index not in planted:
                assert p.distance > 0.1

        head = queue.pairs[:40]
        recalled = {p.query_index: p.neighbor_index for p in head}
        assert recalled == planted  # 100% recall in the first 40 positions
        for p in head[:20]:
            assert p.query_index in exact_plants  # exact copies sort first
            assert p.distance == 0.0


# --- criterion 5: stopping rule vs linear-scan oracle --------------------------------------


def _stop_oracle(labels: list[str], threshold: int, queue_len: int) -> int | None:
    run = 0
    for step, label in enumerate(labels[:queue_len], start=1):
        run = run + 1 if label == "different" else 0
        if run >= threshold or step == queue_len:
            return step
    return None


def _fresh_queue(length: int) -> CandidateQueue:
    pairs = tuple(
        CandidatePair(query_index=i, neighbor_index=i, neighbor_split="train", distance=i * 1e-4)
        for i in range(length)
    )
    return CandidateQueue(pairs=pairs, provenance=QueueProvenance.empty())


def test_stopping_rule_oracle():
    with criterion("stopping rule: 10,000 random sequences match the linear-scan oracle"):
        rng = np.random.default_rng(2024)
        kinds = ["exact", "near", "similar", "different"]
        queue = _fresh_queue(64)
        for _ in range(10_000):
            threshold = int(rng.integers(1, 26))
            length = int(rng.integers(0, 61))
            weights = [0.1, 0.1, 0.1, 0.7]  # different-heavy so the rule actually trips
            labels = [kinds[i] for i in rng.choice(4, size=length, p=weights)]
            session = Session(queue, stop_threshold=threshold)
            applied = 0
            for label in labels:
                if session.completed:
                    break
                session.record_label(applied, label)
                applied += 1
            expected = _stop_oracle(labels, threshold, len(queue))
            if expected is not None and expected <= applied:
                assert session.completed and applied == expected
            else:
                assert session.completed == (applied == len(queue))

        # the canonical 19 + 1 + 20 sequence completes at step 40, not 20
        session = Session(_fresh_queue(64), stop_threshold=20)
        seq = ["different"] * 19 + ["near"] + ["different"] * 20
        for i, label in enumerate(seq):
            assert not session.completed
            session.record_label(i, label)
        assert session.completed
        assert len(session.records) == 40


# --- criterion 6: format round trips ----------------------------------------------------------


def test_format_round_trips():
    with criterion("formats: binary splits and feature files round-trip bit-exactly"):
        rng = np.random.default_rng(5150)
        for fmt, rec_size in (("cifar10", 3073), ("cifar100", 3074)):
            n_classes = 10 if fmt == "cifar10" else 100
            records = tuple(
                ImageRecord(
                    fine_label=int(rng.integers(0, n_classes)),
                    coarse_label=int(rng.integers(0, 20)) if fmt == "cifar100" else None,
                    pixels=rng.integers(0, 256, 3072, dtype=np.uint8).tobytes(),
                )
                for _ in range(64)
            )
            split = Split(role="test", num_classes=n_classes, records=records)
            data = write_split(split, fmt)
            assert len(data) == 64 * rec_size
            assert read_split(data, fmt) == split
            assert write_split(read_split(data, fmt), fmt) == data
            with pytest.raises(MalformedFileError):
                read_split(data[:-1], fmt)

        matrix = l2_normalize(FeatureMatrix(rng.standard_normal((37, 24)).astype(np.float32)))
        payload = write_features(matrix)
        again = read_features(payload)
        assert again.values.tobytes() == matrix.values.tobytes()
        assert again.normalized
        with pytest.raises(TruncatedFileError):
            read_features(payload[:-2])


# --- criterion 7: purge integrity ----------------------------------------------------------------


def test_purge_integrity():
    with criterion("purge: 995 of 10,000 records substituted, labels intact, gaps rejected"):
        rng = np.random.default_rng(31337)
        base_pixels = bytes(3072)
        fine = rng.integers(0, 100, size=10_000)
        coarse = rng.integers(0, 20, size=10_000)
        records = tuple(
            ImageRecord(fine_label=int(f), coarse_label=int(c), pixels=base_pixels)
            for f, c in zip(fine, coarse)
        )
        test_split = Split(role="test", num_classes=100, records=records)

        # 891 cross + 104 within duplicates on distinct test indices
        flagged = list(range(995))
        annotations = [
            note(i, "train", DuplicateLabel.NEAR_DUPLICATE) for i in range(891)
        ] + [note(i, "test", DuplicateLabel.VERY_SIMILAR) for i in range(891, 995)]
        from dupaudit.replacement import duplicate_test_indices

        assert duplicate_test_indices(annotations) == flagged

        pool_records = tuple(
            ImageRecord(
                fine_label=records[i].fine_label,
                coarse_label=records[i].coarse_label,
                pixels=bytes([1 + (i % 255)]) * 3072,
            )
            for i in flagged
        )
        pool = CandidatePool(
            Split(role="train", num_classes=100, records=pool_records),
            l2_normalize(FeatureMatrix(rng.standard_normal((995, 8)).astype(np.float32))),
            [r.fine_label for r in pool_records],
        )
        hits = (
            NeighborHit("train", 0, 0.4),
            NeighborHit("train", 1, 0.5),
            NeighborHit("test", 0, 0.6),
        )
        decisions = [
            ReplacementDecision(
                candidate_id=k,
                target_index=target,
                neighbors=hits,
                approved=True,
                decider="r",
                timestamp="t",
            )
            for k, target in enumerate(flagged)
        ]

        purged = apply_replacements(test_split, decisions, flagged, pool)
        assert len(purged) == 10_000
        substituted = sum(
            1 for a, b in zip(test_split.records, purged.records) if a.pixels != b.pixels
        )
        assert substituted == 995
        label_changes = sum(
            1
            for a, b in zip(test_split.records, purged.records)
            if (a.fine_label, a.coarse_label) != (b.fine_label, b.coarse_label)
        )
        assert label_changes == 0

        # removing any decisions is rejected with the complete missing-index list
        dropped = [d for d in decisions if d.target_index not in (3, 444, 991)]
        with pytest.raises(IncompletePurgeError) as err:
            apply_replacements(test_split, dropped, flagged, pool)
        assert err.value.indices == [3, 444, 991]
