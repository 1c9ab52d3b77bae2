from __future__ import annotations

import numpy as np
import pytest

from helpers import as_plain, make_tube, random_tube_set, stream_schedule
from oracles import naive_schedule
from vsynopsis.geometry import boxes_collide
from vsynopsis.overlay import label_origin, text_bitmap
from vsynopsis.synopsis import (
    ClusterBuffer, ClusterSlot, TubeScheduler, compose_frame, place_frame, read_schedule_csv,
    refill_cluster, render_frame, run_synopsis, schedule_to_csv,
)
from vsynopsis.tubes import TubeBuffer


def _gtb(n, start=0):
    gtb = TubeBuffer()
    for k in range(n):
        gtb.admit(make_tube(start + k + 1, start + k, [(0, 0, 2, 2)]))
    return gtb


class TestRefill:
    def test_fill_to_capacity(self):
        ctb = ClusterBuffer(3)
        ctb.slots.append(ClusterSlot(make_tube(99, 0, [(0, 0, 1, 1)])))
        gtb = _gtb(5, start=1)
        refill_cluster(ctb, gtb)
        assert len(ctb) == 3 and len(gtb) == 3
        assert [s.tube.id for s in ctb.slots] == [99, 2, 3]

    def test_starvation(self):
        ctb = ClusterBuffer(3)
        assert refill_cluster(ctb, TubeBuffer()) == 0 and len(ctb) == 0

    def test_under_full(self):
        ctb = ClusterBuffer(10)
        refill_cluster(ctb, _gtb(4))
        assert len(ctb) == 4

    def test_bad_capacity(self):
        with pytest.raises(ValueError):
            ClusterBuffer(0)


def _cluster(*tubes, cs=10):
    ctb = ClusterBuffer(cs)
    ctb.slots = [ClusterSlot(t) for t in tubes]
    return ctb


class TestCompose:
    def test_parallel_placement(self):
        ctb = _cluster(make_tube(1, 0, [(0, 0, 5, 5)] * 2), make_tube(2, 0, [(10, 0, 5, 5)] * 2))
        frame, entries = compose_frame(ctb, None, 0)
        assert [e.tube_id for e in entries] == [1, 2]
        assert [s.cursor for s in ctb.slots] == [1, 1]

    def test_collision_defers_later_tube(self):
        ctb = _cluster(make_tube(1, 0, [(0, 0, 5, 5)] * 2), make_tube(2, 0, [(2, 2, 5, 5)] * 2))
        _, entries = compose_frame(ctb, None, 0)
        assert [e.tube_id for e in entries] == [1]
        assert [s.cursor for s in ctb.slots] == [1, 0]
        _, entries = compose_frame(ctb, None, 1)
        assert [e.tube_id for e in entries] == [1]
        assert [s.tube.id for s in ctb.slots] == [2]

    def test_edge_touching_is_not_collision(self):
        ctb = _cluster(make_tube(1, 0, [(0, 0, 5, 5)]), make_tube(2, 0, [(5, 0, 5, 5)]))
        _, entries = compose_frame(ctb, None, 0)
        assert len(entries) == 2 and len(ctb) == 0

    def test_cs1_concatenates(self):
        rng = np.random.default_rng(2)
        tubes, _ = random_tube_set(rng, max_tubes=15, max_len=30)
        _, tsv = run_synopsis(tubes, 1)
        assert tsv == sum(len(t) for t in tubes)

    def test_disjoint_lengths_five(self):
        a = make_tube(1, 0, [(0, 0, 4, 4)] * 5)
        b = make_tube(2, 0, [(10, 10, 4, 4)] * 5)
        assert run_synopsis([a, b], 2)[1] == 5

    def test_identical_boxes_alternate(self):
        a = make_tube(1, 0, [(0, 0, 4, 4)] * 5)
        b = make_tube(2, 0, [(0, 0, 4, 4)] * 5)
        entries, tsv = run_synopsis([a, b], 2)
        assert tsv == 10
        by_frame = [e.tube_id for e in sorted(entries, key=lambda e: e.synopsis_frame)]
        assert by_frame == [1] * 5 + [2] * 5
        csv_text, n = naive_schedule(as_plain([a, b]), 2)
        assert n == 10 and schedule_to_csv(entries) == csv_text

    def test_alternating_when_path_crosses(self):
        # tube 2 collides with tube 1 only on even frames
        a = make_tube(1, 0, [(0, 0, 4, 4)] * 4)
        b = make_tube(2, 0, [(0 if k % 2 == 0 else 20, 0, 4, 4) for k in range(4)])
        entries, tsv = run_synopsis([a, b], 2)
        csv_text, n = naive_schedule(as_plain([a, b]), 2)
        assert (tsv, schedule_to_csv(entries)) == (n, csv_text)

    def test_pixel_mode_allows_box_overlap(self):
        a = make_tube(1, 0, [(0, 0, 4, 4)])
        b = make_tube(2, 0, [(2, 2, 4, 4)])
        a.frames[0].mask_crop[:] = False
        a.frames[0].mask_crop[0, 0] = True
        b.frames[0].mask_crop[:] = False
        b.frames[0].mask_crop[3, 3] = True
        frame = place_frame(_cluster(a, b), 0, "pixel", (10, 10))
        assert len(frame.placements) == 2
        frame = place_frame(_cluster(make_tube(1, 0, [(0, 0, 4, 4)]), make_tube(2, 0, [(2, 2, 4, 4)])), 0, "pixel", (10, 10))
        assert len(frame.placements) == 1

    def test_pixel_mode_needs_shape(self):
        with pytest.raises(ValueError):
            place_frame(_cluster(make_tube(1, 0, [(0, 0, 1, 1)])), 0, "pixel")
        with pytest.raises(ValueError):
            place_frame(_cluster(make_tube(1, 0, [(0, 0, 1, 1)])), 0, "circle")


class TestRender:
    def test_masked_paste(self):
        t = make_tube(1, 0, [(2, 3, 4, 2)])
        t.frames[0].mask_crop[0, 0] = False
        bg = np.full((10, 10, 3), 7, np.uint8)
        frame = place_frame(_cluster(t), 0)
        out = render_frame(bg, frame, labels=False)
        assert (out[3:5, 2:6] == 200).sum() == 3 * 7
        assert (out[3, 2] == 7).all()
        assert (out[:3] == 7).all() and (bg == 7).all()

    def test_label_drawn_above_box(self):
        t = make_tube(1, 0, [(10, 30, 20, 10)])
        t.label = "01:05"
        bg = np.full((60, 80, 3), 100, np.uint8)
        out = render_frame(bg, place_frame(_cluster(t), 0), labels=True)
        x, y = label_origin(t.frames[0].box, "01:05", bg.shape)
        glyph = text_bitmap("01:05")
        region = out[y + 1 : y + 1 + glyph.shape[0], x + 1 : x + 1 + glyph.shape[1]]
        assert (region[glyph] == 255).all()
        assert y + glyph.shape[0] + 2 <= 30

    def test_label_clamped_into_frame(self):
        x, y = label_origin(make_tube(1, 0, [(70, 0, 10, 10)]).frames[0].box, "00:00", (20, 80))
        assert y == 0 and x + text_bitmap("00:00").shape[1] + 2 <= 80


class TestScheduler:
    def test_invariants_on_random_sets(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            tubes, _ = random_tube_set(rng, max_tubes=25, max_len=60)
            for cs in (1, 3, 8):
                entries, tsv = run_synopsis(tubes, cs)
                by_frame: dict[int, list] = {}
                for e in entries:
                    by_frame.setdefault(e.synopsis_frame, []).append(e)
                assert sorted(by_frame) == list(range(tsv))
                for placed in by_frame.values():
                    assert len(placed) <= cs
                    for i in range(len(placed)):
                        for j in range(i + 1, len(placed)):
                            assert not boxes_collide(placed[i].box, placed[j].box)
                for t in tubes:
                    mine = sorted((e for e in entries if e.tube_id == t.id), key=lambda e: e.of_index)
                    assert [e.of_index for e in mine] == list(range(len(t)))
                    assert all(a.synopsis_frame < b.synopsis_frame for a, b in zip(mine, mine[1:]))
                csv_text, n = naive_schedule(as_plain(tubes), cs)
                assert (tsv, schedule_to_csv(entries)) == (n, csv_text)

    def test_streaming_equals_offline(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            tubes, confirm_at = random_tube_set(rng, max_tubes=20, max_len=80)
            cs = int(rng.integers(1, 8))
            assert stream_schedule(tubes, confirm_at, cs, rng) == naive_schedule(as_plain(tubes), cs)

    def test_waits_until_cluster_full(self):
        sched = TubeScheduler(cluster_size=2).reset()
        sched.admit(make_tube(1, 0, [(0, 0, 2, 2)] * 2))
        assert list(sched.frames()) == []
        sched.admit(make_tube(2, 1, [(5, 5, 2, 2)] * 4))
        # tube 1 leaves after two frames and the free slot must be refilled first
        assert len(list(sched.frames())) == 2
        sched.close()
        assert len(list(sched.frames())) == 2
        assert sched.done and sched.n_frames_ == 4

    def test_empty_input(self):
        sched = TubeScheduler(cluster_size=3).fit([])
        assert sched.n_synopsis_frames_ == 0
        assert sched.schedule_csv().strip() == ",".join(
            ["tube_id", "of_index", "synopsis_frame", "x", "y", "w", "h", "source_frame"])

    def test_background_callable_uses_earliest_tube_snapshot(self):
        seen = []

        def bg(snapshot):
            seen.append(snapshot)
            return np.zeros((10, 10, 3), np.uint8)

        sched = TubeScheduler(cluster_size=2, labels=False).reset(background=bg)
        sched.admit(make_tube(1, 0, [(0, 0, 2, 2)] * 2, snapshot=299))
        sched.admit(make_tube(2, 1, [(5, 5, 2, 2)] * 3, snapshot=599))
        sched.close()
        frames = list(sched.frames())
        assert seen == [299, 299, 599]
        assert all(f.pixels.shape == (10, 10, 3) for f in frames)

    def test_bad_cluster_size(self):
        with pytest.raises(ValueError):
            TubeScheduler(cluster_size=0).fit([])

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        tubes, _ = random_tube_set(rng, max_tubes=8, max_len=10)
        sched = TubeScheduler(cluster_size=3).fit(tubes)
        path = tmp_path / "schedule.csv"
        path.write_text(sched.schedule_csv())
        assert read_schedule_csv(path) == sched.schedule_
        path.write_text("a,b\n")
        with pytest.raises(ValueError):
            read_schedule_csv(path)
