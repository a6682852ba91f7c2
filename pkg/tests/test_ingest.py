import io

import numpy as np
import pytest

from flowcube.geo import GeoPoint, Region
from flowcube.ingest import (
    GeoEvent,
    IngestCounters,
    MalformedInputError,
    build_movements,
    ingest_file,
    movements_from_arrays,
    movements_to_arrays,
    parse_events,
    read_movements_all,
    write_movements_csv,
)

from .oracles import build_movements_oracle


def ev(user, t, lon, lat):
    return GeoEvent(user, t, GeoPoint(lon, lat))


class TestParse:
    def test_single_line(self):
        events = list(parse_events(["42,1406851200,-88.2,40.1"]))
        assert events == [GeoEvent(42, 1406851200, GeoPoint(-88.2, 40.1))]

    def test_malformed_counted_and_skipped(self):
        c = IngestCounters()
        lines = ["42,notatime,-88.2,40.1", "1,5,0,0"]
        events = list(parse_events(lines, c, max_malformed_fraction=1.0))
        assert len(events) == 1
        assert c.malformed == 1
        assert c.events == 1

    def test_header_detected(self):
        events = list(parse_events(["user_id,epoch_seconds,lon,lat", "1,5,0,0"]))
        assert len(events) == 1

    def test_order_preserved(self):
        lines = [f"{i % 7},{20_000 - i},{i * 0.001},{-i * 0.001}" for i in range(10_000)]
        events = list(parse_events(lines))
        assert len(events) == 10_000
        assert [e.t for e in events[:3]] == [20_000, 19_999, 19_998]

    def test_too_many_malformed_fatal(self):
        lines = ["bad" for _ in range(3)] + ["1,5,0,0"]
        with pytest.raises(MalformedInputError):
            list(parse_events(lines))

    def test_fraction_boundary_not_fatal(self):
        lines = ["bad"] + ["1,5,0,0"] * 9  # exactly 10%
        assert len(list(parse_events(lines))) == 9

    @pytest.mark.parametrize(
        "line",
        ["1,5,0", "1,5,0,0,0", "1,-3,0,0", "1,5,190,0", "1,5,0,nan", "1,5,inf,0"],
    )
    def test_rejects(self, line):
        c = IngestCounters()
        assert list(parse_events([line], c, max_malformed_fraction=1.0)) == []
        assert c.malformed == 1


class TestBuildMovements:
    def test_simple_pair(self):
        out = build_movements([ev(7, 1, 0.0, 0.0), ev(7, 2, 1.0, 1.0)])
        assert len(out) == 1
        m = out[0]
        assert (m.user, m.t_src, m.t_dst) == (7, 1, 2)
        assert m.travel_time == 1
        assert m.src == GeoPoint(0.0, 0.0) and m.dst == GeoPoint(1.0, 1.0)

    def test_duplicate_coordinates_collapse_to_latest(self):
        out = build_movements([ev(7, 1, 0.0, 0.0), ev(7, 2, 0.0, 0.0), ev(7, 3, 1.0, 1.0)])
        assert len(out) == 1
        assert (out[0].t_src, out[0].t_dst) == (2, 3)

    def test_unsorted_input(self):
        out = build_movements([ev(7, 5, 1.0, 1.0), ev(7, 1, 0.0, 0.0)])
        assert len(out) == 1
        assert out[0].src == GeoPoint(0.0, 0.0)

    def test_out_of_region_dropped_and_counted(self):
        region = Region(0.0, 0.0, 10.0, 10.0)
        c = IngestCounters()
        out = build_movements(
            [ev(1, 1, 1.0, 1.0), ev(1, 2, 50.0, 1.0), ev(1, 3, 2.0, 2.0)],
            region=region,
            counters=c,
        )
        assert c.out_of_region == 1
        assert len(out) == 1
        assert (out[0].t_src, out[0].t_dst) == (1, 3)

    def test_max_gap_breaks_trajectory(self):
        events = [ev(1, 0, 0.0, 0.0), ev(1, 10, 1.0, 0.0), ev(1, 10_000, 2.0, 0.0)]
        assert len(build_movements(events)) == 2
        assert len(build_movements(events, max_gap_seconds=100)) == 1

    def test_tie_timestamps_keep_input_order(self):
        out = build_movements([ev(1, 5, 0.0, 0.0), ev(1, 5, 1.0, 0.0), ev(1, 5, 2.0, 0.0)])
        assert [m.src.lon for m in out] == [0.0, 1.0]
        assert [m.dst.lon for m in out] == [1.0, 2.0]

    def test_random_walk_matches_oracle(self):
        rng = np.random.default_rng(42)
        n_users, per_user = 1000, 12
        users = np.repeat(np.arange(n_users), per_user)
        ts = rng.integers(0, 10_000, size=users.size)
        # Coarse snapping makes duplicate coordinates common.
        lons = np.round(rng.uniform(-5, 5, size=users.size), 1)
        lats = np.round(rng.uniform(-5, 5, size=users.size), 1)
        region = (-5.0, -5.0, 5.0, 5.0)

        raw = list(zip(users.tolist(), ts.tolist(), lons.tolist(), lats.tolist()))
        expected = build_movements_oracle(raw, region)

        cols = movements_from_arrays(users, ts, lons, lats, region=Region(*region))
        got = list(
            zip(
                cols["user_id"].tolist(),
                cols["t_src"].tolist(),
                cols["t_dst"].tolist(),
                cols["lon_s"].tolist(),
                cols["lat_s"].tolist(),
                cols["lon_d"].tolist(),
                cols["lat_d"].tolist(),
            )
        )
        assert got == expected

    def test_invariants_on_random_data(self):
        rng = np.random.default_rng(3)
        users = rng.integers(0, 50, size=2000)
        ts = rng.integers(0, 1000, size=2000)
        lons = np.round(rng.uniform(0, 1, size=2000), 2)
        lats = np.round(rng.uniform(0, 1, size=2000), 2)
        c = IngestCounters()
        cols = movements_from_arrays(users, ts, lons, lats, counters=c)
        n_users = np.unique(users).size
        assert cols["user_id"].size <= users.size - n_users
        assert np.all(cols["t_dst"] >= cols["t_src"])
        moved = (cols["lon_s"] != cols["lon_d"]) | (cols["lat_s"] != cols["lat_d"])
        assert np.all(moved)
        order = np.lexsort((cols["t_src"], cols["user_id"]))
        assert np.array_equal(order, np.arange(order.size))


class TestFileStage:
    def test_ingest_file_round_trip(self, tmp_path):
        events = tmp_path / "events.csv"
        filler = "".join(f"9,{300 + i},1.9,1.9\n" for i in range(8))
        events.write_text(
            "user_id,epoch_seconds,lon,lat\n"
            "1,100,0.5,0.5\n"
            "1,200,1.5,0.5\n"
            "2,50,0.25,0.25\n"
            "junk line\n"
            "2,80,0.75,0.25\n" + filler
        )
        out = tmp_path / "movements.csv"
        c = ingest_file(events, out, region=Region(0.0, 0.0, 2.0, 2.0))
        assert c.malformed == 1
        assert c.movements == 2
        cols = read_movements_all(out)
        assert cols["user_id"].tolist() == [1, 2]
        assert cols["lon_d"].tolist() == [1.5, 0.75]

    def test_write_is_deterministic(self, tmp_path):
        out = build_movements([ev(1, 1, 0.123456789, 0.0), ev(1, 2, 1.0, 2.0 / 3.0)])
        cols = movements_to_arrays(out)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_movements_csv(cols, p1)
        write_movements_csv(read_movements_all(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
