import json

import numpy as np
import pytest

from flowcube.aggregate import node_line
from flowcube.geo import GridHierarchy, Region
from flowcube.mapreduce import JobSpec, run_job
from flowcube.partition import PartitionScheme, RectIndex, recursive_bisect
from flowcube.summarize import SummarizeJob, SummaryConfig, percentile_rank

from .oracles import percentile_rank_oracle, summarize_oracle

REGION = Region(0.0, 0.0, 6.0, 6.0)
GRID_CFG = {"region": [0.0, 0.0, 6.0, 6.0], "levels": 3, "base_cell_arcsec": 450.0, "growth": 2}


def make_grid():
    return GridHierarchy(REGION, levels=3, base_cell_arcsec=450.0, growth=2)


def one_rect_scheme():
    return PartitionScheme(depth=0, rects=[REGION], counts=[0], seed=0, sample_rate=1.0)


def random_nodes(n_per_level, seed, levels=(1, 2, 3)):
    """Distinct random cells per level with lognormal-ish counts."""
    rng = np.random.default_rng(seed)
    grid = make_grid()
    nodes = {}
    for level in levels:
        cells = rng.choice(grid.cell_count(level), size=min(n_per_level, grid.cell_count(level)), replace=False)
        for cell in cells.tolist():
            lon, lat = grid.cell_center(level, cell)
            jit = grid.cell_len_deg(level) * 0.3
            lon += float(rng.uniform(-jit, jit))
            lat += float(rng.uniform(-jit, jit))
            count = int(rng.integers(1, 50)) * int(rng.choice([1, 1, 1, 20]))
            nodes[(level, cell)] = {"count": count, "lon": lon, "lat": lat}
    return nodes


def write_nodes(path, nodes):
    with open(path, "w") as fh:
        for (level, cell) in sorted(nodes):
            rec = nodes[(level, cell)]
            fh.write(node_line(level, cell, rec["lon"], rec["lat"], rec["count"],
                               rec.get("users", 1), rec.get("tt", 0),
                               rec.get("tb", [[0, rec["count"]]])) + "\n")


def run_summarize(tmp_path, nodes, scheme=None, config=SummaryConfig(), workers=1, name="sum"):
    scheme = scheme or one_rect_scheme()
    src = tmp_path / f"{name}.ndjson"
    write_nodes(src, nodes)
    job = SummarizeJob(make_grid(), scheme, config)
    res = run_job(job, JobSpec([src], tmp_path / name, n_partitions=scheme.n_partitions, workers=workers))
    kept = {}
    for path in res.output_files:
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                kept[(rec["l"], rec["id"])] = rec
    return kept


class TestPercentileRank:
    def test_all_below(self):
        assert percentile_rank(10, [1, 2, 3]) == 100.0

    def test_all_above(self):
        assert percentile_rank(2, [5, 7, 9]) == 0.0

    def test_mean_rank_ties(self):
        assert percentile_rank(5, [5, 5, 1]) == pytest.approx(66.666666, abs=1e-4)

    def test_empty_keeps(self):
        assert percentile_rank(1, []) == 100.0

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            c = int(rng.integers(0, 20))
            neigh = rng.integers(0, 20, size=int(rng.integers(0, 30))).tolist()
            assert percentile_rank(c, neigh) == pytest.approx(percentile_rank_oracle(c, neigh))


class TestConfig:
    def test_threshold_range(self):
        with pytest.raises(ValueError):
            SummaryConfig(threshold=101)

    def test_radius_positive(self):
        with pytest.raises(ValueError):
            SummaryConfig(r=0.0)

    def test_per_level_radius(self):
        cfg = SummaryConfig(r=(2.0, 4.0, 8.0))
        assert cfg.r_for(1) == 2.0 and cfg.r_for(3) == 8.0


class TestVerdicts:
    def test_isolated_node_kept(self, tmp_path):
        nodes = {(3, 10): {"count": 1, "lon": 0.3, "lat": 0.05}}
        kept = run_summarize(tmp_path, nodes)
        assert (3, 10) in kept
        assert kept[(3, 10)]["rank"] == 100.0

    def test_uniform_plateau_dropped(self, tmp_path):
        grid = make_grid()
        nodes = {}
        # 3x3 block of adjacent level-3 cells, all count 5: mutually in range.
        for row in range(3):
            for col in range(3):
                cell = row * grid.cols(3) + col
                lon, lat = grid.cell_center(3, cell)
                nodes[(3, cell)] = {"count": 5, "lon": lon, "lat": lat}
        kept = run_summarize(tmp_path, nodes)
        assert kept == {}

    def test_plateau_survives_low_threshold(self, tmp_path):
        grid = make_grid()
        nodes = {}
        for col in range(3):
            lon, lat = grid.cell_center(3, col)
            nodes[(3, col)] = {"count": 5, "lon": lon, "lat": lat}
        kept = run_summarize(tmp_path, nodes, config=SummaryConfig(threshold=49.0))
        assert set(kept) == set(nodes)
        assert all(rec["rank"] == 50.0 for rec in kept.values())

    def test_passthrough_fields(self, tmp_path):
        nodes = {(2, 4): {"count": 9, "lon": 1.1, "lat": 0.6, "users": 3, "tt": 77, "tb": [[1, 4], [2, 5]]}}
        kept = run_summarize(tmp_path, nodes)
        rec = kept[(2, 4)]
        assert rec["u"] == 3 and rec["tt"] == 77 and rec["tb"] == [[1, 4], [2, 5]]


class TestOracleEquivalence:
    @pytest.mark.parametrize("depth", [0, 2])
    def test_kept_set_matches_oracle(self, tmp_path, depth):
        nodes = random_nodes(700, seed=21)
        pts = np.array([[rec["lon"], rec["lat"]] for rec in nodes.values()])
        scheme = recursive_bisect(pts, depth, REGION) if depth else one_rect_scheme()
        kept = run_summarize(tmp_path, nodes, scheme=scheme, name=f"d{depth}")
        oracle_nodes = {k: dict(v, count=v["count"]) for k, v in nodes.items()}
        expected, ranks = summarize_oracle(oracle_nodes, GRID_CFG, 8.0, 80.0)
        assert set(kept) == expected
        for key, rec in kept.items():
            assert rec["rank"] == pytest.approx(ranks[key], abs=1e-9)

    def test_partition_layout_invariance(self, tmp_path):
        nodes = random_nodes(400, seed=22)
        pts = np.array([[rec["lon"], rec["lat"]] for rec in nodes.values()])
        results = []
        for depth in range(4):
            scheme = recursive_bisect(pts, depth, REGION) if depth else one_rect_scheme()
            kept = run_summarize(tmp_path, nodes, scheme=scheme, name=f"lay{depth}")
            results.append({k: v["rank"] for k, v in kept.items()})
        assert results[0] == results[1] == results[2] == results[3]

    def test_threshold_monotone(self, tmp_path):
        nodes = random_nodes(300, seed=23)
        k80 = run_summarize(tmp_path, nodes, config=SummaryConfig(threshold=80.0), name="t80")
        k85 = run_summarize(tmp_path, nodes, config=SummaryConfig(threshold=85.0), name="t85")
        assert set(k85) <= set(k80)

    def test_count_scaling_invariance(self, tmp_path):
        nodes = random_nodes(300, seed=24)
        scaled = {k: dict(v, count=v["count"] * 7) for k, v in nodes.items()}
        k1 = run_summarize(tmp_path, nodes, name="s1")
        k7 = run_summarize(tmp_path, scaled, name="s7")
        assert set(k1) == set(k7)


class TestFanOut:
    def capture_emissions(self, nodes, scheme):
        job = SummarizeJob(make_grid(), scheme, SummaryConfig())
        job.setup(None)
        lines = []
        for (level, cell) in sorted(nodes):
            rec = nodes[(level, cell)]
            lines.append(node_line(level, cell, rec["lon"], rec["lat"], rec["count"], 1, 0, [[0, 1]]))
        emitted = []
        job.map_split(iter(lines), lambda k, v: emitted.append((int(k), json.loads(v))))
        return emitted

    def test_fanout_matches_window_oracle(self):
        nodes = random_nodes(300, seed=25)
        pts = np.array([[rec["lon"], rec["lat"]] for rec in nodes.values()])
        scheme = recursive_bisect(pts, 3, REGION)
        idx = RectIndex(scheme)
        job = SummarizeJob(make_grid(), scheme, SummaryConfig())
        emitted = self.capture_emissions(nodes, scheme)
        got = {}
        for pid, val in emitted:
            got.setdefault((val[0], val[1]), set()).add(pid)
        for (level, cell), rec in nodes.items():
            expected = idx.neighbor_partitions((rec["lon"], rec["lat"]), job.offset_deg(level))
            assert got[(level, cell)] == expected

    def test_exactly_one_home_replica(self):
        nodes = random_nodes(200, seed=26)
        pts = np.array([[rec["lon"], rec["lat"]] for rec in nodes.values()])
        scheme = recursive_bisect(pts, 3, REGION)
        emitted = self.capture_emissions(nodes, scheme)
        homes = {}
        for pid, val in emitted:
            if val[8]:
                homes[(val[0], val[1])] = homes.get((val[0], val[1]), 0) + 1
        assert set(homes) == set(nodes)
        assert all(v == 1 for v in homes.values())

    def test_offset_zero_neighborhood_is_home_only(self):
        # Small radius relative to rect size: interior nodes emit once.
        nodes = {(1, 0): {"count": 1, "lon": 1.0, "lat": 1.0}}
        scheme = PartitionScheme(
            depth=1,
            rects=[Region(0.0, 0.0, 3.0, 6.0), Region(3.0, 0.0, 6.0, 6.0)],
            counts=[0, 0],
            seed=0,
            sample_rate=1.0,
        )
        emitted = self.capture_emissions(nodes, scheme)
        # Level-1 offset (8 cells of 0.5 deg) spans the whole region: both partitions.
        assert {pid for pid, _ in emitted} == {0, 1}


class TestWorkerInvariance:
    def test_output_bytes(self, tmp_path):
        nodes = random_nodes(500, seed=27)
        pts = np.array([[rec["lon"], rec["lat"]] for rec in nodes.values()])
        scheme = recursive_bisect(pts, 2, REGION)
        src = tmp_path / "in.ndjson"
        write_nodes(src, nodes)
        outs = {}
        for w in (1, 4):
            job = SummarizeJob(make_grid(), scheme, SummaryConfig())
            res = run_job(job, JobSpec([src], tmp_path / f"w{w}", n_partitions=4, workers=w, split_mb=1))
            outs[w] = [open(p).read() for p in res.output_files]
        assert outs[1] == outs[4]
