"""Railway network graph: stations, adjacency, distances, train frequencies.

The graph is undirected. An edge exists between two stations exactly when
they appear as consecutive stops on at least one train run. Per edge we
keep the track distance in kilometers and the number of distinct trains
that traverse it; both drive the spatial weighting used by the model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# The 17 administrative zone codes, plus the fallback tag.
ZONE_CODES = (
    "SCR", "NR", "WR", "ECR", "NWR", "SR", "NFR", "CR", "ECOR",
    "NCR", "SWR", "ER", "NER", "WCR", "SER", "SECR", "KRCL",
)
UNKNOWN_ZONE = "UNKNOWN"

# Edge distances observed to disagree by more than this (relative to the
# median) are flagged but still aggregated.
DISTANCE_DISAGREEMENT_TOL = 0.10


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Station:
    code: str
    name: str
    zone: str
    index: int


@dataclass
class GraphBuildReport:
    """Counters from graph construction, for operator visibility."""

    runs_total: int = 0
    runs_rejected: int = 0
    distance_disagreements: int = 0


@dataclass
class RailGraph:
    """Immutable after construction; safe to share across threads."""

    stations: list[Station]
    adjacency: np.ndarray      # N x N binary
    distance: np.ndarray       # N x N km, 0 off-edges
    frequency: np.ndarray      # N x N distinct-train counts
    build_report: GraphBuildReport = field(default_factory=GraphBuildReport)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def index_of(self, code: str) -> int:
        try:
            return self._code_index[code]
        except AttributeError:
            object.__setattr__(self, "_code_index", {s.code: s.index for s in self.stations})
            return self._code_index[code]

    def station_codes(self) -> list[str]:
        return [s.code for s in self.stations]

    def zones(self) -> np.ndarray:
        return np.array([s.zone for s in self.stations])

    def stats(self) -> dict:
        """Network statistics block (stations, edges, degree, distance, trains/edge)."""
        n, e = self.n_stations, self.n_edges
        iu = np.triu_indices(n, k=1)
        on_edge = self.adjacency[iu] > 0
        return {
            "stations": n,
            "edges": e,
            "avg_degree": float(self.adjacency.sum(axis=1).mean()) if n else 0.0,
            "avg_distance_km": float(self.distance[iu][on_edge].mean()) if e else 0.0,
            "avg_trains_per_edge": float(self.frequency[iu][on_edge].mean()) if e else 0.0,
        }


@dataclass
class SpatialWeights:
    """Edge weights: inverse distance scaled by normalized train frequency."""

    matrix: np.ndarray
    k_max: int


def _order_key(rec):
    # Stop order within a run follows the schedule; origins have no arrival.
    t = rec.sched_arr if rec.sched_arr is not None else rec.sched_dep
    return (t, rec.distance_km)


def build_graph(records, zone_map=None) -> RailGraph:
    """Build the station graph from run records.

    Records are grouped into runs by (date, train_no) and ordered by
    schedule time within a run. A run whose distance-from-source column is
    not strictly increasing in stop order is rejected (counted in the
    build report). Edge distance is the median of |dist_j - dist_i| over
    all traversals; edge frequency counts distinct train numbers.
    """
    if not records:
        raise GraphError("no records to build a graph from")
    zone_map = zone_map or {}

    runs: dict[tuple, list] = {}
    for rec in records:
        runs.setdefault((rec.date, rec.train_no), []).append(rec)

    report = GraphBuildReport(runs_total=len(runs))
    codes: set[str] = set()
    edge_dists: dict[tuple[str, str], list[float]] = {}
    edge_trains: dict[tuple[str, str], set[str]] = {}

    for (_, train_no), run in sorted(runs.items()):
        run = sorted(run, key=_order_key)
        dists = [r.distance_km for r in run]
        if any(b <= a for a, b in zip(dists, dists[1:])):
            report.runs_rejected += 1
            log.warning("rejecting run %s: distance column not strictly increasing", train_no)
            continue
        codes.update(r.station_code for r in run)
        for a, b in zip(run, run[1:]):
            key = tuple(sorted((a.station_code, b.station_code)))
            edge_dists.setdefault(key, []).append(abs(b.distance_km - a.distance_km))
            edge_trains.setdefault(key, set()).add(train_no)

    if not codes:
        raise GraphError("all runs were rejected; no stations survive")

    ordered = sorted(codes)
    index = {c: i for i, c in enumerate(ordered)}
    stations = [
        Station(code=c, name=c, zone=zone_map.get(c, UNKNOWN_ZONE), index=i)
        for i, c in enumerate(ordered)
    ]

    n = len(ordered)
    adjacency = np.zeros((n, n))
    distance = np.zeros((n, n))
    frequency = np.zeros((n, n))
    for (ca, cb), dlist in edge_dists.items():
        i, j = index[ca], index[cb]
        med = float(np.median(dlist))
        if any(abs(d - med) > DISTANCE_DISAGREEMENT_TOL * med for d in dlist):
            report.distance_disagreements += 1
            log.warning("edge %s-%s: observed distances %s disagree >10%%; keeping median %.1f",
                        ca, cb, dlist, med)
        adjacency[i, j] = adjacency[j, i] = 1.0
        distance[i, j] = distance[j, i] = med
        frequency[i, j] = frequency[j, i] = len(edge_trains[(ca, cb)])

    return RailGraph(stations, adjacency, distance, frequency, report)


def spatial_weight_matrix(graph: RailGraph, frequency_aware: bool = True) -> SpatialWeights:
    """Per-edge weight (1/d_ij) * (k_ij/k_max); zero off-edges.

    With frequency_aware=False the frequency ratio is dropped and the
    weight is plain inverse distance (the pre-modification scheme).
    """
    on_edge = graph.adjacency > 0
    if not on_edge.any():
        raise GraphError("graph has no edges; spatial weights undefined")
    if (graph.distance[on_edge] <= 0).any():
        raise GraphError("zero-distance edge found; upstream invariant violated")

    matrix = np.zeros_like(graph.distance)
    matrix[on_edge] = 1.0 / graph.distance[on_edge]
    k_max = int(graph.frequency[on_edge].max())
    if frequency_aware:
        matrix[on_edge] = matrix[on_edge] * (graph.frequency[on_edge] / k_max)
    return SpatialWeights(matrix=matrix, k_max=k_max)


def zone_subgraph(graph: RailGraph, zone: str) -> RailGraph:
    """Induced subgraph on stations tagged with `zone`, indices re-densified."""
    tags = sorted({s.zone for s in graph.stations})
    if zone not in tags:
        raise GraphError(f"zone {zone!r} not present; graph has zones {tags}")
    keep = [s.index for s in graph.stations if s.zone == zone]
    idx = np.array(keep)
    stations = [
        Station(code=graph.stations[old].code, name=graph.stations[old].name,
                zone=graph.stations[old].zone, index=new)
        for new, old in enumerate(keep)
    ]
    return RailGraph(
        stations=stations,
        adjacency=graph.adjacency[np.ix_(idx, idx)].copy(),
        distance=graph.distance[np.ix_(idx, idx)].copy(),
        frequency=graph.frequency[np.ix_(idx, idx)].copy(),
        build_report=graph.build_report,
    )


def _power_iteration_lmax(matrix: np.ndarray, max_iter: int = 200, tol: float = 1e-13) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Runs to a tight relative-change tolerance so the scaled spectrum stays
    inside [-1, 1] to well below 1e-6.
    """
    n = matrix.shape[0]
    v = np.arange(1.0, n + 1.0)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new_lam = float(v @ (matrix @ v))
        if abs(new_lam - lam) <= tol * max(abs(new_lam), 1.0):
            return new_lam
        lam = new_lam
    return lam


def scaled_laplacian(graph: RailGraph) -> np.ndarray:
    """(2/lambda_max) * L - I for the symmetric normalized Laplacian L.

    Isolated nodes get zero rows/columns in L (their degree term drops
    out), so an edgeless graph has L = 0; lambda_max is then substituted
    as 2, giving -I. Eigenvalues of the result lie in [-1, 1].
    """
    n = graph.n_stations
    deg = graph.adjacency.sum(axis=1)
    inv_sqrt = np.zeros(n)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    norm_adj = graph.adjacency * np.outer(inv_sqrt, inv_sqrt)
    lap = np.diag(nz.astype(np.float64)) - norm_adj

    lam = _power_iteration_lmax(lap)
    if lam < 1e-12:
        lam = 2.0
    return (2.0 / lam) * lap - np.eye(n)


def save_graph_json(graph: RailGraph, path) -> None:
    """Station list plus COO edge triples (i, j, distance_km, frequency)."""
    iu, ju = np.triu_indices(graph.n_stations, k=1)
    on = graph.adjacency[iu, ju] > 0
    edges = [
        [int(i), int(j), float(graph.distance[i, j]), int(graph.frequency[i, j])]
        for i, j in zip(iu[on], ju[on])
    ]
    doc = {
        "stations": [
            {"code": s.code, "name": s.name, "zone": s.zone, "index": s.index}
            for s in graph.stations
        ],
        "edges": edges,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_graph_json(path) -> RailGraph:
    with open(path) as f:
        doc = json.load(f)
    stations = [Station(**s) for s in doc["stations"]]
    n = len(stations)
    adjacency = np.zeros((n, n))
    distance = np.zeros((n, n))
    frequency = np.zeros((n, n))
    for i, j, d, k in doc["edges"]:
        adjacency[i, j] = adjacency[j, i] = 1.0
        distance[i, j] = distance[j, i] = d
        frequency[i, j] = frequency[j, i] = k
    return RailGraph(stations, adjacency, distance, frequency)


def load_zone_map(path) -> dict[str, str]:
    """Two-column CSV (station_code, zone); header row optional."""
    import csv

    zone_map = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].strip().lower() == "station_code":
                continue
            code, zone = row[0].strip(), row[1].strip()
            if zone not in ZONE_CODES and zone != UNKNOWN_ZONE:
                raise GraphError(f"unknown zone {zone!r} for {code}; valid: {ZONE_CODES}")
            zone_map[code] = zone
    return zone_map
