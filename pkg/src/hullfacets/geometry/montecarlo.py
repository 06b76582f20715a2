import concurrent.futures
import itertools
import math
import threading
import sys
from typing import Any, Callable, Generator, TypeVar

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import click
import numpy as np
from scipy.spatial.distance import pdist

from hullfacets.geometry.distributions import RadialModel
from hullfacets.geometry.errors import DegenerateInput, InvalidArgs

KERNEL_TAGS = ("G", "K", "H", "F0")
RESAMPLE_ATTEMPTS = 10
COMBINATION_CHUNK = 20000
TIE_TOLERANCE = 1e-9
DUPLICATE_TOLERANCE = 1e-12

T = TypeVar("T")


class PointCloud:
    def __init__(self, coords: np.ndarray, seed: int | None = None):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] < 2:
            raise InvalidArgs("Point cloud must be an N x d array with d >= 2")
        self._coords = coords
        self._seed = seed
        self._scale = float(np.max(np.abs(coords))) if coords.size else 0.0

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @property
    def n(self) -> int:
        return int(self._coords.shape[0])

    @property
    def d(self) -> int:
        return int(self._coords.shape[1])

    @property
    def seed(self) -> int | None:
        return self._seed

    @property
    def scale(self) -> float:
        return self._scale

    @property
    def tolerance(self) -> float:
        return TIE_TOLERANCE * self._scale

    def check_distinct(self) -> None:
        if self.n > 1 and float(np.min(pdist(self._coords))) <= DUPLICATE_TOLERANCE * max(self._scale, 1.0):
            raise DegenerateInput("Point cloud contains coincident points")

    def __len__(self) -> int:
        return self.n


class Hull:
    """Facets of a simplicial hull: vertex indices, outward unit normals and offsets."""

    def __init__(self, indices: np.ndarray, normals: np.ndarray, offsets: np.ndarray, tolerance: float):
        self._indices = indices
        self._normals = normals
        self._offsets = offsets
        self._tolerance = tolerance

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def normals(self) -> np.ndarray:
        return self._normals

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    @property
    def tolerance(self) -> float:
        return self._tolerance

    def __len__(self) -> int:
        return int(self._indices.shape[0])


def _combination_chunks(n: int, d: int, chunk: int = COMBINATION_CHUNK) -> Generator[np.ndarray, None, None]:
    combos = itertools.combinations(range(n), d)
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            return
        yield block.reshape(-1, d)


def hyperplane_normals(simplices: np.ndarray) -> np.ndarray:
    """Unit normals of the hyperplanes through each row of d points (shape C x d x d)."""
    diffs = simplices[:, 1:, :] - simplices[:, :1, :]
    d = simplices.shape[2]
    if d == 2:
        normals = np.stack([-diffs[:, 0, 1], diffs[:, 0, 0]], axis=1)
    elif d == 3:
        normals = np.cross(diffs[:, 0, :], diffs[:, 1, :])
    else:
        # null space of the difference matrix
        _, _, vh = np.linalg.svd(diffs, full_matrices=True)
        normals = vh[:, -1, :]
    norms = np.linalg.norm(normals, axis=1)
    if np.any(norms <= np.finfo(float).tiny):
        raise DegenerateInput("Affinely dependent points among facet candidates")
    return normals / norms[:, None]


def hull_facets(cloud: PointCloud) -> Hull:
    """Enumerate all d-subsets and keep those whose hyperplane leaves the rest strictly on one side."""
    n, d = cloud.n, cloud.d
    if n < d + 1:
        raise InvalidArgs("Hull needs N >= d + 1, got N={n} with d={d}".format(n=n, d=d))
    coords = cloud.coords
    tau = cloud.tolerance
    kept_indices: list[np.ndarray] = []
    kept_normals: list[np.ndarray] = []
    kept_offsets: list[np.ndarray] = []
    for combos in _combination_chunks(n, d):
        simplices = coords[combos]
        normals = hyperplane_normals(simplices)
        offsets = np.einsum("ij,ij->i", normals, simplices[:, 0, :])
        signed = normals @ coords.T - offsets[:, None]
        signed[np.arange(len(combos))[:, None], combos] = 0.0
        ties = np.count_nonzero(np.abs(signed) <= tau, axis=1) - d
        above = np.count_nonzero(signed > tau, axis=1)
        below = np.count_nonzero(signed < -tau, axis=1)
        one_sided = (above == 0) | (below == 0)
        if np.any(one_sided & (ties > 0)):
            raise DegenerateInput("Points within tolerance of a supporting hyperplane")
        flip = np.where(above[one_sided] > 0, -1.0, 1.0)
        kept_indices.append(combos[one_sided])
        kept_normals.append(normals[one_sided] * flip[:, None])
        kept_offsets.append(offsets[one_sided] * flip)
    return Hull(
        indices=np.concatenate(kept_indices),
        normals=np.concatenate(kept_normals),
        offsets=np.concatenate(kept_offsets),
        tolerance=tau,
    )


def facet_count(cloud: PointCloud) -> int:
    return len(hull_facets(cloud))


def hull_vertices(hull: Hull) -> np.ndarray:
    return np.unique(hull.indices)


def contains(hull: Hull, point: np.ndarray) -> bool:
    """Weakly inside every facet half-space."""
    return bool(np.all(hull.normals @ np.asarray(point, dtype=float) - hull.offsets <= hull.tolerance))


def facet_count_2d(cloud: PointCloud) -> int:
    """Monotone-chain hull of a planar cloud; returns the number of hull vertices."""
    if cloud.d != 2 or cloud.n < 3:
        raise InvalidArgs("Planar hull needs d = 2 and N >= 3")
    points = cloud.coords
    order = np.lexsort((points[:, 1], points[:, 0]))

    def cross(o: int, a: int, b: int) -> float:
        return float(
            (points[a, 0] - points[o, 0]) * (points[b, 1] - points[o, 1])
            - (points[a, 1] - points[o, 1]) * (points[b, 0] - points[o, 0])
        )

    def chain(indices: Any) -> list[int]:
        hull: list[int] = []
        for i in indices:
            while len(hull) >= 2 and cross(hull[-2], hull[-1], int(i)) <= 0:
                hull.pop()
            hull.append(int(i))
        return hull

    lower = chain(order)
    upper = chain(order[::-1])
    vertices = lower[:-1] + upper[:-1]
    if len(vertices) < 3:
        raise DegenerateInput("Planar cloud is collinear")
    tau = cloud.tolerance
    for a, b in zip(vertices, vertices[1:] + vertices[:1]):
        edge = points[b] - points[a]
        length = float(np.hypot(edge[0], edge[1]))
        rel = points - points[a]
        distance = np.abs(edge[0] * rel[:, 1] - edge[1] * rel[:, 0]) / length
        along = (rel @ edge) / (length * length)
        on_edge = (distance <= tau) & (along > 0) & (along < 1)
        on_edge[[a, b]] = False
        if np.any(on_edge):
            raise DegenerateInput("Point lies on a hull edge")
    return len(vertices)


class ReplicateStats:
    def __init__(self) -> None:
        self._total: int = 0
        self._processed: int = 0
        self._errors: int = 0

    def initialize(self, total: int = 0) -> None:
        self._total = total
        self._processed = 0
        self._errors = 0

    def add_processed(self, error: bool = False) -> None:
        self._processed += 1
        self._total = max(self._total, self._processed)
        if error:
            self._errors += 1

    @property
    def total(self) -> int:
        return self._total

    @property
    def processed(self) -> int:
        return self._processed

    @property
    def errors(self) -> int:
        return self._errors

    def combine(self, other: Self) -> Self:
        self._total += other.total
        self._processed += other.processed
        self._errors += other.errors
        return self


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Stream determined by (seed, replicate index) only."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


class ReplicateRunner:
    """Runs independent replicates on a thread pool with per-replicate RNG streams."""

    def __init__(self, max_workers: int | None = None, quiet: bool = True, progress_lines: int = 20):
        self._max_workers = max_workers
        self._quiet = quiet
        self._progress_lines = progress_lines
        self._stats = ReplicateStats()
        self._lock = threading.Lock()
        self._stop_event = threading.Event()

    @property
    def stats(self) -> ReplicateStats:
        return self._stats

    def _print_progress_msg(self, msg: str, error: bool = False) -> None:
        total = self._stats.total
        every = max(total // self._progress_lines, 1)
        if self._quiet or not (error or self._stats.processed % every == 0 or self._stats.processed == total):
            return
        percent = self._stats.processed / total * 100 if total > 0 else 0.0
        item_padded = "{{:{width}d}}".format(width=len(str(total))).format(self._stats.processed)
        click.secho(
            "[{emoji} {done}/{total} {percent:6.2f}%] {msg}".format(
                emoji="✓" if not error else "✗",
                done=item_padded,
                total=total,
                percent=percent,
                msg=msg,
            ),
            fg="red" if error else None,
            err=True,
        )

    def run_replicate(
        self, task: Callable[[np.random.Generator], T], seed: int, index: int, results: list[Any]
    ) -> None:
        msg = "[OK] Replicate {index} done".format(index=index)
        error = False
        try:
            if self._stop_event.is_set():
                raise KeyboardInterrupt
            results[index] = task(replicate_rng(seed, index))
        except KeyboardInterrupt:
            msg = "[ERROR] Stop signal received. Graceful shutdown."
            error = True
        except Exception as e:
            results[index] = e
            msg = "[ERROR] Replicate {index} failed: {error}".format(index=index, error=e)
            error = True
        finally:
            with self._lock:
                self._stats.add_processed(error=error)
                self._print_progress_msg(msg, error=error)

    def run(self, task: Callable[[np.random.Generator], T], replicates: int, seed: int) -> list[T]:
        self._stats.initialize(total=replicates)
        results: list[Any] = [None] * replicates
        try:
            with concurrent.futures.ThreadPoolExecutor(max_workers=self._max_workers) as executor:
                for index in range(replicates):
                    executor.submit(self.run_replicate, task=task, seed=seed, index=index, results=results)
        except KeyboardInterrupt as e:
            self._stop_event.set()
            executor.shutdown(wait=True, cancel_futures=True)
            raise e
        for result in results:
            if isinstance(result, Exception):
                raise result
        return results


def with_resampling(sample: Callable[[np.random.Generator], T], rng: np.random.Generator) -> T:
    """Draw until the sampled cloud is in general position, at most RESAMPLE_ATTEMPTS times."""
    for _ in range(RESAMPLE_ATTEMPTS):
        try:
            return sample(rng)
        except DegenerateInput:
            continue
    raise DegenerateInput("Cloud stayed degenerate after {n} resamples".format(n=RESAMPLE_ATTEMPTS))


class FacetEstimate:
    def __init__(
        self,
        counts: list[int],
        vertices: list[int],
        n: int,
        d: int,
        model_id: str,
        seed: int,
    ):
        self._counts = list(counts)
        self._vertices = list(vertices)
        self._n = n
        self._d = d
        self._model_id = model_id
        self._seed = seed

    @property
    def per_replicate_counts(self) -> list[int]:
        return list(self._counts)

    @property
    def per_replicate_vertices(self) -> list[int]:
        return list(self._vertices)

    @property
    def replicates(self) -> int:
        return len(self._counts)

    @property
    def mean(self) -> float:
        return float(np.mean(self._counts))

    @property
    def std_error(self) -> float:
        return _std_error(self._counts)

    @property
    def vertex_mean(self) -> float:
        return float(np.mean(self._vertices))

    @property
    def vertex_std_error(self) -> float:
        return _std_error(self._vertices)

    @property
    def n(self) -> int:
        return self._n

    @property
    def d(self) -> int:
        return self._d

    @property
    def model_id(self) -> str:
        return self._model_id

    @property
    def seed(self) -> int:
        return self._seed

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, type(self)):
            return NotImplemented
        return (self._counts, self._vertices, self._n, self._d, self._model_id, self._seed) == (
            other._counts,
            other._vertices,
            other._n,
            other._d,
            other._model_id,
            other._seed,
        )


def _std_error(values: list[int] | list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


class MembershipEstimate:
    def __init__(self, outside: list[bool], vertex_ratios: list[float]):
        self._outside = outside
        self._vertex_ratios = vertex_ratios

    @property
    def trials(self) -> int:
        return len(self._outside)

    @property
    def p_hat(self) -> float:
        return float(np.mean(self._outside))

    @property
    def std_error(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1.0 - p) / self.trials)

    @property
    def vertex_ratio(self) -> float:
        """Estimate of E[V_{N+1}] / (N + 1)."""
        return float(np.mean(self._vertex_ratios))

    @property
    def vertex_ratio_std_error(self) -> float:
        return _std_error(self._vertex_ratios)


class KernelEstimate:
    def __init__(self, x: float, value: float, std_error: float):
        self._x = x
        self._value = value
        self._std_error = std_error

    @property
    def x(self) -> float:
        return self._x

    @property
    def value(self) -> float:
        return self._value

    @property
    def std_error(self) -> float:
        return self._std_error


def _check_model(model: RadialModel, n: int, d: int) -> None:
    if model.dim != d:
        raise InvalidArgs("Model lives in d={dim}, asked for d={d}".format(dim=model.dim, d=d))
    if n < d + 1:
        raise InvalidArgs("Need N >= d + 1, got N={n} with d={d}".format(n=n, d=d))


def sample_cloud(model: RadialModel, n: int, rng: np.random.Generator) -> PointCloud:
    cloud = PointCloud(model.sample_points(rng, n))
    cloud.check_distinct()
    return cloud


def estimate_expected_facets(
    model: RadialModel,
    n: int,
    d: int,
    replicates: int,
    seed: int,
    parallelism: int | None = None,
    quiet: bool = True,
) -> FacetEstimate:
    _check_model(model, n, d)
    if replicates < 2:
        raise InvalidArgs("Need at least 2 replicates")

    def replicate(rng: np.random.Generator) -> tuple[int, int]:
        def draw(stream: np.random.Generator) -> tuple[int, int]:
            hull = hull_facets(sample_cloud(model, n, stream))
            return len(hull), len(hull_vertices(hull))

        return with_resampling(draw, rng)

    results = ReplicateRunner(max_workers=parallelism, quiet=quiet).run(replicate, replicates, seed)
    return FacetEstimate(
        counts=[facets for facets, _ in results],
        vertices=[vertices for _, vertices in results],
        n=n,
        d=d,
        model_id=model.model_id,
        seed=seed,
    )


def estimate_outside_probability(
    model: RadialModel,
    n: int,
    d: int,
    trials: int,
    seed: int,
    parallelism: int | None = None,
    quiet: bool = True,
) -> MembershipEstimate:
    """p_{N,d} by direct membership tests, alongside the vertex-count estimate E[V_{N+1}] / (N + 1)."""
    _check_model(model, n, d)
    if trials < 2:
        raise InvalidArgs("Need at least 2 trials")

    def trial(rng: np.random.Generator) -> tuple[bool, float]:
        def draw(stream: np.random.Generator) -> tuple[bool, float]:
            cloud = sample_cloud(model, n + 1, stream)
            hull = hull_facets(PointCloud(cloud.coords[:n]))
            extended = hull_facets(cloud)
            return not contains(hull, cloud.coords[n]), len(hull_vertices(extended)) / (n + 1)

        return with_resampling(draw, rng)

    results = ReplicateRunner(max_workers=parallelism, quiet=quiet).run(trial, trials, seed)
    return MembershipEstimate(
        outside=[outside for outside, _ in results],
        vertex_ratios=[ratio for _, ratio in results],
    )


def _line_distances(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    direction = second - first
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    along = np.einsum("ij,ij->i", first, direction)
    return np.linalg.norm(first - along[:, None] * direction, axis=1)


def empirical_kernel(
    model: RadialModel,
    d: int,
    kernel_tag: str,
    x_grid: list[float],
    samples: int,
    seed: int,
) -> list[KernelEstimate]:
    """Empirical survival of the kernel statistic at each grid point, with binomial standard errors."""
    if model.dim != d:
        raise InvalidArgs("Model lives in d={dim}, asked for d={d}".format(dim=model.dim, d=d))
    if kernel_tag not in KERNEL_TAGS:
        raise InvalidArgs("Unknown kernel {tag}; expected one of {tags}".format(tag=kernel_tag, tags=", ".join(KERNEL_TAGS)))
    if samples < 10000:
        raise InvalidArgs("Need at least 10000 samples, got {samples}".format(samples=samples))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if kernel_tag == "G":
        statistic = model.sample_points(rng, samples)[:, 0]
    elif kernel_tag == "K":
        statistic = np.linalg.norm(model.sample_points(rng, samples)[:, :2], axis=1)
    elif kernel_tag == "H":
        simplices = model.sample_points(rng, samples * d).reshape(samples, d, d)
        normals = hyperplane_normals(simplices)
        statistic = np.abs(np.einsum("ij,ij->i", normals, simplices[:, 0, :]))
    else:
        pairs = model.sample_points(rng, 2 * samples).reshape(samples, 2, d)
        statistic = _line_distances(pairs[:, 0, :], pairs[:, 1, :])
    estimates = []
    for x in x_grid:
        value = float(np.mean(statistic >= x))
        estimates.append(KernelEstimate(x, value, math.sqrt(value * (1.0 - value) / samples)))
    return estimates
