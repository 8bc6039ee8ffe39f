"""Time-stepping for the pairwise, random-batch, and ensemble systems.

Schemes
-------
``full``
    Every substep evaluates the complete pairwise drift,
    row i = drift(x_i) + (1/(n-1)) sum_{j != i} kernel(x_i - x_j).
``rbm``
    One fresh uniform division per outer step of length tau; within the
    step, row i = drift(x_i) + (1/(p-1)) sum over i's batchmates.
``meanfield-ensemble``
    The full drift run on a large self-interacting ensemble (n plays the
    role of the ensemble size M), using a model's exact O(n) pair-sum
    when it has one.

Noise and divisions come from counter-based streams keyed by
(seed, replica, kind, step); the substep index selects a slice of the
step's noise block, so the draw for any (replica, step, substep) is
independent of chunking and thread count.  That makes `simulate` output
bitwise-reproducible regardless of RBMLAB_THREADS.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import sqrt
from typing import Callable, Optional

import numpy as np

from .batching import BatchDivision, sample_division
from .errors import DivergenceError, ValidationError
from .models import Model
from .rng import stream

SCHEMES = ("full", "rbm", "meanfield-ensemble")

# Replicas per worker chunk.  Fixed constant (never derived from the thread
# count) so that stream consumption is independent of parallelism.
_CHUNK = 1024


@dataclass(frozen=True)
class ParticleState:
    """Coordinates of one system at one time."""

    coords: np.ndarray  # (n, d)
    step: int = 0
    time: float = 0.0

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2:
            raise ValidationError(f"coords must be (n, d), got shape {coords.shape}")
        if not np.isfinite(coords).all():
            raise ValidationError("coords must be finite")
        object.__setattr__(self, "coords", coords)


@dataclass(frozen=True)
class SimConfig:
    scheme: str
    n: int
    tau: float
    t_end: float
    p: Optional[int] = None
    substeps: int = 1
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.t_end < 0:
            raise ValidationError("t_end must be >= 0")
        if self.substeps < 1:
            raise ValidationError("substeps must be >= 1")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if self.scheme == "rbm":
            if self.p is None:
                raise ValidationError("scheme=rbm requires p")
            if not (2 <= self.p <= self.n):
                raise ValidationError(f"need 2 <= p <= n, got p={self.p}, n={self.n}")
            if self.n % self.p != 0:
                raise ValidationError(f"p={self.p} does not divide n={self.n}")
        # The step grid must land on t_end (within one step of rounding).
        steps = int(round(self.t_end / self.tau))
        if abs(steps * self.tau - self.t_end) > self.tau * (1 + 1e-12):
            raise ValidationError(
                f"t_end={self.t_end} is not within one step of a multiple of tau={self.tau}"
            )

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.tau))


def _coords_of(state) -> np.ndarray:
    if isinstance(state, ParticleState):
        return state.coords
    return np.asarray(state, dtype=float)


def full_drift(model: Model, state, row_chunk: Optional[int] = None) -> np.ndarray:
    """Complete pairwise drift; direct O(n^2 d) summation.

    Accepts a ParticleState or an array of shape (..., n, d); leading axes
    are treated as independent systems.  Rows are processed in chunks to
    bound the (chunk x n x d) difference buffer.
    """
    coords = _coords_of(state)
    n, d = coords.shape[-2], coords.shape[-1]
    if n < 2:
        raise ValidationError("pairwise drift needs n >= 2")
    flat = coords.reshape(-1, n, d)
    b = flat.shape[0]
    if row_chunk is None:
        row_chunk = max(1, min(n, int(4_000_000 // max(b * n * d, 1))))
    k0 = model.kernel(np.zeros(d))  # self-difference term, removed below
    out = np.array(model.drift(flat), dtype=float, copy=True)
    for lo in range(0, n, row_chunk):
        hi = min(n, lo + row_chunk)
        diff = flat[:, lo:hi, None, :] - flat[:, None, :, :]
        out[:, lo:hi, :] += (model.kernel(diff).sum(axis=2) - k0) / (n - 1)
    return out.reshape(coords.shape)


def _blocked_interaction(model: Model, coords: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Within-block pairwise kernel sums.

    coords: (b, n, d); blocks: (b, n/p, p) with each row of the flattened
    (b, n) index array a permutation of range(n).  Returns (b, n, d) with
    entry i = sum over i's block of kernel(x_i - x_l), self term removed.
    """
    b, n, d = coords.shape
    p = blocks.shape[-1]
    idx = blocks.reshape(b, n)
    xb = np.take_along_axis(coords, idx[:, :, None], axis=1).reshape(b, -1, p, d)
    diff = xb[:, :, :, None, :] - xb[:, :, None, :, :]
    ker = model.kernel(diff).sum(axis=3) - model.kernel(np.zeros(d))
    out = np.empty_like(coords)
    np.put_along_axis(out, np.broadcast_to(idx[:, :, None], coords.shape), ker.reshape(b, n, d), axis=1)
    return out


def rbm_drift(model: Model, state, division: BatchDivision) -> np.ndarray:
    """Random-batch drift for one division; O(n p d).

    Row i = drift(x_i) + (1/(p-1)) sum_{l in block(i), l != i} kernel(x_i - x_l).
    Accepts a ParticleState or an array (..., n, d); the same division is
    applied across leading axes.
    """
    coords = _coords_of(state)
    n, d = coords.shape[-2], coords.shape[-1]
    if division.n != n:
        raise ValidationError(f"division is for n={division.n}, state has n={n}")
    p = division.p  # BatchDivision guarantees p >= 2
    flat = coords.reshape(-1, n, d)
    blocks = np.broadcast_to(division.block_array(), (flat.shape[0],) + (n // p, p))
    inter = _blocked_interaction(model, flat, blocks)
    out = model.drift(flat) + inter / (p - 1)
    return out.reshape(coords.shape)


def em_step(
    state: ParticleState,
    drift: np.ndarray,
    sigma: float,
    dt: float,
    noise_stream: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> ParticleState:
    """One Euler-Maruyama step: x' = x + drift*dt + sqrt(2*sigma*dt)*G.

    G is standard normal, drawn from noise_stream unless an explicit
    noise array (test hook) is supplied.
    """
    if dt <= 0:
        raise ValidationError("dt must be > 0")
    if noise is None:
        if noise_stream is None:
            raise ValidationError("need noise_stream or an explicit noise array")
        noise = noise_stream.standard_normal(state.coords.shape)
    coords = state.coords + drift * dt + sqrt(2.0 * sigma * dt) * np.asarray(noise)
    if not np.isfinite(coords).all():
        raise DivergenceError(f"non-finite coordinates after step {state.step}")
    return ParticleState(coords=coords, step=state.step + 1, time=state.time + dt)


@dataclass
class SimResult:
    """Checkpointed output of `simulate` (checkpoints at every outer step)."""

    config: SimConfig
    times: np.ndarray  # (steps+1,)
    final: np.ndarray  # (replicas, n, d)
    trajectory: Optional[np.ndarray] = None  # (replicas, steps+1, n, d)
    # q -> per-checkpoint estimates of E|X|^q (mean over replicas/particles)
    moments: dict = field(default_factory=dict)
    moment_stderr: dict = field(default_factory=dict)


def default_noise(seed: int, replica: int, step: int, substeps: int, n: int, d: int) -> np.ndarray:
    """The (substeps, n, d) standard-normal block for one replica-step."""
    return stream(seed, replica, "noise", step).standard_normal((substeps, n, d))


def default_init(seed: int, replica: int, model: Model, n: int) -> np.ndarray:
    """The (n, d) initial sample for one replica."""
    return model.init.sample(n, model.dim, stream(seed, replica, "init"))


def default_division(seed: int, replica: int, step: int, n: int, p: int) -> BatchDivision:
    return sample_division(n, p, stream(seed, replica, "division", step))


def _thread_count() -> int:
    raw = os.environ.get("RBMLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"RBMLAB_THREADS must be an integer, got {raw!r}") from None


def _scheme_stepper(model: Model, config: SimConfig) -> Callable:
    """Returns f(coords (b,n,d), blocks or None) -> drift (b,n,d)."""
    n = config.n
    if config.scheme == "rbm":
        p = config.p

        def stepper(coords, blocks):
            inter = _blocked_interaction(model, coords, blocks)
            return model.drift(coords) + inter / (p - 1)

        return stepper
    if config.scheme == "meanfield-ensemble" and model.kernel_pair_sum is not None and n >= 2:

        def stepper(coords, blocks):
            return model.drift(coords) + model.kernel_pair_sum(coords) / (n - 1)

        return stepper
    if n == 1:
        # Degenerate single-particle ensemble: no interaction term.
        return lambda coords, blocks: model.drift(coords)
    return lambda coords, blocks: full_drift(model, coords)


def _run_chunk(model, config, r_lo, r_hi, record, moment_orders, noise_fn, init_fn, division_fn):
    n, d = config.n, model.dim
    steps, substeps = config.steps, config.substeps
    dt = config.tau / substeps
    amp = sqrt(2.0 * model.sigma * dt)
    stepper = _scheme_stepper(model, config)
    b = r_hi - r_lo

    coords = np.stack([init_fn(config.seed, r, model, n) for r in range(r_lo, r_hi)])
    out = {}
    if record == "trajectory":
        traj = np.empty((b, steps + 1, n, d))
        traj[:, 0] = coords
    if record == "moments":
        # per-replica mean and particle-level variance of |x|^q per checkpoint
        mom = {q: np.empty((b, steps + 1, 2)) for q in moment_orders}

    def checkpoint(k):
        if record == "trajectory":
            traj[:, k] = coords
        if record == "moments":
            radial = np.sqrt(np.sum(coords * coords, axis=-1))
            for q in moment_orders:
                vals = radial**q
                mom[q][:, k, 0] = vals.mean(axis=1)
                mom[q][:, k, 1] = vals.var(axis=1)

    checkpoint(0)
    for step in range(steps):
        blocks = None
        if config.scheme == "rbm":
            blocks = np.stack(
                [
                    division_fn(config.seed, r, step, n, config.p).block_array()
                    for r in range(r_lo, r_hi)
                ]
            )
        noise = np.stack(
            [noise_fn(config.seed, r, step, substeps, n, d) for r in range(r_lo, r_hi)]
        )
        for s in range(substeps):
            coords = coords + dt * stepper(coords, blocks) + amp * noise[:, s]
        if not np.isfinite(coords).all():
            raise DivergenceError(f"non-finite coordinates after step {step + 1}")
        checkpoint(step + 1)

    out["final"] = coords
    if record == "trajectory":
        out["trajectory"] = traj
    if record == "moments":
        out["moments"] = mom
    return out


def simulate(
    config: SimConfig,
    model: Model,
    record: str = "final",
    moment_orders: tuple = (2, 4, 8),
    noise_fn: Callable = default_noise,
    init_fn: Callable = default_init,
    division_fn: Callable = default_division,
) -> SimResult:
    """Run all replicas of one scheme.

    record: "final" (default) keeps only the last coordinates,
    "trajectory" keeps every outer-step checkpoint, "moments" keeps
    per-checkpoint estimates of E|X|^q for q in moment_orders.

    The *_fn hooks default to the keyed-stream draws documented above and
    exist so tests can inject or permute noise/divisions/initial data.
    """
    if record not in ("final", "trajectory", "moments"):
        raise ValidationError(f"unknown record mode {record!r}")
    if model.dim < 1:
        raise ValidationError("model dim must be >= 1")
    steps = config.steps
    times = np.arange(steps + 1) * config.tau

    spans = [(lo, min(lo + _CHUNK, config.replicas)) for lo in range(0, config.replicas, _CHUNK)]
    args = (model, config)
    kwargs = dict(
        record=record,
        moment_orders=moment_orders,
        noise_fn=noise_fn,
        init_fn=init_fn,
        division_fn=division_fn,
    )
    threads = _thread_count()
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda s: _run_chunk(*args, *s, **kwargs), spans))
    else:
        chunks = [_run_chunk(*args, lo, hi, **kwargs) for lo, hi in spans]

    result = SimResult(
        config=config,
        times=times,
        final=np.concatenate([c["final"] for c in chunks]),
    )
    if record == "trajectory":
        result.trajectory = np.concatenate([c["trajectory"] for c in chunks])
    if record == "moments":
        for q in moment_orders:
            per_rep = np.concatenate([c["moments"][q] for c in chunks])  # (R, steps+1, 2)
            means = per_rep[:, :, 0]
            result.moments[q] = means.mean(axis=0)
            if config.replicas > 1:
                result.moment_stderr[q] = means.std(axis=0, ddof=1) / sqrt(config.replicas)
            else:
                # Single replica: treat particles as the sampling units.
                result.moment_stderr[q] = np.sqrt(per_rep[0, :, 1] / config.n)
    return result


@dataclass
class CoupledResult:
    """Synchronously coupled full/rbm runs sharing initial data and noise."""

    config: SimConfig
    times: np.ndarray
    gap: np.ndarray  # (steps+1,) mean over replicas/particles of |X_rbm - X_full|
    gap_stderr: np.ndarray
    final_full: np.ndarray
    final_rbm: np.ndarray


def coupled_simulate(
    config: SimConfig,
    model: Model,
    noise_fn: Callable = default_noise,
    init_fn: Callable = default_init,
    division_fn: Callable = default_division,
) -> CoupledResult:
    """Run the full and random-batch schemes on shared streams.

    Both systems see identical initial samples and Brownian increments;
    the division stream drives only the batch scheme.  Reports the
    per-checkpoint mean absolute deviation (Euclidean norm per particle,
    averaged over particles, then replicas).
    """
    if config.p is None:
        raise ValidationError("coupled_simulate requires p")
    cfg = SimConfig(
        scheme="rbm",
        n=config.n,
        p=config.p,
        tau=config.tau,
        substeps=config.substeps,
        t_end=config.t_end,
        seed=config.seed,
        replicas=config.replicas,
    )
    n, d = cfg.n, model.dim
    steps, substeps = cfg.steps, cfg.substeps
    dt = cfg.tau / substeps
    amp = sqrt(2.0 * model.sigma * dt)
    p = cfg.p

    gaps = np.empty((cfg.replicas, steps + 1))
    finals_full = np.empty((cfg.replicas, n, d))
    finals_rbm = np.empty((cfg.replicas, n, d))

    def run_span(span):
        lo, hi = span
        coords_full = np.stack([init_fn(cfg.seed, r, model, n) for r in range(lo, hi)])
        coords_rbm = coords_full.copy()

        def gap_row(k):
            dev = np.linalg.norm(coords_rbm - coords_full, axis=-1)  # (b, n)
            gaps[lo:hi, k] = dev.mean(axis=1)

        gap_row(0)
        for step in range(steps):
            blocks = np.stack(
                [division_fn(cfg.seed, r, step, n, p).block_array() for r in range(lo, hi)]
            )
            noise = np.stack(
                [noise_fn(cfg.seed, r, step, substeps, n, d) for r in range(lo, hi)]
            )
            for s in range(substeps):
                inc = amp * noise[:, s]
                coords_full = coords_full + dt * full_drift(model, coords_full) + inc
                inter = _blocked_interaction(model, coords_rbm, blocks)
                coords_rbm = coords_rbm + dt * (model.drift(coords_rbm) + inter / (p - 1)) + inc
            if not (np.isfinite(coords_full).all() and np.isfinite(coords_rbm).all()):
                raise DivergenceError(f"non-finite coordinates after step {step + 1}")
            gap_row(step + 1)
        finals_full[lo:hi] = coords_full
        finals_rbm[lo:hi] = coords_rbm

    spans = [(lo, min(lo + _CHUNK, cfg.replicas)) for lo in range(0, cfg.replicas, _CHUNK)]
    threads = _thread_count()
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_span, spans))
    else:
        for span in spans:
            run_span(span)

    stderr = (
        gaps.std(axis=0, ddof=1) / sqrt(cfg.replicas)
        if cfg.replicas > 1
        else np.zeros(steps + 1)
    )
    return CoupledResult(
        config=cfg,
        times=np.arange(steps + 1) * cfg.tau,
        gap=gaps.mean(axis=0),
        gap_stderr=stderr,
        final_full=finals_full,
        final_rbm=finals_rbm,
    )


def _open_text_sink(path_or_file):
    if hasattr(path_or_file, "write"):
        from contextlib import nullcontext

        return nullcontext(path_or_file)
    return open(path_or_file, "w", encoding="utf-8", newline="\n")


def write_trajectory_csv(result: SimResult, path) -> None:
    """CSV: replica, step, time, particle, dim0..dim{d-1}; one row per
    (replica, checkpoint, particle).  Accepts a path or a file object."""
    if result.trajectory is None:
        raise ValidationError("result has no trajectory; run simulate(record='trajectory')")
    reps, nck, n, d = result.trajectory.shape
    header = "replica,step,time,particle," + ",".join(f"dim{j}" for j in range(d))
    with _open_text_sink(path) as fh:
        fh.write(header + "\n")
        for r in range(reps):
            for k in range(nck):
                t = result.times[k]
                for i in range(n):
                    row = result.trajectory[r, k, i]
                    fh.write(
                        f"{r},{k},{t:.17g},{i}," + ",".join(f"{x:.17g}" for x in row) + "\n"
                    )


def write_summary_csv(result: SimResult, path) -> None:
    """CSV: step, time, stat, value, stderr; one row per checkpoint and stat.
    Accepts a path or a file object."""
    with _open_text_sink(path) as fh:
        fh.write("step,time,stat,value,stderr\n")
        for q in sorted(result.moments):
            vals = result.moments[q]
            errs = result.moment_stderr[q]
            for k, t in enumerate(result.times):
                fh.write(
                    f"{k},{t:.17g},abs_moment_q{q:g},{vals[k]:.17g},{errs[k]:.17g}\n"
                )
