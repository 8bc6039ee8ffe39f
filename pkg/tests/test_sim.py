import numpy as np
import pytest

from rbmlab import (
    BatchDivision,
    DivergenceError,
    InitialLaw,
    LinearParams,
    ModelSpec,
    ParticleState,
    SimConfig,
    ValidationError,
    build_model,
    coupled_simulate,
    default_division,
    default_noise,
    em_step,
    enumerate_divisions,
    full_cov_linear,
    full_drift,
    rbm_cov_linear,
    rbm_drift,
    simulate,
    stream,
    write_summary_csv,
    write_trajectory_csv,
)
from conftest import make_model


def naive_full_drift(model, coords):
    # textbook O(n^2) double loop, the independent reference
    n = coords.shape[0]
    out = np.zeros_like(coords)
    for i in range(n):
        out[i] = model.drift(coords[i][None, :])[0]
        for j in range(n):
            if j != i:
                out[i] += model.kernel(coords[i] - coords[j]) / (n - 1)
    return out


def test_full_drift_hand_example(linear_model):
    # a=1, kappa=0.5, x = (1, -1): rows are -x_i - 0.5 (x_i - x_j)
    got = full_drift(linear_model, np.array([[1.0], [-1.0]]))
    assert np.allclose(got, [[-2.0], [2.0]], atol=1e-15)


@pytest.mark.parametrize("family,kw", [("linear", {"a": 1.0, "kappa": 0.5}), ("sine", {"a": 0.8})])
@pytest.mark.parametrize("n", [2, 5, 8])
def test_full_drift_matches_double_loop(family, kw, n):
    model = make_model(family, **kw)
    coords = stream(3, "drift-ref", family, n).normal(size=(n, 1))
    assert np.abs(full_drift(model, coords) - naive_full_drift(model, coords)).max() < 1e-13


def test_full_drift_multidim_and_batched():
    model = make_model("linear", dim=3, a=0.5, kappa=1.0)
    coords = stream(4, "drift-batch").normal(size=(2, 5, 6, 3))
    got = full_drift(model, coords)
    assert got.shape == coords.shape
    for a in range(2):
        for b in range(5):
            assert np.allclose(got[a, b], naive_full_drift(model, coords[a, b]), atol=1e-13)


def test_full_drift_row_chunking_consistent(linear_model):
    coords = stream(5, "drift-chunk").normal(size=(7, 1))
    base = full_drift(linear_model, coords)
    for chunk in (1, 2, 3, 7):
        assert np.array_equal(full_drift(linear_model, coords, row_chunk=chunk), base)


def test_rbm_drift_hand_example(linear_model):
    division = BatchDivision.from_blocks([(0, 1), (2, 3)])
    x = np.array([[0.0], [1.0], [2.0], [4.0]])
    got = rbm_drift(linear_model, x, division)
    assert np.allclose(got, [[0.5], [-1.5], [-1.0], [-5.0]], atol=1e-15)


@pytest.mark.parametrize("family,kw", [("linear", {"a": 1.0, "kappa": 0.5}), ("sine", {"a": 1.0})])
@pytest.mark.parametrize("n,p", [(4, 2), (6, 2), (6, 3)])
def test_rbm_drift_division_average_is_full_drift(family, kw, n, p):
    # averaging the batch drift over every division recovers the complete sum
    model = make_model(family, **kw)
    coords = stream(6, "unbiased", family, n, p).normal(size=(n, 1))
    acc = np.zeros_like(coords)
    divisions = enumerate_divisions(n, p)
    for division, w in divisions:
        acc += float(w) * rbm_drift(model, coords, division)
    assert np.abs(acc - full_drift(model, coords)).max() < 1e-12


def test_rbm_drift_single_block_is_full(linear_model):
    coords = stream(7, "single-block").normal(size=(4, 1))
    division = BatchDivision.from_blocks([tuple(range(4))])
    assert np.allclose(
        rbm_drift(linear_model, coords, division),
        full_drift(linear_model, coords),
        atol=1e-15,
    )


def test_rbm_drift_shape_mismatch(linear_model):
    division = BatchDivision.from_blocks([(0, 1)])
    with pytest.raises(ValidationError):
        rbm_drift(linear_model, np.zeros((4, 1)), division)


# --- single steps -------------------------------------------------------------


def test_em_step_explicit_noise():
    state = ParticleState(coords=np.array([[1.0], [2.0]]))
    drift = np.array([[0.5], [-1.0]])
    g = np.array([[1.0], [-2.0]])
    nxt = em_step(state, drift, sigma=0.125, dt=0.1, noise=g)
    # sqrt(2 * 0.125 * 0.1) = sqrt(0.025)
    want = state.coords + drift * 0.1 + np.sqrt(0.025) * g
    assert np.array_equal(nxt.coords, want)
    assert nxt.step == 1 and nxt.time == pytest.approx(0.1)


def test_em_step_stream_reproducible():
    state = ParticleState(coords=np.zeros((3, 2)))
    a = em_step(state, np.zeros((3, 2)), 1.0, 0.01, noise_stream=stream(9, "em"))
    b = em_step(state, np.zeros((3, 2)), 1.0, 0.01, noise_stream=stream(9, "em"))
    assert np.array_equal(a.coords, b.coords)
    assert a.coords.any()


@pytest.mark.filterwarnings("ignore:overflow")
def test_em_step_validation_and_divergence():
    state = ParticleState(coords=np.array([[1e308]]))
    with pytest.raises(DivergenceError):
        em_step(state, np.array([[1e308]]), 0.0, 1.0, noise=np.zeros((1, 1)))
    with pytest.raises(ValidationError):
        em_step(state, np.zeros((1, 1)), 1.0, 0.0, noise=np.zeros((1, 1)))
    with pytest.raises(ValidationError):
        em_step(state, np.zeros((1, 1)), 1.0, 0.1)  # no noise source
    with pytest.raises(ValidationError):
        ParticleState(coords=np.array([[np.nan]]))
    with pytest.raises(ValidationError):
        ParticleState(coords=np.zeros(3))


# --- config -------------------------------------------------------------------


def test_sim_config_validation():
    ok = SimConfig(scheme="rbm", n=8, tau=0.1, t_end=1.0, p=2)
    assert ok.steps == 10
    with pytest.raises(ValidationError):
        SimConfig(scheme="rbm", n=8, tau=0.1, t_end=1.0)  # p required
    with pytest.raises(ValidationError):
        SimConfig(scheme="rbm", n=8, tau=0.1, t_end=1.0, p=3)  # p must divide n
    with pytest.raises(ValidationError):
        SimConfig(scheme="rbm", n=8, tau=0.1, t_end=1.0, p=1)
    with pytest.raises(ValidationError):
        SimConfig(scheme="waves", n=8, tau=0.1, t_end=1.0)
    # t_end snaps to the nearest step-grid point
    assert SimConfig(scheme="full", n=8, tau=0.4, t_end=1.0).steps == 2
    with pytest.raises(ValidationError):
        SimConfig(scheme="full", n=8, tau=0.1, t_end=1.0, substeps=0)
    with pytest.raises(ValidationError):
        SimConfig(scheme="full", n=8, tau=0.1, t_end=1.0, replicas=0)


# --- full runs -----------------------------------------------------------------


def test_simulate_shapes_and_times(linear_model):
    cfg = SimConfig(scheme="full", n=4, tau=0.25, t_end=1.0, seed=2, replicas=3)
    res = simulate(cfg, linear_model, record="trajectory")
    assert res.final.shape == (3, 4, 1)
    assert res.trajectory.shape == (3, 5, 4, 1)
    assert np.array_equal(res.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.array_equal(res.trajectory[:, -1], res.final)


def test_simulate_is_deterministic(linear_model):
    cfg = SimConfig(scheme="rbm", n=4, p=2, tau=0.1, t_end=0.5, seed=3, replicas=5)
    a = simulate(cfg, linear_model)
    b = simulate(cfg, linear_model)
    assert np.array_equal(a.final, b.final)
    c = simulate(SimConfig(scheme="rbm", n=4, p=2, tau=0.1, t_end=0.5, seed=4, replicas=5), linear_model)
    assert not np.array_equal(a.final, c.final)


def test_rbm_p_equals_n_reproduces_full_bitwise(linear_model):
    # one block of everything makes the batched sum the complete sum, and
    # the noise/init streams do not depend on the scheme
    kw = dict(n=8, tau=0.05, t_end=1.0, seed=5, replicas=2)
    full = simulate(SimConfig(scheme="full", **kw), linear_model, record="trajectory")
    rbm = simulate(SimConfig(scheme="rbm", p=8, **kw), linear_model, record="trajectory")
    assert np.array_equal(full.trajectory, rbm.trajectory)


def test_simulate_relabeling_equivariance(linear_model):
    """Relabeling particles in the initial data, the noise, and the divisions
    relabels the trajectories; nothing in the stepper depends on identity."""
    n, p = 4, 2
    cfg = SimConfig(scheme="rbm", n=n, p=p, tau=0.1, t_end=0.5, seed=8, replicas=2)
    perm = np.array([2, 0, 3, 1])
    inv = np.argsort(perm)

    base = simulate(cfg, linear_model)

    def perm_init(seed, replica, model, count):
        from rbmlab import default_init

        return default_init(seed, replica, model, count)[inv]

    def perm_noise(seed, replica, step, substeps, count, d):
        return default_noise(seed, replica, step, substeps, count, d)[:, inv, :]

    def perm_division(seed, replica, step, count, pp):
        division = default_division(seed, replica, step, count, pp)
        return BatchDivision.from_blocks(
            [tuple(int(perm[i]) for i in b) for b in division.blocks]
        )

    relabeled = simulate(
        cfg, linear_model, noise_fn=perm_noise, init_fn=perm_init, division_fn=perm_division
    )
    # p=2 keeps every within-block sum a single term, so equality is exact
    assert np.array_equal(relabeled.final[:, perm, :], base.final)


def test_simulate_thread_count_is_immaterial(linear_model, monkeypatch):
    cfg = SimConfig(scheme="rbm", n=2, p=2, tau=0.1, t_end=0.3, seed=6, replicas=2100)
    monkeypatch.setenv("RBMLAB_THREADS", "1")
    serial = simulate(cfg, linear_model)
    monkeypatch.setenv("RBMLAB_THREADS", "4")
    threaded = simulate(cfg, linear_model)
    assert np.array_equal(serial.final, threaded.final)
    monkeypatch.setenv("RBMLAB_THREADS", "zebra")
    with pytest.raises(ValidationError):
        simulate(cfg, linear_model)


def test_simulate_rbm_matches_covariance_oracle(linear_model):
    # weak agreement at 5 sigma; the tight 4-sigma version lives in the
    # acceptance suite with 10^4 replicas
    reps = 2000
    cfg = SimConfig(scheme="rbm", n=4, p=2, tau=0.1, t_end=0.5, seed=7, replicas=reps, substeps=8)
    res = simulate(cfg, linear_model)
    x = res.final[:, :, 0]
    want = rbm_cov_linear(LinearParams(a=1.0, kappa=0.5, sigma=1.0, m0=0.0, v0=1.0), 4, 2, 0.1, 5)
    emp_var = x.var(axis=0, ddof=1).mean()
    se = np.sqrt(2.0 / (reps - 1)) * want.variance  # chi^2 spread of a variance
    assert abs(emp_var - want.variance) < 5 * se


def test_meanfield_ensemble_tracks_limit_law():
    model = make_model("linear", a=1.0, kappa=0.5)
    cfg = SimConfig(scheme="meanfield-ensemble", n=20000, tau=0.02, t_end=0.5, seed=9, substeps=2)
    res = simulate(cfg, model)
    from rbmlab import meanfield_moments_linear

    _, want = meanfield_moments_linear(LinearParams(a=1.0, kappa=0.5, sigma=1.0, m0=0.0, v0=1.0), 0.5)
    got = res.final[0, :, 0].var()
    se = np.sqrt(2.0 / cfg.n) * want
    assert abs(got - want) < 5 * se + 0.02 * want  # sampling + O(tau) bias


def test_simulate_moments_record(sine_model):
    cfg = SimConfig(scheme="rbm", n=16, p=2, tau=0.1, t_end=0.4, seed=10, replicas=6)
    res = simulate(cfg, sine_model, record="moments", moment_orders=(2, 4))
    assert set(res.moments) == {2, 4}
    assert res.moments[2].shape == (5,)
    assert res.moment_stderr[2].shape == (5,)
    assert (res.moments[4] >= res.moments[2] ** 2 - 1e-12).all()  # Jensen
    # t=0 moment agrees with the standard-normal draw it is computed from
    assert res.moments[2][0] == pytest.approx(1.0, rel=0.5)
    with pytest.raises(ValidationError):
        simulate(cfg, sine_model, record="everything")


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_simulate_divergence_detected():
    # unstable cubic explosion: far-out start, big step, no noise
    spec = ModelSpec(
        family="cubic",
        params={},
        sigma=0.0,
        dim=1,
        init=InitialLaw(kind="gaussian", mean=10.0, var=0.0),
    )
    model = build_model(spec)
    cfg = SimConfig(scheme="full", n=2, tau=1.0, t_end=6.0, seed=0)
    with pytest.raises(DivergenceError):
        simulate(cfg, model)


# --- coupled runs ---------------------------------------------------------------


def test_coupled_zero_interaction_zero_gap():
    model = make_model("linear", a=1.0, kappa=0.0)
    cfg = SimConfig(scheme="rbm", n=4, p=2, tau=0.1, t_end=0.5, seed=11, replicas=8)
    run = coupled_simulate(cfg, model)
    assert run.gap.shape == (6,)
    assert np.array_equal(run.gap, np.zeros(6))
    assert np.array_equal(run.final_full, run.final_rbm)


def test_coupled_gap_positive_and_grows_from_zero(linear_model):
    cfg = SimConfig(scheme="rbm", n=8, p=2, tau=0.1, t_end=1.0, seed=12, replicas=16)
    run = coupled_simulate(cfg, linear_model)
    assert run.gap[0] == 0.0
    assert run.gap[1:].min() > 0.0
    assert run.gap_stderr.shape == run.gap.shape


# --- CSV ------------------------------------------------------------------------


def test_trajectory_csv_layout(tmp_path, linear_model):
    cfg = SimConfig(scheme="full", n=2, tau=0.5, t_end=1.0, seed=13, replicas=2)
    res = simulate(cfg, linear_model, record="trajectory")
    path = tmp_path / "traj.csv"
    write_trajectory_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "replica,step,time,particle,dim0"
    assert len(lines) == 1 + 2 * 3 * 2  # replicas x checkpoints x particles
    first = lines[1].split(",")
    assert [first[0], first[1], first[3]] == ["0", "0", "0"]
    assert float(first[4]) == res.trajectory[0, 0, 0, 0]
    # round-trip at %.17g is exact
    vals = np.array([float(ln.split(",")[4]) for ln in lines[1:]])
    assert np.array_equal(vals, res.trajectory.transpose(0, 1, 2, 3).ravel())


def test_trajectory_csv_requires_trajectory(tmp_path, linear_model):
    cfg = SimConfig(scheme="full", n=2, tau=0.5, t_end=1.0)
    res = simulate(cfg, linear_model, record="final")
    with pytest.raises(ValidationError):
        write_trajectory_csv(res, tmp_path / "x.csv")


def test_summary_csv_layout(tmp_path, linear_model):
    cfg = SimConfig(scheme="full", n=4, tau=0.5, t_end=1.0, seed=14, replicas=3)
    res = simulate(cfg, linear_model, record="moments", moment_orders=(2,))
    path = tmp_path / "summary.csv"
    write_summary_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,time,stat,value,stderr"
    assert len(lines) == 1 + 3
    step, time, stat, value, stderr = lines[2].split(",")
    assert (step, time, stat) == ("1", "0.5", "abs_moment_q2")
    assert float(value) == res.moments[2][1]
    assert float(stderr) == res.moment_stderr[2][1]
