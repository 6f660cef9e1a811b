import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_differences, relative_errors
from sparsect.exceptions import InvalidInputError, InvalidLevelError, NumericalError
from sparsect.restorer import (
    Architecture,
    CountingRestorer,
    IdentityRestorer,
    NoisyOracleRestorer,
    OracleRestorer,
    ReferenceRestorer,
    Restorer,
    RestorerState,
    from_unit,
    oracle_restore,
    reference_restore,
    to_unit,
)
from sparsect.training import mse_loss


def random_state(seed=0, channels=16):
    """Non-trivial parameters: every layer and level bias non-zero."""
    rng = np.random.default_rng(seed)
    state = RestorerState.initialize(Architecture(channels=channels), rng, zero_final=False)
    p = state.unpack()
    p["level_bias"][...] = rng.normal(0, 0.1, p["level_bias"].shape)
    p["b1"][...] = rng.normal(0, 0.1, p["b1"].shape)
    p["b2"][...] = rng.normal(0, 0.1, p["b2"].shape)
    p["b3"][...] = 0.01
    return state


def test_unit_mapping():
    assert to_unit(-1000.0) == 0.0 and to_unit(2000.0) == 1.0
    np.testing.assert_allclose(from_unit(to_unit(np.array([-500.0, 37.0]))), [-500.0, 37.0])


def test_oracle_restorer(rng):
    x0 = rng.uniform(-1000, 2000, (16, 16))
    r = OracleRestorer(x0)
    assert np.array_equal(r.restore(rng.random((16, 16)), 5), x0)
    assert np.array_equal(oracle_restore(np.zeros((16, 16)), 1, x0), x0)
    with pytest.raises(InvalidInputError):
        r.restore(np.zeros((8, 8)), 1)


def test_noisy_oracle_deviates_by_injected_field(rng):
    x0 = rng.uniform(-1000, 2000, (16, 16))
    eps = rng.standard_normal((16, 16)) * 3.0
    r = NoisyOracleRestorer(x0, eps)
    assert np.array_equal(r.restore(x0, 2) - x0, (x0 + eps) - x0)
    per_call = NoisyOracleRestorer(x0, lambda k, t: np.full((16, 16), float(k + 10 * t)))
    assert per_call.restore(x0, 3)[0, 0] == x0[0, 0] + 30.0
    assert per_call.restore(x0, 3)[0, 0] == x0[0, 0] + 31.0


def test_identity_and_counting(rng):
    x = rng.random((16, 16))
    c = CountingRestorer(IdentityRestorer())
    assert np.array_equal(c.restore(x, 4), x)
    c.restore(x, 2)
    assert c.calls == 2 and c.levels == [4, 2]


@pytest.mark.parametrize("r", [IdentityRestorer(), OracleRestorer(np.zeros((4, 4))),
                               ReferenceRestorer(RestorerState(Architecture()))])
def test_restorers_share_the_interface(r):
    assert isinstance(r, Restorer)


def test_architecture_counts_and_roundtrip():
    arch = Architecture()
    assert arch.n_params == 16 * 9 + 16 + 9 * 16 + 16 * 16 * 9 + 16 + 16 * 9 + 1
    assert Architecture.from_dict(arch.to_dict()) == arch
    with pytest.raises(InvalidInputError):
        Architecture(kernel=2)
    with pytest.raises(InvalidInputError):
        Architecture.from_dict({"kind": "unet"})
    with pytest.raises(InvalidInputError):
        RestorerState(arch, np.zeros(3))
    with pytest.raises(NumericalError):
        RestorerState(arch, np.full(arch.n_params, np.nan))


def test_zero_initialized_restorer_is_identity(rng):
    state = RestorerState.initialize(Architecture(), rng)
    x = rng.uniform(-1000, 2000, (24, 24))
    for t in range(9):
        assert np.array_equal(reference_restore(state, x, t), x)


@settings(max_examples=10, deadline=None)
@given(h=st.integers(3, 20), w=st.integers(3, 20), t=st.integers(0, 8))
def test_shape_preserved(h, w, t):
    state = random_state(1, channels=4)
    out = reference_restore(state, np.zeros((h, w)), t)
    assert out.shape == (h, w)


def test_level_conditioning_changes_output(rng):
    state = random_state(2)
    x = rng.uniform(-1000, 2000, (16, 16))
    outs = [reference_restore(state, x, t) for t in range(9)]
    for a in range(9):
        for b in range(a + 1, 9):
            assert np.max(np.abs(outs[a] - outs[b])) > 0


def test_invalid_level_rejected():
    r = ReferenceRestorer(RestorerState(Architecture()))
    with pytest.raises(InvalidLevelError):
        r.restore(np.zeros((8, 8)), 9)


def test_batched_forward_matches_single(rng):
    state = random_state(3)
    net = ReferenceRestorer(state)
    x = rng.uniform(-1000, 2000, (3, 12, 12))
    batch, _ = net.forward(x, np.array([1, 5, 8]))
    for i, t in enumerate((1, 5, 8)):
        single, _ = net.forward(x[i:i + 1], t)
        np.testing.assert_allclose(batch[i], single[0], rtol=1e-12, atol=1e-15)


def test_loss_gradient_matches_finite_differences(rng):
    state = random_state(4)
    x = rng.uniform(-1000, 2000, (2, 16, 16))
    y = x + rng.standard_normal((2, 16, 16)) * 100
    _, grad = mse_loss(state, x, y, 6)

    def loss(theta):
        return mse_loss(RestorerState(state.arch, theta), x, y, 6)[0]

    numeric = central_differences(loss, state.theta)
    err = relative_errors(grad, numeric)
    assert np.all(err < 1e-3), (err.max(), int(np.argmax(err)))
