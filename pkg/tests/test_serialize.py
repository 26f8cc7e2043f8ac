import numpy as np
import pytest

from mvcca.datasets import SyntheticSpec, make_synthetic_gaussian, make_synthetic_nonlinear
from mvcca.errors import BadMagicError, IncompatibleModelError
from mvcca.kernel_cca import approx_kcca
from mvcca.linear_cca import CcaConfig, solve_cca
from mvcca.serialize import (
    IdentityModel,
    load_model,
    model_bytes,
    project_view1,
    save_model,
)
from mvcca.training import TrainConfig, default_networks, train_sto


@pytest.fixture(scope="module")
def small_ds():
    return make_synthetic_gaussian(
        SyntheticSpec(rho=(0.8, 0.5), dx=6, dy=6, n_train=2000, n_tune=400, seed=1))


class TestLinearCcaRoundtrip:
    def test_projections_preserved(self, small_ds, tmp_path):
        x, y = small_ds.views("train")
        sol = solve_cca(x, y, CcaConfig(2, 1e-4, 1e-4))
        path = tmp_path / "cca.mvmd"
        save_model(sol, path)
        loaded = load_model(path)
        np.testing.assert_allclose(loaded.project_x(x), sol.project_x(x), atol=1e-12)
        np.testing.assert_allclose(loaded.correlations, sol.correlations)

    def test_deterministic_bytes(self, small_ds):
        x, y = small_ds.views("train")
        sol = solve_cca(x, y, CcaConfig(2, 1e-4, 1e-4))
        assert model_bytes(sol) == model_bytes(sol)


class TestApproxKccaRoundtrip:
    @pytest.mark.parametrize("method", ["rff", "nystrom"])
    def test_projections_preserved(self, method, tmp_path):
        ds = make_synthetic_nonlinear(n_train=200, n_tune=50, latent_dim=2, seed=3)
        x, y = ds.views("train")
        xt, _ = ds.views("tune")
        model = approx_kcca(x, y, method, 1.5, 1.5, 32,
                            CcaConfig(2, 1e-4, 1e-4), seed=0)
        path = tmp_path / f"{method}.mvmd"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_allclose(loaded.project_x(xt), model.project_x(xt),
                                   atol=1e-12)


class TestNetworkModelRoundtrip:
    def test_trained_model_roundtrip(self, small_ds, tmp_path):
        nets = default_networks("dccae", dx=6, dy=6, out_dim=2, hidden=(8,), seed=2)
        cfg = TrainConfig(method="dccae", minibatch_corr=400, minibatch_recon=64,
                          learning_rate=0.02, momentum=0.9, lam=0.01,
                          reg_x=1e-4, reg_y=1e-4, max_epochs=2, patience=2, seed=2)
        model, _ = train_sto(small_ds, nets, cfg)
        path = tmp_path / "net.mvmd"
        save_model(model, path)
        loaded = load_model(path)
        xt, _ = small_ds.views("tune")
        np.testing.assert_allclose(loaded.project_view1(xt), model.project_view1(xt),
                                   atol=1e-12)
        assert loaded.method == "dccae"

    def test_distae2_affine_roundtrip(self, small_ds, tmp_path):
        nets = default_networks("distae2", dx=6, dy=6, out_dim=2, hidden=(8,), seed=5)
        cfg = TrainConfig(method="distae2", minibatch_recon=64, learning_rate=0.01,
                          momentum=0.5, lam=0.5, max_epochs=2, patience=2, seed=5)
        model, _ = train_sto(small_ds, nets, cfg)
        path = tmp_path / "distae2.mvmd"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_allclose(loaded.affine.a, model.affine.a)
        np.testing.assert_allclose(loaded.affine.b, model.affine.b)


class TestIdentityAndErrors:
    def test_identity_roundtrip(self, tmp_path, rng):
        path = tmp_path / "id.mvmd"
        save_model(IdentityModel(), path)
        loaded = load_model(path)
        x = rng.standard_normal((4, 7))
        np.testing.assert_array_equal(project_view1(loaded, x), x)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.mvmd"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(BadMagicError):
            load_model(path)

    def test_dimension_incompatibility_surfaces(self, small_ds, rng):
        x, y = small_ds.views("train")
        sol = solve_cca(x, y, CcaConfig(2, 1e-4, 1e-4))
        with pytest.raises(IncompatibleModelError):
            project_view1(sol, rng.standard_normal((9, 5)))
