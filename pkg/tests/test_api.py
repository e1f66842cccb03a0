import numpy as np
import pytest
from fastapi.testclient import TestClient

from src.main import app
from src.services.exact_gp import mll_exact, posterior_predict
from tests.conftest import gp_instance


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as test_client:
        yield test_client


@pytest.fixture
def payload():
    data, theta = gp_instance(24, seed=5)
    return data, theta, {"X": data.X.tolist(), "y": data.y.tolist(), "theta": theta.model_dump()}


class TestMeta:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "healthy"
        assert "timestamp" in body

    def test_root_lists_endpoints(self, client):
        body = client.get("/").json()
        assert body["endpoints"]["likelihood"] == "/api/v1/likelihood"
        assert "rr_cg" in body["methods"]


class TestLikelihood:
    def test_cholesky_matches_exact(self, client, payload):
        data, theta, body = payload
        response = client.post("/api/v1/likelihood", json=body)
        assert response.status_code == 200
        exact = mll_exact(data, theta)
        assert response.json()["logdet"] == pytest.approx(exact.logdet)
        assert response.json()["total_nll"] == pytest.approx(exact.total_nll)
        assert response.json()["sampled_j"] is None

    def test_ss_rff_reports_its_truncation(self, client, payload):
        _, _, body = payload
        response = client.post("/api/v1/likelihood", json={**body, "method": "ss_rff", "ss_base_features": 2, "seed": 1})
        assert response.status_code == 200
        assert 1 <= response.json()["sampled_j"] <= 11

    @pytest.mark.parametrize("method", ["cg", "rff"])
    def test_randomized_methods_are_seeded(self, client, payload, method):
        _, _, body = payload
        request = {**body, "method": method, "seed": 3, "cg_iters": 5, "rff_features": 20}
        first = client.post("/api/v1/likelihood", json=request).json()
        second = client.post("/api/v1/likelihood", json=request).json()
        assert first == second

    def test_odd_feature_count_is_a_domain_error(self, client, payload):
        _, _, body = payload
        response = client.post("/api/v1/likelihood", json={**body, "method": "rff", "rff_features": 21})
        assert response.status_code == 422
        assert response.json()["error"] == "OddFeatureCount"

    def test_mismatched_rows(self, client, payload):
        _, _, body = payload
        response = client.post("/api/v1/likelihood", json={**body, "y": body["y"][:-1]})
        assert response.status_code == 422
        assert response.json()["error"] == "DimensionMismatch"


class TestPredict:
    def test_matches_posterior(self, client, payload):
        data, theta, body = payload
        Xstar = [[0.25], [0.75]]
        response = client.post("/api/v1/predict", json={**body, "Xstar": Xstar})
        assert response.status_code == 200
        mean, variance = posterior_predict(data, theta, np.array(Xstar))
        assert response.json()["mean"] == pytest.approx(mean.tolist())
        assert response.json()["variance"] == pytest.approx(variance.tolist())

    def test_wrong_width(self, client, payload):
        _, _, body = payload
        response = client.post("/api/v1/predict", json={**body, "Xstar": [[0.1, 0.2]]})
        assert response.status_code == 422


class TestEstimators:
    def test_series_check(self, client):
        response = client.post("/api/v1/estimators/check", json={"kind": "ss"})
        assert response.status_code == 200
        assert response.json()["passed"] is True

    def test_rejected_config(self, client):
        response = client.post("/api/v1/estimators/check", json={"kind": "rr_cg_grad", "enumeration": True})
        assert response.status_code == 422
        assert response.json()["error"] == "ConfigError"
