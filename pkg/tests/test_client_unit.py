import asyncio
import time

import numpy as np
import pytest

import locsyn.client as client_module
from locsyn.client import SynthesisClient
from locsyn.config import SynthesisConfig
from locsyn.exceptions import DimensionMismatchError
from locsyn.models import Controller, PlantRealization
from locsyn.synthesis import SynthesisStatus


def scalar(a=-2.0, n_z=1):
    C1 = np.ones((n_z, 1))
    return PlantRealization.from_blocks(A1=[[a]], B1=[[1.0]], B2=[[1.0]], C1=C1, C2=[[1.0]])


def static_gain(d=0.0, n_u=1, n_y=1):
    return Controller(Ahat=np.zeros((0, 0)), Bhat=np.zeros((0, n_y)), Chat=np.zeros((n_u, 0)),
                      Dhat=np.full((n_u, n_y), d))


@pytest.mark.asyncio
@pytest.mark.parametrize("kwargs,err_substr", [
    (dict(rom="rom"), "PlantRealization"),
    (dict(n_K=-1), "Invalid controller order"),
    (dict(n_K=True), "Invalid controller order"),
    (dict(n_K=1.5), "Invalid controller order"),
    (dict(config={"mode": "r-only"}), "SynthesisConfig"),
    (dict(K0="K0"), "Controller"),
    (dict(timeout=0), "Invalid timeout"),
    (dict(timeout="soon"), "Invalid timeout"),
    (dict(fom=scalar(n_z=2)), "Invalid problem"),
    (dict(K0=static_gain(n_u=2)), "Invalid initial controller"),
    (dict(n_K=1, K0=static_gain()), "Invalid initial controller"),
])
async def test_synthesize_invalid_params(kwargs, err_substr):
    args = dict(rom=scalar(), fom=scalar(), n_K=0)
    args.update(kwargs)
    resp, err = await SynthesisClient.synthesize(**args)
    assert resp is None
    assert err_substr in err


@pytest.mark.asyncio
@pytest.mark.parametrize("K,tol,timeout,err_substr", [
    ("K", None, None, "Controller"),
    (static_gain(n_y=2), None, None, "Invalid controller"),
    (static_gain(), 0.0, None, "Invalid tolerance"),
    (static_gain(), 1.5, None, "Invalid tolerance"),
    (static_gain(), None, -1.0, "Invalid timeout"),
])
async def test_norm_invalid_params(K, tol, timeout, err_substr):
    resp, err = await SynthesisClient.norm(scalar(), K, tol=tol, timeout=timeout)
    assert resp is None
    assert err_substr in err


@pytest.mark.asyncio
async def test_norm_success():
    resp, err = await SynthesisClient.norm(scalar(), static_gain())
    assert err == ""
    assert resp.value == pytest.approx(0.5, abs=1e-14)
    assert resp.certified


@pytest.mark.asyncio
async def test_norm_numerical_failure():
    plant = PlantRealization.from_blocks(A1=[[0.0, 1.0], [-1.0, 0.0]], B1=[[0.0], [1.0]], B2=[[0.0], [1.0]],
                                         C1=[[1.0, 0.0]], C2=[[1.0, 0.0]])
    resp, err = await SynthesisClient.norm(plant, static_gain())
    assert resp is None
    assert err.startswith("Numerical failure")


@pytest.mark.asyncio
async def test_timeout(monkeypatch):
    def slow(*args):
        time.sleep(0.5)

    monkeypatch.setattr(client_module, "_run_norm", slow)
    resp, err = await SynthesisClient.norm(scalar(), static_gain(), timeout=0.05)
    assert resp is None
    assert "timed out" in err


@pytest.mark.asyncio
async def test_invalid_input_from_worker(monkeypatch):
    def mismatch(*args):
        raise DimensionMismatchError("blocks disagree")

    monkeypatch.setattr(client_module, "_run_norm", mismatch)
    resp, err = await SynthesisClient.norm(scalar(), static_gain())
    assert resp is None
    assert err == "Invalid input: blocks disagree"


@pytest.mark.asyncio
async def test_unexpected_error(monkeypatch):
    def boom(*args):
        raise RuntimeError("boom")

    monkeypatch.setattr(client_module, "_run_norm", boom)
    resp, err = await SynthesisClient.norm(scalar(), static_gain())
    assert resp is None
    assert "Unexpected error" in err and "boom" in err


@pytest.mark.asyncio
async def test_evaluate():
    resp, err = await SynthesisClient.evaluate(scalar(), scalar(0.5), static_gain())
    assert err == ""
    assert resp.F == float("inf")
    assert resp.alpha_rom == pytest.approx(-2.0)
    assert resp.alpha_fom == pytest.approx(0.5)
    resp, err = await SynthesisClient.evaluate(scalar(), scalar(), static_gain(n_u=3))
    assert resp is None
    assert "Invalid" in err


@pytest.mark.asyncio
async def test_validate():
    resp, err = await SynthesisClient.validate(scalar(0.5), static_gain(-1.0))
    assert err == ""
    assert resp.stable
    assert resp.alpha == pytest.approx(-0.5)
    resp, err = await SynthesisClient.validate("fom", static_gain())
    assert resp is None
    assert "PlantRealization" in err


@pytest.mark.asyncio
async def test_synthesize_scalar():
    resp, err = await SynthesisClient.synthesize(scalar(), scalar(), 0, SynthesisConfig(phase_b_maxit_cumulative=5),
                                                 static_gain(0.0))
    assert err == ""
    assert resp.finite
    assert resp.F_best <= 0.5


@pytest.mark.asyncio
async def test_synthesize_timeout_becomes_time_limit():
    resp, err = await SynthesisClient.synthesize(scalar(), scalar(), 0, None, static_gain(0.0), timeout=1e-9)
    assert err == ""
    assert resp.status == SynthesisStatus.TIME_LIMIT
    assert resp.iterations_b == 0
    assert resp.F_best == pytest.approx(0.5, abs=1e-14)


@pytest.mark.asyncio
async def test_concurrent_calls():
    results = await asyncio.gather(*(SynthesisClient.norm(scalar(-a), static_gain()) for a in (1.0, 2.0, 4.0)))
    assert [r.value for r, _ in results] == pytest.approx([1.0, 0.5, 0.25])
