import numpy as np
import pytest

from marforge import phantom
from marforge.core import ScanGeometry, SimulationConfig, Volume
from marforge.mar import MarConfig, nmar, segment_metal
from marforge.physics import simulate_artifact

HIP_N = 256

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        doc = getattr(report, "criterion_doc", "") or name
        _criteria[name] = ("PASS" if report.passed else "FAIL", doc)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    doc = (item.function.__doc__ or "").strip().splitlines()
    rep.criterion_doc = doc[0] if doc else item.name


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        status, doc = _criteria[name]
        terminalreporter.write_line(f"[{status}] {doc}")


@pytest.fixture(scope="session")
def hip_runs():
    """Hip phantom with/without iron through simulation, NMAR and LI-MAR."""
    clean, _, _ = phantom.hip_phantom(HIP_N, with_metal=False)
    dirty, metal, roi = phantom.hip_phantom(HIP_N, with_metal=True)
    spacing = (clean.pixel_spacing, clean.pixel_spacing, 2.0)
    cfg = SimulationConfig(seed=20191, n0=2e7)
    ref = simulate_artifact(Volume(clean.values, spacing), np.zeros_like(metal), cfg)
    sim = simulate_artifact(Volume(dirty.values, spacing), metal, cfg)
    geom = ScanGeometry.default_for(HIP_N, clean.pixel_spacing)
    mcfg = MarConfig()
    corrected = nmar(sim, geom, mcfg)
    li = nmar(sim, geom, mcfg, method="li")
    nonmetal = ~(metal | segment_metal(sim.values[0], mcfg.metal_threshold))
    return {
        "clean": clean, "metal": metal, "roi": roi, "geom": geom, "cfg": cfg,
        "ref": ref.values[0], "sim": sim.values[0], "sim_volume": sim,
        "nmar": corrected.values[0], "li": li.values[0], "nonmetal": nonmetal,
    }
