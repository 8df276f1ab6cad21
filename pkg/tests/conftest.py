import os

# give numba a pool larger than one core so worker-count tests exercise
# real multi-threaded schedules; must happen before numba is imported
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

from densefv.dsift import extract_descriptors
from densefv.embed import train_pca
from densefv.fvenc import pooled_descriptors
from densefv.gmm import train_gmm
from densefv.imgpyr import build_pyramid
from densefv.synth import textured_image


def raw_sample(images, limit, seed=0):
    rows = []
    for img in images:
        for scale, level in build_pyramid(img, 9):
            try:
                rows.append(extract_descriptors(level, level_scale=scale).descriptors)
            except ValueError:
                pass
    rows = np.concatenate(rows)
    idx = np.random.default_rng(seed).choice(rows.shape[0], size=min(limit, rows.shape[0]), replace=False)
    return rows[np.sort(idx)]


@pytest.fixture(scope="session")
def train_images():
    return [textured_image(160, 120, seed=s) for s in (11, 12)]


@pytest.fixture(scope="session")
def models(train_images):
    """Default-size models (m=80, N=256), trained briefly on synthetic images."""
    pca = train_pca(raw_sample(train_images, 6000), 80)
    rows = np.concatenate([pooled_descriptors(img, pca).rows for img in train_images])
    idx = np.random.default_rng(1).choice(rows.shape[0], size=min(4000, rows.shape[0]), replace=False)
    gmm = train_gmm(rows[np.sort(idx)], 256, seed=0, max_iters=8)
    return pca, gmm


@pytest.fixture(scope="session")
def model_files(models, tmp_path_factory):
    from densefv import formats

    d = tmp_path_factory.mktemp("models")
    pca, gmm = models
    formats.save_pca(d / "m.pca", pca)
    formats.save_gmm(d / "m.gmm", gmm)
    return str(d / "m.pca"), str(d / "m.gmm")


# acceptance reporting: one PASS/FAIL line per criterion in the summary

@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        item.config._criteria = getattr(item.config, "_criteria", {})
        item.config._criteria[marker.args[0]] = (rep.passed, detail, item.name)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail, name = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}  {detail}")
