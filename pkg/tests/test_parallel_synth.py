import numba
import numpy as np
import pytest

from densefv.imgpyr import load_image
from densefv.parallel import default_workers, worker_threads
from densefv.synth import DEFAULT_ABNORMAL_SPANS, scene_frame, textured_image, write_frame_sequence


def test_worker_threads_restores_and_caps():
    before = numba.get_num_threads()
    with worker_threads(2):
        assert numba.get_num_threads() == min(2, numba.config.NUMBA_NUM_THREADS)
    with worker_threads(10**6):
        assert numba.get_num_threads() == numba.config.NUMBA_NUM_THREADS
    with worker_threads(None):
        assert numba.get_num_threads() == before
    assert numba.get_num_threads() == before
    with pytest.raises(ValueError):
        with worker_threads(0):
            pass


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("FV_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("FV_WORKERS", "-1")
    with pytest.raises(ValueError):
        default_workers()
    monkeypatch.delenv("FV_WORKERS")
    assert default_workers() == numba.config.NUMBA_NUM_THREADS


def test_synthetic_images_are_seeded():
    a, b = textured_image(50, 40, seed=1), textured_image(50, 40, seed=1)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, textured_image(50, 40, seed=2).data)
    assert a.data.min() == 0.0 and a.data.max() == 1.0


def test_frame_sequence(tmp_path):
    paths, labels = write_frame_sequence(tmp_path, 12, ((3, 5),), width=32, height=24)
    assert labels.tolist() == [0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    assert (tmp_path / "labels.txt").read_text().split() == [str(v) for v in labels]
    assert load_image(paths[0]).width == 32
    assert DEFAULT_ABNORMAL_SPANS[0] == (250, 350)
    normal, abnormal = scene_frame(4, False), scene_frame(4, True)
    assert np.abs(np.diff(abnormal.data, axis=1)).mean() > np.abs(np.diff(normal.data, axis=1)).mean()
