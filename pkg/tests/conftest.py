import os

import numpy as np
import pytest

from hslmu.data import DataError, generate_demo_digits, load_mnist_dir, make_task


def bandlimited_noise(length, cutoff, seed, amplitude=0.8):
    """Zero-mean noise with no energy above `cutoff` cycles/step, |x| <= amplitude."""
    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.normal(size=length))
    freqs = np.fft.rfftfreq(length, d=1.0)
    spectrum[freqs > cutoff] = 0
    x = np.fft.irfft(spectrum, n=length)
    return amplitude * x / np.abs(x).max()


@pytest.fixture(scope="session")
def desk_dataset():
    """Three-class 14x14 sequential digit task, 1500/300/300 splits.

    Uses the real archives when HSLMU_DATA_DIR points at them, otherwise the
    deterministic synthetic digits so the suite runs offline.
    """
    data_dir = os.environ.get("HSLMU_DATA_DIR")
    raw = None
    if data_dir:
        try:
            raw = load_mnist_dir(data_dir)
        except DataError:
            raw = None
    if raw is None:
        tr_img, tr_lab = generate_demo_digits(2400, seed=0)
        te_img, te_lab = generate_demo_digits(400, seed=1)
        raw = (tr_img, tr_lab, te_img, te_lab)
    return make_task(
        *raw, task="smnist", classes=(0, 1, 2), image_size=14, counts=(1500, 300, 300),
    )
