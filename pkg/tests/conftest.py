import numpy as np
import pytest

from crtc.dataset import MultiViewDataset


def random_masked_dataset(rng, n, dims, n_clusters=2, missing_frac=0.3):
    """Random dataset with a random mask: every row keeps >= 1 view and
    every view keeps >= 2 available instances."""
    n_views = len(dims)
    views = [rng.standard_normal((n, d)) for d in dims]
    while True:
        mask = (rng.random((n, n_views)) < missing_frac).astype(np.int64)
        full_rows = mask.sum(axis=1) == n_views
        mask[full_rows, rng.integers(0, n_views, size=int(full_rows.sum()))] = 0
        if all((mask[:, v] == 0).sum() >= 2 for v in range(n_views)):
            break
    return MultiViewDataset(views=views, mask=mask, n_clusters=n_clusters)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
