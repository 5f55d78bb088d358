import numpy as np
import pytest

from echospike import Dataset, EsppConfig, EsppNetwork, LayerSpec, NetworkSpec, SpikeRaster


def random_dataset(rng, n_samples=6, channels=5, steps=4, n_classes=3, density=0.3):
    samples = [
        SpikeRaster((rng.random((steps, channels)) < density).astype(np.uint8),
                    int(rng.integers(n_classes)))
        for _ in range(n_samples)
    ]
    return Dataset(channels, steps, n_classes, samples)


def copy_network(channels, beta=0.0, theta=1.0, **cfg_kw):
    """A one-layer net whose spikes reproduce its input exactly.

    With decay 0 and weights theta * I, the membrane equals theta wherever
    the input is 1, so the layer's spike train is the input itself. Useful
    as a transparent stand-in in readout tests.
    """
    cfg = EsppConfig(beta=beta, theta=theta, **cfg_kw)
    spec = NetworkSpec(channels, [LayerSpec(channels, config=cfg)], "last")
    net = EsppNetwork(spec, seed=0)
    net.set_weights([np.eye(channels) * theta])
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
