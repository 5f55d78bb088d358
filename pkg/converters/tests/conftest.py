import numpy as np
import pytest


def encode_aer(events) -> bytes:
    """Pack (x, y, polarity, t_us) tuples into the 5-byte AER record format."""
    out = bytearray()
    for x, y, pol, t in events:
        out.append(x & 0xFF)
        out.append(y & 0xFF)
        out.append(((pol & 1) << 7) | ((t >> 16) & 0x7F))
        out.append((t >> 8) & 0xFF)
        out.append(t & 0xFF)
    return bytes(out)


@pytest.fixture
def nmnist_dir(tmp_path):
    """Two-digit toy split: digit 0 with two samples, digit 3 with one."""
    root = tmp_path / "nmnist"
    (root / "0").mkdir(parents=True)
    (root / "3").mkdir()
    # sample 1: ON event at (x=1, y=2) early, OFF event at (x=0, y=0) late
    (root / "0" / "a.bin").write_bytes(
        encode_aer([(1, 2, 0, 1000), (0, 0, 1, 99000)])
    )
    # sample 2: empty recording
    (root / "0" / "b.bin").write_bytes(b"")
    # digit 3: one event, max addresses
    (root / "3" / "c.bin").write_bytes(encode_aer([(33, 33, 1, 5000)]))
    return root


@pytest.fixture
def shd_file(tmp_path):
    h5py = pytest.importorskip("h5py")
    path = tmp_path / "shd.h5"
    times = [
        np.array([0.0, 0.25, 0.999]),      # ~1 s utterance
        np.array([0.5, 1.5]),              # ~1.5 s utterance
        np.array([]),                      # silent sample
    ]
    units = [np.array([0, 350, 699]), np.array([10, 10]), np.array([])]
    labels = np.array([0, 19, 7])
    with h5py.File(path, "w") as f:
        g = f.create_group("spikes")
        vt = h5py.vlen_dtype(np.float64)
        vu = h5py.vlen_dtype(np.int64)
        dt = g.create_dataset("times", (len(times),), dtype=vt)
        du = g.create_dataset("units", (len(units),), dtype=vu)
        for i, (t, u) in enumerate(zip(times, units)):
            dt[i] = t
            du[i] = u
        f.create_dataset("labels", data=labels)
    return path
